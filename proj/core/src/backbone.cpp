#include "panoloc/backbone.hpp"

#include <stdexcept>

namespace panoloc {

BasicBlock::BasicBlock(long in_ch, long out_ch, long stride, Sampling mode)
    : conv1_(in_ch, out_ch, 3, stride, mode),
      conv2_(out_ch, out_ch, 3, 1, mode),
      bn1_(out_ch),
      bn2_(out_ch),
      has_projection_(stride != 1 || in_ch != out_ch) {
  if (has_projection_) {
    proj_conv_ = std::make_unique<Conv2d>(in_ch, out_ch, 1, stride, mode);
    proj_bn_ = std::make_unique<BatchNorm>(out_ch);
  }
}

void BasicBlock::init(std::mt19937_64& rng) {
  conv1_.init_kaiming(rng);
  conv2_.init_kaiming(rng);
  if (has_projection_) proj_conv_->init_kaiming(rng);
}

void BasicBlock::collect_state(const std::string& prefix, std::vector<TensorRef>& out) {
  conv1_.collect_state(prefix + "conv1.", out);
  bn1_.collect_state(prefix + "bn1.", out);
  conv2_.collect_state(prefix + "conv2.", out);
  bn2_.collect_state(prefix + "bn2.", out);
  if (has_projection_) {
    proj_conv_->collect_state(prefix + "proj_conv.", out);
    proj_bn_->collect_state(prefix + "proj_bn.", out);
  }
}

void BasicBlock::set_training(bool t) {
  Module::set_training(t);
  conv1_.set_training(t);
  conv2_.set_training(t);
  bn1_.set_training(t);
  bn2_.set_training(t);
  if (has_projection_) {
    proj_conv_->set_training(t);
    proj_bn_->set_training(t);
  }
}

Tensor BasicBlock::forward(const Tensor& x) {
  Tensor h = relu1_.forward(bn1_.forward(conv1_.forward(x)));
  Tensor main = bn2_.forward(conv2_.forward(h));
  Tensor shortcut = has_projection_ ? proj_bn_->forward(proj_conv_->forward(x)) : x;
  check_shape(shortcut, main.shape(), "BasicBlock: shortcut shape");
  for (long i = 0; i < main.numel(); ++i) main[i] += shortcut[i];
  return relu2_.forward(main);
}

Tensor BasicBlock::backward(const Tensor& gy) {
  Tensor g = relu2_.backward(gy);
  Tensor dmain = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
  if (has_projection_) {
    Tensor dshort = proj_conv_->backward(proj_bn_->backward(g));
    for (long i = 0; i < dmain.numel(); ++i) dmain[i] += dshort[i];
  } else {
    for (long i = 0; i < dmain.numel(); ++i) dmain[i] += g[i];
  }
  return dmain;
}

ResNetBackbone::ResNetBackbone(long in_ch, std::vector<long> widths, Sampling mode)
    : widths_(std::move(widths)),
      mode_(mode),
      stem_conv_(in_ch, widths_.at(0), 7, 2, mode),
      stem_bn_(widths_.at(0)),
      stem_pool_(3, 2, mode) {
  if (widths_.size() != 4) {
    throw std::invalid_argument("ResNetBackbone: expected four stage widths");
  }
  long ch = widths_[0];
  for (int stage = 0; stage < 4; ++stage) {
    const long out_ch = widths_[static_cast<size_t>(stage)];
    const long stride = stage == 0 ? 1 : 2;
    blocks_.push_back(std::make_unique<BasicBlock>(ch, out_ch, stride, mode));
    blocks_.push_back(std::make_unique<BasicBlock>(out_ch, out_ch, 1, mode));
    ch = out_ch;
  }
}

void ResNetBackbone::init(std::mt19937_64& rng) {
  stem_conv_.init_kaiming(rng);
  for (auto& b : blocks_) b->init(rng);
}

void ResNetBackbone::collect_state(const std::string& prefix, std::vector<TensorRef>& out) {
  stem_conv_.collect_state(prefix + "stem.conv.", out);
  stem_bn_.collect_state(prefix + "stem.bn.", out);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const std::string name =
        prefix + "layer" + std::to_string(i / 2 + 1) + "." + std::to_string(i % 2) + ".";
    blocks_[i]->collect_state(name, out);
  }
}

void ResNetBackbone::set_training(bool t) {
  Module::set_training(t);
  stem_conv_.set_training(t);
  stem_bn_.set_training(t);
  stem_pool_.set_training(t);
  for (auto& b : blocks_) b->set_training(t);
}

Tensor ResNetBackbone::forward(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("ResNetBackbone: expected B x C x H x W input");
  Tensor h = stem_pool_.forward(stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(x))));
  for (auto& b : blocks_) h = b->forward(h);
  return h;
}

Tensor ResNetBackbone::backward(const Tensor& gy) {
  Tensor g = gy;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = (*it)->backward(g);
  return stem_conv_.backward(stem_bn_.backward(stem_relu_.backward(stem_pool_.backward(g))));
}

PointNetExtractor::PointNetExtractor(std::vector<long> widths) : widths_(std::move(widths)) {
  if (widths_.empty()) throw std::invalid_argument("PointNetExtractor: empty width list");
  long ch = 3;
  for (long w : widths_) {
    convs_.push_back(std::make_unique<Conv2d>(ch, w, 1, 1, Sampling::kPlanar));
    bns_.push_back(std::make_unique<BatchNorm>(w));
    relus_.push_back(std::make_unique<ReLU>());
    ch = w;
  }
}

void PointNetExtractor::init(std::mt19937_64& rng) {
  for (auto& c : convs_) c->init_kaiming(rng);
}

void PointNetExtractor::collect_state(const std::string& prefix, std::vector<TensorRef>& out) {
  for (size_t i = 0; i < convs_.size(); ++i) {
    convs_[i]->collect_state(prefix + "mlp" + std::to_string(i) + ".conv.", out);
    bns_[i]->collect_state(prefix + "mlp" + std::to_string(i) + ".bn.", out);
  }
}

void PointNetExtractor::set_training(bool t) {
  Module::set_training(t);
  for (size_t i = 0; i < convs_.size(); ++i) {
    convs_[i]->set_training(t);
    bns_[i]->set_training(t);
  }
}

Tensor PointNetExtractor::forward(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(3) != 1) {
    throw std::invalid_argument("PointNetExtractor: expected B x 3 x N x 1 input");
  }
  Tensor h = x;
  for (size_t i = 0; i < convs_.size(); ++i) {
    h = relus_[i]->forward(bns_[i]->forward(convs_[i]->forward(h)));
  }
  return h;
}

Tensor PointNetExtractor::backward(const Tensor& gy) {
  Tensor g = gy;
  for (size_t i = convs_.size(); i-- > 0;) {
    g = convs_[i]->backward(bns_[i]->backward(relus_[i]->backward(g)));
  }
  return g;
}

}  // namespace panoloc
