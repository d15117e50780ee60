#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace panoloc {

// Dense row-major tensor of doubles. All network math in this library runs
// at 64-bit precision so that analytic gradients can be checked against
// central finite differences at tight tolerances.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<long> shape) { resize(std::move(shape)); }
  Tensor(std::initializer_list<long> shape) { resize(std::vector<long>(shape)); }

  static Tensor zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<long> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }
  static Tensor randn(std::vector<long> shape, std::mt19937_64& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data_) v = dist(rng);
    return t;
  }
  static Tensor uniform(std::vector<long> shape, std::mt19937_64& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data_) v = dist(rng);
    return t;
  }

  void resize(std::vector<long> shape) {
    shape_ = std::move(shape);
    long n = 1;
    for (long d : shape_) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    data_.assign(static_cast<size_t>(n), 0.0);
  }

  bool empty() const { return data_.empty(); }
  long numel() const { return static_cast<long>(data_.size()); }
  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<long>& shape() const { return shape_; }
  long dim(int i) const { return shape_.at(static_cast<size_t>(i)); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(0.0); }

  double& operator[](long i) { return data_[static_cast<size_t>(i)]; }
  double operator[](long i) const { return data_[static_cast<size_t>(i)]; }

  double& operator()(long i) { return data_[static_cast<size_t>(i)]; }
  double operator()(long i) const { return data_[static_cast<size_t>(i)]; }
  double& operator()(long i, long j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double operator()(long i, long j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double& operator()(long i, long j, long k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double operator()(long i, long j, long k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double& operator()(long i, long j, long k, long l) {
    return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  double operator()(long i, long j, long k, long l) const {
    return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  double& operator()(long i, long j, long k, long l, long m) {
    return data_[static_cast<size_t>(
        (((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l) * shape_[4] + m)];
  }
  double operator()(long i, long j, long k, long l, long m) const {
    return data_[static_cast<size_t>(
        (((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l) * shape_[4] + m)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Reinterprets the flat buffer under a new shape with equal element count.
  Tensor reshaped(std::vector<long> new_shape) const {
    Tensor t;
    t.shape_ = std::move(new_shape);
    long n = 1;
    for (long d : t.shape_) n *= d;
    if (n != numel()) throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    t.data_ = data_;
    return t;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape_[i]);
    }
    s += ")";
    return s;
  }

 private:
  std::vector<long> shape_;
  std::vector<double> data_;
};

inline void check_shape(const Tensor& t, const std::vector<long>& shape, const char* what) {
  if (t.shape() != shape) {
    throw std::invalid_argument(std::string(what) + ": unexpected shape " + t.shape_str());
  }
}

}  // namespace panoloc
