#include "panoloc/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "panoloc/dataset.hpp"

namespace panoloc {

RetrievalDatabase::RetrievalDatabase(std::vector<DbEntry> entries)
    : entries_(std::move(entries)) {
  if (entries_.empty()) throw std::invalid_argument("RetrievalDatabase: empty entry list");
  dim_ = entries_.front().descriptor.numel();
  std::unordered_set<long> ids;
  for (const DbEntry& e : entries_) {
    if (!ids.insert(e.id).second) {
      throw std::invalid_argument("RetrievalDatabase: duplicate id " + std::to_string(e.id));
    }
    if (e.descriptor.numel() != dim_) {
      throw std::invalid_argument("RetrievalDatabase: inconsistent descriptor dimension");
    }
    double sq = 0.0;
    for (long i = 0; i < dim_; ++i) sq += e.descriptor[i] * e.descriptor[i];
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-4) {
      throw std::invalid_argument("RetrievalDatabase: descriptor of id " + std::to_string(e.id) +
                                  " is not unit norm (|v| = " + std::to_string(std::sqrt(sq)) +
                                  ")");
    }
  }
}

std::vector<RankedMatch> RetrievalDatabase::query_topk(const Tensor& descriptor, long k) const {
  if (k < 1 || static_cast<size_t>(k) > entries_.size()) {
    throw std::invalid_argument("query_topk: k out of range [1, " +
                                std::to_string(entries_.size()) + "]");
  }
  if (descriptor.numel() != dim_) {
    throw std::invalid_argument("query_topk: descriptor dimension mismatch");
  }
  std::vector<RankedMatch> all;
  all.reserve(entries_.size());
  for (const DbEntry& e : entries_) {
    double sq = 0.0;
    for (long i = 0; i < dim_; ++i) {
      const double d = descriptor[i] - e.descriptor[i];
      sq += d * d;
    }
    all.push_back({e.id, std::sqrt(sq)});
  }
  auto cmp = [](const RankedMatch& a, const RankedMatch& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  };
  std::partial_sort(all.begin(), all.begin() + k, all.end(), cmp);
  all.resize(static_cast<size_t>(k));
  return all;
}

double recall_at_k(const std::vector<std::vector<RankedMatch>>& results,
                   const std::vector<Eigen::Vector3d>& query_positions,
                   const RetrievalDatabase& db, long k, double same_place) {
  if (results.empty()) throw std::invalid_argument("recall_at_k: empty query set");
  if (results.size() != query_positions.size()) {
    throw std::invalid_argument("recall_at_k: one ranked list per query required");
  }
  std::unordered_map<long, Eigen::Vector3d> pos;
  for (const DbEntry& e : db.entries()) pos.emplace(e.id, e.position);

  long correct = 0;
  for (size_t q = 0; q < results.size(); ++q) {
    const long kk = std::min<long>(k, static_cast<long>(results[q].size()));
    for (long i = 0; i < kk; ++i) {
      const auto it = pos.find(results[q][static_cast<size_t>(i)].id);
      if (it == pos.end()) {
        throw std::invalid_argument("recall_at_k: result id not present in database");
      }
      if (horizontal_distance(it->second, query_positions[q]) <= same_place) {
        ++correct;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(results.size());
}

long one_percent_k(size_t db_size) {
  return std::max<long>(1, static_cast<long>(db_size / 100));
}

double recall_at_1pct(const std::vector<std::vector<RankedMatch>>& results,
                      const std::vector<Eigen::Vector3d>& query_positions,
                      const RetrievalDatabase& db, double same_place) {
  return recall_at_k(results, query_positions, db, one_percent_k(db.size()), same_place);
}

std::vector<size_t> select_eval_queries(const std::vector<Eigen::Vector3d>& positions,
                                        double spacing) {
  std::vector<size_t> selected;
  for (size_t i = 0; i < positions.size(); ++i) {
    if (selected.empty() ||
        horizontal_distance(positions[i], positions[selected.back()]) >= spacing) {
      selected.push_back(i);
    }
  }
  return selected;
}

}  // namespace panoloc
