#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "panoloc/tensor.hpp"

namespace panoloc {

struct DbEntry {
  long id = 0;
  Tensor descriptor;  // unit-norm D-vector
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

struct RankedMatch {
  long id = 0;
  double distance = 0.0;
};

// Immutable exact-search descriptor database. Entries are validated on build:
// ids unique, descriptors unit-norm within 1e-4.
class RetrievalDatabase {
 public:
  explicit RetrievalDatabase(std::vector<DbEntry> entries);

  size_t size() const { return entries_.size(); }
  const std::vector<DbEntry>& entries() const { return entries_; }
  const DbEntry& entry(size_t i) const { return entries_[i]; }

  // Exact k-nearest-neighbor by Euclidean distance, ascending; ties broken by
  // ascending id so rankings are deterministic.
  std::vector<RankedMatch> query_topk(const Tensor& descriptor, long k) const;

 private:
  std::vector<DbEntry> entries_;
  long dim_ = 0;
};

// Percentage of queries whose top-k contains an entry within same_place
// meters (horizontal distance) of the query position.
double recall_at_k(const std::vector<std::vector<RankedMatch>>& results,
                   const std::vector<Eigen::Vector3d>& query_positions,
                   const RetrievalDatabase& db, long k, double same_place = 20.0);

// recall@k with k = max(1, floor(db_size / 100)).
double recall_at_1pct(const std::vector<std::vector<RankedMatch>>& results,
                      const std::vector<Eigen::Vector3d>& query_positions,
                      const RetrievalDatabase& db, double same_place = 20.0);

long one_percent_k(size_t db_size);

// Greedy along-trajectory selection with >= spacing meters between
// consecutive selected queries.
std::vector<size_t> select_eval_queries(const std::vector<Eigen::Vector3d>& positions,
                                        double spacing = 10.0);

}  // namespace panoloc
