#include <doctest.h>

#include <random>

#include "panoloc/dataset.hpp"
#include "panoloc/retrieval.hpp"
#include "panoloc/rng.hpp"

using namespace panoloc;

namespace {

Tensor unit_vec(std::mt19937_64& rng, long d = 16) {
  Tensor v = Tensor::randn({d}, rng);
  double n = 0.0;
  for (long i = 0; i < d; ++i) n += v[i] * v[i];
  n = std::sqrt(n);
  for (long i = 0; i < d; ++i) v[i] /= n;
  return v;
}

std::vector<DbEntry> random_entries(long count, std::mt19937_64& rng, long d = 16) {
  std::vector<DbEntry> entries;
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  for (long i = 0; i < count; ++i) {
    DbEntry e;
    e.id = i;
    e.descriptor = unit_vec(rng, d);
    e.position = {u(rng), u(rng), 0.0};
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace

TEST_CASE("database validation: size one, duplicates, non-unit descriptors") {
  std::mt19937_64 rng(1);
  auto one = random_entries(1, rng);
  RetrievalDatabase db(one);
  CHECK(db.size() == 1);

  auto dup = random_entries(3, rng);
  dup[2].id = dup[0].id;
  CHECK_THROWS_AS(RetrievalDatabase{dup}, std::invalid_argument);

  auto bad = random_entries(2, rng);
  for (long i = 0; i < bad[1].descriptor.numel(); ++i) bad[1].descriptor[i] *= 1.01;
  CHECK_THROWS_AS(RetrievalDatabase{bad}, std::invalid_argument);
}

TEST_CASE("query_topk: self match, full ranking, linear-scan oracle") {
  std::mt19937_64 rng(2);
  auto entries = random_entries(1000, rng);
  RetrievalDatabase db(entries);

  const auto self = db.query_topk(entries[137].descriptor, 3);
  CHECK(self[0].id == 137);
  CHECK(self[0].distance == doctest::Approx(0.0).epsilon(1e-12));

  const auto full = db.query_topk(entries[0].descriptor, 1000);
  std::vector<bool> seen(1000, false);
  for (const auto& m : full) {
    CHECK(!seen[static_cast<size_t>(m.id)]);
    seen[static_cast<size_t>(m.id)] = true;
  }
  for (size_t i = 1; i < full.size(); ++i) CHECK(full[i].distance >= full[i - 1].distance);

  // Every query's top-k matches a brute-force scan exactly.
  for (int trial = 0; trial < 25; ++trial) {
    const Tensor q = unit_vec(rng);
    const long k = 10;
    const auto got = db.query_topk(q, k);
    std::vector<RankedMatch> brute;
    for (const auto& e : entries) {
      double sq = 0.0;
      for (long i = 0; i < 16; ++i) sq += (q[i] - e.descriptor[i]) * (q[i] - e.descriptor[i]);
      brute.push_back({e.id, std::sqrt(sq)});
    }
    std::sort(brute.begin(), brute.end(), [](const RankedMatch& a, const RankedMatch& b) {
      return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
    });
    for (long i = 0; i < k; ++i) {
      CHECK(got[static_cast<size_t>(i)].id == brute[static_cast<size_t>(i)].id);
      CHECK(got[static_cast<size_t>(i)].distance ==
            doctest::Approx(brute[static_cast<size_t>(i)].distance).epsilon(1e-12));
    }
  }

  CHECK_THROWS_AS(db.query_topk(entries[0].descriptor, 0), std::invalid_argument);
  CHECK_THROWS_AS(db.query_topk(entries[0].descriptor, 1001), std::invalid_argument);
}

TEST_CASE("equal distances break ties by ascending id") {
  std::mt19937_64 rng(3);
  const Tensor shared = unit_vec(rng);
  std::vector<DbEntry> entries;
  for (long id : {42L, 7L, 19L}) {
    DbEntry e;
    e.id = id;
    e.descriptor = shared;
    e.position = {0, 0, 0};
    entries.push_back(e);
  }
  RetrievalDatabase db(entries);
  const auto got = db.query_topk(shared, 3);
  CHECK(got[0].id == 7);
  CHECK(got[1].id == 19);
  CHECK(got[2].id == 42);
}

TEST_CASE("recall_at_k: counted percentages and monotonicity in k") {
  std::mt19937_64 rng(4);
  // 4 queries, exactly 2 correct at k = 1: construct by position.
  auto entries = random_entries(4, rng);
  entries[0].position = {0, 0, 0};
  entries[1].position = {100, 0, 0};
  entries[2].position = {200, 0, 0};
  entries[3].position = {300, 0, 0};
  RetrievalDatabase db(entries);

  std::vector<std::vector<RankedMatch>> results = {
      {{0, 0.1}},  // query 0 near entry 0: correct
      {{0, 0.1}},  // query 1 far from entry 0: wrong
      {{2, 0.1}},  // correct
      {{0, 0.1}},  // wrong
  };
  std::vector<Eigen::Vector3d> qpos = {{0, 0, 0}, {100, 0, 0}, {200, 0, 0}, {300, 0, 0}};
  CHECK(recall_at_k(results, qpos, db, 1) == doctest::Approx(50.0));

  std::vector<std::vector<RankedMatch>> all_correct = {
      {{0, 0.1}}, {{1, 0.1}}, {{2, 0.1}}, {{3, 0.1}}};
  CHECK(recall_at_k(all_correct, qpos, db, 1) == doctest::Approx(100.0));

  // Randomized 50-query set against a brute-force recount, and monotone in k.
  auto big = random_entries(200, rng);
  RetrievalDatabase bigdb(big);
  std::vector<std::vector<RankedMatch>> res;
  std::vector<Eigen::Vector3d> pos;
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  for (int q = 0; q < 50; ++q) {
    res.push_back(bigdb.query_topk(unit_vec(rng), 25));
    pos.push_back({u(rng), u(rng), 0.0});
  }
  double prev = 0.0;
  for (long k = 1; k <= 25; ++k) {
    const double got = recall_at_k(res, pos, bigdb, k);
    long correct = 0;
    for (int q = 0; q < 50; ++q) {
      bool ok = false;
      for (long i = 0; i < k; ++i) {
        const auto& e = big[static_cast<size_t>(res[static_cast<size_t>(q)][static_cast<size_t>(i)].id)];
        if (horizontal_distance(e.position, pos[static_cast<size_t>(q)]) <= 20.0) ok = true;
      }
      if (ok) ++correct;
    }
    CHECK(got == doctest::Approx(100.0 * correct / 50.0));
    CHECK(got >= prev - 1e-12);
    prev = got;
  }

  CHECK_THROWS_AS(recall_at_k({}, {}, db, 1), std::invalid_argument);
}

TEST_CASE("recall_at_1pct uses k = max(1, floor(N/100))") {
  CHECK(one_percent_k(50) == 1);
  CHECK(one_percent_k(100) == 1);
  CHECK(one_percent_k(300) == 3);
  CHECK(one_percent_k(1060) == 10);

  std::mt19937_64 rng(5);
  auto entries = random_entries(1060, rng, 8);
  RetrievalDatabase db(entries);
  std::vector<std::vector<RankedMatch>> res;
  std::vector<Eigen::Vector3d> pos;
  for (int q = 0; q < 20; ++q) {
    res.push_back(db.query_topk(unit_vec(rng, 8), 15));
    pos.push_back(entries[static_cast<size_t>(q * 7)].position);
  }
  CHECK(recall_at_1pct(res, pos, db) == doctest::Approx(recall_at_k(res, pos, db, 10)));
}

TEST_CASE("select_eval_queries: greedy 10 m rule") {
  std::vector<Eigen::Vector3d> pos = {{0, 0, 0}, {5, 0, 0}, {12, 0, 0}, {25, 0, 0}};
  const auto sel = select_eval_queries(pos, 10.0);
  REQUIRE(sel.size() == 3);
  CHECK(sel[0] == 0);
  CHECK(sel[1] == 2);
  CHECK(sel[2] == 3);

  const auto single = select_eval_queries({{3, 4, 0}}, 10.0);
  REQUIRE(single.size() == 1);
  CHECK(single[0] == 0);

  // Random walk: consecutive selected gaps are >= 10 m by brute force.
  std::mt19937_64 rng(6);
  std::normal_distribution<double> step(0.0, 4.0);
  std::vector<Eigen::Vector3d> walk(1, {0, 0, 0});
  for (int i = 1; i < 1000; ++i) {
    walk.push_back(walk.back() + Eigen::Vector3d(step(rng), step(rng), 0.0));
  }
  const auto chosen = select_eval_queries(walk, 10.0);
  for (size_t i = 1; i < chosen.size(); ++i) {
    CHECK(horizontal_distance(walk[chosen[i]], walk[chosen[i - 1]]) >= 10.0);
  }
}
