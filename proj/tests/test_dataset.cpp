#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "crm/dataset.hpp"
#include "crm/errors.hpp"
#include "crm/rng.hpp"

using namespace crm;

namespace {

LoggedDataset random_dataset(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  LoggedDataset ds;
  ds.contexts.resize(n, d);
  ds.actions.resize(n);
  ds.propensities.resize(n);
  ds.costs.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) ds.contexts(i, j) = rng.normal();
    ds.actions[i] = std::exp(rng.normal());
    ds.propensities[i] = 0.01 + rng.uniform01();
    ds.costs[i] = -rng.uniform01();
  }
  return ds;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("single-row csv parses") {
  const std::string path = temp_path("crm_one_row.csv");
  std::ofstream(path) << "x0,action,propensity,cost\n0.5,1.0,0.2,-1.0\n";
  const LoggedDataset ds = load_csv(path);
  CHECK(ds.n() == 1);
  CHECK(ds.dim() == 1);
  CHECK(ds.contexts(0, 0) == doctest::Approx(0.5));
  CHECK(ds.actions[0] == doctest::Approx(1.0));
  CHECK(ds.propensities[0] == doctest::Approx(0.2));
  CHECK(ds.costs[0] == doctest::Approx(-1.0));
  std::remove(path.c_str());
}

TEST_CASE("nonpositive propensity is rejected") {
  const std::string path = temp_path("crm_bad_prop.csv");
  std::ofstream(path) << "x0,action,propensity,cost\n0.5,1.0,0.0,-1.0\n";
  CHECK_THROWS_AS(load_csv(path), ValidationError);
  std::remove(path.c_str());
}

TEST_CASE("malformed rows name the line") {
  const std::string path = temp_path("crm_bad_row.csv");
  std::ofstream(path) << "x0,action,propensity,cost\n0.5,1.0,0.2,-1.0\n0.5,oops,0.2,-1.0\n";
  try {
    load_csv(path);
    FAIL("expected a parse error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("csv round-trip preserves values") {
  const LoggedDataset ds = random_dataset(137, 3, 99);
  for (const char* name : {"crm_rt.csv", "crm_rt.csv.gz"}) {
    const std::string path = temp_path(name);
    save_csv(ds, path);
    const LoggedDataset back = load_csv(path);
    REQUIRE(back.n() == ds.n());
    REQUIRE(back.dim() == ds.dim());
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
      for (Eigen::Index j = 0; j < ds.dim(); ++j)
        CHECK(back.contexts(i, j) == doctest::Approx(ds.contexts(i, j)).epsilon(1e-12));
      CHECK(back.actions[i] == doctest::Approx(ds.actions[i]).epsilon(1e-12));
      CHECK(back.propensities[i] == doctest::Approx(ds.propensities[i]).epsilon(1e-12));
      CHECK(back.costs[i] == doctest::Approx(ds.costs[i]).epsilon(1e-12));
    }
    std::remove(path.c_str());
  }
}

TEST_CASE("split produces exact fractions and a partition") {
  const LoggedDataset ds = random_dataset(100, 2, 5);
  const DataSplit sp = split(ds, {0.5, 0.25, 0.25}, 11);
  CHECK(sp.train.n() == 50);
  CHECK(sp.valid.n() == 25);
  CHECK(sp.test.n() == 25);

  // partition: every original row appears exactly once
  std::multiset<double> original, pieces;
  for (Eigen::Index i = 0; i < ds.n(); ++i) original.insert(ds.actions[i]);
  for (const auto* part : {&sp.train, &sp.valid, &sp.test})
    for (Eigen::Index i = 0; i < part->n(); ++i) pieces.insert(part->actions[i]);
  CHECK(original == pieces);
}

TEST_CASE("split is deterministic in the seed") {
  const LoggedDataset ds = random_dataset(73, 2, 6);
  const DataSplit a = split(ds, {0.6, 0.2, 0.2}, 17);
  const DataSplit b = split(ds, {0.6, 0.2, 0.2}, 17);
  CHECK(a.train.actions == b.train.actions);
  CHECK(a.valid.actions == b.valid.actions);
  CHECK(a.test.actions == b.test.actions);
  const DataSplit c = split(ds, {0.6, 0.2, 0.2}, 18);
  CHECK(a.train.actions != c.train.actions);
}

TEST_CASE("partition property holds on random sizes") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 10 + static_cast<Eigen::Index>(rng.index(200));
    const LoggedDataset ds = random_dataset(n, 1, 1000 + trial);
    const DataSplit sp = split(ds, {0.5, 0.25, 0.25}, trial);
    CHECK(sp.train.n() + sp.valid.n() + sp.test.n() == n);
    std::multiset<double> original, pieces;
    for (Eigen::Index i = 0; i < n; ++i) original.insert(ds.costs[i]);
    for (const auto* part : {&sp.train, &sp.valid, &sp.test})
      for (Eigen::Index i = 0; i < part->n(); ++i) pieces.insert(part->costs[i]);
    CHECK(original == pieces);
  }
}

TEST_CASE("tiny datasets cannot be split") {
  const LoggedDataset ds = random_dataset(2, 1, 3);
  CHECK_THROWS_AS(split(ds, {0.5, 0.25, 0.25}, 0), ValidationError);
}

TEST_CASE("bad fractions are rejected") {
  const LoggedDataset ds = random_dataset(30, 1, 3);
  CHECK_THROWS_AS(split(ds, {0.5, 0.2, 0.2}, 0), ValidationError);
  CHECK_THROWS_AS(split(ds, {1.0, 0.0, 0.0}, 0), ValidationError);
}
