#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "imec/mec.hpp"
#include "oracles.hpp"
#include "printers.hpp"

using namespace imec;

namespace {

Categorical dense(const std::vector<double>& p) {
  std::vector<TokenId> ids(p.size());
  std::iota(ids.begin(), ids.end(), TokenId{0});
  return Categorical(ids, p);
}

Categorical random_dense(std::mt19937_64& gen, std::size_t max_size) {
  std::uniform_int_distribution<std::size_t> size(1, max_size);
  return dense(oracle::random_probs(size(gen), gen));
}

void expect_marginals(const SparseCoupling& g, double tol) {
  auto rows = g.row_sums();
  auto cols = g.col_sums();
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_NEAR(rows[i], g.left().prob(i), tol);
  for (std::size_t j = 0; j < cols.size(); ++j) EXPECT_NEAR(cols[j], g.right().prob(j), tol);
}

}  // namespace

TEST(GreedyMec, PointMasses) {
  auto g = greedy_mec(Categorical::point_mass(3), Categorical::point_mass(8));
  ASSERT_EQ(g.entries().size(), 1u);
  EXPECT_EQ(g.entries()[0], (CouplingEntry{0, 0, 1.0}));
  EXPECT_EQ(g.entropy(), 0.0);
}

TEST(GreedyMec, HandTracedExample) {
  auto g = greedy_mec(dense({0.5, 0.5}), dense({0.5, 0.25, 0.25}));
  std::vector<CouplingEntry> expected{{0, 0, 0.5}, {1, 1, 0.25}, {1, 2, 0.25}};
  EXPECT_EQ(g.entries(), expected);
  EXPECT_NEAR(g.entropy(), 1.5, 1e-12);
}

TEST(GreedyMec, TiesGoToLowestIndex) {
  auto g = greedy_mec(Categorical::uniform(2), Categorical::uniform(2));
  std::vector<CouplingEntry> expected{{0, 0, 0.5}, {1, 1, 0.5}};
  EXPECT_EQ(g.entries(), expected);
  EXPECT_NEAR(g.entropy(), 1.0, 1e-12);
}

TEST(GreedyMec, Properties) {
  std::mt19937_64 gen(77);
  for (int t = 0; t < 1000; ++t) {
    auto p = random_dense(gen, 1024);
    auto q = random_dense(gen, 64);
    auto g = greedy_mec(p, q);
    expect_marginals(g, 1e-9);
    EXPECT_LE(g.entries().size(), p.size() + q.size() - 1);
    for (const auto& e : g.entries()) EXPECT_GT(e.mass, 0.0);
    const double h = g.entropy();
    EXPECT_GE(h, std::max(entropy(p), entropy(q)) - 1e-9);
    EXPECT_LE(h, entropy(p) + entropy(q) + 1e-9);
  }
}

TEST(GreedyMec, UniformPosteriorAgainstUniformChannel) {
  auto g = greedy_mec(Categorical::uniform(1 << 16), Categorical::uniform(40));
  expect_marginals(g, 1e-9);
  EXPECT_LE(g.entries().size(), (1u << 16) + 40 - 1);
}

TEST(ExactMec, Examples) {
  EXPECT_NEAR(exact_mec(Categorical::point_mass(0), Categorical::point_mass(0)).entropy(), 0.0, 1e-12);

  const double half = exact_mec(dense({0.5, 0.5}), dense({0.5, 0.5})).entropy();
  EXPECT_NEAR(half, oracle::min_entropy_2x2(0.5, 0.5), 1e-6);
  EXPECT_NEAR(half, 1.0, 1e-9);

  const double skew = exact_mec(dense({0.6, 0.4}), dense({0.5, 0.5})).entropy();
  EXPECT_NEAR(skew, oracle::min_entropy_2x2(0.6, 0.5), 1e-6);
  EXPECT_NEAR(skew, oracle::entropy_bits({0.5, 0.1, 0.4}), 1e-9);
  EXPECT_NEAR(skew, 1.361, 1e-3);
}

TEST(ExactMec, RejectsLargeInstances) {
  try {
    exact_mec(Categorical::uniform(5), Categorical::uniform(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "instance-too-large");
  }
}

TEST(ExactMec, MatchesTwoByTwoScan) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int t = 0; t < 50; ++t) {
    const double p0 = u(gen), q0 = u(gen);
    const double h = exact_mec(dense({p0, 1 - p0}), dense({q0, 1 - q0})).entropy();
    EXPECT_NEAR(h, oracle::min_entropy_2x2(p0, q0), 1e-6);
  }
}

TEST(ExactMec, NoSampledCouplingBeatsIt) {
  std::mt19937_64 gen(6);
  for (int t = 0; t < 100; ++t) {
    auto p = random_dense(gen, 4), q = random_dense(gen, 4);
    auto g = exact_mec(p, q);
    expect_marginals(g, 1e-9);
    const double h = g.entropy();
    std::vector<double> pv(p.probs().begin(), p.probs().end()), qv(q.probs().begin(), q.probs().end());
    for (int s = 0; s < 50; ++s)
      EXPECT_LE(h, oracle::joint_entropy(oracle::random_coupling(pv, qv, gen)) + 1e-9);
    EXPECT_LE(h, greedy_mec(p, q).entropy() + 1e-9);
  }
}

TEST(GreedyMec, WithinOneBitOfExact) {
  std::mt19937_64 gen(7);
  for (int t = 0; t < 300; ++t) {
    auto p = random_dense(gen, 4), q = random_dense(gen, 4);
    EXPECT_LE(greedy_mec(p, q).entropy(), exact_mec(p, q).entropy() + 1.0);
  }
}

TEST(Conditionals, Examples) {
  auto single = greedy_mec(Categorical::point_mass(4), Categorical::point_mass(9));
  EXPECT_EQ(row_conditional(single, 0), Categorical::point_mass(9));
  EXPECT_EQ(col_conditional(single, 0), Categorical::point_mass(4));

  auto g = greedy_mec(dense({0.5, 0.5}), dense({0.5, 0.25, 0.25}));
  EXPECT_EQ(row_conditional(g, 1), Categorical({1, 2}, {0.5, 0.5}));
  EXPECT_EQ(col_conditional(g, 0), Categorical::point_mass(0));
  EXPECT_EQ(col_conditional(g, 1), Categorical::point_mass(1));

  SparseCoupling lone(dense({0.3, 0.7}), dense({0.3, 0.7}), {{0, 1, 0.3}, {1, 0, 0.3}, {1, 1, 0.4}});
  EXPECT_EQ(row_conditional(lone, 0), Categorical::point_mass(1));
}

TEST(Conditionals, EmptyRowOrColumn) {
  SparseCoupling g(dense({0.5, 0.5}), dense({0.5, 0.5}), {{0, 0, 0.5}, {0, 1, 0.5}});
  try {
    row_conditional(g, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "zero-row");
  }
  try {
    col_conditional(SparseCoupling(dense({1.0}), dense({0.5, 0.5}), {{0, 0, 1.0}}), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "zero-col");
  }
}

TEST(Conditionals, MapToTokenIds) {
  auto g = greedy_mec(Categorical({10, 20}, {0.5, 0.5}), Categorical({7, 9}, {0.5, 0.5}));
  EXPECT_EQ(row_conditional(g, 1), Categorical::point_mass(9));
  EXPECT_EQ(col_conditional(g, 0), Categorical::point_mass(10));
}

TEST(SparseCoupling, JsonDump) {
  auto g = greedy_mec(dense({0.5, 0.5}), dense({0.5, 0.25, 0.25}));
  EXPECT_EQ(to_json(g).dump(), R"({"entries":[[0,0,0.5],[1,1,0.25],[1,2,0.25]]})");
}
