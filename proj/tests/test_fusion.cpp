#include <doctest.h>

#include <cmath>
#include <random>

#include "cpfuse/error.hpp"
#include "cpfuse/fusion.hpp"
#include "oracles.hpp"

using namespace cpfuse;
using oracle::dist_from_probs;

namespace {

// Exhaustive scan through the public combine/objective functions.
struct BruteForce {
  double value;
  double alpha;
  double beta;
};

BruteForce brute_force(const LogProbDist& d1, const LogProbDist& d2, double h1, double h2,
                       const GridSpec& grid) {
  const std::vector<LogProbDist> dists = {d1, d2};
  const std::vector<double> hist = {h1, h2};
  BruteForce best{INFINITY, -1, -1};
  for (double a : grid.values) {
    for (double b : grid.values) {
      const double v = fusion_objective(combine_logits(d1, d2, a, b), dists, hist).value;
      if (v < best.value) best = {v, a, b};
    }
  }
  return best;
}

}  // namespace

TEST_CASE("standard grid") {
  const GridSpec g = GridSpec::standard();
  REQUIRE(g.values.size() == 19);
  CHECK(g.num_points() == 361);
  CHECK(g.values.front() == 0.0);
  CHECK(g.values[9] == doctest::Approx(1.8));
  CHECK(g.values[10] == 2.0);
  CHECK(g.values.back() == 10.0);
  CHECK(GridSpec::parse("default").values == g.values);
  CHECK(GridSpec::parse("0,0.5,1").values == std::vector<double>{0, 0.5, 1});
  CHECK_THROWS_AS(GridSpec::parse("0.5,1"), ContractError);
  CHECK_THROWS_AS(GridSpec::parse("0,1,1"), ContractError);
  CHECK_THROWS_AS(GridSpec::parse("0,x,1"), ContractError);
}

TEST_CASE("combine_logits") {
  std::mt19937_64 rng(1);
  const auto p = oracle::random_dist(rng, 257);
  const auto q = oracle::random_dist(rng, 257);

  double gamma = 1.0;
  const auto same = combine_logits(p, q, 1.0, 0.0, &gamma);
  CHECK(std::abs(gamma) < 1e-12);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(same[i] == doctest::Approx(p[i]).epsilon(1e-12));

  const auto half = combine_logits(p, p, 0.5, 0.5);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(half[i] == doctest::Approx(p[i]).epsilon(1e-12));

  const auto sym = combine_logits(dist_from_probs({0.9, 0.1}), dist_from_probs({0.1, 0.9}), 1, 1);
  CHECK(std::exp(sym[0]) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(std::exp(sym[1]) == doctest::Approx(0.5).epsilon(1e-14));

  // large exponents stay finite and normalized
  const auto big = combine_logits(p, q, 10.0, 10.0);
  CHECK(big.all_finite());
  CHECK(std::abs(oracle::log_mass(big)) <= 1e-9);

  CHECK_THROWS_AS(combine_logits(p, q, -0.1, 1.0), ContractError);
  CHECK_THROWS_AS(combine_logits(p, dist_from_probs({0.5, 0.5}), 1.0, 1.0), ContractError);
  LogProbDist bad = p;
  bad[3] = -INFINITY;
  CHECK_THROWS_AS(combine_logits(bad, q, 1.0, 1.0), ContractError);
}

TEST_CASE("kl_divergence worked examples") {
  // 0.5 ln(0.5/0.75) + 0.5 ln(0.5/0.25)
  const double e1 = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
  CHECK(kl_divergence(dist_from_probs({0.5, 0.5}), dist_from_probs({0.75, 0.25})) ==
        doctest::Approx(e1).epsilon(1e-14));
  CHECK(e1 == doctest::Approx(0.143841).epsilon(1e-6));
  const double e2 = 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5);
  CHECK(kl_divergence(dist_from_probs({0.25, 0.75}), dist_from_probs({0.5, 0.5})) ==
        doctest::Approx(e2).epsilon(1e-14));
  CHECK(e2 == doctest::Approx(0.130812).epsilon(1e-6));

  std::mt19937_64 rng(2);
  const auto p = oracle::random_dist(rng, 257);
  CHECK(kl_divergence(p, p) == 0.0);
  CHECK_THROWS_AS(kl_divergence(p, dist_from_probs({0.5, 0.5})), ContractError);
}

TEST_CASE("kl_divergence matches probability-space summation") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto q = oracle::random_dist(rng, 257);
    const auto p = oracle::random_dist(rng, 257);
    const double kl = kl_divergence(q, p);
    CHECK(kl >= -1e-12);
    CHECK(std::abs(kl - oracle::kl_probability_space(q, p)) <= 1e-12 * std::max(1.0, kl));
  }
}

TEST_CASE("fusion_objective") {
  const auto p = dist_from_probs({0.7, 0.2, 0.1});
  const auto r = dist_from_probs({0.1, 0.3, 0.6});
  const auto q = dist_from_probs({0.3, 0.3, 0.4});

  const std::vector<LogProbDist> same = {p, p};
  const std::vector<double> zero = {0.0, 0.0};
  auto o = fusion_objective(q, same, std::vector<double>{-1.0, -1.0});
  CHECK(o.branch == 0);
  CHECK(o.value == doctest::Approx(kl_divergence(q, p) + 1.0));

  const std::vector<LogProbDist> differ = {p, r};
  o = fusion_objective(p, differ, zero);
  CHECK(o.branch == 1);
  CHECK(o.value == doctest::Approx(kl_divergence(p, r)));

  o = fusion_objective(p, same, std::vector<double>{0.0, -10.0});
  CHECK(o.branch == 1);
  CHECK(o.value == doctest::Approx(10.0).epsilon(1e-14));

  CHECK_THROWS_AS(fusion_objective(p, same, std::vector<double>{0.0}), ContractError);
  CHECK_THROWS_AS(fusion_objective(p, std::vector<LogProbDist>{p}, std::vector<double>{0.0}),
                  ContractError);
}

TEST_CASE("solve_step on coinciding models returns the shared distribution") {
  std::mt19937_64 rng(4);
  const auto p = oracle::random_dist(rng, 257);
  const auto r = solve_step(p, p, 0.0, 0.0, GridSpec::standard());
  CHECK(r.alpha + r.beta == doctest::Approx(1.0));
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(r.dist[i] == doctest::Approx(p[i]).epsilon(1e-10));
}

TEST_CASE("solve_step defers to the model with lower history") {
  const auto p1 = dist_from_probs({0.99, 0.01});
  const auto p2 = dist_from_probs({0.01, 0.99});
  const auto r = solve_step(p1, p2, 0.0, -10.0, GridSpec::standard());
  CHECK(kl_divergence(r.dist, p2) < kl_divergence(r.dist, p1));
  CHECK(r.beta > r.alpha);
  const auto bf = brute_force(p1, p2, 0.0, -10.0, GridSpec::standard());
  CHECK(r.objective == bf.value);
  CHECK(r.alpha == bf.alpha);
  CHECK(r.beta == bf.beta);
}

TEST_CASE("solve_step on mirrored models picks the symmetric midpoint") {
  const auto r = solve_step(dist_from_probs({0.9, 0.1}), dist_from_probs({0.1, 0.9}), 0.0, 0.0,
                            GridSpec::standard());
  CHECK(r.alpha == r.beta);
  CHECK(std::exp(r.dist[0]) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("solve_step agrees with exhaustive evaluation") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> hist(-20.0, 0.0);
  const GridSpec grid = GridSpec::standard();
  const std::vector<std::size_t> sizes = {2, 5, 257};
  for (int i = 0; i < 60; ++i) {
    const std::size_t n = sizes[static_cast<std::size_t>(i) % sizes.size()];
    const auto d1 = oracle::random_dist(rng, n);
    const auto d2 = oracle::random_dist(rng, n);
    const double h1 = hist(rng), h2 = hist(rng);
    const auto r = solve_step(d1, d2, h1, h2, grid);
    const auto bf = brute_force(d1, d2, h1, h2, grid);
    CHECK(r.objective == bf.value);
    CHECK(r.alpha == bf.alpha);
    CHECK(r.beta == bf.beta);

    // result distribution and gamma are those of combine_logits at the chosen point
    double gamma = 0.0;
    const auto q = combine_logits(d1, d2, r.alpha, r.beta, &gamma);
    CHECK(r.dist.logp == q.logp);
    CHECK(r.gamma == gamma);
    CHECK(std::abs(oracle::log_mass(r.dist)) <= 1e-9);

    // endpoints (1,0) and (0,1) are on the grid
    const std::vector<LogProbDist> ds = {d1, d2};
    const std::vector<double> hs = {h1, h2};
    CHECK(r.objective <= fusion_objective(combine_logits(d1, d2, 1, 0), ds, hs).value);
    CHECK(r.objective <= fusion_objective(combine_logits(d1, d2, 0, 1), ds, hs).value);

    const auto ov = fusion_objective(r.dist, ds, hs);
    CHECK(r.branch == ov.branch);
    CHECK(r.branch_values[0] == doctest::Approx(kl_divergence(r.dist, d1) - h1).epsilon(1e-12));
    CHECK(r.branch_values[1] == doctest::Approx(kl_divergence(r.dist, d2) - h2).epsilon(1e-12));
  }
}

TEST_CASE("solve_step with repeated probability values") {
  // n-gram style distributions: most entries share the uniform floor
  std::vector<double> a(257, 1e-6), b(257, 2e-6);
  a[3] = 0.6;
  a[7] = 0.2;
  b[7] = 0.5;
  b[9] = 0.3;
  auto normalize = [](std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    for (double& x : v) x /= s;
  };
  normalize(a);
  normalize(b);
  const auto d1 = dist_from_probs(a), d2 = dist_from_probs(b);
  for (double h2 : {0.0, -3.0, -30.0}) {
    const auto r = solve_step(d1, d2, -1.0, h2, GridSpec::standard());
    const auto bf = brute_force(d1, d2, -1.0, h2, GridSpec::standard());
    CHECK(r.objective == doctest::Approx(bf.value).epsilon(1e-12));
    CHECK(std::abs(oracle::log_mass(r.dist)) <= 1e-9);
  }
}

TEST_CASE("solve_step input validation") {
  std::mt19937_64 rng(6);
  const auto p = oracle::random_dist(rng, 10);
  GridSpec empty;
  CHECK_THROWS_AS(solve_step(p, p, 0, 0, empty), ContractError);
  CHECK_THROWS_AS(solve_step(p, p, NAN, 0, GridSpec::standard()), ContractError);
  LogProbDist bad = p;
  bad[0] = INFINITY;
  CHECK_THROWS_AS(solve_step(bad, p, 0, 0, GridSpec::standard()), ContractError);
}

TEST_CASE("cp_delta_step") {
  const auto r = cp_delta_step(dist_from_probs({0.64, 0.36}), dist_from_probs({0.25, 0.75}));
  const double u0 = std::sqrt(0.64 * 0.25), u1 = std::sqrt(0.36 * 0.75);
  CHECK(std::exp(r[0]) == doctest::Approx(u0 / (u0 + u1)).epsilon(1e-14));
  CHECK(std::exp(r[1]) == doctest::Approx(u1 / (u0 + u1)).epsilon(1e-14));
  CHECK(std::exp(r[0]) == doctest::Approx(0.43497).epsilon(1e-5));

  const auto mirrored = cp_delta_step(dist_from_probs({0.9, 0.1}), dist_from_probs({0.1, 0.9}));
  CHECK(std::exp(mirrored[0]) == doctest::Approx(0.5).epsilon(1e-14));
  std::mt19937_64 rng(7);
  const auto p = oracle::random_dist(rng, 257);
  const auto same = cp_delta_step(p, p);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(same[i] == doctest::Approx(p[i]).epsilon(1e-12));
}

TEST_CASE("solve_step_multi") {
  std::mt19937_64 rng(8);
  const auto p = oracle::random_dist(rng, 50);
  const auto q = oracle::random_dist(rng, 50);
  const auto s = oracle::random_dist(rng, 50);
  const GridSpec grid = GridSpec::standard();

  SUBCASE("identical models") {
    const std::vector<LogProbDist> ds = {p, p, p};
    const auto r = solve_step_multi(ds, std::vector<double>{0, 0, 0}, grid);
    CHECK(r.first == 0);
    CHECK(r.second == 1);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(r.dist[i] == doctest::Approx(p[i]).epsilon(1e-10));
  }
  SUBCASE("a pair of identical models attains the lower bound") {
    // max_i KL(r || p_i) - L_i >= max_i -L_i, with equality at r = p when both are p
    const std::vector<LogProbDist> ds = {p, q, p};
    const auto r = solve_step_multi(ds, std::vector<double>{-1, -2, -1}, grid);
    CHECK(r.first == 0);
    CHECK(r.second == 2);
    CHECK(r.objective == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("bitwise ties keep the first pair") {
    const std::vector<LogProbDist> ds = {p, q, q};
    const auto r = solve_step_multi(ds, std::vector<double>{-3, -1, -1}, grid);
    const auto a = solve_step(p, q, -3, -1, grid);
    const auto b = solve_step(q, q, -1, -1, grid);
    if (a.objective < b.objective) {
      CHECK(r.first == 0);
      CHECK(r.second == 1);
    } else {
      CHECK(r.first == 1);
      CHECK(r.second == 2);
    }
  }
  SUBCASE("pair and grid point match pair-wise brute force") {
    const std::vector<LogProbDist> ds = {p, q, s};
    const std::vector<double> hs = {-1.0, -2.0, -25.0};
    const auto r = solve_step_multi(ds, hs, grid);
    double best = INFINITY;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = i + 1; j < 3; ++j) {
        const auto bf = brute_force(ds[i], ds[j], hs[i], hs[j], grid);
        if (bf.value < best) {
          best = bf.value;
          bi = i;
          bj = j;
        }
      }
    }
    CHECK(r.objective == best);
    CHECK(r.first == bi);
    CHECK(r.second == bj);
    // any pair containing model 3 pays at least 25
    CHECK(bj != 2);
  }
  CHECK_THROWS_AS(solve_step_multi(std::vector<LogProbDist>{p, q}, std::vector<double>{0, 0}, grid),
                  ContractError);
}

TEST_CASE("fusion state accumulates generated-token log-probabilities") {
  FusionState st(2);
  const std::vector<LogProbDist> ds = {dist_from_probs({0.5, 0.5}), dist_from_probs({0.25, 0.75})};
  st.advance(ds, 1);
  st.advance(ds, 0);
  CHECK(st.hist()[0] == doctest::Approx(2 * std::log(0.5)));
  CHECK(st.hist()[1] == doctest::Approx(std::log(0.75) + std::log(0.25)));
}
