#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ttsim/optimizer.hpp"

using namespace ttsim;

TEST_CASE("orthogonal_perturbations: pairwise orthogonality, 8x32") {
  Rng rng(1);
  auto rows = orthogonal_perturbations(8, 32, rng);
  REQUIRE(rows.size() == 8);
  for (size_t a = 0; a < rows.size(); ++a)
    for (size_t b = a + 1; b < rows.size(); ++b) {
      double dot = 0.0;
      for (int j = 0; j < 32; ++j) dot += rows[a][j] * rows[b][j];
      CHECK(std::abs(dot) <= 1e-9);
    }
}

TEST_CASE("orthogonal_perturbations: single row is a plain Gaussian direction") {
  Rng rng(2);
  const int dim = 32;
  auto rows = orthogonal_perturbations(1, dim, rng);
  double n2 = 0.0;
  for (double v : rows[0]) n2 += v * v;
  const double norm = std::sqrt(n2);
  // E[chi_d] ~ sqrt(d - 0.5), sd ~ 1/sqrt(2).
  const double expected = std::sqrt(dim - 0.5);
  CHECK(std::abs(norm - expected) <= 3.0 / std::sqrt(2.0));
}

TEST_CASE("orthogonal_perturbations: blocks when count > dim") {
  Rng rng(3);
  const int count = 50, dim = 20;
  auto rows = orthogonal_perturbations(count, dim, rng);
  REQUIRE(static_cast<int>(rows.size()) == count);
  // Brute-force Gram check inside each of the three blocks (20, 20, 10).
  for (int block = 0; block < count; block += dim) {
    const int end = std::min(count, block + dim);
    for (int a = block; a < end; ++a)
      for (int b = a + 1; b < end; ++b) {
        double dot = 0.0;
        for (int j = 0; j < dim; ++j) dot += rows[a][j] * rows[b][j];
        CHECK(std::abs(dot) <= 1e-9);
      }
  }
}

TEST_CASE("orthogonal_perturbations rejects dim 0") {
  Rng rng(4);
  CHECK_THROWS(orthogonal_perturbations(3, 0, rng));
}

TEST_CASE("es_step: constant fitness leaves params unchanged") {
  EsConfig cfg;
  cfg.num_perturbations = 16;
  cfg.rollouts_per_perturbation = 2;
  ParamVector p(10, 0.5);
  Rng rng(5);
  ParamVector out = es_step(p, [](const ParamVector&, Rng&) { return 1.0; }, cfg, rng);
  CHECK(out == p);
}

TEST_CASE("es_step: quadratic converges under the simulation preset") {
  // f(x) = -||x - x*||^2 in 20 dims starting at distance 1.
  const int dim = 20;
  ParamVector target(dim, 0.0);
  Rng init(77);
  {
    double n2 = 0.0;
    ParamVector dir(dim);
    for (auto& v : dir) {
      v = init.gaussian();
      n2 += v * v;
    }
    for (int j = 0; j < dim; ++j) target[j] = dir[j] / std::sqrt(n2);
  }
  auto fitness = [&](const ParamVector& x, Rng&) {
    double d2 = 0.0;
    for (int j = 0; j < dim; ++j) d2 += (x[j] - target[j]) * (x[j] - target[j]);
    return -d2;
  };

  EsConfig cfg = EsConfig::preset("simulation");
  ParamVector p(dim, 0.0);  // distance 1 from target
  Rng rng(123);
  for (int it = 0; it < 200; ++it) p = es_step(p, fitness, cfg, rng);
  CHECK(-fitness(p, rng) <= 1e-3);
}

TEST_CASE("es_step: single perturbation on a linear fitness moves along the gradient") {
  const int dim = 12;
  ParamVector c(dim);
  Rng crng(9);
  for (auto& v : c) v = crng.gaussian();
  auto fitness = [&](const ParamVector& x, Rng&) {
    double s = 0.0;
    for (int j = 0; j < dim; ++j) s += c[j] * x[j];
    return s;
  };
  EsConfig cfg;
  cfg.num_perturbations = 1;
  cfg.rollouts_per_perturbation = 1;
  cfg.keep_fraction = 1.0;

  int positive = 0;
  for (int seed = 0; seed < 50; ++seed) {
    Rng rng(1000 + seed);
    ParamVector p(dim, 0.0);
    ParamVector out = es_step(p, fitness, cfg, rng);
    double dot = 0.0;
    for (int j = 0; j < dim; ++j) dot += (out[j] - p[j]) * c[j];
    if (dot > 0.0) ++positive;
  }
  CHECK(positive == 50);
}

TEST_CASE("es_step: negated fitness flips the update exactly") {
  // With keep_fraction 1 the elite set is seed-determined, so negating the
  // fitness must negate the update bit-for-bit (zero base parameters).
  const int dim = 8;
  auto f = [](const ParamVector& x, Rng&) {
    double s = 0.0;
    for (size_t j = 0; j < x.size(); ++j) s += std::sin(3.0 * x[j] + j);
    return s;
  };
  auto neg = [&](const ParamVector& x, Rng& r) { return -f(x, r); };
  EsConfig cfg;
  cfg.num_perturbations = 10;
  cfg.rollouts_per_perturbation = 2;
  cfg.keep_fraction = 1.0;
  cfg.step_size = 0.05;

  ParamVector p(dim, 0.0);
  Rng r1(31), r2(31);
  ParamVector a = es_step(p, f, cfg, r1);
  ParamVector b = es_step(p, neg, cfg, r2);
  for (int j = 0; j < dim; ++j) CHECK(a[j] == -b[j]);
}

TEST_CASE("es_step: keep_fraction 1 equals vanilla antithetic ES") {
  const int dim = 6;
  ParamVector target(dim, 0.3);
  auto fitness = [&](const ParamVector& x, Rng&) {
    double d2 = 0.0;
    for (int j = 0; j < dim; ++j) d2 += (x[j] - target[j]) * (x[j] - target[j]);
    return -d2;
  };
  EsConfig cfg;
  cfg.num_perturbations = 8;
  cfg.rollouts_per_perturbation = 1;
  cfg.keep_fraction = 1.0;
  cfg.step_size = 0.01;

  ParamVector p(dim, 0.0);
  Rng rng(55);
  ParamVector out = es_step(p, fitness, cfg, rng);

  // Straight-line reference: same perturbations from an identical rng.
  Rng ref_rng(55);
  auto eps = orthogonal_perturbations(cfg.num_perturbations, dim, ref_rng);
  std::vector<double> fp(cfg.num_perturbations), fm(cfg.num_perturbations);
  for (int i = 0; i < cfg.num_perturbations; ++i) {
    ParamVector plus = p, minus = p;
    for (int j = 0; j < dim; ++j) {
      plus[j] += cfg.perturbation_std * eps[i][j];
      minus[j] -= cfg.perturbation_std * eps[i][j];
    }
    Rng dummy(0);
    fp[i] = fitness(plus, dummy);
    fm[i] = fitness(minus, dummy);
  }
  double mean = 0.0;
  for (int i = 0; i < cfg.num_perturbations; ++i) mean += fp[i] + fm[i];
  mean /= 2.0 * cfg.num_perturbations;
  double var = 0.0;
  for (int i = 0; i < cfg.num_perturbations; ++i)
    var += (fp[i] - mean) * (fp[i] - mean) + (fm[i] - mean) * (fm[i] - mean);
  var /= 2.0 * cfg.num_perturbations;
  const double stdf = std::sqrt(var);
  ParamVector ref = p;
  for (int i = 0; i < cfg.num_perturbations; ++i) {
    const double w = cfg.step_size * (fp[i] - fm[i]) / (cfg.num_perturbations * stdf);
    for (int j = 0; j < dim; ++j) ref[j] += w * eps[i][j];
  }
  for (int j = 0; j < dim; ++j) CHECK(out[j] == doctest::Approx(ref[j]).epsilon(1e-12));
}

TEST_CASE("es_step is deterministic under a fixed seed") {
  auto fitness = [](const ParamVector& x, Rng& r) {
    return -x[0] * x[0] + 0.01 * r.gaussian();
  };
  EsConfig cfg;
  cfg.num_perturbations = 6;
  cfg.rollouts_per_perturbation = 3;
  ParamVector p(4, 0.2);
  Rng a(17), b(17);
  ParamVector ra = es_step(p, fitness, cfg, a);
  ParamVector rb = es_step(p, fitness, cfg, b);
  CHECK(ra == rb);
}

TEST_CASE("RunningNormalizer: first update yields zeros") {
  RunningNormalizer n(3);
  auto out = n.normalize({5.0, -2.0, 7.5}, true);
  for (double v : out) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("RunningNormalizer: constant stream converges to zeros") {
  RunningNormalizer n(2);
  std::vector<double> obs{3.0, -1.0};
  std::vector<double> out;
  for (int i = 0; i < 100; ++i) out = n.normalize(obs, true);
  for (double v : out) CHECK(std::abs(v) <= 1e-3);
}

TEST_CASE("RunningNormalizer: known-moment stream normalizes") {
  Rng rng(21);
  RunningNormalizer n(1);
  std::vector<double> normalized;
  normalized.reserve(10000);
  for (int i = 0; i < 10000; ++i) {
    double x = 3.0 + 2.0 * rng.gaussian();
    normalized.push_back(n.normalize({x}, true)[0]);
  }
  // Skip the burn-in where statistics are still moving.
  double mean = 0.0;
  int count = 0;
  for (size_t i = 100; i < normalized.size(); ++i) {
    mean += normalized[i];
    ++count;
  }
  mean /= count;
  double var = 0.0;
  for (size_t i = 100; i < normalized.size(); ++i)
    var += (normalized[i] - mean) * (normalized[i] - mean);
  var /= count;
  CHECK(std::abs(mean) <= 0.05);
  CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("RunningNormalizer: dimension mismatch throws") {
  RunningNormalizer n(2);
  n.normalize({1.0, 2.0}, true);
  CHECK_THROWS(n.normalize({1.0, 2.0, 3.0}, true));
}

TEST_CASE("RunningNormalizer round-trips through serialization") {
  Rng rng(8);
  RunningNormalizer n(4);
  for (int i = 0; i < 57; ++i)
    n.update({rng.gaussian(), rng.uniform(), rng.gaussian(2, 3), rng.uniform(-5, 5)});
  RunningNormalizer m = RunningNormalizer::deserialize(n.serialize());
  CHECK(m.count() == n.count());
  CHECK(m.mean() == n.mean());
  CHECK(m.variance() == n.variance());
}

TEST_CASE("EsConfig presets") {
  EsConfig sim = EsConfig::preset("simulation");
  CHECK(sim.step_size == doctest::Approx(0.00375));
  CHECK(sim.num_perturbations == 200);
  CHECK(sim.rollouts_per_perturbation == 15);
  CHECK(sim.keep_fraction == doctest::Approx(0.30));

  EsConfig ad = EsConfig::preset("adapter");
  CHECK(ad.step_size == doctest::Approx(0.00125));
  CHECK(ad.num_perturbations == 5);
  CHECK(ad.rollouts_per_perturbation == 3);
  CHECK(ad.keep_fraction == doctest::Approx(0.60));

  CHECK_THROWS(EsConfig::preset("nope"));
}
