#include "ttsim/optimizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace ttsim {

void EsConfig::validate() const {
  if (num_perturbations < 1) throw std::invalid_argument("num_perturbations must be >= 1");
  if (rollouts_per_perturbation < 1) throw std::invalid_argument("rollouts_per_perturbation must be >= 1");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw std::invalid_argument("keep_fraction must be in (0,1]");
  if (!(perturbation_std > 0.0)) throw std::invalid_argument("perturbation_std must be > 0");
}

EsConfig EsConfig::preset(const std::string& name) {
  if (name == "simulation") return EsConfig{};
  if (name == "adapter") {
    EsConfig c;
    c.step_size = 0.00125;
    c.perturbation_std = 0.025;
    c.num_perturbations = 5;
    c.rollouts_per_perturbation = 3;
    c.keep_fraction = 0.60;
    c.max_env_steps = 200;
    return c;
  }
  throw std::invalid_argument("unknown ES preset: " + name);
}

std::vector<double> RunningNormalizer::variance() const {
  std::vector<double> v(mean_.size(), 0.0);
  if (count_ > 0)
    for (size_t i = 0; i < v.size(); ++i) v[i] = m2_[i] / static_cast<double>(count_);
  return v;
}

void RunningNormalizer::update(const std::vector<double>& obs) {
  if (mean_.empty()) {
    mean_.assign(obs.size(), 0.0);
    m2_.assign(obs.size(), 0.0);
  }
  if (obs.size() != mean_.size()) throw std::invalid_argument("RunningNormalizer: dimension mismatch");
  ++count_;
  for (size_t i = 0; i < obs.size(); ++i) {
    const double delta = obs[i] - mean_[i];
    mean_[i] += delta / static_cast<double>(count_);
    m2_[i] += delta * (obs[i] - mean_[i]);
  }
}

std::vector<double> RunningNormalizer::normalize(const std::vector<double>& obs, bool update_stats) {
  if (update_stats) update(obs);
  if (!mean_.empty() && obs.size() != mean_.size())
    throw std::invalid_argument("RunningNormalizer: dimension mismatch");
  std::vector<double> out(obs.size());
  for (size_t i = 0; i < obs.size(); ++i) {
    const double mean = mean_.empty() ? 0.0 : mean_[i];
    const double var = (mean_.empty() || count_ == 0) ? 0.0 : m2_[i] / static_cast<double>(count_);
    out[i] = (obs[i] - mean) / std::sqrt(var + 1e-8);
  }
  return out;
}

std::vector<double> RunningNormalizer::apply(const std::vector<double>& obs) const {
  if (!mean_.empty() && obs.size() != mean_.size())
    throw std::invalid_argument("RunningNormalizer: dimension mismatch");
  std::vector<double> out(obs.size());
  for (size_t i = 0; i < obs.size(); ++i) {
    const double mean = mean_.empty() ? 0.0 : mean_[i];
    const double var = (mean_.empty() || count_ == 0) ? 0.0 : m2_[i] / static_cast<double>(count_);
    out[i] = (obs[i] - mean) / std::sqrt(var + 1e-8);
  }
  return out;
}

std::string RunningNormalizer::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << count_ << " " << mean_.size() << "\n";
  for (double v : mean_) os << v << " ";
  os << "\n";
  for (double v : m2_) os << v << " ";
  os << "\n";
  return os.str();
}

RunningNormalizer RunningNormalizer::deserialize(const std::string& text) {
  std::istringstream is(text);
  long count = 0;
  size_t dim = 0;
  is >> count >> dim;
  RunningNormalizer n(dim);
  n.count_ = count;
  for (size_t i = 0; i < dim; ++i) is >> n.mean_[i];
  for (size_t i = 0; i < dim; ++i) is >> n.m2_[i];
  if (!is) throw std::runtime_error("RunningNormalizer: bad serialized form");
  return n;
}

std::vector<ParamVector> orthogonal_perturbations(int count, int dim, Rng& rng) {
  if (dim <= 0) throw std::invalid_argument("orthogonal_perturbations: dim must be > 0");
  std::vector<ParamVector> rows(count, ParamVector(dim, 0.0));
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < dim; ++j) rows[i][j] = rng.gaussian();

  // Gram-Schmidt within blocks of at most dim rows, then rescale every row
  // to the expected Gaussian norm E[chi_dim]. The shared row norm keeps the
  // even fitness terms identical across pairs, so elite scoring stays
  // signal-driven near an optimum.
  const double expected_norm =
      std::sqrt(2.0) * std::exp(std::lgamma(0.5 * (dim + 1)) - std::lgamma(0.5 * dim));
  for (int block = 0; block < count; block += dim) {
    const int end = std::min(count, block + dim);
    for (int i = block; i < end; ++i) {
      for (int k = block; k < i; ++k) {
        double proj = 0.0;
        for (int j = 0; j < dim; ++j) proj += rows[i][j] * rows[k][j];
        for (int j = 0; j < dim; ++j) rows[i][j] -= proj * rows[k][j];
      }
      double n2 = 0.0;
      for (int j = 0; j < dim; ++j) n2 += rows[i][j] * rows[i][j];
      double n = std::sqrt(n2);
      if (n < 1e-12) {
        // Degenerate draw; fall back to a fresh Gaussian direction.
        for (int j = 0; j < dim; ++j) rows[i][j] = rng.gaussian();
        n2 = 0.0;
        for (int j = 0; j < dim; ++j) n2 += rows[i][j] * rows[i][j];
        n = std::sqrt(n2);
      }
      for (int j = 0; j < dim; ++j) rows[i][j] /= n;
    }
    for (int i = block; i < end; ++i)
      for (int j = 0; j < dim; ++j) rows[i][j] *= expected_norm;
  }
  return rows;
}

ParamVector es_step(const ParamVector& params, const EvaluateFn& evaluate, const EsConfig& config,
                    Rng& rng, EsStepStats* stats) {
  config.validate();
  const int dim = static_cast<int>(params.size());
  const int pcount = config.num_perturbations;
  const double sigma = config.perturbation_std;

  std::vector<ParamVector> eps;
  if (config.orthogonal) {
    eps = orthogonal_perturbations(pcount, dim, rng);
  } else {
    eps.assign(pcount, ParamVector(dim, 0.0));
    for (auto& row : eps)
      for (auto& v : row) v = rng.gaussian();
  }

  // Common random numbers per (perturbation, rollout), shared across the
  // antithetic pair.
  std::vector<double> f_plus(pcount, 0.0), f_minus(pcount, 0.0);
  auto eval_index = [&](int i) {
    ParamVector plus(dim), minus(dim);
    for (int j = 0; j < dim; ++j) {
      plus[j] = params[j] + sigma * eps[i][j];
      minus[j] = params[j] - sigma * eps[i][j];
    }
    double fp = 0.0, fm = 0.0;
    for (int k = 0; k < config.rollouts_per_perturbation; ++k) {
      const std::uint64_t stream = static_cast<std::uint64_t>(i) * 1000003ULL + k;
      Rng r1 = rng.child(stream);
      Rng r2 = rng.child(stream);
      fp += evaluate(plus, r1);
      fm += evaluate(minus, r2);
    }
    f_plus[i] = fp / config.rollouts_per_perturbation;
    f_minus[i] = fm / config.rollouts_per_perturbation;
  };

  if (config.threads > 1 && pcount > 1) {
    std::vector<std::thread> pool;
    const int nthreads = std::min(config.threads, pcount);
    for (int t = 0; t < nthreads; ++t)
      pool.emplace_back([&, t]() {
        for (int i = t; i < pcount; i += nthreads) eval_index(i);
      });
    for (auto& th : pool) th.join();
  } else {
    for (int i = 0; i < pcount; ++i) eval_index(i);
  }

  double fbar = 0.0;
  for (int i = 0; i < pcount; ++i) fbar += f_plus[i] + f_minus[i];
  fbar /= 2.0 * pcount;

  // Elite filter on pairs by best-side fitness. Ranking by deviation from
  // the mean instead makes heavy-tailed failures dominate the elite set and
  // the update never follows successful directions.
  std::vector<int> order(pcount);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> score(pcount);
  for (int i = 0; i < pcount; ++i) score[i] = std::max(f_plus[i], f_minus[i]);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return score[a] > score[b]; });
  const int n_elite = std::max(1, static_cast<int>(std::ceil(config.keep_fraction * pcount)));
  order.resize(n_elite);
  // Canonical fold order regardless of ranking, so equal elite sets produce
  // bit-identical updates.
  std::sort(order.begin(), order.end());

  double mean_elite = 0.0;
  for (int i : order) mean_elite += f_plus[i] + f_minus[i];
  mean_elite /= 2.0 * n_elite;
  double var_elite = 0.0;
  for (int i : order) {
    var_elite += (f_plus[i] - mean_elite) * (f_plus[i] - mean_elite);
    var_elite += (f_minus[i] - mean_elite) * (f_minus[i] - mean_elite);
  }
  var_elite /= 2.0 * n_elite;
  const double std_f = std::sqrt(var_elite);

  if (stats) {
    stats->mean_fitness = fbar;
    double best = f_plus[0];
    for (int i = 0; i < pcount; ++i) best = std::max({best, f_plus[i], f_minus[i]});
    stats->best_fitness = best;
    stats->elite_count = n_elite;
  }

  if (std_f < 1e-12) return params;  // zero signal

  ParamVector out = params;
  const double scale = config.step_size / (n_elite * std_f);
  for (int i : order) {
    const double w = (f_plus[i] - f_minus[i]) * scale;
    for (int j = 0; j < dim; ++j) out[j] += w * eps[i][j];
  }
  return out;
}

NelderMeadResult nelder_mead(const std::function<double(const ParamVector&)>& fitness,
                             const ParamVector& start, double initial_radius,
                             double tolerance, int max_iterations) {
  const size_t dim = start.size();
  NelderMeadResult result;
  result.params = start;

  struct Vertex {
    ParamVector x;
    double f;
  };
  std::vector<Vertex> simplex;
  simplex.reserve(dim + 1);
  auto eval = [&](const ParamVector& x) {
    ++result.evaluations;
    return fitness(x);
  };
  simplex.push_back({start, eval(start)});
  for (size_t j = 0; j < dim; ++j) {
    ParamVector v = start;
    v[j] += initial_radius;
    simplex.push_back({v, eval(v)});
  }

  auto by_fitness = [](const Vertex& a, const Vertex& b) { return a.f > b.f; };
  for (int it = 0; it < max_iterations; ++it) {
    std::sort(simplex.begin(), simplex.end(), by_fitness);
    if (std::abs(simplex.front().f - simplex.back().f) < tolerance) break;

    ParamVector centroid(dim, 0.0);
    for (size_t i = 0; i < dim; ++i)
      for (size_t j = 0; j < dim; ++j) centroid[j] += simplex[i].x[j] / dim;

    Vertex& worst = simplex.back();
    auto blend = [&](double coef) {
      ParamVector x(dim);
      for (size_t j = 0; j < dim; ++j) x[j] = centroid[j] + coef * (worst.x[j] - centroid[j]);
      return x;
    };

    ParamVector refl = blend(-1.0);
    double f_refl = eval(refl);
    if (f_refl > simplex.front().f) {
      ParamVector exp = blend(-2.0);
      double f_exp = eval(exp);
      if (f_exp > f_refl)
        worst = {std::move(exp), f_exp};
      else
        worst = {std::move(refl), f_refl};
    } else if (f_refl > simplex[dim - 1].f) {
      worst = {std::move(refl), f_refl};
    } else {
      ParamVector contr = blend(0.5);
      double f_contr = eval(contr);
      if (f_contr > worst.f) {
        worst = {std::move(contr), f_contr};
      } else {
        // Shrink toward the best vertex.
        for (size_t i = 1; i <= dim; ++i) {
          for (size_t j = 0; j < dim; ++j)
            simplex[i].x[j] = simplex[0].x[j] + 0.5 * (simplex[i].x[j] - simplex[0].x[j]);
          simplex[i].f = eval(simplex[i].x);
        }
      }
    }
  }
  std::sort(simplex.begin(), simplex.end(), by_fitness);
  result.params = simplex.front().x;
  result.fitness = simplex.front().f;
  return result;
}

void TrainingCurve::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "iteration,mean_fitness,best_fitness\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", static_cast<int>(r[0]), r[1], r[2]);
    out << buf;
  }
}

void save_params(const ParamVector& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << params.size() << "\n";
  char buf[64];
  for (double v : params) {
    std::snprintf(buf, sizeof(buf), "%.17g\n", v);
    out << buf;
  }
}

ParamVector load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  size_t n = 0;
  in >> n;
  ParamVector p(n);
  for (size_t i = 0; i < n; ++i) in >> p[i];
  if (!in) throw std::runtime_error("bad parameter file: " + path);
  return p;
}

}  // namespace ttsim
