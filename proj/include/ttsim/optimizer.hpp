#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "ttsim/rng.hpp"

namespace ttsim {

using ParamVector = std::vector<double>;

struct EsConfig {
  double step_size = 0.00375;
  double perturbation_std = 0.025;
  int num_perturbations = 200;
  int rollouts_per_perturbation = 15;
  double keep_fraction = 0.30;
  int max_env_steps = 200;
  bool orthogonal = true;
  bool normalize_obs = true;
  int threads = 1;

  void validate() const;

  // Named presets: "simulation" (the defaults above) and "adapter"
  // (the sim-to-sim fine-tuning column).
  static EsConfig preset(const std::string& name);
};

// Welford running mean/variance per observation dimension.
class RunningNormalizer {
 public:
  RunningNormalizer() = default;
  explicit RunningNormalizer(size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

  size_t dim() const { return mean_.size(); }
  long count() const { return count_; }
  const std::vector<double>& mean() const { return mean_; }
  std::vector<double> variance() const;

  void update(const std::vector<double>& obs);

  // (obs - mean) / sqrt(var + 1e-8); folds obs into the statistics first
  // when update_stats is set.
  std::vector<double> normalize(const std::vector<double>& obs, bool update_stats);

  // Read-only normalization against the current statistics.
  std::vector<double> apply(const std::vector<double>& obs) const;

  std::string serialize() const;
  static RunningNormalizer deserialize(const std::string& text);

 private:
  long count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

// Gaussian direction matrix, rows orthogonalized within blocks of at most
// `dim` rows and rescaled to the original Gaussian row norms.
std::vector<ParamVector> orthogonal_perturbations(int count, int dim, Rng& rng);

// Fitness evaluation; the rng stream is owned by the caller of es_step and
// derived deterministically per (perturbation, rollout) so antithetic pairs
// see common random numbers.
using EvaluateFn = std::function<double(const ParamVector&, Rng&)>;

struct EsStepStats {
  double mean_fitness = 0.0;
  double best_fitness = 0.0;
  int elite_count = 0;
};

// One BGS-style update: antithetic pairs params +/- sigma*eps_i, each side
// averaged over k rollouts; pairs ranked by max(|f+ - fbar|, |f- - fbar|)
// and the top keep_fraction retained; the gradient estimate is
//   g = sum_elite (f+ - f-) * eps_i / (n_elite * std_f)
// with std_f the elite fitness standard deviation. Returns params unchanged
// when the elite fitness spread is zero.
ParamVector es_step(const ParamVector& params, const EvaluateFn& evaluate, const EsConfig& config,
                    Rng& rng, EsStepStats* stats = nullptr);

// Derivative-free local polish (standard Nelder-Mead, maximizing). Used
// after ES multi-start where tolerances demand tighter convergence than
// isotropic sampling reaches in correlated valleys.
struct NelderMeadResult {
  ParamVector params;
  double fitness = 0.0;
  int evaluations = 0;
};
NelderMeadResult nelder_mead(const std::function<double(const ParamVector&)>& fitness,
                             const ParamVector& start, double initial_radius,
                             double tolerance = 1e-10, int max_iterations = 4000);

// Training-curve row sink: (iteration, mean fitness, best fitness).
struct TrainingCurve {
  std::vector<std::array<double, 3>> rows;
  void add(int iteration, const EsStepStats& stats) {
    rows.push_back({static_cast<double>(iteration), stats.mean_fitness, stats.best_fitness});
  }
  void write_csv(const std::string& path) const;
};

// Flat parameter persistence: dimension header then one value per line.
void save_params(const ParamVector& params, const std::string& path);
ParamVector load_params(const std::string& path);

}  // namespace ttsim
