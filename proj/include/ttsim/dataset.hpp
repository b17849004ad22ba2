#pragma once

#include <array>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ttsim/ballistics.hpp"
#include "ttsim/optimizer.hpp"
#include "ttsim/rng.hpp"

namespace ttsim {

enum class Outcome { Unknown, Return, Hit, Miss };

const char* outcome_name(Outcome o);
Outcome outcome_from_name(const std::string& s);

struct BallStateRecord {
  long id = -1;
  BallState initial;
  bool is_serve = false;
  Outcome outcome = Outcome::Unknown;
  CategoryMask categories = 0;  // recomputed from initial
  StyleSide style_side = StyleSide::Center;
  int cycle = 0;
  bool reflected = false;
  double weight = 1.0;  // within-category sampling weight
};

// Mirror across the table's long axis: x and vx negate, spin.y/.z negate
// (axial vector), spin.x is preserved; Forehand and Backhand swap.
BallStateRecord mirror_record(const BallStateRecord& rec);

struct CategoryStats {
  long returns = 0;
  long attempts = 0;
  // Empty categories fall back to the uniform prior 0.5.
  double return_rate() const {
    return attempts > 0 ? static_cast<double>(returns) / attempts : 0.5;
  }
};

class Dataset {
 public:
  // Assigns an id when rec.id < 0 and recomputes the category mask.
  long add(BallStateRecord rec);
  size_t size() const { return records_.size(); }
  const std::vector<BallStateRecord>& records() const { return records_; }
  const BallStateRecord* find(long id) const;

  // Sets the outcome (replacing any previous contribution to the
  // accumulators) and optionally overweights non-returned balls for
  // subsequent sampling.
  void record_outcome(long id, Outcome outcome, double overweight = 1.0);

  const std::array<CategoryStats, kNumCategories>& category_stats() const { return stats_; }
  std::array<CategoryStats, kNumCategories> recount_category_stats() const;

  long rally_count() const;
  long serve_count() const;

  void save(const std::string& path) const;
  static Dataset load(const std::string& path);

 private:
  std::vector<BallStateRecord> records_;
  std::unordered_map<long, size_t> index_;
  std::array<CategoryStats, kNumCategories> stats_{};
  long next_id_ = 0;
};

// Appends a mirrored copy of every rally record; serve records are carried
// through unreflected.
Dataset reflect_y(const Dataset& dataset);

struct ObservedTrajectory {
  std::vector<double> t;   // strictly increasing, nominal 125 Hz
  std::vector<Vec3> position;
  std::string source;
};

ObservedTrajectory load_raw_trajectory(const std::string& path);

struct SegmentationConfig {
  double hit_reversal_threshold = 2.0;  // m/s change across the hit
  int velocity_window = 3;              // finite-difference span in samples
  int min_samples = 8;
  double min_segment_speed = 0.5;       // m/s, filters stuck-ball segments
};

// Splits at y-velocity sign reversals exceeding the threshold; each segment
// starts at the hit sample. Streams shorter than min_samples produce an
// empty result with *too_short set.
std::vector<ObservedTrajectory> segment_trajectories(const ObservedTrajectory& stream,
                                                     const SegmentationConfig& cfg,
                                                     bool* too_short = nullptr);

struct FitConfig {
  int restarts = 4;
  int iterations_per_stage = 25;
  std::vector<double> sigma_stages{0.8, 0.25, 0.08, 0.025, 0.008};
  int perturbations = 16;
  // The fitness-std normalization keeps parameter displacement near
  // step_size per iteration, so the step anneals with sigma.
  double step_sigma_ratio = 0.5;
  int polish_iterations = 3000;
  double residual_ceiling = 0.05;  // m RMSE
  // Parameter scaling for the 9-dim search.
  double position_scale = 0.05;  // m
  double velocity_scale = 0.5;   // m/s
  double spin_scale = 40.0;      // rad/s
  std::array<double, 3> spin_starts{0.0, 60.0, -60.0};  // spin.x multi-start seeds
};

struct FitResult {
  BallState state;
  double residual = 0.0;  // RMSE in meters
  bool converged = false;
};

// Recovers the 9-dim initial state whose simulated trajectory best matches
// the observed positions (least squares), via multi-start annealed ES seeded
// from finite-difference estimates. Requires >= 10 samples spanning >= 0.1 s.
FitResult fit_initial_state(const ObservedTrajectory& traj, const PhysicsEnv& env,
                            const FitConfig& cfg, Rng& rng);

struct SampleConfig {
  double position_sigma = 0.005;  // m
  double velocity_sigma = 0.05;   // m/s
  double spin_sigma = 2.0;        // rad/s
  double rate_floor = 0.05;       // category weight = 1 / max(return_rate, rate_floor)
  int max_attempts = 100;
  bool include_serves = false;
};

// Category-weighted draw with per-component perturbation and trajectory
// validation (net crossing toward the robot plus an in-bounds bounce;
// serve-sourced draws must bounce the opponent side first). Throws
// std::runtime_error after max_attempts validation failures.
BallState sample_initial_state(const Dataset& dataset, Rng& rng, double perturbation_scale,
                               const SampleConfig& cfg, const PhysicsEnv& env,
                               const BallStateRecord** source = nullptr);

// True when the trajectory from `state` is a legal incoming ball.
bool validate_incoming_trajectory(const BallState& state, bool is_serve, const PhysicsEnv& env);

// Table-1-style per-cycle category counts (rows: dataset type x cycle plus
// Final and Final+reflection).
void write_dataset_stats_csv(const Dataset& dataset, const std::string& path);

}  // namespace ttsim
