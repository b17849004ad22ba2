#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ttsim/ballistics.hpp"
#include "ttsim/rng.hpp"
#include "ttsim/vec3.hpp"

namespace ttsim {

// 6-dim key: initial ball position and velocity.
using BallKey = std::array<double, 6>;

inline BallKey ball_key(const BallState& s) {
  return {s.position.x, s.position.y, s.position.z, s.velocity.x, s.velocity.y, s.velocity.z};
}

struct SkillMetrics {
  double land_rate = 0.0;        // [0, 1]
  double hit_velocity_y = 0.0;   // median post-paddle forward speed, m/s
  Vec2 landing_mean;             // m, opponent side
  Vec2 landing_std;              // m
  int sample_count = 0;
};

// Exact nearest-neighbor table over normalized 6-dim keys. Keys are scaled
// by the corpus per-dimension standard deviation before distance
// computation; ties break toward the lower key id.
class DescriptorTable {
 public:
  DescriptorTable() = default;
  // Scales with zero variance fall back to 1.
  DescriptorTable(int skill_id, std::vector<BallKey> keys, std::vector<SkillMetrics> metrics);

  int skill_id() const { return skill_id_; }
  size_t size() const { return keys_.size(); }
  const std::vector<BallKey>& keys() const { return keys_; }
  const std::vector<SkillMetrics>& metrics() const { return metrics_; }
  const std::array<double, 6>& scales() const { return scales_; }

  // Exact k nearest neighbor ids (ascending by distance, ties by id).
  std::vector<int> nearest(const BallKey& query, int k, bool* clamped = nullptr) const;

  // Sample-count-weighted average of the k nearest neighbors' metrics.
  SkillMetrics query(const BallKey& query, int k, bool* clamped = nullptr) const;

  // Equal-weight blend of each of the k nearest neighbors with an observed
  // single throw; landing spread merges as an equal-weight mixture.
  void update_with_real(const BallKey& observed_key, const SkillMetrics& observed, int k = 25);

  int real_update_count() const { return real_updates_; }
  // Aggregate of the raw observed throws fed through update_with_real,
  // reported alongside the simulated metrics.
  SkillMetrics real_observed_mean() const;

  void save(const std::string& path) const;
  static DescriptorTable load(const std::string& path);

 private:
  struct Node {
    int begin = 0, end = 0;   // index range into order_
    int axis = -1;            // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
  };

  void build();
  double distance2(const BallKey& a, const BallKey& b) const;

  int skill_id_ = -1;
  std::vector<BallKey> keys_;
  std::vector<SkillMetrics> metrics_;
  std::array<double, 6> scales_{1, 1, 1, 1, 1, 1};
  std::vector<Node> nodes_;
  std::vector<int> order_;  // key ids, partitioned by the tree
  int real_updates_ = 0;
  SkillMetrics real_sum_;  // component-wise sums over observed throws
};

// Brute-force reference used by tests and as the oracle for index exactness.
std::vector<int> brute_force_nearest(const std::vector<BallKey>& keys,
                                     const std::array<double, 6>& scales, const BallKey& query,
                                     int k);

// One skill episode against one incoming ball, reduced to the metrics the
// table stores. Provided by the skills module (or a fake in tests).
struct EpisodeMetricsSample {
  bool hit = false;
  bool landed = false;
  double hit_velocity_y = 0.0;
  Vec2 landing;
};

class Dataset;  // dataset.hpp
struct BallStateRecord;

using EpisodeRunnerFn = std::function<EpisodeMetricsSample(const BallStateRecord&, Rng&)>;

// Runs `repetitions` noisy episodes per rally record and stores averaged
// metrics keyed by the record's 6-dim initial state. The rng stream for
// (record, rep) depends only on the base rng seed and rep_offset + rep, so
// single-repetition builds at offsets 0..9 reproduce a 10-repetition build.
// Throws when the dataset has no rally records or the skill never makes
// contact with any ball.
DescriptorTable build_descriptor(int skill_id, const Dataset& dataset,
                                 const EpisodeRunnerFn& run_episode, int repetitions, Rng& rng,
                                 int rep_offset = 0);

}  // namespace ttsim
