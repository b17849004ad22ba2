#include "ttsim/descriptors.hpp"
#include "ttsim/dataset.hpp"


#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace ttsim {

DescriptorTable::DescriptorTable(int skill_id, std::vector<BallKey> keys,
                                 std::vector<SkillMetrics> metrics)
    : skill_id_(skill_id), keys_(std::move(keys)), metrics_(std::move(metrics)) {
  if (keys_.size() != metrics_.size())
    throw std::invalid_argument("DescriptorTable: keys/metrics size mismatch");
  if (keys_.empty()) throw std::invalid_argument("DescriptorTable: empty table");

  for (int d = 0; d < 6; ++d) {
    double mean = 0.0;
    for (const auto& k : keys_) mean += k[d];
    mean /= keys_.size();
    double var = 0.0;
    for (const auto& k : keys_) var += (k[d] - mean) * (k[d] - mean);
    var /= keys_.size();
    scales_[d] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  build();
}

void DescriptorTable::build() {
  order_.resize(keys_.size());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.clear();
  nodes_.reserve(2 * keys_.size() / 8 + 8);

  struct Item {
    int node;
    int begin, end;
    int depth;
  };
  nodes_.push_back({});
  std::vector<Item> stack{{0, 0, static_cast<int>(keys_.size()), 0}};
  constexpr int kLeafSize = 16;

  while (!stack.empty()) {
    auto [node, begin, end, depth] = stack.back();
    stack.pop_back();
    nodes_[node].begin = begin;
    nodes_[node].end = end;
    if (end - begin <= kLeafSize) continue;

    // Split on the widest normalized dimension of this subset.
    int axis = 0;
    double best_spread = -1.0;
    for (int d = 0; d < 6; ++d) {
      double lo = 1e300, hi = -1e300;
      for (int i = begin; i < end; ++i) {
        const double v = keys_[order_[i]][d] / scales_[d];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        axis = d;
      }
    }
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return keys_[a][axis] < keys_[b][axis]; });
    nodes_[node].axis = axis;
    nodes_[node].split = keys_[order_[mid]][axis];

    nodes_[node].left = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    nodes_[node].right = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    stack.push_back({nodes_[node].left, begin, mid, depth + 1});
    stack.push_back({nodes_[node].right, mid, end, depth + 1});
  }
}

double DescriptorTable::distance2(const BallKey& a, const BallKey& b) const {
  double d2 = 0.0;
  for (int d = 0; d < 6; ++d) {
    const double delta = (a[d] - b[d]) / scales_[d];
    d2 += delta * delta;
  }
  return d2;
}

std::vector<int> DescriptorTable::nearest(const BallKey& query, int k, bool* clamped) const {
  if (k < 1) throw std::invalid_argument("DescriptorTable::nearest: k must be >= 1");
  if (clamped) *clamped = false;
  if (k > static_cast<int>(keys_.size())) {
    if (clamped) *clamped = true;
    k = static_cast<int>(keys_.size());
  }

  // Max-heap of (distance2, id); ties prefer the lower id, so the heap
  // keeps (d2, id) lexicographically smallest k pairs.
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry> heap;

  auto consider = [&](int id) {
    const double d2 = distance2(keys_[id], query);
    Entry e{d2, id};
    if (static_cast<int>(heap.size()) < k) {
      heap.push(e);
    } else if (e < heap.top()) {
      heap.pop();
      heap.push(e);
    }
  };

  // Depth-first with plane-distance pruning.
  struct Frame {
    int node;
    double plane_d2;  // accumulated squared distance to this subtree's region
  };
  std::vector<Frame> stack{{0, 0.0}};
  while (!stack.empty()) {
    auto [node_id, plane_d2] = stack.back();
    stack.pop_back();
    if (static_cast<int>(heap.size()) == k && plane_d2 > heap.top().first) continue;
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) consider(order_[i]);
      continue;
    }
    const double diff = (query[node.axis] - node.split) / scales_[node.axis];
    const int near_child = diff < 0.0 ? node.left : node.right;
    const int far_child = diff < 0.0 ? node.right : node.left;
    // Far side first on the stack so the near side is explored first.
    stack.push_back({far_child, diff * diff});
    stack.push_back({near_child, plane_d2});
  }

  std::vector<Entry> out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  std::sort(out.begin(), out.end());
  std::vector<int> ids(out.size());
  for (size_t i = 0; i < out.size(); ++i) ids[i] = out[i].second;
  return ids;
}

SkillMetrics DescriptorTable::query(const BallKey& q, int k, bool* clamped) const {
  std::vector<int> ids = nearest(q, k, clamped);
  SkillMetrics out;
  double total_w = 0.0;
  for (int id : ids) {
    const SkillMetrics& m = metrics_[id];
    const double w = std::max(1, m.sample_count);
    out.land_rate += w * m.land_rate;
    out.hit_velocity_y += w * m.hit_velocity_y;
    out.landing_mean.x += w * m.landing_mean.x;
    out.landing_mean.y += w * m.landing_mean.y;
    out.landing_std.x += w * m.landing_std.x;
    out.landing_std.y += w * m.landing_std.y;
    out.sample_count += m.sample_count;
    total_w += w;
  }
  out.land_rate /= total_w;
  out.hit_velocity_y /= total_w;
  out.landing_mean.x /= total_w;
  out.landing_mean.y /= total_w;
  out.landing_std.x /= total_w;
  out.landing_std.y /= total_w;
  return out;
}

void DescriptorTable::update_with_real(const BallKey& observed_key, const SkillMetrics& observed,
                                       int k) {
  std::vector<int> ids = nearest(observed_key, k);
  for (int id : ids) {
    SkillMetrics& m = metrics_[id];
    const double mean_x = 0.5 * (m.landing_mean.x + observed.landing_mean.x);
    const double mean_y = 0.5 * (m.landing_mean.y + observed.landing_mean.y);
    // Equal-weight mixture variance: E[var] + Var[mean].
    auto mix_std = [](double s1, double m1, double s2, double m2, double mixed_mean) {
      const double var = 0.5 * (s1 * s1 + m1 * m1 + s2 * s2 + m2 * m2) - mixed_mean * mixed_mean;
      return std::sqrt(std::max(0.0, var));
    };
    m.landing_std.x =
        mix_std(m.landing_std.x, m.landing_mean.x, observed.landing_std.x, observed.landing_mean.x, mean_x);
    m.landing_std.y =
        mix_std(m.landing_std.y, m.landing_mean.y, observed.landing_std.y, observed.landing_mean.y, mean_y);
    m.landing_mean = {mean_x, mean_y};
    m.land_rate = std::clamp(0.5 * (m.land_rate + observed.land_rate), 0.0, 1.0);
    m.hit_velocity_y = 0.5 * (m.hit_velocity_y + observed.hit_velocity_y);
  }
  ++real_updates_;
  real_sum_.land_rate += observed.land_rate;
  real_sum_.hit_velocity_y += observed.hit_velocity_y;
  real_sum_.landing_mean.x += observed.landing_mean.x;
  real_sum_.landing_mean.y += observed.landing_mean.y;
  real_sum_.sample_count += observed.sample_count;
}

SkillMetrics DescriptorTable::real_observed_mean() const {
  SkillMetrics out;
  if (real_updates_ == 0) return out;
  const double n = real_updates_;
  out.land_rate = real_sum_.land_rate / n;
  out.hit_velocity_y = real_sum_.hit_velocity_y / n;
  out.landing_mean = {real_sum_.landing_mean.x / n, real_sum_.landing_mean.y / n};
  out.sample_count = real_sum_.sample_count;
  return out;
}

void DescriptorTable::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  char buf[512];
  std::snprintf(buf, sizeof(buf), "skill %d count %zu updates %d real %.17g %.17g %.17g %.17g %d\n",
                skill_id_, keys_.size(), real_updates_, real_sum_.land_rate,
                real_sum_.hit_velocity_y, real_sum_.landing_mean.x, real_sum_.landing_mean.y,
                real_sum_.sample_count);
  out << buf;
  std::snprintf(buf, sizeof(buf), "scales %.17g %.17g %.17g %.17g %.17g %.17g\n", scales_[0],
                scales_[1], scales_[2], scales_[3], scales_[4], scales_[5]);
  out << buf;
  for (size_t i = 0; i < keys_.size(); ++i) {
    const auto& k = keys_[i];
    const auto& m = metrics_[i];
    std::snprintf(buf, sizeof(buf),
                  "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %d\n",
                  k[0], k[1], k[2], k[3], k[4], k[5], m.land_rate, m.hit_velocity_y,
                  m.landing_mean.x, m.landing_mean.y, m.landing_std.x, m.landing_std.y,
                  m.sample_count);
    out << buf;
  }
}

DescriptorTable DescriptorTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string word;
  int skill_id = -1, updates = 0;
  size_t count = 0;
  SkillMetrics real_sum;
  in >> word >> skill_id >> word >> count >> word >> updates;
  in >> word >> real_sum.land_rate >> real_sum.hit_velocity_y >> real_sum.landing_mean.x >>
      real_sum.landing_mean.y >> real_sum.sample_count;
  std::array<double, 6> scales;
  in >> word;
  for (auto& s : scales) in >> s;
  std::vector<BallKey> keys(count);
  std::vector<SkillMetrics> metrics(count);
  for (size_t i = 0; i < count; ++i) {
    for (auto& v : keys[i]) in >> v;
    in >> metrics[i].land_rate >> metrics[i].hit_velocity_y >> metrics[i].landing_mean.x >>
        metrics[i].landing_mean.y >> metrics[i].landing_std.x >> metrics[i].landing_std.y >>
        metrics[i].sample_count;
  }
  if (!in) throw std::runtime_error("bad descriptor file: " + path);
  DescriptorTable t(skill_id, std::move(keys), std::move(metrics));
  t.real_updates_ = updates;
  t.real_sum_ = real_sum;
  return t;
}

DescriptorTable build_descriptor(int skill_id, const Dataset& dataset,
                                 const EpisodeRunnerFn& run_episode, int repetitions, Rng& rng,
                                 int rep_offset) {
  if (repetitions < 1) throw std::invalid_argument("build_descriptor: repetitions must be >= 1");
  std::vector<BallKey> keys;
  std::vector<SkillMetrics> metrics;
  bool any_hit = false;

  for (const auto& rec : dataset.records()) {
    if (rec.is_serve) continue;
    SkillMetrics m;
    m.sample_count = repetitions;
    std::vector<double> hit_vels;
    std::vector<Vec2> landings;
    for (int rep = 0; rep < repetitions; ++rep) {
      Rng episode_rng =
          rng.child(static_cast<std::uint64_t>(rec.id) * 7919ULL + (rep_offset + rep));
      EpisodeMetricsSample s = run_episode(rec, episode_rng);
      if (s.hit) {
        any_hit = true;
        hit_vels.push_back(s.hit_velocity_y);
      }
      if (s.landed) {
        m.land_rate += 1.0;
        landings.push_back(s.landing);
      }
    }
    m.land_rate /= repetitions;
    if (!hit_vels.empty()) {
      std::sort(hit_vels.begin(), hit_vels.end());
      const size_t n = hit_vels.size();
      m.hit_velocity_y = n % 2 ? hit_vels[n / 2] : 0.5 * (hit_vels[n / 2 - 1] + hit_vels[n / 2]);
    }
    if (!landings.empty()) {
      for (const auto& l : landings) {
        m.landing_mean.x += l.x;
        m.landing_mean.y += l.y;
      }
      m.landing_mean.x /= landings.size();
      m.landing_mean.y /= landings.size();
      for (const auto& l : landings) {
        m.landing_std.x += (l.x - m.landing_mean.x) * (l.x - m.landing_mean.x);
        m.landing_std.y += (l.y - m.landing_mean.y) * (l.y - m.landing_mean.y);
      }
      m.landing_std.x = std::sqrt(m.landing_std.x / landings.size());
      m.landing_std.y = std::sqrt(m.landing_std.y / landings.size());
    }
    keys.push_back(ball_key(rec.initial));
    metrics.push_back(m);
  }

  if (keys.empty()) throw std::runtime_error("build_descriptor: no rally records");
  if (!any_hit) throw std::runtime_error("build_descriptor: skill never reached any ball");
  return DescriptorTable(skill_id, std::move(keys), std::move(metrics));
}

std::vector<int> brute_force_nearest(const std::vector<BallKey>& keys,
                                     const std::array<double, 6>& scales, const BallKey& query,
                                     int k) {
  std::vector<std::pair<double, int>> all(keys.size());
  for (size_t i = 0; i < keys.size(); ++i) {
    double d2 = 0.0;
    for (int d = 0; d < 6; ++d) {
      const double delta = (keys[i][d] - query[d]) / scales[d];
      d2 += delta * delta;
    }
    all[i] = {d2, static_cast<int>(i)};
  }
  k = std::min<int>(k, static_cast<int>(all.size()));
  std::partial_sort(all.begin(), all.begin() + k, all.end());
  std::vector<int> ids(k);
  for (int i = 0; i < k; ++i) ids[i] = all[i].second;
  return ids;
}

}  // namespace ttsim
