#include "ttsim/hlc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ttsim {

void OpponentStats::record(StyleSide landing_side, bool opponent_returned) {
  ++total.attempts;
  if (opponent_returned) ++total.returns;
  auto& side = by_side[static_cast<int>(landing_side)];
  ++side.attempts;
  if (opponent_returned) ++side.returns;
}

PreferenceState PreferenceState::make(size_t num_skills, double alpha) {
  PreferenceState p;
  p.h.assign(num_skills, 0.0);
  p.baseline_h.assign(num_skills, 0.0);
  p.action_counts.assign(num_skills, 0);
  p.step_size = alpha;
  return p;
}

void PreferenceState::reset_to_baseline() {
  h = baseline_h;
  std::fill(action_counts.begin(), action_counts.end(), 0L);
  avg_reward = 0.0;
  timestep = 0;
}

int sample_index(const std::vector<double>& probabilities, Rng& rng) {
  double pick = rng.uniform();
  for (size_t i = 0; i < probabilities.size(); ++i) {
    pick -= probabilities[i];
    if (pick <= 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(probabilities.size()) - 1;
}

std::vector<double> softmax(const std::vector<double>& h) {
  std::vector<double> p(h.size());
  double max_h = -1e300;
  for (double v : h) max_h = std::max(max_h, v);
  double sum = 0.0;
  for (size_t i = 0; i < h.size(); ++i) {
    p[i] = std::exp(h[i] - max_h);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

void update_preferences(const std::vector<ShotRecord>& batch, PreferenceState& prefs,
                        const PreferenceUpdateOptions& options) {
  if (prefs.step_size <= 0.0) throw std::invalid_argument("update_preferences: alpha must be > 0");
  const size_t n = prefs.h.size();

  // Selection probabilities computed once per batch; the mask accumulates
  // across shots (pseudocode semantics preserved deliberately).
  std::vector<double> p = softmax(prefs.h);
  std::vector<double> z(n, 0.0);

  for (const ShotRecord& shot : batch) {
    if (shot.skill_id < 0 || shot.skill_id >= static_cast<int>(n))
      throw std::invalid_argument("update_preferences: unknown skill id");
    if (options.refresh_per_shot) {
      p = softmax(prefs.h);
      std::fill(z.begin(), z.end(), 0.0);
    }
    prefs.timestep += 1;
    prefs.action_counts[shot.skill_id] += 1;
    prefs.avg_reward += (shot.reward - prefs.avg_reward) / static_cast<double>(prefs.timestep);
    z[shot.skill_id] = 1.0;
    const double scale = prefs.step_size * (shot.reward - prefs.avg_reward);
    for (size_t i = 0; i < n; ++i) prefs.h[i] += scale * (z[i] - p[i]);
  }
}

// ---------------------------------------------------------------------------
// Spin features and classifier

std::vector<double> extract_spin_features(const std::vector<PaddleBallFrame>& history) {
  const int n = static_cast<int>(history.size());
  if (n < 6) throw std::invalid_argument("extract_spin_features: need >= 6 frames");
  std::vector<double> out;
  out.reserve(kSpinFeatureDim);
  // Three timestamps preceding the hit, oldest first; each looks back 3.
  for (int t = n - 3; t < n; ++t) {
    const auto& cur = history[t];
    const auto& back = history[t - 3];
    out.push_back(cur.paddle_position.z - back.paddle_position.z);
    out.push_back(cur.paddle_normal.x - back.paddle_normal.x);
    out.push_back(cur.paddle_normal.y - back.paddle_normal.y);
    out.push_back(cur.paddle_normal.z - back.paddle_normal.z);
    out.push_back(cur.paddle_position.z - cur.ball_position.z);
    out.push_back((cur.paddle_position - cur.ball_position).norm());
  }
  return out;
}

namespace {
constexpr int kH1 = 128;
constexpr int kH2 = 64;
constexpr int kW1 = kH1 * kSpinFeatureDim;
constexpr int kB1 = kH1;
constexpr int kW2 = kH2 * kH1;
constexpr int kB2 = kH2;
constexpr int kW3 = 2 * kH2;
constexpr int kB3 = 2;

struct MlpActivations {
  std::array<double, kH1> h1;
  std::array<double, kH2> h2;
  std::array<double, 2> logits;
  std::array<double, 2> probs;
};

void mlp_forward(const ParamVector& w, const std::vector<double>& x, MlpActivations* act) {
  const double* W1 = w.data();
  const double* b1 = W1 + kW1;
  const double* W2 = b1 + kB1;
  const double* b2 = W2 + kW2;
  const double* W3 = b2 + kB2;
  const double* b3 = W3 + kW3;
  for (int i = 0; i < kH1; ++i) {
    double s = b1[i];
    for (int j = 0; j < kSpinFeatureDim; ++j) s += W1[i * kSpinFeatureDim + j] * x[j];
    act->h1[i] = s > 0 ? s : 0.0;
  }
  for (int i = 0; i < kH2; ++i) {
    double s = b2[i];
    for (int j = 0; j < kH1; ++j) s += W2[i * kH1 + j] * act->h1[j];
    act->h2[i] = s > 0 ? s : 0.0;
  }
  for (int i = 0; i < 2; ++i) {
    double s = b3[i];
    for (int j = 0; j < kH2; ++j) s += W3[i * kH2 + j] * act->h2[j];
    act->logits[i] = s;
  }
  const double m = std::max(act->logits[0], act->logits[1]);
  const double e0 = std::exp(act->logits[0] - m), e1 = std::exp(act->logits[1] - m);
  act->probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
}

}  // namespace

int SpinClassifier::param_count() { return kW1 + kB1 + kW2 + kB2 + kW3 + kB3; }

SpinClassifier::SpinClassifier() {
  params_.resize(param_count());
  Rng rng(0xC1A551F1ULL);
  auto he = [&](double* p, int count, int fan_in) {
    const double s = std::sqrt(2.0 / fan_in);
    for (int i = 0; i < count; ++i) p[i] = s * rng.gaussian();
  };
  double* p = params_.data();
  he(p, kW1, kSpinFeatureDim);
  std::fill(p + kW1, p + kW1 + kB1, 0.0);
  he(p + kW1 + kB1, kW2, kH1);
  std::fill(p + kW1 + kB1 + kW2, p + kW1 + kB1 + kW2 + kB2, 0.0);
  he(p + kW1 + kB1 + kW2 + kB2, kW3, kH2);
  std::fill(params_.end() - 2, params_.end(), 0.0);
}

std::array<double, 2> SpinClassifier::predict_proba(const std::vector<double>& features) const {
  if (static_cast<int>(features.size()) != kSpinFeatureDim)
    throw std::invalid_argument("SpinClassifier: feature dimension mismatch");
  MlpActivations act;
  mlp_forward(params_, features, &act);
  return act.probs;
}

SpinClass SpinClassifier::raw_predict(const std::vector<double>& features) const {
  auto p = predict_proba(features);
  return p[1] > p[0] ? SpinClass::Underspin : SpinClass::Topspin;
}

SpinClass SpinClassifier::classify(const std::vector<double>& features) {
  history_.push_back(raw_predict(features));
  while (history_.size() > 5) history_.pop_front();
  if (history_.size() < 5) return SpinClass::Topspin;
  int under = 0;
  for (SpinClass c : history_)
    if (c == SpinClass::Underspin) ++under;
  return under >= 4 ? SpinClass::Underspin : SpinClass::Topspin;
}

void SpinClassifier::save(const std::string& path) const { save_params(params_, path); }

SpinClassifier SpinClassifier::load(const std::string& path) {
  SpinClassifier c;
  ParamVector p = load_params(path);
  if (p.size() != c.params_.size()) throw std::runtime_error("bad spin classifier file: " + path);
  c.params_ = std::move(p);
  return c;
}

SpinTrainReport train_spin_classifier(std::vector<SpinSample> corpus, SpinClassifier& classifier,
                                      Rng& rng, int epochs) {
  int under = 0;
  for (const auto& s : corpus)
    if (s.label == SpinClass::Underspin) ++under;
  if (under == 0 || under == static_cast<int>(corpus.size()))
    throw std::invalid_argument("train_spin_classifier: single-class corpus");

  // Deterministic shuffle then an 80/20 split.
  for (size_t i = corpus.size(); i > 1; --i)
    std::swap(corpus[i - 1], corpus[rng.uniform_int(static_cast<int>(i))]);
  const size_t holdout = std::max<size_t>(1, corpus.size() / 5);
  const size_t train_n = corpus.size() - holdout;

  ParamVector& w = classifier.params();
  ParamVector vel(w.size(), 0.0);
  ParamVector grad(w.size(), 0.0);
  const double lr = 0.01, momentum = 0.9;
  const int batch = 32;

  std::vector<size_t> order(train_n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (size_t i = train_n; i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(static_cast<int>(i))]);
    for (size_t start = 0; start < train_n; start += batch) {
      const size_t end = std::min(train_n, start + batch);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (size_t k = start; k < end; ++k) {
        const SpinSample& s = corpus[order[k]];
        MlpActivations act;
        mlp_forward(w, s.features, &act);
        const int y = s.label == SpinClass::Underspin ? 1 : 0;
        std::array<double, 2> dlogits{act.probs[0], act.probs[1]};
        dlogits[y] -= 1.0;

        double* gW1 = grad.data();
        double* gb1 = gW1 + kW1;
        double* gW2 = gb1 + kB1;
        double* gb2 = gW2 + kW2;
        double* gW3 = gb2 + kB2;
        double* gb3 = gW3 + kW3;
        const double* W2 = w.data() + kW1 + kB1;
        const double* W3 = w.data() + kW1 + kB1 + kW2 + kB2;

        std::array<double, kH2> dh2{};
        for (int i = 0; i < 2; ++i) {
          gb3[i] += dlogits[i];
          for (int j = 0; j < kH2; ++j) {
            gW3[i * kH2 + j] += dlogits[i] * act.h2[j];
            dh2[j] += dlogits[i] * W3[i * kH2 + j];
          }
        }
        std::array<double, kH1> dh1{};
        for (int i = 0; i < kH2; ++i) {
          if (act.h2[i] <= 0) continue;
          gb2[i] += dh2[i];
          for (int j = 0; j < kH1; ++j) {
            gW2[i * kH1 + j] += dh2[i] * act.h1[j];
            dh1[j] += dh2[i] * W2[i * kH1 + j];
          }
        }
        for (int i = 0; i < kH1; ++i) {
          if (act.h1[i] <= 0) continue;
          gb1[i] += dh1[i];
          for (int j = 0; j < kSpinFeatureDim; ++j)
            gW1[i * kSpinFeatureDim + j] += dh1[i] * s.features[j];
        }
      }
      const double scale = lr / static_cast<double>(end - start);
      for (size_t i = 0; i < w.size(); ++i) {
        vel[i] = momentum * vel[i] - scale * grad[i];
        w[i] += vel[i];
      }
    }
  }

  SpinTrainReport report;
  report.train_count = static_cast<int>(train_n);
  report.holdout_count = static_cast<int>(holdout);
  int correct = 0, tp = 0, fp = 0, fn = 0;
  for (size_t k = train_n; k < corpus.size(); ++k) {
    const SpinSample& s = corpus[k];
    const SpinClass pred = classifier.raw_predict(s.features);
    if (pred == s.label) ++correct;
    if (pred == SpinClass::Underspin && s.label == SpinClass::Underspin) ++tp;
    if (pred == SpinClass::Underspin && s.label == SpinClass::Topspin) ++fp;
    if (pred == SpinClass::Topspin && s.label == SpinClass::Underspin) ++fn;
  }
  report.holdout_accuracy = static_cast<double>(correct) / holdout;
  report.underspin_precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  report.underspin_recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  return report;
}

std::vector<SpinSample> synthesize_spin_corpus(int serves, Rng& rng, double noise) {
  std::vector<SpinSample> corpus;
  const double dt = 1.0 / 125.0;
  const int frames = 20;
  for (int s = 0; s < serves; ++s) {
    const bool underspin = rng.uniform() < 0.4;
    // Ball hangs at the top of the toss, drifting down toward contact.
    Vec3 ball{rng.uniform(-0.3, 0.3), rng.uniform(1.6, 1.9), rng.uniform(0.35, 0.55)};
    const double swing = rng.uniform(0.8, 1.4);  // m of paddle travel

    std::vector<PaddleBallFrame> track;
    for (int f = 0; f < frames; ++f) {
      const double u = static_cast<double>(f) / (frames - 1);  // 0..1, 1 = contact
      PaddleBallFrame frame;
      frame.t = f * dt;
      frame.ball_position = ball + Vec3{0, 0, -0.25 * u * u};
      if (underspin) {
        // Chop: the paddle comes from above, the face opens through the swing.
        frame.paddle_position =
            frame.ball_position + Vec3{0, 0.30 * (1.0 - u), 0.45 * (1.0 - u) + 0.02};
        const double pitch = 0.25 + 0.55 * u;
        frame.paddle_normal = Vec3{0, -std::cos(pitch), std::sin(pitch)}.normalized();
      } else {
        // Brush up and forward: the paddle rises from below, face closing.
        frame.paddle_position =
            frame.ball_position + Vec3{0, 0.30 * (1.0 - u), -0.40 * (1.0 - u) - 0.02};
        const double pitch = 0.15 - 0.30 * u;
        frame.paddle_normal = Vec3{0, -std::cos(pitch), std::sin(pitch)}.normalized();
      }
      (void)swing;
      frame.paddle_position += Vec3{rng.gaussian() * noise, rng.gaussian() * noise,
                                    rng.gaussian() * noise};
      frame.ball_position += Vec3{rng.gaussian() * noise, rng.gaussian() * noise,
                                  rng.gaussian() * noise};
      track.push_back(frame);
    }

    // The actual hit plus every timestamp within the 100 ms window before it.
    const int window = static_cast<int>(0.1 * 125.0);
    for (int back = 0; back <= window; ++back) {
      const int end = frames - back;
      if (end < 6) break;
      std::vector<PaddleBallFrame> hist(track.begin(), track.begin() + end);
      SpinSample sample;
      sample.features = extract_spin_features(hist);
      sample.label = underspin ? SpinClass::Underspin : SpinClass::Topspin;
      corpus.push_back(std::move(sample));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Style selector

StyleSide StyleSelector::select(const std::vector<double>& obs_flat, double intercept_x) const {
  if (!net_) return intercept_x > 0.0 ? StyleSide::Forehand : StyleSide::Backhand;
  std::vector<double> feats(obs_flat.end() - kObsFeatures, obs_flat.end());
  std::vector<double> logits = net_->forward(obs_flat, feats);
  return logits[0] >= logits[1] ? StyleSide::Forehand : StyleSide::Backhand;
}

void StyleSelector::save(const std::string& path) const {
  if (!net_) throw std::runtime_error("StyleSelector::save: untrained selector");
  save_policy(*net_, path);
}

StyleSelector StyleSelector::load(const std::string& path) {
  return StyleSelector(load_policy(path));
}

StyleSelector train_style_selector(const Dataset& dataset, const Skill& fh_generalist,
                                   const Skill& bh_generalist, const EsConfig& es_cfg, Rng& rng,
                                   const PhysicsEnv& env, const RobotParams& robot,
                                   const StyleTrainOptions& opts, TrainingCurve* curve) {
  if (dataset.size() == 0) throw std::runtime_error("train_style_selector: empty dataset");
  PolicyNet net = PolicyNet::zero();
  net.pursuit_prior = false;

  SampleConfig sample_cfg;
  auto rollout = [&](const PolicyNet& candidate, Rng& r) {
    double total = 0.0;
    for (int b = 0; b < opts.balls_per_rollout; ++b) {
      BallState ball =
          sample_initial_state(dataset, r, opts.perturbation_scale, sample_cfg, env);
      ObsStack obs;
      PaddleState paddle;
      paddle.position = robot.home_position;
      paddle.normal = {0, 1, 0};
      obs.push(ball, paddle, StyleSide::Center);
      std::vector<double> feats = obs.last_tick_features();
      std::vector<double> logits = candidate.forward(obs.flat(), feats);
      const bool forehand = logits[0] >= logits[1];
      const Skill& skill = forehand ? fh_generalist : bh_generalist;
      Rng erng = r.child(0xB411ULL + b);
      EpisodeResult res = run_skill_episode(skill, ball, env, robot, erng);
      total += res.landed ? 1.0 : 0.0;
    }
    return total / opts.balls_per_rollout;
  };

  for (int it = 0; it < opts.iterations; ++it) {
    // Fold observation statistics from sampled decision states.
    Rng obs_rng = rng.child(0x0B5000ULL + it);
    for (int b = 0; b < 4; ++b) {
      BallState ball =
          sample_initial_state(dataset, obs_rng, opts.perturbation_scale, sample_cfg, env);
      ObsStack obs;
      PaddleState paddle;
      paddle.position = robot.home_position;
      paddle.normal = {0, 1, 0};
      obs.push(ball, paddle, StyleSide::Center);
      net.normalizer.update(obs.flat());
    }
    const RunningNormalizer frozen = net.normalizer;
    auto evaluate = [&](const ParamVector& p, Rng& r) {
      PolicyNet cand = net;
      cand.params = p;
      cand.normalizer = frozen;
      return rollout(cand, r);
    };
    EsStepStats stats;
    Rng step_rng = rng.child(0x57717E00ULL + it);
    net.params = es_step(net.params, evaluate, es_cfg, step_rng, &stats);
    if (curve) curve->add(it, stats);
  }
  return StyleSelector(std::move(net));
}

// ---------------------------------------------------------------------------
// Strategies

StrategyShortlist strategy_shortlist(const BallState& ball, const Vec2& incoming_landing,
                                     StyleSide style, const std::vector<SkillSpec>& roster,
                                     const std::vector<const DescriptorTable*>& tables,
                                     const OpponentStats& opp, const StrategyConfig& cfg,
                                     Rng& rng) {
  struct Candidate {
    int skill_id;
    SkillMetrics metrics;
  };
  std::vector<Candidate> cands;
  const BallKey key = ball_key(ball);
  for (const auto& spec : roster) {
    if (spec.is_serve_receiver) continue;
    if (spec.style != style) continue;
    if (spec.id >= static_cast<int>(tables.size()) || !tables[spec.id]) continue;
    cands.push_back({spec.id, tables[spec.id]->query(key, cfg.query_k)});
  }

  StrategyShortlist out;
  if (cands.empty()) {
    // No same-style tables at all: highest-land-rate generalist, flagged.
    out.fallback_used = true;
    const Candidate* best = nullptr;
    for (const auto& spec : roster) {
      if (spec.is_serve_receiver || spec.kind != SkillKind::Generalist) continue;
      if (spec.id >= static_cast<int>(tables.size()) || !tables[spec.id]) continue;
      cands.push_back({spec.id, tables[spec.id]->query(key, cfg.query_k)});
      if (!best || cands.back().metrics.land_rate > best->metrics.land_rate)
        best = &cands.back();
    }
    if (!best) throw std::runtime_error("strategy_shortlist: no descriptor tables available");
    for (int h = 0; h < 5; ++h)
      out.entries.push_back({best->skill_id, best->metrics.land_rate, h});
    return out;
  }

  auto by_land_desc = [](const Candidate& a, const Candidate& b) {
    if (a.metrics.land_rate != b.metrics.land_rate) return a.metrics.land_rate > b.metrics.land_rate;
    return a.skill_id < b.skill_id;
  };
  std::vector<Candidate> by_land = cands;
  std::sort(by_land.begin(), by_land.end(), by_land_desc);
  const Candidate& best_land = by_land.front();

  auto push = [&](const Candidate& c, int heuristic) {
    out.entries.push_back({c.skill_id, c.metrics.land_rate, heuristic});
  };

  // (1) Uniform random among skills whose land rate exceeds the threshold.
  {
    std::vector<const Candidate*> pool;
    for (const auto& c : cands)
      if (c.metrics.land_rate > cfg.random_land_threshold) pool.push_back(&c);
    if (pool.empty())
      push(best_land, 0);
    else
      push(*pool[rng.uniform_int(static_cast<int>(pool.size()))], 0);
  }

  const int topn = std::min<int>(cfg.top_n_land, static_cast<int>(by_land.size()));
  auto pick_top_m = [&](auto metric) -> const Candidate& {
    std::vector<const Candidate*> filtered;
    for (int i = 0; i < topn; ++i) filtered.push_back(&by_land[i]);
    std::stable_sort(filtered.begin(), filtered.end(), [&](const Candidate* a, const Candidate* b) {
      const double ma = metric(*a), mb = metric(*b);
      if (ma != mb) return ma > mb;
      return a->skill_id < b->skill_id;
    });
    const int m = std::min<int>(cfg.top_m, static_cast<int>(filtered.size()));
    return *filtered[rng.uniform_int(m)];
  };

  // (2) Fastest hit velocity among the top-n land rates.
  push(pick_top_m([](const Candidate& c) { return c.metrics.hit_velocity_y; }), 1);

  // (3) Farthest landing from the incoming ball's landing point.
  auto landing_distance = [&](const Candidate& c) {
    return (c.metrics.landing_mean - incoming_landing).norm();
  };
  push(pick_top_m(landing_distance), 2);

  // (4) Exploit the opponent's weaker side. The opponent faces the robot, so
  // their forehand covers negative x (right-handed convention).
  {
    const double fh_rate = opp.by_side[static_cast<int>(StyleSide::Forehand)].rate();
    const double bh_rate = opp.by_side[static_cast<int>(StyleSide::Backhand)].rate();
    const bool target_forehand = fh_rate < bh_rate;
    const Candidate* best = nullptr;
    for (const auto& c : cands) {
      const double depth = target_forehand ? -c.metrics.landing_mean.x : c.metrics.landing_mean.x;
      const double best_depth =
          best ? (target_forehand ? -best->metrics.landing_mean.x : best->metrics.landing_mean.x)
               : -1e9;
      if (!best || depth > best_depth || (depth == best_depth && c.skill_id < best->skill_id))
        best = &c;
    }
    push(*best, 3);
  }

  // (5) Strong opponents get the farthest landing; otherwise highest land rate.
  if (opp.hit_rate() > cfg.strong_opponent_hit_rate) {
    const Candidate* far = nullptr;
    for (const auto& c : cands)
      if (!far || landing_distance(c) > landing_distance(*far)) far = &c;
    push(*far, 4);
  } else {
    push(best_land, 4);
  }
  return out;
}

HlcDecision hlc_act(const BallState& ball, bool is_serve, const std::vector<double>& obs_flat,
                    double intercept_x, const Vec2& incoming_landing,
                    const std::vector<double>& spin_features, HlcContext& ctx, Rng& rng) {
  HlcDecision d;
  d.is_serve = is_serve;
  d.style = ctx.style ? ctx.style->select(obs_flat, intercept_x)
                      : (intercept_x > 0.0 ? StyleSide::Forehand : StyleSide::Backhand);

  if (is_serve) {
    d.spin = (ctx.spin && !spin_features.empty()) ? ctx.spin->classify(spin_features)
                                                  : SpinClass::Topspin;
    const SkillKind want =
        d.spin == SpinClass::Underspin ? SkillKind::UnderspinServe : SkillKind::TopspinServe;
    for (const auto& spec : *ctx.roster) {
      if (spec.is_serve_receiver && spec.style == d.style && spec.kind == want) {
        d.skill_id = spec.id;
        return d;
      }
    }
    throw std::runtime_error("hlc_act: no serve receiver for the selected style/spin");
  }

  d.shortlist = strategy_shortlist(ball, incoming_landing, d.style, *ctx.roster, *ctx.tables,
                                   *ctx.opponent, ctx.strategy, rng);
  std::vector<double> h_hat(d.shortlist.entries.size());
  for (size_t i = 0; i < h_hat.size(); ++i) {
    const auto& e = d.shortlist.entries[i];
    h_hat[i] = ctx.prefs->h[e.skill_id] + ctx.strategy.return_scale * e.return_probability;
  }
  d.selection_probabilities = softmax(h_hat);
  d.chosen_entry = sample_index(d.selection_probabilities, rng);
  d.skill_id = d.shortlist.entries[d.chosen_entry].skill_id;
  return d;
}

// ---------------------------------------------------------------------------
// Opponent store

OpponentRecord& OpponentStore::get_or_create(const std::string& opponent_id, size_t num_skills,
                                             double alpha) {
  auto it = records_.find(opponent_id);
  if (it == records_.end()) {
    OpponentRecord rec;
    rec.prefs = PreferenceState::make(num_skills, alpha);
    it = records_.emplace(opponent_id, std::move(rec)).first;
  }
  return it->second;
}

void OpponentStore::save(const std::string& path) const {
  nlohmann::json root;
  for (const auto& [id, rec] : records_) {
    nlohmann::json j;
    j["h"] = rec.prefs.h;
    j["baseline_h"] = rec.prefs.baseline_h;
    j["action_counts"] = rec.prefs.action_counts;
    j["avg_reward"] = rec.prefs.avg_reward;
    j["timestep"] = rec.prefs.timestep;
    j["step_size"] = rec.prefs.step_size;
    j["games_played"] = rec.games_played;
    nlohmann::json sides = nlohmann::json::array();
    for (const auto& s : rec.stats.by_side)
      sides.push_back({{"attempts", s.attempts}, {"returns", s.returns}});
    j["stats"] = {{"total",
                   {{"attempts", rec.stats.total.attempts}, {"returns", rec.stats.total.returns}}},
                  {"by_side", sides}};
    root[id] = j;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << root.dump(1) << "\n";
}

OpponentStore OpponentStore::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json root = nlohmann::json::parse(in);
  OpponentStore store;
  for (auto& [id, j] : root.items()) {
    OpponentRecord rec;
    rec.prefs.h = j["h"].get<std::vector<double>>();
    rec.prefs.baseline_h = j["baseline_h"].get<std::vector<double>>();
    rec.prefs.action_counts = j["action_counts"].get<std::vector<long>>();
    rec.prefs.avg_reward = j["avg_reward"].get<double>();
    rec.prefs.timestep = j["timestep"].get<long>();
    rec.prefs.step_size = j["step_size"].get<double>();
    rec.games_played = j["games_played"].get<int>();
    rec.stats.total.attempts = j["stats"]["total"]["attempts"].get<long>();
    rec.stats.total.returns = j["stats"]["total"]["returns"].get<long>();
    for (int i = 0; i < 3; ++i) {
      rec.stats.by_side[i].attempts = j["stats"]["by_side"][i]["attempts"].get<long>();
      rec.stats.by_side[i].returns = j["stats"]["by_side"][i]["returns"].get<long>();
    }
    store.records_.emplace(id, std::move(rec));
  }
  return store;
}

}  // namespace ttsim
