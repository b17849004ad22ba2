#include "ttsim/skills.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace ttsim {

const char* skill_kind_name(SkillKind k) {
  switch (k) {
    case SkillKind::Generalist: return "generalist";
    case SkillKind::TargetLeft: return "target_left";
    case SkillKind::TargetRight: return "target_right";
    case SkillKind::FastHit: return "fast_hit";
    case SkillKind::TopspinServe: return "topspin_serve";
    case SkillKind::UnderspinServe: return "underspin_serve";
  }
  return "?";
}

std::vector<SkillSpec> default_roster() {
  std::vector<SkillSpec> r;
  auto add = [&](std::string name, StyleSide style, SkillKind kind, Vec2 target, double speed,
                 double nv, double na, bool serve = false,
                 SpinClass preset = SpinClass::Topspin) {
    SkillSpec s;
    s.id = static_cast<int>(r.size());
    s.name = std::move(name);
    s.style = style;
    s.kind = kind;
    s.target_landing = target;
    s.target_speed = speed;
    s.noise_velocity = nv;
    s.noise_angle = na;
    s.is_serve_receiver = serve;
    s.spin_preset = preset;
    r.push_back(s);
  };

  using K = SkillKind;
  const StyleSide FH = StyleSide::Forehand, BH = StyleSide::Backhand;
  // Rally skills 0-12.
  add("fh_generalist_a", FH, K::Generalist, {-0.05, 1.00}, 5.6, 0.10, 0.012);
  add("fh_generalist_b", FH, K::Generalist, {0.10, 0.95}, 5.4, 0.12, 0.014);
  add("fh_generalist_c", FH, K::Generalist, {-0.15, 1.05}, 5.8, 0.14, 0.016);
  add("fh_hit_right", FH, K::TargetRight, {0.45, 1.00}, 5.9, 0.16, 0.018);
  add("fh_hit_left", FH, K::TargetLeft, {-0.45, 1.00}, 5.9, 0.16, 0.018);
  add("fh_hit_left_b", FH, K::TargetLeft, {-0.40, 1.05}, 5.6, 0.20, 0.022);
  add("fh_hit_right_fast", FH, K::FastHit, {0.40, 1.10}, 7.4, 0.30, 0.030);
  add("fh_hit_left_fast", FH, K::FastHit, {-0.40, 1.10}, 7.4, 0.30, 0.030);
  add("fh_fast", FH, K::FastHit, {0.05, 1.12}, 7.8, 0.34, 0.034);
  add("bh_generalist", BH, K::Generalist, {0.05, 1.00}, 5.4, 0.12, 0.014);
  add("bh_fast", BH, K::FastHit, {0.00, 1.10}, 7.2, 0.30, 0.032);
  add("bh_hit_right", BH, K::TargetRight, {0.45, 1.00}, 5.7, 0.18, 0.020);
  add("bh_hit_left", BH, K::TargetLeft, {-0.45, 1.00}, 5.7, 0.18, 0.020);
  // Serve receivers 13-16.
  add("fh_serve_topspin", FH, K::TopspinServe, {0.00, 0.90}, 5.2, 0.14, 0.016, true,
      SpinClass::Topspin);
  add("bh_serve_topspin", BH, K::TopspinServe, {0.05, 0.90}, 5.0, 0.14, 0.016, true,
      SpinClass::Topspin);
  add("fh_serve_underspin", FH, K::UnderspinServe, {-0.10, 0.85}, 4.6, 0.16, 0.018, true,
      SpinClass::Underspin);
  add("bh_serve_underspin", BH, K::UnderspinServe, {0.10, 0.85}, 4.6, 0.16, 0.018, true,
      SpinClass::Underspin);
  return r;
}

// ---------------------------------------------------------------------------
// Stroke planning

namespace {

struct LandingProbe {
  bool landed = false;
  Vec2 landing;
  double speed = 0.0;
  double net_margin = 0.0;  // clearance above the net top at the crossing
};

// First opponent-side bounce of a return launched from `from`.
LandingProbe probe_return_flight(const Vec3& from, const Vec3& velocity, const Vec3& spin,
                                 const PhysicsEnv& env) {
  BallState s;
  s.position = from;
  s.velocity = velocity;
  s.spin = spin;
  SimulateOptions opt;
  opt.horizon = 2.0;
  Trajectory traj = simulate_trajectory(s, env.flight, env.contact, env.geom, opt);
  LandingProbe out;
  for (const auto& e : traj.events) {
    if (e.type == TrajEventType::NetFault) return out;
    if (e.type == TrajEventType::BounceRobotSide) return out;
    if (e.type == TrajEventType::NetCross)
      out.net_margin = e.value - env.flight.ball_radius - env.geom.net_height;
    if (e.type == TrajEventType::BounceOpponentSide) {
      out.landed = true;
      out.landing = {e.position.x, e.position.y};
      out.speed = velocity.norm();
      return out;
    }
  }
  return out;
}

// Soft penalty pushing planned returns away from outcome-flipping margins:
// net skimmers and landings near the back edge.
constexpr double g_net_pen = 0.12, g_back_pen = 0.10;
double margin_penalty(const LandingProbe& probe, const PhysicsEnv& env) {
  double pen = 0.0;
  if (probe.net_margin < 0.05) pen += g_net_pen * (0.05 - probe.net_margin) / 0.05;
  const double back_margin = env.geom.half_length() - probe.landing.y;
  if (back_margin < 0.12) pen += g_back_pen * (0.12 - back_margin) / 0.12;
  return pen;
}

double restitution_for(const ContactParams& c, SpinClass cls) {
  return cls == SpinClass::Topspin ? c.paddle_restitution_topspin : c.paddle_restitution_underspin;
}

// Post-contact ball state for a candidate paddle pose; the fast inner
// refinement objective is matching the launch solve's desired velocity.
bool contact_outcome(const BallState& ball_at_contact, const Vec3& normal, const Vec3& paddle_v,
                     SpinClass cls, const PhysicsEnv& env, BallState* out) {
  PaddleState paddle;
  paddle.position = ball_at_contact.position - normal * 0.001;
  paddle.normal = normal;
  paddle.velocity = paddle_v;
  try {
    *out = contact_paddle(ball_at_contact, paddle, env.contact, cls, env.flight.ball_radius);
  } catch (const std::invalid_argument&) {
    return false;
  }
  return true;
}

Vec3 pitch_yaw_normal(double pitch, double yaw) {
  return Vec3{std::sin(yaw) * std::cos(pitch), std::cos(yaw) * std::cos(pitch), std::sin(pitch)}
      .normalized();
}

void normal_angles(const Vec3& n, double* pitch, double* yaw) {
  *pitch = std::asin(std::clamp(n.z, -1.0, 1.0));
  *yaw = std::atan2(n.x, n.y);
}

// Score of a candidate contact pose: simulate the contact and the return
// flight, penalizing target miss, speed error and margin-flippable
// outcomes (net skimmers flip to faults under execution scatter).
double contact_score(const BallState& ball_at_contact, const Vec3& normal, const Vec3& paddle_v,
                     SpinClass cls, const SkillSpec& spec, double launch_speed,
                     const PhysicsEnv& env) {
  PaddleState paddle;
  paddle.position = ball_at_contact.position - normal * 0.001;
  paddle.normal = normal;
  paddle.velocity = paddle_v;
  BallState out;
  try {
    out = contact_paddle(ball_at_contact, paddle, env.contact, cls, env.flight.ball_radius);
  } catch (const std::invalid_argument&) {
    return 1e9;
  }
  if (out.velocity.y <= 0.5) return 1e8;  // not going back over
  LandingProbe probe = probe_return_flight(out.position, out.velocity, out.spin, env);
  if (!probe.landed) return 1e6 + std::abs(out.velocity.norm() - launch_speed);
  const double dx = probe.landing.x - spec.target_landing.x;
  const double dy = probe.landing.y - spec.target_landing.y;
  const double sv = out.velocity.norm() - launch_speed;
  return dx * dx + dy * dy + 0.005 * sv * sv + margin_penalty(probe, env);
}

}  // namespace

StrokePlan plan_stroke_intercept(const SkillSpec& spec, const BallState& ball,
                                 const PhysicsEnv& env, const RobotParams& robot,
                                 double start_delay) {
  StrokePlan plan;
  const double tick_dt = 1.0 / robot.control_hz;

  SimulateOptions opt;
  opt.horizon = 2.5;
  opt.record_dt = tick_dt;
  Trajectory traj = simulate_trajectory(ball, env.flight, env.contact, env.geom, opt);
  const TrajEvent* bounce = traj.first(TrajEventType::BounceRobotSide);
  if (!bounce) return plan;
  // The ball must be taken before its second bounce on our side.
  double window_end = 1e300;
  bool seen_first = false;
  for (const auto& e : traj.events) {
    if (e.type != TrajEventType::BounceRobotSide) continue;
    if (!seen_first) {
      seen_first = true;
    } else {
      window_end = e.t;
      break;
    }
  }

  const Vec3 home = robot.home_position;
  const TrajPoint* chosen = nullptr;
  const TrajPoint* fallback = nullptr;
  const TrajPoint* highest = nullptr;
  for (const auto& p : traj.points) {
    if (p.t <= bounce->t + 1e-9 || p.t >= window_end) continue;
    const Vec3& pos = p.state.position;
    if (std::abs(pos.x) > robot.reach_x || pos.y < robot.reach_y_min ||
        pos.y > robot.reach_y_max || pos.z < robot.reach_z_min || pos.z > robot.reach_z_max)
      continue;
    const double travel =
        (pos - home).norm() / robot.max_speed + start_delay + 1.0 * tick_dt;
    if (travel > p.t) continue;
    if (!fallback) fallback = &p;
    if (!highest || pos.z > highest->state.position.z) highest = &p;
    if (!chosen && pos.z >= 0.15) chosen = &p;
  }
  // Fast hitters take the ball at the top of the bounce; a flat drive from a
  // low contact point cannot clear the net and land.
  if (spec.kind == SkillKind::FastHit && highest) chosen = highest;
  if (!chosen) chosen = fallback;
  if (!chosen) return plan;

  plan.reachable = true;
  plan.intercept_t = chosen->t;
  plan.intercept = chosen->state.position;
  const BallState& at = chosen->state;
  plan.assumed_class = spec.is_serve_receiver ? spec.spin_preset : spin_class_of(at);

  // Outgoing velocity: scan the launch elevation toward the target.
  const Vec2 to_target{spec.target_landing.x - at.position.x,
                       spec.target_landing.y - at.position.y};
  const double dist = std::max(to_target.norm(), 1e-6);
  const Vec2 dir{to_target.x / dist, to_target.y / dist};
  const double tau = std::min(1.0, env.contact.paddle_spin_transfer);
  const Vec3 carry_spin = at.spin * (1.0 - tau);

  auto launch_score = [&](double theta, double speed) {
    const Vec3 v{speed * std::cos(theta) * dir.x, speed * std::cos(theta) * dir.y,
                 speed * std::sin(theta)};
    LandingProbe probe = probe_return_flight(at.position, v, carry_spin, env);
    if (!probe.landed) return 1e6;
    const double dx = probe.landing.x - spec.target_landing.x;
    const double dy = probe.landing.y - spec.target_landing.y;
    return dx * dx + dy * dy + margin_penalty(probe, env);
  };
  // Back off the commanded speed when no elevation lands at all (low contact
  // points cannot land a full-speed drive).
  double launch_speed = spec.target_speed;
  double best_theta = 0.3, best_ls = 1e18;
  for (int back = 0; back < 5; ++back) {
    for (int i = 0; i < 16; ++i) {
      const double theta = -0.10 + i * (1.05 / 15.0);
      const double s = launch_score(theta, launch_speed);
      if (s < best_ls) {
        best_ls = s;
        best_theta = theta;
      }
    }
    if (best_ls < 1e6) break;
    launch_speed *= 0.85;
  }
  for (double span = 0.08; span > 0.005; span *= 0.5) {
    for (double theta : {best_theta - span, best_theta + span}) {
      const double s = launch_score(theta, launch_speed);
      if (s < best_ls) {
        best_ls = s;
        best_theta = theta;
      }
    }
  }
  const Vec3 v_out{launch_speed * std::cos(best_theta) * dir.x,
                   launch_speed * std::cos(best_theta) * dir.y,
                   launch_speed * std::sin(best_theta)};

  // Frictionless analytic seed for the contact pose.
  const double e = restitution_for(env.contact, plan.assumed_class);
  const Vec3 delta = v_out - at.velocity;
  Vec3 n = delta.normalized();
  if (n.y < 0.0) n = -n;  // face the opponent
  double v_along = at.velocity.dot(n) + delta.norm() / (1.0 + e);

  double pitch, yaw;
  normal_angles(n, &pitch, &yaw);
  double bp = pitch, by = yaw, bv = v_along;

  // Stage 1: match the desired launch velocity through the true contact
  // model (cheap, smooth; no flight simulation inside the loop).
  auto vel_mismatch = [&](double cp, double cy, double cv) {
    const Vec3 cn = pitch_yaw_normal(cp, cy);
    BallState out;
    if (!contact_outcome(at, cn, cn * cv, plan.assumed_class, env, &out)) return 1e9;
    return (out.velocity - v_out).norm2();
  };
  double best = vel_mismatch(bp, by, bv);
  double dp = 0.15, dv = 0.6;
  for (int round = 0; round < 5; ++round) {
    for (int ip = -1; ip <= 1; ++ip)
      for (int iy = -1; iy <= 1; ++iy)
        for (int iv = -1; iv <= 1; ++iv) {
          if (!ip && !iy && !iv) continue;
          const double s = vel_mismatch(bp + ip * dp, by + iy * dp, bv + iv * dv);
          if (s < best) {
            best = s;
            bp += ip * dp;
            by += iy * dp;
            bv += iv * dv;
          }
        }
    dp *= 0.45;
    dv *= 0.45;
  }

  // Stage 2: polish on the landing itself (covers the outgoing-spin shift
  // the velocity match cannot see).
  double land_best = contact_score(at, pitch_yaw_normal(bp, by),
                                   pitch_yaw_normal(bp, by) * bv, plan.assumed_class, spec,
                                   launch_speed, env);
  dp = 0.05;
  dv = 0.22;
  for (int round = 0; round < 3; ++round) {
    for (int ip = -1; ip <= 1; ++ip)
      for (int iy = -1; iy <= 1; ++iy)
        for (int iv = -1; iv <= 1; ++iv) {
          if (!ip && !iy && !iv) continue;
          const double cp = bp + ip * dp, cy = by + iy * dp, cv = bv + iv * dv;
          const Vec3 cn = pitch_yaw_normal(cp, cy);
          const double s =
              contact_score(at, cn, cn * cv, plan.assumed_class, spec, launch_speed, env);
          if (s < land_best) {
            land_best = s;
            bp = cp;
            by = cy;
            bv = cv;
          }
        }
    dp *= 0.4;
    dv *= 0.4;
  }

  plan.contact_normal = pitch_yaw_normal(bp, by);
  plan.contact_velocity = plan.contact_normal * bv;
  plan.plane_offset = plan.contact_normal * (env.flight.ball_radius + robot.paddle_half_gap);
  return plan;
}

void apply_execution_noise(StrokePlan& plan, const SkillSpec& spec, const PhysicsEnv& env,
                           const RobotParams& robot, Rng& rng) {
  if (!plan.reachable || (spec.noise_velocity <= 0.0 && spec.noise_angle <= 0.0)) return;
  double pitch, yaw;
  normal_angles(plan.contact_normal, &pitch, &yaw);
  const double speed = plan.contact_velocity.dot(plan.contact_normal);
  const double np = pitch + rng.gaussian() * spec.noise_angle;
  const double ny = yaw + rng.gaussian() * spec.noise_angle;
  const double nv = speed + rng.gaussian() * spec.noise_velocity;
  plan.contact_normal = pitch_yaw_normal(np, ny);
  plan.contact_velocity =
      plan.contact_normal * nv +
      Vec3{rng.gaussian(), rng.gaussian(), rng.gaussian()} * (0.3 * spec.noise_velocity);
  plan.plane_offset = plan.contact_normal * (env.flight.ball_radius + robot.paddle_half_gap);
}

namespace {

Vec3 clamp_norm(const Vec3& v, double max_norm) {
  const double n = v.norm();
  return n > max_norm ? v * (max_norm / n) : v;
}

// Angular velocity command slewing `current` toward `target`.
Vec3 normal_slew(const Vec3& current, const Vec3& target, double dt, double max_rate) {
  const Vec3 axis_raw = current.cross(target);
  const double sin_a = axis_raw.norm();
  const double cos_a = std::clamp(current.dot(target), -1.0, 1.0);
  const double angle = std::atan2(sin_a, cos_a);
  if (angle < 1e-9) return {};
  const Vec3 axis = axis_raw / sin_a;
  return axis * std::min(angle / dt, max_rate);
}

}  // namespace

PaddleCommand plan_stroke(const SkillSpec& spec, const StrokePlan& plan, const BallState& ball,
                          const PaddleState& paddle, double t, const RobotParams& robot) {
  (void)spec;
  (void)ball;
  PaddleCommand cmd;
  if (!plan.reachable) return cmd;
  const double tick_dt = 1.0 / robot.control_hz;
  const double to_contact = plan.intercept_t - t;

  if (to_contact < -0.08) return cmd;  // stroke window passed, hold
  cmd.angular_velocity =
      normal_slew(paddle.normal, plan.contact_normal, tick_dt, robot.max_normal_rate);
  const Vec3 aim = plan.intercept - plan.plane_offset;
  if (to_contact <= robot.swing_time) {
    // Swing-through with a position correction toward the planned path. The
    // final two ticks run pure feedforward: a catch-up term still active at
    // contact inflates the outgoing speed.
    // Small path lead compensates the contact landing a few ms late once
    // the correction gain drops for the final feedforward ticks.
    const double lead_s = 0.0035;
    const Vec3 expected =
        aim - plan.contact_velocity * std::max(to_contact - lead_s, 0.0);
    const double gain = to_contact <= 2.0 * tick_dt ? 0.0 : 6.0;
    cmd.velocity = clamp_norm(plan.contact_velocity + (expected - paddle.position) * gain,
                              robot.max_speed);
    return cmd;
  }
  const Vec3 staging = aim - plan.contact_velocity * robot.swing_time;
  const Vec3 delta = staging - paddle.position;
  const double window = std::max(to_contact - robot.swing_time - 0.02, tick_dt);
  cmd.velocity = clamp_norm(delta / window, robot.max_speed);
  return cmd;
}

// ---------------------------------------------------------------------------
// Rewards

double net_height_reward(double z_at_net) {
  if (z_at_net >= 0.173 && z_at_net < 0.3) return std::exp(-10.0 * std::abs(z_at_net - 0.173));
  return -1.1;
}

double compute_reward(const EpisodeTranscript& tr, const RewardConfig& cfg) {
  const size_t n = tr.commanded_velocity.size();
  double total = 0.0;

  // (1) State transition (approach progress + hit) plus landing bonus.
  double transition =
      tr.hit ? 1.0 : std::max(0.0, 1.0 - tr.min_ball_distance / cfg.approach_scale);
  transition += tr.landed ? 1.0 : 0.0;
  total += cfg.w_transition * transition;

  // (2) Hit-and-land bonus.
  total += cfg.w_hit_and_land * ((tr.hit && tr.landed) ? 1.0 : 0.0);

  // (3-5) Episodic kinematic penalties from the commanded velocities.
  double jerk = 0.0, accel = 0.0, speed = 0.0;
  for (size_t i = 0; i < n; ++i) {
    speed += tr.commanded_velocity[i].norm();
    if (i >= 1) accel += (tr.commanded_velocity[i] - tr.commanded_velocity[i - 1]).norm() / tr.tick_dt;
    if (i >= 2)
      jerk += (tr.commanded_velocity[i] - tr.commanded_velocity[i - 1] * 2.0 +
               tr.commanded_velocity[i - 2])
                  .norm() /
              (tr.tick_dt * tr.tick_dt);
  }
  if (n > 0) speed /= n;
  if (n > 1) accel /= (n - 1);
  if (n > 2) jerk /= (n - 2);
  total += cfg.w_jerk * (1.0 - std::clamp(jerk / cfg.jerk_norm, 0.0, 1.0));
  total += cfg.w_accel * (1.0 - std::clamp(accel / cfg.accel_norm, 0.0, 1.0));
  total += cfg.w_velocity * (1.0 - std::clamp(speed / cfg.velocity_norm, 0.0, 1.0));

  // (6) Safety pose: stay inside the reachable box.
  const double in_box =
      n > 0 ? 1.0 - std::min<size_t>(tr.out_of_box_steps, n) / static_cast<double>(n) : 1.0;
  total += cfg.w_safety_pose * in_box;

  // (7) Collision penalty and (8) paddle height, per offending step.
  total -= cfg.w_collision * tr.table_collision_steps;
  total -= cfg.w_paddle_height * tr.low_paddle_steps;

  // (9/10) Style pose shaping toward the reference pose.
  double d = 1e9;
  for (double v : tr.pose_distance) d = std::min(d, v);
  if (tr.pose_distance.empty()) d = 0.0;
  total += cfg.w_style_pose * (tr.style == StyleSide::Backhand ? std::max(2.0 - d, 0.0)
                                                               : std::max(1.0 - d, 0.0));

  if (cfg.enable_net_height && tr.hit) total += net_height_reward(tr.net_clearance);
  if (cfg.enable_contact_angle && tr.hit) {
    const double target = tr.style == StyleSide::Backhand ? cfg.contact_pitch_target_bh
                                                          : cfg.contact_pitch_target_fh;
    total += std::max(1.0 - std::abs(tr.contact_pitch - target), 0.0);
  }
  return total;
}

// ---------------------------------------------------------------------------
// FiLM

FilmAdapter FilmAdapter::identity(int action_dim, int feature_dim) {
  FilmAdapter f;
  f.action_dim = action_dim;
  f.feature_dim = feature_dim;
  f.params.assign(2 * action_dim * feature_dim, 0.0);
  return f;
}

void FilmAdapter::gamma_beta(const std::vector<double>& features, std::vector<double>* gamma,
                             std::vector<double>* beta) const {
  if (static_cast<int>(features.size()) != feature_dim)
    throw std::invalid_argument("FilmAdapter: feature dimension mismatch");
  gamma->assign(action_dim, 1.0);
  beta->assign(action_dim, 0.0);
  const double* a = params.data();
  const double* b = params.data() + action_dim * feature_dim;
  for (int i = 0; i < action_dim; ++i)
    for (int j = 0; j < feature_dim; ++j) {
      (*gamma)[i] += a[i * feature_dim + j] * features[j];
      (*beta)[i] += b[i * feature_dim + j] * features[j];
    }
}

std::vector<double> apply_film(const std::vector<double>& action, const FilmAdapter& adapter,
                               const std::vector<double>& features) {
  if (static_cast<int>(action.size()) != adapter.action_dim)
    throw std::invalid_argument("apply_film: action dimension mismatch");
  std::vector<double> gamma, beta;
  adapter.gamma_beta(features, &gamma, &beta);
  std::vector<double> out(action.size());
  for (size_t i = 0; i < action.size(); ++i) out[i] = gamma[i] * action[i] + beta[i];
  return out;
}

// ---------------------------------------------------------------------------
// Observations and the policy net

void ObsStack::reset() {
  std::fill(flat_.begin(), flat_.end(), 0.0);
  primed_ = false;
}

void ObsStack::push(const BallState& ball, const PaddleState& paddle, StyleSide style) {
  std::array<double, kObsFeatures> f{
      ball.position.x, ball.position.y,  ball.position.z,  ball.velocity.x,
      ball.velocity.y, ball.velocity.z,  paddle.position.x, paddle.position.y,
      paddle.position.z, paddle.normal.x, paddle.normal.y,  paddle.normal.z,
      paddle.velocity.y, paddle.velocity.z,
      style == StyleSide::Forehand ? 1.0 : 0.0, style == StyleSide::Backhand ? 1.0 : 0.0};
  if (!primed_) {
    // First observation fills the whole history.
    for (int t = 0; t < kObsTicks; ++t)
      std::copy(f.begin(), f.end(), flat_.begin() + t * kObsFeatures);
    primed_ = true;
    return;
  }
  std::copy(flat_.begin() + kObsFeatures, flat_.end(), flat_.begin());
  std::copy(f.begin(), f.end(), flat_.end() - kObsFeatures);
}

std::vector<double> ObsStack::last_tick_features() const {
  return std::vector<double>(flat_.end() - kObsFeatures, flat_.end());
}

PolicyNet PolicyNet::zero() {
  PolicyNet n;
  n.params.assign(param_count(), 0.0);
  return n;
}

std::vector<double> PolicyNet::forward(const std::vector<double>& obs_flat,
                                       const std::vector<double>& film_features) const {
  std::vector<double> x = normalizer.apply(obs_flat);
  std::vector<double> action(kActionDim, 0.0);
  const double* w = params.data();
  for (int i = 0; i < kActionDim; ++i) {
    double s = params[kActionDim * kObsDim + i];  // bias
    const double* row = w + i * kObsDim;
    for (int j = 0; j < kObsDim; ++j) s += row[j] * x[j];
    action[i] = std::tanh(s);
  }
  if (pursuit_prior) {
    // Raw last-tick features: ball position 0..2, paddle position 6..8.
    const double* f = obs_flat.data() + (kObsTicks - 1) * kObsFeatures;
    const double dx = f[0] - f[6], dy = f[1] - f[7], dz = f[2] - f[8];
    const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
    action[0] += prior_gain * dx;
    action[1] += prior_gain * (-1.45 - f[7]);  // hold the station depth
    action[2] += prior_gain * dz;
    // Forward surge as the ball closes in; the trainable residual shapes
    // its timing and strength.
    action[1] += 0.9 * prior_gain * std::max(0.0, 1.0 - dist / 0.55);
    for (int i = 0; i < 3; ++i) action[i] = std::clamp(action[i], -1.0, 1.0);
  }
  if (film) return apply_film(action, *film, film_features);
  return action;
}

// ---------------------------------------------------------------------------
// Episode environment

namespace {

// Per-episode world: 50 Hz control over 1 kHz physics with paddle contact.
class RallyRunner {
 public:
  RallyRunner(const BallState& incoming, const PhysicsEnv& env, const RobotParams& robot,
              StyleSide style, const EnvOptions& opt)
      : env_(env), robot_(robot), opt_(opt), ball_(incoming) {
    paddle_.position = robot.home_position;  // shared across all skills
    paddle_.normal = pitch_yaw_normal(robot.home_pitch, 0.0);
    tick_dt_ = 1.0 / robot.control_hz;
    substeps_ = std::max(1, static_cast<int>(std::llround(tick_dt_ / env.flight.dt)));
    transcript_.style = style;
    transcript_.tick_dt = tick_dt_;
    style_ = style;
    obs_delay_ = std::max(0, opt.obs_delay_ticks);
    action_delay_ = std::max(0, opt.action_delay_ticks);
  }

  bool done() const { return done_; }
  double time() const { return t_; }
  int tick_index() const { return tick_; }
  const PaddleState& paddle() const { return paddle_; }
  const BallState& ball() const { return ball_; }

  BallState observed_ball() const {
    if (obs_delay_ == 0 || ball_history_.empty()) return ball_;
    const size_t lag = std::min<size_t>(obs_delay_, ball_history_.size() - 1);
    return ball_history_[ball_history_.size() - 1 - lag];
  }

  void step(const PaddleCommand& requested) {
    if (done_) return;
    ball_history_.push_back(ball_);

    PaddleCommand cmd = requested;
    if (action_delay_ > 0) {
      pending_.push_back(requested);
      cmd = pending_.size() > static_cast<size_t>(action_delay_) ? pending_.front()
                                                                 : PaddleCommand{};
      if (pending_.size() > static_cast<size_t>(action_delay_)) pending_.pop_front();
    }

    // Actuator limits: speed, acceleration, normal slew rate.
    Vec3 v = clamp_norm(cmd.velocity, robot_.max_speed);
    const Vec3 dv = v - paddle_.velocity;
    const double max_dv = robot_.max_accel * tick_dt_;
    v = paddle_.velocity + clamp_norm(dv, max_dv);
    Vec3 w = cmd.angular_velocity;
    if (w.norm() > robot_.max_normal_rate) w = w * (robot_.max_normal_rate / w.norm());

    paddle_.velocity = v;
    paddle_.angular_velocity = w;

    transcript_.commanded_velocity.push_back(v);
    transcript_.paddle_position.push_back(paddle_.position);
    if (!hit_) {
      const Vec3 ref = robot_.style_reference(style_);
      transcript_.pose_distance.push_back((paddle_.position - ref).norm());
    }

    bool clamped_this_tick = false;
    for (int s = 0; s < substeps_ && !done_; ++s) physics_substep(&clamped_this_tick);
    if (clamped_this_tick) ++transcript_.out_of_box_steps;
    if (paddle_.position.z < robot_.low_paddle_z) ++transcript_.low_paddle_steps;
    if (paddle_.position.z < env_.flight.ball_radius + 0.005 &&
        env_.geom.over_table(paddle_.position.x, paddle_.position.y))
      ++transcript_.table_collision_steps;

    ++tick_;
    if (t_ >= opt_.horizon) finish();
  }

  EpisodeResult result() const {
    EpisodeResult r;
    r.hit = hit_;
    r.landed = landed_;
    r.hit_velocity_y = transcript_.hit_velocity_y;
    r.landing = transcript_.landing;
    r.landing_speed = landing_speed_;
    r.contact_t = contact_t_;
    r.end_t = t_;
    r.transcript = transcript_;
    return r;
  }

  bool high_ball() const { return high_ball_; }

 private:
  void physics_substep(bool* clamped) {
    const double r = env_.flight.ball_radius;
    const double dt = env_.flight.dt;
    BallState prev = ball_;
    ball_ = step_flight(ball_, env_.flight);
    t_ += dt;

    // Paddle pose advances with the ball so contact timing stays aligned.
    paddle_.position += paddle_.velocity * dt;
    const Vec3 unclamped = paddle_.position;
    paddle_.position.x = std::clamp(paddle_.position.x, -robot_.reach_x, robot_.reach_x);
    paddle_.position.y = std::clamp(paddle_.position.y, robot_.reach_y_min, robot_.reach_y_max);
    paddle_.position.z = std::clamp(paddle_.position.z, robot_.reach_z_min, robot_.reach_z_max);
    if (clamped && (unclamped - paddle_.position).norm() > 1e-12) *clamped = true;
    const double wn = paddle_.angular_velocity.norm();
    if (wn > 1e-12) {
      const double angle = wn * dt;
      const Vec3 k = paddle_.angular_velocity / wn;
      paddle_.normal = (paddle_.normal * std::cos(angle) +
                        k.cross(paddle_.normal) * std::sin(angle) +
                        k * (k.dot(paddle_.normal)) * (1.0 - std::cos(angle)))
                           .normalized();
    }

    // Table bounce.
    if (ball_.position.z <= r && ball_.velocity.z < 0.0 &&
        env_.geom.over_table(ball_.position.x, ball_.position.y)) {
      ball_.position.z = r;
      ball_ = bounce_table(ball_, env_.contact, r);
      const bool robot_side = ball_.position.y < 0.0;
      if (!hit_) {
        if (robot_side) {
          if (++incoming_bounces_ >= 2) finish();  // double bounce, unreachable
        }
      } else {
        if (robot_side) {
          finish();  // return came down on our own side
        } else {
          landed_ = true;
          transcript_.landing = {ball_.position.x, ball_.position.y};
          landing_speed_ = ball_.velocity.norm();
          finish();
        }
      }
      return;
    }

    // Net interaction for the return.
    if ((prev.position.y < 0.0) != (ball_.position.y < 0.0)) {
      const double f = prev.position.y / (prev.position.y - ball_.position.y);
      const Vec3 at = prev.position + (ball_.position - prev.position) * f;
      if (std::abs(at.x) <= env_.geom.half_width() + env_.geom.net_overhang && at.z > -r &&
          at.z - r < env_.geom.net_height) {
        if (hit_) transcript_.net_clearance = at.z;
        finish();  // net fault either direction ends the ball
        return;
      }
      if (hit_ && ball_.velocity.y > 0.0) transcript_.net_clearance = at.z;
    }

    if (ball_.position.z > env_.geom.high_ball_ceiling) high_ball_ = true;

    // Paddle contact (one per episode).
    if (!hit_) {
      const Vec3 offset = ball_.position - paddle_.position;
      const double plane_d = offset.dot(paddle_.normal);
      const Vec3 lateral = offset - paddle_.normal * plane_d;
      transcript_.min_ball_distance =
          std::min(transcript_.min_ball_distance, offset.norm());
      if (std::abs(plane_d) <= r + robot_.paddle_half_gap &&
          lateral.norm() <= robot_.paddle_radius) {
        // Approach test mirrors contact_paddle's surface-velocity condition.
        const Vec3 surface_v =
            paddle_.velocity + paddle_.angular_velocity.cross(offset);
        const Vec3 v_rel = ball_.velocity - surface_v;
        if (std::abs(v_rel.dot(paddle_.normal)) > 1e-9 &&
            plane_d * v_rel.dot(paddle_.normal) < 0.0) {
          const SpinClass cls = opt_.spin_conditioned_contact ? spin_class_of(ball_)
                                                              : opt_.fixed_contact_class;
          ball_ = contact_paddle(ball_, paddle_, env_.contact, cls, r);
          hit_ = true;
          contact_t_ = t_;
          transcript_.hit = true;
          transcript_.hit_velocity_y = ball_.velocity.y;
          transcript_.contact_pitch = std::asin(std::clamp(paddle_.normal.z, -1.0, 1.0));
        }
      }
    }

    // Ball left the playable volume.
    if (ball_.position.z < -0.3 || std::abs(ball_.position.x) > 2.5 ||
        std::abs(ball_.position.y) > 3.0)
      finish();
  }

  void finish() {
    if (done_) return;
    done_ = true;
    transcript_.landed = landed_;
  }

  PhysicsEnv env_;
  RobotParams robot_;
  EnvOptions opt_;
  BallState ball_;
  PaddleState paddle_;
  EpisodeTranscript transcript_;
  std::vector<BallState> ball_history_;
  std::deque<PaddleCommand> pending_;
  StyleSide style_;
  double tick_dt_ = 0.02;
  int substeps_ = 20;
  int tick_ = 0;
  double t_ = 0.0;
  bool done_ = false;
  bool hit_ = false;
  bool landed_ = false;
  bool high_ball_ = false;
  int incoming_bounces_ = 0;
  int obs_delay_ = 0;
  int action_delay_ = 0;
  double contact_t_ = 0.0;
  double landing_speed_ = 0.0;
};

}  // namespace

namespace {

PaddleCommand policy_command(const PolicyNet& net, const ObsStack& obs, const PaddleState& paddle,
                             const RobotParams& robot) {
  const std::vector<double> action = net.forward(obs.flat(), obs.last_tick_features());
  PaddleCommand cmd;
  cmd.velocity = Vec3{action[0], action[1], action[2]} * robot.max_speed;
  // Pitch command is relative to the open ready pose.
  cmd.angular_velocity = normal_slew(
      paddle.normal, pitch_yaw_normal(robot.home_pitch + 0.8 * action[3], 0.8 * action[4]),
      1.0 / robot.control_hz, robot.max_normal_rate);
  return cmd;
}

}  // namespace

EpisodeResult run_switchable_episode(const SkillChooser& choose, const BallState& incoming,
                                     const PhysicsEnv& env, const RobotParams& robot, Rng& rng,
                                     const EnvOptions& options) {
  const Skill* current = choose(0, incoming);
  if (!current) throw std::invalid_argument("run_switchable_episode: no initial skill");

  RallyRunner runner(incoming, env, robot, current->spec().style, options);
  const double tick_dt = 1.0 / robot.control_hz;
  // Commands take effect action_delay ticks later; plan against that time.
  const double lead = options.action_delay_ticks * tick_dt;

  StrokePlan plan;
  double plan_epoch = 0.0;
  bool any_reachable = false;
  int decisions = 1;

  auto replan = [&](const BallState& from, double epoch, const StrokePlan* reuse) {
    if (current->is_policy()) return;
    SkillSpec spec = current->spec();
    if (options.predicted_spin && spec.is_serve_receiver)
      spec.spin_preset = *options.predicted_spin;
    BallState seen = from;
    const double lim = options.spin_observation_limit;
    if (lim > 0.0) {
      seen.spin.x = std::clamp(seen.spin.x, -lim, lim);
      seen.spin.y = std::clamp(seen.spin.y, -lim, lim);
      seen.spin.z = std::clamp(seen.spin.z, -lim, lim);
    }
    const double start_delay =
        reuse ? 0.0 : options.decision_delay_ticks / robot.control_hz;
    plan = reuse ? *reuse : plan_stroke_intercept(spec, seen, env, robot, start_delay);
    apply_execution_noise(plan, spec, env, robot, rng);
    plan_epoch = epoch;
    any_reachable = any_reachable || plan.reachable;
  };
  replan(incoming, 0.0, options.precomputed_plan);
  if (current->is_policy()) any_reachable = true;
  bool late_replan_done = false;

  std::deque<PaddleCommand> pending;  // issued but not yet applied
  ObsStack obs;
  while (!runner.done()) {
    const BallState observed = runner.observed_ball();
    obs.push(observed, runner.paddle(), current->spec().style);
    if (runner.tick_index() > 0) {
      const Skill* next = choose(runner.tick_index(), observed);
      if (next && next != current) {
        current = next;
        ++decisions;
        replan(observed, runner.time(), nullptr);
        late_replan_done = false;
      }
    }
    if (!current->is_policy() && !late_replan_done && plan.reachable &&
        options.replan_before_contact_s > 0.0 &&
        plan_epoch + plan.intercept_t - runner.time() <= options.replan_before_contact_s) {
      late_replan_done = true;
      const StrokePlan committed = plan;
      const double committed_epoch = plan_epoch;
      replan(observed, runner.time(), nullptr);
      if (!plan.reachable) {  // keep the committed stroke over a failed re-solve
        plan = committed;
        plan_epoch = committed_epoch;
      }
    }
    PaddleCommand cmd;
    if (runner.tick_index() >= options.decision_delay_ticks) {
      if (current->is_policy()) {
        cmd = policy_command(current->policy(), obs, runner.paddle(), robot);
      } else {
        // Commands apply `lead` seconds later; predict the pose at
        // application time by integrating the still-pending commands.
        PaddleState predicted = runner.paddle();
        for (const PaddleCommand& q : pending) {
          predicted.position += clamp_norm(q.velocity, robot.max_speed) * tick_dt;
          const double wn = q.angular_velocity.norm();
          if (wn > 1e-12) {
            const double angle = wn * tick_dt;
            const Vec3 k = q.angular_velocity / wn;
            predicted.normal = (predicted.normal * std::cos(angle) +
                                k.cross(predicted.normal) * std::sin(angle) +
                                k * (k.dot(predicted.normal)) * (1.0 - std::cos(angle)))
                                   .normalized();
          }
        }
        cmd = plan_stroke(current->spec(), plan, observed, predicted,
                          runner.time() - plan_epoch + lead, robot);
      }
    }
    if (options.action_delay_ticks > 0) {
      pending.push_back(cmd);
      if (pending.size() > static_cast<size_t>(options.action_delay_ticks)) pending.pop_front();
    }
    runner.step(cmd);
  }

  EpisodeResult result = runner.result();
  result.reachable = any_reachable;
  result.high_ball = runner.high_ball();
  result.decisions = decisions;
  return result;
}

EpisodeResult run_skill_episode(const Skill& skill, const BallState& incoming,
                                const PhysicsEnv& env, const RobotParams& robot, Rng& rng,
                                const EnvOptions& options) {
  return run_switchable_episode([&skill](int, const BallState&) { return &skill; }, incoming,
                                env, robot, rng, options);
}

EpisodeRunnerFn skill_episode_runner(const Skill& skill, const PhysicsEnv& env,
                                     const RobotParams& robot, const EnvOptions& options) {
  // Plans are deterministic per record, so repetitions share one solve.
  auto cache = std::make_shared<std::unordered_map<long, StrokePlan>>();
  return [skill, env, robot, options, cache](const BallStateRecord& rec, Rng& rng) {
    EnvOptions opt = options;
    StrokePlan plan;
    if (!skill.is_policy()) {
      auto it = cache->find(rec.id);
      if (it == cache->end())
        it = cache->emplace(rec.id, plan_stroke_intercept(skill.spec(), rec.initial, env, robot))
                 .first;
      plan = it->second;
      opt.precomputed_plan = &plan;
    }
    EpisodeResult r = run_skill_episode(skill, rec.initial, env, robot, rng, opt);
    EpisodeMetricsSample s;
    s.hit = r.hit;
    s.landed = r.landed;
    s.hit_velocity_y = r.hit_velocity_y;
    s.landing = r.landing;
    return s;
  };
}

// ---------------------------------------------------------------------------
// Training

namespace {

Dataset filter_dataset(const Dataset& dataset, StyleSide style, bool topspin_only) {
  Dataset out;
  for (const auto& rec : dataset.records()) {
    if (rec.is_serve) continue;
    if (rec.style_side != StyleSide::Center && rec.style_side != style) continue;
    if (topspin_only && !(rec.categories & kCategoryTopspin)) continue;
    BallStateRecord copy = rec;
    copy.id = -1;
    out.add(copy);
  }
  return out;
}

struct TrainContext {
  const Dataset* balls;
  const PhysicsEnv* env;
  const RobotParams* robot;
  const RewardConfig* reward;
  PolicyTrainOptions opts;
  SkillSpec spec;
};

double rollout_fitness(const PolicyNet& net, const TrainContext& ctx, Rng& rng) {
  Skill skill(ctx.spec, net);
  SampleConfig sample_cfg;
  double total = 0.0;
  for (int b = 0; b < ctx.opts.balls_per_rollout; ++b) {
    BallState ball =
        sample_initial_state(*ctx.balls, rng, ctx.opts.perturbation_scale, sample_cfg, *ctx.env);
    EpisodeResult r = run_skill_episode(skill, ball, *ctx.env, *ctx.robot, rng, ctx.opts.env_options);
    total += compute_reward(r.transcript, *ctx.reward);
  }
  return total / ctx.opts.balls_per_rollout;
}

// Folds observation statistics from one on-policy episode and one
// sigma-perturbed episode; perturbed rollouts keep the per-channel variance
// representative of what ES evaluation actually visits.
void update_normalizer(PolicyNet& net, const TrainContext& ctx, double sigma, Rng& rng) {
  SampleConfig sample_cfg;
  for (int b = 0; b < 2; ++b) {
    PolicyNet probe = net;
    if (b == 1)
      for (auto& v : probe.params) v += sigma * rng.gaussian();
    BallState ball =
        sample_initial_state(*ctx.balls, rng, ctx.opts.perturbation_scale, sample_cfg, *ctx.env);
    RallyRunner runner(ball, *ctx.env, *ctx.robot, ctx.spec.style, ctx.opts.env_options);
    ObsStack obs;
    while (!runner.done()) {
      obs.push(runner.observed_ball(), runner.paddle(), ctx.spec.style);
      net.normalizer.update(obs.flat());
      PaddleCommand cmd;
      if (runner.tick_index() >= ctx.opts.env_options.decision_delay_ticks)
        cmd = policy_command(probe, obs, runner.paddle(), *ctx.robot);
      runner.step(cmd);
    }
  }
}

}  // namespace

Skill train_policy_skill(const Dataset& dataset, const EsConfig& es_cfg,
                         const RewardConfig& reward_cfg, Rng& rng, const PhysicsEnv& env,
                         const RobotParams& robot, const PolicyTrainOptions& opts,
                         TrainingCurve* curve, const PolicyNet* init) {
  Dataset balls = filter_dataset(dataset, opts.style, opts.topspin_only);
  if (balls.size() == 0) throw std::runtime_error("train_policy_skill: no matching balls");

  SkillSpec spec;
  spec.id = -1;
  spec.name = "policy";
  spec.style = opts.style;
  spec.kind = SkillKind::Generalist;

  TrainContext ctx{&balls, &env, &robot, &reward_cfg, opts, spec};
  PolicyNet net = init ? *init : PolicyNet::zero();

  for (int it = 0; it < opts.iterations; ++it) {
    Rng iter_rng = rng.child(0xA11CE000ULL + it);
    update_normalizer(net, ctx, es_cfg.perturbation_std, iter_rng);
    const RunningNormalizer frozen = net.normalizer;
    auto evaluate = [&](const ParamVector& p, Rng& r) {
      PolicyNet cand = net;
      cand.params = p;
      cand.normalizer = frozen;
      const double f = rollout_fitness(cand, ctx, r);
      if (!std::isfinite(f)) throw std::runtime_error("train_policy_skill: fitness diverged");
      return f;
    };
    EsStepStats stats;
    Rng step_rng = rng.child(0xE5000000ULL + it);
    net.params = es_step(net.params, evaluate, es_cfg, step_rng, &stats);
    if (curve) curve->add(it, stats);
  }
  return Skill(spec, net);
}

Skill topspin_correct(const Skill& skill, const Dataset& dataset, const EsConfig& base_cfg,
                      const RewardConfig& reward_cfg, Rng& rng, const PhysicsEnv& env,
                      const RobotParams& robot, const TopspinCorrectOptions& opts) {
  if (!skill.is_policy())
    throw std::invalid_argument("topspin_correct: only policy skills are tunable");
  bool any_topspin = false;
  for (const auto& r : dataset.records())
    if (!r.is_serve && (r.categories & kCategoryTopspin)) any_topspin = true;
  if (!any_topspin) throw std::runtime_error("topspin_correct: no topspin records");

  // Stage 1: fine-tune on topspin balls with spin-conditioned contact and
  // the shaping rewards enabled.
  RewardConfig shaped = reward_cfg;
  shaped.enable_net_height = true;
  shaped.enable_contact_angle = true;
  PolicyTrainOptions stage1 = opts.train;
  stage1.style = skill.spec().style;
  stage1.topspin_only = true;
  stage1.iterations = opts.stage1_iterations;
  stage1.env_options.spin_conditioned_contact = true;
  Skill corrected = train_policy_skill(dataset, base_cfg, shaped, rng, env, robot, stage1, nullptr,
                                       &skill.policy());

  // Stage 2: attach an identity FiLM adapter and train only its parameters
  // under the adapter preset within the episode budget.
  EsConfig film_cfg = EsConfig::preset("adapter");
  PolicyNet net = corrected.policy();
  net.film = FilmAdapter::identity(kActionDim, kObsFeatures);

  Dataset balls = filter_dataset(dataset, skill.spec().style, true);
  TrainContext ctx{&balls, &env, &robot, &shaped, stage1, corrected.spec()};
  const int episodes_per_iter =
      2 * film_cfg.num_perturbations * film_cfg.rollouts_per_perturbation;
  const int film_iters = std::max(1, opts.film_episode_budget / episodes_per_iter);

  ParamVector film_params = net.film->params;
  for (int it = 0; it < film_iters; ++it) {
    const RunningNormalizer frozen = net.normalizer;
    auto evaluate = [&](const ParamVector& p, Rng& r) {
      PolicyNet cand = net;
      cand.film->params = p;
      cand.normalizer = frozen;
      return rollout_fitness(cand, ctx, r);
    };
    Rng step_rng = rng.child(0xF117A000ULL + it);
    film_params = es_step(film_params, evaluate, film_cfg, step_rng);
  }
  net.film->params = film_params;
  return Skill(corrected.spec(), net);
}

// ---------------------------------------------------------------------------
// Persistence

void save_policy(const PolicyNet& policy, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << policy.params.size() << "\n";
  char buf[64];
  for (double v : policy.params) {
    std::snprintf(buf, sizeof(buf), "%.17g\n", v);
    out << buf;
  }
  out << "normalizer\n" << policy.normalizer.serialize();
  if (policy.film) {
    out << "film " << policy.film->action_dim << " " << policy.film->feature_dim << "\n";
    for (double v : policy.film->params) {
      std::snprintf(buf, sizeof(buf), "%.17g\n", v);
      out << buf;
    }
  }
}

PolicyNet load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  size_t n = 0;
  in >> n;
  PolicyNet net;
  net.params.resize(n);
  for (size_t i = 0; i < n; ++i) in >> net.params[i];
  std::string word;
  in >> word;
  if (word != "normalizer") throw std::runtime_error("bad policy file: " + path);
  long count;
  size_t dim;
  in >> count >> dim;
  std::ostringstream rest;
  rest << count << " " << dim << "\n";
  std::string line;
  std::getline(in, line);
  for (int i = 0; i < 2; ++i) {
    std::getline(in, line);
    rest << line << "\n";
  }
  net.normalizer = RunningNormalizer::deserialize(rest.str());
  if (in >> word && word == "film") {
    int ad = 0, fd = 0;
    in >> ad >> fd;
    FilmAdapter f = FilmAdapter::identity(ad, fd);
    for (auto& v : f.params) in >> v;
    net.film = f;
  }
  return net;
}

}  // namespace ttsim
