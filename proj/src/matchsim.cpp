#include "ttsim/matchsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ttsim {

const char* rule_variant_name(RuleVariant v) {
  return v == RuleVariant::MainRules ? "main" : "alternating";
}

RuleVariant rule_variant_from_name(const std::string& s) {
  if (s == "main") return RuleVariant::MainRules;
  if (s == "alternating") return RuleVariant::AlternatingServes;
  throw std::invalid_argument("unknown rule variant: " + s);
}

ServingSide MatchState::serving_side() const {
  if (variant == RuleVariant::MainRules) return ServingSide::Human;
  const ServingSide opener = game_index % 2 == 0 ? ServingSide::Human : ServingSide::Robot;
  const bool flipped = (points_in_game() / 2) % 2 == 1;
  if (!flipped) return opener;
  return opener == ServingSide::Human ? ServingSide::Robot : ServingSide::Human;
}

void score_point(MatchState& match, PointWinner winner) {
  if (match.match_over()) throw std::logic_error("score_point: match is over");
  match.game_just_ended = false;
  if (winner == PointWinner::Robot)
    ++match.points_robot;
  else
    ++match.points_human;

  const int leader = std::max(match.points_robot, match.points_human);
  const int margin = std::abs(match.points_robot - match.points_human);
  const bool win_by_two = leader >= 11 && margin >= 2;
  const bool capped = leader >= 20;
  if (win_by_two || capped) {
    if (match.points_robot > match.points_human)
      ++match.games_robot;
    else
      ++match.games_human;
    if (match.game_index < 3)
      match.completed_games[match.game_index] = {match.points_human, match.points_robot};
    match.game_just_ended = true;
    ++match.game_index;
    match.points_robot = 0;
    match.points_human = 0;
  }
}

void score_let(MatchState& match) {
  if (match.match_over()) throw std::logic_error("score_let: match is over");
  ++match.let_count;
}

PointEngine::PointEngine(RuleVariant variant, ServingSide serving)
    : variant_(variant), serving_(serving) {}

std::optional<PointWinner> PointEngine::feed(PointEvent event) {
  if (finished_) throw std::logic_error("PointEngine: point already resolved");
  const bool human_own_serve =
      variant_ == RuleVariant::AlternatingServes && serving_ == ServingSide::Human;

  switch (event) {
    case PointEvent::HumanServeFault:
      if (in_play_) throw std::logic_error("PointEngine: serve fault after the ball is in play");
      if (human_own_serve) {
        winner_ = PointWinner::Robot;  // normal rules on the human's own serve
        finished_ = true;
      } else {
        let_ = true;
        finished_ = true;
      }
      break;
    case PointEvent::RobotFailedServeReturn:
      if (in_play_) throw std::logic_error("PointEngine: serve-return event after in-play");
      if (human_own_serve) {
        winner_ = PointWinner::Human;
        finished_ = true;
      } else {
        // Points cannot be scored before the robot's return lands.
        let_ = true;
        finished_ = true;
      }
      break;
    case PointEvent::RobotReturnedServe:
      if (in_play_) throw std::logic_error("PointEngine: duplicate serve return");
      in_play_ = true;
      break;
    case PointEvent::RobotFailedReturn:
      if (!in_play_) throw std::logic_error("PointEngine: rally event before in-play");
      winner_ = PointWinner::Human;
      finished_ = true;
      break;
    case PointEvent::RobotReturned:
      if (!in_play_) throw std::logic_error("PointEngine: rally event before in-play");
      break;
    case PointEvent::HumanFailedReturn:
      if (!in_play_) throw std::logic_error("PointEngine: rally event before in-play");
      winner_ = PointWinner::Robot;
      finished_ = true;
      break;
    case PointEvent::HumanReturned:
      if (!in_play_) throw std::logic_error("PointEngine: rally event before in-play");
      break;
    case PointEvent::HighBallLet:
    case PointEvent::ProtectiveStopLet:
      let_ = true;
      finished_ = true;
      break;
  }
  return winner_;
}

// ---------------------------------------------------------------------------
// Opponents

const char* tier_name(OpponentTier t) {
  switch (t) {
    case OpponentTier::Beginner: return "beginner";
    case OpponentTier::Intermediate: return "intermediate";
    case OpponentTier::Advanced: return "advanced";
    case OpponentTier::AdvancedPlus: return "advanced_plus";
  }
  return "?";
}

OpponentTier tier_from_name(const std::string& s) {
  if (s == "beginner") return OpponentTier::Beginner;
  if (s == "intermediate") return OpponentTier::Intermediate;
  if (s == "advanced") return OpponentTier::Advanced;
  if (s == "advanced_plus") return OpponentTier::AdvancedPlus;
  throw std::invalid_argument("unknown tier: " + s);
}

OpponentProfile OpponentProfile::preset(OpponentTier tier) {
  OpponentProfile p;
  p.tier = tier;
  p.id = tier_name(tier);
  switch (tier) {
    case OpponentTier::Beginner:
      p.serve_drive_fraction = 0.12;
      p.serve_underspin_fraction = 0.10;
      p.rally_speed_min = 3.6;
      p.rally_speed_max = 5.2;
      p.rally_underspin_fraction = 0.08;
      p.return_base = 0.58;
      p.reach_radius = 0.95;
      p.speed_sensitivity = 0.10;
      p.distance_sensitivity = 0.38;
      p.weak_side_penalty = 0.25;
      break;
    case OpponentTier::Intermediate:
      break;  // struct defaults
    case OpponentTier::Advanced:
      p.serve_drive_fraction = 0.45;
      p.serve_underspin_fraction = 0.30;
      p.rally_speed_min = 4.5;
      p.rally_speed_max = 7.2;
      p.rally_underspin_fraction = 0.25;
      p.return_base = 0.88;
      p.reach_radius = 1.25;
      p.speed_sensitivity = 0.05;
      p.distance_sensitivity = 0.16;
      p.weak_side_penalty = 0.10;
      break;
    case OpponentTier::AdvancedPlus:
      p.serve_drive_fraction = 0.55;
      p.serve_underspin_fraction = 0.35;
      p.rally_speed_min = 4.8;
      p.rally_speed_max = 7.8;
      p.rally_underspin_fraction = 0.30;
      p.return_base = 0.94;
      p.reach_radius = 1.35;
      p.speed_sensitivity = 0.04;
      p.distance_sensitivity = 0.12;
      p.weak_side_penalty = 0.06;
      break;
  }
  return p;
}

OpponentProfile OpponentProfile::preset(const std::string& name) {
  if (name == "exploiter") {
    OpponentProfile p = preset(OpponentTier::Intermediate);
    p.id = "exploiter";
    p.exploit_from_game = 1;  // games 2 and 3
    return p;
  }
  if (name == "never_returns") {
    OpponentProfile p = preset(OpponentTier::Beginner);
    p.id = "never_returns";
    p.return_base = 0.0;
    p.reach_radius = 0.0;
    return p;
  }
  return preset(tier_from_name(name));
}

namespace {

// A serve is playable when its robot-side bounce is deep enough to carry
// into the paddle zone; legal-but-double-bouncing serves stall the match in
// endless lets under the no-score-before-return rule.
bool serve_is_playable(const BallState& serve, const PhysicsEnv& env) {
  SimulateOptions opt;
  opt.horizon = 2.5;
  opt.record_dt = 0.02;
  Trajectory traj = simulate_trajectory(serve, env.flight, env.contact, env.geom, opt);
  double opp_t = -1.0, net_t = -1.0, robot_t = -1.0, robot_y = 0.0;
  for (const auto& e : traj.events) {
    if (e.type == TrajEventType::NetFault) return false;
    if (e.type == TrajEventType::BounceOpponentSide && opp_t < 0) opp_t = e.t;
    if (e.type == TrajEventType::NetCross && net_t < 0) net_t = e.t;
    if (e.type == TrajEventType::BounceRobotSide && robot_t < 0) {
      robot_t = e.t;
      robot_y = e.position.y;
    }
  }
  if (opp_t < 0 || net_t < 0 || robot_t < 0) return false;
  if (!(opp_t < net_t && net_t < robot_t)) return false;
  if (robot_y > -0.45) return false;  // too short
  double second_bounce_t = 1e300;
  bool seen_first = false;
  for (const auto& e : traj.events) {
    if (e.type != TrajEventType::BounceRobotSide) continue;
    if (!seen_first) {
      seen_first = true;
    } else {
      second_bounce_t = e.t;
      break;
    }
  }
  for (const auto& p : traj.points) {
    if (p.t <= robot_t || p.t >= second_bounce_t) continue;
    if (p.state.position.y <= -1.12 && p.state.position.z >= 0.05) return true;
  }
  return false;
}

}  // namespace

StyleSide opponent_side_of(double landing_x) {
  if (landing_x < -0.2) return StyleSide::Forehand;  // opponent faces the robot
  if (landing_x > 0.2) return StyleSide::Backhand;
  return StyleSide::Center;
}

double opponent_return_probability(const OpponentProfile& profile, const Vec2& landing,
                                   double landing_speed) {
  const double dx = landing.x - profile.position.x;
  const double dy = profile.depth_weight * (landing.y - profile.position.y);
  const double dist = std::sqrt(dx * dx + dy * dy);
  if (dist > profile.reach_radius) return 0.0;
  double p = profile.return_base;
  p -= profile.speed_sensitivity * std::max(0.0, landing_speed - profile.speed_comfort);
  p -= profile.distance_sensitivity * dist;
  if (opponent_side_of(landing.x) == profile.weak_side) p -= profile.weak_side_penalty;
  return std::clamp(p, 0.0, 1.0);
}

std::optional<BallState> opponent_shot(const OpponentProfile& profile, const ShotContext& ctx,
                                       const PhysicsEnv& env, Rng& rng) {
  const bool exploit = profile.exploit_active(ctx.game_index);
  if (!ctx.serve) {
    const double p = opponent_return_probability(profile, ctx.our_landing, ctx.our_landing_speed);
    if (rng.uniform() >= p) return std::nullopt;
  }

  for (int attempt = 0; attempt < 240; ++attempt) {
    BallState b;
    double speed, spin;
    double serve_vz = 0.0;
    if (ctx.serve) {
      const bool drive = !exploit && rng.uniform() < profile.serve_drive_fraction;
      b.position = {std::clamp(rng.gaussian() * profile.serve_placement_std, -0.5, 0.5),
                    rng.uniform(1.48, 1.64), rng.uniform(0.37, 0.46)};
      if (drive) {
        speed = rng.uniform(6.0, 7.4);
        serve_vz = rng.uniform(0.30, 0.80);
      } else {
        speed = exploit ? rng.uniform(profile.exploit_speed_min, profile.exploit_speed_max)
                        : rng.uniform(4.5, 5.6);
        serve_vz = rng.uniform(-0.80, -0.10);
      }
      const double under_frac =
          exploit ? profile.exploit_underspin_fraction : profile.serve_underspin_fraction;
      if (rng.uniform() < under_frac)
        spin = exploit ? rng.uniform(profile.exploit_spin_lo, profile.exploit_spin_hi)
                       : rng.uniform(profile.serve_underspin_lo, profile.serve_underspin_hi);
      else
        spin = rng.uniform(profile.serve_other_spin_lo, profile.serve_other_spin_hi);
    } else {
      b.position = {std::clamp(0.6 * ctx.our_landing.x + 0.4 * profile.position.x +
                                   rng.gaussian() * 0.10,
                               -0.65, 0.65),
                    rng.uniform(1.30, 1.75), rng.uniform(0.25, 0.50)};
      speed = exploit
                  ? rng.uniform(profile.exploit_speed_min, profile.exploit_speed_max)
                  : std::clamp(rng.uniform(profile.rally_speed_min, profile.rally_speed_max) +
                                   profile.speed_carry * (ctx.our_landing_speed - 5.0),
                               3.2, 8.5);
      const double under_frac =
          exploit ? profile.exploit_underspin_fraction : profile.rally_underspin_fraction;
      if (rng.uniform() < under_frac)
        spin = exploit ? rng.uniform(profile.exploit_spin_lo, profile.exploit_spin_hi)
                       : rng.uniform(profile.rally_underspin_lo, profile.rally_underspin_hi);
      else
        spin = rng.uniform(profile.rally_topspin_lo, profile.rally_topspin_hi);
    }

    const double aim_x = std::clamp(rng.gaussian() * profile.rally_aim_std, -0.55, 0.55);
    const double fly_y = b.position.y - (ctx.serve ? -0.9 : -0.9);  // toward the robot half
    (void)fly_y;
    const double vy = -speed;
    const double vx = (aim_x - b.position.x) / (b.position.y + 1.0) * std::abs(vy) * 0.45;
    double rally_vz = rng.uniform(0.4, 1.9) - 0.006 * std::max(0.0, spin);
    // Heavy-underspin skidders live on a correlated speed/arc band: the
    // backspin lift carries flat launches long, so faster means flatter.
    if (exploit && !ctx.serve) rally_vz = 2.35 - 0.55 * speed + rng.uniform(-0.12, 0.12);
    const double vz = ctx.serve ? serve_vz : rally_vz;
    b.velocity = {vx, vy, vz};
    b.spin = {spin, 0.0, 0.0};
    if (!b.finite()) continue;
    if (ctx.serve) {
      if (serve_is_playable(b, env)) return b;
    } else if (validate_incoming_trajectory(b, false, env)) {
      return b;
    }
  }
  return std::nullopt;  // could not produce a legal ball: counts as a miss
}

// ---------------------------------------------------------------------------
// Latency and randomization

int LatencyModel::sample_ticks(double mean_ms, double var, Rng& rng, double tick_ms) const {
  if (!enabled) return 0;
  const double ms = std::max(0.0, rng.gaussian(mean_ms, std::sqrt(var)));
  return static_cast<int>(std::llround(ms / tick_ms));
}

ContactParams randomized_contact(const ContactParams& nominal, const RandomizationRanges& r,
                                 Rng& rng) {
  ContactParams out = nominal;
  out.table_restitution_normal = std::clamp(
      nominal.table_restitution_normal +
          rng.uniform(r.table_damping_lo, r.table_damping_hi) * r.damping_to_restitution,
      0.0, 1.0);
  const double paddle_off =
      rng.uniform(r.paddle_damping_lo, r.paddle_damping_hi) * r.damping_to_restitution;
  out.paddle_restitution_topspin = std::clamp(nominal.paddle_restitution_topspin + paddle_off, 0.0, 1.0);
  out.paddle_restitution_underspin =
      std::clamp(nominal.paddle_restitution_underspin + paddle_off, 0.0, 1.0);
  out.paddle_friction =
      std::max(0.0, nominal.paddle_friction + rng.uniform(r.paddle_friction_lo, r.paddle_friction_hi));
  out.table_friction =
      std::max(0.0, nominal.table_friction + rng.uniform(r.table_friction_lo, r.table_friction_hi));
  return out;
}

// ---------------------------------------------------------------------------
// Match orchestration

void RobotStack::rebuild_table_ptrs() {
  table_ptrs.assign(skills.size(), nullptr);
  for (const auto& t : tables)
    if (t.skill_id() >= 0 && t.skill_id() < static_cast<int>(table_ptrs.size()))
      table_ptrs[t.skill_id()] = &t;
}

namespace {

std::vector<SkillSpec> roster_specs(const RobotStack& stack) {
  std::vector<SkillSpec> specs;
  specs.reserve(stack.skills.size());
  for (const auto& s : stack.skills) specs.push_back(s.spec());
  return specs;
}

void log_event(std::vector<EventRow>* log, const MatchState& match, int point, int sub, double t,
               const std::string& event, const BallState& ball, int skill_id,
               const std::string& detail) {
  if (!log) return;
  log->push_back({match.game_index, point, sub, t, event, ball, skill_id, detail});
}

// Scripted opponent paddle swing consistent with the serve's spin class,
// so the spin classifier sees the same kind of evidence it trained on.
std::vector<double> serve_spin_features(const BallState& serve, Rng& rng) {
  const bool underspin = serve.spin.x < -25.0;
  std::vector<PaddleBallFrame> track;
  const double dt = 1.0 / 125.0;
  for (int f = 0; f < 8; ++f) {
    const double u = f / 7.0;
    PaddleBallFrame frame;
    frame.t = f * dt;
    frame.ball_position = serve.position + Vec3{0, 0.05 * (1 - u), 0.10 * (1 - u) * (1 - u)};
    if (underspin) {
      frame.paddle_position = frame.ball_position + Vec3{0, 0.3 * (1 - u), 0.45 * (1 - u) + 0.02};
      const double pitch = 0.25 + 0.55 * u;
      frame.paddle_normal = Vec3{0, -std::cos(pitch), std::sin(pitch)}.normalized();
    } else {
      frame.paddle_position = frame.ball_position + Vec3{0, 0.3 * (1 - u), -0.40 * (1 - u) - 0.02};
      const double pitch = 0.15 - 0.30 * u;
      frame.paddle_normal = Vec3{0, -std::cos(pitch), std::sin(pitch)}.normalized();
    }
    frame.paddle_position += Vec3{rng.gaussian(), rng.gaussian(), rng.gaussian()} * 0.01;
    frame.ball_position += Vec3{rng.gaussian(), rng.gaussian(), rng.gaussian()} * 0.01;
    track.push_back(frame);
  }
  return extract_spin_features(track);
}

struct DecisionInputs {
  std::vector<double> obs_flat;
  double intercept_x = 0.0;
  Vec2 incoming_landing{0.0, -0.8};
};

DecisionInputs decision_inputs(const BallState& ball, const RobotStack& stack) {
  DecisionInputs in;
  ObsStack obs;
  PaddleState paddle;
  paddle.position = stack.robot.home_position;
  paddle.normal = {0, 1, 0};
  obs.push(ball, paddle, StyleSide::Center);
  // One control tick of flight before the decision.
  BallState later = ball;
  const int substeps = static_cast<int>(std::llround(1.0 / stack.robot.control_hz /
                                                     stack.env.flight.dt));
  for (int i = 0; i < substeps; ++i) later = step_flight(later, stack.env.flight);
  obs.push(later, paddle, StyleSide::Center);
  in.obs_flat = obs.flat();

  double ix = 0.0;
  if (auto side = annotate_style_side(ball, stack.env.flight, stack.env.contact, stack.env.geom, &ix))
    in.intercept_x = ix;
  SimulateOptions opt;
  opt.horizon = 2.5;
  Trajectory traj = simulate_trajectory(ball, stack.env.flight, stack.env.contact, stack.env.geom, opt);
  if (const TrajEvent* bounce = traj.first(TrajEventType::BounceRobotSide))
    in.incoming_landing = {bounce->position.x, bounce->position.y};
  return in;
}

}  // namespace

PointResult run_point(MatchState& match, RobotStack& stack, const OpponentProfile& profile,
                      PreferenceState& prefs, OpponentStats& opp_stats, Rng& rng,
                      std::vector<EventRow>* log) {
  PointResult out;
  PointEngine engine(match.variant, match.serving_side());
  const int point_number = match.points_in_game();
  const std::vector<SkillSpec> specs = roster_specs(stack);
  const double tick_ms = 1000.0 / stack.robot.control_hz;

  ShotContext ctx;
  ctx.serve = true;
  ctx.game_index = match.game_index;
  int sub = 0;

  while (!engine.finished()) {
    if (stack.protective_stop_prob > 0.0 && rng.uniform() < stack.protective_stop_prob) {
      engine.feed(PointEvent::ProtectiveStopLet);
      log_event(log, match, point_number, sub, 0.0, "let_protective_stop", {}, -1, "");
      break;
    }

    std::optional<BallState> incoming = opponent_shot(profile, ctx, stack.env, rng);
    if (!incoming) {
      if (ctx.serve) {
        engine.feed(PointEvent::HumanServeFault);
        log_event(log, match, point_number, sub, 0.0, "serve_fault", {}, -1, "");
      } else {
        opp_stats.record(ctx.our_landing_side, false);
        engine.feed(PointEvent::HumanFailedReturn);
        log_event(log, match, point_number, sub, 0.0, "opponent_miss", {}, -1, "");
      }
      break;
    }
    if (!ctx.serve) {
      opp_stats.record(ctx.our_landing_side, true);
      engine.feed(PointEvent::HumanReturned);
    }
    ++out.opponent_hits;
    log_event(log, match, point_number, sub, 0.0, ctx.serve ? "opponent_serve" : "opponent_hit",
              *incoming, -1, "");

    // Exactly one HLC decision, one control tick after the hit.
    DecisionInputs in = decision_inputs(*incoming, stack);
    std::vector<double> spin_features;
    if (ctx.serve && stack.spin) {
      Rng feature_rng = rng.child(0xF3A7ULL + out.opponent_hits);
      spin_features = serve_spin_features(*incoming, feature_rng);
    }

    HlcDecision decision;
    if (stack.uniform_random_skill && !ctx.serve) {
      // Ablation baseline: uniform choice across the whole rally roster.
      std::vector<int> candidates;
      for (const auto& s : specs)
        if (!s.is_serve_receiver) candidates.push_back(s.id);
      decision.skill_id = candidates[rng.uniform_int(static_cast<int>(candidates.size()))];
      decision.style = specs[decision.skill_id].style;
    } else {
      HlcContext hctx;
      hctx.roster = &specs;
      hctx.tables = &stack.table_ptrs;
      hctx.style = &stack.style;
      hctx.spin = stack.spin ? &*stack.spin : nullptr;
      hctx.prefs = &prefs;
      hctx.opponent = &opp_stats;
      hctx.strategy = stack.strategy;
      decision = hlc_act(*incoming, ctx.serve, in.obs_flat, in.intercept_x, in.incoming_landing,
                         spin_features, hctx, rng);
      if (decision.chosen_entry >= 0)
        ++out.decisions_by_heuristic[decision.shortlist.entries[decision.chosen_entry].heuristic];
    }
    ++out.decisions;
    log_event(log, match, point_number, sub, tick_ms / 1000.0, "decision", *incoming,
              decision.skill_id,
              std::string(style_name(decision.style)) +
                  (ctx.serve ? (decision.spin == SpinClass::Underspin ? "/underspin" : "/topspin")
                             : ""));

    // Execute the sub-episode with latency injection.
    EnvOptions opt = stack.episode_options;
    opt.decision_delay_ticks = stack.decision_delay_ticks;
    opt.obs_delay_ticks = stack.latency.sample_ticks(stack.latency.ball_obs_mean_ms,
                                                     stack.latency.ball_obs_var, rng, tick_ms);
    opt.action_delay_ticks =
        stack.latency.sample_ticks(stack.latency.action_mean_ms, stack.latency.action_var, rng,
                                   tick_ms);
    if (ctx.serve) opt.predicted_spin = decision.spin;

    EpisodeResult episode;
    if (stack.redecide_every_k > 0) {
      // Re-deciding HLC: resample from the shortlist distribution every k
      // ticks; a switch abandons the committed stroke.
      const Skill* current = &stack.skills[decision.skill_id];
      HlcDecision base = decision;
      auto chooser = [&](int tick, const BallState& observed) -> const Skill* {
        if (tick == 0 || ctx.serve) return current;
        if (tick % stack.redecide_every_k != 0) return current;
        Rng pick_rng = rng.child(0x9EDEC1DEULL + tick);
        const int entry = sample_index(base.selection_probabilities, pick_rng);
        current = &stack.skills[base.shortlist.entries[entry].skill_id];
        return current;
      };
      Rng episode_rng = rng.child(0xE915ULL + out.opponent_hits);
      episode = run_switchable_episode(chooser, *incoming, stack.env, stack.robot, episode_rng, opt);
      out.decisions += episode.decisions - 1;
    } else {
      Rng episode_rng = rng.child(0xE915ULL + out.opponent_hits);
      episode = run_skill_episode(stack.skills[decision.skill_id], *incoming, stack.env,
                                  stack.robot, episode_rng, opt);
    }

    out.incoming_spin_outcomes.push_back({incoming->spin.x, episode.landed});

    if (episode.high_ball) {
      engine.feed(PointEvent::HighBallLet);
      log_event(log, match, point_number, sub, episode.end_t, "let_high_ball", *incoming,
                decision.skill_id, "");
      break;
    }

    out.shots.push_back({decision.skill_id, episode.landed ? 1.0 : 0.0});
    if (stack.online_descriptor_update && !ctx.serve && episode.hit &&
        decision.skill_id < static_cast<int>(stack.table_ptrs.size()) &&
        stack.table_ptrs[decision.skill_id]) {
      SkillMetrics observed;
      observed.land_rate = episode.landed ? 1.0 : 0.0;
      observed.hit_velocity_y = episode.hit_velocity_y;
      observed.landing_mean = episode.landing;
      observed.sample_count = 1;
      const_cast<DescriptorTable*>(stack.table_ptrs[decision.skill_id])
          ->update_with_real(ball_key(*incoming), observed);
    }

    if (!episode.landed) {
      const char* what = !episode.hit ? "robot_miss" : "robot_out";
      log_event(log, match, point_number, sub, episode.end_t, what, *incoming, decision.skill_id,
                "");
      engine.feed(engine.ball_in_play() ? PointEvent::RobotFailedReturn
                                        : PointEvent::RobotFailedServeReturn);
      break;
    }

    engine.feed(engine.ball_in_play() ? PointEvent::RobotReturned
                                      : PointEvent::RobotReturnedServe);
    log_event(log, match, point_number, sub, episode.contact_t, "robot_return", *incoming,
              decision.skill_id, "");

    ctx.serve = false;
    ctx.our_landing = episode.landing;
    ctx.our_landing_speed = episode.landing_speed;
    ctx.our_landing_side = opponent_side_of(episode.landing.x);
    ++sub;
  }

  if (!engine.was_let()) out.winner = engine.winner();
  log_event(log, match, point_number, sub, 0.0, "point_end", {}, -1,
            out.winner ? (*out.winner == PointWinner::Robot ? "robot" : "human") : "let");
  return out;
}

MatchReport run_match(RobotStack& stack, const OpponentProfile& profile, Rng& rng,
                      RuleVariant variant, OpponentStore& store, std::vector<EventRow>* log) {
  OpponentRecord& rec =
      store.get_or_create(profile.id, stack.skills.size(), stack.bandit_alpha);
  PreferenceState& prefs = rec.prefs;
  if (rec.games_played == 0) prefs.reset_to_baseline();

  MatchReport report;
  report.opponent_id = profile.id;
  report.variant = variant;
  report.seed = rng.seed();
  report.h_start = prefs.h;

  // Spin buckets in incoming spin.x (rad/s), Fig.-6 style.
  for (double lo = -125.0; lo < 125.0; lo += 50.0)
    report.spin_buckets.push_back({lo, lo + 50.0, 0, 0});

  MatchState match;
  match.variant = variant;

  long point_counter = 0;
  int consecutive_lets = 0;
  while (!match.match_over()) {
    Rng point_rng = rng.child(0x90107000ULL + point_counter);
    PointResult pr = run_point(match, stack, profile, prefs, rec.stats, point_rng, log);
    ++point_counter;

    report.opponent_hits += pr.opponent_hits;
    report.decisions += pr.decisions;
    for (int h = 0; h < 5; ++h) report.heuristic_usage[h] += pr.decisions_by_heuristic[h];
    for (const auto& [spin, landed] : pr.incoming_spin_outcomes) {
      for (auto& bucket : report.spin_buckets) {
        if (spin >= bucket.lo && spin < bucket.hi) {
          ++bucket.attempts;
          if (landed) ++bucket.returns;
          break;
        }
      }
    }
    for (const auto& s : pr.shots) report.shot_log.push_back(s);

    // Preference updates run between points over the point's shot batch.
    if (!pr.shots.empty()) update_preferences(pr.shots, prefs);

    const int game_before = match.game_index;
    if (pr.winner) {
      consecutive_lets = 0;
      score_point(match, *pr.winner);
    } else {
      if (++consecutive_lets > 200)
        throw std::runtime_error("run_match: point stalled in lets (diagnostic)");
      score_let(match);
    }
    if (match.game_just_ended) {
      report.games[game_before] = {match.completed_games[game_before][0],
                                   match.completed_games[game_before][1]};
      report.h_per_game_end.push_back(prefs.h);
    }
  }

  report.games_robot = match.games_robot;
  report.games_human = match.games_human;
  report.lets = match.let_count;
  report.h_end = prefs.h;
  ++rec.games_played;
  return report;
}

void write_event_log_csv(const std::vector<EventRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "game,point,sub,t,event,px,py,pz,vx,vy,vz,wx,wy,wz,skill,detail\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.4f,%s,%.4g,%.4g,%.4g,%.4g,%.4g,%.4g,%.4g,%.4g,%.4g,%d,%s\n",
                  r.game, r.point, r.sub_episode, r.t, r.event.c_str(), r.ball.position.x,
                  r.ball.position.y, r.ball.position.z, r.ball.velocity.x, r.ball.velocity.y,
                  r.ball.velocity.z, r.ball.spin.x, r.ball.spin.y, r.ball.spin.z, r.skill_id,
                  r.detail.c_str());
    out << buf;
  }
}

void write_match_report_csv(const MatchReport& report, const std::string& prefix) {
  {
    std::ofstream out(prefix + "_games.csv");
    if (!out) throw std::runtime_error("cannot open " + prefix + "_games.csv");
    out << "opponent,variant,seed,config_hash,game,human,robot,lets,opponent_hits,decisions\n";
    for (int g = 0; g < 3; ++g)
      out << report.opponent_id << ',' << rule_variant_name(report.variant) << ',' << report.seed
          << ',' << report.config_hash << ',' << g + 1 << ',' << report.games[g][0] << ','
          << report.games[g][1] << ',' << report.lets << ',' << report.opponent_hits << ','
          << report.decisions << "\n";
  }
  {
    std::ofstream out(prefix + "_spin.csv");
    out << "spin_lo,spin_hi,attempts,returns,return_rate\n";
    char buf[128];
    for (const auto& b : report.spin_buckets) {
      std::snprintf(buf, sizeof(buf), "%.0f,%.0f,%ld,%ld,%.4f\n", b.lo, b.hi, b.attempts,
                    b.returns, b.attempts ? double(b.returns) / b.attempts : 0.0);
      out << buf;
    }
  }
  {
    // Per-skill preference trajectory: H after each game plus the
    // percentage change in selection probability relative to the start.
    std::ofstream out(prefix + "_hvalues.csv");
    out << "skill,h_start";
    for (size_t g = 0; g < report.h_per_game_end.size(); ++g) out << ",h_game" << g + 1;
    out << ",h_end";
    for (size_t g = 0; g < report.h_per_game_end.size(); ++g)
      out << ",prob_change_pct_game" << g + 1;
    out << "\n";
    const std::vector<double> p0 = softmax(report.h_start);
    std::vector<std::vector<double>> pg;
    for (const auto& h : report.h_per_game_end) pg.push_back(softmax(h));
    char buf[64];
    for (size_t i = 0; i < report.h_start.size(); ++i) {
      out << i;
      std::snprintf(buf, sizeof(buf), ",%.6f", report.h_start[i]);
      out << buf;
      for (const auto& h : report.h_per_game_end) {
        std::snprintf(buf, sizeof(buf), ",%.6f", h[i]);
        out << buf;
      }
      std::snprintf(buf, sizeof(buf), ",%.6f", report.h_end[i]);
      out << buf;
      for (const auto& probs : pg) {
        const double pct = p0[i] > 0 ? 100.0 * (probs[i] - p0[i]) / p0[i] : 0.0;
        std::snprintf(buf, sizeof(buf), ",%.2f", pct);
        out << buf;
      }
      out << "\n";
    }
  }
  {
    std::ofstream out(prefix + "_heuristics.csv");
    out << "heuristic,uses\n";
    const char* names[5] = {"random_high_land", "fast_hit", "far_landing", "weak_side",
                            "overall_skill"};
    for (int h = 0; h < 5; ++h) out << names[h] << ',' << report.heuristic_usage[h] << "\n";
  }
}

std::vector<TimingAblationRow> ablate_decision_timing(RobotStack& stack,
                                                      const std::vector<BallState>& corpus,
                                                      Rng& rng) {
  const std::vector<SkillSpec> specs = roster_specs(stack);
  PreferenceState prefs = PreferenceState::make(stack.skills.size(), stack.bandit_alpha);
  OpponentStats opp;

  auto evaluate = [&](int wait_ticks, int redecide_k, std::uint64_t salt) {
    int hit = 0, land = 0;
    for (size_t i = 0; i < corpus.size(); ++i) {
      Rng ball_rng = rng.child(salt + i);
      DecisionInputs in = decision_inputs(corpus[i], stack);
      HlcContext hctx;
      hctx.roster = &specs;
      hctx.tables = &stack.table_ptrs;
      hctx.style = &stack.style;
      hctx.prefs = &prefs;
      hctx.opponent = &opp;
      hctx.strategy = stack.strategy;
      HlcDecision decision = hlc_act(corpus[i], false, in.obs_flat, in.intercept_x,
                                     in.incoming_landing, {}, hctx, ball_rng);

      EnvOptions opt = stack.episode_options;
      opt.decision_delay_ticks = wait_ticks;
      const double tick_ms = 1000.0 / stack.robot.control_hz;
      opt.obs_delay_ticks = stack.latency.sample_ticks(stack.latency.ball_obs_mean_ms,
                                                       stack.latency.ball_obs_var, ball_rng,
                                                       tick_ms);
      opt.action_delay_ticks = stack.latency.sample_ticks(
          stack.latency.action_mean_ms, stack.latency.action_var, ball_rng, tick_ms);
      EpisodeResult episode;
      if (redecide_k > 0) {
        const Skill* current = &stack.skills[decision.skill_id];
        auto chooser = [&](int tick, const BallState&) -> const Skill* {
          if (tick == 0 || tick % redecide_k != 0) return current;
          Rng pick = ball_rng.child(0xDEC1DEULL + tick);
          const int entry = sample_index(decision.selection_probabilities, pick);
          current = &stack.skills[decision.shortlist.entries[entry].skill_id];
          return current;
        };
        episode = run_switchable_episode(chooser, corpus[i], stack.env, stack.robot, ball_rng, opt);
      } else {
        episode = run_skill_episode(stack.skills[decision.skill_id], corpus[i], stack.env,
                                    stack.robot, ball_rng, opt);
      }
      if (episode.hit) ++hit;
      if (episode.landed) ++land;
    }
    TimingAblationRow row;
    row.balls = static_cast<int>(corpus.size());
    row.hit_rate = double(hit) / corpus.size();
    row.land_rate = double(land) / corpus.size();
    row.miss_rate = 1.0 - row.hit_rate;
    return row;
  };

  std::vector<TimingAblationRow> rows;
  TimingAblationRow wait1 = evaluate(1, 0, 0x3A11);
  wait1.setting = "wait_1_step";
  wait1.paper_reference = "paper wait-1: hit 81% land 39% miss 19%";
  rows.push_back(wait1);
  TimingAblationRow wait3 = evaluate(3, 0, 0x3A11);  // same balls, paired
  wait3.setting = "wait_3_steps";
  wait3.paper_reference = "paper wait-3: hit 69% land 25% miss 31%";
  rows.push_back(wait3);
  TimingAblationRow decisive = evaluate(1, 0, 0x7B22);
  decisive.setting = "decisive";
  decisive.paper_reference = "paper decisive: hit 89% land 64% miss 11%";
  rows.push_back(decisive);
  TimingAblationRow redecide = evaluate(1, 1, 0x7B22);
  redecide.setting = "redecide_every_1";
  redecide.paper_reference = "paper re-decide k=1: hit 75% land 56% miss 12%";
  rows.push_back(redecide);
  return rows;
}

void write_ablation_csv(const std::vector<TimingAblationRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "setting,balls,hit_rate,land_rate,miss_rate,paper_reference\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.4f,%.4f,%.4f,%s\n", r.setting.c_str(), r.balls,
                  r.hit_rate, r.land_rate, r.miss_rate, r.paper_reference.c_str());
    out << buf;
  }
}

std::vector<TournamentRow> run_tournament(RobotStack& stack, int matches_per_tier, Rng& rng,
                                          RuleVariant variant) {
  std::vector<TournamentRow> rows;
  int opponent_counter = 0;
  for (OpponentTier tier : {OpponentTier::Beginner, OpponentTier::Intermediate,
                            OpponentTier::Advanced, OpponentTier::AdvancedPlus}) {
    TournamentRow row;
    row.tier = tier_name(tier);
    row.matches = matches_per_tier;
    int match_wins = 0, game_wins = 0, games_total = 0;
    for (int m = 0; m < matches_per_tier; ++m) {
      OpponentProfile profile = OpponentProfile::preset(tier);
      profile.id = std::string(tier_name(tier)) + "_" + std::to_string(m);
      OpponentStore store;  // fresh opponent each match
      Rng match_rng = rng.child(0x70000000ULL + (++opponent_counter));
      MatchReport report = run_match(stack, profile, match_rng, variant, store);
      if (report.games_robot > report.games_human) ++match_wins;
      game_wins += report.games_robot;
      games_total += 3;
      for (int g = 0; g < 3; ++g) {
        row.points_human += report.games[g][0];
        row.points_robot += report.games[g][1];
      }
    }
    row.match_win_rate = double(match_wins) / matches_per_tier;
    row.game_win_rate = double(game_wins) / games_total;
    const long total_points = row.points_robot + row.points_human;
    row.point_win_rate = total_points > 0 ? double(row.points_robot) / total_points : 0.0;
    rows.push_back(row);
  }
  return rows;
}

void write_tournament_csv(const std::vector<TournamentRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "tier,matches,match_win_rate,game_win_rate,point_win_rate,points_robot,points_human\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.4f,%.4f,%.4f,%ld,%ld\n", r.tier.c_str(), r.matches,
                  r.match_win_rate, r.game_win_rate, r.point_win_rate, r.points_robot,
                  r.points_human);
    out << buf;
  }
}

}  // namespace ttsim
