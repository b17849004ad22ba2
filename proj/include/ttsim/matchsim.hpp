#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ttsim/ballistics.hpp"
#include "ttsim/hlc.hpp"
#include "ttsim/skills.hpp"

namespace ttsim {

// ---------------------------------------------------------------------------
// Rules

enum class RuleVariant { MainRules, AlternatingServes };
enum class PointWinner { Robot, Human };
enum class ServingSide { Human, Robot };

const char* rule_variant_name(RuleVariant v);
RuleVariant rule_variant_from_name(const std::string& s);

struct MatchState {
  int points_human = 0;
  int points_robot = 0;
  int games_human = 0;
  int games_robot = 0;
  int game_index = 0;  // 0..2; 3 when the match is over
  RuleVariant variant = RuleVariant::MainRules;
  int let_count = 0;
  bool game_just_ended = false;  // set by the score_point that closed a game
  std::array<std::array<int, 2>, 3> completed_games{};  // {human, robot} per game

  bool match_over() const { return game_index >= 3; }
  int points_in_game() const { return points_human + points_robot; }

  // MainRules: the human always serves. AlternatingServes: the serve swaps
  // every two points within a game; games alternate the opening server.
  ServingSide serving_side() const;
};

// Increments the winner's points and applies game/match termination: a game
// ends at >= 11 points with a margin of two, or at the 20-point cap; all
// three games are always played. Throws after the match is over.
void score_point(MatchState& match, PointWinner winner);
void score_let(MatchState& match);

// Single-point event grammar, used by the physics loop and the rules
// property suite. Serve-phase failures by the robot never score (the ball
// is in play only after the robot's return lands), except on the human's
// own serve under AlternatingServes where normal rules apply.
enum class PointEvent {
  HumanServeFault,         // serve never legally reached the robot
  RobotFailedServeReturn,  // missed or failed to land the serve return
  RobotReturnedServe,      // serve return landed: ball in play
  RobotFailedReturn,
  RobotReturned,
  HumanFailedReturn,
  HumanReturned,
  HighBallLet,
  ProtectiveStopLet,
};

class PointEngine {
 public:
  PointEngine(RuleVariant variant, ServingSide serving);

  // Feeds one event; returns the resolved outcome once the point ends.
  // Let outcomes are modeled as nullopt + let flag.
  std::optional<PointWinner> feed(PointEvent event);
  bool finished() const { return finished_; }
  bool was_let() const { return let_; }
  bool ball_in_play() const { return in_play_; }
  std::optional<PointWinner> winner() const { return winner_; }

 private:
  RuleVariant variant_;
  ServingSide serving_;
  bool in_play_ = false;
  bool finished_ = false;
  bool let_ = false;
  std::optional<PointWinner> winner_;
};

// ---------------------------------------------------------------------------
// Opponents

enum class OpponentTier { Beginner, Intermediate, Advanced, AdvancedPlus };
const char* tier_name(OpponentTier t);
OpponentTier tier_from_name(const std::string& s);

struct OpponentProfile {
  std::string id = "intermediate";
  OpponentTier tier = OpponentTier::Intermediate;

  // Serve mixture: push serves (slow, flat-to-dropping) vs drive serves
  // (fast, lofted); both live on the physically legal deep-serve manifold.
  double serve_drive_fraction = 0.30;
  double serve_underspin_fraction = 0.2;
  double serve_underspin_lo = -80.0, serve_underspin_hi = -35.0;  // rad/s
  double serve_other_spin_lo = -10.0, serve_other_spin_hi = 35.0;
  double serve_placement_std = 0.25;

  // Rally shot distribution conditioned on the incoming ball.
  double rally_speed_min = 4.0, rally_speed_max = 6.5;
  double rally_underspin_fraction = 0.15;
  double rally_underspin_lo = -70.0, rally_underspin_hi = -30.0;
  double rally_topspin_lo = 0.0, rally_topspin_hi = 80.0;
  double rally_aim_std = 0.3;
  double speed_carry = 0.25;  // fraction of our landing speed echoed back

  // Return-probability model. Depth is cheap for a player to cover, so the
  // effective distance downweights the y component.
  Vec2 position{0.0, 1.60};
  double depth_weight = 0.55;
  double reach_radius = 1.10;
  double return_base = 0.75;
  double speed_comfort = 4.5;
  double speed_sensitivity = 0.07;     // per m/s above comfort
  double distance_sensitivity = 0.25;  // per effective meter from the spot
  StyleSide weak_side = StyleSide::Backhand;  // opponent's weaker wing
  double weak_side_penalty = 0.18;

  // Scripted exploitation: from this game index (0-based) the opponent
  // shifts to heavy underspin at higher rates. Negative disables.
  int exploit_from_game = -1;
  double exploit_underspin_fraction = 0.85;
  double exploit_spin_lo = -110.0, exploit_spin_hi = -60.0;
  double exploit_speed_min = 3.6, exploit_speed_max = 4.6;

  bool exploit_active(int game_index) const {
    return exploit_from_game >= 0 && game_index >= exploit_from_game;
  }

  static OpponentProfile preset(OpponentTier tier);
  static OpponentProfile preset(const std::string& name);  // tier name or "exploiter"
};

struct ShotContext {
  bool serve = false;
  int game_index = 0;
  Vec2 our_landing;         // where the robot's return bounced
  double our_landing_speed = 0.0;
  StyleSide our_landing_side = StyleSide::Center;  // from the opponent's view
};

// Draws the opponent's next ball. For rallies the return-probability model
// runs first; nullopt means the opponent missed. Serves always produce a
// ball (resampled until the trajectory is legal).
std::optional<BallState> opponent_shot(const OpponentProfile& profile, const ShotContext& ctx,
                                       const PhysicsEnv& env, Rng& rng);

// Return probability of the model for a given landing (exposed for tests).
double opponent_return_probability(const OpponentProfile& profile, const Vec2& landing,
                                   double landing_speed);

// Landing side from the opponent's perspective: they face the robot, so
// their forehand covers negative x (right-handed convention).
StyleSide opponent_side_of(double landing_x);

// ---------------------------------------------------------------------------
// Latency and domain randomization

struct LatencyModel {
  double ball_obs_mean_ms = 40.0, ball_obs_var = 8.2;
  double paddle_obs_mean_ms = 29.0, paddle_obs_var = 8.2;
  double action_mean_ms = 71.0, action_var = 5.7;
  bool enabled = true;

  // Sampled per sub-episode, clamped at zero, rounded to control ticks.
  int sample_ticks(double mean_ms, double var, Rng& rng, double tick_ms) const;
};

struct RandomizationRanges {
  double table_damping_lo = -1.0, table_damping_hi = 5.0;
  double paddle_damping_lo = -5.0, paddle_damping_hi = -1.0;
  double paddle_friction_lo = -0.29, paddle_friction_hi = 0.29;
  double table_friction_lo = -0.05, table_friction_hi = 0.05;
  // Damping offsets map onto restitution through this scale (the solver
  // damping itself has no analog in the impulse model).
  double damping_to_restitution = 0.01;
};

ContactParams randomized_contact(const ContactParams& nominal, const RandomizationRanges& ranges,
                                 Rng& rng);

// ---------------------------------------------------------------------------
// The playing stack and match orchestration

struct RobotStack {
  std::vector<Skill> skills;                       // indexed by spec id
  std::vector<DescriptorTable> tables;             // rally skills only
  std::vector<const DescriptorTable*> table_ptrs;  // indexed by skill id
  StyleSelector style;
  std::optional<SpinClassifier> spin;
  StrategyConfig strategy;
  PhysicsEnv env;
  RobotParams robot;
  LatencyModel latency;
  EnvOptions episode_options;  // spin-observation limit etc; delays overlaid per sub-episode
  double bandit_alpha = 0.1;
  double protective_stop_prob = 0.0;
  int decision_delay_ticks = 1;
  int redecide_every_k = 0;          // 0 = decisive (one decision per ball)
  bool uniform_random_skill = false; // ablation: bypass the HLC entirely
  bool online_descriptor_update = false;

  void rebuild_table_ptrs();
};

struct EventRow {
  int game = 0;
  int point = 0;
  int sub_episode = 0;
  double t = 0.0;
  std::string event;
  BallState ball;
  int skill_id = -1;
  std::string detail;
};

struct PointResult {
  std::optional<PointWinner> winner;  // nullopt = let
  std::vector<ShotRecord> shots;
  int opponent_hits = 0;
  int decisions = 0;
  std::array<long, 5> decisions_by_heuristic{};
  std::vector<std::pair<double, bool>> incoming_spin_outcomes;  // (spin.x, landed)
};

// One point of physics: opponent hit -> HLC decision one control tick later
// -> skill execution with latency injection -> outcome -> opponent reply.
PointResult run_point(MatchState& match, RobotStack& stack, const OpponentProfile& profile,
                      PreferenceState& prefs, OpponentStats& opp_stats, Rng& rng,
                      std::vector<EventRow>* log = nullptr);

struct SpinBucketStat {
  double lo = 0.0, hi = 0.0;
  long attempts = 0;
  long returns = 0;
};

struct MatchReport {
  std::string opponent_id;
  RuleVariant variant = RuleVariant::MainRules;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::array<std::array<int, 2>, 3> games{};  // {human, robot} per game
  int games_robot = 0, games_human = 0;
  int lets = 0;
  long opponent_hits = 0, decisions = 0;
  std::vector<SpinBucketStat> spin_buckets;
  std::vector<double> h_start, h_end;
  std::vector<std::vector<double>> h_per_game_end;
  std::array<long, 5> heuristic_usage{};
  std::vector<ShotRecord> shot_log;  // decision order, for replay checks
};

MatchReport run_match(RobotStack& stack, const OpponentProfile& profile, Rng& rng,
                      RuleVariant variant, OpponentStore& store,
                      std::vector<EventRow>* log = nullptr);

void write_event_log_csv(const std::vector<EventRow>& rows, const std::string& path);
// Machine-readable delimited report files: <prefix>_games.csv, _spin.csv,
// _hvalues.csv (per-skill H and selection-probability change), _heuristics.csv.
void write_match_report_csv(const MatchReport& report, const std::string& prefix);

// ---------------------------------------------------------------------------
// Evaluations

struct TimingAblationRow {
  std::string setting;
  int balls = 0;
  double hit_rate = 0.0;
  double land_rate = 0.0;
  double miss_rate = 0.0;
  std::string paper_reference;  // reported alongside, never asserted
};

// Tables 10/11 style comparisons on a fixed ball corpus: wait 1 vs 3 control
// ticks before acting, and decisive vs re-decide-every-k.
std::vector<TimingAblationRow> ablate_decision_timing(RobotStack& stack,
                                                      const std::vector<BallState>& corpus,
                                                      Rng& rng);
void write_ablation_csv(const std::vector<TimingAblationRow>& rows, const std::string& path);

struct TournamentRow {
  std::string tier;
  int matches = 0;
  double match_win_rate = 0.0;
  double game_win_rate = 0.0;
  double point_win_rate = 0.0;
  long points_robot = 0, points_human = 0;
};

std::vector<TournamentRow> run_tournament(RobotStack& stack, int matches_per_tier, Rng& rng,
                                          RuleVariant variant);
void write_tournament_csv(const std::vector<TournamentRow>& rows, const std::string& path);

}  // namespace ttsim
