#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ttsim/ballistics.hpp"
#include "ttsim/dataset.hpp"
#include "ttsim/descriptors.hpp"
#include "ttsim/optimizer.hpp"
#include "ttsim/rng.hpp"

namespace ttsim {

enum class SkillKind { Generalist, TargetLeft, TargetRight, FastHit, TopspinServe, UnderspinServe };

const char* skill_kind_name(SkillKind k);

struct SkillSpec {
  int id = -1;
  std::string name;
  StyleSide style = StyleSide::Forehand;  // Forehand or Backhand
  bool is_serve_receiver = false;
  SkillKind kind = SkillKind::Generalist;
  Vec2 target_landing{0.0, 0.8};  // opponent side, m
  double target_speed = 5.5;      // post-paddle, m/s
  double noise_velocity = 0.0;    // execution noise std on contact velocity, m/s
  double noise_angle = 0.0;       // execution noise std on contact normal, rad
  SpinClass spin_preset = SpinClass::Topspin;  // contact set assumed when planning
};

// 13 rally + 4 serve-receive specs with distinct targets and noise.
std::vector<SkillSpec> default_roster();

struct RobotParams {
  // Every skill starts each ball from this one shared pose; the style
  // reference poses below only shape the Table-style reward that pulls the
  // paddle toward its wing early in the shot.
  Vec3 home_position{0.0, -1.52, 0.30};
  double home_pitch = 0.25;           // ready pose keeps the face slightly open
  double style_pose_offset_x = 0.22;  // style reference pose lateral offset
  double max_speed = 4.5;             // paddle translation, m/s
  double max_accel = 80.0;            // m/s^2
  double max_normal_rate = 12.0;      // rad/s
  double reach_x = 1.25;
  double reach_y_min = -2.05;
  double reach_y_max = -1.10;
  double reach_z_min = 0.04;
  double reach_z_max = 1.40;
  double paddle_radius = 0.09;   // contact face radius, m
  double paddle_half_gap = 0.03; // contact trigger distance to the face plane, m
  double control_hz = 50.0;
  double low_paddle_z = 0.10;    // paddle-height penalty threshold
  double swing_time = 0.08;      // s of committed swing before contact

  // Style reference pose (reward shaping target, not the start pose).
  Vec3 style_reference(StyleSide style) const {
    Vec3 p = home_position;
    p.x += style == StyleSide::Forehand ? style_pose_offset_x
         : style == StyleSide::Backhand ? -style_pose_offset_x
                                        : 0.0;
    return p;
  }
};

struct PaddleCommand {
  Vec3 velocity;          // desired paddle linear velocity, m/s
  Vec3 angular_velocity;  // desired angular velocity, rad/s
};

// Committed stroke: intercept point/time plus the solved contact pose.
struct StrokePlan {
  bool reachable = false;
  double intercept_t = 0.0;
  Vec3 intercept;
  Vec3 contact_normal{0, 1, 0};
  Vec3 contact_velocity;  // paddle velocity at contact
  Vec3 plane_offset;      // paddle-center offset so the face meets the ball
                          // exactly at the intercept
  SpinClass assumed_class = SpinClass::Topspin;
};

// Predicts the incoming trajectory, picks a reachable intercept after the
// robot-side bounce, and inverts the contact model (analytic frictionless
// seed plus local sampled refinement) toward target_landing/target_speed.
// Deterministic; execution noise applies separately per episode.
StrokePlan plan_stroke_intercept(const SkillSpec& spec, const BallState& ball,
                                 const PhysicsEnv& env, const RobotParams& robot,
                                 double start_delay = 0.0);

// Perturbs the committed contact pose by the spec's per-channel noise.
void apply_execution_noise(StrokePlan& plan, const SkillSpec& spec, const PhysicsEnv& env,
                           const RobotParams& robot, Rng& rng);

// 50 Hz command toward the plan: approach the pre-contact staging point,
// then swing through the intercept at the contact velocity. A plan that is
// unreachable (or a ball already past the paddle) yields a zero command.
PaddleCommand plan_stroke(const SkillSpec& spec, const StrokePlan& plan, const BallState& ball,
                          const PaddleState& paddle, double t, const RobotParams& robot);

// ---------------------------------------------------------------------------
// Rewards

// Net height shaping: e^(-10|z-0.173|) on [0.173, 0.3), otherwise -1.1.
double net_height_reward(double z_at_net);

struct RewardConfig {
  double w_transition = 1.0;    // state transition + landing bonus, range [0,2]
  double w_hit_and_land = 0.1;  // range [0,1]
  double w_jerk = 0.3;          // episodic, range [0,1]
  double w_accel = 0.3;
  double w_velocity = 0.4;
  double w_safety_pose = 1.0;   // reach-box occupancy, range [0,1]
  double w_collision = 1.0;     // -1 per colliding step
  double w_paddle_height = 0.5; // -1 per low-paddle step
  double w_style_pose = 1.0;    // max(1-d,0) forehand / max(2-d,0) backhand
  bool enable_net_height = false;
  bool enable_contact_angle = false;
  double contact_pitch_target_fh = -0.12;  // paddle-pitch stand-in, rad
  double contact_pitch_target_bh = 2.0;
  // Normalization constants for the episodic kinematic penalties, scaled so
  // a clean tracking stroke keeps most of each term.
  double jerk_norm = 4000.0;  // m/s^3
  double accel_norm = 250.0;  // m/s^2
  double velocity_norm = 6.0; // m/s
  double approach_scale = 0.25;  // m, distance shaping inside the transition term
};

struct EpisodeTranscript {
  StyleSide style = StyleSide::Forehand;
  double tick_dt = 0.02;
  std::vector<Vec3> commanded_velocity;
  std::vector<Vec3> paddle_position;
  std::vector<double> pose_distance;  // to the style reference, per tick
  bool hit = false;
  bool landed = false;
  double hit_velocity_y = 0.0;
  Vec2 landing;
  double min_ball_distance = 1e9;
  double net_clearance = -1.0;  // return's z at the net plane; <0 if it never crossed
  double contact_pitch = 0.0;   // paddle pitch at contact, rad
  int table_collision_steps = 0;
  int low_paddle_steps = 0;
  int out_of_box_steps = 0;  // ticks where the reach clamp engaged
};

double compute_reward(const EpisodeTranscript& transcript, const RewardConfig& cfg);

// ---------------------------------------------------------------------------
// FiLM adapter: action' = gamma(obs) * action + beta(obs), elementwise.
// gamma = 1 + A phi, beta = B phi with zero-initialized A and B, so a fresh
// adapter is exactly the identity.
struct FilmAdapter {
  int action_dim = 0;
  int feature_dim = 0;
  ParamVector params;  // [A (action_dim x feature_dim) | B (action_dim x feature_dim)]

  static FilmAdapter identity(int action_dim, int feature_dim);
  void gamma_beta(const std::vector<double>& features, std::vector<double>* gamma,
                  std::vector<double>* beta) const;
};

std::vector<double> apply_film(const std::vector<double>& action, const FilmAdapter& adapter,
                               const std::vector<double>& features);

// ---------------------------------------------------------------------------
// Observation stack: 8 consecutive control ticks of 16 features
// [ball pos(3), ball vel(3), paddle pos(3), paddle normal(3), paddle vy,
//  paddle vz, style one-hot(2)], flattened oldest-first to 128 values.
inline constexpr int kObsFeatures = 16;
inline constexpr int kObsTicks = 8;
inline constexpr int kObsDim = kObsFeatures * kObsTicks;

class ObsStack {
 public:
  ObsStack() : flat_(kObsDim, 0.0) {}
  void reset();
  void push(const BallState& ball, const PaddleState& paddle, StyleSide style);
  const std::vector<double>& flat() const { return flat_; }
  std::vector<double> last_tick_features() const;

 private:
  std::vector<double> flat_;
  bool primed_ = false;
};

// Small trainable policy: tanh linear map from the normalized 128-dim stack
// to a 6-dim action [vx, vy, vz, pitch target, yaw target, spare].
inline constexpr int kActionDim = 6;

struct PolicyNet {
  ParamVector params;  // W (kActionDim x kObsDim) + b (kActionDim)
  RunningNormalizer normalizer{kObsDim};
  std::optional<FilmAdapter> film;
  // A fixed pursuit reflex added to the velocity channels (proportional
  // paddle-to-ball tracking on the latest tick). The trainable map learns
  // residual corrections on top; a zero net is the bare reflex.
  bool pursuit_prior = true;
  double prior_gain = 0.8;  // action units per meter of tracking error

  static PolicyNet zero();
  static int param_count() { return kActionDim * (kObsDim + 1); }
  // Outputs in [-1, 1]; FiLM applies after the clamp when attached.
  std::vector<double> forward(const std::vector<double>& obs_flat,
                              const std::vector<double>& film_features) const;
};

// A skill is immutable after construction; per-episode state lives in the
// executor inside run_skill_episode.
class Skill {
 public:
  explicit Skill(SkillSpec spec) : spec_(std::move(spec)) {}
  Skill(SkillSpec spec, PolicyNet policy) : spec_(std::move(spec)), policy_(std::move(policy)) {}

  const SkillSpec& spec() const { return spec_; }
  bool is_policy() const { return policy_.has_value(); }
  const PolicyNet& policy() const { return *policy_; }
  PolicyNet& mutable_policy() { return *policy_; }

 private:
  SkillSpec spec_;
  std::optional<PolicyNet> policy_;
};

struct EnvOptions {
  bool spin_conditioned_contact = true;  // bimodal paddle set by true ball spin
  SpinClass fixed_contact_class = SpinClass::Topspin;
  int decision_delay_ticks = 1;  // control ticks before the robot starts moving
  int obs_delay_ticks = 0;       // ball-observation latency in ticks
  int action_delay_ticks = 0;    // command-application latency in ticks
  double horizon = 3.0;          // s
  // Spin-perception ceiling: planning sees |spin| clamped to this bound,
  // so extreme spin beyond it degrades the stroke (the tables are equally
  // blind: their keys carry position and velocity only).
  double spin_observation_limit = 75.0;
  // One late re-solve of the contact pose this long before the planned
  // intercept, from the current observation; short-horizon prediction is
  // nearly exact so the executed contact matches the solved one.
  double replan_before_contact_s = 0.14;
  // Reuses a previously computed deterministic plan for the initial skill
  // (descriptor builds plan each record once across repetitions).
  const StrokePlan* precomputed_plan = nullptr;
  // Serve receivers plan with their preset spin class; the HLC can override
  // the class it predicted for this ball.
  std::optional<SpinClass> predicted_spin;
};

struct EpisodeResult {
  bool reachable = true;
  bool hit = false;
  bool landed = false;
  bool high_ball = false;  // the ball left the tracked volume
  double hit_velocity_y = 0.0;
  Vec2 landing;            // first opponent-side bounce of the return
  double landing_speed = 0.0;
  double contact_t = 0.0;
  double end_t = 0.0;
  int decisions = 1;       // skill choices consumed (for re-decide studies)
  EpisodeTranscript transcript;
};

// One incoming ball against one skill, from the shared initial pose.
EpisodeResult run_skill_episode(const Skill& skill, const BallState& incoming,
                                const PhysicsEnv& env, const RobotParams& robot, Rng& rng,
                                const EnvOptions& options = {});

// Variant allowing the caller to re-decide the skill mid-episode (nullptr
// keeps the current one). Switching abandons the committed stroke plan and
// replans from the current ball observation.
using SkillChooser = std::function<const Skill*(int tick, const BallState& observed)>;
EpisodeResult run_switchable_episode(const SkillChooser& choose, const BallState& incoming,
                                     const PhysicsEnv& env, const RobotParams& robot, Rng& rng,
                                     const EnvOptions& options = {});

// Adapter for descriptors::build_descriptor.
EpisodeRunnerFn skill_episode_runner(const Skill& skill, const PhysicsEnv& env,
                                     const RobotParams& robot, const EnvOptions& options = {});

// ---------------------------------------------------------------------------
// Training

struct PolicyTrainOptions {
  int iterations = 200;
  int balls_per_rollout = 1;
  StyleSide style = StyleSide::Forehand;
  bool topspin_only = false;
  double perturbation_scale = 1.0;
  EnvOptions env_options;
};

// ES training of a policy skill on dataset balls; fitness is the mean
// compute_reward over sampled episodes. Returns the trained skill and, when
// curve is non-null, appends one row per iteration.
Skill train_policy_skill(const Dataset& dataset, const EsConfig& es_cfg,
                         const RewardConfig& reward_cfg, Rng& rng, const PhysicsEnv& env,
                         const RobotParams& robot, const PolicyTrainOptions& opts,
                         TrainingCurve* curve = nullptr, const PolicyNet* init = nullptr);

struct TopspinCorrectOptions {
  int stage1_iterations = 40;
  int film_episode_budget = 5000;  // stage-2 env episode budget
  PolicyTrainOptions train;
};

// Stage 1 fine-tunes on topspin balls with spin-conditioned contact and the
// net-height/contact-angle rewards enabled; stage 2 attaches an identity
// FiLM adapter and trains only its parameters under the `adapter` preset.
Skill topspin_correct(const Skill& skill, const Dataset& dataset, const EsConfig& base_cfg,
                      const RewardConfig& reward_cfg, Rng& rng, const PhysicsEnv& env,
                      const RobotParams& robot, const TopspinCorrectOptions& opts);

// Policy persistence (flat array with a dimension header plus normalizer
// and optional FiLM block).
void save_policy(const PolicyNet& policy, const std::string& path);
PolicyNet load_policy(const std::string& path);

}  // namespace ttsim
