#pragma once

#include <array>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ttsim/ballistics.hpp"
#include "ttsim/dataset.hpp"
#include "ttsim/descriptors.hpp"
#include "ttsim/optimizer.hpp"
#include "ttsim/rng.hpp"
#include "ttsim/skills.hpp"

namespace ttsim {

// ---------------------------------------------------------------------------
// Opponent bookkeeping

struct SideCounts {
  long attempts = 0;
  long returns = 0;
  double rate() const { return attempts > 0 ? static_cast<double>(returns) / attempts : 0.5; }
};

// The opponent's observed ability to return our shots, broken down by the
// side of the table the robot's return landed on (from the opponent's view).
struct OpponentStats {
  SideCounts total;
  std::array<SideCounts, 3> by_side;  // indexed by StyleSide

  void record(StyleSide landing_side, bool opponent_returned);
  double hit_rate() const { return total.rate(); }
};

// ---------------------------------------------------------------------------
// Preferences (gradient bandit, Algorithm-2 semantics)

struct PreferenceState {
  std::vector<double> h;           // one per skill
  std::vector<double> baseline_h;  // per-opponent reset target
  std::vector<long> action_counts;
  double avg_reward = 0.0;
  long timestep = 0;
  double step_size = 0.1;

  static PreferenceState make(size_t num_skills, double alpha = 0.1);
  void reset_to_baseline();
};

struct ShotRecord {
  int skill_id = -1;
  double reward = 0.0;  // 1 when the robot's return landed, else 0
};

struct PreferenceUpdateOptions {
  // Literal pseudocode semantics: the selection probabilities are computed
  // once per batch and the selected-skill mask accumulates across shots.
  // The refresh variant recomputes both per shot.
  bool refresh_per_shot = false;
};

void update_preferences(const std::vector<ShotRecord>& batch, PreferenceState& prefs,
                        const PreferenceUpdateOptions& options = {});

std::vector<double> softmax(const std::vector<double>& h);

// Weighted draw from a probability vector (shared by hlc_act and tests).
int sample_index(const std::vector<double>& probabilities, Rng& rng);

// ---------------------------------------------------------------------------
// Spin classifier (2-layer MLP on 18 contact-approach features)

inline constexpr int kSpinFeatureDim = 18;

struct PaddleBallFrame {
  double t = 0.0;
  Vec3 paddle_position;
  Vec3 paddle_normal;
  Vec3 ball_position;
};

// Features for the 3 timestamps preceding the hit, each built from deltas
// over 3 frames: paddle z delta, paddle normal delta (3), paddle-minus-ball
// z, and paddle-ball distance. Requires at least 6 frames; the last frame
// is the one just before contact.
std::vector<double> extract_spin_features(const std::vector<PaddleBallFrame>& history);

class SpinClassifier {
 public:
  SpinClassifier();

  // Probability pair {P(topspin), P(underspin)}, summing to 1.
  std::array<double, 2> predict_proba(const std::vector<double>& features) const;
  SpinClass raw_predict(const std::vector<double>& features) const;

  // Final label: Underspin only when at least 4 of the last 5 raw
  // predictions were Underspin; Topspin until 5 queries have been seen.
  SpinClass classify(const std::vector<double>& features);
  void reset_history() { history_.clear(); }
  const std::deque<SpinClass>& history() const { return history_; }

  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }
  static int param_count();

  void save(const std::string& path) const;
  static SpinClassifier load(const std::string& path);

 private:
  ParamVector params_;  // 18->128->64->2 MLP
  std::deque<SpinClass> history_;
};

struct SpinSample {
  std::vector<double> features;
  SpinClass label = SpinClass::Topspin;
};

struct SpinTrainReport {
  double holdout_accuracy = 0.0;
  double underspin_precision = 0.0;
  double underspin_recall = 0.0;
  int train_count = 0;
  int holdout_count = 0;
};

// Supervised minibatch training (cross-entropy, momentum SGD) with a
// held-out split. Throws when the corpus contains a single class.
SpinTrainReport train_spin_classifier(std::vector<SpinSample> corpus, SpinClassifier& classifier,
                                      Rng& rng, int epochs = 60);

// Serve corpus synthesis: scripted opponent paddle swings (chop vs brush)
// at 125 Hz with ground-truth labels, augmented over the 100 ms window
// before the hit (floor(0.1 * 125) = 12 extra frames per hit).
std::vector<SpinSample> synthesize_spin_corpus(int serves, Rng& rng, double noise = 0.01);

// ---------------------------------------------------------------------------
// Style selection

class StyleSelector {
 public:
  StyleSelector() = default;
  explicit StyleSelector(PolicyNet net) : net_(std::move(net)) {}

  bool trained() const { return net_.has_value(); }
  const PolicyNet& net() const { return *net_; }

  // Trained: argmax over two logits from the flattened (8,16) stack.
  // Fallback: table-half heuristic on the lateral intercept (positive x is
  // the robot's forehand side).
  StyleSide select(const std::vector<double>& obs_flat, double intercept_x) const;

  void save(const std::string& path) const;
  static StyleSelector load(const std::string& path);

 private:
  std::optional<PolicyNet> net_;
};

struct StyleTrainOptions {
  int iterations = 60;
  int balls_per_rollout = 2;
  double perturbation_scale = 0.3;
};

// ES training of the style policy: frozen generalist FH/BH skills, fitness
// is the land rate over dataset balls under the selector's choices.
StyleSelector train_style_selector(const Dataset& dataset, const Skill& fh_generalist,
                                   const Skill& bh_generalist, const EsConfig& es_cfg, Rng& rng,
                                   const PhysicsEnv& env, const RobotParams& robot,
                                   const StyleTrainOptions& opts, TrainingCurve* curve = nullptr);

// ---------------------------------------------------------------------------
// Strategies and the final decision

struct ShortlistEntry {
  int skill_id = -1;
  double return_probability = 0.0;  // queried land rate
  int heuristic = -1;               // source heuristic index 0..4
};

struct StrategyShortlist {
  std::vector<ShortlistEntry> entries;
  bool fallback_used = false;
};

struct StrategyConfig {
  double random_land_threshold = 0.80;  // heuristic 1
  int top_n_land = 5;                   // land-rate filter for heuristics 2-3
  int top_m = 3;                        // random pick among the top m
  double strong_opponent_hit_rate = 0.75;  // heuristic 5
  int query_k = 25;                     // descriptor neighbors per query
  double return_scale = 1.0;            // R scale when added to H
};

// One entry per heuristic: (1) uniform-random among skills whose queried
// land rate exceeds the threshold, (2) fastest hit velocity among the top-n
// land rates, (3) farthest landing from the incoming ball's landing point
// among the top-n land rates, (4) the skill targeting the opponent's weaker
// side, (5) farthest landing for strong opponents, otherwise the highest
// land rate. Ties break toward the lower skill id; heuristics whose filter
// comes up empty degrade to the highest land rate.
StrategyShortlist strategy_shortlist(const BallState& ball, const Vec2& incoming_landing,
                                     StyleSide style, const std::vector<SkillSpec>& roster,
                                     const std::vector<const DescriptorTable*>& tables,
                                     const OpponentStats& opp, const StrategyConfig& cfg,
                                     Rng& rng);

struct HlcDecision {
  int skill_id = -1;
  StyleSide style = StyleSide::Forehand;
  SpinClass spin = SpinClass::Topspin;
  bool is_serve = false;
  StrategyShortlist shortlist;
  std::vector<double> selection_probabilities;
  int chosen_entry = -1;  // index into shortlist.entries (rally only)
};

struct HlcContext {
  const std::vector<SkillSpec>* roster = nullptr;
  const std::vector<const DescriptorTable*>* tables = nullptr;  // per skill id, null for serves
  const StyleSelector* style = nullptr;
  SpinClassifier* spin = nullptr;  // stateful 4-of-5 history
  PreferenceState* prefs = nullptr;
  const OpponentStats* opponent = nullptr;
  StrategyConfig strategy;
};

// Algorithm-1 selection: serves map style x spin onto the matching
// serve-receive skill; rallies shortlist via the heuristics, add H to the
// queried return probabilities and sample through a softmax.
HlcDecision hlc_act(const BallState& ball, bool is_serve, const std::vector<double>& obs_flat,
                    double intercept_x, const Vec2& incoming_landing,
                    const std::vector<double>& spin_features, HlcContext& ctx, Rng& rng);

// ---------------------------------------------------------------------------
// Per-opponent persistence (JSON store keyed by opponent id)

struct OpponentRecord {
  PreferenceState prefs;
  OpponentStats stats;
  int games_played = 0;
};

class OpponentStore {
 public:
  OpponentRecord& get_or_create(const std::string& opponent_id, size_t num_skills, double alpha);
  const std::map<std::string, OpponentRecord>& all() const { return records_; }

  void save(const std::string& path) const;
  static OpponentStore load(const std::string& path);

 private:
  std::map<std::string, OpponentRecord> records_;
};

}  // namespace ttsim
