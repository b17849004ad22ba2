#include "ttsim/ttsim.h"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "ttsim/config.hpp"
#include "ttsim/dataset.hpp"
#include "ttsim/descriptors.hpp"
#include "ttsim/hlc.hpp"
#include "ttsim/matchsim.hpp"
#include "ttsim/skills.hpp"

namespace fs = std::filesystem;
using namespace ttsim;

struct ttsim_ctx {
  Config config;
  std::string last_error;
  std::string hash_cache;
};

namespace {

ttsim_status fail(ttsim_ctx* ctx, ttsim_status code, const std::string& message) {
  if (ctx) ctx->last_error = message;
  return code;
}

template <typename Fn>
ttsim_status guarded(ttsim_ctx* ctx, Fn&& fn) {
  if (!ctx) return TTSIM_USAGE_ERROR;
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    return fail(ctx, TTSIM_USAGE_ERROR, e.what());
  } catch (const std::exception& e) {
    return fail(ctx, TTSIM_DATA_ERROR, e.what());
  }
}

std::string descriptor_path(const std::string& dir, int skill_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "descriptor_%02d.txt", skill_id);
  return (fs::path(dir) / buf).string();
}

// Synthetic legal incoming balls drawn through the scripted opponent.
Dataset synth_dataset(const Config& cfg, int rally_count, int serve_count, Rng& rng) {
  Dataset d;
  OpponentProfile profile = OpponentProfile::preset(OpponentTier::Intermediate);
  int made = 0;
  long draw = 0;
  while (made < rally_count) {
    ShotContext ctx;
    ctx.serve = false;
    ctx.our_landing = {rng.uniform(-0.5, 0.5), rng.uniform(0.4, 1.2)};
    ctx.our_landing_speed = rng.uniform(4.0, 6.5);
    Rng r = rng.child(0x5A17ULL + draw++);
    // Bypass the return-probability gate and widen the mixture: the corpus
    // should span styles, speeds and spins, Table-1-like.
    OpponentProfile always = profile;
    always.return_base = 1.0;
    always.reach_radius = 10.0;
    always.distance_sensitivity = 0.0;
    always.speed_sensitivity = 0.0;
    always.weak_side_penalty = 0.0;
    always.rally_speed_min = 3.8;
    always.rally_speed_max = 7.6;
    always.rally_underspin_fraction = 0.22;
    always.rally_underspin_lo = -85.0;
    always.rally_topspin_hi = 95.0;
    always.rally_aim_std = 0.55;
    always.speed_carry = 0.0;
    auto ball = opponent_shot(always, ctx, cfg.env, r);
    if (!ball) continue;
    BallStateRecord rec;
    rec.initial = *ball;
    rec.is_serve = false;
    auto side = annotate_style_side(*ball, cfg.env.flight, cfg.env.contact, cfg.env.geom);
    rec.style_side = side.value_or(StyleSide::Center);
    d.add(rec);
    ++made;
  }
  made = 0;
  while (made < serve_count) {
    ShotContext ctx;
    ctx.serve = true;
    Rng r = rng.child(0x5E12FEULL + draw++);
    auto ball = opponent_shot(profile, ctx, cfg.env, r);
    if (!ball) continue;
    BallStateRecord rec;
    rec.initial = *ball;
    rec.is_serve = true;
    auto side = annotate_style_side(*ball, cfg.env.flight, cfg.env.contact, cfg.env.geom);
    rec.style_side = side.value_or(StyleSide::Center);
    d.add(rec);
    ++made;
  }
  return d;
}

EsConfig training_es(const Config& cfg, const char* preset, int fallback_perturbations = 24) {
  EsConfig es = cfg.es_preset(preset && *preset ? preset : "desk");
  if (!preset || !*preset) es.num_perturbations = fallback_perturbations;
  return es;
}

RobotStack load_stack(ttsim_ctx* ctx, const std::string& descriptors_dir,
                      const char* style_model, const char* spin_model) {
  RobotStack stack;
  stack.env = ctx->config.env;
  stack.robot = ctx->config.robot;
  stack.strategy = ctx->config.strategy;
  stack.latency = ctx->config.latency;
  stack.episode_options = ctx->config.episode;
  stack.bandit_alpha = ctx->config.bandit_alpha;
  stack.protective_stop_prob = ctx->config.protective_stop_prob;
  stack.decision_delay_ticks = ctx->config.episode.decision_delay_ticks;
  for (const auto& spec : ctx->config.roster) stack.skills.emplace_back(spec);
  for (const auto& spec : ctx->config.roster) {
    if (spec.is_serve_receiver) continue;
    const std::string path = descriptor_path(descriptors_dir, spec.id);
    if (!fs::exists(path))
      throw std::runtime_error("missing descriptor table (run 'descriptors build'): " + path);
    stack.tables.push_back(DescriptorTable::load(path));
  }
  stack.rebuild_table_ptrs();
  if (style_model && *style_model) stack.style = StyleSelector::load(style_model);
  if (spin_model && *spin_model) stack.spin = SpinClassifier::load(spin_model);
  return stack;
}

void append_meta(const std::string& path, const Config& cfg, uint64_t seed) {
  std::ofstream out(path, std::ios::app);
  out << "# config_hash=" << cfg.hash() << " seed=" << seed << "\n";
}

}  // namespace

extern "C" {

const char* ttsim_version(void) { return "ttsim 0.1.0"; }

ttsim_ctx* ttsim_ctx_new(const char* config_path) {
  try {
    auto* ctx = new ttsim_ctx;
    ctx->config = Config::load(config_path ? config_path : "");
    return ctx;
  } catch (const std::exception&) {
    return nullptr;
  }
}

void ttsim_ctx_free(ttsim_ctx* ctx) { delete ctx; }

const char* ttsim_last_error(const ttsim_ctx* ctx) {
  return ctx ? ctx->last_error.c_str() : "null context";
}

ttsim_status ttsim_set(ttsim_ctx* ctx, const char* kv) {
  return guarded(ctx, [&]() {
    if (!kv) throw std::invalid_argument("null override");
    ctx->config.apply_override(kv);
    return TTSIM_OK;
  });
}

ttsim_status ttsim_config_write(ttsim_ctx* ctx, const char* path) {
  return guarded(ctx, [&]() {
    if (!path) throw std::invalid_argument("null path");
    ctx->config.save(path);
    return TTSIM_OK;
  });
}

const char* ttsim_config_hash(ttsim_ctx* ctx) {
  if (!ctx) return "";
  ctx->hash_cache = ctx->config.hash();
  return ctx->hash_cache.c_str();
}

ttsim_status ttsim_sim_shoot(ttsim_ctx* ctx, const double s9[9], double horizon,
                             const char* out_csv) {
  return guarded(ctx, [&]() {
    if (!s9 || !out_csv) throw std::invalid_argument("null argument");
    BallState s;
    s.position = {s9[0], s9[1], s9[2]};
    s.velocity = {s9[3], s9[4], s9[5]};
    s.spin = {s9[6], s9[7], s9[8]};
    SimulateOptions opt;
    opt.horizon = horizon > 0 ? horizon : 3.0;
    opt.record_dt = 0.01;
    Trajectory traj =
        simulate_trajectory(s, ctx->config.env.flight, ctx->config.env.contact,
                            ctx->config.env.geom, opt);
    export_trajectory_csv(traj, out_csv);
    return TTSIM_OK;
  });
}

ttsim_status ttsim_dataset_synth(ttsim_ctx* ctx, const char* out_path, int rally_count,
                                 int serve_count, uint64_t seed) {
  return guarded(ctx, [&]() {
    if (!out_path) throw std::invalid_argument("null path");
    if (rally_count < 0 || serve_count < 0 || rally_count + serve_count == 0)
      throw std::invalid_argument("need a positive ball count");
    Rng rng(seed);
    Dataset d = synth_dataset(ctx->config, rally_count, serve_count, rng);
    d.save(out_path);
    append_meta(out_path, ctx->config, seed);
    return TTSIM_OK;
  });
}

ttsim_status ttsim_dataset_import(ttsim_ctx* ctx, const char* raw_path, const char* out_path,
                                  int cycle, uint64_t seed, const char* residuals_csv) {
  return guarded(ctx, [&]() {
    if (!raw_path || !out_path) throw std::invalid_argument("null path");
    ObservedTrajectory stream = load_raw_trajectory(raw_path);
    if (stream.t.empty()) throw std::runtime_error("empty trajectory file: " + std::string(raw_path));
    bool too_short = false;
    auto segments = segment_trajectories(stream, ctx->config.segmentation, &too_short);
    if (segments.empty())
      throw std::runtime_error(too_short ? "stream too short to segment" : "no hit segments found");

    Dataset d;
    std::ofstream residuals;
    if (residuals_csv && *residuals_csv) {
      residuals.open(residuals_csv);
      residuals << "segment,residual_m,converged\n";
    }
    Rng rng(seed);
    int idx = 0;
    for (const auto& seg : segments) {
      Rng fit_rng = rng.child(idx);
      FitResult fit;
      try {
        fit = fit_initial_state(seg, ctx->config.env, ctx->config.fit, fit_rng);
      } catch (const std::invalid_argument&) {
        ++idx;
        continue;  // segment too short to fit
      }
      if (residuals.is_open())
        residuals << idx << "," << fit.residual << "," << (fit.converged ? 1 : 0) << "\n";
      if (fit.converged) {
        BallStateRecord rec;
        rec.initial = fit.state;
        rec.cycle = cycle;
        auto side = annotate_style_side(fit.state, ctx->config.env.flight,
                                        ctx->config.env.contact, ctx->config.env.geom);
        rec.style_side = side.value_or(StyleSide::Center);
        d.add(rec);
      }
      ++idx;
    }
    if (d.size() == 0) throw std::runtime_error("no segment produced a converged fit");
    d.save(out_path);
    append_meta(out_path, ctx->config, seed);
    return TTSIM_OK;
  });
}

ttsim_status ttsim_dataset_reflect(ttsim_ctx* ctx, const char* in_path, const char* out_path) {
  return guarded(ctx, [&]() {
    if (!in_path || !out_path) throw std::invalid_argument("null path");
    Dataset d = Dataset::load(in_path);
    reflect_y(d).save(out_path);
    return TTSIM_OK;
  });
}

ttsim_status ttsim_dataset_stats(ttsim_ctx* ctx, const char* in_path, const char* out_csv) {
  return guarded(ctx, [&]() {
    if (!in_path || !out_csv) throw std::invalid_argument("null path");
    write_dataset_stats_csv(Dataset::load(in_path), out_csv);
    return TTSIM_OK;
  });
}

ttsim_status ttsim_train(ttsim_ctx* ctx, const char* what, const char* dataset_path,
                         const char* out_model, const char* curve_csv, uint64_t seed,
                         int iterations, const char* style, const char* base_model,
                         const char* preset) {
  return guarded(ctx, [&]() {
    if (!what || !dataset_path || !out_model) throw std::invalid_argument("null argument");
    const std::string kind = what;
    Rng rng(seed);
    TrainingCurve curve;
    const StyleSide side =
        (style && std::string(style) == "backhand") ? StyleSide::Backhand : StyleSide::Forehand;

    if (kind == "spin") {
      auto corpus = synthesize_spin_corpus(iterations > 0 ? iterations : 200, rng);
      SpinClassifier clf;
      Rng trng = rng.child(1);
      SpinTrainReport report = train_spin_classifier(corpus, clf, trng);
      clf.save(out_model);
      if (curve_csv && *curve_csv) {
        std::ofstream out(curve_csv);
        out << "holdout_accuracy,underspin_precision,underspin_recall,paper_reference\n";
        out << report.holdout_accuracy << "," << report.underspin_precision << ","
            << report.underspin_recall
            << ",paper underspin precision 1.0 recall 0.4\n";
      }
      return TTSIM_OK;
    }

    Dataset d = Dataset::load(dataset_path);
    if (kind == "style") {
      int fh = -1, bh = -1;
      for (const auto& s : ctx->config.roster) {
        if (s.is_serve_receiver || s.kind != SkillKind::Generalist) continue;
        if (s.style == StyleSide::Forehand && fh < 0) fh = s.id;
        if (s.style == StyleSide::Backhand && bh < 0) bh = s.id;
      }
      if (fh < 0 || bh < 0) throw std::runtime_error("roster lacks generalists for style training");
      StyleTrainOptions opts;
      opts.iterations = iterations > 0 ? iterations : 30;
      EsConfig es = training_es(ctx->config, preset, 12);
      StyleSelector sel = train_style_selector(d, Skill(ctx->config.roster[fh]),
                                               Skill(ctx->config.roster[bh]), es, rng,
                                               ctx->config.env, ctx->config.robot, opts, &curve);
      sel.save(out_model);
    } else if (kind == "skill" || kind == "film") {
      RewardConfig reward;
      PolicyTrainOptions opts;
      opts.iterations = iterations > 0 ? iterations : 200;
      opts.style = side;
      opts.balls_per_rollout = 2;
      opts.perturbation_scale = 0.3;
      opts.env_options = ctx->config.episode;
      EsConfig es = training_es(ctx->config, preset);
      if (kind == "skill") {
        PolicyNet init = PolicyNet::zero();
        if (base_model && *base_model) init = load_policy(base_model);
        // Persist an initialization checkpoint so an aborted run leaves an
        // artifact behind.
        save_policy(init, out_model);
        Skill trained = train_policy_skill(d, es, reward, rng, ctx->config.env,
                                           ctx->config.robot, opts, &curve, &init);
        save_policy(trained.policy(), out_model);
      } else {
        if (!base_model || !*base_model)
          throw std::invalid_argument("film training requires --base (stage-1 policy)");
        SkillSpec spec;
        spec.style = side;
        spec.name = "policy";
        Skill base(spec, load_policy(base_model));
        TopspinCorrectOptions copts;
        copts.train = opts;
        copts.stage1_iterations = std::max(10, opts.iterations / 4);
        Skill corrected = topspin_correct(base, d, es, reward, rng, ctx->config.env,
                                          ctx->config.robot, copts);
        save_policy(corrected.policy(), out_model);
      }
    } else {
      throw std::invalid_argument("unknown training kind: " + kind);
    }
    if (curve_csv && *curve_csv && !curve.rows.empty()) {
      curve.write_csv(curve_csv);
      append_meta(curve_csv, ctx->config, seed);
    }
    return TTSIM_OK;
  });
}

ttsim_status ttsim_descriptors_build(ttsim_ctx* ctx, const char* dataset_path,
                                     const char* out_dir, uint64_t seed, int repetitions) {
  return guarded(ctx, [&]() {
    if (!dataset_path || !out_dir) throw std::invalid_argument("null path");
    Dataset d = Dataset::load(dataset_path);
    fs::create_directories(out_dir);
    const int reps = repetitions > 0 ? repetitions : ctx->config.descriptor_repetitions;
    Rng rng(seed);
    for (const auto& spec : ctx->config.roster) {
      if (spec.is_serve_receiver) continue;
      Skill skill(spec);
      Rng brng = rng.child(1000 + spec.id);
      DescriptorTable table = build_descriptor(
          spec.id, d, skill_episode_runner(skill, ctx->config.env, ctx->config.robot,
                                           ctx->config.episode),
          reps, brng);
      table.save(descriptor_path(out_dir, spec.id));
    }
    return TTSIM_OK;
  });
}

ttsim_status ttsim_descriptors_report(ttsim_ctx* ctx, const char* dir, const char* out_csv) {
  return guarded(ctx, [&]() {
    if (!dir || !out_csv) throw std::invalid_argument("null path");
    std::ofstream out(out_csv);
    if (!out) throw std::runtime_error("cannot open " + std::string(out_csv));
    // Simulated and observed ("real") metrics side by side per skill.
    out << "skill,name,style,kind,entries,sim_land_rate,sim_hit_velocity_y,sim_landing_x,"
           "sim_landing_y,real_throws,real_land_rate,real_hit_velocity_y,real_landing_x,"
           "real_landing_y\n";
    bool any = false;
    for (const auto& spec : ctx->config.roster) {
      if (spec.is_serve_receiver) continue;
      const std::string path = descriptor_path(dir, spec.id);
      if (!fs::exists(path)) continue;
      any = true;
      DescriptorTable t = DescriptorTable::load(path);
      double land = 0, vel = 0, lx = 0, ly = 0;
      for (const auto& m : t.metrics()) {
        land += m.land_rate;
        vel += m.hit_velocity_y;
        lx += m.landing_mean.x;
        ly += m.landing_mean.y;
      }
      const double n = static_cast<double>(t.size());
      const SkillMetrics real = t.real_observed_mean();
      char buf[320];
      std::snprintf(buf, sizeof(buf),
                    "%d,%s,%s,%s,%zu,%.4f,%.4f,%.4f,%.4f,%d,%.4f,%.4f,%.4f,%.4f\n", spec.id,
                    spec.name.c_str(), spec.style == StyleSide::Forehand ? "FH" : "BH",
                    skill_kind_name(spec.kind), t.size(), land / n, vel / n, lx / n, ly / n,
                    t.real_update_count(), real.land_rate, real.hit_velocity_y,
                    real.landing_mean.x, real.landing_mean.y);
      out << buf;
    }
    if (!any) throw std::runtime_error("no descriptor tables found in " + std::string(dir));
    return TTSIM_OK;
  });
}

ttsim_status ttsim_play_match(ttsim_ctx* ctx, const char* descriptors_dir, const char* opponent,
                              const char* variant, uint64_t seed, const char* report_prefix,
                              const char* event_log_csv, const char* store_path,
                              const char* style_model, const char* spin_model, int random_skill) {
  return guarded(ctx, [&]() {
    if (!descriptors_dir || !opponent || !variant || !report_prefix)
      throw std::invalid_argument("null argument");
    RobotStack stack = load_stack(ctx, descriptors_dir, style_model, spin_model);
    stack.uniform_random_skill = random_skill != 0;
    OpponentProfile profile = ctx->config.opponent(opponent);
    OpponentStore store;
    if (store_path && *store_path && fs::exists(store_path))
      store = OpponentStore::load(store_path);
    Rng rng(seed);
    std::vector<EventRow> log;
    MatchReport report = run_match(stack, profile, rng, rule_variant_from_name(variant), store,
                                   event_log_csv && *event_log_csv ? &log : nullptr);
    report.config_hash = ctx->config.hash();
    write_match_report_csv(report, report_prefix);
    if (event_log_csv && *event_log_csv) write_event_log_csv(log, event_log_csv);
    if (store_path && *store_path) store.save(store_path);
    return TTSIM_OK;
  });
}

ttsim_status ttsim_play_tournament(ttsim_ctx* ctx, const char* descriptors_dir,
                                   int matches_per_tier, const char* variant, uint64_t seed,
                                   const char* out_csv, const char* style_model,
                                   const char* spin_model) {
  return guarded(ctx, [&]() {
    if (!descriptors_dir || !variant || !out_csv) throw std::invalid_argument("null argument");
    if (matches_per_tier < 1) throw std::invalid_argument("matches_per_tier must be >= 1");
    RobotStack stack = load_stack(ctx, descriptors_dir, style_model, spin_model);
    Rng rng(seed);
    auto rows = run_tournament(stack, matches_per_tier, rng, rule_variant_from_name(variant));
    write_tournament_csv(rows, out_csv);
    append_meta(out_csv, ctx->config, seed);
    return TTSIM_OK;
  });
}

ttsim_status ttsim_play_ablate(ttsim_ctx* ctx, const char* descriptors_dir,
                               const char* dataset_path, uint64_t seed, const char* out_csv,
                               const char* style_model) {
  return guarded(ctx, [&]() {
    if (!descriptors_dir || !dataset_path || !out_csv) throw std::invalid_argument("null argument");
    RobotStack stack = load_stack(ctx, descriptors_dir, style_model, nullptr);
    Dataset d = Dataset::load(dataset_path);
    std::vector<BallState> corpus;
    for (const auto& rec : d.records())
      if (!rec.is_serve) corpus.push_back(rec.initial);
    if (corpus.empty()) throw std::runtime_error("dataset has no rally balls");
    Rng rng(seed);
    auto rows = ablate_decision_timing(stack, corpus, rng);
    write_ablation_csv(rows, out_csv);
    append_meta(out_csv, ctx->config, seed);
    return TTSIM_OK;
  });
}

}  // extern "C"
