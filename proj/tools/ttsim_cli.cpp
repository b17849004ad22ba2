// Command-line front end for the table-tennis agent stack. Talks to the
// shared library exclusively through the C API.
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ttsim/ttsim.h"

namespace {

struct CtxDeleter {
  void operator()(ttsim_ctx* c) const { ttsim_ctx_free(c); }
};
using CtxPtr = std::unique_ptr<ttsim_ctx, CtxDeleter>;

int finish(ttsim_ctx* ctx, ttsim_status status, const std::string& action) {
  if (status == TTSIM_OK) {
    std::printf("%s: ok (config %s)\n", action.c_str(), ttsim_config_hash(ctx));
    return 0;
  }
  std::fprintf(stderr, "%s: %s\n", action.c_str(), ttsim_last_error(ctx));
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ttsim: table-tennis rally simulator, skill library and hierarchical controller"};
  app.require_subcommand(1);

  std::string config_path;
  if (const char* env = std::getenv("TTSIM_CONFIG")) config_path = env;
  std::vector<std::string> overrides;
  std::uint64_t seed = 1;
  app.add_option("--config", config_path, "Config JSON path (or TTSIM_CONFIG)");
  app.add_option("--set", overrides, "Config override key.path=value (repeatable)");
  app.add_option("--seed", seed, "Random seed recorded into artifacts");

  // config init
  auto* cmd_config = app.add_subcommand("config", "Configuration utilities");
  std::string config_out = "ttsim.json";
  auto* cfg_init = cmd_config->add_subcommand("init", "Write the default config");
  cfg_init->add_option("--out", config_out, "Output path");

  // sim shoot
  auto* cmd_sim = app.add_subcommand("sim", "Single-ball trajectory tools");
  auto* sim_shoot = cmd_sim->add_subcommand("shoot", "Simulate one ball and export CSV");
  std::vector<double> state9{0.0, 1.3, 0.35, 0.0, -5.5, 1.2, 0.0, 0.0, 0.0};
  double horizon = 3.0;
  std::string shoot_out = "trajectory.csv";
  sim_shoot->add_option("--state", state9, "px py pz vx vy vz wx wy wz")->expected(9);
  sim_shoot->add_option("--horizon", horizon, "Seconds to simulate");
  sim_shoot->add_option("--out", shoot_out, "Output CSV");

  // dataset
  auto* cmd_dataset = app.add_subcommand("dataset", "Task-distribution dataset operations");
  std::string ds_out = "dataset.csv", ds_in, ds_raw, ds_residuals;
  int ds_rally = 200, ds_serves = 60, ds_cycle = 0;
  auto* ds_synth = cmd_dataset->add_subcommand("synth", "Generate a synthetic ball corpus");
  ds_synth->add_option("--out", ds_out, "Dataset output path");
  ds_synth->add_option("--rally", ds_rally, "Rally ball count");
  ds_synth->add_option("--serves", ds_serves, "Serve ball count");
  auto* ds_import = cmd_dataset->add_subcommand("import", "Segment + fit raw (t,x,y,z) rows");
  ds_import->add_option("--in", ds_raw, "Raw trajectory CSV")->required();
  ds_import->add_option("--out", ds_out, "Dataset output path");
  ds_import->add_option("--cycle", ds_cycle, "Collection cycle tag");
  ds_import->add_option("--residuals", ds_residuals, "Per-segment residual CSV");
  auto* ds_fit = cmd_dataset->add_subcommand("fit", "Fit initial states, report residuals");
  ds_fit->add_option("--in", ds_raw, "Raw trajectory CSV")->required();
  ds_fit->add_option("--out", ds_out, "Dataset output path");
  ds_fit->add_option("--residuals", ds_residuals, "Per-segment residual CSV");
  auto* ds_reflect = cmd_dataset->add_subcommand("reflect", "Append lateral mirror of rally balls");
  ds_reflect->add_option("--in", ds_in, "Dataset input")->required();
  ds_reflect->add_option("--out", ds_out, "Dataset output path");
  auto* ds_stats = cmd_dataset->add_subcommand("stats", "Per-cycle category count table");
  ds_stats->add_option("--in", ds_in, "Dataset input")->required();
  ds_stats->add_option("--out", ds_out, "Stats CSV output");

  // train
  auto* cmd_train = app.add_subcommand("train", "Training loops");
  std::string tr_what, tr_dataset, tr_model = "model.txt", tr_curve, tr_style = "forehand",
              tr_base, tr_preset;
  int tr_iterations = 0;
  cmd_train->add_option("what", tr_what, "skill | style | spin | film")->required();
  cmd_train->add_option("--dataset", tr_dataset, "Dataset path (not needed for spin)");
  cmd_train->add_option("--out", tr_model, "Model artifact path");
  cmd_train->add_option("--curve", tr_curve, "Training-curve CSV");
  cmd_train->add_option("--iterations", tr_iterations, "Training iterations (0 = default)");
  cmd_train->add_option("--style", tr_style, "forehand | backhand");
  cmd_train->add_option("--base", tr_base, "Base policy (film) or init checkpoint (skill)");
  cmd_train->add_option("--preset", tr_preset, "Named ES preset (simulation | adapter | desk)");

  // descriptors
  auto* cmd_desc = app.add_subcommand("descriptors", "Skill descriptor tables");
  std::string desc_dataset, desc_dir = "descriptors", desc_report = "descriptor_report.csv";
  int desc_reps = 0;
  auto* desc_build = cmd_desc->add_subcommand("build", "Build per-skill lookup tables");
  desc_build->add_option("--dataset", desc_dataset, "Ball corpus")->required();
  desc_build->add_option("--out", desc_dir, "Output directory");
  desc_build->add_option("--repetitions", desc_reps, "Episodes per ball (0 = config)");
  auto* desc_rep = cmd_desc->add_subcommand("report", "Summarize tables per skill");
  desc_rep->add_option("--dir", desc_dir, "Descriptor directory");
  desc_rep->add_option("--out", desc_report, "Report CSV");

  // play
  auto* cmd_play = app.add_subcommand("play", "Matches, tournaments and ablations");
  std::string pl_desc = "descriptors", pl_opponent = "intermediate", pl_variant = "main";
  std::string pl_report = "match", pl_events, pl_store, pl_style_model, pl_spin_model;
  std::string pl_dataset, pl_out = "report.csv";
  int pl_matches = 3;
  bool pl_random = false;
  auto* pl_match = cmd_play->add_subcommand("match", "One three-game match");
  pl_match->add_option("--descriptors", pl_desc, "Descriptor directory");
  pl_match->add_option("--opponent", pl_opponent,
                       "beginner|intermediate|advanced|advanced_plus|exploiter|never_returns");
  pl_match->add_option("--variant", pl_variant, "main | alternating");
  pl_match->add_option("--report", pl_report, "Report file prefix");
  pl_match->add_option("--events", pl_events, "Event-log CSV");
  pl_match->add_option("--store", pl_store, "Per-opponent preference store (JSON)");
  pl_match->add_option("--style-model", pl_style_model, "Trained style selector");
  pl_match->add_option("--spin-model", pl_spin_model, "Trained spin classifier");
  pl_match->add_flag("--random-skill", pl_random, "Bypass the HLC (uniform skill choice)");
  auto* pl_tour = cmd_play->add_subcommand("tournament", "Seeded matches across all tiers");
  pl_tour->add_option("--descriptors", pl_desc, "Descriptor directory");
  pl_tour->add_option("--matches", pl_matches, "Matches per tier");
  pl_tour->add_option("--variant", pl_variant, "main | alternating");
  pl_tour->add_option("--out", pl_out, "Aggregate CSV");
  pl_tour->add_option("--style-model", pl_style_model, "Trained style selector");
  pl_tour->add_option("--spin-model", pl_spin_model, "Trained spin classifier");
  auto* pl_ablate = cmd_play->add_subcommand("ablate", "Decision-timing comparisons");
  pl_ablate->add_option("--descriptors", pl_desc, "Descriptor directory");
  pl_ablate->add_option("--dataset", pl_dataset, "Evaluation ball corpus")->required();
  pl_ablate->add_option("--out", pl_out, "Comparison CSV");
  pl_ablate->add_option("--style-model", pl_style_model, "Trained style selector");

  CLI11_PARSE(app, argc, argv);

  CtxPtr ctx(ttsim_ctx_new(config_path.empty() ? nullptr : config_path.c_str()));
  if (!ctx) {
    std::fprintf(stderr, "failed to load config: %s\n", config_path.c_str());
    return 1;
  }
  for (const auto& kv : overrides) {
    if (ttsim_set(ctx.get(), kv.c_str()) != TTSIM_OK)
      return finish(ctx.get(), TTSIM_USAGE_ERROR, "config override '" + kv + "'");
  }

  if (cfg_init->parsed())
    return finish(ctx.get(), ttsim_config_write(ctx.get(), config_out.c_str()), "config init");

  if (sim_shoot->parsed())
    return finish(ctx.get(),
                  ttsim_sim_shoot(ctx.get(), state9.data(), horizon, shoot_out.c_str()),
                  "sim shoot");

  if (ds_synth->parsed())
    return finish(ctx.get(),
                  ttsim_dataset_synth(ctx.get(), ds_out.c_str(), ds_rally, ds_serves, seed),
                  "dataset synth");
  if (ds_import->parsed() || ds_fit->parsed())
    return finish(ctx.get(),
                  ttsim_dataset_import(ctx.get(), ds_raw.c_str(), ds_out.c_str(), ds_cycle, seed,
                                       ds_residuals.empty() ? nullptr : ds_residuals.c_str()),
                  ds_import->parsed() ? "dataset import" : "dataset fit");
  if (ds_reflect->parsed())
    return finish(ctx.get(), ttsim_dataset_reflect(ctx.get(), ds_in.c_str(), ds_out.c_str()),
                  "dataset reflect");
  if (ds_stats->parsed())
    return finish(ctx.get(), ttsim_dataset_stats(ctx.get(), ds_in.c_str(), ds_out.c_str()),
                  "dataset stats");

  if (cmd_train->parsed())
    return finish(ctx.get(),
                  ttsim_train(ctx.get(), tr_what.c_str(),
                              tr_dataset.empty() ? "" : tr_dataset.c_str(), tr_model.c_str(),
                              tr_curve.empty() ? nullptr : tr_curve.c_str(), seed, tr_iterations,
                              tr_style.c_str(), tr_base.empty() ? nullptr : tr_base.c_str(),
                              tr_preset.empty() ? nullptr : tr_preset.c_str()),
                  "train " + tr_what);

  if (desc_build->parsed())
    return finish(ctx.get(),
                  ttsim_descriptors_build(ctx.get(), desc_dataset.c_str(), desc_dir.c_str(), seed,
                                          desc_reps),
                  "descriptors build");
  if (desc_rep->parsed())
    return finish(ctx.get(),
                  ttsim_descriptors_report(ctx.get(), desc_dir.c_str(), desc_report.c_str()),
                  "descriptors report");

  if (pl_match->parsed())
    return finish(
        ctx.get(),
        ttsim_play_match(ctx.get(), pl_desc.c_str(), pl_opponent.c_str(), pl_variant.c_str(),
                         seed, pl_report.c_str(), pl_events.empty() ? nullptr : pl_events.c_str(),
                         pl_store.empty() ? nullptr : pl_store.c_str(),
                         pl_style_model.empty() ? nullptr : pl_style_model.c_str(),
                         pl_spin_model.empty() ? nullptr : pl_spin_model.c_str(),
                         pl_random ? 1 : 0),
        "play match");
  if (pl_tour->parsed())
    return finish(ctx.get(),
                  ttsim_play_tournament(ctx.get(), pl_desc.c_str(), pl_matches,
                                        pl_variant.c_str(), seed, pl_out.c_str(),
                                        pl_style_model.empty() ? nullptr : pl_style_model.c_str(),
                                        pl_spin_model.empty() ? nullptr : pl_spin_model.c_str()),
                  "play tournament");
  if (pl_ablate->parsed())
    return finish(ctx.get(),
                  ttsim_play_ablate(ctx.get(), pl_desc.c_str(), pl_dataset.c_str(), seed,
                                    pl_out.c_str(),
                                    pl_style_model.empty() ? nullptr : pl_style_model.c_str()),
                  "play ablate");

  std::fprintf(stderr, "no subcommand action matched\n");
  return 1;
}
