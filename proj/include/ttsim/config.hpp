#pragma once

#include <map>
#include <string>
#include <vector>

#include "ttsim/optimizer.hpp"

#include "ttsim/ballistics.hpp"
#include "ttsim/dataset.hpp"
#include "ttsim/hlc.hpp"
#include "ttsim/matchsim.hpp"
#include "ttsim/skills.hpp"

namespace ttsim {

// Everything tunable lives here; a JSON file overlays the defaults and CLI
// flags overlay the file.
struct Config {
  PhysicsEnv env;
  RobotParams robot;
  std::vector<SkillSpec> roster = default_roster();
  SegmentationConfig segmentation;
  SampleConfig sampling;
  FitConfig fit;
  StrategyConfig strategy;
  LatencyModel latency;
  RandomizationRanges randomization;
  EnvOptions episode;  // decision delay, spin observation limit
  double bandit_alpha = 0.1;
  double protective_stop_prob = 0.0;
  int descriptor_repetitions = 10;
  // Named ES presets; "simulation" and "adapter" carry the published
  // hyperparameters, "desk" is the scaled-down training default.
  std::map<std::string, EsConfig> es_presets = default_es_presets();
  // Opponent profile parameter overrides keyed by preset name, stored as
  // raw JSON and overlaid onto the built-in presets.
  std::map<std::string, std::string> opponent_overrides;

  static std::map<std::string, EsConfig> default_es_presets();
  EsConfig es_preset(const std::string& name) const;
  OpponentProfile opponent(const std::string& name) const;

  // Stable FNV-1a hash of the canonical JSON dump; embedded in artifacts.
  std::string hash() const;

  std::string to_json_string() const;
  void apply_json_string(const std::string& text);
  // Dotted-path override, e.g. "env.flight.blunt_drag=0.3".
  void apply_override(const std::string& key_equals_value);

  static Config load(const std::string& path);  // defaults + file overlay
  void save(const std::string& path) const;
};

}  // namespace ttsim
