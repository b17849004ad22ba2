#include "ttsim/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ttsim {

namespace {

using nlohmann::json;

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void get(const json& j, const char* key, Vec3& out) {
  if (j.contains(key)) {
    const auto& a = j.at(key);
    out = {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
  }
}

void get(const json& j, const char* key, Vec2& out) {
  if (j.contains(key)) {
    const auto& a = j.at(key);
    out = {a.at(0).get<double>(), a.at(1).get<double>()};
  }
}

json vec(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
json vec(const Vec2& v) { return json::array({v.x, v.y}); }

json flight_json(const FlightParams& f) {
  return {{"air_density", f.air_density}, {"viscosity", f.viscosity},
          {"blunt_drag", f.blunt_drag},   {"slender_drag", f.slender_drag},
          {"angular_drag", f.angular_drag}, {"kutta_lift", f.kutta_lift},
          {"magnus_lift", f.magnus_lift}, {"wind", vec(f.wind)},
          {"gravity", f.gravity},         {"ball_radius", f.ball_radius},
          {"ball_mass", f.ball_mass},     {"dt", f.dt}};
}

void flight_from(const json& j, FlightParams& f) {
  get(j, "air_density", f.air_density);
  get(j, "viscosity", f.viscosity);
  get(j, "blunt_drag", f.blunt_drag);
  get(j, "slender_drag", f.slender_drag);
  get(j, "angular_drag", f.angular_drag);
  get(j, "kutta_lift", f.kutta_lift);
  get(j, "magnus_lift", f.magnus_lift);
  get(j, "wind", f.wind);
  get(j, "gravity", f.gravity);
  get(j, "ball_radius", f.ball_radius);
  get(j, "ball_mass", f.ball_mass);
  get(j, "dt", f.dt);
}

json contact_json(const ContactParams& c) {
  return {{"table_restitution_normal", c.table_restitution_normal},
          {"table_friction", c.table_friction},
          {"table_spin_coupling", c.table_spin_coupling},
          {"paddle_restitution_topspin", c.paddle_restitution_topspin},
          {"paddle_restitution_underspin", c.paddle_restitution_underspin},
          {"paddle_friction", c.paddle_friction},
          {"paddle_spin_transfer", c.paddle_spin_transfer}};
}

void contact_from(const json& j, ContactParams& c) {
  get(j, "table_restitution_normal", c.table_restitution_normal);
  get(j, "table_friction", c.table_friction);
  get(j, "table_spin_coupling", c.table_spin_coupling);
  get(j, "paddle_restitution_topspin", c.paddle_restitution_topspin);
  get(j, "paddle_restitution_underspin", c.paddle_restitution_underspin);
  get(j, "paddle_friction", c.paddle_friction);
  get(j, "paddle_spin_transfer", c.paddle_spin_transfer);
}

json geom_json(const TableGeometry& g) {
  return {{"length", g.length},
          {"width", g.width},
          {"net_height", g.net_height},
          {"net_overhang", g.net_overhang},
          {"high_ball_ceiling", g.high_ball_ceiling}};
}

void geom_from(const json& j, TableGeometry& g) {
  get(j, "length", g.length);
  get(j, "width", g.width);
  get(j, "net_height", g.net_height);
  get(j, "net_overhang", g.net_overhang);
  get(j, "high_ball_ceiling", g.high_ball_ceiling);
}

json robot_json(const RobotParams& r) {
  return {{"home_position", vec(r.home_position)},
          {"home_pitch", r.home_pitch},
          {"style_pose_offset_x", r.style_pose_offset_x},
          {"max_speed", r.max_speed},
          {"max_accel", r.max_accel},
          {"max_normal_rate", r.max_normal_rate},
          {"reach_x", r.reach_x},
          {"reach_y_min", r.reach_y_min},
          {"reach_y_max", r.reach_y_max},
          {"reach_z_min", r.reach_z_min},
          {"reach_z_max", r.reach_z_max},
          {"paddle_radius", r.paddle_radius},
          {"paddle_half_gap", r.paddle_half_gap},
          {"control_hz", r.control_hz},
          {"low_paddle_z", r.low_paddle_z},
          {"swing_time", r.swing_time}};
}

void robot_from(const json& j, RobotParams& r) {
  get(j, "home_position", r.home_position);
  get(j, "home_pitch", r.home_pitch);
  get(j, "style_pose_offset_x", r.style_pose_offset_x);
  get(j, "max_speed", r.max_speed);
  get(j, "max_accel", r.max_accel);
  get(j, "max_normal_rate", r.max_normal_rate);
  get(j, "reach_x", r.reach_x);
  get(j, "reach_y_min", r.reach_y_min);
  get(j, "reach_y_max", r.reach_y_max);
  get(j, "reach_z_min", r.reach_z_min);
  get(j, "reach_z_max", r.reach_z_max);
  get(j, "paddle_radius", r.paddle_radius);
  get(j, "paddle_half_gap", r.paddle_half_gap);
  get(j, "control_hz", r.control_hz);
  get(j, "low_paddle_z", r.low_paddle_z);
  get(j, "swing_time", r.swing_time);
}

json skill_json(const SkillSpec& s) {
  return {{"id", s.id},
          {"name", s.name},
          {"style", s.style == StyleSide::Forehand ? "forehand" : "backhand"},
          {"serve_receiver", s.is_serve_receiver},
          {"kind", skill_kind_name(s.kind)},
          {"target_landing", vec(s.target_landing)},
          {"target_speed", s.target_speed},
          {"noise_velocity", s.noise_velocity},
          {"noise_angle", s.noise_angle},
          {"spin_preset", s.spin_preset == SpinClass::Topspin ? "topspin" : "underspin"}};
}

SkillKind kind_from(const std::string& s) {
  for (SkillKind k : {SkillKind::Generalist, SkillKind::TargetLeft, SkillKind::TargetRight,
                      SkillKind::FastHit, SkillKind::TopspinServe, SkillKind::UnderspinServe})
    if (s == skill_kind_name(k)) return k;
  throw std::invalid_argument("unknown skill kind: " + s);
}

SkillSpec skill_from(const json& j) {
  SkillSpec s;
  get(j, "id", s.id);
  get(j, "name", s.name);
  std::string style = "forehand", preset = "topspin", kind = "generalist";
  get(j, "style", style);
  get(j, "kind", kind);
  get(j, "spin_preset", preset);
  s.style = style == "backhand" ? StyleSide::Backhand : StyleSide::Forehand;
  s.kind = kind_from(kind);
  s.spin_preset = preset == "underspin" ? SpinClass::Underspin : SpinClass::Topspin;
  get(j, "serve_receiver", s.is_serve_receiver);
  get(j, "target_landing", s.target_landing);
  get(j, "target_speed", s.target_speed);
  get(j, "noise_velocity", s.noise_velocity);
  get(j, "noise_angle", s.noise_angle);
  return s;
}

json es_json(const EsConfig& e) {
  return {{"step_size", e.step_size},
          {"perturbation_std", e.perturbation_std},
          {"num_perturbations", e.num_perturbations},
          {"rollouts_per_perturbation", e.rollouts_per_perturbation},
          {"keep_fraction", e.keep_fraction},
          {"max_env_steps", e.max_env_steps},
          {"orthogonal", e.orthogonal},
          {"normalize_obs", e.normalize_obs},
          {"threads", e.threads}};
}

void es_from(const json& j, EsConfig& e) {
  get(j, "step_size", e.step_size);
  get(j, "perturbation_std", e.perturbation_std);
  get(j, "num_perturbations", e.num_perturbations);
  get(j, "rollouts_per_perturbation", e.rollouts_per_perturbation);
  get(j, "keep_fraction", e.keep_fraction);
  get(j, "max_env_steps", e.max_env_steps);
  get(j, "orthogonal", e.orthogonal);
  get(j, "normalize_obs", e.normalize_obs);
  get(j, "threads", e.threads);
}

void profile_overlay(const json& j, OpponentProfile& p) {
  get(j, "serve_drive_fraction", p.serve_drive_fraction);
  get(j, "serve_underspin_fraction", p.serve_underspin_fraction);
  get(j, "serve_underspin_lo", p.serve_underspin_lo);
  get(j, "serve_underspin_hi", p.serve_underspin_hi);
  get(j, "serve_other_spin_lo", p.serve_other_spin_lo);
  get(j, "serve_other_spin_hi", p.serve_other_spin_hi);
  get(j, "serve_placement_std", p.serve_placement_std);
  get(j, "rally_speed_min", p.rally_speed_min);
  get(j, "rally_speed_max", p.rally_speed_max);
  get(j, "rally_underspin_fraction", p.rally_underspin_fraction);
  get(j, "rally_underspin_lo", p.rally_underspin_lo);
  get(j, "rally_underspin_hi", p.rally_underspin_hi);
  get(j, "rally_topspin_lo", p.rally_topspin_lo);
  get(j, "rally_topspin_hi", p.rally_topspin_hi);
  get(j, "rally_aim_std", p.rally_aim_std);
  get(j, "speed_carry", p.speed_carry);
  get(j, "position", p.position);
  get(j, "depth_weight", p.depth_weight);
  get(j, "reach_radius", p.reach_radius);
  get(j, "return_base", p.return_base);
  get(j, "speed_comfort", p.speed_comfort);
  get(j, "speed_sensitivity", p.speed_sensitivity);
  get(j, "distance_sensitivity", p.distance_sensitivity);
  get(j, "weak_side_penalty", p.weak_side_penalty);
  get(j, "exploit_from_game", p.exploit_from_game);
  get(j, "exploit_underspin_fraction", p.exploit_underspin_fraction);
  get(j, "exploit_spin_lo", p.exploit_spin_lo);
  get(j, "exploit_spin_hi", p.exploit_spin_hi);
  get(j, "exploit_speed_min", p.exploit_speed_min);
  get(j, "exploit_speed_max", p.exploit_speed_max);
}


json build_json(const Config& c) {
  json j;
  j["env"] = {{"flight", flight_json(c.env.flight)},
              {"contact", contact_json(c.env.contact)},
              {"geometry", geom_json(c.env.geom)}};
  j["robot"] = robot_json(c.robot);
  json roster = json::array();
  for (const auto& s : c.roster) roster.push_back(skill_json(s));
  j["roster"] = roster;
  j["segmentation"] = {{"hit_reversal_threshold", c.segmentation.hit_reversal_threshold},
                       {"velocity_window", c.segmentation.velocity_window},
                       {"min_samples", c.segmentation.min_samples},
                       {"min_segment_speed", c.segmentation.min_segment_speed}};
  j["sampling"] = {{"position_sigma", c.sampling.position_sigma},
                   {"velocity_sigma", c.sampling.velocity_sigma},
                   {"spin_sigma", c.sampling.spin_sigma},
                   {"rate_floor", c.sampling.rate_floor},
                   {"max_attempts", c.sampling.max_attempts}};
  j["fit"] = {{"restarts", c.fit.restarts},
              {"iterations_per_stage", c.fit.iterations_per_stage},
              {"perturbations", c.fit.perturbations},
              {"step_sigma_ratio", c.fit.step_sigma_ratio},
              {"polish_iterations", c.fit.polish_iterations},
              {"residual_ceiling", c.fit.residual_ceiling},
              {"sigma_stages", c.fit.sigma_stages}};
  j["strategy"] = {{"random_land_threshold", c.strategy.random_land_threshold},
                   {"top_n_land", c.strategy.top_n_land},
                   {"top_m", c.strategy.top_m},
                   {"strong_opponent_hit_rate", c.strategy.strong_opponent_hit_rate},
                   {"query_k", c.strategy.query_k},
                   {"return_scale", c.strategy.return_scale}};
  j["latency"] = {{"enabled", c.latency.enabled},
                  {"ball_obs_mean_ms", c.latency.ball_obs_mean_ms},
                  {"ball_obs_var", c.latency.ball_obs_var},
                  {"paddle_obs_mean_ms", c.latency.paddle_obs_mean_ms},
                  {"paddle_obs_var", c.latency.paddle_obs_var},
                  {"action_mean_ms", c.latency.action_mean_ms},
                  {"action_var", c.latency.action_var}};
  j["randomization"] = {{"table_damping_lo", c.randomization.table_damping_lo},
                        {"table_damping_hi", c.randomization.table_damping_hi},
                        {"paddle_damping_lo", c.randomization.paddle_damping_lo},
                        {"paddle_damping_hi", c.randomization.paddle_damping_hi},
                        {"paddle_friction_lo", c.randomization.paddle_friction_lo},
                        {"paddle_friction_hi", c.randomization.paddle_friction_hi},
                        {"table_friction_lo", c.randomization.table_friction_lo},
                        {"table_friction_hi", c.randomization.table_friction_hi},
                        {"damping_to_restitution", c.randomization.damping_to_restitution}};
  j["episode"] = {{"decision_delay_ticks", c.episode.decision_delay_ticks},
                  {"spin_observation_limit", c.episode.spin_observation_limit}};
  j["bandit_alpha"] = c.bandit_alpha;
  j["protective_stop_prob"] = c.protective_stop_prob;
  j["descriptor_repetitions"] = c.descriptor_repetitions;
  json presets;
  for (const auto& [name, es] : c.es_presets) presets[name] = es_json(es);
  j["es_presets"] = presets;
  json opponents = json::object();
  for (const auto& [name, text] : c.opponent_overrides) opponents[name] = json::parse(text);
  j["opponents"] = opponents;
  return j;
}

void overlay(Config& c, const json& j) {
  if (j.contains("env")) {
    const auto& e = j.at("env");
    if (e.contains("flight")) flight_from(e.at("flight"), c.env.flight);
    if (e.contains("contact")) contact_from(e.at("contact"), c.env.contact);
    if (e.contains("geometry")) geom_from(e.at("geometry"), c.env.geom);
  }
  if (j.contains("robot")) robot_from(j.at("robot"), c.robot);
  if (j.contains("roster")) {
    c.roster.clear();
    for (const auto& s : j.at("roster")) c.roster.push_back(skill_from(s));
  }
  if (j.contains("segmentation")) {
    const auto& s = j.at("segmentation");
    get(s, "hit_reversal_threshold", c.segmentation.hit_reversal_threshold);
    get(s, "velocity_window", c.segmentation.velocity_window);
    get(s, "min_samples", c.segmentation.min_samples);
    get(s, "min_segment_speed", c.segmentation.min_segment_speed);
  }
  if (j.contains("sampling")) {
    const auto& s = j.at("sampling");
    get(s, "position_sigma", c.sampling.position_sigma);
    get(s, "velocity_sigma", c.sampling.velocity_sigma);
    get(s, "spin_sigma", c.sampling.spin_sigma);
    get(s, "rate_floor", c.sampling.rate_floor);
    get(s, "max_attempts", c.sampling.max_attempts);
  }
  if (j.contains("fit")) {
    const auto& s = j.at("fit");
    get(s, "restarts", c.fit.restarts);
    get(s, "iterations_per_stage", c.fit.iterations_per_stage);
    get(s, "perturbations", c.fit.perturbations);
    get(s, "step_sigma_ratio", c.fit.step_sigma_ratio);
    get(s, "polish_iterations", c.fit.polish_iterations);
    get(s, "residual_ceiling", c.fit.residual_ceiling);
    get(s, "sigma_stages", c.fit.sigma_stages);
  }
  if (j.contains("strategy")) {
    const auto& s = j.at("strategy");
    get(s, "random_land_threshold", c.strategy.random_land_threshold);
    get(s, "top_n_land", c.strategy.top_n_land);
    get(s, "top_m", c.strategy.top_m);
    get(s, "strong_opponent_hit_rate", c.strategy.strong_opponent_hit_rate);
    get(s, "query_k", c.strategy.query_k);
    get(s, "return_scale", c.strategy.return_scale);
  }
  if (j.contains("latency")) {
    const auto& s = j.at("latency");
    get(s, "enabled", c.latency.enabled);
    get(s, "ball_obs_mean_ms", c.latency.ball_obs_mean_ms);
    get(s, "ball_obs_var", c.latency.ball_obs_var);
    get(s, "paddle_obs_mean_ms", c.latency.paddle_obs_mean_ms);
    get(s, "paddle_obs_var", c.latency.paddle_obs_var);
    get(s, "action_mean_ms", c.latency.action_mean_ms);
    get(s, "action_var", c.latency.action_var);
  }
  if (j.contains("randomization")) {
    const auto& s = j.at("randomization");
    get(s, "table_damping_lo", c.randomization.table_damping_lo);
    get(s, "table_damping_hi", c.randomization.table_damping_hi);
    get(s, "paddle_damping_lo", c.randomization.paddle_damping_lo);
    get(s, "paddle_damping_hi", c.randomization.paddle_damping_hi);
    get(s, "paddle_friction_lo", c.randomization.paddle_friction_lo);
    get(s, "paddle_friction_hi", c.randomization.paddle_friction_hi);
    get(s, "table_friction_lo", c.randomization.table_friction_lo);
    get(s, "table_friction_hi", c.randomization.table_friction_hi);
    get(s, "damping_to_restitution", c.randomization.damping_to_restitution);
  }
  if (j.contains("episode")) {
    const auto& s = j.at("episode");
    get(s, "decision_delay_ticks", c.episode.decision_delay_ticks);
    get(s, "spin_observation_limit", c.episode.spin_observation_limit);
  }
  get(j, "bandit_alpha", c.bandit_alpha);
  get(j, "protective_stop_prob", c.protective_stop_prob);
  get(j, "descriptor_repetitions", c.descriptor_repetitions);
  if (j.contains("es_presets"))
    for (auto& [name, body] : j.at("es_presets").items()) {
      EsConfig base =
          c.es_presets.count(name) ? c.es_presets.at(name) : EsConfig{};
      es_from(body, base);
      c.es_presets[name] = base;
    }
  if (j.contains("opponents"))
    for (auto& [name, body] : j.at("opponents").items()) {
      json merged = body;
      if (c.opponent_overrides.count(name)) {
        merged = json::parse(c.opponent_overrides.at(name));
        merged.update(body);
      }
      c.opponent_overrides[name] = merged.dump();
    }
}

}  // namespace

std::map<std::string, EsConfig> Config::default_es_presets() {
  std::map<std::string, EsConfig> m;
  m["simulation"] = EsConfig::preset("simulation");
  m["adapter"] = EsConfig::preset("adapter");
  EsConfig desk;
  desk.num_perturbations = 24;
  desk.rollouts_per_perturbation = 2;
  desk.keep_fraction = 0.5;
  desk.step_size = 0.01;
  desk.perturbation_std = 0.025;
  m["desk"] = desk;
  return m;
}

EsConfig Config::es_preset(const std::string& name) const {
  auto it = es_presets.find(name);
  if (it == es_presets.end()) throw std::invalid_argument("unknown ES preset: " + name);
  return it->second;
}

OpponentProfile Config::opponent(const std::string& name) const {
  OpponentProfile p = OpponentProfile::preset(name);
  auto it = opponent_overrides.find(name);
  if (it != opponent_overrides.end()) profile_overlay(json::parse(it->second), p);
  return p;
}

std::string Config::to_json_string() const { return build_json(*this).dump(1); }

void Config::apply_json_string(const std::string& text) {
  overlay(*this, json::parse(text));
}

void Config::apply_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must be key.path=value: " + kv);
  const std::string path = kv.substr(0, eq);
  const std::string value = kv.substr(eq + 1);

  // Parse the value as JSON when possible, else treat it as a string.
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;
  }

  json patch;
  json* cursor = &patch;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw std::invalid_argument("bad override path: " + path);
    if (dot == std::string::npos) {
      (*cursor)[key] = parsed;
      break;
    }
    cursor = &(*cursor)[key];
    start = dot + 1;
  }
  overlay(*this, patch);
}

std::string Config::hash() const {
  const std::string dump = to_json_string();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Config Config::load(const std::string& path) {
  Config c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  c.apply_json_string(ss.str());
  return c;
}

void Config::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << to_json_string() << "\n";
}

}  // namespace ttsim
