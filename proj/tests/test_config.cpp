#include <doctest.h>

#include <filesystem>

#include "ttsim/config.hpp"

using namespace ttsim;

TEST_CASE("config round-trips through JSON with a stable hash") {
  Config c;
  const std::string h = c.hash();
  CHECK(h.size() == 16);
  CHECK(Config{}.hash() == h);  // defaults hash deterministically

  const std::string path = "test_config.json";
  c.save(path);
  Config loaded = Config::load(path);
  std::filesystem::remove(path);
  CHECK(loaded.hash() == h);
  CHECK(loaded.roster.size() == c.roster.size());
  CHECK(loaded.env.flight.blunt_drag == c.env.flight.blunt_drag);
}

TEST_CASE("dotted overrides reach nested fields and change the hash") {
  Config c;
  const std::string h0 = c.hash();
  c.apply_override("env.contact.table_friction=0.27");
  CHECK(c.env.contact.table_friction == 0.27);
  CHECK(c.hash() != h0);

  c.apply_override("robot.max_speed=5.5");
  CHECK(c.robot.max_speed == 5.5);
  c.apply_override("episode.spin_observation_limit=90");
  CHECK(c.episode.spin_observation_limit == 90.0);
  c.apply_override("latency.enabled=false");
  CHECK(!c.latency.enabled);

  CHECK_THROWS(c.apply_override("no-equals-sign"));
}

TEST_CASE("published ES presets are loadable by name") {
  Config c;
  EsConfig sim = c.es_preset("simulation");
  CHECK(sim.step_size == doctest::Approx(0.00375));
  CHECK(sim.num_perturbations == 200);
  CHECK(sim.rollouts_per_perturbation == 15);
  CHECK(sim.keep_fraction == doctest::Approx(0.30));
  CHECK(sim.max_env_steps == 200);
  CHECK(sim.orthogonal);
  CHECK(sim.normalize_obs);

  EsConfig ad = c.es_preset("adapter");
  CHECK(ad.step_size == doctest::Approx(0.00125));
  CHECK(ad.num_perturbations == 5);
  CHECK(ad.rollouts_per_perturbation == 3);
  CHECK(ad.keep_fraction == doctest::Approx(0.60));

  CHECK_NOTHROW(c.es_preset("desk"));
  CHECK_THROWS(c.es_preset("nope"));

  // Presets are overridable through the config file.
  c.apply_json_string(R"({"es_presets":{"desk":{"num_perturbations":8}}})");
  CHECK(c.es_preset("desk").num_perturbations == 8);
  CHECK(c.es_preset("desk").step_size == doctest::Approx(0.01));  // untouched field
}

TEST_CASE("opponent profile parameters overlay the presets") {
  Config c;
  OpponentProfile base = c.opponent("intermediate");
  CHECK(base.return_base == doctest::Approx(0.75));

  c.apply_json_string(R"({"opponents":{"intermediate":{"return_base":0.5,"reach_radius":0.8}}})");
  OpponentProfile tuned = c.opponent("intermediate");
  CHECK(tuned.return_base == doctest::Approx(0.5));
  CHECK(tuned.reach_radius == doctest::Approx(0.8));
  CHECK(tuned.weak_side_penalty == doctest::Approx(base.weak_side_penalty));

  // Unknown names still resolve through the built-in presets.
  CHECK(c.opponent("exploiter").exploit_from_game == 1);
  CHECK_THROWS(c.opponent("martian"));
}
