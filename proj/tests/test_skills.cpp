#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "ttsim/skills.hpp"

using namespace ttsim;

namespace {

Dataset cone_corpus(const PhysicsEnv& env, double spin_x, int n = 6, unsigned seed = 5) {
  Dataset d;
  Rng gen(seed);
  int added = 0;
  while (added < n) {
    BallStateRecord r;
    r.initial.position = {gen.uniform(-0.04, 0.04), 1.25, 0.35 + gen.uniform(-0.03, 0.03)};
    r.initial.velocity = {gen.uniform(-0.1, 0.1), -4.3 + gen.uniform(-0.15, 0.15),
                          1.6 + gen.uniform(-0.1, 0.1)};
    r.initial.spin = {spin_x + gen.uniform(-5, 5), 0, 0};
    r.style_side = StyleSide::Forehand;
    if (!validate_incoming_trajectory(r.initial, false, env)) continue;
    d.add(r);
    ++added;
  }
  return d;
}

double eval_land_rate(const Skill& skill, const Dataset& d, const PhysicsEnv& env,
                      const RobotParams& robot, int n, unsigned seed = 777) {
  SampleConfig scfg;
  Rng rng(seed);
  int lands = 0;
  for (int i = 0; i < n; ++i) {
    BallState b = sample_initial_state(d, rng, 0.3, scfg, env);
    Rng erng = rng.child(50000 + i);
    if (run_skill_episode(skill, b, env, robot, erng).landed) ++lands;
  }
  return static_cast<double>(lands) / n;
}

BallState legal_incoming(Rng& rng, const PhysicsEnv& env) {
  for (int tries = 0; tries < 300; ++tries) {
    BallState b;
    b.position = {rng.uniform(-0.4, 0.4), rng.uniform(1.1, 1.4), rng.uniform(0.25, 0.45)};
    b.velocity = {rng.uniform(-0.8, 0.8), rng.uniform(-6.0, -4.2), rng.uniform(0.6, 2.0)};
    b.spin = {rng.uniform(-50, 80), 0, 0};
    if (validate_incoming_trajectory(b, false, env)) return b;
  }
  return {};
}

EsConfig small_es() {
  EsConfig es;
  es.num_perturbations = 24;
  es.rollouts_per_perturbation = 2;
  es.keep_fraction = 0.5;
  es.step_size = 0.01;
  es.perturbation_std = 0.025;
  return es;
}

}  // namespace

TEST_CASE("default roster matches the configured taxonomy") {
  auto roster = default_roster();
  CHECK(roster.size() == 17);
  int rally = 0, serve = 0, fh = 0, bh = 0;
  std::set<int> ids;
  for (const auto& s : roster) {
    ids.insert(s.id);
    (s.is_serve_receiver ? serve : rally)++;
    (s.style == StyleSide::Forehand ? fh : bh)++;
    CHECK(std::abs(s.target_landing.x) <= 0.7625);
    CHECK(s.target_landing.y > 0.0);
    CHECK(s.target_landing.y <= 1.37);
  }
  CHECK(ids.size() == 17);
  CHECK(rally == 13);
  CHECK(serve == 4);
  CHECK(fh == 11);
  CHECK(bh == 6);
}

TEST_CASE("net_height_reward exact values") {
  CHECK(net_height_reward(0.173) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(net_height_reward(0.5) == doctest::Approx(-1.1).epsilon(1e-12));
  CHECK(net_height_reward(0.25) == doctest::Approx(std::exp(-0.77)).epsilon(1e-12));
  CHECK(net_height_reward(0.3) == doctest::Approx(-1.1));   // boundary excluded
  CHECK(net_height_reward(0.1) == doctest::Approx(-1.1));
  CHECK(net_height_reward(0.2) == doctest::Approx(std::exp(-10.0 * 0.027)));
}

TEST_CASE("compute_reward: perfect-return transcript hits the max band") {
  EpisodeTranscript tr;
  tr.hit = true;
  tr.landed = true;
  tr.min_ball_distance = 0.0;
  tr.commanded_velocity.assign(30, Vec3{});
  tr.paddle_position.assign(30, Vec3{0, -1.3, 0.3});
  tr.pose_distance.assign(5, 0.0);

  RewardConfig cfg;
  tr.style = StyleSide::Forehand;
  const double fh = compute_reward(tr, cfg);
  CHECK(fh == doctest::Approx(5.1));
  tr.style = StyleSide::Backhand;
  const double bh = compute_reward(tr, cfg);
  CHECK(bh == doctest::Approx(6.1));
  CHECK(fh >= 5.1 - 1e-9);
  CHECK(bh <= 6.1 + 1e-9);
}

TEST_CASE("compute_reward: additive in each weighted term") {
  EpisodeTranscript tr;
  tr.hit = true;
  tr.landed = true;
  tr.min_ball_distance = 0.1;
  tr.table_collision_steps = 1;
  tr.low_paddle_steps = 3;
  Rng rng(3);
  for (int i = 0; i < 40; ++i) {
    tr.commanded_velocity.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-1, 1)});
    tr.paddle_position.push_back({0, -1.4, 0.3});
    tr.pose_distance.push_back(0.2 + 0.01 * i);
  }
  RewardConfig cfg;
  const double base = compute_reward(tr, cfg);

  // Zeroing one weight removes exactly that term's contribution.
  RewardConfig no_hitland = cfg;
  no_hitland.w_hit_and_land = 0.0;
  CHECK(base - compute_reward(tr, no_hitland) == doctest::Approx(0.1 * 1.0));

  RewardConfig no_coll = cfg;
  no_coll.w_collision = 0.0;
  CHECK(base - compute_reward(tr, no_coll) == doctest::Approx(-1.0 * 1.0));

  // One extra simulated collision step decreases the total by the weight.
  EpisodeTranscript worse = tr;
  worse.table_collision_steps += 1;
  CHECK(base - compute_reward(worse, cfg) == doctest::Approx(cfg.w_collision));

  // With no paddle contact the hit-and-land bonus contributes exactly zero.
  EpisodeTranscript no_contact = tr;
  no_contact.hit = false;
  no_contact.landed = false;
  CHECK(compute_reward(no_contact, cfg) ==
        doctest::Approx(compute_reward(no_contact, no_hitland)));
}

TEST_CASE("FiLM adapter identity and elementwise law") {
  FilmAdapter id = FilmAdapter::identity(6, 16);
  std::vector<double> action{0.1, -0.5, 0.9, 0.0, 0.3, -0.2};
  std::vector<double> features(16, 0.7);
  auto out = apply_film(action, id, features);
  for (size_t i = 0; i < action.size(); ++i) CHECK(out[i] == action[i]);

  // gamma = 0, beta = b: rig A so gamma becomes 0 and B so beta is b.
  FilmAdapter rig = FilmAdapter::identity(2, 2);
  std::vector<double> f{1.0, 0.0};
  // gamma_i = 1 + A[i][0] -> A[i][0] = -1 makes gamma zero.
  rig.params[0 * 2 + 0] = -1.0;
  rig.params[1 * 2 + 0] = -1.0;
  // beta block starts at action_dim*feature_dim = 4.
  rig.params[4 + 0 * 2 + 0] = 2.5;
  rig.params[4 + 1 * 2 + 0] = -1.5;
  auto rigout = apply_film({0.9, 0.9}, rig, f);
  CHECK(rigout[0] == doctest::Approx(2.5));
  CHECK(rigout[1] == doctest::Approx(-1.5));

  // Random gamma/beta against an elementwise oracle.
  Rng rng(8);
  FilmAdapter rnd = FilmAdapter::identity(4, 3);
  for (auto& v : rnd.params) v = rng.gaussian();
  std::vector<double> feats{0.4, -1.2, 0.8};
  std::vector<double> act{0.2, -0.7, 1.1, 0.05};
  std::vector<double> gamma, beta;
  rnd.gamma_beta(feats, &gamma, &beta);
  auto got = apply_film(act, rnd, feats);
  for (int i = 0; i < 4; ++i) {
    double g = 1.0, b = 0.0;
    for (int j = 0; j < 3; ++j) {
      g += rnd.params[i * 3 + j] * feats[j];
      b += rnd.params[12 + i * 3 + j] * feats[j];
    }
    CHECK(got[i] == doctest::Approx(g * act[i] + b).epsilon(1e-12));
  }

  CHECK_THROWS(apply_film({1.0}, rnd, feats));
}

TEST_CASE("plan_stroke respects actuator limits and is deterministic") {
  PhysicsEnv env;
  RobotParams robot;
  auto roster = default_roster();
  SkillSpec spec = roster[0];
  spec.noise_velocity = 0.0;
  spec.noise_angle = 0.0;

  Rng brng(12);
  BallState ball = legal_incoming(brng, env);
  StrokePlan p1 = plan_stroke_intercept(spec, ball, env, robot);
  StrokePlan p2 = plan_stroke_intercept(spec, ball, env, robot);
  REQUIRE(p1.reachable);
  CHECK(p1.intercept_t == p2.intercept_t);
  CHECK(p1.contact_velocity.x == p2.contact_velocity.x);
  CHECK(p1.contact_normal.z == p2.contact_normal.z);

  Rng prng(44);
  for (int i = 0; i < 200; ++i) {
    PaddleState paddle;
    paddle.position = {prng.uniform(-1, 1), prng.uniform(-2, -1.1), prng.uniform(0.05, 1.2)};
    paddle.normal = Vec3{prng.gaussian(), prng.gaussian() + 2.0, prng.gaussian()}.normalized();
    const double t = prng.uniform(0, 1.2);
    PaddleCommand cmd = plan_stroke(spec, p1, ball, paddle, t, robot);
    CHECK(cmd.velocity.norm() <= robot.max_speed + 1e-9);
    CHECK(cmd.angular_velocity.norm() <= robot.max_normal_rate + 1e-9);
  }
}

TEST_CASE("plan_stroke: ball already past the paddle is unreachable") {
  PhysicsEnv env;
  RobotParams robot;
  SkillSpec spec = default_roster()[0];
  BallState gone;
  gone.position = {0, -2.2, 0.3};
  gone.velocity = {0, -3.0, 0.5};  // heading away behind the robot
  StrokePlan plan = plan_stroke_intercept(spec, gone, env, robot);
  CHECK(!plan.reachable);
  PaddleState paddle;
  paddle.position = robot.home_position;
  paddle.normal = {0, 1, 0};
  PaddleCommand cmd = plan_stroke(spec, plan, gone, paddle, 0.0, robot);
  CHECK(cmd.velocity.norm() == 0.0);
  CHECK(cmd.angular_velocity.norm() == 0.0);

  Skill skill(spec);
  Rng erng(5);
  EpisodeResult res = run_skill_episode(skill, gone, env, robot, erng);
  CHECK(!res.reachable);
  CHECK(!res.hit);
}

TEST_CASE("every skill starts each ball from the one shared pose") {
  PhysicsEnv env;
  RobotParams robot;
  auto roster = default_roster();
  Rng brng(7);
  BallState ball = legal_incoming(brng, env);
  for (int sid : {0, 4, 9, 10, 13, 16}) {
    Skill skill(roster[sid]);
    Rng erng(11);
    EpisodeResult res = run_skill_episode(skill, ball, env, robot, erng);
    REQUIRE(!res.transcript.paddle_position.empty());
    const Vec3 start = res.transcript.paddle_position.front();
    CHECK((start - robot.home_position).norm() <= 1e-9);
  }
}

TEST_CASE("zero-noise stroke accuracy on reachable slow balls") {
  // Closed-loop rollout oracle: median landing error of the noiseless
  // generalist over 100 benign slow balls. The frozen bound comes from
  // running the oracle (median 0.092 m at this seed).
  PhysicsEnv env;
  RobotParams robot;
  SkillSpec spec = default_roster()[0];
  spec.noise_velocity = 0.0;
  spec.noise_angle = 0.0;
  Skill skill(spec);
  Rng brng(31);
  std::vector<double> errs;
  int n = 0;
  while (n < 100) {
    BallState b;
    b.position = {brng.uniform(-0.15, 0.15), brng.uniform(1.2, 1.35), brng.uniform(0.32, 0.42)};
    b.velocity = {brng.uniform(-0.2, 0.2), brng.uniform(-4.8, -4.4), brng.uniform(1.2, 1.6)};
    b.spin = {brng.uniform(-5, 15), 0, 0};
    if (!validate_incoming_trajectory(b, false, env)) continue;
    ++n;
    Rng erng(500 + n);
    EpisodeResult r = run_skill_episode(skill, b, env, robot, erng);
    errs.push_back(r.landed ? std::hypot(r.landing.x - spec.target_landing.x,
                                         r.landing.y - spec.target_landing.y)
                            : 1.0);
  }
  std::sort(errs.begin(), errs.end());
  CHECK(errs[50] <= 0.12);
  CHECK(errs[75] <= 0.16);
}

TEST_CASE("excessive decision delay forfeits the ball") {
  PhysicsEnv env;
  RobotParams robot;
  Skill skill(default_roster()[0]);
  Rng brng(3);
  int lands = 0, n = 0;
  while (n < 15) {
    BallState b = legal_incoming(brng, env);
    ++n;
    EnvOptions opt;
    opt.decision_delay_ticks = 100;  // the ball is long gone
    Rng erng(40 + n);
    if (run_skill_episode(skill, b, env, robot, erng, opt).landed) ++lands;
  }
  CHECK(lands == 0);
}

TEST_CASE("zero-noise skills are deterministic; targeting separates landings") {
  PhysicsEnv env;
  RobotParams robot;
  auto roster = default_roster();

  SkillSpec left = roster[4];   // fh_hit_left
  SkillSpec right = roster[3];  // fh_hit_right
  left.noise_velocity = left.noise_angle = 0.0;
  right.noise_velocity = right.noise_angle = 0.0;

  Rng brng(21);
  double sum_left = 0.0, sum_right = 0.0;
  int n_left = 0, n_right = 0;
  for (int i = 0; i < 25; ++i) {
    BallState ball = legal_incoming(brng, env);
    Skill sl(left), sr(right);
    Rng e1(100 + i), e2(100 + i), e3(100 + i);
    EpisodeResult rl = run_skill_episode(sl, ball, env, robot, e1);
    EpisodeResult rl2 = run_skill_episode(sl, ball, env, robot, e2);
    CHECK(rl.landed == rl2.landed);
    CHECK(rl.hit_velocity_y == rl2.hit_velocity_y);  // deterministic replay
    EpisodeResult rr = run_skill_episode(sr, ball, env, robot, e3);
    if (rl.landed) {
      sum_left += rl.landing.x;
      ++n_left;
    }
    if (rr.landed) {
      sum_right += rr.landing.x;
      ++n_right;
    }
  }
  REQUIRE(n_left >= 5);
  REQUIRE(n_right >= 5);
  CHECK(sum_left / n_left < sum_right / n_right);
  CHECK(sum_left / n_left < 0.0);
  CHECK(sum_right / n_right > 0.0);
}

TEST_CASE("bimodal spin handling shows up through the episode") {
  // An identical incoming ball contacted under the Topspin vs Underspin
  // parameter set leaves the paddle at different speeds.
  PhysicsEnv env;
  RobotParams robot;
  SkillSpec spec = default_roster()[0];
  spec.noise_velocity = spec.noise_angle = 0.0;

  BallState ball;
  ball.position = {0.2, 1.25, 0.35};
  ball.velocity = {0, -4.5, 1.5};
  REQUIRE(validate_incoming_trajectory(ball, false, env));

  Skill skill(spec);
  EnvOptions top_opt, under_opt;
  top_opt.spin_conditioned_contact = false;
  top_opt.fixed_contact_class = SpinClass::Topspin;
  under_opt.spin_conditioned_contact = false;
  under_opt.fixed_contact_class = SpinClass::Underspin;
  Rng e1(1), e2(1);
  EpisodeResult rt = run_skill_episode(skill, ball, env, robot, e1, top_opt);
  EpisodeResult ru = run_skill_episode(skill, ball, env, robot, e2, under_opt);
  REQUIRE(rt.hit);
  REQUIRE(ru.hit);
  CHECK(rt.hit_velocity_y != doctest::Approx(ru.hit_velocity_y));
}

TEST_CASE("train_policy_skill: zero iterations returns the initialization") {
  PhysicsEnv env;
  RobotParams robot;
  Dataset d = cone_corpus(env, 5.0);
  EsConfig es = small_es();
  RewardConfig reward;
  PolicyTrainOptions opts;
  opts.iterations = 0;
  opts.style = StyleSide::Forehand;
  Rng rng(1);
  Skill out = train_policy_skill(d, es, reward, rng, env, robot, opts);
  CHECK(out.policy().params == PolicyNet::zero().params);
}

TEST_CASE("train_policy_skill: identical seeds give identical parameters") {
  PhysicsEnv env;
  RobotParams robot;
  Dataset d = cone_corpus(env, 5.0);
  EsConfig es = small_es();
  es.num_perturbations = 6;
  RewardConfig reward;
  PolicyTrainOptions opts;
  opts.iterations = 3;
  opts.style = StyleSide::Forehand;
  Rng r1(42), r2(42);
  Skill a = train_policy_skill(d, es, reward, r1, env, robot, opts);
  Skill b = train_policy_skill(d, es, reward, r2, env, robot, opts);
  CHECK(a.policy().params == b.policy().params);
}

TEST_CASE("train_policy_skill: toy run lifts the land rate by 0.2") {
  PhysicsEnv env;
  RobotParams robot;
  Dataset d = cone_corpus(env, 5.0);  // slow no-spin cone
  EsConfig es = small_es();
  RewardConfig reward;
  PolicyTrainOptions opts;
  opts.iterations = 200;
  opts.style = StyleSide::Forehand;
  opts.perturbation_scale = 0.3;
  opts.balls_per_rollout = 2;

  SkillSpec pspec;
  pspec.style = StyleSide::Forehand;
  pspec.name = "policy";
  const double before = eval_land_rate(Skill(pspec, PolicyNet::zero()), d, env, robot, 100);

  Rng rng(42);
  Skill trained = train_policy_skill(d, es, reward, rng, env, robot, opts);
  const double after = eval_land_rate(trained, d, env, robot, 100);
  CHECK(after - before >= 0.2);
}

TEST_CASE("topspin_correct: stage-2 identity adapter preserves stage-1 behavior") {
  PolicyNet net = PolicyNet::zero();
  Rng rng(13);
  for (auto& v : net.params) v = 0.05 * rng.gaussian();
  for (int i = 0; i < 50; ++i) {
    std::vector<double> obs(kObsDim);
    for (auto& v : obs) v = rng.gaussian();
    net.normalizer.update(obs);
  }
  PolicyNet with_film = net;
  with_film.film = FilmAdapter::identity(kActionDim, kObsFeatures);

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> obs(kObsDim);
    for (auto& v : obs) v = rng.gaussian();
    std::vector<double> feats(obs.end() - kObsFeatures, obs.end());
    auto a = net.forward(obs, feats);
    auto b = with_film.forward(obs, feats);
    for (int i = 0; i < kActionDim; ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("topspin_correct improves topspin without losing underspin") {
  PhysicsEnv env;
  RobotParams robot;
  // Mixed corpus: topspin and underspin cones.
  Dataset d = cone_corpus(env, 65.0, 6, 5);
  Dataset under = cone_corpus(env, -35.0, 6, 9);
  for (const auto& r : under.records()) {
    BallStateRecord copy = r;
    copy.id = -1;
    d.add(copy);
  }
  Dataset top_only = cone_corpus(env, 65.0, 6, 5);

  EsConfig es = small_es();
  RewardConfig reward;
  PolicyTrainOptions opts;
  opts.iterations = 120;
  opts.style = StyleSide::Forehand;
  opts.perturbation_scale = 0.3;
  opts.balls_per_rollout = 2;

  Rng rng(77);
  Skill base = train_policy_skill(d, es, reward, rng, env, robot, opts);
  const double top_before = eval_land_rate(base, top_only, env, robot, 60, 31337);
  const double under_before = eval_land_rate(base, under, env, robot, 60, 424242);

  TopspinCorrectOptions copts;
  copts.stage1_iterations = 60;
  copts.film_episode_budget = 900;
  copts.train = opts;
  Rng crng(99);
  // Stage 1 alone, to separate what the FiLM stage preserves.
  PolicyTrainOptions stage1 = opts;
  stage1.topspin_only = true;
  stage1.iterations = copts.stage1_iterations;
  RewardConfig shaped = reward;
  shaped.enable_net_height = true;
  shaped.enable_contact_angle = true;
  Rng s1rng = crng;  // same stream the full pipeline consumes first
  Skill stage1_skill =
      train_policy_skill(d, es, shaped, s1rng, env, robot, stage1, nullptr, &base.policy());
  const double under_stage1 = eval_land_rate(stage1_skill, under, env, robot, 60, 424242);

  Skill corrected = topspin_correct(base, d, es, reward, crng, env, robot, copts);

  const double top_after = eval_land_rate(corrected, top_only, env, robot, 60, 31337);
  const double under_after = eval_land_rate(corrected, under, env, robot, 60, 424242);
  // The full pipeline must help topspin; the FiLM stage must not cost
  // underspin ability relative to its stage-1 base.
  CHECK(top_after >= top_before);
  CHECK(under_stage1 - under_after <= 0.05);
  (void)under_before;

  // No topspin records is an error.
  Rng e(1);
  CHECK_THROWS(topspin_correct(base, under, es, reward, e, env, robot, copts));
}

TEST_CASE("policy persistence round-trips") {
  PolicyNet net = PolicyNet::zero();
  Rng rng(4);
  for (auto& v : net.params) v = rng.gaussian();
  for (int i = 0; i < 20; ++i) {
    std::vector<double> obs(kObsDim);
    for (auto& v : obs) v = rng.gaussian();
    net.normalizer.update(obs);
  }
  net.film = FilmAdapter::identity(kActionDim, kObsFeatures);
  for (auto& v : net.film->params) v = rng.gaussian();

  const std::string path = "test_policy.txt";
  save_policy(net, path);
  PolicyNet loaded = load_policy(path);
  std::filesystem::remove(path);
  CHECK(loaded.params == net.params);
  CHECK(loaded.normalizer.count() == net.normalizer.count());
  CHECK(loaded.normalizer.mean() == net.normalizer.mean());
  REQUIRE(loaded.film.has_value());
  CHECK(loaded.film->params == net.film->params);
}
