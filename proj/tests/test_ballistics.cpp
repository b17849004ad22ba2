#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "ttsim/ballistics.hpp"
#include "ttsim/rng.hpp"

using namespace ttsim;

namespace {

BallState random_state(Rng& rng) {
  BallState s;
  s.position = {rng.uniform(-0.7, 0.7), rng.uniform(-1.3, 1.3), rng.uniform(0.05, 1.0)};
  s.velocity = {rng.uniform(-3, 3), rng.uniform(-9, 9), rng.uniform(-4, 4)};
  s.spin = {rng.uniform(-150, 150), rng.uniform(-30, 30), rng.uniform(-30, 30)};
  return s;
}

FlightParams vacuum_params() {
  FlightParams p;
  p.blunt_drag = 0.0;
  p.magnus_lift = 0.0;
  return p;
}

}  // namespace

TEST_CASE("step_flight: only gravity acts on a resting ball") {
  BallState s;
  s.position = {0, 0, 0.5};
  FlightParams p;
  BallState n = step_flight(s, p);
  CHECK(n.velocity.z == doctest::Approx(-p.gravity * p.dt).epsilon(1e-15));
  CHECK(n.velocity.x == 0.0);
  CHECK(n.velocity.y == 0.0);
  CHECK(n.spin.x == s.spin.x);
  CHECK(n.spin.y == s.spin.y);
  CHECK(n.spin.z == s.spin.z);
}

TEST_CASE("step_flight: ballistic limit matches the discrete parabola") {
  // With drag/lift zeroed the integrator solves z(t_n) = z0 + vz0*t_n -
  // g*t_n*(t_n+dt)/2 exactly; deviation from that quadratic is pure rounding.
  FlightParams p = vacuum_params();
  BallState s;
  s.position = {0.1, -0.5, 0.6};
  s.velocity = {1.0, 4.0, 2.5};
  BallState cur = s;
  for (int n = 1; n <= 1000; ++n) {
    cur = step_flight(cur, p);
    const double t = n * p.dt;
    const double ex = s.position.x + s.velocity.x * t;
    const double ey = s.position.y + s.velocity.y * t;
    const double ez = s.position.z + s.velocity.z * t - 0.5 * p.gravity * t * (t + p.dt);
    CHECK(std::abs(cur.position.x - ex) <= 1e-9);
    CHECK(std::abs(cur.position.y - ey) <= 1e-9);
    CHECK(std::abs(cur.position.z - ez) <= 1e-9);
  }
}

TEST_CASE("step_flight: topspin on an incoming ball curves it downward") {
  // Incoming balls travel toward the robot (-y); positive spin.x is topspin
  // and must dip. Sign checked against the brute-force cross product.
  FlightParams p;
  BallState s;
  s.position = {0, 1.0, 0.4};
  s.velocity = {0, -5.0, 0};
  s.spin = {100.0, 0, 0};

  Vec3 drag, magnus;
  flight_forces(s, p, &drag, &magnus);
  const Vec3 brute = s.spin.cross(s.velocity - p.wind);
  CHECK(magnus.z < 0.0);
  CHECK(brute.z < 0.0);
  CHECK(magnus.x * brute.x >= 0.0);
  CHECK(magnus.y * brute.y >= 0.0);
  CHECK(magnus.z * brute.z > 0.0);

  // And the integrated step picks up the downward acceleration.
  BallState n = step_flight(s, p);
  CHECK(n.velocity.z < -p.gravity * p.dt);
}

TEST_CASE("step_flight: drag never adds energy, Magnus is perpendicular") {
  FlightParams p;
  Rng rng(42);
  for (int i = 0; i < 2000; ++i) {
    BallState s = random_state(rng);
    Vec3 drag, magnus;
    flight_forces(s, p, &drag, &magnus);
    const Vec3 v_rel = s.velocity - p.wind;
    CHECK(drag.dot(v_rel) <= 0.0);
    const double denom = magnus.norm() * v_rel.norm();
    if (denom > 0.0) CHECK(std::abs(magnus.dot(v_rel)) / denom <= 1e-9);
  }
}

TEST_CASE("step_flight is deterministic") {
  FlightParams p;
  Rng rng(7);
  BallState s = random_state(rng);
  BallState a = step_flight(s, p);
  BallState b = step_flight(s, p);
  CHECK(a.position.x == b.position.x);
  CHECK(a.velocity.y == b.velocity.y);
  CHECK(a.spin.z == b.spin.z);
}

TEST_CASE("step_flight rejects non-finite state") {
  FlightParams p;
  BallState s;
  s.velocity.x = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(step_flight(s, p), std::invalid_argument);
}

TEST_CASE("bounce_table: decoupled normal reflection") {
  ContactParams c;
  c.table_restitution_normal = 0.9;
  c.table_friction = 0.0;
  c.table_spin_coupling = 0.0;
  BallState s;
  s.position = {0, -0.5, 0.02};
  s.velocity = {0, 4, -3};
  BallState out = bounce_table(s, c);
  CHECK(out.velocity.x == doctest::Approx(0.0));
  CHECK(out.velocity.y == doctest::Approx(4.0));
  CHECK(out.velocity.z == doctest::Approx(2.7));
  CHECK(out.spin.norm() == 0.0);
}

TEST_CASE("bounce_table: spin coupling adds/removes forward speed") {
  ContactParams c;
  c.table_friction = 0.0;
  c.table_spin_coupling = 0.5;
  const double r = 0.02;

  BallState top;
  top.position = {0, -0.5, r};
  top.velocity = {0, 4, -3};
  top.spin = {100, 0, 0};
  BallState out_top = bounce_table(top, c, r);
  // +x spin kicks +y by exactly coupling * r * spin.x with no friction.
  CHECK(out_top.velocity.y == doctest::Approx(4.0 + 0.5 * r * 100.0));

  BallState under = top;
  under.spin = {-100, 0, 0};
  BallState out_under = bounce_table(under, c, r);
  CHECK(out_under.velocity.y == doctest::Approx(4.0 - 0.5 * r * 100.0));
  CHECK(out_top.velocity.y > out_under.velocity.y);

  // With default friction the ordering still holds.
  ContactParams d;
  BallState a = bounce_table(top, d, r);
  BallState b = bounce_table(under, d, r);
  CHECK(a.velocity.y > b.velocity.y);
}

TEST_CASE("bounce_table: elastic limit conserves kinetic energy") {
  ContactParams c;
  c.table_restitution_normal = 1.0;
  c.table_friction = 0.0;
  c.table_spin_coupling = 0.0;
  BallState s;
  s.position = {0.1, -0.3, 0.02};
  s.velocity = {1.5, 5.0, -2.7};
  s.spin = {80, 10, -5};
  BallState out = bounce_table(s, c);
  const double before = s.velocity.norm2();
  const double after = out.velocity.norm2();
  CHECK(std::abs(after - before) / before <= 1e-9);
}

TEST_CASE("bounce_table rejects upward velocity") {
  ContactParams c;
  BallState s;
  s.velocity = {0, 4, 1};
  CHECK_THROWS_AS(bounce_table(s, c), std::invalid_argument);
}

TEST_CASE("contact_paddle: mirror reflection off a resting paddle") {
  ContactParams c;
  PaddleState paddle;
  paddle.position = {0, -1.4, 0.3};
  paddle.normal = {0, -1, 0};
  BallState ball;
  ball.position = {0, -1.35, 0.3};  // approaching the plane from +y
  ball.velocity = {0, -5, 0};

  for (double e : {0.6, 0.85}) {
    ContactParams cc = c;
    cc.paddle_restitution_topspin = e;
    BallState out = contact_paddle(ball, paddle, cc, SpinClass::Topspin);
    CHECK(out.velocity.x == doctest::Approx(0.0));
    CHECK(out.velocity.y == doctest::Approx(5.0 * e));
    CHECK(out.velocity.z == doctest::Approx(0.0));
  }
}

TEST_CASE("contact_paddle: bimodal restitution differs by spin class") {
  ContactParams c;  // defaults: topspin 0.85, underspin 0.60
  PaddleState paddle;
  paddle.position = {0, -1.4, 0.3};
  paddle.normal = {0, 1, 0};
  BallState ball;
  ball.position = {0, -1.35, 0.3};
  ball.velocity = {0, -5, 0};
  BallState t = contact_paddle(ball, paddle, c, SpinClass::Topspin);
  BallState u = contact_paddle(ball, paddle, c, SpinClass::Underspin);
  CHECK(t.velocity.norm() != doctest::Approx(u.velocity.norm()));
  CHECK(t.velocity.norm() > u.velocity.norm());
}

TEST_CASE("contact_paddle: moving paddle imparts (1+e)*speed") {
  ContactParams c;
  c.paddle_restitution_topspin = 0.85;
  PaddleState paddle;
  paddle.position = {0, -1.5, 0.3};
  paddle.normal = {0, 1, 0};
  paddle.velocity = {0, 3, 0};
  BallState ball;
  ball.position = {0, -1.45, 0.3};  // stationary, in front of the face
  BallState out = contact_paddle(ball, paddle, c, SpinClass::Topspin);
  CHECK(out.velocity.y == doctest::Approx((1.0 + 0.85) * 3.0));
  CHECK(out.velocity.x == doctest::Approx(0.0));
  CHECK(out.velocity.z == doctest::Approx(0.0));
}

TEST_CASE("contact_paddle rejects a ball moving away") {
  ContactParams c;
  PaddleState paddle;
  paddle.position = {0, -1.5, 0.3};
  paddle.normal = {0, 1, 0};
  BallState ball;
  ball.position = {0, -1.4, 0.3};
  ball.velocity = {0, 5, 0};  // receding
  CHECK_THROWS_AS(contact_paddle(ball, paddle, c, SpinClass::Topspin), std::invalid_argument);
}

TEST_CASE("simulate_trajectory: dropped ball bounces at the drop point") {
  FlightParams f;
  ContactParams c;
  TableGeometry g;
  BallState s;
  s.position = {0.3, -0.5, 0.5};
  Trajectory traj = simulate_trajectory(s, f, c, g, {.horizon = 1.0});
  REQUIRE(!traj.events.empty());
  const TrajEvent& first = traj.events.front();
  CHECK(first.type == TrajEventType::BounceRobotSide);
  CHECK(first.position.x == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(first.position.y == doctest::Approx(-0.5).epsilon(1e-6));
}

TEST_CASE("simulate_trajectory: low ball into the net is a fault") {
  FlightParams f;
  ContactParams c;
  TableGeometry g;
  BallState s;
  s.position = {0, -1.0, 0.05};
  s.velocity = {0, 5, 0.2};  // will reach the net below net height
  Trajectory traj = simulate_trajectory(s, f, c, g, {.horizon = 1.0});
  CHECK(traj.first(TrajEventType::NetFault) != nullptr);
  CHECK(traj.first(TrajEventType::BounceOpponentSide) == nullptr);
}

TEST_CASE("simulate_trajectory: landing point matches a 10x finer reference") {
  FlightParams f;
  ContactParams c;
  TableGeometry g;
  BallState s;
  s.position = {0.1, -1.2, 0.35};
  s.velocity = {0.5, 6.0, 2.2};
  s.spin = {-40, 5, 0};

  Trajectory coarse = simulate_trajectory(s, f, c, g, {.horizon = 2.0});
  FlightParams fine = f;
  fine.dt = f.dt / 10.0;
  Trajectory ref = simulate_trajectory(s, fine, c, g, {.horizon = 2.0});

  const TrajEvent* a = coarse.first(TrajEventType::BounceOpponentSide);
  const TrajEvent* b = ref.first(TrajEventType::BounceOpponentSide);
  REQUIRE(a != nullptr);
  REQUIRE(b != nullptr);
  const double dx = a->position.x - b->position.x;
  const double dy = a->position.y - b->position.y;
  CHECK(std::sqrt(dx * dx + dy * dy) <= 0.005);
}

TEST_CASE("energy conserved in the elastic, drag-free limit") {
  // Fine timestep so the integrator's O(dt) energy drift sits below the
  // 1e-6 relative bound over a 2 s rollout with bounces.
  FlightParams f = vacuum_params();
  f.dt = 1e-7;
  ContactParams c;
  c.table_restitution_normal = 1.0;
  c.table_friction = 0.0;
  c.table_spin_coupling = 0.0;
  TableGeometry g;
  g.high_ball_ceiling = 1e9;  // ignore the tracked-volume annotation here

  BallState s;
  s.position = {0.0, -1.0, 0.5};
  s.velocity = {0.2, 1.0, 6.0};

  auto energy = [&](const BallState& b) {
    return 0.5 * b.velocity.norm2() + f.gravity * b.position.z;
  };
  const double e0 = energy(s);

  BallState cur = s;
  double t = 0.0;
  int bounces = 0;
  double worst = 0.0;
  long check_every = 100000;
  long n = 0;
  while (t < 2.0) {
    BallState next = step_flight(cur, f);
    if (next.position.z <= f.ball_radius && next.velocity.z < 0.0 &&
        cur.position.z > f.ball_radius) {
      double frac = (cur.position.z - f.ball_radius) / (cur.position.z - next.position.z);
      FlightParams sub = f;
      sub.dt = f.dt * std::clamp(frac, 0.0, 1.0);
      BallState at = sub.dt > 0 ? step_flight(cur, sub) : cur;
      at.position.z = f.ball_radius;
      if (at.velocity.z < 0) at = bounce_table(at, c, f.ball_radius);
      sub.dt = f.dt * (1.0 - std::clamp(frac, 0.0, 1.0));
      next = sub.dt > 0 ? step_flight(at, sub) : at;
      ++bounces;
    }
    cur = next;
    t += f.dt;
    if (++n % check_every == 0) worst = std::max(worst, std::abs(energy(cur) - e0) / e0);
  }
  worst = std::max(worst, std::abs(energy(cur) - e0) / e0);
  CHECK(bounces >= 1);
  CHECK(worst <= 1e-6);
}

TEST_CASE("timestep halving converges at first order") {
  ContactParams c;
  TableGeometry g;
  BallState s;
  s.position = {0.0, -1.2, 0.4};
  s.velocity = {0.8, 5.0, 4.5};  // stays airborne ~1 s
  s.spin = {60, 0, 10};

  auto endpoint = [&](double dt) {
    FlightParams f;
    f.dt = dt;
    BallState cur = s;
    int steps = static_cast<int>(std::llround(1.0 / dt));
    for (int i = 0; i < steps; ++i) cur = step_flight(cur, f);
    return cur.position;
  };

  const Vec3 e1 = endpoint(1e-3);
  const Vec3 e2 = endpoint(5e-4);
  const Vec3 e3 = endpoint(2.5e-4);
  const double d12 = (e1 - e2).norm();
  const double d23 = (e2 - e3).norm();
  const double ratio = d12 / d23;
  CHECK(ratio >= 1.5);
  CHECK(ratio <= 2.5);
}

TEST_CASE("classify_category: threshold examples") {
  BallState s;
  s.velocity = {0, 8, 0};
  s.spin = {60, 0, 0};
  CHECK(classify_category(s) == (kCategoryFast | kCategoryTopspin));

  s.velocity = {0, 4, 0};
  s.spin = {0, 0, 0};
  CHECK(classify_category(s) == (kCategoryNormal | kCategoryNospin));

  s.velocity = {0, 3, 3};
  s.spin = {-30, 0, 0};
  CHECK(classify_category(s) == (kCategorySlow | kCategoryUnderspin | kCategoryLob));
}

TEST_CASE("classify_category partitions speed and spin") {
  Rng rng(99);
  for (int i = 0; i < 10000; ++i) {
    BallState s;
    s.velocity = {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-6, 6)};
    s.spin = {rng.uniform(-200, 200), rng.uniform(-50, 50), rng.uniform(-50, 50)};
    CategoryMask m = classify_category(s);
    int speed = !!(m & kCategoryFast) + !!(m & kCategoryNormal) + !!(m & kCategorySlow);
    int spin = !!(m & kCategoryTopspin) + !!(m & kCategoryNospin) + !!(m & kCategoryUnderspin);
    CHECK(speed == 1);
    CHECK(spin == 1);
  }
}

TEST_CASE("annotate_style_side: lateral intercept rules") {
  FlightParams f;
  ContactParams c;
  TableGeometry g;

  auto side_for = [&](double x0) {
    BallState s;
    s.position = {x0, 1.0, 0.4};
    s.velocity = {0, -6, -1};
    return annotate_style_side(s, f, c, g);
  };

  auto center = side_for(0.0);
  REQUIRE(center.has_value());
  CHECK(*center == StyleSide::Center);

  auto fh = side_for(0.5);
  REQUIRE(fh.has_value());
  CHECK(*fh == StyleSide::Forehand);

  auto bh = side_for(-0.21);
  REQUIRE(bh.has_value());
  CHECK(*bh == StyleSide::Backhand);

  // A ball that dies before the back line is not classifiable.
  BallState dead;
  dead.position = {0, 1.0, 0.3};
  dead.velocity = {0, -1.0, 0};
  CHECK(!annotate_style_side(dead, f, c, g).has_value());
}
