#include "ttsim/ballistics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace ttsim {

namespace {
constexpr double kPi = 3.14159265358979323846;

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}
}  // namespace

void FlightParams::validate() const {
  require(dt > 0.0, "FlightParams.dt must be > 0");
  require(air_density > 0.0, "FlightParams.air_density must be > 0");
  require(ball_radius > 0.0, "FlightParams.ball_radius must be > 0");
  require(ball_mass > 0.0, "FlightParams.ball_mass must be > 0");
}

void ContactParams::validate() const {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  require(in01(table_restitution_normal), "table_restitution_normal must be in [0,1]");
  require(in01(paddle_restitution_topspin), "paddle_restitution_topspin must be in [0,1]");
  require(in01(paddle_restitution_underspin), "paddle_restitution_underspin must be in [0,1]");
  require(table_friction >= 0.0 && paddle_friction >= 0.0, "friction must be >= 0");
  require(table_spin_coupling >= 0.0 && paddle_spin_transfer >= 0.0, "spin coupling must be >= 0");
}

const char* category_name(BallCategory c) {
  switch (c) {
    case kCategoryFast: return "Fast";
    case kCategoryNormal: return "Normal";
    case kCategorySlow: return "Slow";
    case kCategoryTopspin: return "Topspin";
    case kCategoryNospin: return "Nospin";
    case kCategoryUnderspin: return "Underspin";
    case kCategoryLob: return "Lob";
  }
  return "?";
}

std::string category_mask_to_string(CategoryMask m) {
  std::string out;
  for (int bit = 0; bit < kNumCategories; ++bit) {
    if (m & (1u << bit)) {
      if (!out.empty()) out += '+';
      out += category_name(static_cast<BallCategory>(1u << bit));
    }
  }
  return out;
}

const char* style_name(StyleSide s) {
  switch (s) {
    case StyleSide::Forehand: return "Forehand";
    case StyleSide::Center: return "Center";
    case StyleSide::Backhand: return "Backhand";
  }
  return "?";
}

void flight_forces(const BallState& state, const FlightParams& params, Vec3* drag, Vec3* magnus) {
  const double r = params.ball_radius;
  const Vec3 v_rel = state.velocity - params.wind;
  if (drag)
    *drag = v_rel * (-0.5 * params.air_density * params.blunt_drag * kPi * r * r * v_rel.norm());
  if (magnus)
    *magnus = state.spin.cross(v_rel) *
              (params.magnus_lift * params.air_density * (4.0 / 3.0) * kPi * r * r * r);
}

BallState step_flight(const BallState& state, const FlightParams& params) {
  require(state.finite(), "step_flight: non-finite ball state");

  Vec3 drag, magnus;
  flight_forces(state, params, &drag, &magnus);
  Vec3 accel = (drag + magnus) / params.ball_mass;
  accel.z -= params.gravity;

  BallState next;
  next.velocity = state.velocity + accel * params.dt;
  next.position = state.position + next.velocity * params.dt;
  next.spin = state.spin * std::max(0.0, 1.0 - params.angular_drag * params.dt);
  return next;
}

BallState bounce_table(const BallState& state, const ContactParams& params, double ball_radius) {
  require(state.finite(), "bounce_table: non-finite ball state");
  require(state.velocity.z < 0.0, "bounce_table: ball must be moving downward");

  const double e = params.table_restitution_normal;
  const double r = ball_radius;

  BallState out = state;
  out.velocity.z = -e * state.velocity.z;

  // Spin kicks the tangential velocity: +x spin pushes +y (z-hat cross omega).
  Vec3 kick = Vec3{0.0, 0.0, 1.0}.cross(state.spin) * (params.table_spin_coupling * r);
  double vt_x = state.velocity.x + kick.x;
  double vt_y = state.velocity.y + kick.y;

  // Coulomb-capped friction impulse opposing the tangential velocity; its
  // torque about the contact point feeds back into spin (I = 2/5 m r^2).
  const double vt_norm = std::sqrt(vt_x * vt_x + vt_y * vt_y);
  if (vt_norm > 1e-12 && params.table_friction > 0.0) {
    const double jn = (1.0 + e) * (-state.velocity.z);  // per unit mass
    const double f = std::min(params.table_friction * jn, vt_norm);
    const Vec3 dv_fric{-f * vt_x / vt_norm, -f * vt_y / vt_norm, 0.0};
    vt_x += dv_fric.x;
    vt_y += dv_fric.y;
    out.spin += Vec3{0.0, 0.0, 1.0}.cross(dv_fric) * (-2.5 / r);
  }
  out.velocity.x = vt_x;
  out.velocity.y = vt_y;
  return out;
}

BallState contact_paddle(const BallState& ball, const PaddleState& paddle,
                         const ContactParams& params, SpinClass incoming_spin_class,
                         double ball_radius) {
  require(ball.finite(), "contact_paddle: non-finite ball state");
  Vec3 n = paddle.normal.normalized();
  require(n.norm() > 0.5, "contact_paddle: degenerate paddle normal");

  // Paddle surface velocity at the contact point.
  const Vec3 offset = ball.position - paddle.position;
  const Vec3 surface_v = paddle.velocity + paddle.angular_velocity.cross(offset);
  const Vec3 v_rel = ball.velocity - surface_v;

  // Approaching means the normal distance to the plane is shrinking.
  double vn = v_rel.dot(n);
  const double side = offset.dot(n);
  require(std::abs(vn) > 1e-12 && side * vn < 0.0,
          "contact_paddle: ball moving away from paddle");
  // Orient the normal against the approach so the face side does not matter.
  if (vn > 0.0) {
    n = -n;
    vn = -vn;
  }

  const double e = incoming_spin_class == SpinClass::Topspin
                       ? params.paddle_restitution_topspin
                       : params.paddle_restitution_underspin;

  const Vec3 v_rel_n = n * vn;
  const Vec3 v_rel_t = v_rel - v_rel_n;

  Vec3 v_rel_out = v_rel_n * (-e) + v_rel_t * std::max(0.0, 1.0 - params.paddle_friction);

  // Rubber grip: blend spin toward what a fully gripping face would impart
  // from the tangential slip.
  const double tau = std::min(1.0, params.paddle_spin_transfer);
  const Vec3 gripped = n.cross(v_rel_t) / ball_radius;
  Vec3 spin_out = ball.spin * (1.0 - tau) + gripped * tau;

  BallState out = ball;
  out.velocity = surface_v + v_rel_out;
  out.spin = spin_out;
  return out;
}

const char* traj_event_name(TrajEventType t) {
  switch (t) {
    case TrajEventType::BounceRobotSide: return "bounce_robot";
    case TrajEventType::BounceOpponentSide: return "bounce_opponent";
    case TrajEventType::NetCross: return "net_cross";
    case TrajEventType::NetFault: return "net_fault";
    case TrajEventType::HighBall: return "high_ball";
    case TrajEventType::OutOfPlay: return "out_of_play";
  }
  return "?";
}

const TrajEvent* Trajectory::first(TrajEventType type) const {
  for (const auto& e : events)
    if (e.type == type) return &e;
  return nullptr;
}

const TrajEvent* Trajectory::first_bounce() const {
  for (const auto& e : events)
    if (e.type == TrajEventType::BounceRobotSide || e.type == TrajEventType::BounceOpponentSide)
      return &e;
  return nullptr;
}

namespace {

// One dt step with at most one table bounce resolved at its crossing time
// inside the step. Keeps contact timing first-order clean and lets the
// elastic limit conserve energy at fine timesteps.
BallState advance_one_step(const BallState& s0, const FlightParams& flight,
                           const ContactParams& contact, const TableGeometry& geom,
                           bool* bounced, Vec3* bounce_pos) {
  if (bounced) *bounced = false;
  BallState s1 = step_flight(s0, flight);
  const double r = flight.ball_radius;
  if (!(s1.position.z <= r && s1.velocity.z < 0.0 && s0.position.z > r)) return s1;

  double f = (s0.position.z - r) / (s0.position.z - s1.position.z);
  f = std::clamp(f, 0.0, 1.0);
  FlightParams sub = flight;
  BallState at = s0;
  if (f > 0.0) {
    sub.dt = flight.dt * f;
    at = step_flight(s0, sub);
  }
  if (!geom.over_table(at.position.x, at.position.y)) return s1;  // falls past the edge

  at.position.z = r;
  if (at.velocity.z < 0.0) at = bounce_table(at, contact, r);
  if (bounced) *bounced = true;
  if (bounce_pos) *bounce_pos = at.position;
  if (f < 1.0) {
    sub.dt = flight.dt * (1.0 - f);
    at = step_flight(at, sub);
  }
  return at;
}

}  // namespace

Trajectory simulate_trajectory(const BallState& initial, const FlightParams& flight,
                               const ContactParams& contact, const TableGeometry& geom,
                               const SimulateOptions& options) {
  flight.validate();
  require(options.horizon > 0.0, "simulate_trajectory: horizon must be > 0");

  Trajectory traj;
  BallState s = initial;
  double t = 0.0;
  int bounces = 0;
  bool high_flagged = false;

  auto record = [&](double when) {
    if (options.record_dt >= 0.0) traj.points.push_back({when, s});
  };
  record(0.0);
  double next_record = options.record_dt > 0.0 ? options.record_dt : 0.0;

  const double r = flight.ball_radius;
  while (t < options.horizon) {
    const BallState prev = s;
    bool bounced = false;
    Vec3 bounce_pos;
    s = advance_one_step(prev, flight, contact, geom, &bounced, &bounce_pos);
    t += flight.dt;

    // Net plane crossing (linear interpolation inside the step).
    if ((prev.position.y < 0.0) != (s.position.y < 0.0)) {
      const double f = prev.position.y / (prev.position.y - s.position.y);
      const Vec3 at = prev.position + (s.position - prev.position) * f;
      if (std::abs(at.x) <= geom.half_width() + geom.net_overhang &&
          at.z - r < geom.net_height && at.z > -r) {
        traj.events.push_back({t, TrajEventType::NetFault, at, at.z});
        if (options.stop_at_net_fault) {
          traj.out_of_play = true;
          break;
        }
      } else if (at.z - r >= geom.net_height) {
        traj.events.push_back({t, TrajEventType::NetCross, at, at.z});
      }
    }

    if (bounced) {
      const bool robot_side = bounce_pos.y < 0.0;
      traj.events.push_back({t,
                             robot_side ? TrajEventType::BounceRobotSide
                                        : TrajEventType::BounceOpponentSide,
                             bounce_pos, 0.0});
      if (++bounces >= options.max_bounces) {
        traj.out_of_play = true;
        break;
      }
    }

    if (!high_flagged && s.position.z > geom.high_ball_ceiling) {
      high_flagged = true;
      traj.events.push_back({t, TrajEventType::HighBall, s.position, s.position.z});
    }

    // Left the playable volume.
    if (s.position.z < -0.3 || std::abs(s.position.x) > 2.5 || std::abs(s.position.y) > 3.5) {
      traj.events.push_back({t, TrajEventType::OutOfPlay, s.position, 0.0});
      traj.out_of_play = true;
      break;
    }

    if (options.record_dt == 0.0) {
      record(t);
    } else if (options.record_dt > 0.0 && t + 1e-12 >= next_record) {
      record(t);
      next_record += options.record_dt;
    }
  }

  traj.end_t = t;
  traj.final_state = s;
  if (options.record_dt >= 0.0 && (traj.points.empty() || traj.points.back().t != t))
    traj.points.push_back({t, s});
  return traj;
}

std::vector<Vec3> simulate_positions_at(const BallState& initial, const std::vector<double>& times,
                                        const FlightParams& flight, const ContactParams& contact,
                                        const TableGeometry& geom) {
  std::vector<Vec3> out;
  out.reserve(times.size());
  if (times.empty()) return out;

  BallState s = initial;
  double t = 0.0;
  size_t idx = 0;
  while (idx < times.size() && times[idx] <= 1e-12) {
    out.push_back(s.position);
    ++idx;
  }
  FlightParams partial = flight;
  while (idx < times.size()) {
    // Split the step exactly at any sample times falling inside it.
    const double next_t = t + flight.dt;
    double seg_start = t;
    while (idx < times.size() && times[idx] < next_t - 1e-12) {
      partial.dt = std::max(times[idx] - seg_start, 0.0);
      if (partial.dt > 0.0) s = advance_one_step(s, partial, contact, geom, nullptr, nullptr);
      out.push_back(s.position);
      seg_start = times[idx];
      ++idx;
    }
    partial.dt = next_t - seg_start;
    if (partial.dt > 0.0) s = advance_one_step(s, partial, contact, geom, nullptr, nullptr);
    if (idx < times.size() && times[idx] <= next_t + 1e-12) {
      out.push_back(s.position);
      ++idx;
    }
    t = next_t;
  }
  return out;
}

CategoryMask classify_category(const BallState& state) {
  require(state.finite(), "classify_category: non-finite ball state");
  CategoryMask m = 0;
  const double vy = std::abs(state.velocity.y);
  if (vy > 7.0)
    m |= kCategoryFast;
  else if (vy < 3.5)
    m |= kCategorySlow;
  else
    m |= kCategoryNormal;

  const double wx = state.spin.x;
  if (wx > 50.0)
    m |= kCategoryTopspin;
  else if (wx < -25.0)
    m |= kCategoryUnderspin;
  else
    m |= kCategoryNospin;

  if (vy < 5.1 && state.velocity.z > 2.5) m |= kCategoryLob;
  return m;
}

std::optional<StyleSide> annotate_style_side(const BallState& initial, const FlightParams& flight,
                                             const ContactParams& contact, const TableGeometry& geom,
                                             double* intercept_x) {
  const double back_y = geom.robot_back_y();
  BallState s = initial;
  double t = 0.0;
  const double r = flight.ball_radius;
  while (t < 3.0) {
    BallState prev = s;
    s = step_flight(s, flight);
    t += flight.dt;
    if ((prev.position.y > back_y) && (s.position.y <= back_y)) {
      const double f = (prev.position.y - back_y) / (prev.position.y - s.position.y);
      const double x = prev.position.x + (s.position.x - prev.position.x) * f;
      if (intercept_x) *intercept_x = x;
      if (x > 0.2) return StyleSide::Forehand;
      if (x < -0.2) return StyleSide::Backhand;
      return StyleSide::Center;
    }
    if (s.position.z <= r && s.velocity.z < 0.0) {
      if (geom.over_table(s.position.x, s.position.y)) {
        s.position.z = r;
        s = bounce_table(s, contact, r);
      } else {
        return std::nullopt;  // hit the floor before reaching the line
      }
    }
    if (s.position.z < -0.3 || std::abs(s.position.y) > 3.5) return std::nullopt;
  }
  return std::nullopt;
}

void export_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "t,px,py,pz,vx,vy,vz,wx,wy,wz,event\n";
  size_t ev = 0;
  char buf[512];
  for (const auto& p : traj.points) {
    const char* name = "";
    // Attach events whose timestamp falls at/before this sample.
    while (ev < traj.events.size() && traj.events[ev].t <= p.t + 1e-12) {
      name = traj_event_name(traj.events[ev].type);
      ++ev;
    }
    std::snprintf(buf, sizeof(buf),
                  "%.6f,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%s\n", p.t,
                  p.state.position.x, p.state.position.y, p.state.position.z,
                  p.state.velocity.x, p.state.velocity.y, p.state.velocity.z,
                  p.state.spin.x, p.state.spin.y, p.state.spin.z, name);
    out << buf;
  }
}

}  // namespace ttsim
