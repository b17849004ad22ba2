#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ttsim/vec3.hpp"

namespace ttsim {

struct BallState {
  Vec3 position;  // m
  Vec3 velocity;  // m/s
  Vec3 spin;      // rad/s, spin.x is the topspin/underspin axis

  bool finite() const {
    return position.finite() && velocity.finite() && spin.finite();
  }
};

struct PaddleState {
  Vec3 position;          // m
  Vec3 normal;            // unit, face direction
  Vec3 velocity;          // m/s
  Vec3 angular_velocity;  // rad/s
};

// Fluid and integration constants. Aerodynamic coefficients follow the
// ellipsoid fluid model's parameter list; for a sphere only blunt drag and
// the Magnus lift term act, the slender/Kutta coefficients are carried in
// config but degenerate (see step_flight).
struct FlightParams {
  double air_density = 1.225;   // kg/m^3
  double viscosity = 1.8e-5;    // Pa s (unused by the sphere law, kept for config parity)
  double blunt_drag = 0.235;
  double slender_drag = 0.25;   // degenerate for a sphere
  double angular_drag = 0.0;
  double kutta_lift = 1.0;      // degenerate for a sphere
  double magnus_lift = 1.0;
  Vec3 wind;                    // m/s
  double gravity = 9.81;        // m/s^2
  double ball_radius = 0.02;    // m
  double ball_mass = 0.0027;    // kg
  double dt = 0.001;            // s

  void validate() const;  // throws std::invalid_argument
};

// Impulse contact model. Paddle restitution/friction come in two sets chosen
// by the incoming ball's spin class; the table set is unimodal.
struct ContactParams {
  double table_restitution_normal = 0.90;
  double table_friction = 0.20;
  double table_spin_coupling = 0.35;
  double paddle_restitution_topspin = 0.85;
  double paddle_restitution_underspin = 0.60;
  double paddle_friction = 0.25;
  double paddle_spin_transfer = 0.55;

  void validate() const;
};

struct TableGeometry {
  double length = 2.74;         // y extent, net at y = 0
  double width = 1.525;         // x extent
  double net_height = 0.1525;   // m above the surface (z = 0)
  double net_overhang = 0.1525; // net extends past each table edge
  double high_ball_ceiling = 2.0;  // balls above this are out of the tracked volume

  double half_length() const { return 0.5 * length; }
  double half_width() const { return 0.5 * width; }
  double robot_back_y() const { return -half_length(); }
  double opponent_back_y() const { return half_length(); }
  bool over_table(double x, double y) const {
    return std::abs(x) <= half_width() && std::abs(y) <= half_length();
  }
};

enum class SpinClass { Topspin, Underspin };
enum class StyleSide { Forehand, Center, Backhand };

// The physics trio threaded through dataset building, skills and matches.
struct PhysicsEnv {
  FlightParams flight;
  ContactParams contact;
  TableGeometry geom;
};

// Spin-class boundary shared by contact-parameter selection and the
// Underspin category threshold.
inline SpinClass spin_class_of(const BallState& ball) {
  return ball.spin.x < -25.0 ? SpinClass::Underspin : SpinClass::Topspin;
}

// Non-mutually-exclusive ball categories: exactly one speed label, exactly
// one spin label, Lob may co-occur.
enum BallCategory : unsigned {
  kCategoryFast = 1u << 0,
  kCategoryNormal = 1u << 1,
  kCategorySlow = 1u << 2,
  kCategoryTopspin = 1u << 3,
  kCategoryNospin = 1u << 4,
  kCategoryUnderspin = 1u << 5,
  kCategoryLob = 1u << 6,
};
using CategoryMask = unsigned;
inline constexpr int kNumCategories = 7;

const char* category_name(BallCategory c);
std::string category_mask_to_string(CategoryMask m);

// One integration step of gravity + blunt drag + Magnus lift, semi-implicit
// Euler. Drag opposes the air-relative velocity; the Magnus force is
// magnus_lift * rho * (4/3 pi r^3) * (spin x v_rel), perpendicular to v_rel.
BallState step_flight(const BallState& state, const FlightParams& params);

// Aerodynamic force decomposition (N) at the given state.
void flight_forces(const BallState& state, const FlightParams& params, Vec3* drag, Vec3* magnus);

// Table bounce for a downward-moving ball: normal restitution, a tangential
// kick proportional to spin (table_spin_coupling), then a Coulomb-capped
// friction impulse whose torque feeds back into spin.
BallState bounce_table(const BallState& state, const ContactParams& params,
                       double ball_radius = 0.02);

// Paddle contact in the paddle frame. Restitution set selected by
// incoming_spin_class; friction scales the tangential relative velocity and
// spin_transfer blends ball spin toward the spin a gripping rubber would
// impart. The paddle surface velocity includes its angular velocity.
BallState contact_paddle(const BallState& ball, const PaddleState& paddle,
                         const ContactParams& params, SpinClass incoming_spin_class,
                         double ball_radius = 0.02);

enum class TrajEventType {
  BounceRobotSide,
  BounceOpponentSide,
  NetCross,   // value = crossing height above the surface
  NetFault,
  HighBall,   // value = peak height
  OutOfPlay,
};

const char* traj_event_name(TrajEventType t);

struct TrajEvent {
  double t = 0.0;
  TrajEventType type = TrajEventType::OutOfPlay;
  Vec3 position;
  double value = 0.0;
};

struct TrajPoint {
  double t = 0.0;
  BallState state;
};

struct Trajectory {
  std::vector<TrajPoint> points;  // sampled every record_dt (>=0: 0 records every step)
  std::vector<TrajEvent> events;
  double end_t = 0.0;
  BallState final_state;
  bool out_of_play = false;

  const TrajEvent* first(TrajEventType type) const;
  // First table bounce of either side, if any.
  const TrajEvent* first_bounce() const;
};

struct SimulateOptions {
  double horizon = 3.0;      // s
  double record_dt = -1.0;   // <0: record only endpoints; 0: every step
  int max_bounces = 8;
  bool stop_at_net_fault = true;
};

Trajectory simulate_trajectory(const BallState& initial, const FlightParams& flight,
                               const ContactParams& contact, const TableGeometry& geom,
                               const SimulateOptions& options = {});

// Positions sampled at the given (sorted, ascending) times; used by the
// trajectory fitter. Bounces are simulated; out-of-play positions follow
// free flight so the objective stays smooth.
std::vector<Vec3> simulate_positions_at(const BallState& initial, const std::vector<double>& times,
                                        const FlightParams& flight, const ContactParams& contact,
                                        const TableGeometry& geom);

CategoryMask classify_category(const BallState& state);

// Lateral intercept at the robot-side back-of-table line; Center within
// +/- 0.2 m, Forehand beyond +0.2 (positive x is the robot's forehand side).
// nullopt when the trajectory never reaches the line.
std::optional<StyleSide> annotate_style_side(const BallState& initial, const FlightParams& flight,
                                             const ContactParams& contact, const TableGeometry& geom,
                                             double* intercept_x = nullptr);

const char* style_name(StyleSide s);

// CSV export: t, position, velocity, spin, event (blank when none).
void export_trajectory_csv(const Trajectory& traj, const std::string& path);

}  // namespace ttsim
