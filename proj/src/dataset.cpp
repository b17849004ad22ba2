#include "ttsim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ttsim {

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Unknown: return "unknown";
    case Outcome::Return: return "return";
    case Outcome::Hit: return "hit";
    case Outcome::Miss: return "miss";
  }
  return "?";
}

Outcome outcome_from_name(const std::string& s) {
  if (s == "unknown") return Outcome::Unknown;
  if (s == "return") return Outcome::Return;
  if (s == "hit") return Outcome::Hit;
  if (s == "miss") return Outcome::Miss;
  throw std::invalid_argument("bad outcome: " + s);
}

namespace {

StyleSide style_from_char(char c) {
  switch (c) {
    case 'F': return StyleSide::Forehand;
    case 'C': return StyleSide::Center;
    case 'B': return StyleSide::Backhand;
  }
  throw std::invalid_argument("bad style char");
}

char style_char(StyleSide s) {
  switch (s) {
    case StyleSide::Forehand: return 'F';
    case StyleSide::Center: return 'C';
    case StyleSide::Backhand: return 'B';
  }
  return '?';
}

}  // namespace

BallStateRecord mirror_record(const BallStateRecord& rec) {
  BallStateRecord m = rec;
  m.id = -1;
  m.initial.position.x = -rec.initial.position.x;
  m.initial.velocity.x = -rec.initial.velocity.x;
  m.initial.spin.y = -rec.initial.spin.y;
  m.initial.spin.z = -rec.initial.spin.z;
  if (rec.style_side == StyleSide::Forehand)
    m.style_side = StyleSide::Backhand;
  else if (rec.style_side == StyleSide::Backhand)
    m.style_side = StyleSide::Forehand;
  m.reflected = !rec.reflected;
  return m;
}

long Dataset::add(BallStateRecord rec) {
  if (!rec.initial.finite()) throw std::invalid_argument("Dataset::add: non-finite state");
  if (rec.id < 0) rec.id = next_id_;
  if (index_.count(rec.id)) throw std::invalid_argument("Dataset::add: duplicate id");
  next_id_ = std::max(next_id_, rec.id + 1);
  rec.categories = classify_category(rec.initial);
  index_[rec.id] = records_.size();
  records_.push_back(rec);

  for (int bit = 0; bit < kNumCategories; ++bit) {
    if (!(rec.categories & (1u << bit))) continue;
    auto& s = stats_[bit];
    if (rec.outcome == Outcome::Return) {
      ++s.returns;
      ++s.attempts;
    } else if (rec.outcome == Outcome::Hit || rec.outcome == Outcome::Miss) {
      ++s.attempts;
    }
  }
  return rec.id;
}

const BallStateRecord* Dataset::find(long id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

void Dataset::record_outcome(long id, Outcome outcome, double overweight) {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::invalid_argument("record_outcome: unknown id");
  BallStateRecord& rec = records_[it->second];

  for (int bit = 0; bit < kNumCategories; ++bit) {
    if (!(rec.categories & (1u << bit))) continue;
    auto& s = stats_[bit];
    if (rec.outcome == Outcome::Return) {
      --s.returns;
      --s.attempts;
    } else if (rec.outcome == Outcome::Hit || rec.outcome == Outcome::Miss) {
      --s.attempts;
    }
    if (outcome == Outcome::Return) {
      ++s.returns;
      ++s.attempts;
    } else if (outcome == Outcome::Hit || outcome == Outcome::Miss) {
      ++s.attempts;
    }
  }
  rec.outcome = outcome;
  if (overweight != 1.0 && (outcome == Outcome::Hit || outcome == Outcome::Miss))
    rec.weight = overweight;
}

std::array<CategoryStats, kNumCategories> Dataset::recount_category_stats() const {
  std::array<CategoryStats, kNumCategories> out{};
  for (const auto& rec : records_) {
    for (int bit = 0; bit < kNumCategories; ++bit) {
      if (!(rec.categories & (1u << bit))) continue;
      if (rec.outcome == Outcome::Return) {
        ++out[bit].returns;
        ++out[bit].attempts;
      } else if (rec.outcome == Outcome::Hit || rec.outcome == Outcome::Miss) {
        ++out[bit].attempts;
      }
    }
  }
  return out;
}

long Dataset::rally_count() const {
  return std::count_if(records_.begin(), records_.end(),
                       [](const BallStateRecord& r) { return !r.is_serve; });
}

long Dataset::serve_count() const {
  return static_cast<long>(records_.size()) - rally_count();
}

void Dataset::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "id,is_serve,outcome,style,cycle,reflected,weight,px,py,pz,vx,vy,vz,wx,wy,wz\n";
  char buf[512];
  for (const auto& r : records_) {
    std::snprintf(buf, sizeof(buf),
                  "%ld,%d,%s,%c,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.id, r.is_serve ? 1 : 0, outcome_name(r.outcome), style_char(r.style_side),
                  r.cycle, r.reflected ? 1 : 0, r.weight, r.initial.position.x,
                  r.initial.position.y, r.initial.position.z, r.initial.velocity.x,
                  r.initial.velocity.y, r.initial.velocity.z, r.initial.spin.x, r.initial.spin.y,
                  r.initial.spin.z);
    out << buf;
  }
}

Dataset Dataset::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty dataset file: " + path);
  Dataset d;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream is(line);
    BallStateRecord r;
    int is_serve = 0, reflected = 0;
    std::string outcome, style;
    is >> r.id >> is_serve >> outcome >> style >> r.cycle >> reflected >> r.weight >>
        r.initial.position.x >> r.initial.position.y >> r.initial.position.z >>
        r.initial.velocity.x >> r.initial.velocity.y >> r.initial.velocity.z >>
        r.initial.spin.x >> r.initial.spin.y >> r.initial.spin.z;
    if (!is) throw std::runtime_error("bad dataset row: " + line);
    r.is_serve = is_serve != 0;
    r.reflected = reflected != 0;
    r.outcome = outcome_from_name(outcome);
    r.style_side = style_from_char(style[0]);
    d.add(r);
  }
  return d;
}

Dataset reflect_y(const Dataset& dataset) {
  Dataset out;
  for (const auto& r : dataset.records()) out.add(r);
  for (const auto& r : dataset.records()) {
    if (r.is_serve) continue;
    out.add(mirror_record(r));
  }
  return out;
}

ObservedTrajectory load_raw_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  ObservedTrajectory traj;
  traj.source = path;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || std::isalpha(static_cast<unsigned char>(line[0])))
      continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream is(line);
    double t, x, y, z;
    if (is >> t >> x >> y >> z) {
      if (!traj.t.empty() && t <= traj.t.back())
        throw std::runtime_error("raw trajectory times must be strictly increasing: " + path);
      traj.t.push_back(t);
      traj.position.push_back({x, y, z});
    }
  }
  return traj;
}

std::vector<ObservedTrajectory> segment_trajectories(const ObservedTrajectory& stream,
                                                     const SegmentationConfig& cfg,
                                                     bool* too_short) {
  if (too_short) *too_short = false;
  const int n = static_cast<int>(stream.t.size());
  if (n < cfg.min_samples) {
    if (too_short) *too_short = true;
    return {};
  }

  const int w = cfg.velocity_window;
  auto vy_at = [&](int k) {
    const int a = std::max(0, k - w);
    return (stream.position[k].y - stream.position[a].y) / (stream.t[k] - stream.t[a]);
  };

  std::vector<int> splits;
  int last_split = 0;
  for (int k = w; k + w < n; ++k) {
    const double before = vy_at(k);
    const int fwd = k + w;
    const double after = (stream.position[fwd].y - stream.position[k].y) /
                         (stream.t[fwd] - stream.t[k]);
    if (before * after < 0.0 && std::abs(after - before) > cfg.hit_reversal_threshold &&
        k - last_split >= w) {
      splits.push_back(k);
      last_split = k;
    }
  }

  std::vector<ObservedTrajectory> segments;
  auto emit = [&](int begin, int end) {
    if (end - begin < cfg.min_samples) return;
    ObservedTrajectory seg;
    seg.source = stream.source;
    double peak = 0.0;
    for (int i = begin; i < end; ++i) {
      seg.t.push_back(stream.t[i]);
      seg.position.push_back(stream.position[i]);
      if (i > begin)
        peak = std::max(peak, std::abs((stream.position[i].y - stream.position[i - 1].y) /
                                       (stream.t[i] - stream.t[i - 1])));
    }
    if (peak >= cfg.min_segment_speed) segments.push_back(std::move(seg));
  };

  int begin = 0;
  for (int s : splits) {
    emit(begin, s);
    begin = s;
  }
  emit(begin, n);
  return segments;
}

namespace {

double fit_objective(const BallState& state, const std::vector<double>& times,
                     const std::vector<Vec3>& observed, const PhysicsEnv& env) {
  if (!state.finite()) return 1e9;
  std::vector<Vec3> sim = simulate_positions_at(state, times, env.flight, env.contact, env.geom);
  double mse = 0.0;
  for (size_t i = 0; i < sim.size(); ++i) mse += (sim[i] - observed[i]).norm2();
  return mse / static_cast<double>(sim.size());
}

}  // namespace

FitResult fit_initial_state(const ObservedTrajectory& traj, const PhysicsEnv& env,
                            const FitConfig& cfg, Rng& rng) {
  const int n = static_cast<int>(traj.t.size());
  if (n < 10 || traj.t.back() - traj.t.front() < 0.1)
    throw std::invalid_argument("fit_initial_state: need >= 10 samples spanning >= 0.1 s");

  std::vector<double> times(n);
  for (int i = 0; i < n; ++i) times[i] = traj.t[i] - traj.t[0];

  // Finite-difference seed: linear LS velocity over the first few samples,
  // gravity-corrected on z.
  BallState seed;
  seed.position = traj.position[0];
  {
    const int k = std::min(8, n);
    double st = 0, stt = 0, sx = 0, sxt = 0, sy = 0, syt = 0, sz = 0, szt = 0;
    for (int i = 0; i < k; ++i) {
      const double t = times[i];
      const double zc = traj.position[i].z + 0.5 * env.flight.gravity * t * t;
      st += t;
      stt += t * t;
      sx += traj.position[i].x;
      sxt += traj.position[i].x * t;
      sy += traj.position[i].y;
      syt += traj.position[i].y * t;
      sz += zc;
      szt += zc * t;
    }
    const double denom = k * stt - st * st;
    if (std::abs(denom) > 1e-12) {
      seed.velocity.x = (k * sxt - st * sx) / denom;
      seed.velocity.y = (k * syt - st * sy) / denom;
      seed.velocity.z = (k * szt - st * sz) / denom;
    }
  }

  const std::array<double, 9> scales{cfg.position_scale, cfg.position_scale, cfg.position_scale,
                                     cfg.velocity_scale, cfg.velocity_scale, cfg.velocity_scale,
                                     cfg.spin_scale,     cfg.spin_scale,     cfg.spin_scale};
  auto decode = [&](const ParamVector& u, const BallState& base) {
    BallState s = base;
    s.position.x += u[0] * scales[0];
    s.position.y += u[1] * scales[1];
    s.position.z += u[2] * scales[2];
    s.velocity.x += u[3] * scales[3];
    s.velocity.y += u[4] * scales[4];
    s.velocity.z += u[5] * scales[5];
    s.spin.x += u[6] * scales[6];
    s.spin.y += u[7] * scales[7];
    s.spin.z += u[8] * scales[8];
    return s;
  };

  BallState best_state = seed;
  double best_mse = fit_objective(seed, times, traj.position, env);

  for (int restart = 0; restart < cfg.restarts; ++restart) {
    BallState base = seed;
    base.spin.x = cfg.spin_starts[restart % cfg.spin_starts.size()];
    Rng restart_rng = rng.child(0x5eed0000ULL + restart);

    ParamVector u(9, 0.0);
    auto evaluate = [&](const ParamVector& v, Rng&) {
      return -fit_objective(decode(v, base), times, traj.position, env);
    };

    EsConfig es;
    es.num_perturbations = cfg.perturbations;
    es.rollouts_per_perturbation = 1;
    es.keep_fraction = 0.5;
    for (double sigma : cfg.sigma_stages) {
      es.perturbation_std = sigma;
      es.step_size = cfg.step_sigma_ratio * sigma;
      for (int it = 0; it < cfg.iterations_per_stage; ++it)
        u = es_step(u, evaluate, es, restart_rng);
      const BallState cand = decode(u, base);
      const double mse = fit_objective(cand, times, traj.position, env);
      if (mse < best_mse) {
        best_mse = mse;
        best_state = cand;
      }
    }

    // Local polish; ES zigzags in the velocity/spin-correlated valley.
    auto polish_obj = [&](const ParamVector& v) {
      return -fit_objective(decode(v, base), times, traj.position, env);
    };
    NelderMeadResult nm = nelder_mead(polish_obj, u, 0.05, 1e-14, cfg.polish_iterations);
    const BallState polished = decode(nm.params, base);
    const double mse = fit_objective(polished, times, traj.position, env);
    if (mse < best_mse) {
      best_mse = mse;
      best_state = polished;
    }
  }

  FitResult result;
  result.state = best_state;
  result.residual = std::sqrt(best_mse);
  result.converged = result.residual <= cfg.residual_ceiling;
  return result;
}

bool validate_incoming_trajectory(const BallState& state, bool is_serve, const PhysicsEnv& env) {
  SimulateOptions opt;
  opt.horizon = 2.5;
  Trajectory traj = simulate_trajectory(state, env.flight, env.contact, env.geom, opt);

  double net_t = -1.0, robot_bounce_t = -1.0, opp_bounce_t = -1.0;
  for (const auto& e : traj.events) {
    if (e.type == TrajEventType::NetFault) return false;
    if (e.type == TrajEventType::NetCross && net_t < 0) net_t = e.t;
    if (e.type == TrajEventType::BounceRobotSide && robot_bounce_t < 0) robot_bounce_t = e.t;
    if (e.type == TrajEventType::BounceOpponentSide && opp_bounce_t < 0) opp_bounce_t = e.t;
  }
  if (net_t < 0 || robot_bounce_t < 0) return false;
  if (robot_bounce_t < net_t) return false;  // must cross toward the robot first
  if (is_serve) {
    // Serves bounce the server's side before crossing.
    if (opp_bounce_t < 0 || opp_bounce_t > net_t) return false;
  } else {
    if (opp_bounce_t >= 0 && opp_bounce_t < robot_bounce_t) return false;
  }
  return true;
}

BallState sample_initial_state(const Dataset& dataset, Rng& rng, double perturbation_scale,
                               const SampleConfig& cfg, const PhysicsEnv& env,
                               const BallStateRecord** source) {
  // Candidate records per category, honoring the serve filter.
  std::array<std::vector<const BallStateRecord*>, kNumCategories> members{};
  for (const auto& rec : dataset.records()) {
    if (!cfg.include_serves && rec.is_serve) continue;
    for (int bit = 0; bit < kNumCategories; ++bit)
      if (rec.categories & (1u << bit)) members[bit].push_back(&rec);
  }

  std::vector<int> cats;
  std::vector<double> weights;
  const auto& stats = dataset.category_stats();
  for (int bit = 0; bit < kNumCategories; ++bit) {
    if (members[bit].empty()) continue;
    cats.push_back(bit);
    weights.push_back(1.0 / std::max(stats[bit].return_rate(), cfg.rate_floor));
  }
  if (cats.empty()) throw std::runtime_error("sample_initial_state: empty dataset");

  double total_w = 0.0;
  for (double w : weights) total_w += w;

  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    double pick = rng.uniform() * total_w;
    int cat = cats.back();
    for (size_t i = 0; i < cats.size(); ++i) {
      pick -= weights[i];
      if (pick <= 0.0) {
        cat = cats[i];
        break;
      }
    }

    // Weighted within-category draw (weights are 1 unless overweighted).
    const auto& pool = members[cat];
    double pool_w = 0.0;
    for (const auto* r : pool) pool_w += r->weight;
    double rpick = rng.uniform() * pool_w;
    const BallStateRecord* rec = pool.back();
    for (const auto* r : pool) {
      rpick -= r->weight;
      if (rpick <= 0.0) {
        rec = r;
        break;
      }
    }

    BallState s = rec->initial;
    if (perturbation_scale != 0.0) {
      const double ps = cfg.position_sigma * perturbation_scale;
      const double vs = cfg.velocity_sigma * perturbation_scale;
      const double ws = cfg.spin_sigma * perturbation_scale;
      s.position += Vec3{rng.gaussian() * ps, rng.gaussian() * ps, rng.gaussian() * ps};
      s.velocity += Vec3{rng.gaussian() * vs, rng.gaussian() * vs, rng.gaussian() * vs};
      s.spin += Vec3{rng.gaussian() * ws, rng.gaussian() * ws, rng.gaussian() * ws};
    }

    if (validate_incoming_trajectory(s, rec->is_serve, env)) {
      if (source) *source = rec;
      return s;
    }
  }
  throw std::runtime_error("sample_initial_state: validation failed for max_attempts draws");
}

void write_dataset_stats_csv(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "type,cycle,all,forehand,center,backhand,fast,normal,slow,topspin,nospin,underspin,lob\n";

  struct Row {
    long all = 0;
    std::array<long, 3> style{};
    std::array<long, kNumCategories> cat{};
  };
  auto fold = [](Row& row, const BallStateRecord& r) {
    ++row.all;
    row.style[static_cast<int>(r.style_side)]++;
    for (int bit = 0; bit < kNumCategories; ++bit)
      if (r.categories & (1u << bit)) ++row.cat[bit];
  };
  auto print = [&](const std::string& type, const std::string& cycle, const Row& row) {
    out << type << ',' << cycle << ',' << row.all << ',' << row.style[0] << ',' << row.style[1]
        << ',' << row.style[2];
    for (int bit = 0; bit < kNumCategories; ++bit) out << ',' << row.cat[bit];
    out << '\n';
  };

  for (int serve = 0; serve <= 1; ++serve) {
    std::map<int, Row> by_cycle;
    Row final_row, reflected_row;
    bool any = false, any_reflected = false;
    for (const auto& r : dataset.records()) {
      if (r.is_serve != (serve == 1)) continue;
      any = true;
      fold(reflected_row, r);
      if (r.reflected) {
        any_reflected = true;
        continue;
      }
      fold(by_cycle[r.cycle], r);
      fold(final_row, r);
    }
    if (!any) continue;
    const std::string type = serve ? "serves" : "rallying";
    for (const auto& [cycle, row] : by_cycle) print(type, std::to_string(cycle), row);
    print(type, "final", final_row);
    if (any_reflected) print(type, "final+reflection", reflected_row);
  }
}

}  // namespace ttsim
