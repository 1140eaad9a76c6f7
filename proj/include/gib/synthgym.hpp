#pragma once

// Deterministic kinematic manipulation world with scripted demonstrators.
//
// Scenarios:
//   drawer3     pick an object, place it into an open drawer, push the drawer shut
//   twostep     pick an object, place it on a target square
//   multimodal2 pick a pot by its left or right handle, place it on a target square
//
// Observation (12 channels): ee xyz, object xyz, object - ee, drawer openness,
// gripper openness, ee height. Action (7 channels): ee delta xyz, three unused
// rotation deltas, gripper command (> 0 open, < 0 close, 0 hold).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gib/dataset.hpp"
#include "gib/error.hpp"

namespace gib::synth {

using Vec3 = Eigen::Vector3d;

inline constexpr int kStateDim = 12;
inline constexpr int kActionDim = 7;
inline constexpr double kMaxStep = 0.05;
inline constexpr double kGraspRadius = 0.03;
inline constexpr double kGripperRate = 0.4;
inline constexpr double kTableZ = 0.02;
inline constexpr double kCarryZ = 0.4;
inline constexpr double kHeightThreshold = 0.3;

enum class Scenario { kDrawer3, kTwostep, kMultimodal2 };

inline Scenario parse_scenario(const std::string& s) {
  if (s == "drawer3") return Scenario::kDrawer3;
  if (s == "twostep") return Scenario::kTwostep;
  if (s == "multimodal2") return Scenario::kMultimodal2;
  throw ValidationError("unknown scenario '" + s + "' (expected drawer3, twostep or multimodal2)");
}

inline std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::kDrawer3: return "drawer3";
    case Scenario::kTwostep: return "twostep";
    case Scenario::kMultimodal2: return "multimodal2";
  }
  return "?";
}

inline int subtask_count(Scenario s) { return s == Scenario::kDrawer3 ? 3 : 2; }

// Fixed scene geometry.
struct Drawer {
  double x = 0.7;
  double closed_handle_y = 0.65;
  double travel = 0.2;
  double handle_z = 0.1;
  double floor_z = 0.06;
  double interior_offset_y = 0.1;
  double half_width = 0.07;

  Vec3 handle(double openness) const { return {x, closed_handle_y - travel * openness, handle_z}; }
  Vec3 interior(double openness) const {
    return {x, closed_handle_y - travel * openness + interior_offset_y, floor_z};
  }
};

inline constexpr double kServeX = 0.7, kServeY = 0.6, kServeHalf = 0.06;
inline constexpr double kHandleOffset = 0.07;

struct WorldState {
  Vec3 ee = Vec3::Zero();
  double gripper = 1.0;
  Vec3 object = Vec3::Zero();
  double drawer = 0.0;
  bool held = false;
  Vec3 held_offset = Vec3::Zero();  // object - ee while held
  bool in_drawer = false;

  bool valid() const {
    auto in_box = [](const Vec3& v) { return (v.array() >= -1e-12).all() && (v.array() <= 1.0 + 1e-12).all(); };
    return in_box(ee) && in_box(object) && gripper >= 0.0 && gripper <= 1.0 && drawer >= 0.0 && drawer <= 1.0;
  }
};

inline std::vector<Vec3> grasp_offsets(Scenario s) {
  if (s == Scenario::kMultimodal2) return {Vec3(0, -kHandleOffset, 0), Vec3(0, kHandleOffset, 0)};
  return {Vec3::Zero()};
}

inline Eigen::VectorXd observe(const WorldState& w) {
  Eigen::VectorXd o(kStateDim);
  o << w.ee, w.object, w.object - w.ee, w.drawer, w.gripper, w.ee.z();
  return o;
}

inline Vec3 clamp_box(const Vec3& v) { return v.cwiseMax(0.0).cwiseMin(1.0); }

// One kinematic update. Invalid (non-finite) actions are treated as zero.
inline WorldState step(Scenario scenario, const WorldState& w, const Eigen::Ref<const Eigen::VectorXd>& action) {
  if (action.size() != kActionDim) throw ValidationError("action must have 7 entries");
  WorldState n = w;
  Vec3 delta = Vec3::Zero();
  for (int i = 0; i < 3; ++i) delta(i) = std::isfinite(action(i)) ? std::clamp(action(i), -kMaxStep, kMaxStep) : 0.0;
  const double cmd = std::isfinite(action(6)) ? action(6) : 0.0;

  const Vec3 prev = w.ee;
  n.ee = clamp_box(w.ee + delta);

  if (scenario == Scenario::kDrawer3) {
    const Drawer d;
    const Vec3 h = d.handle(w.drawer);
    const double face = h.y() - 0.02;
    const bool aligned = std::abs(n.ee.x() - h.x()) <= 0.04 && std::abs(n.ee.z() - h.z()) <= 0.04;
    if (aligned && prev.y() <= face + 1e-12 && n.ee.y() > face) {
      const double new_handle_y = n.ee.y() + 0.02;
      const double opening = std::clamp((d.closed_handle_y - new_handle_y) / d.travel, 0.0, 1.0);
      n.drawer = std::min(w.drawer, opening);
      n.ee.y() = std::min(n.ee.y(), d.handle(n.drawer).y() - 0.02);
      if (w.in_drawer && !w.held) n.object.y() += d.travel * (w.drawer - n.drawer);
    }
  }

  if (cmd > 0.0) {
    n.gripper = std::min(1.0, w.gripper + kGripperRate);
  } else if (cmd < 0.0) {
    n.gripper = std::max(0.0, w.gripper - kGripperRate);
  }

  if (!w.held && w.gripper > 0.5 && n.gripper <= 0.5) {
    for (const Vec3& g : grasp_offsets(scenario)) {
      const Vec3 point = w.object + g;
      if ((n.ee - point).norm() <= kGraspRadius) {
        n.held = true;
        n.in_drawer = false;
        n.held_offset = w.object - n.ee;
        break;
      }
    }
  }

  if (n.held) {
    n.object = clamp_box(n.ee + n.held_offset);
    if (w.held && n.gripper > 0.5) {
      n.held = false;
      n.held_offset = Vec3::Zero();
      n.object.z() = kTableZ;
      if (scenario == Scenario::kDrawer3) {
        const Drawer d;
        const Vec3 c = d.interior(n.drawer);
        if (std::abs(n.object.x() - c.x()) <= d.half_width && std::abs(n.object.y() - c.y()) <= d.half_width) {
          n.in_drawer = true;
          n.object.z() = d.floor_z;
        }
      }
    }
  }
  return n;
}

// ---------------------------------------------------------------------------
// Success predicates (tracked over a rollout)

struct Progress {
  bool grasped = false;
  bool placed = false;
  bool closed = false;
  bool full = false;

  void update(Scenario s, const WorldState& w) {
    if (w.held) grasped = true;
    if (s == Scenario::kDrawer3) {
      if (w.in_drawer && !w.held) placed = true;
      if (w.drawer <= 0.02) closed = true;
      if (w.in_drawer && !w.held && w.drawer <= 0.02) full = true;
    } else {
      const bool on_target = !w.held && grasped && std::abs(w.object.x() - kServeX) <= kServeHalf &&
                             std::abs(w.object.y() - kServeY) <= kServeHalf && w.object.z() <= kTableZ + 1e-9;
      if (on_target) placed = full = true;
    }
  }
};

// ---------------------------------------------------------------------------
// Errors

enum class ErrorKind { kActionNoise, kWrongGoal, kWrongPath, kCorruptSubtask };

struct ErrorSpec {
  ErrorKind kind = ErrorKind::kWrongGoal;
  double magnitude = 0.3;
  double fraction = 0.25;  // share of the whole dataset; < 0.5
  int subtask = -1;        // kCorruptSubtask only; -1 cycles through subtasks

  void validate() const {
    if (!(magnitude > 0.0) || !std::isfinite(magnitude)) throw ValidationError("error magnitude must be positive");
    if (!(fraction > 0.0 && fraction < 0.5)) {
      throw ValidationError("error fraction must lie in (0, 0.5): good demonstrations must outnumber bad ones");
    }
  }
};

// Parses "kind[:magnitude[:fraction]]", e.g. "wrong-goal:0.3",
// "corrupt-subtask(1):0.3:0.2". Multiple specs are comma separated.
inline std::vector<ErrorSpec> parse_error_specs(const std::string& text) {
  std::vector<ErrorSpec> out;
  if (text.empty() || text == "none") return out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find(',', start);
    const std::string item = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
    std::vector<std::string> parts;
    std::size_t s = 0;
    for (;;) {
      const auto c = item.find(':', s);
      parts.push_back(item.substr(s, c == std::string::npos ? std::string::npos : c - s));
      if (c == std::string::npos) break;
      s = c + 1;
    }
    ErrorSpec e;
    const std::string& kind = parts[0];
    if (kind == "action-noise") {
      e.kind = ErrorKind::kActionNoise;
      e.magnitude = 0.02;
    } else if (kind == "wrong-goal") {
      e.kind = ErrorKind::kWrongGoal;
    } else if (kind == "wrong-path") {
      e.kind = ErrorKind::kWrongPath;
    } else if (kind.rfind("corrupt-subtask", 0) == 0) {
      e.kind = ErrorKind::kCorruptSubtask;
      const auto lp = kind.find('(');
      if (lp != std::string::npos) {
        const auto rp = kind.find(')', lp);
        if (rp == std::string::npos) throw ValidationError("malformed error spec '" + item + "'");
        e.subtask = std::stoi(kind.substr(lp + 1, rp - lp - 1));
      }
    } else {
      throw ValidationError("unknown error kind '" + kind + "'");
    }
    try {
      if (parts.size() > 1 && !parts[1].empty()) e.magnitude = std::stod(parts[1]);
      if (parts.size() > 2 && !parts[2].empty()) e.fraction = std::stod(parts[2]);
    } catch (const std::exception&) {
      throw ValidationError("malformed number in error spec '" + item + "'");
    }
    if (parts.size() > 3) throw ValidationError("malformed error spec '" + item + "'");
    e.validate();
    out.push_back(e);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scripted demonstrators

enum class Until { kReach, kGripperClosed, kGripperOpen, kDrawerClosed, kSteps };

struct Phase {
  // Target position computed from the state at phase entry and now.
  std::function<Vec3(const WorldState& entry, const WorldState& now)> target;
  double grip = 1.0;  // gripper command during the phase
  Until until = Until::kReach;
  int steps = 0;            // for kSteps
  int starts_subtask = -1;  // subtask index that begins with this phase
  bool ends_with_release = false;
};

struct Script {
  std::vector<Phase> phases;
  double noise_std = 0.0;  // std of the smooth action perturbation
  double noise_corr = 0.8;
};

// Per-trajectory perturbations of a scripted demonstration.
struct Jitter {
  Vec3 grasp = Vec3::Zero();
  Vec3 carry = Vec3::Zero();
  Vec3 place = Vec3::Zero();
  Vec3 push = Vec3::Zero();
};

inline Vec3 move_toward(const Vec3& from, const Vec3& to) {
  Vec3 d = to - from;
  const double n = d.norm();
  if (n > kMaxStep) d *= kMaxStep / n;
  return d;
}

struct Corruption {
  std::optional<ErrorKind> kind;
  int subtask = -1;
  double magnitude = 0.0;
};

inline constexpr double kReachTol = 0.01;

inline Script drawer3_script(const Jitter& j, const Corruption& c) {
  const Drawer d;
  Script s;
  const bool bad_pick = c.kind == ErrorKind::kCorruptSubtask && c.subtask == 0;
  const bool bad_place = c.kind == ErrorKind::kWrongGoal;
  const bool bad_path = c.kind == ErrorKind::kWrongPath || (c.kind == ErrorKind::kCorruptSubtask && c.subtask == 1);
  const bool bad_close = c.kind == ErrorKind::kCorruptSubtask && c.subtask == 2;
  const double mag = c.magnitude;

  if (bad_pick) {
    s.phases.push_back({[mag](const WorldState& e, const WorldState&) {
                          return clamp_box(Vec3(e.object.x(), e.object.y() + mag, 0.25));
                        },
                        1.0, Until::kReach, 0, 0});
    s.phases.push_back({[](const WorldState& e, const WorldState&) { return e.ee; }, 1.0, Until::kSteps, 2});
  }
  s.phases.push_back({[j](const WorldState&, const WorldState& n) { return Vec3(n.object + j.grasp); }, 1.0,
                      Until::kReach, 0, bad_pick ? -1 : 0});
  s.phases.push_back({[](const WorldState& e, const WorldState&) { return e.ee; }, -1.0, Until::kGripperClosed});
  s.phases.push_back({[j](const WorldState& e, const WorldState&) {
                        return Vec3(e.ee.x(), e.ee.y(), kCarryZ + j.carry.z());
                      },
                      -1.0, Until::kReach});
  if (bad_path) {
    s.phases.push_back({[j, d, mag](const WorldState& e, const WorldState&) {
                          const Vec3 goal(d.x + j.carry.x(), d.interior(1.0).y() + j.carry.y(), kCarryZ);
                          (void)e;
                          return clamp_box(Vec3(goal.x() + mag, goal.y() - mag, kCarryZ + mag));
                        },
                        -1.0, Until::kReach, 0, 1});
    s.phases.push_back({[](const WorldState& e, const WorldState&) { return e.ee; }, -1.0, Until::kSteps, 4});
  }
  s.phases.push_back({[j, d](const WorldState&, const WorldState& n) {
                        const Vec3 c = d.interior(n.drawer);
                        return Vec3(c.x() + j.carry.x(), c.y() + j.carry.y(), kCarryZ + j.carry.z());
                      },
                      -1.0, Until::kReach, 0, bad_path ? -1 : 1});
  s.phases.push_back({[j, d, bad_place, mag](const WorldState&, const WorldState& n) {
                        const Vec3 c = d.interior(n.drawer);
                        const double x = c.x() + j.place.x() - (bad_place ? mag : 0.0);
                        return Vec3(x, c.y() + j.place.y(), d.floor_z + 0.04 + j.place.z());
                      },
                      -1.0, Until::kReach});
  s.phases.push_back({[](const WorldState& e, const WorldState&) { return e.ee; }, 1.0, Until::kGripperOpen, 0, -1,
                      true});
  s.phases.push_back({[](const WorldState& e, const WorldState&) { return Vec3(e.ee.x(), e.ee.y(), 0.2); }, 1.0,
                      Until::kReach});
  const double off = bad_close ? mag : 0.0;
  s.phases.push_back({[j, d, off](const WorldState&, const WorldState& n) {
                        const Vec3 h = d.handle(n.drawer);
                        return Vec3(h.x() - off + j.push.x(), h.y() - 0.08, 0.2);
                      },
                      1.0, Until::kReach});
  s.phases.push_back({[j, d, off](const WorldState&, const WorldState& n) {
                        const Vec3 h = d.handle(n.drawer);
                        return Vec3(h.x() - off + j.push.x(), h.y() - 0.08, h.z() + j.push.z());
                      },
                      1.0, Until::kReach});
  s.phases.push_back({[j, d, off](const WorldState& e, const WorldState&) {
                        return Vec3(e.ee.x(), d.closed_handle_y - 0.01, e.ee.z());
                      },
                      1.0, bad_close ? Until::kReach : Until::kDrawerClosed});
  s.phases.push_back({[](const WorldState& e, const WorldState&) { return e.ee; }, 1.0, Until::kSteps, 3});
  return s;
}

// Shared by twostep and multimodal2. `handle` selects the grasp point offset.
inline Script place_script(const Jitter& j, const Corruption& c, const Vec3& handle) {
  Script s;
  const bool bad_pick = c.kind == ErrorKind::kCorruptSubtask && c.subtask == 0;
  const bool bad_place = c.kind == ErrorKind::kWrongGoal;
  const bool bad_path = c.kind == ErrorKind::kWrongPath || (c.kind == ErrorKind::kCorruptSubtask && c.subtask == 1);
  const double mag = c.magnitude;
  if (bad_pick) {
    s.phases.push_back({[mag](const WorldState& e, const WorldState&) {
                          return clamp_box(Vec3(e.object.x(), e.object.y() + mag, 0.25));
                        },
                        1.0, Until::kReach, 0, 0});
    s.phases.push_back({[](const WorldState& e, const WorldState&) { return e.ee; }, 1.0, Until::kSteps, 2});
  }
  s.phases.push_back({[j, handle](const WorldState&, const WorldState& n) { return Vec3(n.object + handle + j.grasp); },
                      1.0, Until::kReach, 0, bad_pick ? -1 : 0});
  s.phases.push_back({[](const WorldState& e, const WorldState&) { return e.ee; }, -1.0, Until::kGripperClosed});
  s.phases.push_back({[j](const WorldState& e, const WorldState&) {
                        return Vec3(e.ee.x(), e.ee.y(), kCarryZ + j.carry.z());
                      },
                      -1.0, Until::kReach});
  if (bad_path) {
    s.phases.push_back({[handle, mag](const WorldState& e, const WorldState&) {
                          const Vec3 goal(kServeX + handle.x(), kServeY + handle.y(), kCarryZ);
                          (void)e;
                          return clamp_box(Vec3(goal.x() + mag, goal.y() - mag, kCarryZ + mag));
                        },
                        -1.0, Until::kReach, 0, 1});
    s.phases.push_back({[](const WorldState& e, const WorldState&) { return e.ee; }, -1.0, Until::kSteps, 4});
  }
  s.phases.push_back({[j, handle](const WorldState&, const WorldState& n) {
                        const Vec3 goal = Vec3(kServeX, kServeY, 0.0) - n.held_offset;
                        (void)handle;
                        return Vec3(goal.x() + j.carry.x(), goal.y() + j.carry.y(), kCarryZ + j.carry.z());
                      },
                      -1.0, Until::kReach, 0, bad_path ? -1 : 1});
  s.phases.push_back({[j, bad_place, mag](const WorldState&, const WorldState& n) {
                        const Vec3 goal = Vec3(kServeX - (bad_place ? mag : 0.0), kServeY, 0.0) - n.held_offset;
                        return Vec3(goal.x() + j.place.x(), goal.y() + j.place.y(), kTableZ + 0.04 + j.place.z());
                      },
                      -1.0, Until::kReach});
  s.phases.push_back({[](const WorldState& e, const WorldState&) { return e.ee; }, 1.0, Until::kGripperOpen, 0, -1,
                      true});
  s.phases.push_back({[](const WorldState& e, const WorldState&) { return e.ee; }, 1.0, Until::kSteps, 2});
  return s;
}

// Stateful controller that executes a script.
class ScriptedController {
 public:
  ScriptedController(Scenario scenario, Script script, std::uint64_t noise_seed)
      : scenario_(scenario), script_(std::move(script)), rng_(noise_seed) {}

  bool done() const { return phase_ >= script_.phases.size(); }

  // Returns the next action, advancing phases whose exit condition holds.
  Eigen::VectorXd act(const WorldState& w) {
    if (!started_) {
      started_ = true;
      enter(w);
    }
    while (!done() && finished(w)) {
      ++phase_;
      if (!done()) enter(w);
    }
    Eigen::VectorXd a = Eigen::VectorXd::Zero(kActionDim);
    if (done()) return a;
    const Phase& p = script_.phases[phase_];
    const Vec3 target = p.target(entry_, w);
    Vec3 mv = move_toward(w.ee, target);
    if (script_.noise_std > 0.0) {
      std::normal_distribution<double> g(0.0, script_.noise_std);
      const double c = script_.noise_corr;
      for (int i = 0; i < 3; ++i) noise_(i) = c * noise_(i) + std::sqrt(1.0 - c * c) * g(rng_);
      mv += noise_;
      for (int i = 0; i < 3; ++i) mv(i) = std::clamp(mv(i), -kMaxStep, kMaxStep);
    }
    a.head<3>() = mv;
    a(6) = p.grip;
    ++in_phase_;
    return a;
  }

  // Index of the subtask whose first phase is currently active, if any
  // began at this step.
  int subtask_started_now() const { return just_started_; }
  bool release_phase() const { return !done() && script_.phases[phase_].ends_with_release; }

 private:
  void enter(const WorldState& w) {
    entry_ = w;
    in_phase_ = 0;
    just_started_ = script_.phases[phase_].starts_subtask;
  }

  bool finished(const WorldState& w) {
    const Phase& p = script_.phases[phase_];
    switch (p.until) {
      case Until::kReach: return (p.target(entry_, w) - w.ee).norm() < kReachTol;
      case Until::kGripperClosed: return w.gripper <= 0.0;
      case Until::kGripperOpen: return w.gripper >= 1.0;
      case Until::kDrawerClosed: return w.drawer <= 0.01;
      case Until::kSteps: return in_phase_ >= p.steps;
    }
    return true;
  }

  Scenario scenario_;
  Script script_;
  std::mt19937_64 rng_;
  std::size_t phase_ = 0;
  int in_phase_ = 0;
  int just_started_ = -1;
  bool started_ = false;
  WorldState entry_;
  Vec3 noise_ = Vec3::Zero();
};

// ---------------------------------------------------------------------------
// Initial states

inline WorldState initial_state(Scenario s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  WorldState w;
  w.ee = Vec3(0.5 + 0.03 * u(rng), 0.2 + 0.03 * u(rng), 0.2 + 0.02 * u(rng));
  w.gripper = 1.0;
  w.object = Vec3(0.3 + 0.05 * u(rng), 0.3 + 0.05 * u(rng), kTableZ);
  if (s == Scenario::kMultimodal2) w.object.y() += 0.05;
  w.drawer = s == Scenario::kDrawer3 ? 1.0 : 0.0;
  return w;
}

// ---------------------------------------------------------------------------
// Dataset generation

struct GeneratedTrajectory {
  Trajectory trajectory;
  TruthLabel truth;
  bool success = false;
};

struct GenerateOptions {
  double noise_scale = 0.003;  // std of the smooth action perturbation on good demos
  double jitter = 0.01;        // std of per-trajectory waypoint jitter
  int max_steps = 200;
};

inline Jitter draw_jitter(std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> g(0.0, sigma);
  Jitter j;
  j.grasp = Vec3(g(rng), g(rng), 0.0) * 0.5;
  j.carry = Vec3(g(rng), g(rng), g(rng));
  j.place = Vec3(g(rng), g(rng), 0.3 * g(rng));
  j.push = Vec3(0.5 * g(rng), 0.0, 0.5 * g(rng));
  return j;
}

inline Script make_script(Scenario s, const Jitter& j, const Corruption& c, int mode) {
  switch (s) {
    case Scenario::kDrawer3: return drawer3_script(j, c);
    case Scenario::kTwostep: return place_script(j, c, Vec3::Zero());
    case Scenario::kMultimodal2: return place_script(j, c, grasp_offsets(s)[static_cast<std::size_t>(mode % 2)]);
  }
  return {};
}

// Runs one scripted demonstration. Truth boundaries: a subtask begins at the
// first step of its opening phase, except that the subtask following a
// release begins at the first state in which the object is no longer held.
inline GeneratedTrajectory run_demonstration(Scenario s, const std::string& id, const WorldState& init,
                                             const Jitter& j, const Corruption& c, int mode, double noise_std,
                                             std::uint64_t noise_seed, int max_steps) {
  Script script = make_script(s, j, c, mode);
  script.noise_std = noise_std;
  ScriptedController ctl(s, std::move(script), noise_seed);
  const int k = subtask_count(s);
  std::vector<Eigen::VectorXd> states, actions;
  std::vector<int> bounds;
  WorldState w = init;
  Progress prog;
  bool was_held = false;
  int released_at = -1;
  for (int t = 0; t < max_steps; ++t) {
    const Eigen::VectorXd a = ctl.act(w);
    if (ctl.done()) break;
    const int started = ctl.subtask_started_now();
    if (started > 0 && static_cast<int>(bounds.size()) < started) bounds.push_back(t);
    if (was_held && !w.held && released_at < 0) released_at = t;
    was_held = w.held;
    states.push_back(observe(w));
    actions.push_back(a);
    w = step(s, w, a);
    prog.update(s, w);
  }
  if (s == Scenario::kDrawer3 && released_at > 0 && static_cast<int>(bounds.size()) == 1) bounds.push_back(released_at);

  GeneratedTrajectory g;
  g.trajectory.id = id;
  const auto T = static_cast<Eigen::Index>(states.size());
  g.trajectory.states.resize(T, kStateDim);
  g.trajectory.actions.resize(T, kActionDim);
  for (Eigen::Index t = 0; t < T; ++t) {
    g.trajectory.states.row(t) = states[static_cast<std::size_t>(t)].transpose();
    g.trajectory.actions.row(t) = actions[static_cast<std::size_t>(t)].transpose();
  }
  g.truth.boundaries = bounds;
  g.truth.subtasks_good.assign(static_cast<std::size_t>(k), true);
  if (c.kind) {
    g.truth.good = false;
    switch (*c.kind) {
      case ErrorKind::kActionNoise: g.truth.subtasks_good.assign(static_cast<std::size_t>(k), false); break;
      // The misplaced object stays visible in every later subtask.
      case ErrorKind::kWrongGoal:
        std::fill(g.truth.subtasks_good.begin() + 1, g.truth.subtasks_good.end(), false);
        break;
      case ErrorKind::kWrongPath: g.truth.subtasks_good[1] = false; break;
      case ErrorKind::kCorruptSubtask: g.truth.subtasks_good[static_cast<std::size_t>(c.subtask)] = false; break;
    }
  }
  g.success = prog.full;
  return g;
}

struct GeneratedDataset {
  LabeledDataset data;
  std::vector<bool> success;  // scripted outcome per trajectory
  std::vector<int> mode;      // multimodal2 grasp side (0 left, 1 right); 0 elsewhere
};

// Splits n_bad among the specs in proportion to their fractions (largest
// remainder, earlier specs win ties).
inline std::vector<int> allocate_errors(const std::vector<ErrorSpec>& specs, int n_bad) {
  std::vector<int> counts(specs.size(), 0);
  if (specs.empty()) return counts;
  double total = 0.0;
  for (const auto& e : specs) total += e.fraction;
  std::vector<std::pair<double, std::size_t>> rem;
  int used = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double exact = n_bad * specs[i].fraction / total;
    counts[i] = static_cast<int>(std::floor(exact));
    used += counts[i];
    rem.push_back({exact - counts[i], i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; used < n_bad; ++r, ++used) ++counts[rem[r % rem.size()].second];
  return counts;
}

inline GeneratedDataset generate_dataset(Scenario s, int n_good, int n_bad, const std::vector<ErrorSpec>& errors,
                                         std::uint64_t seed, const GenerateOptions& opt = {}) {
  if (n_good < 1) throw ValidationError("n_good must be positive");
  if (n_bad < 0) throw ValidationError("n_bad must be nonnegative");
  if (n_good <= n_bad) {
    throw ValidationError("good demonstrations must outnumber bad ones (n_good=" + std::to_string(n_good) +
                          ", n_bad=" + std::to_string(n_bad) + ")");
  }
  if (n_bad > 0 && errors.empty()) throw ValidationError("n_bad > 0 requires at least one error spec");
  for (const auto& e : errors) {
    e.validate();
    if (e.kind == ErrorKind::kCorruptSubtask && e.subtask >= subtask_count(s)) {
      throw ValidationError("corrupt-subtask index out of range for " + scenario_name(s));
    }
  }

  const int n = n_good + n_bad;
  std::vector<Corruption> roles(static_cast<std::size_t>(n));
  {
    const auto counts = allocate_errors(errors, n_bad);
    std::size_t r = static_cast<std::size_t>(n_good);
    for (std::size_t e = 0; e < errors.size(); ++e) {
      for (int c = 0; c < counts[e]; ++c, ++r) {
        Corruption& cr = roles[r];
        cr.kind = errors[e].kind;
        cr.magnitude = errors[e].magnitude;
        cr.subtask = errors[e].kind == ErrorKind::kCorruptSubtask
                         ? (errors[e].subtask >= 0 ? errors[e].subtask : c % subtask_count(s))
                         : -1;
      }
    }
  }
  std::mt19937_64 order_rng(seed * 0x9E3779B97F4A7C15ull + 1);
  std::shuffle(roles.begin(), roles.end(), order_rng);

  GeneratedDataset out;
  std::vector<Trajectory> trajs;
  std::mt19937_64 rng(seed);
  int good_seen = 0;
  for (int i = 0; i < n; ++i) {
    const Corruption& c = roles[static_cast<std::size_t>(i)];
    const WorldState init = initial_state(s, rng);
    const Jitter j = draw_jitter(rng, opt.jitter);
    const std::uint64_t noise_seed = rng();
    const int mode = s == Scenario::kMultimodal2 ? (c.kind ? i % 2 : good_seen++ % 2) : 0;
    double noise = opt.noise_scale;
    if (c.kind == ErrorKind::kActionNoise) noise = c.magnitude;
    char id[32];
    std::snprintf(id, sizeof id, "traj_%04d", i);
    auto g = run_demonstration(s, id, init, j, c, mode, noise, noise_seed, opt.max_steps);
    trajs.push_back(std::move(g.trajectory));
    out.data.truth.push_back(std::move(g.truth));
    out.success.push_back(g.success);
    out.mode.push_back(mode);
  }
  out.data.data = Dataset(std::move(trajs));
  return out;
}

// Truth sidecar: trajectory_id,truth_good,boundaries,bad_subtasks with
// ';'-separated lists.
inline std::string serialize_truth_sidecar(const LabeledDataset& d) {
  std::string out = "trajectory_id,truth_good,boundaries,bad_subtasks\n";
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    const auto& l = d.truth.at(i);
    out += d.data[i].id + ',';
    if (!l) {
      out += ",,\n";
      continue;
    }
    out += l->good ? "1," : "0,";
    for (std::size_t b = 0; b < l->boundaries.size(); ++b) out += (b ? ";" : "") + std::to_string(l->boundaries[b]);
    out += ',';
    bool first = true;
    for (std::size_t j = 0; j < l->subtasks_good.size(); ++j) {
      if (!l->subtasks_good[j]) {
        out += (first ? "" : ";") + std::to_string(j);
        first = false;
      }
    }
    out += '\n';
  }
  return out;
}

struct TruthRow {
  std::string trajectory_id;
  bool good = true;
  std::vector<int> boundaries;
  std::vector<int> bad_subtasks;
};

inline std::vector<TruthRow> load_truth_sidecar(const std::string& path) {
  const auto t = csv::read_table(path);
  csv::require_columns(t, {"trajectory_id", "truth_good", "boundaries", "bad_subtasks"}, path);
  auto list = [](const std::string& s, std::size_t ln) {
    std::vector<int> v;
    if (s.empty()) return v;
    for (const auto& p : csv::split(s, ';')) v.push_back(static_cast<int>(csv::parse_int(p, ln)));
    return v;
  };
  std::vector<TruthRow> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto ln = t.line_numbers[r];
    out.push_back({row[0], csv::parse_int(row[1], ln) != 0, list(row[2], ln), list(row[3], ln)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deviate-then-recover probe: a good pick whose approach first drifts toward
// an offset point and then returns.

struct DeviationProbe {
  Trajectory trajectory;
  std::pair<int, int> deviation;  // [begin, end) timesteps moving away
  std::pair<int, int> recovery;   // [begin, end) timesteps returning
};

inline DeviationProbe deviate_and_recover(Scenario s, std::uint64_t seed, double magnitude = 0.3,
                                          const GenerateOptions& opt = {}) {
  std::mt19937_64 rng(seed ^ 0xD1B54A32D192ED03ull);
  const WorldState init = initial_state(s, rng);
  const Jitter j = draw_jitter(rng, opt.jitter);
  Corruption c{ErrorKind::kCorruptSubtask, 0, magnitude};
  auto g = run_demonstration(s, "probe", init, j, c, 0, opt.noise_scale, rng(), opt.max_steps);
  // Locate the far point: the end of the outward leg is where the ee is
  // farthest (in xy) from the object.
  const auto& st = g.trajectory.states;
  int far = 0;
  double best = -1.0;
  int grasp = st.rows();
  for (int t = 0; t < st.rows(); ++t) {
    if (st(t, 10) < 0.99 && grasp == st.rows()) grasp = t;
    const double dx = st(t, 6), dy = st(t, 7);
    const double dist = std::hypot(dx, dy);
    if (t < grasp && dist > best) {
      best = dist;
      far = t;
    }
  }
  DeviationProbe p;
  p.trajectory = std::move(g.trajectory);
  p.deviation = {0, far + 1};
  p.recovery = {far, grasp};
  return p;
}

// ---------------------------------------------------------------------------
// Policy evaluation

using Policy = std::function<Eigen::VectorXd(const Eigen::VectorXd& observation)>;

struct EvalResult {
  std::vector<double> subtask_success;  // per subtask rate
  double full = 0.0;
  int rollouts = 0;
  int non_finite = 0;
};

inline int default_horizon(Scenario s) { return s == Scenario::kDrawer3 ? 150 : 100; }

// Rolls a policy out from seeded initial states. A rollout whose policy
// emits a non-finite action is stopped and counted as a failure.
template <typename ControllerFactory>
EvalResult evaluate_controller(ControllerFactory&& make, Scenario s, int n_rollouts, int horizon, std::uint64_t seed) {
  if (n_rollouts < 1) throw ValidationError("n_rollouts must be at least 1");
  if (horizon < 1) throw ValidationError("horizon must be at least 1");
  std::mt19937_64 rng(seed ^ 0x5851F42D4C957F2Dull);
  const int k = subtask_count(s);
  EvalResult r;
  r.rollouts = n_rollouts;
  r.subtask_success.assign(static_cast<std::size_t>(k), 0.0);
  double full = 0.0;
  for (int i = 0; i < n_rollouts; ++i) {
    WorldState w = initial_state(s, rng);
    const std::uint64_t rollout_seed = rng();
    auto ctl = make(w, rollout_seed);
    Progress prog;
    bool bad = false;
    for (int t = 0; t < horizon; ++t) {
      const Eigen::VectorXd a = ctl(w);
      if (!a.allFinite()) {
        bad = true;
        break;
      }
      w = step(s, w, a);
      prog.update(s, w);
    }
    if (bad) {
      ++r.non_finite;
      continue;
    }
    r.subtask_success[0] += prog.grasped;
    r.subtask_success[1] += prog.placed;
    if (k > 2) r.subtask_success[2] += prog.closed;
    full += prog.full;
  }
  for (auto& v : r.subtask_success) v /= n_rollouts;
  r.full = full / n_rollouts;
  return r;
}

inline EvalResult evaluate_policy(const Policy& policy, Scenario s, int n_rollouts, int horizon, std::uint64_t seed) {
  return evaluate_controller(
      [&policy](const WorldState&, std::uint64_t) {
        return [&policy](const WorldState& w) { return policy(observe(w)); };
      },
      s, n_rollouts, horizon, seed);
}

// The scripted good demonstrator as a controller (noise-free, no jitter).
inline EvalResult evaluate_expert(Scenario s, int n_rollouts, int horizon, std::uint64_t seed, int mode = 0) {
  return evaluate_controller(
      [s, mode](const WorldState&, std::uint64_t rs) {
        auto ctl = std::make_shared<ScriptedController>(s, make_script(s, Jitter{}, Corruption{}, mode), rs);
        return [ctl](const WorldState& w) { return ctl->act(w); };
      },
      s, n_rollouts, horizon, seed);
}

}  // namespace gib::synth
