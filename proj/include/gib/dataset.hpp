#pragma once

// Trajectory data model and the on-disk formats for datasets and masks.
//
// Datasets are JSON Lines, one trajectory per line:
//   {"id": "...", "states": [[...], ...], "actions": [[...], ...],
//    "truth": {"good": true, "subtasks_good": [true, false, ...],
//              "boundaries": [12, 30]}}
// `truth` is optional and is only ever surfaced through LabeledDataset.
// Masks are CSV with header trajectory_id,subtask_index,present,mean_score,beta
// (plus a trailing `method` column for baseline masks).

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gib/csv.hpp"
#include "gib/error.hpp"

namespace gib {

// Index of the reserved channels counted from the end of a state vector.
inline constexpr int kGripperFromEnd = 2;
inline constexpr int kHeightFromEnd = 1;

// One row per timestep.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Trajectory {
  std::string id;
  RowMatrix states;   // T x s_dim
  RowMatrix actions;  // T x a_dim

  int length() const { return static_cast<int>(states.rows()); }
  double gripper(int t) const { return states(t, states.cols() - kGripperFromEnd); }
  double height(int t) const { return states(t, states.cols() - kHeightFromEnd); }
};

// Evaluation-only ground truth. Never reachable from a plain Dataset.
struct TruthLabel {
  bool good = true;
  std::vector<bool> subtasks_good;
  std::vector<int> boundaries;
};

inline void validate_id(const std::string& id) {
  if (id.empty()) throw ValidationError("trajectory id must be non-empty");
  if (id.find_first_of(",\"\n\r") != std::string::npos) {
    throw ValidationError("trajectory id '" + id + "' contains a reserved character");
  }
}

class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<Trajectory> trajectories) : trajectories_(std::move(trajectories)) {
    validate();
  }

  const std::vector<Trajectory>& trajectories() const { return trajectories_; }
  const Trajectory& operator[](std::size_t i) const { return trajectories_[i]; }
  std::size_t size() const { return trajectories_.size(); }
  int s_dim() const { return s_dim_; }
  int a_dim() const { return a_dim_; }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < trajectories_.size(); ++i) {
      if (trajectories_[i].id == id) return i;
    }
    throw ValidationError("unknown trajectory id '" + id + "'");
  }

  std::size_t total_steps() const {
    std::size_t n = 0;
    for (const auto& t : trajectories_) n += static_cast<std::size_t>(t.length());
    return n;
  }

  // Returns a dataset restricted to the given trajectory indices.
  Dataset subset(const std::vector<std::size_t>& keep) const {
    std::vector<Trajectory> out;
    out.reserve(keep.size());
    for (auto i : keep) out.push_back(trajectories_.at(i));
    return Dataset(std::move(out));
  }

 private:
  void validate() {
    if (trajectories_.empty()) throw ValidationError("dataset must contain at least one trajectory");
    s_dim_ = static_cast<int>(trajectories_.front().states.cols());
    a_dim_ = static_cast<int>(trajectories_.front().actions.cols());
    if (s_dim_ < 2) throw ValidationError("state dimension must be at least 2 (gripper, height)");
    if (a_dim_ < 1) throw ValidationError("action dimension must be positive");
    std::set<std::string> seen;
    for (const auto& t : trajectories_) {
      validate_id(t.id);
      if (!seen.insert(t.id).second) throw ValidationError("duplicate trajectory id '" + t.id + "'");
      if (t.states.rows() != t.actions.rows()) {
        throw ValidationError("trajectory '" + t.id + "' has " + std::to_string(t.states.rows()) +
                              " states but " + std::to_string(t.actions.rows()) + " actions");
      }
      if (t.states.rows() < 2) throw ValidationError("trajectory '" + t.id + "' is shorter than 2 steps");
      if (t.states.cols() != s_dim_ || t.actions.cols() != a_dim_) {
        throw ValidationError("trajectory '" + t.id + "' has inconsistent dimensions");
      }
      if (!t.states.allFinite() || !t.actions.allFinite()) {
        throw ValidationError("trajectory '" + t.id + "' contains non-finite values");
      }
    }
  }

  std::vector<Trajectory> trajectories_;
  int s_dim_ = 0;
  int a_dim_ = 0;
};

// Dataset paired with its evaluation labels. Curation code takes `Dataset`.
struct LabeledDataset {
  Dataset data;
  std::vector<std::optional<TruthLabel>> truth;  // parallel to data.trajectories()
};

// Boundaries are interior timestep indices; segment j covers
// [boundaries[j-1], boundaries[j]) with implicit 0 and T at the ends.
class SubtaskSegmentation {
 public:
  SubtaskSegmentation(std::string trajectory_id, int length, std::vector<int> boundaries,
                      int k_expected)
      : id_(std::move(trajectory_id)),
        length_(length),
        boundaries_(std::move(boundaries)),
        k_expected_(k_expected) {
    if (k_expected_ < 1) throw ValidationError("k_expected must be at least 1");
    int prev = 0;
    for (int b : boundaries_) {
      if (b <= 0 || b >= length_) {
        throw ValidationError("boundary " + std::to_string(b) + " outside (0, " +
                              std::to_string(length_) + ") for '" + id_ + "'");
      }
      if (b <= prev) throw ValidationError("boundaries not strictly increasing for '" + id_ + "'");
      prev = b;
    }
    if (segment_count() > k_expected_) {
      throw ValidationError("'" + id_ + "' has " + std::to_string(segment_count()) +
                            " segments, more than k_expected=" + std::to_string(k_expected_));
    }
  }

  const std::string& trajectory_id() const { return id_; }
  int length() const { return length_; }
  const std::vector<int>& boundaries() const { return boundaries_; }
  int k_expected() const { return k_expected_; }
  int segment_count() const { return static_cast<int>(boundaries_.size()) + 1; }
  bool present(int j) const { return j >= 0 && j < segment_count(); }

  // Half-open [begin, end) of segment j.
  std::pair<int, int> segment(int j) const {
    const int begin = j == 0 ? 0 : boundaries_.at(j - 1);
    const int end = j == segment_count() - 1 ? length_ : boundaries_.at(j);
    return {begin, end};
  }

  // Subtask index of timestep t.
  int subtask_of(int t) const {
    return static_cast<int>(std::upper_bound(boundaries_.begin(), boundaries_.end(), t) -
                            boundaries_.begin());
  }

 private:
  std::string id_;
  int length_;
  std::vector<int> boundaries_;
  int k_expected_;
};

struct MaskEntry {
  std::string trajectory_id;
  int subtask_index = 0;
  bool present = true;
  double mean_score = 0.0;  // meaningless when !present
  int beta = 1;
};

struct SubtaskMask {
  std::vector<MaskEntry> entries;
  int rho = 0;
  std::string method;  // empty for the Mahalanobis mask

  std::size_t present_count() const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](const MaskEntry& e) { return e.present; }));
  }

  void validate() const {
    if (rho < 0) throw ValidationError("rho must be nonnegative");
    std::set<std::pair<std::string, int>> seen;
    long long beta_sum = 0;
    for (const auto& e : entries) {
      validate_id(e.trajectory_id);
      if (e.subtask_index < 0) throw ValidationError("negative subtask index for '" + e.trajectory_id + "'");
      if (!seen.insert({e.trajectory_id, e.subtask_index}).second) {
        throw ValidationError("duplicate mask entry (" + e.trajectory_id + ", " +
                              std::to_string(e.subtask_index) + ")");
      }
      if (e.beta != 0 && e.beta != 1) throw ValidationError("beta must be 0 or 1");
      if (e.present) {
        if (!(e.mean_score >= 0.0) || !std::isfinite(e.mean_score)) {
          throw ValidationError("mean_score must be finite and nonnegative for (" + e.trajectory_id +
                                ", " + std::to_string(e.subtask_index) + ")");
        }
        beta_sum += e.beta;
      } else if (e.beta != 0) {
        throw ValidationError("absent subtask (" + e.trajectory_id + ", " +
                              std::to_string(e.subtask_index) + ") must have beta = 0");
      }
    }
    const auto present = static_cast<long long>(present_count());
    if (rho > present) throw ValidationError("rho exceeds the number of present subtasks");
    if (beta_sum != present - rho) {
      throw ValidationError("mask violates sum(beta) = present - rho: sum(beta)=" +
                            std::to_string(beta_sum) + ", present=" + std::to_string(present) +
                            ", rho=" + std::to_string(rho));
    }
  }

  // beta for (id, j); absent or unknown pairs return 0.
  int beta(const std::string& id, int j) const {
    for (const auto& e : entries) {
      if (e.trajectory_id == id && e.subtask_index == j) return e.beta;
    }
    return 0;
  }
};

// ---------------------------------------------------------------------------
// JSON Lines I/O

namespace detail {

inline RowMatrix matrix_from_json(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j[key].is_array()) throw ParseError(std::string("missing array '") + key + "'", line);
  const auto& rows = j[key];
  if (rows.empty()) return RowMatrix(0, 0);
  if (!rows[0].is_array()) throw ParseError(std::string("'") + key + "' must be an array of arrays", line);
  const auto cols = rows[0].size();
  RowMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r].is_array()) throw ParseError(std::string("'") + key + "' must be an array of arrays", line);
    if (rows[r].size() != cols) {
      const std::string id = j.value("id", std::string("?"));
      throw ValidationError("trajectory '" + id + "' has ragged '" + key + "' rows");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!rows[r][c].is_number()) throw ParseError(std::string("non-numeric entry in '") + key + "'", line);
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
    }
  }
  return m;
}

inline void append_matrix(std::string& out, const RowMatrix& m) {
  out += '[';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r) out += ',';
    out += '[';
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += csv::format_real(m(r, c));
    }
    out += ']';
  }
  out += ']';
}

}  // namespace detail

inline LabeledDataset load_labeled_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<Trajectory> trajs;
  std::vector<std::optional<TruthLabel>> truth;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), n);
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) {
      throw ParseError("each line must be an object with a string 'id'", n);
    }
    Trajectory t;
    t.id = j["id"].get<std::string>();
    t.states = detail::matrix_from_json(j, "states", n);
    t.actions = detail::matrix_from_json(j, "actions", n);
    std::optional<TruthLabel> label;
    if (j.contains("truth") && !j["truth"].is_null()) {
      const auto& tj = j["truth"];
      TruthLabel l;
      try {
        l.good = tj.at("good").get<bool>();
        if (tj.contains("subtasks_good")) l.subtasks_good = tj["subtasks_good"].get<std::vector<bool>>();
        if (tj.contains("boundaries")) l.boundaries = tj["boundaries"].get<std::vector<int>>();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed truth record: ") + e.what(), n);
      }
      label = std::move(l);
    }
    trajs.push_back(std::move(t));
    truth.push_back(std::move(label));
  }
  return {Dataset(std::move(trajs)), std::move(truth)};
}

inline Dataset load_dataset(const std::string& path) { return load_labeled_dataset(path).data; }

inline std::string serialize_dataset(const Dataset& d,
                                     const std::vector<std::optional<TruthLabel>>* truth = nullptr) {
  if (d.size() == 0) throw ValidationError("dataset must contain at least one trajectory");
  std::string out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& t = d[i];
    out += "{\"id\":";
    out += nlohmann::json(t.id).dump();
    out += ",\"states\":";
    detail::append_matrix(out, t.states);
    out += ",\"actions\":";
    detail::append_matrix(out, t.actions);
    if (truth && i < truth->size() && (*truth)[i]) {
      const auto& l = *(*truth)[i];
      nlohmann::json tj;
      tj["good"] = l.good;
      tj["subtasks_good"] = l.subtasks_good;
      tj["boundaries"] = l.boundaries;
      out += ",\"truth\":";
      out += tj.dump();
    }
    out += "}\n";
  }
  return out;
}

inline void save_dataset(const Dataset& d, const std::string& path) {
  csv::write_file(path, serialize_dataset(d));
}

inline void save_dataset(const LabeledDataset& d, const std::string& path) {
  csv::write_file(path, serialize_dataset(d.data, &d.truth));
}

// ---------------------------------------------------------------------------
// Mask CSV

inline void sort_mask_entries(std::vector<MaskEntry>& entries) {
  std::sort(entries.begin(), entries.end(), [](const MaskEntry& a, const MaskEntry& b) {
    return std::tie(a.trajectory_id, a.subtask_index) < std::tie(b.trajectory_id, b.subtask_index);
  });
}

inline std::string serialize_mask(const SubtaskMask& m) {
  m.validate();
  auto entries = m.entries;
  sort_mask_entries(entries);
  std::string out = "trajectory_id,subtask_index,present,mean_score,beta";
  if (!m.method.empty()) out += ",method";
  out += '\n';
  for (const auto& e : entries) {
    out += e.trajectory_id;
    out += ',' + std::to_string(e.subtask_index);
    out += e.present ? ",1," : ",0,";
    if (e.present) out += csv::format_real(e.mean_score);
    out += ',' + std::to_string(e.beta);
    if (!m.method.empty()) out += ',' + m.method;
    out += '\n';
  }
  return out;
}

inline void save_mask(const SubtaskMask& m, const std::string& path) {
  csv::write_file(path, serialize_mask(m));
}

// The rho of a loaded mask is recovered from the constraint itself.
inline SubtaskMask load_mask(const std::string& path) {
  const auto t = csv::read_table(path);
  csv::require_columns(t, {"trajectory_id", "subtask_index", "present", "mean_score", "beta"}, path);
  const int c_id = t.column("trajectory_id"), c_j = t.column("subtask_index"),
            c_p = t.column("present"), c_s = t.column("mean_score"), c_b = t.column("beta"),
            c_m = t.column("method");
  SubtaskMask m;
  long long beta_sum = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto ln = t.line_numbers[r];
    MaskEntry e;
    e.trajectory_id = row[c_id];
    e.subtask_index = static_cast<int>(csv::parse_int(row[c_j], ln));
    e.present = csv::parse_int(row[c_p], ln) != 0;
    e.mean_score = e.present ? csv::parse_real(row[c_s], ln) : 0.0;
    e.beta = static_cast<int>(csv::parse_int(row[c_b], ln));
    if (c_m >= 0) m.method = row[c_m];
    if (e.present) beta_sum += e.beta;
    m.entries.push_back(std::move(e));
  }
  m.rho = static_cast<int>(static_cast<long long>(m.present_count()) - beta_sum);
  m.validate();
  return m;
}

}  // namespace gib
