#pragma once

// Subtask segmentation from the reserved gripper/height channels, or from
// externally supplied annotations.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "gib/dataset.hpp"
#include "gib/error.hpp"

namespace gib {

struct SegmentationOptions {
  double height_threshold = 0.3;
  double gripper_threshold = 0.5;
  int debounce = 5;
};

// Boundaries at upward crossings of the gripper-openness threshold and of the
// height threshold. Events closer than `debounce` steps collapse onto the
// earlier one. When more than k_expected-1 events remain, the ones preceded by
// the longest gaps are kept.
inline SubtaskSegmentation segment_heuristic(const Trajectory& t, int k_expected,
                                             const SegmentationOptions& opt = {}) {
  if (k_expected < 1) throw ValidationError("k_expected must be at least 1");
  const int T = t.length();
  std::vector<int> events;
  for (int i = 1; i < T; ++i) {
    const bool opened = t.gripper(i) > opt.gripper_threshold && t.gripper(i - 1) <= opt.gripper_threshold;
    const bool rose = t.height(i) > opt.height_threshold && t.height(i - 1) <= opt.height_threshold;
    if (opened || rose) events.push_back(i);
  }

  std::vector<int> kept;
  for (int e : events) {
    if (kept.empty() || e - kept.back() >= opt.debounce) kept.push_back(e);
  }

  const auto limit = static_cast<std::size_t>(k_expected - 1);
  if (kept.size() > limit) {
    struct Gap {
      int at;
      int spacing;
    };
    std::vector<Gap> gaps;
    int prev = 0;
    for (int e : kept) {
      gaps.push_back({e, e - prev});
      prev = e;
    }
    std::stable_sort(gaps.begin(), gaps.end(), [](const Gap& a, const Gap& b) { return a.spacing > b.spacing; });
    gaps.resize(limit);
    kept.clear();
    for (const auto& g : gaps) kept.push_back(g.at);
    std::sort(kept.begin(), kept.end());
  }
  return SubtaskSegmentation(t.id, T, std::move(kept), k_expected);
}

inline SubtaskSegmentation segment_heuristic(const Trajectory& t, int k_expected, double height_threshold) {
  SegmentationOptions opt;
  opt.height_threshold = height_threshold;
  return segment_heuristic(t, k_expected, opt);
}

inline SubtaskSegmentation segment_from_annotation(const Trajectory& t, std::vector<int> boundaries,
                                                   int k_expected) {
  return SubtaskSegmentation(t.id, t.length(), std::move(boundaries), k_expected);
}

inline std::vector<SubtaskSegmentation> segment_dataset(const Dataset& d, int k_expected,
                                                        const SegmentationOptions& opt = {}) {
  std::vector<SubtaskSegmentation> out;
  out.reserve(d.size());
  for (const auto& t : d.trajectories()) out.push_back(segment_heuristic(t, k_expected, opt));
  return out;
}

// Segmentation CSV: trajectory_id,boundary_index, one row per boundary.
inline std::string serialize_segmentations(const std::vector<SubtaskSegmentation>& segs) {
  std::string out = "trajectory_id,boundary_index\n";
  for (const auto& s : segs) {
    for (int b : s.boundaries()) out += s.trajectory_id() + ',' + std::to_string(b) + '\n';
  }
  return out;
}

inline void save_segmentations(const std::vector<SubtaskSegmentation>& segs, const std::string& path) {
  csv::write_file(path, serialize_segmentations(segs));
}

// Raw boundary lists keyed by trajectory id.
inline std::map<std::string, std::vector<int>> load_boundaries(const std::string& path) {
  const auto t = csv::read_table(path);
  csv::require_columns(t, {"trajectory_id", "boundary_index"}, path);
  std::map<std::string, std::vector<int>> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out[t.rows[r][t.column("trajectory_id")]].push_back(
        static_cast<int>(csv::parse_int(t.rows[r][t.column("boundary_index")], t.line_numbers[r])));
  }
  return out;
}

// Rebuilds segmentations for every trajectory of `d` (trajectories without
// rows get a single segment).
inline std::vector<SubtaskSegmentation> load_segmentations(const std::string& path, const Dataset& d,
                                                           int k_expected) {
  auto bounds = load_boundaries(path);
  std::vector<SubtaskSegmentation> out;
  for (const auto& t : d.trajectories()) {
    auto it = bounds.find(t.id);
    out.push_back(segment_from_annotation(t, it == bounds.end() ? std::vector<int>{} : it->second, k_expected));
    if (it != bounds.end()) bounds.erase(it);
  }
  if (!bounds.empty()) {
    throw ValidationError("segmentation refers to unknown trajectory '" + bounds.begin()->first + "'");
  }
  return out;
}

}  // namespace gib
