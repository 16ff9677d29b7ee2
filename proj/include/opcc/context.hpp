#pragma once

#include <cstdint>
#include <vector>

#include "opcc/common.hpp"
#include "opcc/octree.hpp"

namespace opcc {

// Embedding index conventions:
//   occupancy 0            padding (no node / unknown own occupancy)
//   level     0            padding, real levels are 1-based
//   octant    8            padding, real octants are 0..7
constexpr uint16_t kPadOccupancy = 0;
constexpr uint16_t kPadLevel = 0;
constexpr uint16_t kPadOctant = 8;

// One attention row: the node itself in slot 0 followed by its ancestors,
// nearest first. Slots past the root are padding.
struct FeatureRow {
  static constexpr int kMaxSlots = 8;
  uint16_t occ[kMaxSlots] = {};
  uint16_t lvl[kMaxSlots] = {};
  uint16_t oct[kMaxSlots] = {};
};

// pos < 0 stands for a slot before the start of the sequence and produces a
// full padding row. In the target variant the node's own occupancy is not yet
// known to the decoder, so slot 0 carries the previous node's occupancy
// instead (0 for the first node).
inline FeatureRow assemble_row(const NodeSequence& ns, int64_t pos, int k,
                               bool target_variant) {
  FeatureRow row;
  for (int s = 0; s < k; ++s) {
    row.occ[s] = kPadOccupancy;
    row.lvl[s] = kPadLevel;
    row.oct[s] = kPadOctant;
  }
  if (pos < 0) return row;
  const OctreeNode& n = ns[static_cast<size_t>(pos)];
  row.occ[0] = target_variant
                   ? (pos > 0 ? ns[static_cast<size_t>(pos - 1)].occupancy
                              : kPadOccupancy)
                   : n.occupancy;
  row.lvl[0] = n.level;
  row.oct[0] = n.octant;
  int64_t a = n.parent;
  for (int s = 1; s < k; ++s) {
    if (a >= 0) {
      const OctreeNode& an = ns[static_cast<size_t>(a)];
      row.occ[s] = an.occupancy;
      row.lvl[s] = an.level;
      row.oct[s] = an.octant;
      a = an.parent;
    }
  }
  return row;
}

// One coding step: a window of `length` rows whose last `n_targets` rows are
// the nodes decoded in this step. Earlier rows are look-back context from
// previous steps; positions before the sequence start are padding.
struct WindowSpec {
  int64_t first_target = 0;
  int n_targets = 0;
  int length = 0;

  int64_t row_pos(int j) const {
    return first_target + n_targets - length + j;
  }
  int target_row(int j) const { return length - n_targets + j; }
  // rows the model may attend to when predicting target j
  int receptive_field(int j) const { return target_row(j) + 1; }
};

// The first window fills the whole length with fresh targets; afterwards the
// window slides by n0.
inline std::vector<WindowSpec> plan_windows(int64_t count, int length,
                                            int n0) {
  if (length < 1) throw Error("plan_windows: window length must be >= 1");
  if (n0 < 1 || n0 > length)
    throw Error("plan_windows: n0 must be in [1, length]");
  std::vector<WindowSpec> plan;
  if (count <= 0) return plan;
  WindowSpec first;
  first.first_target = 0;
  first.n_targets = static_cast<int>(std::min<int64_t>(length, count));
  first.length = length;
  plan.push_back(first);
  int64_t next = first.n_targets;
  while (next < count) {
    WindowSpec w;
    w.first_target = next;
    w.n_targets = static_cast<int>(std::min<int64_t>(n0, count - next));
    w.length = length;
    plan.push_back(w);
    next += w.n_targets;
  }
  return plan;
}

struct ContextWindow {
  WindowSpec spec;
  std::vector<FeatureRow> rows;     // spec.length context-variant rows
  std::vector<FeatureRow> targets;  // spec.n_targets target-variant rows
  std::vector<uint16_t> symbols;    // true occupancies of the targets
};

inline ContextWindow build_window(const NodeSequence& ns, const WindowSpec& w,
                                  int k) {
  ContextWindow cw;
  cw.spec = w;
  cw.rows.reserve(w.length);
  for (int j = 0; j < w.length; ++j)
    cw.rows.push_back(assemble_row(ns, w.row_pos(j), k, false));
  cw.targets.reserve(w.n_targets);
  cw.symbols.reserve(w.n_targets);
  for (int j = 0; j < w.n_targets; ++j) {
    const int64_t pos = w.first_target + j;
    cw.targets.push_back(assemble_row(ns, pos, k, true));
    cw.symbols.push_back(ns[static_cast<size_t>(pos)].occupancy);
  }
  return cw;
}

inline std::vector<ContextWindow> build_windows(const NodeSequence& ns,
                                                int length, int k, int n0) {
  const auto plan =
      plan_windows(static_cast<int64_t>(ns.size()), length, n0);
  std::vector<ContextWindow> out;
  out.reserve(plan.size());
  for (const auto& w : plan) out.push_back(build_window(ns, w, k));
  return out;
}

}  // namespace opcc
