#pragma once

#include <cstdint>
#include <vector>

#include "ttalab/defense.hpp"
#include "ttalab/stream.hpp"
#include "ttalab/tta.hpp"

namespace ttalab {

struct EventRecord {
  int t = 0;  // 1-based event index
  EventTag tag = EventTag::kBenignIid;
  double loss = 0.0;  // adaptation loss after the step; NaN for stats-only methods
};

struct AccRecord {
  int t = 0;  // events processed before the measurement
  double acc = 0.0;
};

struct RunConfig {
  TtaConfig tta;
  StreamSchedule schedule;
  DefenseSpec defense;  // kNone passes traffic through but still counts it
  std::vector<int> acc_checkpoints;  // empty -> geometric_checkpoints(total)
  bool benign_iid = true;            // tag for benign events
};

struct RunResult {
  std::vector<EventRecord> events;
  std::vector<AccRecord> accs;
  double baseline_acc = 0.0;  // accuracy at t = 0
  double final_acc = 0.0;     // accuracy after the last event
};

// {0, 1, 2, 5, 10, 20, 50, ...} clipped to the stream length, plus the end
// point, so the fast early degradation is captured at low cost.
std::vector<int> geometric_checkpoints(int total);

// Means of the recorded per-event losses by tag, NaN-skipping (stats-only
// methods record NaN losses). Returns NaN when no finite loss carries `tag`.
double mean_event_loss(const RunResult& r, EventTag tag);

// Feeds the scheduled stream through the defense preprocessor into a fresh
// adaptation engine over `target`, measuring accuracy on the (equally
// preprocessed) evaluation set at the configured checkpoints. The target
// comes back in its entry state, so repeated runs start identically.
//
// Invariants enforced here, not merely documented: every event and every
// evaluation batch passes through the one preprocessor instance (counter
// assert); benign and poisoned events traverse the same feed path (single
// call site, step-count assert); evaluation never perturbs engine state
// (state-hash assert around every evaluate call). Granularity mismatches
// (single-sample methods with batch schedules and vice versa) raise
// ConfigError before any work.
RunResult run_experiment(Model& target, const RunConfig& cfg,
                         const Tensor& benign_pool, const Tensor& poison_pool,
                         const LabeledDataset& eval_set);

}  // namespace ttalab
