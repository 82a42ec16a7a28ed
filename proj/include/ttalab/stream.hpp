#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "ttalab/data.hpp"

namespace ttalab {

// Test-stream composition. uniform(P) flags each sample poisoned i.i.d. with
// probability P; the warm modes place all benign traffic strictly before
// (warm-before) or strictly after (warm-after) the poisoned block.
enum class ScheduleMode { kUniform, kWarmBefore, kWarmAfter };

const char* schedule_mode_name(ScheduleMode m);
ScheduleMode schedule_mode_from_name(std::string_view name);

// How an event is labeled in the metrics record.
enum class EventTag { kBenignIid, kBenignNonIid, kPoisoned };

const char* event_tag_name(EventTag t);
EventTag event_tag_from_name(std::string_view name);

struct StreamSchedule {
  ScheduleMode mode = ScheduleMode::kUniform;
  double p = 0.0;          // uniform: per-sample poisoning probability
  int events = 0;          // uniform: total event count
  int benign = 0;          // warm modes: benign event count
  int poison = 0;          // warm modes: poisoned event count
  int batch = 1;           // samples per event; 1 = single granularity
  bool per_batch = false;  // uniform at batch granularity: one flag per event
  std::uint64_t seed = 0;

  void validate() const;
  int event_count() const {
    return mode == ScheduleMode::kUniform ? events : benign + poison;
  }
};

// One adaptation event. A batch event is tagged poisoned when any of its
// samples is poisoned; the per-sample mask keeps the exact composition.
struct StreamEvent {
  EventTag tag = EventTag::kBenignIid;
  Tensor images;
  std::vector<std::uint8_t> poisoned;
};

// Materializes the deterministic event list. Benign samples and poisoned
// samples are both drawn without replacement from their pools (shuffled once
// under the schedule seed); a pool shorter than the schedule's demand raises
// DependencyError, and a schedule that needs poisoned samples with an empty
// pool names the missing cache explicitly. `benign_iid` controls the tag of
// benign events (whether the benign source matches the evaluation
// distribution).
std::vector<StreamEvent> build_schedule(const StreamSchedule& s,
                                        const Tensor& benign_pool,
                                        const Tensor& poison_pool,
                                        bool benign_iid = true);

}  // namespace ttalab
