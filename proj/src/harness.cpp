#include "ttalab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ttalab {

std::vector<int> geometric_checkpoints(int total) {
  check(total >= 0, "checkpoints: negative stream length");
  std::vector<int> ts = {0};
  for (int base = 1; base <= total;) {
    for (int m : {1, 2, 5}) {
      const int t = base * m;
      if (t > total) break;
      ts.push_back(t);
    }
    if (base > total / 10) break;
    base *= 10;
  }
  if (ts.back() != total) ts.push_back(total);
  return ts;
}

double mean_event_loss(const RunResult& r, EventTag tag) {
  double sum = 0.0;
  int n = 0;
  for (const auto& e : r.events) {
    if (e.tag != tag || std::isnan(e.loss)) continue;
    sum += e.loss;
    ++n;
  }
  return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

RunResult run_experiment(Model& target, const RunConfig& cfg,
                         const Tensor& benign_pool, const Tensor& poison_pool,
                         const LabeledDataset& eval_set) {
  cfg.schedule.validate();
  const bool single = tta_is_single(cfg.tta.method);
  if (single && cfg.schedule.batch != 1)
    throw ConfigError("run: single-sample method fed a batch schedule");
  if (!single && cfg.schedule.batch < 2)
    throw ConfigError("run: batch method fed a single-sample schedule");
  check(eval_set.size() > 0, "run: empty evaluation set");

  // the engine adapts the borrowed model in place; the run must not leak
  // that adaptation into the caller's target, or a rerun would start from a
  // drifted model instead of reproducing
  const Checkpoint pristine = Checkpoint::capture(target);
  struct RestoreGuard {
    Model& m;
    const Checkpoint& c;
    ~RestoreGuard() { c.restore_into(m); }
  } guard{target, pristine};

  TtaEngine engine(target, cfg.tta);
  Preprocessor preproc(cfg.defense);
  const auto stream = build_schedule(cfg.schedule, benign_pool, poison_pool,
                                     cfg.benign_iid);
  const int total = static_cast<int>(stream.size());

  std::vector<int> marks = cfg.acc_checkpoints.empty()
                               ? geometric_checkpoints(total)
                               : cfg.acc_checkpoints;
  std::sort(marks.begin(), marks.end());
  marks.erase(std::unique(marks.begin(), marks.end()), marks.end());
  check(marks.empty() || (marks.front() >= 0 && marks.back() <= total),
        "run: accuracy checkpoint outside the stream");

  RunResult result;
  std::uint64_t eval_calls = 0;
  std::uint64_t fed_samples = 0;
  long fed_events = 0;

  auto measure = [&](int t) {
    // evaluation traffic passes through the same preprocessor as the stream
    LabeledDataset shown;
    shown.images = preproc.apply(eval_set.images);
    shown.labels = eval_set.labels;
    ++eval_calls;
    const std::uint64_t before = engine.state_hash();
    const double acc = engine.evaluate(shown);
    check(engine.state_hash() == before, "run: evaluation perturbed engine state");
    result.accs.push_back({t, acc});
    return acc;
  };

  // the one feed path; benign and poisoned events differ only in payload
  auto feed = [&](const StreamEvent& ev) {
    Tensor shown = preproc.apply(ev.images);
    fed_samples += static_cast<std::uint64_t>(ev.images.dim(0));
    ++fed_events;
    if (single)
      (void)engine.step_single(shown);
    else
      (void)engine.step_batch(shown);
    return engine.last_loss();
  };

  auto next_mark = marks.begin();
  if (next_mark != marks.end() && *next_mark == 0) {
    result.baseline_acc = measure(0);
    ++next_mark;
  } else {
    result.baseline_acc = measure(0);
    result.accs.clear();  // t=0 not requested: keep the baseline but no record
  }

  for (int t = 1; t <= total; ++t) {
    const StreamEvent& ev = stream[static_cast<std::size_t>(t - 1)];
    const double loss = feed(ev);
    result.events.push_back({t, ev.tag, loss});
    if (next_mark != marks.end() && *next_mark == t) {
      (void)measure(t);
      ++next_mark;
    }
  }

  result.final_acc = result.accs.empty() ? result.baseline_acc : result.accs.back().acc;
  if (!result.accs.empty() && result.accs.back().t != total)
    result.final_acc = measure(total);

  // instrumentation: 100% of traffic went through the preprocessor, and the
  // engine stepped exactly once per event (evaluate restores its counter)
  check(preproc.invocations() == static_cast<std::uint64_t>(fed_events) + eval_calls,
        "run: preprocessor bypassed");
  check(preproc.images_seen() ==
            fed_samples + eval_calls * static_cast<std::uint64_t>(eval_set.size()),
        "run: preprocessor saw the wrong sample count");
  check(engine.t() == total, "run: event/step count mismatch");
  check(fed_events == total, "run: feed path skipped an event");
  return result;
}

}  // namespace ttalab
