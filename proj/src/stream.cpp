#include "ttalab/stream.hpp"

#include <numeric>
#include <string>

namespace ttalab {

const char* schedule_mode_name(ScheduleMode m) {
  switch (m) {
    case ScheduleMode::kUniform: return "uniform";
    case ScheduleMode::kWarmBefore: return "warm-before";
    case ScheduleMode::kWarmAfter: return "warm-after";
  }
  throw ConfigError("schedule: unknown mode");
}

ScheduleMode schedule_mode_from_name(std::string_view name) {
  if (name == "uniform") return ScheduleMode::kUniform;
  if (name == "warm-before") return ScheduleMode::kWarmBefore;
  if (name == "warm-after") return ScheduleMode::kWarmAfter;
  throw ConfigError("schedule: unknown mode '" + std::string(name) + "'");
}

const char* event_tag_name(EventTag t) {
  switch (t) {
    case EventTag::kBenignIid: return "benign-iid";
    case EventTag::kBenignNonIid: return "benign-non-iid";
    case EventTag::kPoisoned: return "poisoned";
  }
  throw ConfigError("event: unknown tag");
}

EventTag event_tag_from_name(std::string_view name) {
  if (name == "benign-iid") return EventTag::kBenignIid;
  if (name == "benign-non-iid") return EventTag::kBenignNonIid;
  if (name == "poisoned") return EventTag::kPoisoned;
  throw ConfigError("event: unknown tag '" + std::string(name) + "'");
}

void StreamSchedule::validate() const {
  if (batch < 1) throw ConfigError("schedule: batch must be >= 1");
  if (mode == ScheduleMode::kUniform) {
    if (p < 0.0 || p > 1.0) throw ConfigError("schedule: p must be in [0,1]");
    if (events < 0) throw ConfigError("schedule: negative event count");
  } else {
    if (benign < 0 || poison < 0) throw ConfigError("schedule: negative event count");
  }
}

namespace {

struct PoolCursor {
  std::vector<int> order;
  std::size_t next = 0;
  const char* what;

  PoolCursor(const Tensor& pool, Rng& rng, const char* what_) : what(what_) {
    const int n = pool.defined() ? pool.dim(0) : 0;
    order.resize(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
  }

  int take() {
    if (next >= order.size())
      throw DependencyError(std::string("schedule: ") + what +
                            " pool exhausted (needs more than " +
                            std::to_string(order.size()) + " samples)");
    return order[next++];
  }
};

}  // namespace

std::vector<StreamEvent> build_schedule(const StreamSchedule& s,
                                        const Tensor& benign_pool,
                                        const Tensor& poison_pool,
                                        bool benign_iid) {
  s.validate();
  const int total = s.event_count();
  const bool needs_poison =
      s.mode == ScheduleMode::kUniform ? (s.p > 0.0 && total > 0) : s.poison > 0;
  if (needs_poison && (!poison_pool.defined() || poison_pool.dim(0) == 0))
    throw DependencyError("schedule: poisoned-sample cache required but missing");
  if (total > 0 && !benign_pool.defined())
    throw DependencyError("schedule: benign pool required but missing");
  if (needs_poison && benign_pool.defined()) {
    for (int d = 1; d < 4; ++d)
      check(benign_pool.dim(d) == poison_pool.dim(d),
            "schedule: benign and poisoned pools disagree on image shape");
  }

  Rng rng(fold_seed(s.seed, "schedule"));
  PoolCursor benign(benign_pool, rng, "benign");
  PoolCursor poison(poison_pool, rng, "poisoned");
  const EventTag benign_tag = benign_iid ? EventTag::kBenignIid : EventTag::kBenignNonIid;

  // per-event poisoned-sample masks, drawn up front in a fixed order
  std::vector<std::vector<std::uint8_t>> masks;
  masks.reserve(static_cast<std::size_t>(total));
  for (int t = 0; t < total; ++t) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(s.batch), 0);
    switch (s.mode) {
      case ScheduleMode::kUniform:
        if (s.per_batch) {
          const std::uint8_t flag = rng.bernoulli(s.p) ? 1 : 0;
          std::fill(mask.begin(), mask.end(), flag);
        } else {
          for (auto& m : mask) m = rng.bernoulli(s.p) ? 1 : 0;
        }
        break;
      case ScheduleMode::kWarmBefore:
        std::fill(mask.begin(), mask.end(), t >= s.benign ? 1 : 0);
        break;
      case ScheduleMode::kWarmAfter:
        std::fill(mask.begin(), mask.end(), t < s.poison ? 1 : 0);
        break;
    }
    masks.push_back(std::move(mask));
  }

  std::vector<StreamEvent> stream;
  stream.reserve(static_cast<std::size_t>(total));
  for (auto& mask : masks) {
    StreamEvent ev;
    std::vector<int> rows(mask.size(), 0);
    bool any_poison = false;
    std::vector<std::size_t> benign_slots;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) {
        rows[i] = poison.take();
        any_poison = true;
      } else {
        benign_slots.push_back(i);
      }
    }
    for (std::size_t i : benign_slots) rows[i] = benign.take();

    // stitch the event from its two sources
    ev.poisoned = mask;
    ev.tag = any_poison ? EventTag::kPoisoned : benign_tag;
    Shape shape = (any_poison ? poison_pool : benign_pool).shape();
    shape[0] = static_cast<int>(mask.size());
    ev.images = Tensor(shape, 0.0f);
    const std::size_t per = ev.images.numel() / mask.size();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      const Tensor& src = mask[i] ? poison_pool : benign_pool;
      std::copy(src.vec().begin() + per * static_cast<std::size_t>(rows[i]),
                src.vec().begin() + per * static_cast<std::size_t>(rows[i] + 1),
                ev.images.vec().begin() + per * i);
    }
    stream.push_back(std::move(ev));
  }
  return stream;
}

}  // namespace ttalab
