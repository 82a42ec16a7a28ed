#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ttalab/config.hpp"
#include "ttalab/corrupt.hpp"
#include "ttalab/report.hpp"
#include "ttalab/train.hpp"

using namespace ttalab;

namespace {

// Pools with one constant image per row: benign row r holds +r, poisoned
// row r holds -(r+1). Sign identifies the source pool, magnitude the row.
Tensor value_pool(int n, int c, int hw, float sign) {
  Tensor t({n, c, hw, hw}, 0.0f);
  const std::size_t per = t.numel() / static_cast<std::size_t>(n);
  for (int r = 0; r < n; ++r) {
    const float v = sign * (sign > 0 ? static_cast<float>(r)
                                     : static_cast<float>(r + 1));
    std::fill(t.vec().begin() + per * static_cast<std::size_t>(r),
              t.vec().begin() + per * static_cast<std::size_t>(r + 1), v);
  }
  return t;
}

StreamSchedule uniform_sched(double p, int events, int batch = 1,
                             std::uint64_t seed = 5) {
  StreamSchedule s;
  s.mode = ScheduleMode::kUniform;
  s.p = p;
  s.events = events;
  s.batch = batch;
  s.seed = seed;
  return s;
}

bool same_events(const std::vector<StreamEvent>& a,
                 const std::vector<StreamEvent>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].tag != b[i].tag || a[i].poisoned != b[i].poisoned) return false;
    if (a[i].images.vec() != b[i].images.vec()) return false;
  }
  return true;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(static_cast<bool>(f));
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

RunResult report_fixture() {
  RunResult r;
  r.events = {{1, EventTag::kBenignIid, 0.5},
              {2, EventTag::kPoisoned, std::nan("")},
              {3, EventTag::kBenignNonIid, 1.25e-7},
              {4, EventTag::kPoisoned, 7.5}};
  r.accs = {{0, 0.8125}, {2, 0.5}, {4, 0.4375}};
  r.baseline_acc = 0.8125;
  r.final_acc = 0.4375;
  return r;
}

}  // namespace

TEST_CASE("stream: uniform extremes and fraction") {
  const Tensor benign = value_pool(5400, 1, 2, 1.0f);
  const Tensor poison = value_pool(5400, 1, 2, -1.0f);

  auto all0 = build_schedule(uniform_sched(0.0, 40), benign, poison);
  REQUIRE(all0.size() == 40);
  for (const auto& ev : all0) {
    CHECK(ev.tag == EventTag::kBenignIid);
    CHECK(ev.poisoned == std::vector<std::uint8_t>{0});
    CHECK(ev.images.vec()[0] >= 0.0f);
  }

  // p = 0 never touches the poisoned cache, so its absence is fine
  CHECK_NOTHROW(build_schedule(uniform_sched(0.0, 40), benign, Tensor()));

  auto all1 = build_schedule(uniform_sched(1.0, 40), benign, poison);
  for (const auto& ev : all1) {
    CHECK(ev.tag == EventTag::kPoisoned);
    CHECK(ev.images.vec()[0] < 0.0f);
  }

  // 10,000 Bernoulli(0.5) draws: observed fraction within +-0.02
  auto half = build_schedule(uniform_sched(0.5, 10000, 1, 77), benign, poison);
  int poisoned = 0;
  for (const auto& ev : half)
    if (ev.tag == EventTag::kPoisoned) ++poisoned;
  const double frac = poisoned / 10000.0;
  CHECK(frac > 0.48);
  CHECK(frac < 0.52);

  // non-iid benign tagging
  auto noniid = build_schedule(uniform_sched(0.0, 3), benign, poison, false);
  CHECK(noniid[0].tag == EventTag::kBenignNonIid);
}

TEST_CASE("stream: warm modes order the poisoned block") {
  const Tensor benign = value_pool(32, 1, 2, 1.0f);
  const Tensor poison = value_pool(32, 1, 2, -1.0f);

  StreamSchedule s;
  s.mode = ScheduleMode::kWarmBefore;
  s.benign = 3;
  s.poison = 2;
  s.batch = 2;
  s.seed = 9;
  auto before = build_schedule(s, benign, poison);
  REQUIRE(before.size() == 5);
  for (int t = 0; t < 5; ++t) {
    const bool want_poison = t >= 3;
    CHECK(before[static_cast<std::size_t>(t)].tag ==
          (want_poison ? EventTag::kPoisoned : EventTag::kBenignIid));
    for (std::uint8_t f : before[static_cast<std::size_t>(t)].poisoned)
      CHECK(f == (want_poison ? 1 : 0));
  }

  s.mode = ScheduleMode::kWarmAfter;
  auto after = build_schedule(s, benign, poison);
  for (int t = 0; t < 5; ++t)
    CHECK(after[static_cast<std::size_t>(t)].tag ==
          (t < 2 ? EventTag::kPoisoned : EventTag::kBenignIid));
}

TEST_CASE("stream: batch masks, mixed tagging and payload stitching") {
  const Tensor benign = value_pool(128, 1, 2, 1.0f);
  const Tensor poison = value_pool(128, 1, 2, -1.0f);

  auto mixed = build_schedule(uniform_sched(0.5, 30, 4, 21), benign, poison);
  bool saw_mixed = false;
  for (const auto& ev : mixed) {
    bool any = false;
    for (std::size_t i = 0; i < 4; ++i) {
      const bool flag = ev.poisoned[i] != 0;
      any = any || flag;
      // every pixel of slot i comes from the pool the mask names
      const std::size_t per = ev.images.numel() / 4;
      for (std::size_t k = 0; k < per; ++k) {
        const float v = ev.images.vec()[per * i + k];
        CHECK((flag ? v < 0.0f : v >= 0.0f));
      }
    }
    CHECK(ev.tag == (any ? EventTag::kPoisoned : EventTag::kBenignIid));
    const bool uniform_mask =
        ev.poisoned == std::vector<std::uint8_t>(4, 0) ||
        ev.poisoned == std::vector<std::uint8_t>(4, 1);
    saw_mixed = saw_mixed || !uniform_mask;
  }
  CHECK(saw_mixed);

  // per-batch flags: one draw per event, never a mixed mask
  StreamSchedule pb = uniform_sched(0.5, 40, 4, 22);
  pb.per_batch = true;
  auto flagged = build_schedule(pb, benign, poison);
  int poisoned_events = 0;
  for (const auto& ev : flagged) {
    const bool uniform_mask =
        ev.poisoned == std::vector<std::uint8_t>(4, 0) ||
        ev.poisoned == std::vector<std::uint8_t>(4, 1);
    CHECK(uniform_mask);
    if (ev.tag == EventTag::kPoisoned) ++poisoned_events;
  }
  CHECK(poisoned_events > 5);
  CHECK(poisoned_events < 35);
}

TEST_CASE("stream: pools are consumed without replacement") {
  const Tensor benign = value_pool(6, 1, 2, 1.0f);
  const Tensor poison = value_pool(6, 1, 2, -1.0f);

  // 6 benign draws succeed and produce 6 distinct rows
  auto ok = build_schedule(uniform_sched(0.0, 6, 1, 2), benign, poison);
  std::vector<float> seen;
  for (const auto& ev : ok) seen.push_back(ev.images.vec()[0]);
  std::sort(seen.begin(), seen.end());
  for (int r = 0; r < 6; ++r) CHECK(seen[static_cast<std::size_t>(r)] == r);

  CHECK_THROWS_AS(build_schedule(uniform_sched(0.0, 7, 1, 2), benign, poison),
                  DependencyError);
  CHECK_THROWS_AS(build_schedule(uniform_sched(1.0, 7, 1, 2), benign, poison),
                  DependencyError);

  // a schedule that needs poisoned samples names the missing cache
  try {
    build_schedule(uniform_sched(0.5, 4), benign, Tensor());
    FAIL("missing poison cache accepted");
  } catch (const DependencyError& e) {
    CHECK(std::string(e.what()).find("poisoned-sample cache") != std::string::npos);
  }
  CHECK_THROWS_AS(build_schedule(uniform_sched(0.0, 4), Tensor(), poison),
                  DependencyError);

  // pool shape disagreement is a contract violation
  const Tensor small = value_pool(6, 1, 3, -1.0f);
  CHECK_THROWS_AS(build_schedule(uniform_sched(0.5, 2, 1, 3), benign, small),
                  ContractError);
}

TEST_CASE("stream: deterministic in the seed") {
  const Tensor benign = value_pool(64, 1, 2, 1.0f);
  const Tensor poison = value_pool(64, 1, 2, -1.0f);

  const auto a = build_schedule(uniform_sched(0.4, 24, 2, 31), benign, poison);
  const auto b = build_schedule(uniform_sched(0.4, 24, 2, 31), benign, poison);
  CHECK(same_events(a, b));

  const auto c = build_schedule(uniform_sched(0.4, 24, 2, 32), benign, poison);
  CHECK(!same_events(a, c));

  // name round trips
  for (auto m : {ScheduleMode::kUniform, ScheduleMode::kWarmBefore,
                 ScheduleMode::kWarmAfter})
    CHECK(schedule_mode_from_name(schedule_mode_name(m)) == m);
  for (auto t : {EventTag::kBenignIid, EventTag::kBenignNonIid,
                 EventTag::kPoisoned})
    CHECK(event_tag_from_name(event_tag_name(t)) == t);
  CHECK_THROWS_AS(schedule_mode_from_name("warm"), ConfigError);
  CHECK_THROWS_AS(event_tag_from_name("clean"), ConfigError);

  StreamSchedule bad = uniform_sched(1.5, 4);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = uniform_sched(0.5, 4, 0);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("harness: checkpoint grid and loss means") {
  CHECK(geometric_checkpoints(0) == std::vector<int>{0});
  CHECK(geometric_checkpoints(1) == std::vector<int>{0, 1});
  CHECK(geometric_checkpoints(7) == std::vector<int>{0, 1, 2, 5, 7});
  CHECK(geometric_checkpoints(100) ==
        std::vector<int>{0, 1, 2, 5, 10, 20, 50, 100});
  CHECK(geometric_checkpoints(30) ==
        std::vector<int>{0, 1, 2, 5, 10, 20, 30});

  RunResult r;
  r.events = {{1, EventTag::kBenignIid, 1.0},
              {2, EventTag::kBenignIid, std::nan("")},
              {3, EventTag::kPoisoned, 2.0},
              {4, EventTag::kPoisoned, 4.0},
              {5, EventTag::kBenignNonIid, 7.0}};
  CHECK(mean_event_loss(r, EventTag::kBenignIid) == doctest::Approx(1.0));
  CHECK(mean_event_loss(r, EventTag::kPoisoned) == doctest::Approx(3.0));
  CHECK(mean_event_loss(r, EventTag::kBenignNonIid) == doctest::Approx(7.0));
  RunResult empty;
  CHECK(std::isnan(mean_event_loss(empty, EventTag::kPoisoned)));
}

TEST_CASE("harness: run wiring, determinism and frozen baseline") {
  SyntheticSpec spec;
  spec.size = 16;
  spec.seed = 811;
  const LabeledDataset train = make_synthetic(spec, 256);
  spec.seed = 812;
  const LabeledDataset eval_set = make_synthetic(spec, 96);
  spec.seed = 813;
  const LabeledDataset pool_src = make_synthetic(spec, 160);

  ArchSpec arch;
  arch.widths = {8, 16};
  Model target(arch, 41);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 64;
  tc.seed = 42;
  train_plain(target, train, tc);

  CorruptionSpec cs;
  cs.kind = CorruptionKind::kGaussNoise;
  cs.severity = 3;
  cs.seed = 7;
  const Tensor benign_pool = apply_corruption(pool_src.images, cs);
  cs.severity = 5;
  cs.kind = CorruptionKind::kGlass;
  const Tensor poison_pool = apply_corruption(pool_src.images, cs, 1000);

  RunConfig rc;
  rc.tta.method = TtaMethod::kTent;
  rc.tta.seed = 51;
  rc.schedule = uniform_sched(0.5, 6, 4, 52);

  // wrong granularity fails before any work
  RunConfig bad = rc;
  bad.schedule.batch = 1;
  CHECK_THROWS_AS(
      run_experiment(target, bad, benign_pool, poison_pool, eval_set),
      ConfigError);
  bad.tta.method = TtaMethod::kTtt;
  bad.schedule.batch = 4;
  CHECK_THROWS_AS(
      run_experiment(target, bad, benign_pool, poison_pool, eval_set),
      ConfigError);

  const RunResult a =
      run_experiment(target, rc, benign_pool, poison_pool, eval_set);
  REQUIRE(a.events.size() == 6);
  // default grid: {0, 1, 2, 5, 6}
  REQUIRE(a.accs.size() == 5);
  CHECK(a.accs.front().t == 0);
  CHECK(a.accs.back().t == 6);
  CHECK(a.baseline_acc == a.accs.front().acc);
  CHECK(a.final_acc == a.accs.back().acc);
  for (const auto& rec : a.accs) {
    CHECK(rec.acc >= 0.0);
    CHECK(rec.acc <= 1.0);
  }
  for (const auto& ev : a.events) {
    CHECK(ev.t >= 1);
    CHECK(std::isfinite(ev.loss));  // entropy loss is always recorded
  }

  // byte-identical rerun; the engine adapts a restored copy, so the target
  // itself must come out untouched between runs
  const RunResult b =
      run_experiment(target, rc, benign_pool, poison_pool, eval_set);
  REQUIRE(b.events.size() == a.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    CHECK(a.events[i].tag == b.events[i].tag);
    CHECK(a.events[i].loss == b.events[i].loss);
  }
  REQUIRE(b.accs.size() == a.accs.size());
  for (std::size_t i = 0; i < a.accs.size(); ++i)
    CHECK(a.accs[i].acc == b.accs[i].acc);

  // checkpoint schedule is observational: a denser grid must not change the
  // adaptation trajectory (evaluation restores engine state)
  RunConfig sparse = rc;
  sparse.acc_checkpoints = {0, 6};
  const RunResult s =
      run_experiment(target, sparse, benign_pool, poison_pool, eval_set);
  REQUIRE(s.accs.size() == 2);
  for (std::size_t i = 0; i < a.events.size(); ++i)
    CHECK(s.events[i].loss == a.events[i].loss);
  CHECK(s.final_acc == a.final_acc);

  // a mark list that stops short of the end still measures the end point
  RunConfig mid = rc;
  mid.acc_checkpoints = {2};
  const RunResult m =
      run_experiment(target, mid, benign_pool, poison_pool, eval_set);
  REQUIRE(m.accs.size() == 2);
  CHECK(m.accs[0].t == 2);
  CHECK(m.accs[1].t == 6);
  CHECK(m.baseline_acc == a.baseline_acc);

  // zero-event stream: the run is exactly the frozen baseline, and for a
  // statistics-only method that equals plain eval-mode accuracy
  RunConfig frozen;
  frozen.tta.method = TtaMethod::kDua;
  frozen.tta.seed = 53;
  frozen.schedule = uniform_sched(0.0, 0, 1, 54);
  const RunResult z =
      run_experiment(target, frozen, benign_pool, poison_pool, eval_set);
  CHECK(z.events.empty());
  REQUIRE(z.accs.size() == 1);
  CHECK(z.baseline_acc == z.final_acc);
  CHECK(z.baseline_acc ==
        eval_accuracy(target, eval_set, NormMode::kEval, 64));

  // stats-only adaptation records NaN losses
  RunConfig dua = frozen;
  dua.schedule = uniform_sched(1.0, 3, 1, 55);
  const RunResult d =
      run_experiment(target, dua, benign_pool, poison_pool, eval_set);
  REQUIRE(d.events.size() == 3);
  for (const auto& ev : d.events) {
    CHECK(ev.tag == EventTag::kPoisoned);
    CHECK(std::isnan(ev.loss));
  }
  CHECK(std::isnan(mean_event_loss(d, EventTag::kPoisoned)));

  // a defended run routes all traffic through the preprocessor and still
  // satisfies every internal instrumentation assert
  RunConfig defended = rc;
  defended.defense.kind = DefenseKind::kBdr;
  defended.defense.bdr_bits = 4;
  const RunResult dd =
      run_experiment(target, defended, benign_pool, poison_pool, eval_set);
  CHECK(dd.events.size() == 6);
}

TEST_CASE("report: run CSV round trip is bit exact") {
  const RunResult r = report_fixture();
  const std::string path = "/tmp/ttalab_test_run.csv";
  write_run_csv(r, path);
  const RunResult p = parse_run_csv(path);

  REQUIRE(p.events.size() == r.events.size());
  for (std::size_t i = 0; i < r.events.size(); ++i) {
    CHECK(p.events[i].t == r.events[i].t);
    CHECK(p.events[i].tag == r.events[i].tag);
    if (std::isnan(r.events[i].loss))
      CHECK(std::isnan(p.events[i].loss));
    else
      CHECK(p.events[i].loss == r.events[i].loss);
  }
  REQUIRE(p.accs.size() == r.accs.size());
  for (std::size_t i = 0; i < r.accs.size(); ++i) {
    CHECK(p.accs[i].t == r.accs[i].t);
    CHECK(p.accs[i].acc == r.accs[i].acc);
  }
  CHECK(p.baseline_acc == r.baseline_acc);
  CHECK(p.final_acc == r.final_acc);

  // row count: header + events + checkpoints
  std::istringstream lines(read_file(path));
  std::string line;
  int rows = 0;
  while (std::getline(lines, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 1 + 4 + 3);

  std::ofstream bad(path, std::ios::binary);
  bad << "schema,row\n";
  bad.close();
  CHECK_THROWS_AS(parse_run_csv(path), VersionError);
  CHECK_THROWS_AS(parse_run_csv("/tmp/ttalab_no_such.csv"), IoError);
}

TEST_CASE("report: summary JSON accounting and golden bytes") {
  const RunResult r = report_fixture();
  const std::map<std::string, std::string> cfg = {
      {"method", "tent"}, {"schedule", "uniform"}, {"seed", "7"}};
  const std::string path = "/tmp/ttalab_test_summary.json";
  write_summary_json(r, cfg, path);

  const auto j = nlohmann::json::parse(read_file(path));
  CHECK(j["schema"] == 1);
  CHECK(j["config"]["method"] == "tent");
  CHECK(j["config"]["seed"] == "7");
  CHECK(j["baseline_acc"] == 0.8125);
  CHECK(j["final_acc"] == 0.4375);
  CHECK(j["checkpoints"].size() == 3);
  CHECK(j["events"]["total"] == 4);
  CHECK(j["events"]["poisoned"] == 2);
  CHECK(j["events"]["benign_iid"] == 1);
  CHECK(j["events"]["benign_non_iid"] == 1);

  // histogram accounting: bins plus the NaN bucket cover every event
  const auto& h = j["loss_histogram"];
  CHECK(h["bins"] == kLossHistBins);
  std::int64_t total = h["nan"].get<std::int64_t>();
  REQUIRE(h["benign"].size() == static_cast<std::size_t>(kLossHistBins + 1));
  REQUIRE(h["poisoned"].size() == static_cast<std::size_t>(kLossHistBins + 1));
  for (const auto& v : h["benign"]) total += v.get<std::int64_t>();
  for (const auto& v : h["poisoned"]) total += v.get<std::int64_t>();
  CHECK(total == 4);
  // 0.5 -> benign bin 2; 1.25e-7 -> benign bin 0; 7.5 -> poisoned overflow
  CHECK(h["benign"][2] == 1);
  CHECK(h["benign"][0] == 1);
  CHECK(h["poisoned"][kLossHistBins] == 1);

  // no wall-clock or host fields: identical runs serialize identically,
  // pinned as a golden byte comparison
  const std::string golden =
      std::string(TTALAB_SOURCE_DIR) + "/tests/golden/summary.json";
  CHECK(read_file(path) == read_file(golden));
}

TEST_CASE("report: feature dump") {
  SyntheticSpec spec;
  spec.size = 16;
  spec.seed = 821;
  const LabeledDataset ds = make_synthetic(spec, 10);
  ArchSpec arch;
  arch.widths = {8, 16};
  Model m(arch, 43);

  const std::string path = "/tmp/ttalab_test_features.csv";
  write_feature_csv(m, ds, path);

  std::istringstream lines(read_file(path));
  std::string line;
  REQUIRE(std::getline(lines, line));
  CHECK(line.rfind("label,f0,", 0) == 0);
  int rows = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    // label column reproduces the dataset label
    CHECK(std::stoi(line.substr(0, line.find(','))) ==
          ds.labels[static_cast<std::size_t>(rows)]);
    ++rows;
  }
  CHECK(rows == 10);
}

TEST_CASE("config: parsing, overrides and typed getters") {
  const std::string text =
      "# experiment\n"
      "schema = 1\n"
      "\n"
      "method = tent\n"
      "events = 100\n"
      "p = 0.25\n"
      "seed = 18446744073709551615\n"
      "augment = true\n";
  KvConfig cfg = KvConfig::parse_text(text, "inline");
  CHECK(cfg.get_str("method", "") == "tent");
  CHECK(cfg.get_int("events", -1) == 100);
  CHECK(cfg.get_double("p", 0.0) == 0.25);
  CHECK(cfg.get_u64("seed", 0) == 18446744073709551615ull);
  CHECK(cfg.get_bool("augment", false));
  CHECK(cfg.get_int("missing", 7) == 7);
  CHECK(cfg.get_bool("missing", false) == false);
  CHECK(!cfg.has("schema"));  // consumed by version validation

  // canonical render reparses to the same values
  KvConfig again = KvConfig::parse_text(cfg.render(), "render");
  CHECK(again.values == cfg.values);

  cfg.apply_override("p=0.5");
  CHECK(cfg.get_double("p", 0.0) == 0.5);
  cfg.apply_override("extra = x");
  CHECK(cfg.get_str("extra", "") == "x");
  CHECK_THROWS_AS(cfg.apply_override("nonsense"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("schema=2"), ConfigError);

  CHECK_THROWS_AS(cfg.get_int("method", 0), ConfigError);
  CHECK_THROWS_AS(cfg.get_double("method", 0.0), ConfigError);
  CHECK_THROWS_AS(cfg.get_bool("method", false), ConfigError);

  CHECK_THROWS_AS(KvConfig::parse_text("method = tent\n", "t"), VersionError);
  CHECK_THROWS_AS(KvConfig::parse_text("schema = 2\n", "t"), VersionError);
  CHECK_THROWS_AS(
      KvConfig::parse_text("schema = 1\nx = 1\nx = 2\n", "t"), ConfigError);
  CHECK_THROWS_AS(KvConfig::parse_text("schema = 1\nnot a pair\n", "t"),
                  ConfigError);
  CHECK_THROWS_AS(KvConfig::parse_file("/tmp/ttalab_no_such.cfg"), IoError);

  const std::string path = "/tmp/ttalab_test.cfg";
  std::ofstream f(path, std::ios::binary);
  f << text;
  f.close();
  KvConfig from_file = KvConfig::parse_file(path);
  CHECK(from_file.values == again.values);
}
