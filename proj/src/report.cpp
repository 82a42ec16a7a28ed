#include "ttalab/report.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

namespace ttalab {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& path) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw IoError("csv: bad number '" + s + "' in " + path);
  return v;
}

}  // namespace

void write_run_csv(const RunResult& r, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("csv: cannot open for writing: " + path);
  f << "schema,row,t,tag,loss,acc\n";
  for (const auto& e : r.events)
    f << "1,event," << e.t << ',' << event_tag_name(e.tag) << ','
      << fmt_double(e.loss) << ",\n";
  for (const auto& a : r.accs)
    f << "1,checkpoint," << a.t << ",,," << fmt_double(a.acc) << '\n';
  if (!f) throw IoError("csv: write failed: " + path);
}

RunResult parse_run_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("csv: cannot open: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "schema,row,t,tag,loss,acc")
    throw VersionError("csv: unrecognized header in " + path);

  RunResult r;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cols = split_csv_line(line);
    if (cols.size() != 6) throw IoError("csv: malformed row in " + path);
    if (cols[0] != "1") throw VersionError("csv: unsupported schema in " + path);
    const int t = static_cast<int>(parse_double(cols[2], path));
    if (cols[1] == "event") {
      r.events.push_back({t, event_tag_from_name(cols[3]), parse_double(cols[4], path)});
    } else if (cols[1] == "checkpoint") {
      r.accs.push_back({t, parse_double(cols[5], path)});
    } else {
      throw IoError("csv: unknown row kind '" + cols[1] + "' in " + path);
    }
  }
  if (!r.accs.empty()) {
    if (r.accs.front().t == 0) r.baseline_acc = r.accs.front().acc;
    r.final_acc = r.accs.back().acc;
  }
  return r;
}

void write_summary_json(const RunResult& r,
                        const std::map<std::string, std::string>& resolved_config,
                        const std::string& path) {
  using nlohmann::json;

  std::vector<std::int64_t> benign_bins(kLossHistBins + 1, 0);
  std::vector<std::int64_t> poisoned_bins(kLossHistBins + 1, 0);
  std::int64_t nan_losses = 0;
  int poisoned = 0, benign_iid = 0, benign_non_iid = 0;
  for (const auto& e : r.events) {
    switch (e.tag) {
      case EventTag::kPoisoned: ++poisoned; break;
      case EventTag::kBenignIid: ++benign_iid; break;
      case EventTag::kBenignNonIid: ++benign_non_iid; break;
    }
    if (std::isnan(e.loss)) {
      ++nan_losses;
      continue;
    }
    int bin = e.loss < 0.0 ? 0 : static_cast<int>(e.loss / kLossHistWidth);
    if (bin > kLossHistBins) bin = kLossHistBins;  // overflow bucket
    auto& bins = e.tag == EventTag::kPoisoned ? poisoned_bins : benign_bins;
    ++bins[static_cast<std::size_t>(bin)];
  }

  json j;
  j["schema"] = 1;
  j["config"] = resolved_config;
  j["baseline_acc"] = r.baseline_acc;
  j["final_acc"] = r.final_acc;
  json marks = json::array();
  for (const auto& a : r.accs) marks.push_back({{"t", a.t}, {"acc", a.acc}});
  j["checkpoints"] = marks;
  j["events"] = {{"total", r.events.size()},
                 {"poisoned", poisoned},
                 {"benign_iid", benign_iid},
                 {"benign_non_iid", benign_non_iid}};
  j["loss_histogram"] = {{"lo", 0.0},
                         {"bin_width", kLossHistWidth},
                         {"bins", kLossHistBins},
                         {"benign", benign_bins},
                         {"poisoned", poisoned_bins},
                         {"nan", nan_losses}};

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("summary: cannot open for writing: " + path);
  f << j.dump(2) << '\n';
  if (!f) throw IoError("summary: write failed: " + path);
}

void write_feature_csv(Model& m, const LabeledDataset& ds, const std::string& path) {
  check(ds.size() > 0, "features: empty dataset");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("features: cannot open for writing: " + path);

  bool wrote_header = false;
  const int batch = 64;
  for (int s = 0; s < ds.size(); s += batch) {
    std::vector<int> idx;
    for (int i = s; i < std::min(ds.size(), s + batch); ++i) idx.push_back(i);
    LabeledDataset mb = subset(ds, idx);
    Tensor feats = m.forward_features(nullptr, mb.images, NormMode::kEval);
    const int F = feats.dim(1);
    if (!wrote_header) {
      f << "label";
      for (int k = 0; k < F; ++k) f << ",f" << k;
      f << '\n';
      wrote_header = true;
    }
    for (int n = 0; n < feats.dim(0); ++n) {
      f << mb.labels[static_cast<std::size_t>(n)];
      for (int k = 0; k < F; ++k)
        f << ',' << fmt_double(static_cast<double>(
                      feats.vec()[static_cast<std::size_t>(n) * F + k]));
      f << '\n';
    }
  }
  if (!f) throw IoError("features: write failed: " + path);
}

}  // namespace ttalab
