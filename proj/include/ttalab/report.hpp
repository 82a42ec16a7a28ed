#pragma once

#include <map>
#include <string>

#include "ttalab/harness.hpp"

namespace ttalab {

// Fixed loss-histogram binning used by every summary: 30 bins of width 0.2
// covering [0, 6), plus one overflow bin. NaN losses (stats-only methods)
// are counted separately so bin totals plus the NaN count always equal the
// event count.
inline constexpr int kLossHistBins = 30;
inline constexpr double kLossHistWidth = 0.2;

// One row per event plus one row per accuracy checkpoint, schema-versioned.
// Floating-point fields are written with max_digits10 precision so a
// re-parse reproduces the in-memory records bit for bit.
void write_run_csv(const RunResult& r, const std::string& path);
RunResult parse_run_csv(const std::string& path);

// JSON summary: resolved configuration, checkpoint accuracies, event counts,
// and per-tag loss histograms. Deliberately contains no wall-clock or host
// information, so identical runs serialize identically.
void write_summary_json(const RunResult& r,
                        const std::map<std::string, std::string>& resolved_config,
                        const std::string& path);

// Optional embedding-inspection dump: pooled feature vectors of the
// evaluation set under the current model, one CSV row per sample
// (label first, then the feature values).
void write_feature_csv(Model& m, const LabeledDataset& ds, const std::string& path);

}  // namespace ttalab
