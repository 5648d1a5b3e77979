#pragma once

// Ablation suites: skip count, skip fusion mode and decoder count.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "dualswin/train.hpp"

namespace dualswin {

struct AblationVariant {
  std::string suite;  // skips | fusion | decoder
  std::string label;  // row label within the suite
  Config config;
};

/// Variants for `suite` (skips, fusion, decoder or all) derived from `base`.
/// Every variant otherwise keeps the base config and training budget.
inline std::vector<AblationVariant> ablation_variants(const Config& base, const std::string& suite) {
  if (suite != "skips" && suite != "fusion" && suite != "decoder" && suite != "all") {
    throw ConfigError("unknown ablation suite '" + suite + "' (expected skips, fusion, decoder or all)");
  }
  std::vector<AblationVariant> out;
  const bool all = suite == "all";
  if (all || suite == "skips") {
    for (int n = 0; n <= base.model.max_skip_connections(); ++n) {
      Config c = base;
      c.model.skip_connection_count = n;
      out.push_back({"skips", std::to_string(n), c});
    }
  }
  if (all || suite == "fusion") {
    for (SkipFusion mode : {SkipFusion::concatenate, SkipFusion::additive}) {
      Config c = base;
      c.model.skip_fusion_mode = mode;
      out.push_back({"fusion", mode == SkipFusion::concatenate ? "concatenate" : "additive", c});
    }
  }
  if (all || suite == "decoder") {
    for (bool dual : {true, false}) {
      Config c = base;
      c.model.dual_decoder = dual;
      out.push_back({"decoder", dual ? "dual" : "single", c});
    }
  }
  return out;
}

struct AblationRow {
  std::string suite, label;
  bool ok = false;
  // PTMC decoder on the validation split
  double jaccard = std::nan(""), dice = std::nan("");
  // thyroid decoder; NaN for the single-decoder variant
  double jaccard_thyroid = std::nan(""), dice_thyroid = std::nan("");
  double seconds = 0;
  std::string error;
};

inline void write_ablation_header(std::ostream& os) {
  os << "suite,variant,jaccard,dice,jaccard_thyroid,dice_thyroid,seconds,status,error\n";
}

inline void write_ablation_row(std::ostream& os, const AblationRow& r) {
  std::string err = r.error;
  for (char& c : err)
    if (c == ',' || c == '\n') c = ';';
  os << r.suite << ',' << r.label << ',' << r.jaccard << ',' << r.dice << ',' << r.jaccard_thyroid << ','
     << r.dice_thyroid << ',' << r.seconds << ',' << (r.ok ? "ok" : "failed") << ',' << err << '\n';
}

/// Trains one variant on `split.train` for its configured epochs and scores
/// the final weights on `split.val`.
inline AblationRow run_ablation_variant(const AblationVariant& v, const std::vector<Sample>& samples,
                                        const DatasetSplit& split, const std::filesystem::path& dir,
                                        std::ostream* log = nullptr) {
  AblationRow row{v.suite, v.label};
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (split.val.empty()) throw DataError("ablation needs a non-empty validation split");
    Trainer<float> trainer(v.config);
    trainer.fit(samples, split, {dir});
    const EpochRecord r = trainer.validate_on(samples, split.val);
    row.jaccard = r.val_jaccard_ptmc;
    row.dice = r.val_dice_ptmc;
    row.jaccard_thyroid = r.val_jaccard_thy;
    row.dice_thyroid = r.val_dice_thy;
    row.ok = true;
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (log) {
    *log << v.suite << '=' << v.label << ": "
         << (row.ok ? "dice " + std::to_string(row.dice) : "failed: " + row.error) << '\n';
  }
  return row;
}

/// Runs every variant in its own subdirectory of `out_dir` and rewrites
/// ablation.csv after each one, so a failure never drops earlier rows.
inline std::vector<AblationRow> run_ablation(const std::vector<AblationVariant>& variants,
                                             const std::vector<Sample>& samples, const DatasetSplit& split,
                                             const std::filesystem::path& out_dir, std::ostream* log = nullptr) {
  std::filesystem::create_directories(out_dir);
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    rows.push_back(run_ablation_variant(v, samples, split, out_dir / (v.suite + "_" + v.label), log));
    std::ofstream csv(out_dir / "ablation.csv", std::ios::trunc);
    write_ablation_header(csv);
    for (const auto& r : rows) write_ablation_row(csv, r);
    if (!csv) throw DataError("failed writing " + (out_dir / "ablation.csv").string());
  }
  return rows;
}

}  // namespace dualswin
