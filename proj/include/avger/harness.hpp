#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avger/model.hpp"
#include "avger/training.hpp"

namespace avger {

/// Relative WER reduction in percent: 100*(baseline-system)/baseline,
/// reported to one decimal, truncated toward zero by default.
double werr(double baseline_wer, double system_wer, bool round_half_even = false);

struct EvalRow {
  std::string condition;  // "-10", "-5", "0", "5", "clean"
  double baseline_wer{0};
  double system_wer{0};
  double werr{0};
  int utterances{0};
};

struct EvalDetail {
  std::string id;
  std::string condition;
  std::string truth;
  std::string onebest;
  std::string corrected;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // SNR ascending, clean last
  std::vector<EvalDetail> details;
  std::vector<std::string> flags;  // e.g. conditions omitted for lack of data

  std::string to_text() const;
  std::string to_csv() const;
  const EvalRow* find(const std::string& condition) const;
};

/// Corpus-level WER per condition; baseline column is the N-best 1-best,
/// system column is greedy decoding of the corrector.
EvalReport evaluate(const Model& model, const std::filesystem::path& corpus_dir,
                    const std::vector<ManifestEntry>& split_entries,
                    const std::map<std::string, NBestList>* external_hyps);

/// Case-study table: up to k utterances per condition with word diffs
/// against the ground truth marked (*word* for wrong words, _ for holes).
std::string emit_case_studies(const EvalReport& report, int k);

struct AblationSpec {
  int id{0};
  AblationFlags flags;
};
/// Table-2 rows #1..#7.
std::vector<AblationSpec> table2_specs();

struct AblationRow {
  int id;
  AblationFlags flags;
  double wer{0};
  double werr{0};
  bool wiring_ok{false};
};

struct AblationReport {
  double baseline_wer{0};  // row #0: the stub itself
  std::vector<AblationRow> rows;
  std::string to_text() const;
  std::string to_csv() const;
};

/// Train and evaluate one model per spec on the clean condition, asserting
/// that disabled components contribute nothing.
AblationReport run_ablation(const Config& base, const std::filesystem::path& corpus_dir,
                            const std::vector<AblationSpec>& specs,
                            const std::filesystem::path& out_dir);

struct SweepRow {
  int value;
  double wer{0};
  double werr{0};
};

struct SweepReport {
  std::string axis;  // "nbest" | "qtokens"
  double baseline_wer{0};
  std::vector<SweepRow> rows;
  std::string to_text() const;
  std::string to_csv() const;
};

/// Table-3 style sweep: axis "nbest" over {5,8,10} or "qtokens" over
/// {10,15,20}; one train+eval per value on the clean condition.
SweepReport run_sweep(const Config& base, const std::filesystem::path& corpus_dir,
                      const std::string& axis, const std::filesystem::path& out_dir);

}  // namespace avger
