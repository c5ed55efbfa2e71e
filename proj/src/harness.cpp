#include "avger/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "avger/common.hpp"
#include "avger/parallel.hpp"

namespace avger {

namespace fs = std::filesystem;

double werr(double baseline_wer, double system_wer, bool round_half_even) {
  if (baseline_wer <= 0) throw std::domain_error("werr: baseline WER must be > 0");
  double raw = 100.0 * (baseline_wer - system_wer) / baseline_wer;
  if (round_half_even) {
    double scaled = raw * 10.0;
    double nearest = std::nearbyint(scaled);  // default FE_TONEAREST: half-even
    return nearest / 10.0;
  }
  // Truncate toward zero at one decimal (Table 2 arithmetic: 13.79 -> 13.7).
  double eps = raw >= 0 ? 1e-9 : -1e-9;
  return std::trunc(raw * 10.0 + eps) / 10.0;
}

namespace {

std::string condition_of(const std::optional<double>& snr) {
  if (!snr) return "clean";
  std::ostringstream os;
  os << *snr;
  return os.str();
}

/// SNR ascending, clean last (Table 1 ordering).
std::vector<std::string> condition_order(const std::vector<ManifestEntry>& entries) {
  std::vector<double> snrs;
  bool has_clean = false;
  for (const auto& e : entries) {
    if (!e.snr_db) {
      has_clean = true;
    } else if (std::find(snrs.begin(), snrs.end(), *e.snr_db) == snrs.end()) {
      snrs.push_back(*e.snr_db);
    }
  }
  std::sort(snrs.begin(), snrs.end());
  std::vector<std::string> order;
  for (double s : snrs) order.push_back(condition_of(s));
  if (has_clean) order.push_back("clean");
  return order;
}

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

const EvalRow* EvalReport::find(const std::string& condition) const {
  for (const auto& r : rows)
    if (r.condition == condition) return &r;
  return nullptr;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "condition      baseline_wer%  system_wer%   werr%\n";
  for (const auto& r : rows) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-14s %13s %12s %7s   (n=%d)\n", r.condition.c_str(),
                  fmt2(r.baseline_wer).c_str(), fmt2(r.system_wer).c_str(),
                  fmt1(r.werr).c_str(), r.utterances);
    os << buf;
  }
  for (const auto& f : flags) os << "# " << f << "\n";
  return os.str();
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "condition,baseline_wer,system_wer,werr,utterances\n";
  for (const auto& r : rows) {
    os << r.condition << "," << fmt2(r.baseline_wer) << "," << fmt2(r.system_wer) << ","
       << fmt1(r.werr) << "," << r.utterances << "\n";
  }
  return os.str();
}

EvalReport evaluate(const Model& model, const fs::path& corpus_dir,
                    const std::vector<ManifestEntry>& split_entries,
                    const std::map<std::string, NBestList>* external_hyps) {
  if (split_entries.empty()) throw std::invalid_argument("evaluate: empty split");

  std::optional<ChannelModel> channel;
  if (!external_hyps) {
    channel.emplace(model.cfg.channel, manifest_vocabulary(split_entries));
  }
  auto weights = model.decoder->materialize();

  struct PerUtt {
    std::string condition;
    int ref_len{0};
    int d_baseline{0};
    int d_system{0};
    EvalDetail detail;
  };

  const int threads = model.cfg.training.threads > 0
                          ? model.cfg.training.threads
                          : int(std::max(1u, std::thread::hardware_concurrency()));
  std::vector<PerUtt> results(split_entries.size());
  parallel_ordered<PerUtt>(
      int(split_entries.size()), threads,
      [&](int i) {
        const ManifestEntry& e = split_entries[size_t(i)];
        AVSample sample = load_sample(corpus_dir, e, model.cfg.corpus);
        NBestList nbest;
        if (external_hyps) {
          auto it = external_hyps->find(e.id);
          if (it == external_hyps->end())
            throw std::runtime_error("evaluate: no hypotheses for id " + e.id);
          nbest = it->second;
        } else {
          nbest = channel->nbest_generate(sample, nbest_seed(model.cfg.seed, e.id));
        }
        Transcript corrected =
            model.correct(weights, sample, nbest, GenMode::greedy(),
                          model.cfg.training.eval_max_new);
        PerUtt r;
        r.condition = condition_of(e.snr_db);
        r.ref_len = int(sample.transcript.words.size());
        r.d_baseline = levenshtein(nbest.best().words, sample.transcript.words);
        r.d_system = levenshtein(corrected.words, sample.transcript.words);
        r.detail = EvalDetail{e.id, r.condition, sample.transcript.text(),
                              nbest.best().text(), corrected.text()};
        return r;
      },
      [&](int i, PerUtt& r) { results[size_t(i)] = std::move(r); });

  struct Acc {
    long ref_len{0}, d_base{0}, d_sys{0};
    int utts{0};
  };
  std::map<std::string, Acc> acc;
  EvalReport report;
  for (auto& r : results) {
    Acc& a = acc[r.condition];
    a.ref_len += r.ref_len;
    a.d_base += r.d_baseline;
    a.d_sys += r.d_system;
    a.utts += 1;
    report.details.push_back(std::move(r.detail));
  }

  for (const std::string& cond : condition_order(split_entries)) {
    auto it = acc.find(cond);
    if (it == acc.end() || it->second.utts == 0 || it->second.ref_len == 0) {
      report.flags.push_back("condition " + cond + " omitted: no utterances");
      continue;
    }
    EvalRow row;
    row.condition = cond;
    row.baseline_wer = 100.0 * double(it->second.d_base) / double(it->second.ref_len);
    row.system_wer = 100.0 * double(it->second.d_sys) / double(it->second.ref_len);
    row.werr = row.baseline_wer > 0
                   ? werr(row.baseline_wer, row.system_wer,
                          model.cfg.harness.werr_round_half_even)
                   : 0.0;
    row.utterances = it->second.utts;
    report.rows.push_back(row);
  }
  return report;
}

namespace {

/// Word-level diff marks via edit-distance backtrace: wrong words appear as
/// *word*, missing words as _.
std::string mark_diffs(const std::string& hyp_text, const std::string& truth_text) {
  std::vector<std::string> hyp = Transcript::from_text(hyp_text).words;
  std::vector<std::string> ref = Transcript::from_text(truth_text).words;
  size_t n = hyp.size(), m = ref.size();
  std::vector<std::vector<int>> dp(n + 1, std::vector<int>(m + 1, 0));
  for (size_t i = 0; i <= n; ++i) dp[i][0] = int(i);
  for (size_t j = 0; j <= m; ++j) dp[0][j] = int(j);
  for (size_t i = 1; i <= n; ++i)
    for (size_t j = 1; j <= m; ++j)
      dp[i][j] = std::min({dp[i - 1][j] + 1, dp[i][j - 1] + 1,
                           dp[i - 1][j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1)});
  std::vector<std::string> out;
  size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] && hyp[i - 1] == ref[j - 1]) {
      out.push_back(hyp[i - 1]);
      --i, --j;
    } else if (i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + 1) {
      out.push_back("*" + hyp[i - 1] + "*");
      --i, --j;
    } else if (i > 0 && dp[i][j] == dp[i - 1][j] + 1) {
      out.push_back("*" + hyp[i - 1] + "*");
      --i;
    } else {
      out.push_back("_");
      --j;
    }
  }
  std::reverse(out.begin(), out.end());
  std::string s;
  for (size_t k = 0; k < out.size(); ++k) {
    if (k) s += ' ';
    s += out[k];
  }
  return s;
}

}  // namespace

std::string emit_case_studies(const EvalReport& report, int k) {
  if (k < 0) throw std::invalid_argument("case studies: k >= 0");
  std::ostringstream os;
  if (k == 0) return "";
  std::vector<std::string> conds;
  for (const auto& r : report.rows) conds.push_back(r.condition);
  for (const std::string& cond : conds) {
    int emitted = 0;
    for (const auto& d : report.details) {
      if (d.condition != cond) continue;
      if (emitted >= k) break;
      os << "id: " << d.id << "  (snr " << cond << ")\n";
      os << "  ground truth: " << d.truth << "\n";
      os << "  avsr 1-best : " << mark_diffs(d.onebest, d.truth) << "\n";
      os << "  corrected   : " << mark_diffs(d.corrected, d.truth) << "\n";
      ++emitted;
    }
  }
  return os.str();
}

std::vector<AblationSpec> table2_specs() {
  std::vector<AblationSpec> specs;
  auto mk = [](int id, bool seg, bool sp, bool lip, bool cmd, bool wer) {
    return AblationSpec{id, AblationFlags{seg, sp, lip, cmd, wer}};
  };
  specs.push_back(mk(1, true, true, true, true, true));
  specs.push_back(mk(2, true, true, true, true, false));
  specs.push_back(mk(3, true, true, true, false, true));
  specs.push_back(mk(4, true, true, true, false, false));
  specs.push_back(mk(5, true, true, false, true, true));
  specs.push_back(mk(6, true, false, true, true, true));
  specs.push_back(mk(7, false, true, true, true, true));
  return specs;
}

namespace {

std::vector<ManifestEntry> split_of(const std::vector<ManifestEntry>& entries,
                                    const std::string& split) {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(e);
  return out;
}

/// Wiring assertions for one trained ablation model.
bool check_wiring(const Model& model, const fs::path& corpus_dir,
                  const std::vector<ManifestEntry>& entries,
                  const std::vector<StepLog>& finetune_log) {
  const AblationFlags& f = model.cfg.ablation;
  // Disabled losses leave their logged fields at exactly zero.
  for (const StepLog& s : finetune_log) {
    if (!f.l_cmd && s.cmd != 0.0) return false;
    if (!f.l_wer && s.wer != 0.0) return false;
    if (std::abs(s.total - (s.cmd + s.wer + s.ce)) > 1e-12) return false;
  }
  // Disabled modalities leave no embedding span; no segmentation means K=1.
  AVSample sample = load_sample(corpus_dir, entries.front(), model.cfg.corpus);
  nn::Tape tape(false);
  auto reps = model.encoder->encode_sync(tape, sample, f);
  if (!f.segment && reps.K != 1) return false;
  if (f.speech != reps.speech.has_value()) return false;
  if (f.lip != reps.lip.has_value()) return false;
  ChannelModel channel(model.cfg.channel, manifest_vocabulary(entries));
  NBestList nb = channel.nbest_generate(sample, nbest_seed(model.cfg.seed, sample.id));
  PromptEmbedding pe = model.layout_for(nb, reps.K);
  int span = reps.K * model.cfg.encoder.n_q;
  if (pe.speech_len != (f.speech ? span : 0)) return false;
  if (pe.video_len != (f.lip ? span : 0)) return false;
  return true;
}

}  // namespace

AblationReport run_ablation(const Config& base, const fs::path& corpus_dir,
                            const std::vector<AblationSpec>& specs,
                            const fs::path& out_dir) {
  auto entries = load_manifest(corpus_dir / "manifest.jsonl");
  auto eval_entries = split_of(entries, base.harness.eval_split);

  AblationReport report;
  bool have_baseline = false;

  for (const AblationSpec& spec : specs) {
    Config cfg = base;
    cfg.ablation = spec.flags;
    fs::path run_dir = out_dir / ("ablation_" + std::to_string(spec.id));
    TrainLogs logs;
    auto model = run_training(cfg, corpus_dir, run_dir, &logs);
    EvalReport er = evaluate(*model, corpus_dir, eval_entries, nullptr);
    const EvalRow* clean = er.find("clean");
    if (!clean) throw std::runtime_error("ablation: no clean condition in eval split");
    if (!have_baseline) {
      report.baseline_wer = clean->baseline_wer;
      have_baseline = true;
    }
    AblationRow row;
    row.id = spec.id;
    row.flags = spec.flags;
    row.wer = clean->system_wer;
    row.werr = werr(clean->baseline_wer, clean->system_wer,
                    base.harness.werr_round_half_even);
    row.wiring_ok = check_wiring(*model, corpus_dir, eval_entries, logs.finetune);
    report.rows.push_back(row);
  }
  return report;
}

std::string AblationReport::to_text() const {
  std::ostringstream os;
  os << "id  segment speech lip    l_cmd  l_wer  wer%    werr%  wiring\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "#0  -       -      -      -      -      %-7s %-6s ok\n",
                fmt2(baseline_wer).c_str(), "0.0");
  os << buf;
  for (const auto& r : rows) {
    auto b = [](bool v) { return v ? "yes" : "no"; };
    std::snprintf(buf, sizeof buf, "#%-2d %-7s %-6s %-6s %-6s %-6s %-7s %-6s %s\n", r.id,
                  b(r.flags.segment), b(r.flags.speech), b(r.flags.lip), b(r.flags.l_cmd),
                  b(r.flags.l_wer), fmt2(r.wer).c_str(), fmt1(r.werr).c_str(),
                  r.wiring_ok ? "ok" : "FAIL");
    os << buf;
  }
  return os.str();
}

std::string AblationReport::to_csv() const {
  std::ostringstream os;
  os << "id,segment,speech,lip,l_cmd,l_wer,wer,werr,wiring_ok\n";
  os << "0,,,,,," << fmt2(baseline_wer) << ",0.0,1\n";
  for (const auto& r : rows) {
    os << r.id << "," << r.flags.segment << "," << r.flags.speech << "," << r.flags.lip
       << "," << r.flags.l_cmd << "," << r.flags.l_wer << "," << fmt2(r.wer) << ","
       << fmt1(r.werr) << "," << (r.wiring_ok ? 1 : 0) << "\n";
  }
  return os.str();
}

SweepReport run_sweep(const Config& base, const fs::path& corpus_dir,
                      const std::string& axis, const fs::path& out_dir) {
  std::vector<int> values;
  if (axis == "nbest") {
    values = {5, 8, 10};
  } else if (axis == "qtokens") {
    values = {10, 15, 20};
  } else {
    throw std::invalid_argument("sweep: axis must be 'nbest' or 'qtokens'");
  }
  auto entries = load_manifest(corpus_dir / "manifest.jsonl");
  auto eval_entries = split_of(entries, base.harness.eval_split);

  SweepReport report;
  report.axis = axis;
  bool have_baseline = false;
  for (int v : values) {
    Config cfg = base;
    if (axis == "nbest") {
      cfg.channel.nbest = v;
      cfg.channel.beam = std::max(cfg.channel.beam, v);
    } else {
      cfg.encoder.n_q = v;
    }
    fs::path run_dir = out_dir / ("sweep_" + axis + "_" + std::to_string(v));
    auto model = run_training(cfg, corpus_dir, run_dir, nullptr);
    EvalReport er = evaluate(*model, corpus_dir, eval_entries, nullptr);
    const EvalRow* clean = er.find("clean");
    if (!clean) throw std::runtime_error("sweep: no clean condition in eval split");
    if (!have_baseline) {
      report.baseline_wer = clean->baseline_wer;
      have_baseline = true;
    }
    report.rows.push_back(SweepRow{
        v, clean->system_wer,
        werr(clean->baseline_wer, clean->system_wer, base.harness.werr_round_half_even)});
  }
  return report;
}

std::string SweepReport::to_text() const {
  std::ostringstream os;
  os << axis << "  wer%    werr%   (baseline " << fmt2(baseline_wer) << ")\n";
  for (const auto& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-6d %-7s %-6s\n", r.value, fmt2(r.wer).c_str(),
                  fmt1(r.werr).c_str());
    os << buf;
  }
  return os.str();
}

std::string SweepReport::to_csv() const {
  std::ostringstream os;
  os << "value,wer,werr\n";
  for (const auto& r : rows)
    os << r.value << "," << fmt2(r.wer) << "," << fmt1(r.werr) << "\n";
  return os.str();
}

}  // namespace avger
