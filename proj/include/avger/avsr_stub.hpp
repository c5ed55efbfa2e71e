#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avger/corpus.hpp"

namespace avger {

/// Ranked hypotheses with log-probability-like scores, best first.
struct NBestList {
  std::vector<std::pair<Transcript, double>> hypotheses;
  bool truncated{false};  // fewer distinct lattice paths than requested

  int size() const { return int(hypotheses.size()); }
  const Transcript& best() const { return hypotheses.front().first; }
};

struct ChannelRates {
  double sub{0}, del{0}, ins{0};
  double word_error_expectation() const { return del + (1.0 - del) * sub + ins; }
};

struct ChannelConfig {
  // Per-word total error rate by condition; decreasing with SNR so the
  // stub's 1-best WER follows the recognizer trend (harsh at -10 dB, a
  // couple percent on clean audio).
  double clean_error_rate{0.02};
  std::map<double, double> snr_error_rates{
      {-10.0, 0.30}, {-5.0, 0.135}, {0.0, 0.05}, {5.0, 0.025}};
  double sub_frac{0.70};
  double del_frac{0.15};
  double ins_frac{0.15};
  /// Probability the true word enters the lattice at a slot where the
  /// 1-best erred.
  double inclusion_rate{0.9};
  /// Alternatives appear per slot with probability ~ scale * error rate.
  double uncertainty_scale{6.0};
  int confusions_per_word{3};
  int nbest{10};
  int beam{16};

  void validate() const;
};

/// Word-level corruption channel over a fixed vocabulary. Pure functions of
/// (input, seed); safe to call concurrently.
class ChannelModel {
 public:
  ChannelModel(ChannelConfig cfg, std::vector<std::string> vocabulary);

  const ChannelConfig& config() const { return cfg_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }

  ChannelRates rates_for(const std::optional<double>& snr_db) const;

  /// Deterministic similar-word candidates (never contains the word itself).
  const std::vector<std::string>& confusions(const std::string& word) const;

  /// Apply word-level substitutions/deletions/insertions; a fully deleted
  /// output is replaced by a single filler token.
  Transcript corrupt(const Transcript& t, const std::optional<double>& snr_db,
                     uint64_t seed) const;

  /// Per-word candidate lattice slot; empty word = epsilon (word absent).
  struct Cand {
    std::string word;
    double logp;
  };
  using Lattice = std::vector<std::vector<Cand>>;

  /// Build the stub's decoding lattice for a sample. Slot 0 candidates are
  /// the 1-best path.
  Lattice build_lattice(const Transcript& truth, const std::optional<double>& snr_db,
                        uint64_t seed) const;

  /// Beam search over a lattice: top-n distinct texts by path score, sorted,
  /// ties broken lexicographically.
  static NBestList nbest_from_lattice(const Lattice& lattice, int n, int beam,
                                      const std::string& filler);

  NBestList nbest_generate(const AVSample& sample, int n, int beam, uint64_t seed) const;
  NBestList nbest_generate(const AVSample& sample, uint64_t seed) const {
    return nbest_generate(sample, cfg_.nbest, cfg_.beam, seed);
  }

  const std::string& filler_word() const { return vocab_.front(); }

 private:
  ChannelConfig cfg_;
  std::vector<std::string> vocab_;
  std::map<std::string, std::vector<std::string>> confusion_table_;
};

/// Hypothesis file: one JSON record per line {id, rank, score, text};
/// ranks contiguous from 1, scores non-increasing per id.
void export_hypotheses(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, NBestList>>& lists);
std::map<std::string, NBestList> import_hypotheses(const std::filesystem::path& path);

}  // namespace avger
