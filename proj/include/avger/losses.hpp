#pragma once

#include <optional>
#include <string>
#include <vector>

#include "avger/autograd.hpp"
#include "avger/corpus.hpp"

namespace avger {

/// Word-level edit distance, unit costs, iterative DP.
int levenshtein(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// Edit distance divided by reference length. Throws std::domain_error for an
/// empty reference; the hypothesis may be empty.
double levenshtein_wer(const Transcript& hyp, const Transcript& ref);

/// Central moment orders used by the CMD term. The standard reading is
/// 2..order_max; the literal-summation escape hatch uses 5..order_max.
std::vector<int> cmd_orders(int order_max, bool literal);

/// Central moment discrepancy between two vector sequences (rows = samples).
/// Both are first rescaled to [0,1] per coordinate using their joint min/max,
/// then mean and central-moment differences are accumulated:
///   ||E(a)-E(b)||_2 + sum_k ||C_k(a)-C_k(b)||_2.
nn::Value cmd(nn::Tape& t, nn::Value a, nn::Value b, const std::vector<int>& orders);
nn::Value cmd(nn::Tape& t, nn::Value a, nn::Value b, int order_max);
double cmd(const nn::Mat& a, const nn::Mat& b, int order_max);

struct CmdLoss {
  std::optional<nn::Value> loss;  // empty when no pairs are available
  int pair_count{0};
};

/// Mean of cmd over the available pairs among {(S,L), (S,Y*), (L,Y*)}.
CmdLoss cmd_loss(nn::Tape& t, std::optional<nn::Value> rep_speech,
                 std::optional<nn::Value> rep_lip, std::optional<nn::Value> rep_text,
                 const std::vector<int>& orders);

/// Teacher-forced NLL over target rows of `logits`, normalized by target
/// count. Row i of logits predicts targets[i]. With a mask, only masked rows
/// contribute; an all-false mask is a domain error.
nn::Value ce_loss(nn::Tape& t, nn::Value logits, const std::vector<int>& targets,
                  const std::vector<bool>* mask = nullptr);

/// Sum of token log-probs of a sampled continuation under branch logits
/// (layout as produced by Decoder::forward_branches). Includes the eos factor
/// only when the sequence actually terminated with eos.
nn::Value sequence_logprob(nn::Tape& t, nn::Value branch_logits,
                           const std::vector<int>& tokens, bool ended_eos, int eos_id);

/// Minimum-risk objective: weights = softmax_i(logp_i / temperature), loss =
/// sum_i w_i * wer_i. Gradients flow through the sequence log-probabilities.
nn::Value mrt_weighted_wer(nn::Tape& t, const std::vector<nn::Value>& logps,
                           const std::vector<double>& wers, double temperature);

}  // namespace avger
