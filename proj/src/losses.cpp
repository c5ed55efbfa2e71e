#include "avger/losses.hpp"

#include <algorithm>
#include <stdexcept>

namespace avger {

using nn::Mat;
using nn::Tape;
using nn::Value;

int levenshtein(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = int(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = int(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double levenshtein_wer(const Transcript& hyp, const Transcript& ref) {
  if (ref.words.empty()) throw std::domain_error("levenshtein_wer: empty reference");
  return double(levenshtein(hyp.words, ref.words)) / double(ref.words.size());
}

std::vector<int> cmd_orders(int order_max, bool literal) {
  if (order_max < 2) throw std::invalid_argument("cmd: order_max must be >= 2");
  std::vector<int> orders;
  for (int k = literal ? 5 : 2; k <= order_max; ++k) orders.push_back(k);
  return orders;
}

Value cmd(Tape& t, Value a, Value b, const std::vector<int>& orders) {
  if (a.rows() == 0 || b.rows() == 0) throw std::domain_error("cmd: empty input");
  if (a.cols() != b.cols()) throw std::invalid_argument("cmd: dimension mismatch");

  // Joint per-coordinate rescale to [0,1]; constant coordinates map to 0.
  Value joint = t.concat_rows({a, b});
  Value lo = t.colwise_min(joint);
  Value range = t.cwise_max_scalar(t.sub(t.colwise_max(joint), lo), 1e-12);
  Value na = t.div_rowvec(t.sub_rowvec(a, lo), range);
  Value nb = t.div_rowvec(t.sub_rowvec(b, lo), range);

  Value mean_a = t.colwise_mean(na);
  Value mean_b = t.colwise_mean(nb);
  Value total = t.l2_norm(t.sub(mean_a, mean_b));
  Value ca = t.sub_rowvec(na, mean_a);
  Value cb = t.sub_rowvec(nb, mean_b);
  for (int k : orders) {
    Value ma = t.colwise_mean(t.cwise_pow(ca, k));
    Value mb = t.colwise_mean(t.cwise_pow(cb, k));
    total = t.add(total, t.l2_norm(t.sub(ma, mb)));
  }
  return total;
}

Value cmd(Tape& t, Value a, Value b, int order_max) {
  return cmd(t, a, b, cmd_orders(order_max, false));
}

double cmd(const Mat& a, const Mat& b, int order_max) {
  Tape t(false);
  return cmd(t, t.constant(a), t.constant(b), order_max).val()(0, 0);
}

CmdLoss cmd_loss(Tape& t, std::optional<Value> rep_speech, std::optional<Value> rep_lip,
                 std::optional<Value> rep_text, const std::vector<int>& orders) {
  std::vector<std::pair<Value, Value>> pairs;
  if (rep_speech && rep_lip) pairs.emplace_back(*rep_speech, *rep_lip);
  if (rep_speech && rep_text) pairs.emplace_back(*rep_speech, *rep_text);
  if (rep_lip && rep_text) pairs.emplace_back(*rep_lip, *rep_text);
  CmdLoss out;
  out.pair_count = int(pairs.size());
  if (pairs.empty()) return out;
  Value total;
  for (auto& [x, y] : pairs) {
    Value d = cmd(t, x, y, orders);
    total = total.valid() ? t.add(total, d) : d;
  }
  out.loss = t.scale(total, 1.0 / double(pairs.size()));
  return out;
}

Value ce_loss(Tape& t, Value logits, const std::vector<int>& targets,
              const std::vector<bool>* mask) {
  if (Eigen::Index(targets.size()) != logits.rows())
    throw std::invalid_argument("ce_loss: one target per logits row required");
  int count = int(targets.size());
  if (mask) {
    if (mask->size() != targets.size())
      throw std::invalid_argument("ce_loss: mask size mismatch");
    count = int(std::count(mask->begin(), mask->end(), true));
    if (count == 0) throw std::domain_error("ce_loss: empty label mask");
  }
  if (count == 0) throw std::domain_error("ce_loss: no targets");
  Value lsm = t.log_softmax_rows(logits);
  Value picked = t.gather_cols(lsm, targets);
  if (mask) {
    Mat m(Eigen::Index(mask->size()), 1);
    for (size_t i = 0; i < mask->size(); ++i) m(Eigen::Index(i), 0) = (*mask)[i] ? 1.0 : 0.0;
    picked = t.cmul(picked, t.constant(std::move(m)));
  }
  return t.scale(t.sum(picked), -1.0 / double(count));
}

Value sequence_logprob(Tape& t, Value branch_logits, const std::vector<int>& tokens,
                       bool ended_eos, int eos_id) {
  Eigen::Index need = Eigen::Index(tokens.size()) + (ended_eos ? 1 : 0);
  if (branch_logits.rows() < need)
    throw std::invalid_argument("sequence_logprob: logits shorter than sequence");
  if (need == 0) return t.zeros(1, 1);
  std::vector<int> ids(tokens);
  if (ended_eos) ids.push_back(eos_id);
  Value rows = t.slice_rows(branch_logits, 0, need);
  Value lsm = t.log_softmax_rows(rows);
  return t.sum(t.gather_cols(lsm, ids));
}

Value mrt_weighted_wer(Tape& t, const std::vector<Value>& logps,
                       const std::vector<double>& wers, double temperature) {
  if (logps.empty() || logps.size() != wers.size())
    throw std::invalid_argument("mrt: need matching non-empty logps/wers");
  if (temperature <= 0) throw std::invalid_argument("mrt: temperature > 0");
  Value stacked = logps.size() == 1 ? logps[0] : t.concat_cols(logps);
  Value weights = t.softmax_rows(t.scale(stacked, 1.0 / temperature));
  Mat costs(1, Eigen::Index(wers.size()));
  for (size_t i = 0; i < wers.size(); ++i) costs(0, Eigen::Index(i)) = wers[i];
  return t.sum(t.cmul(weights, t.constant(std::move(costs))));
}

}  // namespace avger
