#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "avger/decoder.hpp"
#include "avger/losses.hpp"
#include "test_util.hpp"

using namespace avger;
using namespace avger::test;
using nn::GradBuffer;
using nn::Mat;
using nn::Tape;
using nn::Value;

// ---------------------------------------------------------------------------
// Test-side oracles, independent of the implementation paths they check.

namespace {

/// Memoized recursive edit distance (top-down, vs the iterative DP).
int lev_recursive(const std::vector<std::string>& a, const std::vector<std::string>& b,
                  size_t i, size_t j, std::map<std::pair<size_t, size_t>, int>& memo) {
  if (i == 0) return int(j);
  if (j == 0) return int(i);
  auto key = std::make_pair(i, j);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  int del = lev_recursive(a, b, i - 1, j, memo) + 1;
  int ins = lev_recursive(a, b, i, j - 1, memo) + 1;
  int sub = lev_recursive(a, b, i - 1, j - 1, memo) + (a[i - 1] == b[j - 1] ? 0 : 1);
  int best = std::min({del, ins, sub});
  memo[key] = best;
  return best;
}

int lev_oracle(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::map<std::pair<size_t, size_t>, int> memo;
  return lev_recursive(a, b, a.size(), b.size(), memo);
}

/// Brute-force CMD: plain loops, joint [0,1] rescale, mean + central moments.
double cmd_oracle(const Mat& a, const Mat& b, int order_max) {
  Eigen::Index d = a.cols();
  Mat na = a, nb = b;
  for (Eigen::Index j = 0; j < d; ++j) {
    double lo = std::min(a.col(j).minCoeff(), b.col(j).minCoeff());
    double hi = std::max(a.col(j).maxCoeff(), b.col(j).maxCoeff());
    double range = std::max(hi - lo, 1e-12);
    for (Eigen::Index i = 0; i < a.rows(); ++i) na(i, j) = (a(i, j) - lo) / range;
    for (Eigen::Index i = 0; i < b.rows(); ++i) nb(i, j) = (b(i, j) - lo) / range;
  }
  auto col_mean = [](const Mat& m, Eigen::Index j) {
    double s = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) s += m(i, j);
    return s / double(m.rows());
  };
  double total = 0;
  {
    double sq = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      double diff = col_mean(na, j) - col_mean(nb, j);
      sq += diff * diff;
    }
    total += std::sqrt(sq);
  }
  for (int k = 2; k <= order_max; ++k) {
    double sq = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      double ma = col_mean(na, j), mb = col_mean(nb, j);
      double ca = 0, cb = 0;
      for (Eigen::Index i = 0; i < na.rows(); ++i) ca += std::pow(na(i, j) - ma, k);
      for (Eigen::Index i = 0; i < nb.rows(); ++i) cb += std::pow(nb(i, j) - mb, k);
      ca /= double(na.rows());
      cb /= double(nb.rows());
      sq += (ca - cb) * (ca - cb);
    }
    total += std::sqrt(sq);
  }
  return total;
}

Transcript tw(std::initializer_list<const char*> words) {
  Transcript t;
  for (const char* w : words) t.words.emplace_back(w);
  return t;
}

}  // namespace

TEST_CASE("word error rate basics") {
  CHECK(levenshtein_wer(tw({"we", "have"}), tw({"we", "have"})) == 0.0);
  // appendix case #2: two spurious words plus one missing word, reference 9 long
  Transcript hyp = Transcript::from_text("i mean we have problems we desperately need to solve");
  Transcript ref = Transcript::from_text("we have problems that we desperately need to solve");
  CHECK(levenshtein(hyp.words, ref.words) == 3);
  CHECK(levenshtein_wer(hyp, ref) == doctest::Approx(3.0 / 9.0));
  // one word dropped from a 4-word reference
  CHECK(levenshtein_wer(tw({"not", "a", "one"}), tw({"not", "a", "single", "one"})) ==
        doctest::Approx(0.25));
  CHECK_THROWS_AS(levenshtein_wer(tw({"we"}), Transcript{}), std::domain_error);
}

TEST_CASE("DP distance equals the recursive oracle on short sequences") {
  const std::vector<std::string> alpha = {"a", "b", "c"};
  // all sequences of length <= 4 over a 3-word alphabet
  std::vector<std::vector<std::string>> seqs{{}};
  size_t begin = 0;
  for (int len = 1; len <= 4; ++len) {
    size_t end = seqs.size();
    for (size_t i = begin; i < end; ++i)
      for (const auto& w : alpha) {
        auto s = seqs[i];
        s.push_back(w);
        seqs.push_back(std::move(s));
      }
    begin = end;
  }
  for (const auto& a : seqs)
    for (const auto& b : seqs) CHECK(levenshtein(a, b) == lev_oracle(a, b));
}

TEST_CASE("cmd is zero on identical inputs and on moment-equal inputs") {
  Mat a = random_mat(20, 5, 1);
  CHECK(cmd(a, a, 5) == 0.0);
  // per-coordinate moments match even though the joint point sets differ
  Mat x(2, 2), y(2, 2);
  x << 0, 0, 1, 1;
  y << 0, 1, 1, 0;
  CHECK(cmd(x, y, 2) == doctest::Approx(0.0).epsilon(1e-12));
  // a genuinely different marginal does register
  Mat z(2, 2);
  z << 0.2, 0, 1, 1;
  CHECK(cmd(x, z, 2) > 0.0);
}

TEST_CASE("cmd matches the brute-force oracle to 1e-9") {
  for (int trial = 0; trial < 10; ++trial) {
    Mat a = random_mat(50, 8, uint64_t(100 + trial));
    Mat b = random_mat(50, 8, uint64_t(200 + trial)).array() * 1.3 + 0.2;
    double got = cmd(a, b, 5);
    double want = cmd_oracle(a, b, 5);
    CHECK(std::abs(got - want) < 1e-9);
  }
}

TEST_CASE("cmd is a pseudo-metric: symmetric and non-negative") {
  Mat a = random_mat(14, 4, 7), b = random_mat(9, 4, 8);
  double ab = cmd(a, b, 5), ba = cmd(b, a, 5);
  CHECK(ab >= 0.0);
  CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
  Tape t;
  CHECK_THROWS_AS(cmd(t, t.constant(Mat(0, 4)), t.constant(b), 5), std::domain_error);
}

TEST_CASE("literal order reading (5..K) is available") {
  CHECK(cmd_orders(5, false) == std::vector<int>{2, 3, 4, 5});
  CHECK(cmd_orders(5, true) == std::vector<int>{5});
  CHECK(cmd_orders(6, true) == std::vector<int>{5, 6});
  CHECK_THROWS_AS(cmd_orders(1, false), std::invalid_argument);
}

TEST_CASE("cmd_loss averages the available pairs") {
  Tape t;
  Mat s = random_mat(10, 4, 9), l = random_mat(12, 4, 10), y = random_mat(7, 4, 11);
  Value vs = t.constant(s), vl = t.constant(l), vy = t.constant(y);
  auto orders = cmd_orders(5, false);
  CmdLoss full = cmd_loss(t, vs, vl, vy, orders);
  REQUIRE(full.loss.has_value());
  CHECK(full.pair_count == 3);
  double expect = (cmd(s, l, 5) + cmd(s, y, 5) + cmd(l, y, 5)) / 3.0;
  CHECK(full.loss->val()(0, 0) == doctest::Approx(expect).epsilon(1e-12));

  CmdLoss speech_only = cmd_loss(t, vs, std::nullopt, vy, orders);
  CHECK(speech_only.pair_count == 1);
  CHECK(speech_only.loss->val()(0, 0) == doctest::Approx(cmd(s, y, 5)).epsilon(1e-12));

  CmdLoss none = cmd_loss(t, std::nullopt, std::nullopt, vy, orders);
  CHECK(none.pair_count == 0);
  CHECK(!none.loss.has_value());

  Tape t2;
  Mat same = random_mat(6, 3, 12);
  Value v = t2.constant(same);
  CmdLoss zero = cmd_loss(t2, v, v, v, orders);
  CHECK(zero.loss->val()(0, 0) == 0.0);
}

TEST_CASE("ce_loss: uniform logits give ln V, confident logits give ~0") {
  int V = 13;
  Tape t;
  Value uniform = t.constant(Mat::Zero(4, V));
  CHECK(ce_loss(t, uniform, {0, 5, 7, 12}).val()(0, 0) ==
        doctest::Approx(std::log(double(V))).epsilon(1e-12));

  Mat confident = Mat::Zero(3, V);
  std::vector<int> targets = {2, 4, 6};
  for (int i = 0; i < 3; ++i) confident(i, targets[size_t(i)]) = 50.0;
  CHECK(ce_loss(t, t.constant(confident), targets).val()(0, 0) < 1e-12);
}

TEST_CASE("ce_loss matches an independent log-softmax recomputation to 1e-9") {
  Mat logits = random_mat(6, 9, 13, 2.0);
  std::vector<int> targets = {1, 8, 0, 3, 3, 7};
  Tape t;
  double got = ce_loss(t, t.constant(logits), targets).val()(0, 0);
  double want = 0;
  for (int i = 0; i < 6; ++i) {
    double m = logits.row(i).maxCoeff();
    double lse = std::log((logits.row(i).array() - m).exp().sum()) + m;
    want -= logits(i, targets[size_t(i)]) - lse;
  }
  want /= 6.0;
  CHECK(std::abs(got - want) < 1e-9);
}

TEST_CASE("ce_loss rejects an empty label mask") {
  Tape t;
  std::vector<bool> mask = {false, false};
  CHECK_THROWS_AS(ce_loss(t, t.constant(Mat::Zero(2, 4)), {0, 1}, &mask), std::domain_error);
}

TEST_CASE("mrt: single sample gets weight one; zero WERs give zero gradient") {
  Tape t;
  Value lp = t.leaf(Mat::Constant(1, 1, -1.7));
  Value loss = mrt_weighted_wer(t, {lp}, {0.42}, 1.0);
  CHECK(loss.val()(0, 0) == doctest::Approx(0.42));

  // perfect model: every sampled sequence equals the reference, all WERs 0
  Tape t2;
  std::vector<Value> lps = {t2.leaf(Mat::Constant(1, 1, -0.1)),
                            t2.leaf(Mat::Constant(1, 1, -2.0))};
  Value zero_loss = mrt_weighted_wer(t2, lps, {0.0, 0.0}, 1.0);
  CHECK(zero_loss.val()(0, 0) == 0.0);
  GradBuffer gb(0);
  t2.backward(zero_loss, gb);
  CHECK(t2.grad_of(lps[0]).cwiseAbs().maxCoeff() == 0.0);
  CHECK(t2.grad_of(lps[1]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mrt with all sequences enumerated equals the analytic expected WER") {
  // tiny decoder: vocab 3 (tokens {0,1}, eos=2), max_new=2
  DecoderConfig cfg;
  cfg.layers = 1;
  cfg.d_llm = 8;
  cfg.heads = 1;
  cfg.ffn_multiple = 2;
  cfg.vocab = 3;
  cfg.max_seq_len = 16;
  nn::ParameterSet ps;
  Decoder dec(cfg, ps, 2024);
  const int eos = 2;
  Mat prefix = random_mat(3, 8, 14, 0.5);

  // All

  // terminated sequences: "", "0", "1" (eos-terminated), and all length-2
  // continuations cut by max_new.
  struct Seq {
    std::vector<int> toks;
    bool ended_eos;
  };
  std::vector<Seq> all = {{{}, true},    {{0}, true},  {{1}, true},
                          {{0, 0}, false}, {{0, 1}, false}, {{1, 0}, false},
                          {{1, 1}, false}};

  // Oracle: step probabilities from the inference path, plain arithmetic.
  auto w = dec.materialize();
  auto step_probs = [&](const std::vector<int>& ctx) {
    Decoder::Session s = dec.open_session(w, prefix);
    for (int tok : ctx) s.append(tok);
    Eigen::RowVectorXd lg = s.last_logits();
    double m = lg.maxCoeff();
    Eigen::ArrayXd e = (lg.array() - m).exp().transpose();
    return Eigen::ArrayXd(e / e.sum());
  };
  // reference transcript: the decoded text of token sequence {0}
  // (tokens decode via a fake map: 0 -> "a", 1 -> "b")
  auto text_of = [&](const std::vector<int>& toks) {
    std::string s;
    for (size_t i = 0; i < toks.size(); ++i) {
      if (i) s += ' ';
      s += toks[i] == 0 ? "a" : "b";
    }
    return s;
  };
  Transcript ref = Transcript::from_text("a");

  double expected = 0, total_p = 0;
  std::vector<double> probs, wers;
  for (const Seq& sq : all) {
    double p = 1.0;
    std::vector<int> ctx;
    for (int tok : sq.toks) {
      p *= step_probs(ctx)(tok);
      ctx.push_back(tok);
    }
    if (sq.ended_eos) p *= step_probs(ctx)(eos);
    double wer = levenshtein_wer(Transcript::from_text(text_of(sq.toks)), ref);
    expected += p * wer;
    total_p += p;
    probs.push_back(p);
    wers.push_back(wer);
  }
  CHECK(total_p == doctest::Approx(1.0).epsilon(1e-9));  // enumeration is complete

  // System under test: branch scoring + softmax weighting at temperature 1.
  Tape t;
  std::vector<std::vector<int>> suffixes;
  for (const Seq& sq : all) suffixes.push_back(sq.toks);
  auto branches = dec.forward_branches(t, t.constant(prefix), suffixes);
  std::vector<Value> logps;
  for (size_t i = 0; i < all.size(); ++i)
    logps.push_back(sequence_logprob(t, branches[i], all[i].toks, all[i].ended_eos, eos));
  Value loss = mrt_weighted_wer(t, logps, wers, 1.0);
  CHECK(std::abs(loss.val()(0, 0) - expected) < 1e-9);
}
