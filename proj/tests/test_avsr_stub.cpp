#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "avger/avsr_stub.hpp"
#include "avger/losses.hpp"
#include "test_util.hpp"

using namespace avger;
using namespace avger::test;

namespace {

std::vector<std::string> small_vocab() {
  auto v = builtin_vocabulary();
  v.resize(24);
  return v;
}

ChannelConfig zero_error_cfg() {
  ChannelConfig cfg;
  cfg.sub_frac = cfg.del_frac = cfg.ins_frac = 0.0;
  return cfg;
}

AVSample sample_with(const std::vector<std::string>& words,
                     std::optional<double> snr = std::nullopt) {
  AVSample s;
  s.id = "t0";
  s.transcript.words = words;
  s.snr_db = snr;
  return s;
}

}  // namespace

TEST_CASE("zero rates leave transcripts untouched") {
  ChannelModel ch(zero_error_cfg(), small_vocab());
  Transcript t{{"we", "have", "problems"}};
  CHECK(ch.corrupt(t, std::nullopt, 123).words == t.words);
  CHECK(ch.corrupt(t, -10.0, 55).words == t.words);
}

TEST_CASE("full deletion collapses to the filler token") {
  ChannelConfig cfg;
  cfg.clean_error_rate = 1.0;
  cfg.snr_error_rates.clear();
  cfg.sub_frac = 0.0;
  cfg.del_frac = 1.0;
  cfg.ins_frac = 0.0;
  ChannelModel ch(cfg, small_vocab());
  Transcript t{{"we", "have", "problems"}};
  Transcript out = ch.corrupt(t, std::nullopt, 9);
  REQUIRE(out.words.size() == 1);
  CHECK(out.words[0] == ch.filler_word());
}

TEST_CASE("Monte-Carlo WER of the channel matches the rate-implied expectation") {
  ChannelConfig cfg;
  cfg.clean_error_rate = 0.4;
  cfg.snr_error_rates.clear();
  cfg.sub_frac = 0.5;   // sub 0.2
  cfg.del_frac = 0.25;  // del 0.1
  cfg.ins_frac = 0.25;  // ins 0.1
  ChannelModel ch(cfg, builtin_vocabulary());
  ChannelRates r = ch.rates_for(std::nullopt);
  CHECK(r.sub == doctest::Approx(0.2));
  CHECK(r.del == doctest::Approx(0.1));
  CHECK(r.ins == doctest::Approx(0.1));

  Rng rng(77);
  Transcript ref;
  const int len = 10;
  const int trials = 10000;
  double wer_sum = 0;
  for (int trial = 0; trial < trials; ++trial) {
    ref.words.clear();
    for (int i = 0; i < len; ++i)
      ref.words.push_back(builtin_vocabulary()[size_t(rng.uniform_int(0, 63))]);
    wer_sum += levenshtein_wer(ch.corrupt(ref, std::nullopt, rng.next_u64()), ref);
  }
  double empirical = wer_sum / trials;
  // Rate-implied expectation: one error per drawn edit, minus the alignment
  // saving when a deletion lands next to an insertion (the inserted word then
  // counts as a substitution).
  double per_word = r.sub + r.del + r.ins;
  double adjacency = r.del * (1.0 - (1.0 - r.ins) * (1.0 - r.ins));
  double expected = per_word - adjacency;
  CHECK(std::abs(empirical - expected) < 0.02);
}

TEST_CASE("zero-error channel yields a single-hypothesis list: the truth") {
  ChannelModel ch(zero_error_cfg(), small_vocab());
  AVSample s = sample_with({"we", "have", "no", "suspects"});
  NBestList nb = ch.nbest_generate(s, 10, 16, 5);
  REQUIRE(nb.size() == 1);
  CHECK(nb.best().words == s.transcript.words);
  CHECK(nb.truncated);
}

TEST_CASE("beam over a 2x2 lattice matches exhaustive enumeration") {
  ChannelModel::Lattice lattice = {
      {{"we", std::log(0.7)}, {"he", std::log(0.2)}},
      {{"have", std::log(0.6)}, {"gave", std::log(0.3)}},
  };
  NBestList nb = ChannelModel::nbest_from_lattice(lattice, 4, 8, "uh");
  REQUIRE(nb.size() == 4);
  // Exhaustive product, sorted by score.
  struct Path {
    std::string text;
    double logp;
  };
  std::vector<Path> all;
  for (const auto& c0 : lattice[0])
    for (const auto& c1 : lattice[1])
      all.push_back({c0.word + " " + c1.word, c0.logp + c1.logp});
  std::sort(all.begin(), all.end(), [](const Path& a, const Path& b) {
    if (a.logp != b.logp) return a.logp > b.logp;
    return a.text < b.text;
  });
  for (int i = 0; i < 4; ++i) {
    CHECK(nb.hypotheses[size_t(i)].first.text() == all[size_t(i)].text);
    CHECK(nb.hypotheses[size_t(i)].second == doctest::Approx(all[size_t(i)].logp));
  }
  for (int i = 1; i < nb.size(); ++i)
    CHECK(nb.hypotheses[size_t(i - 1)].second >= nb.hypotheses[size_t(i)].second);
}

TEST_CASE("n above the beam width is rejected; short lattices are flagged") {
  ChannelModel ch(zero_error_cfg(), small_vocab());
  AVSample s = sample_with({"we", "have"});
  CHECK_THROWS_AS(ch.nbest_generate(s, 8, 4, 1), std::invalid_argument);
  NBestList nb = ch.nbest_generate(s, 4, 8, 1);
  CHECK(nb.truncated);
}

TEST_CASE("expected 1-best error rate decreases as SNR improves") {
  ChannelConfig cfg;  // defaults
  ChannelModel ch(cfg, builtin_vocabulary());
  std::vector<std::optional<double>> conds = {-10.0, -5.0, 0.0, 5.0, std::nullopt};
  double prev = 1.0;
  for (const auto& snr : conds) {
    double e = ch.rates_for(snr).word_error_expectation();
    CHECK(e > 0.0);
    CHECK(e < prev);
    prev = e;
  }

  // Empirical check at the extremes.
  Rng rng(42);
  double wer_noisy = 0, wer_clean = 0;
  const int trials = 2000;
  for (int i = 0; i < trials; ++i) {
    Transcript ref;
    for (int k = 0; k < 8; ++k)
      ref.words.push_back(builtin_vocabulary()[size_t(rng.uniform_int(0, 63))]);
    wer_noisy += levenshtein_wer(ch.corrupt(ref, -10.0, rng.next_u64()), ref);
    wer_clean += levenshtein_wer(ch.corrupt(ref, std::nullopt, rng.next_u64()), ref);
  }
  CHECK(wer_noisy / trials > 5.0 * (wer_clean / trials));
}

TEST_CASE("nbest_generate is bit-reproducible for a fixed seed") {
  ChannelModel ch(ChannelConfig{}, builtin_vocabulary());
  AVSample s = sample_with({"they", "are", "waiting", "for", "their", "day"}, -5.0);
  NBestList a = ch.nbest_generate(s, 10, 16, 1234);
  NBestList b = ch.nbest_generate(s, 10, 16, 1234);
  REQUIRE(a.size() == b.size());
  for (int i = 0; i < a.size(); ++i) {
    CHECK(a.hypotheses[size_t(i)].first.words == b.hypotheses[size_t(i)].first.words);
    CHECK(a.hypotheses[size_t(i)].second == b.hypotheses[size_t(i)].second);
  }
}

TEST_CASE("the 1-best is the top of each lattice slot") {
  ChannelModel ch(ChannelConfig{}, builtin_vocabulary());
  Transcript t{{"we", "have", "problems", "to", "solve"}};
  auto lattice = ch.build_lattice(t, 0.0, 99);
  NBestList nb = ChannelModel::nbest_from_lattice(lattice, 10, 16, ch.filler_word());
  std::vector<std::string> top_path;
  for (const auto& slot : lattice)
    if (!slot.front().word.empty()) top_path.push_back(slot.front().word);
  if (top_path.empty()) top_path.push_back(ch.filler_word());
  CHECK(nb.best().words == top_path);
}

TEST_CASE("hypothesis file round trip and validation") {
  TempDir dir("hyps");
  ChannelModel ch(ChannelConfig{}, builtin_vocabulary());
  AVSample s1 = sample_with({"we", "have", "problems"}, 0.0);
  s1.id = "a";
  AVSample s2 = sample_with({"not", "a", "single", "one"}, -10.0);
  s2.id = "b";
  std::vector<std::pair<std::string, NBestList>> lists = {
      {"a", ch.nbest_generate(s1, 5, 16, 1)},
      {"b", ch.nbest_generate(s2, 5, 16, 2)},
  };
  export_hypotheses(dir.path() / "h.jsonl", lists);
  auto imported = import_hypotheses(dir.path() / "h.jsonl");
  REQUIRE(imported.size() == 2);
  for (const auto& [id, nb] : lists) {
    REQUIRE(imported.count(id) == 1);
    REQUIRE(imported[id].size() == nb.size());
    for (int i = 0; i < nb.size(); ++i) {
      CHECK(imported[id].hypotheses[size_t(i)].first.words ==
            nb.hypotheses[size_t(i)].first.words);
    }
  }

  SUBCASE("five hypotheses for one id give a 5-long list") {
    CHECK(imported["a"].size() == 5);
  }
  SUBCASE("appendix-style hand-written file parses verbatim") {
    std::ofstream os(dir.path() / "case2.jsonl");
    os << R"({"id":"case2","rank":1,"score":-1.5,"text":"i mean we have problems we desperately need to solve"})"
       << "\n";
    os.close();
    auto m = import_hypotheses(dir.path() / "case2.jsonl");
    CHECK(m.at("case2").best().text() ==
          "i mean we have problems we desperately need to solve");
  }
  SUBCASE("duplicate id blocks are rejected") {
    std::ofstream os(dir.path() / "dup.jsonl");
    os << R"({"id":"x","rank":1,"score":-1.0,"text":"we"})" << "\n";
    os << R"({"id":"y","rank":1,"score":-1.0,"text":"he"})" << "\n";
    os << R"({"id":"x","rank":2,"score":-2.0,"text":"they"})" << "\n";
    os.close();
    CHECK_THROWS_AS(import_hypotheses(dir.path() / "dup.jsonl"), ParseError);
  }
  SUBCASE("unsorted scores are rejected") {
    std::ofstream os(dir.path() / "unsorted.jsonl");
    os << R"({"id":"x","rank":1,"score":-2.0,"text":"we"})" << "\n";
    os << R"({"id":"x","rank":2,"score":-1.0,"text":"he"})" << "\n";
    os.close();
    CHECK_THROWS_AS(import_hypotheses(dir.path() / "unsorted.jsonl"), ParseError);
  }
  SUBCASE("rank gaps are rejected") {
    std::ofstream os(dir.path() / "gap.jsonl");
    os << R"({"id":"x","rank":1,"score":-1.0,"text":"we"})" << "\n";
    os << R"({"id":"x","rank":3,"score":-2.0,"text":"he"})" << "\n";
    os.close();
    CHECK_THROWS_AS(import_hypotheses(dir.path() / "gap.jsonl"), ParseError);
  }
}
