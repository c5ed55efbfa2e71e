#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "avger/blob.hpp"
#include "avger/corpus.hpp"
#include "test_util.hpp"

using namespace avger;
using namespace avger::test;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double mean_power(const std::vector<double>& x) {
  double p = 0;
  for (double v : x) p += v * v;
  return p / double(x.size());
}

}  // namespace

TEST_CASE("generation is byte-deterministic for a fixed seed") {
  TempDir d1("corpus_det1"), d2("corpus_det2");
  CorpusConfig cfg;
  cfg.vocab_size = 16;
  generate_corpus(7, 10, cfg, d1.path());
  generate_corpus(7, 10, cfg, d2.path());
  CHECK(slurp(d1.path() / "manifest.jsonl") == slurp(d2.path() / "manifest.jsonl"));
  CHECK(slurp(d1.path() / "blobs/u00000c.audio.bin") ==
        slurp(d2.path() / "blobs/u00000c.audio.bin"));
  CHECK(slurp(d1.path() / "blobs/u00000n.audio.bin") ==
        slurp(d2.path() / "blobs/u00000n.audio.bin"));
}

TEST_CASE("1:1 clean/noisy ratio, noisy spread over the four SNR levels") {
  TempDir dir("corpus_ratio");
  CorpusConfig cfg;
  cfg.vocab_size = 16;
  auto entries = generate_corpus(3, 100, cfg, dir.path());
  REQUIRE(entries.size() == 100);
  int clean = 0;
  std::set<double> levels;
  for (const auto& e : entries) {
    if (!e.snr_db) {
      ++clean;
    } else {
      levels.insert(*e.snr_db);
    }
  }
  CHECK(clean == 50);
  CHECK(levels == std::set<double>{-10.0, -5.0, 0.0, 5.0});
}

TEST_CASE("audio signature sequence decodes back to the transcript") {
  CorpusConfig cfg;
  cfg.vocab_size = 20;
  Rng rng(11);
  std::vector<int> words;
  for (int i = 0; i < 6; ++i) words.push_back(rng.uniform_int(0, cfg.vocab_size - 1));
  AVSample s = synth_clean_sample(words, cfg);
  // Invert via the generator's own word -> signature table.
  int spw = cfg.samples_per_word();
  for (size_t slot = 0; slot < words.size(); ++slot) {
    int best = -1;
    double best_err = 1e18;
    for (int w = 0; w < cfg.vocab_size; ++w) {
      auto sig = word_audio_signature(w, cfg);
      double err = 0;
      for (int i = 0; i < spw; ++i) {
        double d = s.audio.samples[slot * size_t(spw) + size_t(i)] - sig[size_t(i)];
        err += d * d;
      }
      if (err < best_err) {
        best_err = err;
        best = w;
      }
    }
    CHECK(best == words[slot]);
  }
  CHECK(s.transcript.words.size() == words.size());
}

TEST_CASE("audio and video durations stay aligned") {
  CorpusConfig cfg;
  cfg.vocab_size = 12;
  AVSample s = synth_clean_sample({1, 5, 9, 2}, cfg);
  CHECK(std::abs(s.audio.duration() - s.video.duration()) <= 1.0 / cfg.video_fps);
  CHECK(s.audio.duration() <= cfg.max_duration);
}

TEST_CASE("mix_noise hits the requested SNR exactly") {
  CorpusConfig cfg;
  AudioSignal clean;
  clean.sample_rate = cfg.sample_rate;
  Rng rng(21);
  for (int i = 0; i < 4000; ++i) clean.samples.push_back(rng.normal(0, 0.4));
  AudioSignal noise = synth_babble(99, clean.samples.size(), cfg);

  SUBCASE("0 dB: scaled noise power equals signal power") {
    AudioSignal mixed = mix_noise(clean, noise, 0.0);
    std::vector<double> scaled(mixed.samples.size());
    for (size_t i = 0; i < scaled.size(); ++i) scaled[i] = mixed.samples[i] - clean.samples[i];
    CHECK(mean_power(scaled) == doctest::Approx(mean_power(clean.samples)).epsilon(1e-9));
  }
  SUBCASE("-10 dB: noise power is 10x signal power") {
    AudioSignal mixed = mix_noise(clean, noise, -10.0);
    std::vector<double> scaled(mixed.samples.size());
    for (size_t i = 0; i < scaled.size(); ++i) scaled[i] = mixed.samples[i] - clean.samples[i];
    CHECK(mean_power(scaled) / mean_power(clean.samples) == doctest::Approx(10.0).epsilon(1e-9));
  }
  SUBCASE("measured SNR of the two addends is 5 dB within 1e-6") {
    AudioSignal mixed = mix_noise(clean, noise, 5.0);
    std::vector<double> scaled(mixed.samples.size());
    for (size_t i = 0; i < scaled.size(); ++i) scaled[i] = mixed.samples[i] - clean.samples[i];
    double snr = 10.0 * std::log10(mean_power(clean.samples) / mean_power(scaled));
    CHECK(std::abs(snr - 5.0) < 1e-6);
  }
  SUBCASE("scale covariance: mix(a*c, a*n, s) == a*mix(c, n, s)") {
    double alpha = 3.7;
    AudioSignal c2 = clean, n2 = noise;
    for (double& v : c2.samples) v *= alpha;
    for (double& v : n2.samples) v *= alpha;
    AudioSignal m1 = mix_noise(clean, noise, 5.0);
    AudioSignal m2 = mix_noise(c2, n2, 5.0);
    double max_diff = 0;
    for (size_t i = 0; i < m1.samples.size(); ++i)
      max_diff = std::max(max_diff, std::abs(m2.samples[i] - alpha * m1.samples[i]));
    CHECK(max_diff < 1e-9);
  }
  SUBCASE("zero-power inputs are rejected") {
    AudioSignal zero;
    zero.sample_rate = cfg.sample_rate;
    zero.samples.assign(clean.samples.size(), 0.0);
    CHECK_THROWS_AS(mix_noise(zero, noise, 0.0), std::domain_error);
    CHECK_THROWS_AS(mix_noise(clean, zero, 0.0), std::domain_error);
  }
  SUBCASE("noise shorter than clean is rejected") {
    AudioSignal shorty = noise;
    shorty.samples.resize(clean.samples.size() - 1);
    CHECK_THROWS_AS(mix_noise(clean, shorty, 0.0), std::invalid_argument);
  }
}

TEST_CASE("manifest round-trip and validation") {
  TempDir dir("corpus_manifest");
  SUBCASE("write then load is the identity") {
    std::vector<ManifestEntry> entries = {
        {"a1", "blobs/a1.audio.bin", "blobs/a1.video.bin", "we have problems", std::nullopt,
         "train"},
        {"a2", "blobs/a2.audio.bin", "blobs/a2.video.bin", "not a single one", -5.0, "val"},
        {"a3", "blobs/a3.audio.bin", "blobs/a3.video.bin", "has it gotten better", 0.0,
         "test"},
    };
    save_manifest(dir.path() / "m.jsonl", entries);
    auto loaded = load_manifest(dir.path() / "m.jsonl");
    CHECK(loaded == entries);
  }
  SUBCASE("empty file loads as empty sequence") {
    std::ofstream(dir.path() / "empty.jsonl").close();
    CHECK(load_manifest(dir.path() / "empty.jsonl").empty());
  }
  SUBCASE("record missing transcript names the line") {
    std::ofstream os(dir.path() / "bad.jsonl");
    os << R"({"id":"x","audio_path":"a","video_path":"v","transcript":"ok","snr_db":"clean","split":"train"})"
       << "\n";
    os << R"({"id":"y","audio_path":"a","video_path":"v","snr_db":"clean","split":"train"})"
       << "\n";
    os.close();
    try {
      load_manifest(dir.path() / "bad.jsonl");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
}

TEST_CASE("generated splits are disjoint and cover the corpus") {
  TempDir dir("corpus_splits");
  CorpusConfig cfg;
  cfg.vocab_size = 16;
  auto entries = generate_corpus(5, 60, cfg, dir.path());
  std::set<std::string> train, val, test, all;
  for (const auto& e : entries) {
    all.insert(e.id);
    if (e.split == "train") train.insert(e.id);
    if (e.split == "val") val.insert(e.id);
    if (e.split == "test") test.insert(e.id);
  }
  CHECK(all.size() == entries.size());
  CHECK(train.size() + val.size() + test.size() == all.size());
  CHECK(!train.empty());
  CHECK(!test.empty());
}

TEST_CASE("samples load back with aligned content") {
  TempDir dir("corpus_load");
  CorpusConfig cfg;
  cfg.vocab_size = 16;
  auto entries = generate_corpus(9, 6, cfg, dir.path());
  for (const auto& e : entries) {
    AVSample s = load_sample(dir.path(), e, cfg);
    CHECK(s.transcript.text() == e.transcript);
    CHECK(std::abs(s.audio.duration() - s.video.duration()) <= 1.0 / cfg.video_fps);
    CHECK(int(s.transcript.words.size()) >= cfg.min_words);
    CHECK(int(s.transcript.words.size()) <= cfg.max_words);
  }
}

TEST_CASE("invalid configs are rejected") {
  CorpusConfig cfg;
  cfg.vocab_size = 5;  // below the documented floor of 10
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = CorpusConfig{};
  cfg.word_duration = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = CorpusConfig{};
  cfg.min_words = 4;
  cfg.max_words = 2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("blob f32 round trip") {
  TempDir dir("blob_rt");
  Blob b;
  b.dtype = Dtype::F32;
  b.dims = {3, 2};
  b.data = {0.5, -1.25, 2.0, 3.5, -0.75, 0.125};  // exactly representable in f32
  save_blob(dir.path() / "t.bin", b);
  Blob r = load_blob(dir.path() / "t.bin");
  CHECK(r.dims == b.dims);
  CHECK(r.data == b.data);
}
