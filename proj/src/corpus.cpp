#include "avger/corpus.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "avger/blob.hpp"
#include "avger/common.hpp"

namespace avger {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string Transcript::text() const {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

Transcript Transcript::from_text(const std::string& s) {
  Transcript t;
  std::istringstream is(s);
  std::string w;
  while (is >> w) t.words.push_back(w);
  return t;
}

std::string format_snr(const std::optional<double>& snr) {
  if (!snr) return "clean";
  std::ostringstream os;
  os << *snr;
  return os.str();
}

std::optional<double> parse_snr(const std::string& s) {
  if (s == "clean") return std::nullopt;
  size_t pos = 0;
  double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("bad snr value: " + s);
  return v;
}

int CorpusConfig::samples_per_word() const {
  return int(std::lround(word_duration * sample_rate));
}

int CorpusConfig::frames_per_word() const {
  return int(std::lround(word_duration * video_fps));
}

void CorpusConfig::validate() const {
  if (vocab_size < 10) throw std::invalid_argument("corpus: vocab_size must be >= 10");
  if (vocab_size > int(builtin_vocabulary().size()))
    throw std::invalid_argument("corpus: vocab_size exceeds builtin word list");
  if (word_duration <= 0) throw std::invalid_argument("corpus: word_duration must be > 0");
  if (min_words < 1 || max_words < min_words)
    throw std::invalid_argument("corpus: bad utterance length range");
  if (sample_rate <= 0 || video_fps <= 0) throw std::invalid_argument("corpus: bad rates");
  if (roi < 12 || roi % 12 != 0)
    throw std::invalid_argument("corpus: roi must be a positive multiple of 12");
  double ws = word_duration * sample_rate;
  if (std::abs(ws - std::lround(ws)) > 1e-9 || int(std::lround(ws)) % 4 != 0)
    throw std::invalid_argument("corpus: word_duration*sample_rate must be a multiple of 4");
  double wf = word_duration * video_fps;
  if (std::abs(wf - std::lround(wf)) > 1e-9)
    throw std::invalid_argument("corpus: word_duration*video_fps must be integral");
  if (double(max_words) * word_duration > max_duration)
    throw std::invalid_argument("corpus: utterances would exceed the duration cap");
  if (snr_levels.empty()) throw std::invalid_argument("corpus: no SNR levels");
  if (train_frac <= 0 || val_frac < 0 || train_frac + val_frac >= 1.0)
    throw std::invalid_argument("corpus: bad split fractions");
}

const std::vector<std::string>& builtin_vocabulary() {
  static const std::vector<std::string> kWords = {
      "the",     "we",      "have",    "problems", "that",   "desperately",
      "need",    "to",      "solve",   "efficiency", "is",   "for",
      "robots",  "not",     "a",       "single",   "one",    "they",
      "just",    "waiting", "their",   "day",      "in",     "court",
      "you",     "might",   "get",     "impeached", "no",    "suspects",
      "and",     "he",      "said",    "on",       "spot",   "absolutely",
      "yes",     "do",      "much",    "editing",  "best",   "way",
      "shut",    "people",  "down",    "an",       "airplane", "has",
      "it",      "gotten",  "better",  "this",     "was",    "with",
      "are",     "world",   "can",     "time",     "what",   "about",
      "know",    "will",    "think",   "when",     "which",  "them",
      "some",    "make",    "like",    "out",      "into",   "year",
      "good",    "look",    "over",    "new",      "sound",  "take",
      "only",    "little",  "work",    "place",    "where",  "after",
      "back",    "long",    "give",    "very",     "our",    "under",
      "name",    "should",  "through", "before",   "right",  "mean"};
  return kWords;
}

std::vector<double> word_audio_signature(int word_index, const CorpusConfig& cfg) {
  if (word_index < 0 || word_index >= int(builtin_vocabulary().size()))
    throw std::out_of_range("word index");
  int n = cfg.samples_per_word();
  int per_tone = n / 4;
  // Tone frequencies: base-12 digits keep (f0, f1) injective over the list.
  int d0 = word_index % 12;
  int d1 = word_index / 12;
  int keys[4] = {d0, d1, (d0 + d1) % 12, (2 * d0 + d1) % 12};
  std::vector<double> out(static_cast<size_t>(n));
  for (int tone = 0; tone < 4; ++tone) {
    double freq = 150.0 + 45.0 * keys[tone];
    for (int i = 0; i < per_tone; ++i) {
      double t = double(i) / cfg.sample_rate;
      out[size_t(tone * per_tone + i)] = 0.3 * std::sin(2.0 * M_PI * freq * t);
    }
  }
  return out;
}

Eigen::MatrixXd word_video_frames(int word_index, const CorpusConfig& cfg) {
  if (word_index < 0 || word_index >= int(builtin_vocabulary().size()))
    throw std::out_of_range("word index");
  int frames = cfg.frames_per_word();
  int block = cfg.roi / 6;  // 6x6 pattern grid
  Eigen::MatrixXd out(frames, cfg.roi * cfg.roi);
  for (int f = 0; f < frames; ++f) {
    uint64_t bits_lo = splitmix64(uint64_t(word_index) * 131 + uint64_t(f) * 7919 + 17);
    uint64_t bits_hi = splitmix64(bits_lo ^ 0xabcdef1234567ull);
    for (int br = 0; br < 6; ++br) {
      for (int bc = 0; bc < 6; ++bc) {
        int bit_idx = br * 6 + bc;
        uint64_t bits = bit_idx < 32 ? bits_lo : bits_hi;
        double v = ((bits >> (bit_idx % 32)) & 1) ? 0.9 : 0.1;
        for (int r = br * block; r < (br + 1) * block; ++r)
          for (int c = bc * block; c < (bc + 1) * block; ++c)
            out(f, r * cfg.roi + c) = v;
      }
    }
  }
  return out;
}

AVSample synth_clean_sample(const std::vector<int>& word_indices, const CorpusConfig& cfg) {
  if (word_indices.empty()) throw std::invalid_argument("empty utterance");
  AVSample s;
  s.audio.sample_rate = cfg.sample_rate;
  s.video.fps = cfg.video_fps;
  s.video.height = s.video.width = cfg.roi;
  int spw = cfg.samples_per_word();
  int fpw = cfg.frames_per_word();
  s.audio.samples.reserve(word_indices.size() * size_t(spw));
  s.video.frames.resize(Eigen::Index(word_indices.size()) * fpw, cfg.roi * cfg.roi);
  Eigen::Index frame_off = 0;
  for (int w : word_indices) {
    auto sig = word_audio_signature(w, cfg);
    s.audio.samples.insert(s.audio.samples.end(), sig.begin(), sig.end());
    s.video.frames.middleRows(frame_off, fpw) = word_video_frames(w, cfg);
    frame_off += fpw;
    s.transcript.words.push_back(builtin_vocabulary()[size_t(w)]);
  }
  return s;
}

AudioSignal synth_babble(uint64_t seed, size_t n_samples, const CorpusConfig& cfg) {
  AudioSignal out;
  out.sample_rate = cfg.sample_rate;
  out.samples.assign(n_samples + size_t(cfg.samples_per_word()), 0.0);
  Rng rng(seed);
  const int n_voices = 6;
  for (int v = 0; v < n_voices; ++v) {
    double gain = rng.uniform(0.4, 1.0);
    size_t pos = size_t(rng.uniform_int(0, cfg.samples_per_word() - 1));
    while (pos < out.samples.size()) {
      int w = rng.uniform_int(0, cfg.vocab_size - 1);
      auto sig = word_audio_signature(w, cfg);
      for (size_t i = 0; i < sig.size() && pos + i < out.samples.size(); ++i)
        out.samples[pos + i] += gain * sig[i];
      pos += sig.size();
    }
  }
  return out;
}

namespace {
double mean_power(const std::vector<double>& x, size_t n) {
  double p = 0.0;
  for (size_t i = 0; i < n; ++i) p += x[i] * x[i];
  return p / double(n);
}
}  // namespace

AudioSignal mix_noise(const AudioSignal& clean, const AudioSignal& noise, double snr_db) {
  if (noise.samples.size() < clean.samples.size())
    throw std::invalid_argument("mix_noise: noise shorter than clean signal");
  if (clean.samples.empty()) throw std::domain_error("mix_noise: empty clean signal");
  double p_sig = mean_power(clean.samples, clean.samples.size());
  double p_noise = mean_power(noise.samples, clean.samples.size());
  if (p_sig <= 0.0) throw std::domain_error("mix_noise: zero-power clean signal");
  if (p_noise <= 0.0) throw std::domain_error("mix_noise: zero-power noise");
  // 10*log10(p_sig / (k^2 * p_noise)) = snr_db
  double k = std::sqrt(p_sig / (p_noise * std::pow(10.0, snr_db / 10.0)));
  AudioSignal out;
  out.sample_rate = clean.sample_rate;
  out.samples.resize(clean.samples.size());
  for (size_t i = 0; i < clean.samples.size(); ++i)
    out.samples[i] = clean.samples[i] + k * noise.samples[i];
  return out;
}

namespace {

Blob audio_blob(const AudioSignal& a) {
  Blob b;
  b.dtype = Dtype::F32;
  b.dims = {uint32_t(a.samples.size())};
  b.data = a.samples;
  return b;
}

Blob video_blob(const LipVideo& v) {
  Blob b;
  b.dtype = Dtype::F32;
  b.dims = {uint32_t(v.frame_count()), uint32_t(v.height), uint32_t(v.width)};
  b.data.resize(size_t(v.frames.size()));
  for (Eigen::Index f = 0; f < v.frames.rows(); ++f)
    for (Eigen::Index p = 0; p < v.frames.cols(); ++p)
      b.data[size_t(f) * size_t(v.frames.cols()) + size_t(p)] = v.frames(f, p);
  return b;
}

std::string split_for(int u, int n_clean, const CorpusConfig& cfg) {
  int train_end = int(std::lround(cfg.train_frac * n_clean));
  int val_end = train_end + int(std::lround(cfg.val_frac * n_clean));
  if (u < train_end) return "train";
  if (u < val_end) return "val";
  return "test";
}

}  // namespace

std::vector<ManifestEntry> generate_corpus(uint64_t seed, int n, const CorpusConfig& cfg,
                                           const fs::path& out_dir) {
  cfg.validate();
  if (n < 1) throw std::invalid_argument("corpus: n must be >= 1");
  fs::create_directories(out_dir / "blobs");

  int n_clean = (n + 1) / 2;
  int n_noisy = n - n_clean;
  std::vector<ManifestEntry> entries;
  entries.reserve(size_t(n));

  for (int u = 0; u < n_clean; ++u) {
    Rng rng(derive_seed(seed, "utterance", uint64_t(u)));
    int len = rng.uniform_int(cfg.min_words, cfg.max_words);
    std::vector<int> words(static_cast<size_t>(len));
    for (int& w : words) w = rng.uniform_int(0, cfg.vocab_size - 1);

    AVSample clean = synth_clean_sample(words, cfg);
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "u%05d", u);
    std::string base = idbuf;
    std::string split = split_for(u, n_clean, cfg);

    ManifestEntry ce;
    ce.id = base + "c";
    ce.audio_path = "blobs/" + ce.id + ".audio.bin";
    ce.video_path = "blobs/" + ce.id + ".video.bin";
    ce.transcript = clean.transcript.text();
    ce.snr_db = std::nullopt;
    ce.split = split;
    save_blob(out_dir / ce.audio_path, audio_blob(clean.audio));
    save_blob(out_dir / ce.video_path, video_blob(clean.video));
    entries.push_back(ce);

    if (u < n_noisy) {
      double snr = cfg.snr_levels[size_t(rng.uniform_int(0, int(cfg.snr_levels.size()) - 1))];
      AudioSignal babble = synth_babble(derive_seed(seed, "babble", uint64_t(u)),
                                        clean.audio.samples.size(), cfg);
      AudioSignal noisy = mix_noise(clean.audio, babble, snr);
      ManifestEntry ne;
      ne.id = base + "n";
      ne.audio_path = "blobs/" + ne.id + ".audio.bin";
      ne.video_path = ce.video_path;  // lip video is noise-independent
      ne.transcript = ce.transcript;
      ne.snr_db = snr;
      ne.split = split;
      save_blob(out_dir / ne.audio_path, audio_blob(noisy));
      entries.push_back(ne);
    }
  }

  save_manifest(out_dir / "manifest.jsonl", entries);
  return entries;
}

void save_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write manifest: " + path.string());
  for (const auto& e : entries) {
    ordered_json j;
    j["id"] = e.id;
    j["audio_path"] = e.audio_path;
    j["video_path"] = e.video_path;
    j["transcript"] = e.transcript;
    if (e.snr_db) {
      j["snr_db"] = *e.snr_db;
    } else {
      j["snr_db"] = "clean";
    }
    j["split"] = e.split;
    os << j.dump() << "\n";
  }
}

std::vector<ManifestEntry> load_manifest(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open manifest: " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& ex) {
      throw ParseError(std::string("manifest: invalid json: ") + ex.what(), lineno);
    }
    ManifestEntry e;
    for (const char* field : {"id", "audio_path", "video_path", "transcript", "snr_db", "split"}) {
      if (!j.contains(field))
        throw ParseError(std::string("manifest: missing field '") + field + "'", lineno);
    }
    e.id = j["id"].get<std::string>();
    e.audio_path = j["audio_path"].get<std::string>();
    e.video_path = j["video_path"].get<std::string>();
    e.transcript = j["transcript"].get<std::string>();
    if (j["snr_db"].is_string()) {
      if (j["snr_db"].get<std::string>() != "clean")
        throw ParseError("manifest: snr_db must be a number or \"clean\"", lineno);
      e.snr_db = std::nullopt;
    } else if (j["snr_db"].is_number()) {
      e.snr_db = j["snr_db"].get<double>();
    } else {
      throw ParseError("manifest: snr_db must be a number or \"clean\"", lineno);
    }
    e.split = j["split"].get<std::string>();
    if (e.split != "train" && e.split != "val" && e.split != "test")
      throw ParseError("manifest: unknown split '" + e.split + "'", lineno);
    if (e.transcript.empty()) throw ParseError("manifest: empty transcript", lineno);
    out.push_back(std::move(e));
  }
  return out;
}

AVSample load_sample(const fs::path& corpus_dir, const ManifestEntry& e,
                     const CorpusConfig& cfg) {
  AVSample s;
  s.id = e.id;
  s.transcript = Transcript::from_text(e.transcript);
  s.snr_db = e.snr_db;
  s.audio.sample_rate = cfg.sample_rate;
  s.video.fps = cfg.video_fps;

  Blob ab = load_blob(corpus_dir / e.audio_path);
  if (ab.dims.size() != 1) throw std::runtime_error("audio blob must be rank 1: " + e.id);
  s.audio.samples = std::move(ab.data);

  Blob vb = load_blob(corpus_dir / e.video_path);
  if (vb.dims.size() != 3) throw std::runtime_error("video blob must be rank 3: " + e.id);
  s.video.height = int(vb.dims[1]);
  s.video.width = int(vb.dims[2]);
  s.video.frames.resize(Eigen::Index(vb.dims[0]), Eigen::Index(vb.dims[1]) * vb.dims[2]);
  for (Eigen::Index f = 0; f < s.video.frames.rows(); ++f)
    for (Eigen::Index p = 0; p < s.video.frames.cols(); ++p)
      s.video.frames(f, p) = vb.data[size_t(f) * size_t(s.video.frames.cols()) + size_t(p)];
  return s;
}

std::vector<std::string> manifest_vocabulary(const std::vector<ManifestEntry>& entries) {
  std::set<std::string> words;
  for (const auto& e : entries) {
    Transcript t = Transcript::from_text(e.transcript);
    words.insert(t.words.begin(), t.words.end());
  }
  return {words.begin(), words.end()};
}

}  // namespace avger
