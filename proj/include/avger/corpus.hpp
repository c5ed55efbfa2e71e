#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace avger {

struct Transcript {
  std::vector<std::string> words;

  std::string text() const;
  static Transcript from_text(const std::string& s);
  bool operator==(const Transcript&) const = default;
};

struct AudioSignal {
  int sample_rate{1600};
  std::vector<double> samples;

  double duration() const {
    return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0;
  }
};

/// Grayscale lip frames; frame t is row t, pixel (r, c) at column r*width + c,
/// values in [0, 1].
struct LipVideo {
  int fps{25};
  int height{24};
  int width{24};
  Eigen::MatrixXd frames;  // n_frames x (height*width)

  int frame_count() const { return int(frames.rows()); }
  double duration() const { return fps > 0 ? double(frame_count()) / fps : 0.0; }
};

struct AVSample {
  std::string id;
  AudioSignal audio;
  LipVideo video;
  Transcript transcript;
  std::optional<double> snr_db;  // nullopt = clean
};

std::string format_snr(const std::optional<double>& snr);
std::optional<double> parse_snr(const std::string& s);

struct CorpusConfig {
  int vocab_size{64};
  int sample_rate{1600};
  int video_fps{25};
  int roi{24};              // lip frame is roi x roi
  int min_words{3};
  int max_words{6};
  double word_duration{0.24};  // seconds; 4 tones per word
  std::vector<double> snr_levels{-10.0, -5.0, 0.0, 5.0};
  double train_frac{0.7};
  double val_frac{0.1};
  double max_duration{20.0};  // utterances above this are rejected

  int samples_per_word() const;
  int frames_per_word() const;
  void validate() const;  // throws std::invalid_argument
};

/// Fixed lowercase word list the synthetic corpus draws from.
const std::vector<std::string>& builtin_vocabulary();

/// Deterministic word -> audio tone-sequence signature (seed-independent, so
/// any corpus built with the same config shares it).
std::vector<double> word_audio_signature(int word_index, const CorpusConfig& cfg);

/// Deterministic word -> lip-frame pattern block (frames_per_word x roi*roi).
Eigen::MatrixXd word_video_frames(int word_index, const CorpusConfig& cfg);

/// Clean sample from a word index sequence (no noise, no id).
AVSample synth_clean_sample(const std::vector<int>& word_indices, const CorpusConfig& cfg);

/// Synthetic multi-tone babble of at least n_samples samples.
AudioSignal synth_babble(uint64_t seed, size_t n_samples, const CorpusConfig& cfg);

/// Scale `noise` so the clean:noise power ratio is exactly snr_db, then add.
/// The clean component is passed through unchanged.
AudioSignal mix_noise(const AudioSignal& clean, const AudioSignal& noise, double snr_db);

struct ManifestEntry {
  std::string id;
  std::string audio_path;  // relative to corpus dir
  std::string video_path;
  std::string transcript;
  std::optional<double> snr_db;
  std::string split;  // "train" | "val" | "test"

  bool operator==(const ManifestEntry&) const = default;
};

/// Generate a deterministic corpus under out_dir: blobs plus manifest.jsonl.
/// n counts total samples; clean and noisy alternate 1:1 (each clean
/// utterance gets one noisy twin at a random SNR level).
std::vector<ManifestEntry> generate_corpus(uint64_t seed, int n,
                                           const CorpusConfig& cfg,
                                           const std::filesystem::path& out_dir);

void save_manifest(const std::filesystem::path& path,
                   const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

AVSample load_sample(const std::filesystem::path& corpus_dir, const ManifestEntry& e,
                     const CorpusConfig& cfg);

/// Distinct words over all manifest transcripts, sorted (the working
/// vocabulary for channel models and prompts).
std::vector<std::string> manifest_vocabulary(const std::vector<ManifestEntry>& entries);

}  // namespace avger
