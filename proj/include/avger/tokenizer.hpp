#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace avger {

/// Byte-level BPE. Base vocabulary is the 256 raw bytes plus <eos>; merges
/// extend it. Any input byte encodes (byte fallback is the base vocabulary),
/// so decode(encode(s)) == s for arbitrary strings.
class BpeTokenizer {
 public:
  static constexpr int kEosId = 256;
  static constexpr int kBaseVocab = 257;  // 256 bytes + <eos>

  /// Default-constructed tokenizer is the pure byte vocabulary (no merges).
  BpeTokenizer();

  /// Greedy merge training over corpus lines until vocab_size is reached or
  /// no pair repeats. Ties break toward the lexicographically smallest pair.
  static BpeTokenizer train(const std::vector<std::string>& corpus_lines, int vocab_size);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

  int vocab_size() const { return kBaseVocab + int(merges_.size()); }
  int eos_id() const { return kEosId; }
  const std::vector<std::pair<int, int>>& merges() const { return merges_; }
  const std::string& token_bytes(int id) const;

  void save(const std::filesystem::path& path) const;
  static BpeTokenizer load(const std::filesystem::path& path);

 private:
  void rebuild_tables();

  std::vector<std::pair<int, int>> merges_;   // rank order
  std::vector<std::string> token_bytes_;      // id -> byte string ("" for <eos>)
};

}  // namespace avger
