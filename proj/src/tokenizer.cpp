#include "avger/tokenizer.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "avger/common.hpp"

namespace avger {

namespace {

std::vector<int> to_byte_ids(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(int(c));
  return ids;
}

void merge_in_place(std::vector<int>& seq, int a, int b, int merged) {
  size_t w = 0;
  for (size_t r = 0; r < seq.size();) {
    if (r + 1 < seq.size() && seq[r] == a && seq[r + 1] == b) {
      seq[w++] = merged;
      r += 2;
    } else {
      seq[w++] = seq[r++];
    }
  }
  seq.resize(w);
}

}  // namespace

BpeTokenizer::BpeTokenizer() { rebuild_tables(); }

void BpeTokenizer::rebuild_tables() {
  token_bytes_.assign(size_t(kBaseVocab) + merges_.size(), {});
  for (int b = 0; b < 256; ++b) token_bytes_[size_t(b)] = std::string(1, char(b));
  token_bytes_[kEosId] = "";  // <eos> carries no bytes
  for (size_t m = 0; m < merges_.size(); ++m) {
    auto [a, b] = merges_[m];
    token_bytes_[size_t(kBaseVocab) + m] = token_bytes_.at(size_t(a)) + token_bytes_.at(size_t(b));
  }
}

BpeTokenizer BpeTokenizer::train(const std::vector<std::string>& corpus_lines, int vocab_size) {
  if (vocab_size < kBaseVocab)
    throw std::invalid_argument("tokenizer: vocab_size below base vocabulary");
  std::vector<std::vector<int>> seqs;
  seqs.reserve(corpus_lines.size());
  for (const auto& line : corpus_lines) seqs.push_back(to_byte_ids(line));

  BpeTokenizer tok;
  int n_merges = vocab_size - kBaseVocab;
  for (int m = 0; m < n_merges; ++m) {
    std::map<std::pair<int, int>, long> counts;  // ordered: deterministic ties
    for (const auto& s : seqs)
      for (size_t i = 0; i + 1 < s.size(); ++i) counts[{s[i], s[i + 1]}]++;
    std::pair<int, int> best{-1, -1};
    long best_count = 1;  // require a repeated pair
    for (const auto& [pair, c] : counts) {
      if (c > best_count) {
        best = pair;
        best_count = c;
      }
    }
    if (best.first < 0) break;
    int merged = kBaseVocab + int(tok.merges_.size());
    tok.merges_.push_back(best);
    for (auto& s : seqs) merge_in_place(s, best.first, best.second, merged);
  }
  tok.rebuild_tables();
  return tok;
}

std::vector<int> BpeTokenizer::encode(std::string_view text) const {
  std::vector<int> seq = to_byte_ids(text);
  if (merges_.empty()) return seq;
  // Repeatedly apply the earliest-learned merge present in the sequence.
  std::map<std::pair<int, int>, int> rank;
  for (size_t m = 0; m < merges_.size(); ++m) rank[merges_[m]] = int(m);
  while (seq.size() >= 2) {
    int best_rank = int(merges_.size());
    std::pair<int, int> best{-1, -1};
    for (size_t i = 0; i + 1 < seq.size(); ++i) {
      auto it = rank.find({seq[i], seq[i + 1]});
      if (it != rank.end() && it->second < best_rank) {
        best_rank = it->second;
        best = it->first;
      }
    }
    if (best.first < 0) break;
    merge_in_place(seq, best.first, best.second, kBaseVocab + best_rank);
  }
  return seq;
}

std::string BpeTokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kEosId) continue;
    out += token_bytes(id);
  }
  return out;
}

const std::string& BpeTokenizer::token_bytes(int id) const {
  if (id < 0 || id >= int(token_bytes_.size())) throw std::out_of_range("token id");
  return token_bytes_[size_t(id)];
}

void BpeTokenizer::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("tokenizer: cannot write " + path.string());
  os << "avger-bpe v1\n";
  os << "merges " << merges_.size() << "\n";
  for (auto [a, b] : merges_) os << a << " " << b << "\n";
}

BpeTokenizer BpeTokenizer::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("tokenizer: cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "avger-bpe v1")
    throw ParseError("tokenizer: bad header", 1);
  size_t n = 0;
  if (!std::getline(is, line)) throw ParseError("tokenizer: missing merge count", 2);
  {
    std::istringstream hs(line);
    std::string word;
    if (!(hs >> word >> n) || word != "merges")
      throw ParseError("tokenizer: bad merge count line", 2);
  }
  BpeTokenizer tok;
  for (size_t m = 0; m < n; ++m) {
    if (!std::getline(is, line)) throw ParseError("tokenizer: truncated merges", int(3 + m));
    std::istringstream ls(line);
    int a, b;
    if (!(ls >> a >> b)) throw ParseError("tokenizer: bad merge line", int(3 + m));
    int limit = kBaseVocab + int(m);
    if (a < 0 || b < 0 || a >= limit || b >= limit)
      throw ParseError("tokenizer: merge refers to unknown token", int(3 + m));
    tok.merges_.emplace_back(a, b);
  }
  tok.rebuild_tables();
  return tok;
}

}  // namespace avger
