#include "avger/avsr_stub.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "avger/common.hpp"

namespace avger {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void ChannelConfig::validate() const {
  if (clean_error_rate <= 0.0 || clean_error_rate > 1.0)
    throw std::invalid_argument("channel: clean_error_rate must be in (0, 1]");
  double prev = 1.0 + 1e-12;
  for (auto it = snr_error_rates.begin(); it != snr_error_rates.end(); ++it) {
    if (it->second < 0.0 || it->second > 1.0)
      throw std::invalid_argument("channel: rate out of [0,1]");
    if (it->second > prev)
      throw std::invalid_argument("channel: rates must be non-increasing in SNR");
    prev = it->second;
  }
  if (!snr_error_rates.empty() && clean_error_rate > snr_error_rates.rbegin()->second)
    throw std::invalid_argument("channel: clean rate above the highest-SNR rate");
  if (sub_frac < 0 || del_frac < 0 || ins_frac < 0 ||
      sub_frac + del_frac + ins_frac > 1.0 + 1e-9)
    throw std::invalid_argument("channel: error fractions must be >= 0 and sum <= 1");
  if (inclusion_rate < 0 || inclusion_rate > 1)
    throw std::invalid_argument("channel: inclusion_rate out of [0,1]");
  if (confusions_per_word < 1) throw std::invalid_argument("channel: need confusions");
  if (nbest < 1 || beam < nbest)
    throw std::invalid_argument("channel: need 1 <= nbest <= beam");
}

ChannelModel::ChannelModel(ChannelConfig cfg, std::vector<std::string> vocabulary)
    : cfg_(std::move(cfg)), vocab_(std::move(vocabulary)) {
  cfg_.validate();
  if (vocab_.size() < 2) throw std::invalid_argument("channel: vocabulary too small");
  for (size_t i = 0; i < vocab_.size(); ++i) {
    Rng rng(derive_seed(0x5EEDu, vocab_[i]));
    std::vector<std::string> conf;
    while (int(conf.size()) < cfg_.confusions_per_word) {
      const std::string& cand = vocab_[size_t(rng.uniform_int(0, int(vocab_.size()) - 1))];
      if (cand == vocab_[i]) continue;
      if (std::find(conf.begin(), conf.end(), cand) != conf.end()) continue;
      conf.push_back(cand);
    }
    confusion_table_[vocab_[i]] = std::move(conf);
  }
}

ChannelRates ChannelModel::rates_for(const std::optional<double>& snr_db) const {
  double e;
  if (!snr_db) {
    e = cfg_.clean_error_rate;
  } else {
    const auto& table = cfg_.snr_error_rates;
    if (table.empty()) {
      e = cfg_.clean_error_rate;
    } else if (*snr_db <= table.begin()->first) {
      e = table.begin()->second;
    } else if (*snr_db >= table.rbegin()->first) {
      e = table.rbegin()->second;
    } else {
      auto hi = table.upper_bound(*snr_db);
      auto lo = std::prev(hi);
      double t = (*snr_db - lo->first) / (hi->first - lo->first);
      e = lo->second + t * (hi->second - lo->second);
    }
  }
  return ChannelRates{e * cfg_.sub_frac, e * cfg_.del_frac, e * cfg_.ins_frac};
}

const std::vector<std::string>& ChannelModel::confusions(const std::string& word) const {
  auto it = confusion_table_.find(word);
  if (it == confusion_table_.end())
    throw std::out_of_range("channel: word not in vocabulary: " + word);
  return it->second;
}

Transcript ChannelModel::corrupt(const Transcript& t, const std::optional<double>& snr_db,
                                 uint64_t seed) const {
  ChannelRates r = rates_for(snr_db);
  Rng rng(seed);
  Transcript out;
  for (const std::string& w : t.words) {
    double u = rng.uniform();
    if (u < r.del) {
      // dropped
    } else if (u < r.del + r.sub) {
      const auto& conf = confusions(w);
      out.words.push_back(conf[size_t(rng.uniform_int(0, int(conf.size()) - 1))]);
    } else {
      out.words.push_back(w);
    }
    if (rng.uniform() < r.ins) {
      out.words.push_back(vocab_[size_t(rng.uniform_int(0, int(vocab_.size()) - 1))]);
    }
  }
  if (out.words.empty()) out.words.push_back(filler_word());
  return out;
}

ChannelModel::Lattice ChannelModel::build_lattice(const Transcript& truth,
                                                  const std::optional<double>& snr_db,
                                                  uint64_t seed) const {
  ChannelRates r = rates_for(snr_db);
  double e = r.sub + r.del + r.ins;
  double p_alt = std::min(0.9, cfg_.uncertainty_scale * e);
  Rng rng(seed);
  Lattice lattice;
  for (const std::string& w : truth.words) {
    std::vector<Cand> slot;
    double u = rng.uniform();
    std::string top;
    if (u < r.del) {
      top = "";  // epsilon
    } else if (u < r.del + r.sub) {
      const auto& conf = confusions(w);
      top = conf[size_t(rng.uniform_int(0, int(conf.size()) - 1))];
    } else {
      top = w;
    }
    double p0 = rng.uniform(0.55, 0.80);
    slot.push_back({top, std::log(p0)});
    std::vector<std::string> alts;
    if (top != w && rng.uniform() < cfg_.inclusion_rate) alts.push_back(w);
    if (rng.uniform() < p_alt) {
      const auto& conf = confusions(w);
      for (const auto& c : conf) {
        if (c != top && (alts.empty() || alts[0] != c)) {
          alts.push_back(c);
          break;
        }
      }
    }
    double share = (1.0 - p0) * 0.9;
    for (size_t j = 0; j < alts.size(); ++j) {
      double pj = share * std::pow(0.5, double(j) + 1.0);
      slot.push_back({alts[j], std::log(pj)});
    }
    lattice.push_back(std::move(slot));

    if (rng.uniform() < r.ins) {
      std::vector<Cand> ins_slot;
      const std::string& x = vocab_[size_t(rng.uniform_int(0, int(vocab_.size()) - 1))];
      double q0 = rng.uniform(0.55, 0.80);
      ins_slot.push_back({x, std::log(q0)});
      if (rng.uniform() < cfg_.inclusion_rate)
        ins_slot.push_back({"", std::log((1.0 - q0) * 0.45)});
      lattice.push_back(std::move(ins_slot));
    }
  }
  return lattice;
}

NBestList ChannelModel::nbest_from_lattice(const Lattice& lattice, int n, int beam,
                                           const std::string& filler) {
  if (n < 1 || beam < n) throw std::invalid_argument("nbest: need 1 <= n <= beam");
  struct Path {
    std::vector<std::string> words;
    double logp{0.0};
  };
  std::vector<Path> beams{Path{}};
  auto order = [](const Path& a, const Path& b) {
    if (a.logp != b.logp) return a.logp > b.logp;
    return a.words < b.words;
  };
  for (const auto& slot : lattice) {
    std::vector<Path> next;
    next.reserve(beams.size() * slot.size());
    for (const Path& p : beams) {
      for (const Cand& c : slot) {
        Path q = p;
        if (!c.word.empty()) q.words.push_back(c.word);
        q.logp += c.logp;
        next.push_back(std::move(q));
      }
    }
    std::sort(next.begin(), next.end(), order);
    // Merge textual duplicates, keeping the best-scoring path.
    std::vector<Path> kept;
    for (Path& p : next) {
      bool dup = false;
      for (const Path& k : kept)
        if (k.words == p.words) {
          dup = true;
          break;
        }
      if (!dup) kept.push_back(std::move(p));
      if (int(kept.size()) >= beam) break;
    }
    beams = std::move(kept);
  }
  NBestList out;
  for (Path& p : beams) {
    Transcript t;
    t.words = std::move(p.words);
    if (t.words.empty()) t.words.push_back(filler);
    bool dup = false;
    for (const auto& [h, s] : out.hypotheses)
      if (h.words == t.words) {
        dup = true;
        break;
      }
    if (!dup) out.hypotheses.emplace_back(std::move(t), p.logp);
    if (out.size() >= n) break;
  }
  out.truncated = out.size() < n;
  return out;
}

NBestList ChannelModel::nbest_generate(const AVSample& sample, int n, int beam,
                                       uint64_t seed) const {
  if (n > beam) throw std::invalid_argument("nbest_generate: n must be <= beam");
  Lattice lattice = build_lattice(sample.transcript, sample.snr_db, seed);
  return nbest_from_lattice(lattice, n, beam, filler_word());
}

void export_hypotheses(const fs::path& path,
                       const std::vector<std::pair<std::string, NBestList>>& lists) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write hypotheses: " + path.string());
  for (const auto& [id, list] : lists) {
    int rank = 1;
    for (const auto& [hyp, score] : list.hypotheses) {
      ordered_json j;
      j["id"] = id;
      j["rank"] = rank++;
      j["score"] = score;
      j["text"] = hyp.text();
      os << j.dump() << "\n";
    }
  }
}

std::map<std::string, NBestList> import_hypotheses(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open hypotheses: " + path.string());
  std::map<std::string, NBestList> out;
  std::map<std::string, int> last_rank;
  std::string line;
  int lineno = 0;
  std::string last_id;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& ex) {
      throw ParseError(std::string("hypotheses: invalid json: ") + ex.what(), lineno);
    }
    for (const char* field : {"id", "rank", "score", "text"}) {
      if (!j.contains(field))
        throw ParseError(std::string("hypotheses: missing field '") + field + "'", lineno);
    }
    std::string id = j["id"].get<std::string>();
    int rank = j["rank"].get<int>();
    double score = j["score"].get<double>();
    Transcript t = Transcript::from_text(j["text"].get<std::string>());
    if (t.words.empty()) throw ParseError("hypotheses: empty text", lineno);

    auto it = out.find(id);
    if (it == out.end()) {
      if (last_rank.count(id))
        throw ParseError("hypotheses: duplicate id block '" + id + "'", lineno);
      if (rank != 1) throw ParseError("hypotheses: ranks must start at 1", lineno);
      out[id].hypotheses.emplace_back(std::move(t), score);
      last_rank[id] = 1;
    } else {
      if (id != last_id)
        throw ParseError("hypotheses: duplicate id block '" + id + "'", lineno);
      if (rank != last_rank[id] + 1)
        throw ParseError("hypotheses: ranks must be contiguous", lineno);
      if (score > it->second.hypotheses.back().second)
        throw ParseError("hypotheses: scores must be non-increasing", lineno);
      it->second.hypotheses.emplace_back(std::move(t), score);
      last_rank[id] = rank;
    }
    last_id = id;
  }
  return out;
}

}  // namespace avger
