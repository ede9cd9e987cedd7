#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "memorag/error.hpp"
#include "memorag/retrieval/chunker.hpp"
#include "memorag/text/tokenizer.hpp"

namespace memorag::retrieval {

struct Posting {
  std::size_t chunk_id;
  std::size_t tf;
};

/// Inverted index over chunk terms.
class Index {
 public:
  static constexpr double k1 = 1.2;
  static constexpr double b = 0.75;

  Index() = default;

  explicit Index(std::vector<Chunk> chunks) : chunks_(std::move(chunks)) {
    lengths_.reserve(chunks_.size());
    double total = 0.0;
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
      std::map<std::string, std::size_t> tf;
      const auto ts = text::terms(chunks_[i].text);
      for (const auto& t : ts) ++tf[t];
      for (const auto& [term, n] : tf) postings_[term].push_back({i, n});
      lengths_.push_back(ts.size());
      total += static_cast<double>(ts.size());
    }
    avg_length_ = chunks_.empty() ? 0.0 : total / static_cast<double>(chunks_.size());
  }

  std::size_t size() const { return chunks_.size(); }
  const std::vector<Chunk>& chunks() const { return chunks_; }
  double average_length() const { return avg_length_; }
  std::size_t length(std::size_t chunk_id) const { return lengths_.at(chunk_id); }

  std::size_t df(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
  }

  /// Postings in ascending chunk_id order.
  std::span<const Posting> postings(const std::string& term) const {
    auto it = postings_.find(term);
    if (it == postings_.end()) return {};
    return it->second;
  }

  std::size_t tf(const std::string& term, std::size_t chunk_id) const {
    for (const auto& p : postings(term)) {
      if (p.chunk_id == chunk_id) return p.tf;
    }
    return 0;
  }

  double idf(const std::string& term) const {
    const double n = static_cast<double>(chunks_.size());
    return std::log((n + 1.0) / (static_cast<double>(df(term)) + 0.5));
  }

  /// BM25 score of every chunk for one query string; unique query terms.
  std::vector<double> score_all(std::string_view query) const {
    std::vector<double> scores(chunks_.size(), 0.0);
    if (chunks_.empty()) return scores;
    const auto ts = text::terms(query);
    const std::set<std::string> unique(ts.begin(), ts.end());
    for (const auto& term : unique) {
      const double w = idf(term);
      for (const auto& p : postings(term)) {
        const double tf = static_cast<double>(p.tf);
        const double norm = 1.0 - b + b * static_cast<double>(lengths_[p.chunk_id]) / avg_length_;
        scores[p.chunk_id] += w * tf * (k1 + 1.0) / (tf + k1 * norm);
      }
    }
    return scores;
  }

 private:
  std::vector<Chunk> chunks_;
  std::map<std::string, std::vector<Posting>> postings_;
  std::vector<std::size_t> lengths_;
  double avg_length_ = 0.0;
};

inline Index build_index(std::vector<Chunk> chunks) { return Index(std::move(chunks)); }

/// Anything that scores every chunk of a corpus for a query string.
template <typename S>
concept ChunkScorer = requires(const S& s, std::string_view q) {
  { s.score_all(q) } -> std::convertible_to<std::vector<double>>;
  { s.chunks() } -> std::convertible_to<const std::vector<Chunk>&>;
};

struct ScoredChunk {
  std::size_t chunk_id;
  double score;
  friend bool operator==(const ScoredChunk&, const ScoredChunk&) = default;
};

struct EvidenceSet {
  std::vector<ScoredChunk> hits;  // score order
  std::string text;               // chosen chunks in context order

  std::vector<std::size_t> ids() const {
    std::vector<std::size_t> out;
    for (const auto& h : hits) out.push_back(h.chunk_id);
    return out;
  }
  bool contains(std::size_t chunk_id) const {
    return std::any_of(hits.begin(), hits.end(), [&](const ScoredChunk& h) { return h.chunk_id == chunk_id; });
  }
};

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

/// Max-fusion ranking over several query strings, ties to the lower chunk id.
template <ChunkScorer S>
std::vector<ScoredChunk> rank(std::span<const std::string> queries, const S& scorer) {
  const auto& chunks = scorer.chunks();
  std::vector<ScoredChunk> ranked;
  if (chunks.empty() || queries.empty()) return ranked;
  std::vector<double> best(chunks.size(), -INFINITY);
  for (const auto& q : queries) {
    const auto s = scorer.score_all(q);
    for (std::size_t i = 0; i < s.size(); ++i) best[i] = std::max(best[i], s[i]);
  }
  for (std::size_t i = 0; i < chunks.size(); ++i) ranked.push_back({i, best[i]});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const ScoredChunk& a, const ScoredChunk& b) { return a.score > b.score; });
  return ranked;
}

/// Evidence from already chosen hits: chunk texts joined in context order.
template <ChunkScorer S>
EvidenceSet assemble_evidence(std::vector<ScoredChunk> hits, const S& scorer) {
  EvidenceSet ev;
  ev.hits = hits;
  std::sort(hits.begin(), hits.end(), [](const ScoredChunk& a, const ScoredChunk& b) { return a.chunk_id < b.chunk_id; });
  for (const auto& h : hits) {
    const std::string t = trim(scorer.chunks()[h.chunk_id].text);
    if (t.empty()) continue;
    if (!ev.text.empty()) ev.text += '\n';
    ev.text += t;
  }
  return ev;
}

template <ChunkScorer S>
EvidenceSet retrieve(std::span<const std::string> queries, const S& scorer, std::size_t hits) {
  detail::require(hits >= 1, "retrieve: hits must be >= 1");
  auto ranked = rank(queries, scorer);
  if (ranked.size() > hits) ranked.resize(hits);
  return assemble_evidence(std::move(ranked), scorer);
}

}  // namespace memorag::retrieval
