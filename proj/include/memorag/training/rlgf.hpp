#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "memorag/evalbench/metrics.hpp"
#include "memorag/retrieval/bm25.hpp"
#include "memorag/retrieval/chunker.hpp"
#include "memorag/training/trainer.hpp"

namespace memorag::training {

/// A query over a context with candidate clues to rank.
struct RlgfSample {
  std::string context;
  std::string query;
  std::string gold_answer;
  std::vector<std::string> clues;
};

struct RlgfBuildConfig {
  std::size_t hits = 3;        // evidence per clue
  std::size_t chunk_max = 512;
  std::size_t min_clues = 5;
  std::size_t min_subset = 3;
  std::size_t max_clues = 10;  // larger clue lists are downsampled (seeded)
  std::uint64_t seed = 0;
};

using AnswerFn = std::function<std::string(const std::string& query, const retrieval::EvidenceSet& evidence)>;
using RewardFn = std::function<double(const std::string& prediction, const std::string& gold)>;

struct SubsetScore {
  std::vector<std::size_t> members;  // ascending clue indices
  std::string answer;
  double reward = 0.0;
};

struct RlgfConstruction {
  std::vector<std::string> clues;  // after downsampling
  std::vector<SubsetScore> subsets;
  std::optional<std::size_t> preferred;  // index into subsets
  std::optional<std::size_t> rejected;
  std::string skip_reason;  // set when no pair was emitted
};

/// Subsets of {0..n-1} with at least `min_size` members, by size then lexicographically.
inline std::vector<std::vector<std::size_t>> subsets_of_size_at_least(std::size_t n, std::size_t min_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t k = std::max<std::size_t>(min_size, 1); k <= n; ++k) {
    std::vector<bool> pick(n, false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(k), true);
    do {
      std::vector<std::size_t> s;
      for (std::size_t i = 0; i < n; ++i) {
        if (pick[i]) s.push_back(i);
      }
      out.push_back(std::move(s));
    } while (std::prev_permutation(pick.begin(), pick.end()));
  }
  return out;
}

inline std::string join_clues(const std::vector<std::string>& clues, std::span<const std::size_t> members) {
  std::string out;
  for (std::size_t i : members) {
    if (!out.empty()) out += '\n';
    out += clues[i];
  }
  return out;
}

/// Scores every clue subset of one sample: evidence is the union of each
/// member's top hits, the answer comes from `answer_fn`, the reward from
/// `reward_fn`. Best and worst subsets become the preference pair; ties go to
/// the lexicographically smallest member tuple.
inline RlgfConstruction construct_rlgf_pair(const RlgfSample& sample, const AnswerFn& answer_fn,
                                            const RewardFn& reward_fn, const RlgfBuildConfig& cfg) {
  RlgfConstruction out;
  if (sample.clues.size() < cfg.min_clues) {
    out.skip_reason = "only " + std::to_string(sample.clues.size()) + " clues (need " + std::to_string(cfg.min_clues) + ")";
    return out;
  }
  out.clues = sample.clues;
  if (out.clues.size() > cfg.max_clues) {
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> keep(out.clues.size());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
    std::shuffle(keep.begin(), keep.end(), rng);
    keep.resize(cfg.max_clues);
    std::sort(keep.begin(), keep.end());
    std::vector<std::string> kept;
    for (std::size_t i : keep) kept.push_back(sample.clues[i]);
    out.clues = std::move(kept);
  }

  const auto index = retrieval::build_index(retrieval::chunk_context(sample.context, cfg.chunk_max));
  std::vector<std::vector<retrieval::ScoredChunk>> per_clue;
  for (const auto& clue : out.clues) {
    const std::vector<std::string> one = {clue};
    per_clue.push_back(retrieval::retrieve(one, index, cfg.hits).hits);
  }

  for (auto& members : subsets_of_size_at_least(out.clues.size(), cfg.min_subset)) {
    std::map<std::size_t, double> best;
    for (std::size_t i : members) {
      for (const auto& h : per_clue[i]) {
        auto [it, fresh] = best.emplace(h.chunk_id, h.score);
        if (!fresh) it->second = std::max(it->second, h.score);
      }
    }
    std::vector<retrieval::ScoredChunk> hits;
    for (const auto& [id, score] : best) hits.push_back({id, score});
    std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    SubsetScore s;
    s.members = std::move(members);
    s.answer = answer_fn(sample.query, retrieval::assemble_evidence(std::move(hits), index));
    s.reward = reward_fn(s.answer, sample.gold_answer);
    out.subsets.push_back(std::move(s));
  }

  auto before = [&](std::size_t a, std::size_t b) { return out.subsets[a].members < out.subsets[b].members; };
  std::size_t hi = 0, lo = 0;
  for (std::size_t i = 1; i < out.subsets.size(); ++i) {
    const double r = out.subsets[i].reward;
    if (r > out.subsets[hi].reward || (r == out.subsets[hi].reward && before(i, hi))) hi = i;
    if (r < out.subsets[lo].reward || (r == out.subsets[lo].reward && before(i, lo))) lo = i;
  }
  if (out.subsets[hi].reward == out.subsets[lo].reward) {
    out.skip_reason = "all " + std::to_string(out.subsets.size()) + " subsets scored " +
                      std::to_string(out.subsets[hi].reward);
    return out;
  }
  out.preferred = hi;
  out.rejected = lo;
  return out;
}

struct RlgfBuildReport {
  std::vector<RlgfPair> pairs;
  std::vector<RlgfConstruction> constructions;  // one per input sample
  std::vector<std::string> skipped;             // "sample i: reason"
};

/// Preference pairs for the rlgf stage; skipped samples are reported, not fatal.
inline RlgfBuildReport build_rlgf_pairs(std::span<const RlgfSample> samples, const text::Vocabulary& vocab,
                                        const AnswerFn& answer_fn, const RlgfBuildConfig& cfg = {},
                                        const RewardFn& reward_fn = evalbench::token_f1) {
  RlgfBuildReport report;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto c = construct_rlgf_pair(samples[i], answer_fn, reward_fn, cfg);
    if (c.preferred) {
      const auto& plus = c.subsets[*c.preferred];
      const auto& minus = c.subsets[*c.rejected];
      report.pairs.push_back({vocab.encode(samples[i].context), vocab.encode(samples[i].query),
                              text::with_eos(vocab.encode(join_clues(c.clues, plus.members))),
                              text::with_eos(vocab.encode(join_clues(c.clues, minus.members))), plus.reward,
                              minus.reward});
    } else {
      report.skipped.push_back("sample " + std::to_string(i) + ": " + c.skip_reason);
    }
    report.constructions.push_back(std::move(c));
  }
  return report;
}

}  // namespace memorag::training
