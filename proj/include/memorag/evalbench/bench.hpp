#pragma once

#include <algorithm>
#include <chrono>
#include <random>
#include <string>
#include <vector>

#include "memorag/memory/memory.hpp"
#include "memorag/model/inference.hpp"
#include "memorag/pipeline/pipeline.hpp"

namespace memorag::evalbench {

/// One measurement: median milliseconds over the repeats, exact bytes.
struct EfficiencyRow {
  std::size_t context_tokens = 0;
  pipeline::Mode mode = pipeline::Mode::memorag;
  std::string mode_label;  // "memorag", "standard_rag", "light"
  double indexing_ms = 0.0;
  double retrieval_ms = 0.0;
  std::size_t cache_bytes = 0;
};

struct EfficiencyReport {
  std::size_t beta = 0;
  std::size_t repeats = 0;
  std::vector<EfficiencyRow> rows;  // length-major, modes in a fixed order

  const EfficiencyRow& row(std::size_t n, const std::string& label) const {
    for (const auto& r : rows) {
      if (r.context_tokens == n && r.mode_label == label) return r;
    }
    throw InputError("efficiency report: no row for " + label + " at " + std::to_string(n) + " tokens");
  }
};

struct BenchConfig {
  std::size_t repeats = 3;
  std::size_t beta = 4;
  std::size_t chunk_max = 512;
  std::size_t hits = 3;
  std::size_t clue_max_tokens = 16;
  std::string query = "where does the red king live ?";
  std::uint64_t seed = 0;
};

inline double median(std::vector<double> v) {
  detail::require(!v.empty(), "median: empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Random sentences over the vocabulary's words, exactly `n` tokens long.
inline std::string synthetic_context(const text::Vocabulary& vocab, std::size_t n, std::uint64_t seed) {
  std::vector<std::string> words;
  for (std::size_t id = text::Vocabulary::n_special; id < vocab.size(); ++id) {
    const auto& w = vocab.word(static_cast<text::TokenId>(id));
    if (!w.empty() && text::is_word_char(static_cast<unsigned char>(w[0]))) words.push_back(w);
  }
  detail::require(!words.empty(), "synthetic context: vocabulary has no words");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    const bool stop = vocab.id(".") != text::Vocabulary::unk && (i % 12 == 11 || i + 1 == n);
    out += stop ? std::string(".") : words[pick(rng)];
  }
  return out;
}

/// Indexing time, retrieval time and cache footprint per context length for
/// compact memory (memorag), chunk indexing (standard_rag) and full-KV memory
/// (light). Each timing is the median of `repeats` runs.
inline EfficiencyReport bench_efficiency(std::span<const std::size_t> lengths, const model::Parameters& params,
                                         const text::Vocabulary& vocab, const BenchConfig& cfg = {}) {
  detail::require(std::is_sorted(lengths.begin(), lengths.end()), "bench: lengths must be sorted ascending");
  detail::require(cfg.repeats >= 1, "bench: repeats must be >= 1");
  using clock = std::chrono::steady_clock;
  pipeline::PipelineConfig pc;
  pc.hits = cfg.hits;
  pc.chunk_max = cfg.chunk_max;
  pc.beta = cfg.beta;
  pc.clue_max_tokens = cfg.clue_max_tokens;
  const pipeline::Pipeline pl(params, vocab, pc);
  const auto clue_prompt = text::clue_prompt({}, vocab.encode(cfg.query));
  if (!lengths.empty()) {
    const std::size_t need = lengths.back() + clue_prompt.size() + cfg.clue_max_tokens;
    detail::require(need <= params.config.max_seq,
                    "bench: light decoding needs " + std::to_string(need) + " positions but max_seq is " +
                        std::to_string(params.config.max_seq));
  }

  EfficiencyReport report;
  report.beta = cfg.beta;
  report.repeats = cfg.repeats;
  for (std::size_t n : lengths) {
    const std::string context = synthetic_context(vocab, n, cfg.seed + n);
    const auto tokens = vocab.encode(context);
    EfficiencyRow compact{n, pipeline::Mode::memorag, "memorag"};
    EfficiencyRow rag{n, pipeline::Mode::standard_rag, "standard_rag"};
    EfficiencyRow light{n, pipeline::Mode::full_context, "light"};
    std::vector<double> t_index[3], t_retrieve[3];
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
      // standard_rag: chunk + index, then query-only lookup
      auto t0 = clock::now();
      const auto index = retrieval::build_index(retrieval::chunk_context(context, cfg.chunk_max));
      t_index[1].push_back(pipeline::elapsed_ms(t0));
      t0 = clock::now();
      (void)pl.retrieve(cfg.query, nullptr, index);
      t_retrieve[1].push_back(pipeline::elapsed_ms(t0));

      // memorag: compact formation (plus the same chunk index), then clues + lookup
      t0 = clock::now();
      const auto mem = memory::memorize(tokens, params, cfg.beta);
      const auto index_m = retrieval::build_index(retrieval::chunk_context(context, cfg.chunk_max));
      t_index[0].push_back(pipeline::elapsed_ms(t0));
      t0 = clock::now();
      const auto clues = pl.generate_clues(cfg.query, mem);
      (void)pl.retrieve(cfg.query, &clues, index_m);
      t_retrieve[0].push_back(pipeline::elapsed_ms(t0));
      compact.cache_bytes = mem.payload_bytes();

      // light: full-KV prefill, then clues decoded over the full cache + lookup
      t0 = clock::now();
      const auto lm = memory::light_memorize(tokens, params);
      const auto index_l = retrieval::build_index(retrieval::chunk_context(context, cfg.chunk_max));
      t_index[2].push_back(pipeline::elapsed_ms(t0));
      t0 = clock::now();
      model::DecodeState state;
      state.cache = lm.cache;
      state.position = lm.n_raw_tokens;
      state.n_regular = lm.n_raw_tokens;
      state.params_fingerprint = lm.params_fingerprint;
      auto out = model::generate(params, state, clue_prompt, cfg.clue_max_tokens, text::Vocabulary::eos);
      if (!out.empty() && out.back() == text::Vocabulary::eos) out.pop_back();
      const auto light_clues = pipeline::parse_clues(cfg.query, vocab.decode(out));
      (void)pl.retrieve(cfg.query, &light_clues, index_l);
      t_retrieve[2].push_back(pipeline::elapsed_ms(t0));
      light.cache_bytes = lm.payload_bytes();
    }
    EfficiencyRow* rows[3] = {&compact, &rag, &light};
    for (int m = 0; m < 3; ++m) {
      rows[m]->indexing_ms = median(t_index[m]);
      rows[m]->retrieval_ms = median(t_retrieve[m]);
    }
    report.rows.push_back(compact);
    report.rows.push_back(rag);
    report.rows.push_back(light);
  }
  return report;
}

}  // namespace memorag::evalbench
