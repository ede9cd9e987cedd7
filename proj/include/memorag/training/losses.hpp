#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "memorag/model/transformer.hpp"

namespace memorag::training {

using diff::Tape;
using diff::Var;
using model::ModelConfig;
using model::ModelVars;
using text::TokenId;

/// Memory KV accumulated on a tape, so gradients reach the memory side.
struct TapeMemory {
  std::vector<Var> keys;
  std::vector<Var> values;
  std::size_t length = 0;
  std::size_t position = 0;

  model::PrefixKV prefix() const { return {keys, values, length}; }
};

/// Window-by-window compact formation on the tape. `mem_per_window[w]` is the
/// number of memory tokens appended after window w. Raw-token logits for each
/// window are appended to `logits` when given.
inline TapeMemory form_memory(Tape& tape, const ModelVars& mv, const ModelConfig& cfg,
                              std::span<const TokenId> tokens, std::span<const std::size_t> mem_per_window,
                              std::vector<Var>* logits = nullptr) {
  const std::size_t l = cfg.window_l;
  const std::size_t n_windows = (tokens.size() + l - 1) / l;
  detail::require(mem_per_window.size() >= n_windows, "form_memory: memory size missing for some windows");
  TapeMemory mem;
  mem.keys.resize(cfg.n_layers);
  mem.values.resize(cfg.n_layers);
  for (std::size_t w = 0; w < n_windows; ++w) {
    const std::size_t begin = w * l;
    const auto window = tokens.subspan(begin, std::min(l, tokens.size() - begin));
    const std::size_t n_raw = window.size();
    const std::size_t k = mem_per_window[w];
    const auto out = model::run_segment(tape, mv, cfg, window, k, mem.position, mem.prefix(), logits != nullptr);
    if (logits) logits->push_back(out.logits);
    for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
      Var kk = tape.slice_rows(out.keys[layer], n_raw, n_raw + k);
      Var vv = tape.slice_rows(out.values[layer], n_raw, n_raw + k);
      mem.keys[layer] = mem.length == 0 ? kk : tape.concat_rows({mem.keys[layer], kk});
      mem.values[layer] = mem.length == 0 ? vv : tape.concat_rows({mem.values[layer], vv});
    }
    mem.length += k;
    mem.position += n_raw + k;
  }
  return mem;
}

/// Mean next-token NLL over a sequence whose conditioning is the memory of
/// earlier windows plus the current window prefix.
inline Var loss_pretrain(Tape& tape, const ModelVars& mv, const ModelConfig& cfg, std::span<const TokenId> tokens,
                         std::span<const std::size_t> mem_per_window) {
  detail::require(cfg.memory_enabled, "pretrain loss: memory mode disabled");
  detail::require(tokens.size() >= 2, "pretrain loss: sequence needs at least 2 tokens");
  std::vector<Var> logits;
  form_memory(tape, mv, cfg, tokens, mem_per_window, &logits);
  const double w = 1.0 / static_cast<double>(tokens.size() - 1);
  Var total;
  bool first = true;
  for (std::size_t win = 0; win < logits.size(); ++win) {
    const std::size_t begin = win * cfg.window_l;
    const std::size_t n_raw = tape.value(logits[win]).rows();
    std::vector<std::size_t> targets;
    std::size_t rows = 0;
    for (std::size_t i = 0; i < n_raw && begin + i + 1 < tokens.size(); ++i, ++rows) targets.push_back(tokens[begin + i + 1]);
    if (rows == 0) continue;
    Var lg = rows == n_raw ? logits[win] : tape.slice_rows(logits[win], 0, rows);
    Var part = tape.nll(lg, std::move(targets), std::vector<double>(rows, w));
    total = first ? part : tape.add(total, part);
    first = false;
  }
  return total;
}

/// Mean NLL of `target` continuing `prompt` on top of a cached prefix.
inline Var continuation_nll(Tape& tape, const ModelVars& mv, const ModelConfig& cfg, const model::PrefixKV& prefix,
                            std::size_t position, std::span<const TokenId> prompt, std::span<const TokenId> target) {
  detail::require(!prompt.empty(), "continuation loss: empty prompt");
  detail::require(!target.empty(), "continuation loss: empty target");
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), target.begin(), target.end() - 1);
  const auto out = model::run_segment(tape, mv, cfg, seq, 0, position, prefix, true);
  Var rows = tape.slice_rows(out.logits, prompt.size() - 1, seq.size());
  return tape.nll(rows, std::vector<std::size_t>(target.begin(), target.end()),
                  std::vector<double>(target.size(), 1.0 / static_cast<double>(target.size())));
}

inline std::vector<std::size_t> uniform_memory(const ModelConfig& cfg, std::size_t n_tokens, std::size_t k) {
  return std::vector<std::size_t>((n_tokens + cfg.window_l - 1) / cfg.window_l, k);
}

/// Clue-generation loss: memory formed over the context, then the clue prompt,
/// CE over the gold output only.
inline Var loss_sft(Tape& tape, const ModelVars& mv, const ModelConfig& cfg, std::span<const TokenId> context,
                    std::size_t mem_k, std::span<const TokenId> prompt, std::span<const TokenId> output) {
  detail::require(!output.empty(), "sft loss: empty gold output");
  detail::require(!context.empty(), "sft loss: empty context");
  const auto sizes = uniform_memory(cfg, context.size(), mem_k);
  const TapeMemory mem = form_memory(tape, mv, cfg, context, sizes);
  return continuation_nll(tape, mv, cfg, mem.prefix(), mem.position, prompt, output);
}

/// The ranking objective: sum over pairs of max(0, 1 - R+ + R-).
inline double loss_rlgf(std::span<const std::pair<double, double>> rewards) {
  double total = 0.0;
  for (const auto& [plus, minus] : rewards) {
    detail::require(std::isfinite(plus) && std::isfinite(minus), "rlgf loss: rewards must be finite");
    total += std::max(0.0, 1.0 - (plus - minus));
  }
  return total;
}

inline double loss_rlgf(double plus, double minus) {
  const std::pair<double, double> one[1] = {{plus, minus}};
  return loss_rlgf(one);
}

/// Differentiable form: the same hinge on length-normalised log-likelihoods
/// of the preferred and rejected clue sets under the memory model.
inline Var loss_rlgf_margin(Tape& tape, const ModelVars& mv, const ModelConfig& cfg, std::span<const TokenId> context,
                            std::size_t mem_k, std::span<const TokenId> prompt, std::span<const TokenId> preferred,
                            std::span<const TokenId> rejected) {
  const auto sizes = uniform_memory(cfg, context.size(), mem_k);
  const TapeMemory mem = form_memory(tape, mv, cfg, context, sizes);
  // s(y) = -nll(y): hinge(1 - s+ + s-) = relu(1 + nll+ - nll-)
  Var nll_plus = continuation_nll(tape, mv, cfg, mem.prefix(), mem.position, prompt, preferred);
  Var nll_minus = continuation_nll(tape, mv, cfg, mem.prefix(), mem.position, prompt, rejected);
  return tape.relu(tape.add_scalar(tape.sub(nll_plus, nll_minus), 1.0));
}

/// Light-mode loss for the base stage: CE over tokens[loss_from..].
inline Var loss_base(Tape& tape, const ModelVars& mv, const ModelConfig& cfg, std::span<const TokenId> tokens,
                     std::size_t loss_from) {
  detail::require(loss_from >= 1 && loss_from < tokens.size(), "base loss: nothing to predict");
  return continuation_nll(tape, mv, cfg, {}, 0, tokens.first(loss_from), tokens.subspan(loss_from));
}

}  // namespace memorag::training
