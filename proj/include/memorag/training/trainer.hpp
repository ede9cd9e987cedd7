#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "memorag/model/parameters.hpp"
#include "memorag/text/prompts.hpp"
#include "memorag/training/losses.hpp"

namespace memorag::training {

using diff::Tensor;
using model::Parameters;

enum class Stage {
  base,      // full-weight light-mode training of the underlying model
  pretrain,  // next-token prediction through memory
  sft,       // clue generation from memory
  rlgf,      // preference margin on clue sets
};

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::base: return "base";
    case Stage::pretrain: return "pretrain";
    case Stage::sft: return "sft";
    case Stage::rlgf: return "rlgf";
  }
  return "?";
}

inline Stage parse_stage(const std::string& s) {
  if (s == "base") return Stage::base;
  if (s == "pretrain") return Stage::pretrain;
  if (s == "sft") return Stage::sft;
  if (s == "rlgf") return Stage::rlgf;
  throw InputError("unknown training stage '" + s + "' (expected base, pretrain, sft or rlgf)");
}

struct TrainConfig {
  Stage stage = Stage::pretrain;
  double learning_rate = 5e-5;
  std::size_t batch_size = 8;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0: run the full epochs
  std::vector<std::size_t> betas = {4, 8, 16, 32, 64};  // pretrain samples one per window
  std::size_t beta = 4;                                 // fixed ratio for sft / rlgf
  double momentum = 0.9;
  double clip_norm = 0.0;  // 0 disables gradient-norm clipping
  std::uint64_t seed = 0;
};

inline TrainConfig default_train_config(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::pretrain: c.learning_rate = 5e-5, c.batch_size = 8, c.epochs = 1; break;
    case Stage::sft: c.learning_rate = 1e-5, c.batch_size = 8, c.epochs = 2; break;
    case Stage::rlgf: c.learning_rate = 1e-5, c.batch_size = 8, c.epochs = 1; break;
    case Stage::base: c.learning_rate = 1e-3, c.batch_size = 8, c.epochs = 1; break;
  }
  return c;
}

struct SftSample {
  std::vector<TokenId> context;
  std::vector<TokenId> query;
  std::vector<TokenId> output;  // gold clues, ending in <eos>
};

struct RlgfPair {
  std::vector<TokenId> context;
  std::vector<TokenId> query;
  std::vector<TokenId> preferred;  // clue set text + <eos>
  std::vector<TokenId> rejected;
  double reward_preferred = 0.0;
  double reward_rejected = 0.0;
};

/// Light-mode sequence with loss on tokens[loss_from..].
struct BaseSample {
  std::vector<TokenId> tokens;
  std::size_t loss_from = 1;
};

struct TrainData {
  std::vector<std::vector<TokenId>> pretrain;
  std::vector<SftSample> sft;
  std::vector<RlgfPair> rlgf;
  std::vector<BaseSample> base;

  std::size_t size(Stage s) const {
    switch (s) {
      case Stage::base: return base.size();
      case Stage::pretrain: return pretrain.size();
      case Stage::sft: return sft.size();
      case Stage::rlgf: return rlgf.size();
    }
    return 0;
  }
};

struct TrainReport {
  std::vector<double> loss_trace;  // mean batch loss per step
  std::size_t steps = 0;
};

/// Ratios usable by this model: allowed, dividing the window, within the slots.
inline std::vector<std::size_t> usable_betas(const model::ModelConfig& cfg, std::span<const std::size_t> betas) {
  std::vector<std::size_t> out;
  for (std::size_t b : betas) {
    if (model::is_allowed_beta(b) && cfg.window_l % b == 0 && cfg.window_l / b <= cfg.mem_k && cfg.window_l / b >= 1) {
      out.push_back(b);
    }
  }
  return out;
}

inline model::Trainable trainable_for(Stage s) { return s == Stage::base ? model::Trainable::base : model::Trainable::memory; }

inline std::size_t mem_tokens(const model::ModelConfig& cfg, std::size_t beta) {
  detail::require(model::is_allowed_beta(beta) && cfg.window_l % beta == 0 && cfg.window_l / beta <= cfg.mem_k,
                  "training: compression ratio " + std::to_string(beta) + " unusable with window " +
                      std::to_string(cfg.window_l) + " and " + std::to_string(cfg.mem_k) + " memory slots");
  return cfg.window_l / beta;
}

/// Builds the loss of one sample on `tape`. For pretraining, `rng` draws the
/// per-window compression ratios.
inline Var sample_loss(Tape& tape, const ModelVars& mv, const model::ModelConfig& cfg, const TrainConfig& tc,
                       const TrainData& data, std::size_t index, std::mt19937_64& rng) {
  switch (tc.stage) {
    case Stage::pretrain: {
      const auto& seq = data.pretrain[index];
      const auto betas = usable_betas(cfg, tc.betas);
      detail::require(!betas.empty(), "pretrain: no usable compression ratio in the sampling set");
      std::vector<std::size_t> sizes((seq.size() + cfg.window_l - 1) / cfg.window_l);
      std::uniform_int_distribution<std::size_t> pick(0, betas.size() - 1);
      for (auto& k : sizes) k = cfg.window_l / betas[pick(rng)];
      return loss_pretrain(tape, mv, cfg, seq, sizes);
    }
    case Stage::sft: {
      const auto& s = data.sft[index];
      return loss_sft(tape, mv, cfg, s.context, mem_tokens(cfg, tc.beta), text::clue_prompt({}, s.query), s.output);
    }
    case Stage::rlgf: {
      const auto& p = data.rlgf[index];
      return loss_rlgf_margin(tape, mv, cfg, p.context, mem_tokens(cfg, tc.beta), text::clue_prompt({}, p.query),
                              p.preferred, p.rejected);
    }
    case Stage::base: {
      const auto& b = data.base[index];
      return loss_base(tape, mv, cfg, b.tokens, b.loss_from);
    }
  }
  throw ContractViolation("unknown stage");
}

/// Gradient descent with momentum over the stage's trainable tensors. Frozen
/// tensors are never written.
class Trainer {
 public:
  Trainer(Parameters& params, TrainConfig config) : params_(params), config_(std::move(config)) {
    const auto group = config_.stage == Stage::base ? model::ParamGroup::base : model::ParamGroup::memory;
    tensors_ = params_.tensors(group);
    for (Tensor* t : tensors_) velocity_.emplace_back(t->size(), 0.0);
  }

  /// One update from the given sample indices; returns the mean loss.
  double step(const TrainData& data, std::span<const std::size_t> batch, std::mt19937_64& rng) {
    detail::require(!batch.empty(), "train: empty batch");
    std::vector<std::vector<double>> grads;
    for (Tensor* t : tensors_) grads.emplace_back(t->size(), 0.0);
    double loss_sum = 0.0;
    for (std::size_t idx : batch) {
      Tape tape;
      const ModelVars mv = model::bind_parameters(tape, params_, trainable_for(config_.stage));
      Var loss = sample_loss(tape, mv, params_.config, config_, data, idx, rng);
      const double value = tape.value(loss).item();
      if (!std::isfinite(value)) {
        throw NumericError(std::string("train: non-finite loss at stage ") + stage_name(config_.stage) + ", step " +
                           std::to_string(steps_) + ", sample " + std::to_string(idx) + " (loss " +
                           std::to_string(value) + ")");
      }
      loss_sum += value;
      tape.backward(loss);
      for (std::size_t i = 0; i < tensors_.size(); ++i) {
        const auto g = tape.grad_of(tensors_[i]);
        for (std::size_t j = 0; j < g.size(); ++j) grads[i][j] += g[j];
      }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    double norm2 = 0.0;
    for (auto& g : grads) {
      for (double& x : g) {
        x *= inv;
        norm2 += x * x;
      }
    }
    if (!std::isfinite(norm2)) {
      throw NumericError(std::string("train: non-finite gradient at stage ") + stage_name(config_.stage) +
                         ", step " + std::to_string(steps_));
    }
    const double clip =
        config_.clip_norm > 0.0 && norm2 > config_.clip_norm * config_.clip_norm ? config_.clip_norm / std::sqrt(norm2)
                                                                                 : 1.0;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      auto w = tensors_[i]->values();
      auto& v = velocity_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = config_.momentum * v[j] + clip * grads[i][j];
        w[j] -= config_.learning_rate * v[j];
      }
    }
    ++steps_;
    return loss_sum * inv;
  }

  std::size_t steps() const { return steps_; }

 private:
  Parameters& params_;
  TrainConfig config_;
  std::vector<Tensor*> tensors_;
  std::vector<std::vector<double>> velocity_;
  std::size_t steps_ = 0;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

/// Runs a training stage in place on `params`. Batches are drawn from a
/// seeded shuffle per epoch; with max_steps set, epochs repeat until reached.
inline TrainReport train(Parameters& params, const TrainData& data, const TrainConfig& config,
                         const StepCallback& on_step = {}) {
  const std::size_t n = data.size(config.stage);
  if (n == 0) throw InputError(std::string("train: no samples for stage ") + stage_name(config.stage));
  detail::require(config.batch_size >= 1, "train: batch size must be >= 1");
  detail::require(config.learning_rate >= 0.0, "train: learning rate must be >= 0");
  if (config.stage != Stage::base) detail::require(params.config.memory_enabled, "train: memory mode disabled");
  Trainer trainer(params, config);
  std::mt19937_64 rng(config.seed);
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total = config.max_steps > 0 ? config.max_steps : per_epoch * config.epochs;
  TrainReport report;
  std::vector<std::size_t> order(n);
  std::size_t cursor = n;
  while (report.steps < total) {
    std::vector<std::size_t> batch;
    while (batch.size() < config.batch_size) {
      if (cursor == n) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
        if (!batch.empty()) break;  // epoch boundary ends a short batch
      }
      batch.push_back(order[cursor++]);
    }
    const double loss = trainer.step(data, batch, rng);
    report.loss_trace.push_back(loss);
    ++report.steps;
    if (on_step) on_step(report.steps, loss);
  }
  return report;
}

/// Exponential moving average of a trace (alpha weight on the newest value).
inline std::vector<double> smooth(std::span<const double> trace, double alpha) {
  std::vector<double> out;
  double acc = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    acc = i == 0 ? trace[i] : alpha * trace[i] + (1.0 - alpha) * acc;
    out.push_back(acc);
  }
  return out;
}

}  // namespace memorag::training
