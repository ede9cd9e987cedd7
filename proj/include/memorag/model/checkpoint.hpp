#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "memorag/io/binary.hpp"
#include "memorag/model/parameters.hpp"
#include "memorag/text/tokenizer.hpp"

namespace memorag::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Weights plus the vocabulary they were trained with.
struct Checkpoint {
  Parameters params;
  text::Vocabulary vocab;
};

inline void write_checkpoint(std::ostream& os, const Parameters& p, const text::Vocabulary& vocab) {
  detail::require(vocab.size() == p.config.vocab_size, "checkpoint: vocabulary size does not match config");
  io::BinaryWriter w(os);
  w.magic("MRCK");
  w.u32(kCheckpointVersion);
  const auto& c = p.config;
  for (std::size_t v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.ffn_mult, c.window_l, c.mem_k, c.max_seq}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u32(c.memory_enabled ? 1 : 0);
  p.for_each([&](const std::string&, const Tensor& t, ParamGroup) {
    for (double v : t.values()) w.f32(v);
  });
  w.u32(static_cast<std::uint32_t>(vocab.size()));
  for (const auto& word : vocab.words()) w.string(word);
}

inline Checkpoint read_checkpoint(std::istream& is, const std::string& source) {
  io::BinaryReader r(is, source);
  r.expect_magic("MRCK");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.vocab_size = r.u32("vocab_size");
  c.d_model = r.u32("d_model");
  c.n_layers = r.u32("n_layers");
  c.n_heads = r.u32("n_heads");
  c.ffn_mult = r.u32("ffn_mult");
  c.window_l = r.u32("window_l");
  c.mem_k = r.u32("mem_k");
  c.max_seq = r.u32("max_seq");
  c.memory_enabled = r.u32("memory_enabled") != 0;
  if (c.vocab_size > (1u << 24) || c.d_model > 4096 || c.n_layers > 256 || c.ffn_mult > 64) {
    throw FormatError(source + ": implausible model config");
  }
  try {
    c.validate_structure();
  } catch (const ContractViolation& e) {
    throw FormatError(source + ": " + e.what());
  }
  Checkpoint ck;
  // Shapes come from init; values are overwritten below.
  ck.params = init_parameters(c, {.seed = 0, .allow_any_ratio = true});
  ck.params.for_each([&](const std::string& name, Tensor& t, ParamGroup) {
    std::vector<double> buf(t.size());
    r.f32_array(buf, name.c_str());
    std::copy(buf.begin(), buf.end(), t.values().begin());
  });
  const std::uint32_t n_words = r.u32("vocabulary size");
  if (n_words != c.vocab_size) throw FormatError(source + ": vocabulary section does not match vocab_size");
  std::vector<std::string> words;
  for (std::uint32_t i = 0; i < n_words; ++i) words.push_back(r.string("vocabulary entry"));
  for (std::size_t i = 0; i < text::Vocabulary::n_special && i < words.size(); ++i) {
    if (words[i] != text::Vocabulary().words()[i]) throw FormatError(source + ": reserved vocabulary ids altered");
  }
  ck.vocab = text::Vocabulary::from_words(std::span(words).subspan(std::min(words.size(), text::Vocabulary::n_special)));
  if (ck.vocab.size() != n_words) throw FormatError(source + ": duplicate vocabulary entries");
  r.expect_end();
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Parameters& p, const text::Vocabulary& vocab) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("checkpoint: cannot open " + tmp.string() + " for writing");
    write_checkpoint(os, p, vocab);
    if (!os) throw InputError("checkpoint: write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("checkpoint: cannot open " + path.string());
  return read_checkpoint(is, path.string());
}

/// Rounds every weight to on-disk precision, so an in-memory model behaves
/// exactly like its reloaded checkpoint.
inline void round_to_storage(Parameters& p) {
  p.for_each([](const std::string&, Tensor& t, ParamGroup) {
    for (double& v : t.values()) v = io::to_storage_precision(v);
  });
}

}  // namespace memorag::model
