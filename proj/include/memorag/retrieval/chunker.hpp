#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "memorag/error.hpp"
#include "memorag/text/tokenizer.hpp"

namespace memorag::retrieval {

struct Chunk {
  std::size_t chunk_id = 0;
  std::size_t token_begin = 0;  // piece offsets into the context
  std::size_t token_end = 0;
  std::string text;

  std::size_t token_count() const { return token_end - token_begin; }
};

/// Splits `text` into chunks of at most `chunk_max` tokens. A chunk ends after
/// the last sentence-final punctuation inside its window when there is one,
/// otherwise it is cut at exactly chunk_max tokens. Chunk texts tile the input:
/// concatenating them gives back `text`.
inline std::vector<Chunk> chunk_context(std::string_view text, std::size_t chunk_max) {
  detail::require(chunk_max >= 16, "chunk_context: chunk_max must be >= 16");
  const auto pieces = text::split_pieces(text);
  std::vector<Chunk> chunks;
  std::size_t start = 0;
  while (start < pieces.size()) {
    std::size_t end = pieces.size();
    if (end - start > chunk_max) {
      end = start + chunk_max;
      for (std::size_t i = start + chunk_max; i > start; --i) {
        if (text::is_terminal_punctuation(pieces[i - 1].text)) {
          end = i;
          break;
        }
      }
    }
    Chunk c;
    c.chunk_id = chunks.size();
    c.token_begin = start;
    c.token_end = end;
    chunks.push_back(std::move(c));
    start = end;
  }
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const std::size_t from = i == 0 ? 0 : pieces[chunks[i].token_begin].begin;
    const std::size_t to = i + 1 < chunks.size() ? pieces[chunks[i + 1].token_begin].begin : text.size();
    chunks[i].text = std::string(text.substr(from, to - from));
  }
  return chunks;
}

}  // namespace memorag::retrieval
