#pragma once

#include <span>
#include <vector>

#include "memorag/text/tokenizer.hpp"

namespace memorag::text {

/// <clue> q <sep> ; the memory model continues with newline-separated clues and <eos>.
inline std::vector<TokenId> clue_prompt(std::span<const TokenId> auxiliary, std::span<const TokenId> query) {
  std::vector<TokenId> out(auxiliary.begin(), auxiliary.end());
  out.push_back(Vocabulary::clue);
  out.insert(out.end(), query.begin(), query.end());
  out.push_back(Vocabulary::sep);
  return out;
}

/// <ans> E <q> q <sep> ; the generator continues with the answer and <eos>.
inline std::vector<TokenId> answer_prompt(std::span<const TokenId> auxiliary, std::span<const TokenId> evidence,
                                          std::span<const TokenId> query) {
  std::vector<TokenId> out(auxiliary.begin(), auxiliary.end());
  out.push_back(Vocabulary::answer);
  out.insert(out.end(), evidence.begin(), evidence.end());
  out.push_back(Vocabulary::question);
  out.insert(out.end(), query.begin(), query.end());
  out.push_back(Vocabulary::sep);
  return out;
}

/// Target sequence: the text's tokens followed by <eos>.
inline std::vector<TokenId> with_eos(std::vector<TokenId> tokens) {
  tokens.push_back(Vocabulary::eos);
  return tokens;
}

}  // namespace memorag::text
