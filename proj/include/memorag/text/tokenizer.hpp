#pragma once

#include <cctype>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "memorag/error.hpp"

namespace memorag::text {

using TokenId = std::uint32_t;

/// A lowercase word, number or single punctuation mark located in the source
/// text by byte offsets. Newlines are kept as their own piece.
struct Piece {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string text;
};

inline bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

inline std::vector<Piece> split_pieces(std::string_view text) {
  std::vector<Piece> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == '\n') {
      out.push_back({i, i + 1, "\n"});
      ++i;
    } else if (std::isspace(c)) {
      ++i;
    } else if (is_word_char(c)) {
      std::size_t j = i;
      std::string word;
      while (j < text.size() && is_word_char(static_cast<unsigned char>(text[j]))) {
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[j]))));
        ++j;
      }
      out.push_back({i, j, std::move(word)});
      i = j;
    } else {
      out.push_back({i, i + 1, std::string(1, text[i])});
      ++i;
    }
  }
  return out;
}

/// Lowercase alphanumeric terms; everything else separates. Shared by the
/// lexical retriever and the answer metrics.
inline std::vector<std::string> terms(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline bool is_terminal_punctuation(std::string_view piece) {
  return piece == "." || piece == "!" || piece == "?";
}

/// Word-level vocabulary. Ids 0..n_special-1 are reserved control tokens.
class Vocabulary {
 public:
  static constexpr TokenId unk = 0;
  static constexpr TokenId eos = 1;
  static constexpr TokenId newline = 2;
  static constexpr TokenId clue = 3;
  static constexpr TokenId answer = 4;
  static constexpr TokenId question = 5;
  static constexpr TokenId sep = 6;
  static constexpr std::size_t n_special = 7;

  Vocabulary() {
    for (const char* s : {"<unk>", "<eos>", "<nl>", "<clue>", "<ans>", "<q>", "<sep>"}) add(s);
  }

  static Vocabulary from_words(std::span<const std::string> words) {
    Vocabulary v;
    for (const auto& w : words) v.add(w);
    return v;
  }

  /// Adds every piece of every text, in first-seen order.
  static Vocabulary build(std::span<const std::string> texts) {
    Vocabulary v;
    for (const auto& t : texts) {
      for (const auto& p : split_pieces(t)) {
        if (p.text != "\n") v.add(p.text);
      }
    }
    return v;
  }

  TokenId add(const std::string& word) {
    auto it = ids_.find(word);
    if (it != ids_.end()) return it->second;
    const auto id = static_cast<TokenId>(words_.size());
    words_.push_back(word);
    ids_.emplace(word, id);
    return id;
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  bool contains(const std::string& word) const { return ids_.count(word) != 0; }

  TokenId id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? unk : it->second;
  }

  const std::string& word(TokenId id) const {
    detail::require(id < words_.size(), "vocabulary: token id " + std::to_string(id) + " out of range");
    return words_[id];
  }

  TokenId piece_id(const Piece& p) const { return p.text == "\n" ? newline : id(p.text); }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out;
    for (const auto& p : split_pieces(text)) out.push_back(piece_id(p));
    return out;
  }

  /// Space-joined words; <nl> becomes a newline, other control tokens are dropped.
  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id == newline) {
        out += '\n';
        continue;
      }
      if (id < n_special) continue;
      if (!out.empty() && out.back() != '\n') out += ' ';
      out += word(id);
    }
    return out;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace memorag::text
