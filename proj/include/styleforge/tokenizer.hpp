#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "styleforge/corpus.hpp"

namespace styleforge::backend {

// Word-level tokenizer with byte fallback.
//
// Pieces are either a single byte (ids 1..256, so any text can be encoded)
// or a whole word/punctuation unit, optionally carrying its leading space
// (" said" and "said" are different pieces). Special tokens are matched
// verbatim before anything else. A single space in front of a special token
// is folded into it, and decode re-inserts it, so "<0> I left. <end>"
// round-trips exactly.
class Tokenizer {
 public:
  static constexpr int kPad = 0;

  Tokenizer();

  // Learns up to `max_pieces` word pieces seen at least `min_count` times.
  static Tokenizer train(const std::vector<std::string>& texts, int max_pieces, int min_count = 2);

  static Tokenizer from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  // Display form of one token: leading space removed.
  std::string token_text(int id) const;
  const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }

  std::optional<int> id_of(std::string_view piece) const;
  bool is_special(int id) const { return special_.at(static_cast<std::size_t>(id)); }
  int vocab_size() const { return static_cast<int>(pieces_.size()); }

  // Registers `token` as special. Throws kTagNotSingleToken if it already
  // exists as an ordinary piece.
  int add_special(const std::string& token);

 private:
  int add_piece(const std::string& piece, bool special);
  void encode_plain(std::string_view text, std::vector<int>& out) const;
  void encode_unit(std::string_view unit, bool leading_space, std::vector<int>& out) const;

  std::vector<std::string> pieces_;
  std::vector<bool> special_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> special_ids_;  // longest first
};

// Copy of `base` with every tag of the scheme as a single special token.
Tokenizer extend_tokenizer(const Tokenizer& base, const corpus::TagScheme& scheme);

}  // namespace styleforge::backend
