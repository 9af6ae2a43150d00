#include "styleforge/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "styleforge/error.hpp"

namespace styleforge::backend {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

// Splits plain text into (leading_space_count, unit) pairs. Units follow the
// same word rule as corpus::word_tokens. Trailing spaces come back as a unit
// with empty text.
struct Unit {
  int spaces = 0;
  std::string_view text;
};

std::vector<Unit> units(std::string_view text) {
  std::vector<Unit> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    int spaces = 0;
    while (i < n && text[i] == ' ') {
      ++spaces;
      ++i;
    }
    if (i >= n) {
      out.push_back({spaces, {}});
      break;
    }
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t j = i + 1;
    if (is_word_char(c)) {
      while (j < n) {
        const auto d = static_cast<unsigned char>(text[j]);
        if (is_word_char(d)) {
          ++j;
        } else if ((d == '\'' || d == '-') && j + 1 < n && is_word_char(static_cast<unsigned char>(text[j + 1]))) {
          j += 2;
        } else {
          break;
        }
      }
    }
    out.push_back({spaces, text.substr(i, j - i)});
    i = j;
  }
  return out;
}

}  // namespace

Tokenizer::Tokenizer() {
  add_piece("<pad>", true);
  for (int b = 0; b < 256; ++b) add_piece(std::string(1, static_cast<char>(b)), false);
}

int Tokenizer::add_piece(const std::string& piece, bool special) {
  auto it = index_.find(piece);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(pieces_.size());
  pieces_.push_back(piece);
  special_.push_back(special);
  index_.emplace(piece, id);
  if (special && id != kPad) {
    special_ids_.push_back(id);
    std::stable_sort(special_ids_.begin(), special_ids_.end(),
                     [&](int a, int b) { return pieces_[a].size() > pieces_[b].size(); });
  }
  return id;
}

Tokenizer Tokenizer::train(const std::vector<std::string>& texts, int max_pieces, int min_count) {
  std::map<std::string, long> counts;
  for (const auto& t : texts) {
    for (const auto& u : units(t)) {
      if (u.text.empty()) continue;
      std::string piece = u.spaces > 0 ? " " + std::string(u.text) : std::string(u.text);
      if (piece.size() > 1) ++counts[piece];
    }
  }
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Tokenizer tok;
  int added = 0;
  for (const auto& [piece, count] : ranked) {
    if (added >= max_pieces || count < min_count) break;
    tok.add_piece(piece, false);
    ++added;
  }
  return tok;
}

nlohmann::json Tokenizer::to_json() const {
  nlohmann::json pieces = nlohmann::json::array();
  nlohmann::json special = nlohmann::json::array();
  // Byte pieces are implicit; store everything after them.
  for (std::size_t i = 257; i < pieces_.size(); ++i) {
    pieces.push_back(pieces_[i]);
    special.push_back(static_cast<bool>(special_[i]));
  }
  return {{"pieces", pieces}, {"special", special}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  Tokenizer tok;
  const auto& pieces = j.at("pieces");
  const auto& special = j.at("special");
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    const auto piece = pieces[i].get<std::string>();
    if (tok.index_.count(piece)) throw Error(ErrorKind::kIo, "duplicate tokenizer piece '" + piece + "'");
    tok.add_piece(piece, special[i].get<bool>());
  }
  return tok;
}

std::optional<int> Tokenizer::id_of(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Tokenizer::add_special(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) {
    if (special_[static_cast<std::size_t>(it->second)]) return it->second;
    throw Error(ErrorKind::kTagNotSingleToken, "tag not single-token: '" + token + "' is an ordinary piece");
  }
  if (token.find(' ') != std::string::npos || token.empty()) {
    throw Error(ErrorKind::kTagNotSingleToken, "tag not single-token: '" + token + "'");
  }
  return add_piece(token, true);
}

void Tokenizer::encode_unit(std::string_view unit, bool leading_space, std::vector<int>& out) const {
  const std::string spaced = leading_space ? " " + std::string(unit) : std::string(unit);
  if (auto it = index_.find(spaced); it != index_.end() && !special_[static_cast<std::size_t>(it->second)]) {
    out.push_back(it->second);
    return;
  }
  if (leading_space) out.push_back(1 + ' ');
  if (auto it = index_.find(std::string(unit)); unit.size() > 1 && it != index_.end() &&
                                                  !special_[static_cast<std::size_t>(it->second)]) {
    out.push_back(it->second);
    return;
  }
  for (char c : unit) out.push_back(1 + static_cast<unsigned char>(c));
}

void Tokenizer::encode_plain(std::string_view text, std::vector<int>& out) const {
  for (const auto& u : units(text)) {
    for (int s = 1; s < u.spaces; ++s) out.push_back(1 + ' ');
    if (u.text.empty()) {
      if (u.spaces > 0) out.push_back(1 + ' ');
      continue;
    }
    encode_unit(u.text, u.spaces > 0, out);
  }
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  std::size_t pos = 0;
  std::size_t plain_start = 0;
  auto flush = [&](std::size_t end) {
    std::string_view plain = text.substr(plain_start, end - plain_start);
    encode_plain(plain, out);
  };
  while (pos < text.size()) {
    int matched = -1;
    for (int id : special_ids_) {
      const auto& p = pieces_[static_cast<std::size_t>(id)];
      if (text.compare(pos, p.size(), p) == 0) {
        matched = id;
        break;
      }
    }
    if (matched < 0) {
      ++pos;
      continue;
    }
    // A single space before a special token belongs to the token.
    std::size_t plain_end = pos;
    if (plain_end > plain_start && text[plain_end - 1] == ' ') --plain_end;
    flush(plain_end);
    out.push_back(matched);
    pos += pieces_[static_cast<std::size_t>(matched)].size();
    plain_start = pos;
  }
  flush(text.size());
  return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) throw Error(ErrorKind::kInvalidArgument, "token id out of range");
    if (id == kPad) continue;
    if (special_[static_cast<std::size_t>(id)] && !out.empty()) out += ' ';
    out += pieces_[static_cast<std::size_t>(id)];
  }
  return out;
}

std::string Tokenizer::token_text(int id) const {
  const auto& p = piece(id);
  if (p.size() > 1 && p.front() == ' ') return p.substr(1);
  return p;
}

Tokenizer extend_tokenizer(const Tokenizer& base, const corpus::TagScheme& scheme) {
  Tokenizer out = base;
  for (const auto& tag : scheme.all_tags()) {
    out.add_special(tag);
    if (out.encode(tag).size() != 1) {
      throw Error(ErrorKind::kTagNotSingleToken, "tag not single-token: '" + tag + "'");
    }
  }
  return out;
}

}  // namespace styleforge::backend
