#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "vtlab/errors.hpp"

namespace vtlab {

// Character-level tokenizer over a fixed 64-symbol vocabulary:
// id 0 is EOS (no character); ids 1..63 map to [a-z A-Z 0-9 space].
// One id per character, so token count == character count.
class Tokenizer {
 public:
  static constexpr int kVocabSize = 64;
  static constexpr int kEosId = 0;

  Tokenizer() {
    to_id_.fill(-1);
    int id = 1;
    for (char c = 'a'; c <= 'z'; ++c) assign(c, id++);
    for (char c = 'A'; c <= 'Z'; ++c) assign(c, id++);
    for (char c = '0'; c <= '9'; ++c) assign(c, id++);
    assign(' ', id++);
  }

  int vocab_size() const { return kVocabSize; }
  int eos_id() const { return kEosId; }

  bool knows(char c) const { return to_id_[static_cast<unsigned char>(c)] >= 0; }

  int id_of(char c) const {
    int id = to_id_[static_cast<unsigned char>(c)];
    if (id < 0)
      throw VocabError(std::string("unknown character '") + c + "' (byte " +
                       std::to_string(static_cast<unsigned char>(c)) + ")");
    return id;
  }

  char char_of(int id) const {
    if (id <= 0 || id >= kVocabSize) throw VocabError("id " + std::to_string(id) + " has no character");
    return chars_[id];
  }

  std::vector<int> tokenize(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(id_of(c));
    return ids;
  }

  // Inverse of tokenize. A trailing EOS is rendered as nothing; EOS anywhere
  // else violates the sequence invariant.
  std::string detokenize(const std::vector<int>& ids) const {
    std::string s;
    s.reserve(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
      int id = ids[i];
      if (id < 0 || id >= kVocabSize) throw VocabError("token id " + std::to_string(id) + " out of range");
      if (id == kEosId) {
        if (i + 1 != ids.size())
          throw VocabError("EOS at non-final position " + std::to_string(i));
        break;
      }
      s.push_back(chars_[id]);
    }
    return s;
  }

  // The character inventory, EOS excluded. Stable order; used for seeding
  // random strings in tests and for checkpoint header validation.
  std::string charset() const { return std::string(chars_ + 1, kVocabSize - 1); }

 private:
  void assign(char c, int id) {
    to_id_[static_cast<unsigned char>(c)] = id;
    chars_[id] = c;
  }

  std::array<int, 256> to_id_{};
  char chars_[kVocabSize] = {};
};

inline void check_token_ids(const std::vector<int>& ids, int vocab_size) {
  for (int id : ids)
    if (id < 0 || id >= vocab_size)
      throw VocabError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(vocab_size));
}

}  // namespace vtlab
