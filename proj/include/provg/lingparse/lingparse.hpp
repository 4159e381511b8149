#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace provg::lang {

inline constexpr int kUnkId = 0;
inline constexpr int kNullId = 1;
inline constexpr std::size_t kMaxTokens = 16;

/// Closed vocabulary shared by the tokenizer and the text encoder.
class Vocabulary {
 public:
  static const Vocabulary& instance();

  std::size_t size() const { return words_.size(); }
  int id(std::string_view word) const;  // kUnkId when absent
  const std::string& word(int id) const;

 private:
  Vocabulary();
  std::vector<std::string> words_;
};

struct TokenSeq {
  std::vector<int> tokens;
  std::string raw;

  std::size_t size() const { return tokens.size(); }
  /// Space-joined vocabulary words; tokenizing the result gives back `tokens`.
  std::string text() const;
  bool is_null() const { return tokens.size() == 1 && tokens[0] == kNullId; }
};

/// Context is the whole expression. Spatial and attribute cues are disjoint
/// subsets of its positions, or the single NULL token when empty.
struct LinguisticCues {
  TokenSeq context;
  TokenSeq spatial;
  TokenSeq attribute;
  std::vector<std::size_t> spatial_positions;
  std::vector<std::size_t> attribute_positions;
};

/// Lowercases, splits on anything that is not a letter, digit, or angle
/// bracket, maps words to ids and truncates to kMaxTokens.
/// Throws provg::Error when no word survives.
TokenSeq tokenize(std::string_view expression);

/// Rule-based cue split. Spatial chunks open at a locative trigger, absorb
/// determiners, locative nouns and "of"/"to", then at most one trailing noun
/// phrase (adjectives followed by a noun). Attribute words are colors, sizes
/// and shape nouns found outside spatial chunks.
LinguisticCues decouple(const TokenSeq& tokens);

// Word classes used by the rule tables; exposed for tests and the generator.
bool is_locative_trigger(std::string_view w);
bool is_attribute_word(std::string_view w);
bool is_category_noun(std::string_view w);

}  // namespace provg::lang
