#include "provg/lingparse/lingparse.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <unordered_map>

#include "provg/error.hpp"

namespace provg::lang {

namespace {

constexpr std::array kDeterminers = {"the", "a", "an", "this", "that", "its"};
constexpr std::array kColors = {"red", "green", "blue", "yellow"};
constexpr std::array kSizes = {"small", "large", "big", "tiny", "little"};
constexpr std::array kCategories = {"circle", "square", "triangle", "circles", "squares",
                                    "triangles", "object", "shape", "disk", "box"};
constexpr std::array kTriggers = {"on",     "in",    "at",     "near",   "above",  "below",
                                  "beside", "next",  "left",   "right",  "top",    "bottom",
                                  "upper",  "lower", "center", "middle", "corner", "side",
                                  "between"};
constexpr std::array kLocativeNouns = {"edge", "part", "half", "area", "region", "centre"};
constexpr std::array kLinkers = {"of", "to", "from", "and"};
constexpr std::array kSceneNouns = {"image", "picture", "scene", "map"};
constexpr std::array kOther = {"is", "located", "with", "one", "which", "closest", "nearest",
                               "far", "by", "under", "over", "colored", "shaped", "there",
                               "find"};

template <std::size_t N>
bool contains(const std::array<const char*, N>& table, std::string_view w) {
  return std::any_of(table.begin(), table.end(), [&](const char* s) { return w == s; });
}

bool is_determiner(std::string_view w) { return contains(kDeterminers, w); }
bool is_locative_body(std::string_view w) {
  return is_determiner(w) || is_locative_trigger(w) || contains(kLocativeNouns, w) ||
         contains(kLinkers, w);
}
bool is_adjective(std::string_view w) { return contains(kColors, w) || contains(kSizes, w); }
bool is_noun(std::string_view w) { return is_category_noun(w) || contains(kSceneNouns, w); }

TokenSeq make_cue(const TokenSeq& src, const std::vector<std::size_t>& positions) {
  TokenSeq out;
  if (positions.empty()) {
    out.tokens = {kNullId};
  } else {
    for (auto p : positions) out.tokens.push_back(src.tokens[p]);
  }
  out.raw = out.text();
  return out;
}

}  // namespace

bool is_locative_trigger(std::string_view w) { return contains(kTriggers, w); }
bool is_attribute_word(std::string_view w) { return is_adjective(w) || is_category_noun(w); }
bool is_category_noun(std::string_view w) { return contains(kCategories, w); }

Vocabulary::Vocabulary() {
  words_ = {"<unk>", "<null>"};
  auto append = [&](const auto& table) {
    for (const char* w : table)
      if (std::find(words_.begin(), words_.end(), w) == words_.end()) words_.emplace_back(w);
  };
  append(kDeterminers);
  append(kColors);
  append(kSizes);
  append(kCategories);
  append(kTriggers);
  append(kLocativeNouns);
  append(kLinkers);
  append(kSceneNouns);
  append(kOther);
}

const Vocabulary& Vocabulary::instance() {
  static const Vocabulary v;
  return v;
}

int Vocabulary::id(std::string_view word) const {
  for (std::size_t i = 0; i < words_.size(); ++i)
    if (words_[i] == word) return static_cast<int>(i);
  return kUnkId;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
    throw Error("token id " + std::to_string(id) + " outside the vocabulary");
  return words_[static_cast<std::size_t>(id)];
}

std::string TokenSeq::text() const {
  const auto& v = Vocabulary::instance();
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += v.word(tokens[i]);
  }
  return s;
}

TokenSeq tokenize(std::string_view expression) {
  const auto& vocab = Vocabulary::instance();
  TokenSeq seq;
  seq.raw = std::string(expression);
  std::string word;
  auto flush = [&] {
    if (!word.empty() && seq.tokens.size() < kMaxTokens) seq.tokens.push_back(vocab.id(word));
    word.clear();
  };
  for (char ch : expression) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '<' || c == '>')
      word += static_cast<char>(std::tolower(c));
    else
      flush();
  }
  flush();
  if (seq.tokens.empty()) throw Error("cannot tokenize an empty expression");
  return seq;
}

LinguisticCues decouple(const TokenSeq& tokens) {
  const auto& vocab = Vocabulary::instance();
  const std::size_t n = tokens.tokens.size();
  std::vector<std::string_view> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = vocab.word(tokens.tokens[i]);

  std::vector<bool> spatial(n, false);
  std::size_t i = 0;
  while (i < n) {
    if (!is_locative_trigger(w[i])) {
      ++i;
      continue;
    }
    std::size_t end = i + 1;  // one past the chunk
    while (end < n && is_locative_body(w[end])) ++end;
    std::size_t k = end;
    while (k < n && is_adjective(w[k])) ++k;
    if (k < n && is_noun(w[k])) end = k + 1;
    for (std::size_t p = i; p < end; ++p) spatial[p] = true;
    i = end;
  }

  LinguisticCues cues;
  cues.context = tokens;
  for (std::size_t p = 0; p < n; ++p) {
    if (spatial[p])
      cues.spatial_positions.push_back(p);
    else if (is_attribute_word(w[p]))
      cues.attribute_positions.push_back(p);
  }
  cues.spatial = make_cue(tokens, cues.spatial_positions);
  cues.attribute = make_cue(tokens, cues.attribute_positions);
  return cues;
}

}  // namespace provg::lang
