#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "glta/errors.hpp"

namespace glta::lm {

// Lowercased word-level tokens split on anything non-alphanumeric.
inline std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    const unsigned char uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc)) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Word-level vocabulary with reserved special ids. Text tokens are ordered by
// (frequency desc, word asc) and capped, so building is deterministic.
class Vocabulary {
 public:
  enum SpecialId : int32_t {
    PAD = 0,
    BOS = 1,
    EOS = 2,
    UNK = 3,
    USER_SLOT = 4,
    ITEM_SLOT = 5,
    PROFILE_SLOT = 6,
    PRED_SLOT = 7,
    SPECIAL_COUNT = 8,
  };

  static Vocabulary build(const std::vector<std::string>& corpus, size_t max_text_tokens) {
    std::unordered_map<std::string, int64_t> freq;
    bool any = false;
    for (const std::string& doc : corpus) {
      for (std::string& w : tokenize_words(doc)) {
        any = true;
        ++freq[w];
      }
    }
    if (!any) throw ContractError("vocabulary: empty corpus");
    std::vector<std::pair<std::string, int64_t>> order(freq.begin(), freq.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (order.size() > max_text_tokens) order.resize(max_text_tokens);

    Vocabulary v;
    v.id_to_str_ = {"<pad>", "<bos>", "<eos>", "<unk>", "<user>", "<item>", "<profile>", "<pred>"};
    for (auto& [w, _] : order) v.id_to_str_.push_back(w);
    for (size_t i = 0; i < v.id_to_str_.size(); ++i)
      v.str_to_id_.emplace(v.id_to_str_[i], static_cast<int32_t>(i));
    return v;
  }

  int32_t size() const { return static_cast<int32_t>(id_to_str_.size()); }

  int32_t id_of(const std::string& word) const {
    auto it = str_to_id_.find(word);
    return it == str_to_id_.end() ? UNK : it->second;
  }

  const std::string& str_of(int32_t id) const {
    if (id < 0 || id >= size()) throw IndexError("vocabulary: id " + std::to_string(id));
    return id_to_str_[static_cast<size_t>(id)];
  }

  std::vector<int32_t> encode(const std::string& text) const {
    std::vector<int32_t> ids;
    for (const std::string& w : tokenize_words(text)) ids.push_back(id_of(w));
    return ids;
  }

  std::string decode(const std::vector<int32_t>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (i) out.push_back(' ');
      out += str_of(ids[i]);
    }
    return out;
  }

 private:
  std::vector<std::string> id_to_str_;
  std::unordered_map<std::string, int32_t> str_to_id_;
};

}  // namespace glta::lm
