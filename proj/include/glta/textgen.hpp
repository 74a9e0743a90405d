#pragma once

// Profile and prediction token generation. The default offline summarizer is
// a pure function of its inputs so the whole pipeline runs hermetically; the
// external client speaks the OpenAI-compatible chat-completion wire shape for
// setups where a real LLM is available. Generated texts are cached on disk.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "glta/errors.hpp"
#include "glta/rng.hpp"
#include "glta/vocab.hpp"

namespace glta::textgen {

inline const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "a",    "an",   "and",  "are",  "as",   "at",   "be",   "but",  "by",   "for",
      "from", "has",  "have", "he",   "her",  "his",  "i",    "in",   "is",   "it",
      "its",  "of",   "on",   "or",   "she",  "that", "the",  "their", "they", "this",
      "to",   "was",  "were", "with", "you",  "your", "not",  "no",   "so",   "we"};
  return words;
}

inline constexpr const char* kNoHistoryText = "unknown-preferences";

namespace detail {

// Weighted term frequency over history descriptions; ties broken
// lexicographically, top-n terms joined by spaces.
inline std::string top_terms(const std::vector<std::string>& descriptions,
                             const std::vector<double>& weights, int top_n) {
  std::unordered_map<std::string, double> score;
  for (size_t i = 0; i < descriptions.size(); ++i) {
    for (const std::string& w : lm::tokenize_words(descriptions[i])) {
      if (stopwords().count(w)) continue;
      score[w] += weights[i];
    }
  }
  std::vector<std::pair<std::string, double>> order(score.begin(), score.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(order.size()) > top_n) order.resize(static_cast<size_t>(top_n));
  std::string out;
  for (size_t i = 0; i < order.size(); ++i) {
    if (i) out.push_back(' ');
    out += order[i].first;
  }
  return out;
}

}  // namespace detail

// Top-N TF-scored content words across the user's interacted item
// descriptions.
inline std::string offline_profile(const std::vector<std::string>& history_descriptions,
                                   int top_n) {
  if (history_descriptions.empty()) return kNoHistoryText;
  std::vector<double> weights(history_descriptions.size(), 1.0);
  std::string out = detail::top_terms(history_descriptions, weights, top_n);
  return out.empty() ? kNoHistoryText : out;
}

// Like the profile but weighted toward the most recent interactions.
// Histories arrive oldest first; entry j carries weight 1 + recency_weight*j.
// A zero recency weight reduces to offline_profile.
inline std::string offline_prediction(const std::vector<std::string>& history_descriptions,
                                      const std::string& /*profile_text*/, int top_n,
                                      double recency_weight) {
  if (history_descriptions.empty()) return kNoHistoryText;
  std::vector<double> weights(history_descriptions.size());
  for (size_t j = 0; j < weights.size(); ++j)
    weights[j] = 1.0 + recency_weight * static_cast<double>(j);
  std::string out = detail::top_terms(history_descriptions, weights, top_n);
  return out.empty() ? kNoHistoryText : out;
}

// Prompt templates for the external generator (paraphrased layouts; the cache
// key hashes them so a template change invalidates cached texts).
inline std::string profile_prompt(const std::vector<std::string>& history_descriptions) {
  std::string p =
      "Summarize this user's traits from the items they interacted with. "
      "Reply with a short comma-free phrase.\nItems:\n";
  for (const std::string& d : history_descriptions) p += "- " + d + "\n";
  return p;
}

inline std::string prediction_prompt(const std::vector<std::string>& history_descriptions,
                                     const std::string& profile_text) {
  std::string p =
      "Given the user's profile and interaction history, describe what they are "
      "likely to enjoy next. Reply with a short phrase.\nProfile: " +
      profile_text + "\nItems:\n";
  for (const std::string& d : history_descriptions) p += "- " + d + "\n";
  return p;
}

struct ChatConfig {
  std::string endpoint;  // base URL, e.g. http://127.0.0.1:8080
  std::string model;
  std::string api_key;
  int timeout_ms = 10000;
  int max_attempts = 3;
  int backoff_base_ms = 200;
};

// Declared here, defined in textgen_http.hpp to keep httplib out of
// translation units that never talk to the network.
std::string chat_complete(const ChatConfig& cfg, const std::string& prompt);

struct UserTextAssets {
  int32_t user_id = -1;
  std::string profile_text;
  std::string prediction_text;
  std::string provenance;  // external | offline | cached
  std::string model_name;
};

// JSONL cache {user_id, mode, template_hash, text}; one record per line,
// appended as entries are produced. The key hashes the prompt template text
// together with the model name.
class TextCache {
 public:
  TextCache() = default;

  explicit TextCache(std::filesystem::path file) : file_(std::move(file)) {
    std::ifstream in(file_);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("user_id") || !j.contains("mode") ||
          !j.contains("template_hash") || !j.contains("text"))
        throw ParseError("text cache: malformed record at line " + std::to_string(line_no));
      entries_[{j["user_id"].get<int32_t>(), j["mode"].get<std::string>(),
                j["template_hash"].get<uint64_t>()}] = j["text"].get<std::string>();
    }
  }

  std::optional<std::string> get(int32_t user, const std::string& mode,
                                 uint64_t template_hash) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find({user, mode, template_hash});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(int32_t user, const std::string& mode, uint64_t template_hash,
           const std::string& text) {
    std::lock_guard<std::mutex> lock(mu_);
    auto key = std::make_tuple(user, mode, template_hash);
    if (entries_.count(key)) return;
    entries_[key] = text;
    if (!file_.empty()) {
      std::ofstream out(file_, std::ios::app);
      nlohmann::json j = {
          {"user_id", user}, {"mode", mode}, {"template_hash", template_hash}, {"text", text}};
      out << j.dump() << "\n";
    }
  }

  size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_.size();
  }

 private:
  std::filesystem::path file_;
  std::map<std::tuple<int32_t, std::string, uint64_t>, std::string> entries_;
  mutable std::mutex mu_;
};

inline uint64_t template_hash(const std::string& template_text, const std::string& model) {
  return fnv1a64(template_text + "|" + model);
}

}  // namespace glta::textgen
