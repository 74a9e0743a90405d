#pragma once

// Run configuration: a flat key=value text file with [sections]; every key is
// also a --section.key=value command-line flag. The same text format is
// embedded into checkpoints as the replayable config snapshot.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "glta/errors.hpp"

namespace glta {

struct RunConfig {
  // [run]
  uint64_t seed = 42;
  std::string out_dir = "runs/default";
  bool force = false;
  bool resume = false;

  // [data]
  std::string interactions;
  std::string items;
  bool synthetic = false;

  // [synth]
  int64_t synth_users = 40;
  int64_t synth_items = 60;
  int64_t synth_clusters = 2;
  double synth_in_cluster_p = 0.3;
  double synth_noise_p = 0.02;
  int64_t synth_vocab_per_cluster = 12;
  int64_t synth_desc_words = 5;

  // [graph]
  int64_t graph_d = 64;
  int64_t graph_layers = 2;
  double graph_lr = 1e-3;
  int64_t graph_epochs = 200;
  int64_t graph_neg_samples = 1;
  double graph_l2 = 1e-5;

  // [lm]
  int64_t lm_d_model = 128;
  int64_t lm_depth = 4;
  int64_t lm_heads = 4;
  int64_t lm_max_len = 256;
  int64_t lm_vocab_cap = 5000;
  bool lm_pretrain = false;
  int64_t lm_pretrain_epochs = 3;
  double lm_pretrain_lr = 1e-3;

  // [align]
  int64_t align_k = 10;
  std::string align_label_policy = "paper";  // paper | heldout
  int64_t align_context_items = 8;
  bool align_freeze_item_projector = true;
  int64_t align_stage2_epochs = 80;
  int64_t align_stage3_epochs = 150;
  double align_lr = 2e-3;
  int64_t align_batch_items = 6;
  int64_t align_desc_cap = 12;
  int64_t align_text_cap = 6;

  // [gen]
  std::string gen_mode = "offline";  // offline | external
  std::string gen_endpoint;
  std::string gen_model;
  int64_t gen_top_n = 5;
  double gen_recency_weight = 1.0;
  int64_t gen_timeout_ms = 10000;
  bool gen_fallback_offline = true;
  std::string gen_cache;  // defaults to <out_dir>/profiles.jsonl

  // [eval]
  double eval_ratio = 0.8;
  std::string eval_cutoffs = "5,10";
  std::string eval_mode = "firstk";  // firstk | fl | ar | dot | all

  // [ablation]
  bool no_item_align = false;
  bool no_user_align = false;
  bool no_profile = false;
  bool no_prediction = false;

  // Single definition point for (section, key) <-> field. The visitor gets
  // typed references, so the text form, the parser and the CLI flags cannot
  // drift apart.
  template <class F>
  static void for_each_field(RunConfig& c, F&& f) {
    f("run", "seed", c.seed);
    f("run", "out_dir", c.out_dir);
    f("run", "force", c.force);
    f("run", "resume", c.resume);

    f("data", "interactions", c.interactions);
    f("data", "items", c.items);
    f("data", "synthetic", c.synthetic);

    f("synth", "users", c.synth_users);
    f("synth", "items", c.synth_items);
    f("synth", "clusters", c.synth_clusters);
    f("synth", "in_cluster_p", c.synth_in_cluster_p);
    f("synth", "noise_p", c.synth_noise_p);
    f("synth", "vocab_per_cluster", c.synth_vocab_per_cluster);
    f("synth", "desc_words", c.synth_desc_words);

    f("graph", "d", c.graph_d);
    f("graph", "layers", c.graph_layers);
    f("graph", "lr", c.graph_lr);
    f("graph", "epochs", c.graph_epochs);
    f("graph", "neg_samples", c.graph_neg_samples);
    f("graph", "l2", c.graph_l2);

    f("lm", "d_model", c.lm_d_model);
    f("lm", "depth", c.lm_depth);
    f("lm", "heads", c.lm_heads);
    f("lm", "max_len", c.lm_max_len);
    f("lm", "vocab_cap", c.lm_vocab_cap);
    f("lm", "pretrain", c.lm_pretrain);
    f("lm", "pretrain_epochs", c.lm_pretrain_epochs);
    f("lm", "pretrain_lr", c.lm_pretrain_lr);

    f("align", "k", c.align_k);
    f("align", "label_policy", c.align_label_policy);
    f("align", "context_items", c.align_context_items);
    f("align", "freeze_item_projector", c.align_freeze_item_projector);
    f("align", "stage2_epochs", c.align_stage2_epochs);
    f("align", "stage3_epochs", c.align_stage3_epochs);
    f("align", "lr", c.align_lr);
    f("align", "batch_items", c.align_batch_items);
    f("align", "desc_cap", c.align_desc_cap);
    f("align", "text_cap", c.align_text_cap);

    f("gen", "mode", c.gen_mode);
    f("gen", "endpoint", c.gen_endpoint);
    f("gen", "model", c.gen_model);
    f("gen", "top_n", c.gen_top_n);
    f("gen", "recency_weight", c.gen_recency_weight);
    f("gen", "timeout_ms", c.gen_timeout_ms);
    f("gen", "fallback_offline", c.gen_fallback_offline);
    f("gen", "cache", c.gen_cache);

    f("eval", "ratio", c.eval_ratio);
    f("eval", "cutoffs", c.eval_cutoffs);
    f("eval", "mode", c.eval_mode);

    f("ablation", "no_item_align", c.no_item_align);
    f("ablation", "no_user_align", c.no_user_align);
    f("ablation", "no_profile", c.no_profile);
    f("ablation", "no_prediction", c.no_prediction);
  }

  std::string to_text() const {
    std::ostringstream out;
    out.precision(17);
    std::string current_section;
    auto& self = const_cast<RunConfig&>(*this);
    for_each_field(self, [&](const std::string& section, const std::string& key, auto& ref) {
      if (section != current_section) {
        if (!current_section.empty()) out << "\n";
        out << "[" << section << "]\n";
        current_section = section;
      }
      out << key << " = " << field_to_string(ref) << "\n";
    });
    return out.str();
  }

  static RunConfig from_text(const std::string& text) {
    RunConfig c;
    c.apply_text(text);
    return c;
  }

  static RunConfig from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str());
  }

  // Applies `key = value` lines on top of the current values.
  void apply_text(const std::string& text) {
    std::istringstream in(text);
    std::string line, section;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[' && t.back() == ']') {
        section = t.substr(1, t.size() - 2);
        continue;
      }
      const size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config: expected key = value at line " + std::to_string(line_no));
      set(section + "." + trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
  }

  void set(const std::string& dotted_key, const std::string& value) {
    bool found = false;
    for_each_field(*this, [&](const std::string& section, const std::string& key, auto& ref) {
      if (section + "." + key == dotted_key) {
        parse_into(dotted_key, value, ref);
        found = true;
      }
    });
    if (!found) throw ConfigError("config: unknown key '" + dotted_key + "'");
  }

  std::vector<int> cutoffs() const {
    std::vector<int> out;
    std::istringstream in(eval_cutoffs);
    std::string part;
    while (std::getline(in, part, ',')) {
      if (trim(part).empty()) continue;
      out.push_back(std::stoi(trim(part)));
    }
    if (out.empty()) throw ConfigError("config: eval.cutoffs is empty");
    return out;
  }

  void validate() const {
    if (align_label_policy != "paper" && align_label_policy != "heldout")
      throw ConfigError("config: align.label_policy must be paper or heldout");
    if (gen_mode != "offline" && gen_mode != "external")
      throw ConfigError("config: gen.mode must be offline or external");
    if (eval_mode != "firstk" && eval_mode != "fl" && eval_mode != "ar" && eval_mode != "dot" &&
        eval_mode != "all")
      throw ConfigError("config: eval.mode must be firstk, fl, ar, dot or all");
    if (eval_ratio <= 0.0 || eval_ratio > 1.0)
      throw ConfigError("config: eval.ratio must be in (0, 1]");
    if (lm_d_model % lm_heads != 0)
      throw ConfigError("config: lm.d_model must be divisible by lm.heads");
    if (align_k < 1) throw ConfigError("config: align.k must be positive");
    for (int k : cutoffs())
      if (k < 1 || k > align_k)
        throw ConfigError("config: cutoff " + std::to_string(k) +
                          " outside 1..align.k=" + std::to_string(align_k));
    // Worst-case user template: header(6) + user pair(2) + context pairs +
    // profile/prediction sections + k answers.
    const int64_t budget = 7 + 2 + 2 * align_context_items + 2 * (align_text_cap + 1) + align_k;
    if (budget > lm_max_len)
      throw ConfigError("config: align.k plus prompt budget (" + std::to_string(budget) +
                        ") exceeds lm.max_len " + std::to_string(lm_max_len));
    if (align_batch_items < 2) throw ConfigError("config: align.batch_items must be >= 2");
    if (!synthetic && (interactions.empty() || items.empty()))
      throw ConfigError("config: set data.synthetic=true or provide data.interactions and "
                        "data.items paths");
  }

  std::string cache_path() const {
    return gen_cache.empty() ? out_dir + "/profiles.jsonl" : gen_cache;
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  static std::string field_to_string(const std::string& v) { return v; }
  static std::string field_to_string(bool v) { return v ? "true" : "false"; }
  static std::string field_to_string(uint64_t v) { return std::to_string(v); }
  static std::string field_to_string(int64_t v) { return std::to_string(v); }
  static std::string field_to_string(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  }

  static void parse_into(const std::string& key, const std::string& value, std::string& ref) {
    ref = value;
  }
  static void parse_into(const std::string& key, const std::string& value, bool& ref) {
    if (value == "true" || value == "1")
      ref = true;
    else if (value == "false" || value == "0")
      ref = false;
    else
      throw ConfigError("config: bad boolean '" + value + "' for " + key);
  }
  static void parse_into(const std::string& key, const std::string& value, uint64_t& ref) {
    try {
      ref = std::stoull(value);
    } catch (const std::exception&) {
      throw ConfigError("config: bad integer '" + value + "' for " + key);
    }
  }
  static void parse_into(const std::string& key, const std::string& value, int64_t& ref) {
    try {
      ref = std::stoll(value);
    } catch (const std::exception&) {
      throw ConfigError("config: bad integer '" + value + "' for " + key);
    }
  }
  static void parse_into(const std::string& key, const std::string& value, double& ref) {
    try {
      ref = std::stod(value);
    } catch (const std::exception&) {
      throw ConfigError("config: bad number '" + value + "' for " + key);
    }
  }
};

}  // namespace glta
