#pragma once

// Alignment training stages. Stage 2 (item-text) trains the item projector
// and GLLM head; stage 3 (user-item) trains the user projector (or, for the
// w/o UA ablation, a per-user id embedding table) and the head, keeping the
// backbone and graph embeddings frozen throughout.

#include <chrono>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "glta/adam.hpp"
#include "glta/config.hpp"
#include "glta/errors.hpp"
#include "glta/gllm.hpp"
#include "glta/graph.hpp"
#include "glta/projector.hpp"
#include "glta/rng.hpp"
#include "glta/templates.hpp"
#include "glta/tensor.hpp"
#include "glta/textgen.hpp"
#include "glta/trainlog.hpp"
#include "glta/transformer.hpp"

namespace glta::align {

// Item-text alignment epochs [from_epoch, to_epoch). Only the item projector
// and head receive gradients; the caller owns the optimizer so moments
// persist across resumes.
template <class S>
void train_stage2(const nd::Tensor<S>& e_item, const std::vector<std::string>& descriptions,
                  const lm::Vocabulary& vocab, const lm::TransformerWeights<S>& backbone,
                  Projector<S>& item_proj, gllm::GllmHead<S>& head, nd::Adam<S>& opt,
                  const RunConfig& cfg, int64_t from_epoch, int64_t to_epoch,
                  std::vector<TrainRecord>& records,
                  std::vector<std::string>* warnings = nullptr) {
  std::vector<int32_t> all_items(static_cast<size_t>(e_item.shape()[0]));
  std::iota(all_items.begin(), all_items.end(), 0);
  for (int64_t epoch = from_epoch; epoch < to_epoch; ++epoch) {
    const int64_t t0 = steady_now_ms();
    Rng rng = Rng::derive(cfg.seed, "stage2", static_cast<uint64_t>(epoch));
    std::vector<int32_t> order = all_items;
    rng.shuffle(order);
    auto batches = build_item_text_batches(order, descriptions, vocab, rng,
                                           static_cast<int>(cfg.align_batch_items),
                                           static_cast<int>(cfg.align_desc_cap), cfg.lm_max_len,
                                           epoch == from_epoch ? warnings : nullptr);
    double total = 0.0;
    int64_t count = 0;
    for (const auto& seq : batches) {
      nd::Tape<S> tape;
      nd::Tensor<S> v_items = project_items(&tape, e_item, item_proj);
      lm::InjectionSources<S> sources;
      sources.item_rows = v_items;
      nd::Tensor<S> hidden = lm::lm_forward(&tape, backbone, seq, sources);
      nd::Tensor<S> logits = gllm::compute_item_logits(&tape, hidden, head);
      nd::Tensor<S> loss = gllm::gllm_loss(&tape, logits, seq.supervision,
                                           static_cast<int64_t>(seq.supervision.size()));
      total += static_cast<double>(loss.scalar_value());
      ++count;
      tape.backward(loss);
      opt.step();
      tape.clear();
    }
    records.push_back({epoch, count ? total / static_cast<double>(count) : 0.0,
                       steady_now_ms() - t0});
  }
}

// Per-user training assets for stage 3.
struct UserAssets {
  std::vector<std::vector<int32_t>> context;            // per user, shown history
  std::vector<std::vector<int32_t>> label_pool;         // per user, label candidates
  std::vector<std::vector<int32_t>> profile_tokens;     // per user
  std::vector<std::vector<int32_t>> prediction_tokens;  // per user
};

// Chooses per-user context (most recent when timestamps order the edges,
// otherwise a seeded random subset) and the label pool for the configured
// policy. Under heldout, users whose interactions all fit in the context fall
// back to the full pool.
inline std::vector<int32_t> pick_context(const std::vector<int32_t>& train_items,
                                         const std::vector<std::pair<int32_t, int64_t>>& timed,
                                         int64_t cap, Rng& rng) {
  if (static_cast<int64_t>(train_items.size()) <= cap) return train_items;
  if (!timed.empty()) {
    std::vector<std::pair<int64_t, int32_t>> by_time;
    for (const auto& [item, ts] : timed) by_time.emplace_back(ts, item);
    std::sort(by_time.begin(), by_time.end());
    std::vector<int32_t> out;
    for (size_t i = by_time.size() - static_cast<size_t>(cap); i < by_time.size(); ++i)
      out.push_back(by_time[i].second);
    std::sort(out.begin(), out.end());
    return out;
  }
  std::vector<int32_t> shuffled = train_items;
  rng.shuffle(shuffled);
  shuffled.resize(static_cast<size_t>(cap));
  std::sort(shuffled.begin(), shuffled.end());
  return shuffled;
}

// User-item alignment epochs [from_epoch, to_epoch). `user_rows_source`
// builds the injected user rows on the tape: the projected graph embeddings
// by default, or the trainable id table for the w/o UA ablation.
template <class S>
void train_stage3(const std::vector<std::vector<int32_t>>& user_train_items,
                  const UserAssets& assets, const lm::Vocabulary& vocab,
                  const lm::TransformerWeights<S>& backbone, const nd::Tensor<S>& e_user,
                  Projector<S>* user_proj, nd::Tensor<S>* user_id_table,
                  const nd::Tensor<S>& e_item, Projector<S>& item_proj, gllm::GllmHead<S>& head,
                  nd::Adam<S>& opt, const RunConfig& cfg, int64_t from_epoch, int64_t to_epoch,
                  std::vector<TrainRecord>& records,
                  std::vector<std::string>* warnings = nullptr) {
  const auto num_users = static_cast<int64_t>(user_train_items.size());
  for (int64_t epoch = from_epoch; epoch < to_epoch; ++epoch) {
    const int64_t t0 = steady_now_ms();
    Rng rng = Rng::derive(cfg.seed, "stage3", static_cast<uint64_t>(epoch));
    std::vector<int32_t> user_order;
    for (int64_t u = 0; u < num_users; ++u)
      if (!user_train_items[static_cast<size_t>(u)].empty())
        user_order.push_back(static_cast<int32_t>(u));
      else if (epoch == from_epoch && warnings)
        warnings->push_back("stage3: user " + std::to_string(u) +
                            " has no training interactions; skipped");
    rng.shuffle(user_order);

    double total = 0.0;
    int64_t count = 0;
    for (int32_t u : user_order) {
      std::vector<int32_t> labels = assets.label_pool[static_cast<size_t>(u)];
      if (labels.empty()) continue;
      rng.shuffle(labels);
      if (static_cast<int64_t>(labels.size()) > cfg.align_k)
        labels.resize(static_cast<size_t>(cfg.align_k));

      UserTemplateInputs in;
      in.user = u;
      in.context_items = assets.context[static_cast<size_t>(u)];
      in.profile_tokens = assets.profile_tokens[static_cast<size_t>(u)];
      in.prediction_tokens = assets.prediction_tokens[static_cast<size_t>(u)];
      in.k = static_cast<int>(cfg.align_k);
      in.include_profile = !cfg.no_profile;
      in.include_prediction = !cfg.no_prediction;
      lm::MixedSequence seq = build_user_item_template(in, vocab);
      lm::assign_supervision(seq, labels);

      nd::Tape<S> tape;
      lm::InjectionSources<S> sources;
      sources.item_rows = project_rows(&tape, e_item, item_proj);
      sources.user_rows =
          user_id_table ? *user_id_table : project_rows(&tape, e_user, *user_proj);
      nd::Tensor<S> hidden = lm::lm_forward(&tape, backbone, seq, sources);
      nd::Tensor<S> logits = gllm::compute_item_logits(&tape, hidden, head);
      nd::Tensor<S> loss = gllm::gllm_loss(&tape, logits, seq.supervision, cfg.align_k);
      total += static_cast<double>(loss.scalar_value());
      ++count;
      tape.backward(loss);
      opt.step();
      tape.clear();
    }
    records.push_back({epoch, count ? total / static_cast<double>(count) : 0.0,
                       steady_now_ms() - t0});
  }
}

// Assembles the per-user stage-3 assets from the training split, generated
// texts and config.
inline UserAssets build_user_assets(
    const std::vector<std::vector<int32_t>>& user_train_items,
    const std::vector<std::pair<int32_t, int32_t>>& train_edges,
    const std::vector<int64_t>& train_edge_times, bool has_timestamps,
    const std::vector<textgen::UserTextAssets>& texts, const lm::Vocabulary& vocab,
    const RunConfig& cfg) {
  const size_t num_users = user_train_items.size();
  UserAssets assets;
  assets.context.resize(num_users);
  assets.label_pool.resize(num_users);
  assets.profile_tokens.resize(num_users);
  assets.prediction_tokens.resize(num_users);

  std::vector<std::vector<std::pair<int32_t, int64_t>>> timed(num_users);
  if (has_timestamps) {
    for (size_t e = 0; e < train_edges.size(); ++e)
      timed[static_cast<size_t>(train_edges[e].first)].emplace_back(train_edges[e].second,
                                                                    train_edge_times[e]);
  }

  for (size_t u = 0; u < num_users; ++u) {
    const auto& items = user_train_items[u];
    if (items.empty()) continue;
    Rng rng = Rng::derive(cfg.seed, "context", static_cast<uint64_t>(u));
    assets.context[u] = pick_context(items, timed[u], cfg.align_context_items, rng);
    if (cfg.align_label_policy == "heldout") {
      std::vector<int32_t> pool;
      for (int32_t i : items)
        if (!std::binary_search(assets.context[u].begin(), assets.context[u].end(), i))
          pool.push_back(i);
      assets.label_pool[u] = pool.empty() ? items : pool;
    } else {
      assets.label_pool[u] = items;
    }
  }

  for (const auto& t : texts) {
    if (t.user_id < 0 || static_cast<size_t>(t.user_id) >= num_users) continue;
    std::vector<int32_t> p = vocab.encode(t.profile_text);
    std::vector<int32_t> q = vocab.encode(t.prediction_text);
    if (static_cast<int64_t>(p.size()) > cfg.align_text_cap)
      p.resize(static_cast<size_t>(cfg.align_text_cap));
    if (static_cast<int64_t>(q.size()) > cfg.align_text_cap)
      q.resize(static_cast<size_t>(cfg.align_text_cap));
    assets.profile_tokens[static_cast<size_t>(t.user_id)] = std::move(p);
    assets.prediction_tokens[static_cast<size_t>(t.user_id)] = std::move(q);
  }
  return assets;
}

}  // namespace glta::align
