#pragma once

// Instruction template assembly. Templates are MixedSequences; answer
// positions are ITEM_SLOT query tokens whose hidden states the GLLM head
// turns into item logits.

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "glta/errors.hpp"
#include "glta/rng.hpp"
#include "glta/transformer.hpp"
#include "glta/vocab.hpp"

namespace glta::align {

inline void push_text(lm::MixedSequence& seq, const lm::Vocabulary& vocab,
                      const std::string& text) {
  for (int32_t id : vocab.encode(text)) seq.push_token(id);
}

// Item-text alignment template (stage 2). Layout: header; the batch's
// ITEM_SLOT + injected item-token pairs in slot_order; then each description
// in batch order followed by one answer position supervised with the item the
// description belongs to.
inline lm::MixedSequence build_item_text_template(const std::vector<int32_t>& batch_items,
                                                  const std::vector<int32_t>& slot_order,
                                                  const std::vector<std::string>& descriptions,
                                                  const lm::Vocabulary& vocab, int desc_cap) {
  if (batch_items.size() < 1) throw ContractError("item template: empty batch");
  if (slot_order.size() != batch_items.size())
    throw ContractError("item template: slot order size mismatch");
  lm::MixedSequence seq;
  seq.push_token(lm::Vocabulary::BOS);
  push_text(seq, vocab, "match each description to its item");
  for (int32_t pos : slot_order) {
    const int32_t item = batch_items[static_cast<size_t>(pos)];
    seq.push_token(lm::Vocabulary::ITEM_SLOT);
    seq.push_injected(lm::InjectOrigin::ItemNode, item);
  }
  std::vector<int32_t> labels;
  for (int32_t item : batch_items) {
    std::vector<int32_t> ids = vocab.encode(descriptions.at(static_cast<size_t>(item)));
    if (static_cast<int>(ids.size()) > desc_cap) ids.resize(static_cast<size_t>(desc_cap));
    for (int32_t id : ids) seq.push_token(id);
    seq.push_answer(lm::Vocabulary::ITEM_SLOT);
    labels.push_back(item);
  }
  seq.push_token(lm::Vocabulary::EOS);
  lm::assign_supervision(seq, labels);
  return seq;
}

// Splits items into batches whose templates fit max_len, shuffling the slot
// section of each batch. Items with no description are skipped with a
// warning.
inline std::vector<lm::MixedSequence> build_item_text_batches(
    const std::vector<int32_t>& items, const std::vector<std::string>& descriptions,
    const lm::Vocabulary& vocab, Rng& rng, int batch_items, int desc_cap, int64_t max_len,
    std::vector<std::string>* warnings = nullptr) {
  std::vector<int32_t> usable;
  for (int32_t item : items) {
    if (descriptions.at(static_cast<size_t>(item)).empty()) {
      if (warnings)
        warnings->push_back("item " + std::to_string(item) + " has no description; skipped");
      continue;
    }
    usable.push_back(item);
  }
  std::vector<lm::MixedSequence> out;
  std::vector<std::vector<int32_t>> pending;
  for (size_t start = 0; start < usable.size(); start += static_cast<size_t>(batch_items)) {
    const size_t end = std::min(usable.size(), start + static_cast<size_t>(batch_items));
    pending.emplace_back(usable.begin() + static_cast<long>(start),
                         usable.begin() + static_cast<long>(end));
  }
  while (!pending.empty()) {
    std::vector<int32_t> batch = std::move(pending.back());
    pending.pop_back();
    std::vector<int32_t> order(batch.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    lm::MixedSequence seq =
        build_item_text_template(batch, order, descriptions, vocab, desc_cap);
    if (seq.size() > max_len && batch.size() >= 2) {
      const size_t half = batch.size() / 2;
      pending.emplace_back(batch.begin(), batch.begin() + static_cast<long>(half));
      pending.emplace_back(batch.begin() + static_cast<long>(half), batch.end());
      continue;
    }
    if (seq.size() > max_len)
      throw LengthError("item template: single item does not fit maximum length", max_len);
    out.push_back(std::move(seq));
  }
  return out;
}

// User-item alignment template (stage 3 and inference). Layout: header;
// USER_SLOT + injected user token; history of ITEM_SLOT + injected item
// tokens; optional PROFILE_SLOT + profile text; optional PRED_SLOT +
// prediction text; k answer positions at the tail. Labels are assigned
// separately (per epoch during training, none at inference).
struct UserTemplateInputs {
  int32_t user = -1;
  std::vector<int32_t> context_items;
  std::vector<int32_t> profile_tokens;
  std::vector<int32_t> prediction_tokens;
  int k = 10;
  bool include_profile = true;
  bool include_prediction = true;
};

inline lm::MixedSequence build_user_item_template(const UserTemplateInputs& in,
                                                  const lm::Vocabulary& vocab) {
  if (in.user < 0) throw ContractError("user template: missing user");
  if (in.k < 1) throw ContractError("user template: k must be positive");
  lm::MixedSequence seq;
  seq.push_token(lm::Vocabulary::BOS);
  push_text(seq, vocab, "recommend items for this user");
  seq.push_token(lm::Vocabulary::USER_SLOT);
  seq.push_injected(lm::InjectOrigin::UserNode, in.user);
  for (int32_t item : in.context_items) {
    seq.push_token(lm::Vocabulary::ITEM_SLOT);
    seq.push_injected(lm::InjectOrigin::ItemNode, item);
  }
  if (in.include_profile) {
    seq.push_token(lm::Vocabulary::PROFILE_SLOT);
    for (int32_t id : in.profile_tokens) seq.push_injected(lm::InjectOrigin::Profile, id);
  }
  if (in.include_prediction) {
    seq.push_token(lm::Vocabulary::PRED_SLOT);
    for (int32_t id : in.prediction_tokens) seq.push_injected(lm::InjectOrigin::Prediction, id);
  }
  for (int i = 0; i < in.k; ++i) seq.push_answer(lm::Vocabulary::ITEM_SLOT);
  return seq;
}

// The autoregressive discipline starts from the template truncated right
// after its first answer position.
inline lm::MixedSequence truncate_after_first_answer(const lm::MixedSequence& seq) {
  if (seq.answer_positions.empty())
    throw ContractError("truncate_after_first_answer: no answer positions");
  lm::MixedSequence out;
  const int32_t first = seq.answer_positions[0];
  out.slots.assign(seq.slots.begin(), seq.slots.begin() + first + 1);
  out.answer_positions = {first};
  return out;
}

}  // namespace glta::align
