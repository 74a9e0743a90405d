#pragma once

// A small decoder-only transformer used as the frozen language backbone.
// Sequences mix ordinary vocabulary tokens with injected continuous
// embeddings (projected graph nodes, profile/prediction text); injected
// vectors enter exactly at their slot, bypassing the token table.

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "glta/adam.hpp"
#include "glta/errors.hpp"
#include "glta/rng.hpp"
#include "glta/tensor.hpp"
#include "glta/vocab.hpp"

namespace glta::lm {

enum class InjectOrigin : uint8_t { UserNode, ItemNode, Profile, Prediction };

struct MixedSequence {
  struct Slot {
    bool injected = false;
    int32_t token = -1;               // vocab id when !injected
    InjectOrigin origin = InjectOrigin::ItemNode;
    int32_t ref = -1;                 // row in the origin matrix / token id for text
    std::vector<float> raw;           // explicit vector (width d_model) when ref < 0
  };

  std::vector<Slot> slots;
  std::vector<int32_t> answer_positions;               // candidate supervision slots, in order
  std::vector<std::pair<int32_t, int32_t>> supervision; // (position, target item id)

  int64_t size() const { return static_cast<int64_t>(slots.size()); }

  void push_token(int32_t id) {
    Slot s;
    s.token = id;
    slots.push_back(std::move(s));
  }
  void push_injected(InjectOrigin origin, int32_t ref) {
    Slot s;
    s.injected = true;
    s.origin = origin;
    s.ref = ref;
    slots.push_back(std::move(s));
  }
  void push_injected_raw(InjectOrigin origin, std::vector<float> vec) {
    Slot s;
    s.injected = true;
    s.origin = origin;
    s.raw = std::move(vec);
    slots.push_back(std::move(s));
  }
  void push_answer(int32_t query_token) {
    answer_positions.push_back(static_cast<int32_t>(slots.size()));
    push_token(query_token);
  }
};

// Assigns labels to the first |labels| answer positions.
inline void assign_supervision(MixedSequence& seq, const std::vector<int32_t>& labels) {
  if (labels.size() > seq.answer_positions.size())
    throw ContractError("assign_supervision: more labels than answer positions");
  seq.supervision.clear();
  for (size_t i = 0; i < labels.size(); ++i)
    seq.supervision.emplace_back(seq.answer_positions[i], labels[i]);
}

template <class S>
struct TransformerWeights {
  int64_t d_model = 0, n_heads = 0, n_layers = 0, max_len = 0, vocab = 0;

  nd::Tensor<S> tok_table;  // vocab x d_model
  nd::Tensor<S> pos_table;  // max_len x d_model

  struct Layer {
    nd::Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
    nd::Tensor<S> ln1_g, ln1_b, ln2_g, ln2_b;
    nd::Tensor<S> w1, b1, w2, b2;  // MLP d -> 4d -> d
  };
  std::vector<Layer> layers;
  nd::Tensor<S> lnf_g, lnf_b;

  static TransformerWeights init(Rng& rng, int64_t vocab, int64_t d_model, int64_t n_heads,
                                 int64_t n_layers, int64_t max_len, double init_std = 0.02) {
    if (d_model % n_heads != 0)
      throw ContractError("transformer: d_model must be divisible by head count");
    TransformerWeights w;
    w.d_model = d_model;
    w.n_heads = n_heads;
    w.n_layers = n_layers;
    w.max_len = max_len;
    w.vocab = vocab;
    w.tok_table = nd::Tensor<S>::randn(rng, {vocab, d_model}, init_std);
    w.pos_table = nd::Tensor<S>::randn(rng, {max_len, d_model}, init_std);
    for (int64_t l = 0; l < n_layers; ++l) {
      Layer lay;
      lay.wq = nd::Tensor<S>::randn(rng, {d_model, d_model}, init_std);
      lay.bq = nd::Tensor<S>::zeros({d_model});
      lay.wk = nd::Tensor<S>::randn(rng, {d_model, d_model}, init_std);
      lay.bk = nd::Tensor<S>::zeros({d_model});
      lay.wv = nd::Tensor<S>::randn(rng, {d_model, d_model}, init_std);
      lay.bv = nd::Tensor<S>::zeros({d_model});
      lay.wo = nd::Tensor<S>::randn(rng, {d_model, d_model}, init_std);
      lay.bo = nd::Tensor<S>::zeros({d_model});
      lay.ln1_g = nd::Tensor<S>::full({d_model}, S(1));
      lay.ln1_b = nd::Tensor<S>::zeros({d_model});
      lay.ln2_g = nd::Tensor<S>::full({d_model}, S(1));
      lay.ln2_b = nd::Tensor<S>::zeros({d_model});
      lay.w1 = nd::Tensor<S>::randn(rng, {d_model, 4 * d_model}, init_std);
      lay.b1 = nd::Tensor<S>::zeros({4 * d_model});
      lay.w2 = nd::Tensor<S>::randn(rng, {4 * d_model, d_model}, init_std);
      lay.b2 = nd::Tensor<S>::zeros({d_model});
      w.layers.push_back(std::move(lay));
    }
    w.lnf_g = nd::Tensor<S>::full({d_model}, S(1));
    w.lnf_b = nd::Tensor<S>::zeros({d_model});
    return w;
  }

  std::vector<std::pair<std::string, nd::Tensor<S>>> named_params() {
    std::vector<std::pair<std::string, nd::Tensor<S>>> out;
    out.emplace_back("lm.tok_table", tok_table);
    out.emplace_back("lm.pos_table", pos_table);
    for (size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "lm.layer" + std::to_string(l) + ".";
      Layer& L = layers[l];
      out.emplace_back(p + "wq", L.wq);
      out.emplace_back(p + "bq", L.bq);
      out.emplace_back(p + "wk", L.wk);
      out.emplace_back(p + "bk", L.bk);
      out.emplace_back(p + "wv", L.wv);
      out.emplace_back(p + "bv", L.bv);
      out.emplace_back(p + "wo", L.wo);
      out.emplace_back(p + "bo", L.bo);
      out.emplace_back(p + "ln1_g", L.ln1_g);
      out.emplace_back(p + "ln1_b", L.ln1_b);
      out.emplace_back(p + "ln2_g", L.ln2_g);
      out.emplace_back(p + "ln2_b", L.ln2_b);
      out.emplace_back(p + "w1", L.w1);
      out.emplace_back(p + "b1", L.b1);
      out.emplace_back(p + "w2", L.w2);
      out.emplace_back(p + "b2", L.b2);
    }
    out.emplace_back("lm.final_ln_g", lnf_g);
    out.emplace_back("lm.final_ln_b", lnf_b);
    return out;
  }

  void set_trainable(bool trainable) {
    for (auto& [name, t] : named_params()) {
      t.set_requires_grad(trainable);
      if (!trainable) t.drop_grad();
    }
  }

  uint64_t checksum() {
    uint64_t h = 1469598103934665603ULL;
    for (auto& [name, t] : named_params()) {
      h = fnv1a64_bytes(name.data(), name.size(), h);
      h = fnv1a64_bytes(t.values().data(), t.values().size() * sizeof(S), h);
    }
    return h;
  }
};

// Sources of injected rows, indexed by MixedSequence slot refs. Profile and
// prediction slots resolve through the frozen token table.
template <class S>
struct InjectionSources {
  nd::Tensor<S> user_rows;  // |U| x d_model (projected users or id table)
  nd::Tensor<S> item_rows;  // |I| x d_model (projected items)
};

// Last-layer hidden states per position (pre-LN blocks, final layernorm).
template <class S>
nd::Tensor<S> lm_forward(nd::Tape<S>* tape, const TransformerWeights<S>& w,
                         const MixedSequence& seq, const InjectionSources<S>& sources = {}) {
  const int64_t len = seq.size();
  if (len == 0) throw ContractError("lm_forward: empty sequence");
  if (len > w.max_len)
    throw LengthError("lm_forward: sequence length " + std::to_string(len) +
                          " exceeds maximum " + std::to_string(w.max_len),
                      w.max_len);
  const int64_t d = w.d_model;

  std::vector<nd::RowRef<S>> refs;
  refs.reserve(static_cast<size_t>(len));
  for (int64_t p = 0; p < len; ++p) {
    const auto& slot = seq.slots[static_cast<size_t>(p)];
    if (!slot.injected) {
      if (slot.token < 0 || slot.token >= w.vocab)
        throw IndexError("lm_forward: token id " + std::to_string(slot.token) +
                         " out of vocabulary at position " + std::to_string(p));
      refs.push_back({w.tok_table, slot.token});
      continue;
    }
    if (slot.ref < 0) {
      if (static_cast<int64_t>(slot.raw.size()) != d)
        throw DimensionError("lm_forward: injected vector width " +
                             std::to_string(slot.raw.size()) + " != d_model " +
                             std::to_string(d));
      std::vector<S> row(slot.raw.begin(), slot.raw.end());
      refs.push_back({nd::Tensor<S>::from({1, d}, std::move(row)), 0});
      continue;
    }
    switch (slot.origin) {
      case InjectOrigin::UserNode:
        if (!sources.user_rows.defined())
          throw ContractError("lm_forward: sequence injects user rows but none provided");
        refs.push_back({sources.user_rows, slot.ref});
        break;
      case InjectOrigin::ItemNode:
        if (!sources.item_rows.defined())
          throw ContractError("lm_forward: sequence injects item rows but none provided");
        refs.push_back({sources.item_rows, slot.ref});
        break;
      case InjectOrigin::Profile:
      case InjectOrigin::Prediction:
        refs.push_back({w.tok_table, slot.ref});
        break;
    }
  }

  nd::Tensor<S> x = nd::assemble_rows(tape, refs, d);
  std::vector<int32_t> positions(static_cast<size_t>(len));
  for (int64_t p = 0; p < len; ++p) positions[static_cast<size_t>(p)] = static_cast<int32_t>(p);
  x = nd::add(tape, x, nd::gather_rows(tape, w.pos_table, positions));

  const int64_t hd = d / w.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (const auto& L : w.layers) {
    nd::Tensor<S> a = nd::layernorm(tape, x, L.ln1_g, L.ln1_b);
    nd::Tensor<S> q = nd::add(tape, nd::matmul(tape, a, L.wq), L.bq);
    nd::Tensor<S> k = nd::add(tape, nd::matmul(tape, a, L.wk), L.bk);
    nd::Tensor<S> v = nd::add(tape, nd::matmul(tape, a, L.wv), L.bv);
    std::vector<nd::Tensor<S>> heads;
    heads.reserve(static_cast<size_t>(w.n_heads));
    for (int64_t h = 0; h < w.n_heads; ++h) {
      nd::Tensor<S> qh = nd::slice_cols(tape, q, h * hd, hd);
      nd::Tensor<S> kh = nd::slice_cols(tape, k, h * hd, hd);
      nd::Tensor<S> vh = nd::slice_cols(tape, v, h * hd, hd);
      nd::Tensor<S> scores =
          nd::mul_scalar(tape, nd::matmul(tape, qh, nd::transpose(tape, kh)), scale);
      nd::Tensor<S> probs = nd::causal_softmax_rows(tape, scores);
      heads.push_back(nd::matmul(tape, probs, vh));
    }
    nd::Tensor<S> attn =
        nd::add(tape, nd::matmul(tape, nd::concat_cols(tape, heads), L.wo), L.bo);
    x = nd::add(tape, x, attn);
    nd::Tensor<S> m = nd::layernorm(tape, x, L.ln2_g, L.ln2_b);
    nd::Tensor<S> ff = nd::add(
        tape,
        nd::matmul(tape, nd::gelu(tape, nd::add(tape, nd::matmul(tape, m, L.w1), L.b1)), L.w2),
        L.b2);
    x = nd::add(tape, x, ff);
  }
  return nd::layernorm(tape, x, w.lnf_g, w.lnf_b);
}

// Greedy decoding with an externally supplied output projection. Appends the
// argmax token each step (ties to the smaller id); stops at EOS (excluded
// from the output) or after max_new tokens. Deterministic.
template <class S>
std::vector<int32_t> greedy_decode(const TransformerWeights<S>& w, const MixedSequence& prompt,
                                   int64_t max_new, const nd::Tensor<S>& head_w,
                                   const nd::Tensor<S>& head_b, int32_t eos_id,
                                   const InjectionSources<S>& sources = {}) {
  if (prompt.size() + max_new > w.max_len)
    throw LengthError("greedy_decode: prompt plus budget exceeds maximum length", w.max_len);
  if (head_w.shape()[0] != w.d_model)
    throw DimensionError("greedy_decode: head input width " + std::to_string(head_w.shape()[0]) +
                         " != d_model " + std::to_string(w.d_model));
  const int64_t out_dim = head_w.shape()[1];
  MixedSequence cur = prompt;
  std::vector<int32_t> out;
  for (int64_t step = 0; step < max_new; ++step) {
    nd::Tensor<S> h = lm_forward<S>(nullptr, w, cur, sources);
    const int64_t last = h.shape()[0] - 1;
    int32_t best = 0;
    S best_score = S(0);
    for (int64_t j = 0; j < out_dim; ++j) {
      S s = head_b.defined() ? head_b.values()[static_cast<size_t>(j)] : S(0);
      for (int64_t c = 0; c < w.d_model; ++c) s += h.at(last, c) * head_w.at(c, j);
      if (j == 0 || s > best_score) {
        best = static_cast<int32_t>(j);
        best_score = s;
      }
    }
    if (best == eos_id) break;
    out.push_back(best);
    cur.push_token(best);
  }
  return out;
}

// Optional next-token pretraining over item descriptions, weight-tied to the
// token table. Weights end frozen either way. Returns per-epoch mean loss.
template <class S>
std::vector<double> pretrain_next_token(TransformerWeights<S>& w,
                                        const std::vector<std::vector<int32_t>>& docs,
                                        int epochs, double lr, uint64_t seed) {
  w.set_trainable(true);
  nd::Adam<S> opt({lr});
  for (auto& [name, t] : w.named_params()) opt.add_param(name, t);
  std::vector<double> losses;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng = Rng::derive(seed, "lm-pretrain", static_cast<uint64_t>(epoch));
    std::vector<int32_t> order(docs.size());
    for (size_t i = 0; i < docs.size(); ++i) order[i] = static_cast<int32_t>(i);
    rng.shuffle(order);
    double total = 0.0;
    int64_t count = 0;
    for (int32_t di : order) {
      const auto& doc = docs[static_cast<size_t>(di)];
      if (doc.empty()) continue;
      MixedSequence seq;
      seq.push_token(Vocabulary::BOS);
      std::vector<int32_t> targets;
      for (int32_t t : doc) {
        targets.push_back(t);
        seq.push_token(t);
      }
      targets.push_back(Vocabulary::EOS);
      while (seq.size() > w.max_len) {
        seq.slots.pop_back();
        targets.pop_back();
      }
      nd::Tape<S> tape;
      nd::Tensor<S> h = lm_forward(&tape, w, seq);
      nd::Tensor<S> logits = nd::matmul(&tape, h, nd::transpose(&tape, w.tok_table));
      nd::Tensor<S> loss = nd::cross_entropy(&tape, logits, targets);
      total += static_cast<double>(loss.scalar_value());
      ++count;
      tape.backward(loss);
      opt.step();
      tape.clear();
    }
    losses.push_back(count ? total / static_cast<double>(count) : 0.0);
  }
  w.set_trainable(false);
  return losses;
}

}  // namespace glta::lm
