#pragma once

// Graph-Language Logits Matching: a linear head over the backbone's last
// hidden states producing one logit per catalog item at each position. Every
// logit column is a real item, so emitted ids can never name a non-existent
// item. Cross-entropy supervision covers only the first k answer positions.

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "glta/errors.hpp"
#include "glta/tensor.hpp"
#include "glta/transformer.hpp"

namespace glta::gllm {

template <class S>
struct GllmHead {
  nd::Tensor<S> w;  // d_model x |I|
  nd::Tensor<S> b;  // |I|

  // Zero init makes the initial loss exactly ln|I| on any targets.
  static GllmHead zero_init(int64_t d_model, int64_t num_items, bool trainable) {
    GllmHead h;
    h.w = nd::Tensor<S>::zeros({d_model, num_items}, trainable);
    h.b = nd::Tensor<S>::zeros({num_items}, trainable);
    return h;
  }

  void set_trainable(bool trainable) {
    w.set_requires_grad(trainable);
    b.set_requires_grad(trainable);
    if (!trainable) {
      w.drop_grad();
      b.drop_grad();
    }
  }

  int64_t num_items() const { return w.shape()[1]; }

  uint64_t checksum() const {
    uint64_t h = w.checksum();
    return fnv1a64_bytes(b.values().data(), b.values().size() * sizeof(S), h);
  }
};

// Z = H*W + b, one row per sequence position.
template <class S>
nd::Tensor<S> compute_item_logits(nd::Tape<S>* tape, const nd::Tensor<S>& hidden,
                                  const GllmHead<S>& head) {
  if (hidden.ndim() != 2 || hidden.shape()[1] != head.w.shape()[0])
    throw DimensionError("gllm: hidden width " + nd::shape_str(hidden.shape()) +
                         " does not match head " + nd::shape_str(head.w.shape()));
  return nd::add(tape, nd::matmul(tape, hidden, head.w), head.b);
}

// Mean cross-entropy over the first k supervised positions; rows of Z outside
// the supervised positions contribute nothing.
template <class S>
nd::Tensor<S> gllm_loss(nd::Tape<S>* tape, const nd::Tensor<S>& z,
                        const std::vector<std::pair<int32_t, int32_t>>& targets, int64_t k) {
  if (targets.empty()) throw ContractError("gllm_loss: no supervision targets");
  if (k < 1) throw ContractError("gllm_loss: k must be positive");
  const int64_t used = std::min<int64_t>(k, static_cast<int64_t>(targets.size()));
  const int64_t items = z.shape()[1];
  std::vector<int32_t> positions, labels;
  for (int64_t t = 0; t < used; ++t) {
    const auto& [pos, item] = targets[static_cast<size_t>(t)];
    if (pos < 0 || pos >= z.shape()[0])
      throw IndexError("gllm_loss: position " + std::to_string(pos) + " outside logits of " +
                       std::to_string(z.shape()[0]) + " rows");
    if (item < 0 || item >= items)
      throw IndexError("gllm_loss: target item " + std::to_string(item) + " out of range (" +
                       std::to_string(items) + " items)");
    positions.push_back(pos);
    labels.push_back(item);
  }
  return nd::cross_entropy(tape, nd::gather_rows(tape, z, positions), labels);
}

namespace detail {

inline int32_t masked_argmax(const float* row, int64_t n, const std::vector<char>& excluded) {
  int32_t best = -1;
  float best_score = 0.f;
  for (int64_t j = 0; j < n; ++j) {
    if (excluded[static_cast<size_t>(j)]) continue;
    if (best < 0 || row[j] > best_score) {
      best = static_cast<int32_t>(j);
      best_score = row[j];
    }
  }
  return best;
}

template <class S>
inline std::vector<float> row_of(const nd::Tensor<S>& z, int64_t row) {
  std::vector<float> out(static_cast<size_t>(z.shape()[1]));
  for (int64_t j = 0; j < z.shape()[1]; ++j) out[static_cast<size_t>(j)] =
      static_cast<float>(z.at(row, j));
  return out;
}

}  // namespace detail

// Default GLTA discipline: rank t comes from the argmax of row t, skipping
// excluded and already-picked items. Ties break to the smaller item id.
template <class S>
std::vector<int32_t> infer_first_k(const nd::Tensor<S>& z, int64_t k,
                                   std::vector<char> excluded,
                                   std::vector<std::string>* warnings = nullptr) {
  const int64_t items = z.shape()[1];
  if (static_cast<int64_t>(excluded.size()) != items)
    throw DimensionError("infer_first_k: mask size mismatch");
  std::vector<int32_t> out;
  const int64_t rows = std::min<int64_t>(k, z.shape()[0]);
  for (int64_t t = 0; t < rows; ++t) {
    const auto row = detail::row_of(z, t);
    const int32_t pick = detail::masked_argmax(row.data(), items, excluded);
    if (pick < 0) break;
    out.push_back(pick);
    excluded[static_cast<size_t>(pick)] = 1;
  }
  if (static_cast<int64_t>(out.size()) < k && warnings)
    warnings->push_back("infer_first_k: only " + std::to_string(out.size()) + " of " +
                        std::to_string(k) + " candidates available");
  return out;
}

// FL discipline: the top-k items of the first position's logits alone.
template <class S>
std::vector<int32_t> infer_first_logit(const nd::Tensor<S>& z, int64_t k,
                                       const std::vector<char>& excluded,
                                       std::vector<std::string>* warnings = nullptr) {
  const int64_t items = z.shape()[1];
  if (static_cast<int64_t>(excluded.size()) != items)
    throw DimensionError("infer_first_logit: mask size mismatch");
  const auto row = detail::row_of(z, 0);
  std::vector<int32_t> cands;
  for (int64_t j = 0; j < items; ++j)
    if (!excluded[static_cast<size_t>(j)]) cands.push_back(static_cast<int32_t>(j));
  std::stable_sort(cands.begin(), cands.end(), [&](int32_t a, int32_t b) {
    if (row[static_cast<size_t>(a)] != row[static_cast<size_t>(b)])
      return row[static_cast<size_t>(a)] > row[static_cast<size_t>(b)];
    return a < b;
  });
  if (static_cast<int64_t>(cands.size()) > k) cands.resize(static_cast<size_t>(k));
  if (static_cast<int64_t>(cands.size()) < k && warnings)
    warnings->push_back("infer_first_logit: only " + std::to_string(cands.size()) + " of " +
                        std::to_string(k) + " candidates available");
  return cands;
}

// AR discipline: the prompt ends at the first answer position; each picked
// item's projected token is appended and the final position's logits choose
// the next item. The growing mask rules out repeats.
template <class S>
std::vector<int32_t> infer_autoregressive(const lm::TransformerWeights<S>& w,
                                          const lm::MixedSequence& prompt,
                                          const lm::InjectionSources<S>& sources,
                                          const GllmHead<S>& head, int64_t k,
                                          std::vector<char> excluded,
                                          std::vector<std::string>* warnings = nullptr) {
  const int64_t items = head.num_items();
  if (static_cast<int64_t>(excluded.size()) != items)
    throw DimensionError("infer_autoregressive: mask size mismatch");
  lm::MixedSequence cur = prompt;
  std::vector<int32_t> out;
  for (int64_t t = 0; t < k; ++t) {
    if (cur.size() > w.max_len) {
      if (warnings) warnings->push_back("infer_autoregressive: ran out of sequence budget");
      break;
    }
    nd::Tensor<S> h = lm_forward<S>(nullptr, w, cur, sources);
    const int64_t last = h.shape()[0] - 1;
    std::vector<float> logits(static_cast<size_t>(items));
    for (int64_t j = 0; j < items; ++j) {
      S s = head.b.values()[static_cast<size_t>(j)];
      for (int64_t c = 0; c < w.d_model; ++c) s += h.at(last, c) * head.w.at(c, j);
      logits[static_cast<size_t>(j)] = static_cast<float>(s);
    }
    const int32_t pick = detail::masked_argmax(logits.data(), items, excluded);
    if (pick < 0) {
      if (warnings) warnings->push_back("infer_autoregressive: candidates exhausted");
      break;
    }
    out.push_back(pick);
    excluded[static_cast<size_t>(pick)] = 1;
    cur.push_injected(lm::InjectOrigin::ItemNode, pick);
  }
  return out;
}

}  // namespace glta::gllm
