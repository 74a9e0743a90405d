#pragma once

// Affine node projectors mapping graph-space embeddings into the language
// token space: V = E*W + b, one projector per node kind.

#include <cmath>
#include <cstdint>
#include <string>

#include "glta/errors.hpp"
#include "glta/rng.hpp"
#include "glta/tensor.hpp"

namespace glta::align {

enum class ProjectorKind : uint8_t { Item, User };

template <class S>
struct Projector {
  nd::Tensor<S> w;  // d_graph x d_model
  nd::Tensor<S> b;  // d_model
  ProjectorKind kind = ProjectorKind::Item;

  static Projector init(Rng& rng, int64_t d_graph, int64_t d_model, ProjectorKind kind,
                        bool trainable) {
    Projector p;
    p.kind = kind;
    p.w = nd::Tensor<S>::randn(rng, {d_graph, d_model}, 1.0 / std::sqrt(double(d_graph)),
                               trainable);
    p.b = nd::Tensor<S>::zeros({d_model}, trainable);
    return p;
  }

  void set_trainable(bool trainable) {
    w.set_requires_grad(trainable);
    b.set_requires_grad(trainable);
    if (!trainable) {
      w.drop_grad();
      b.drop_grad();
    }
  }

  bool trainable() const { return w.requires_grad(); }

  uint64_t checksum() const {
    uint64_t h = w.checksum();
    return fnv1a64_bytes(b.values().data(), b.values().size() * sizeof(S), h);
  }
};

template <class S>
nd::Tensor<S> project_rows(nd::Tape<S>* tape, const nd::Tensor<S>& embeddings,
                           const Projector<S>& proj) {
  if (embeddings.ndim() != 2 || embeddings.shape()[1] != proj.w.shape()[0])
    throw DimensionError("projector: embedding width " + nd::shape_str(embeddings.shape()) +
                         " does not match weight " + nd::shape_str(proj.w.shape()));
  return nd::add(tape, nd::matmul(tape, embeddings, proj.w), proj.b);
}

template <class S>
nd::Tensor<S> project_items(nd::Tape<S>* tape, const nd::Tensor<S>& e_item,
                            const Projector<S>& proj) {
  if (proj.kind != ProjectorKind::Item)
    throw ContractError("project_items: projector kind is not item");
  return project_rows(tape, e_item, proj);
}

template <class S>
nd::Tensor<S> project_users(nd::Tape<S>* tape, const nd::Tensor<S>& e_user,
                            const Projector<S>& proj) {
  if (proj.kind != ProjectorKind::User)
    throw ContractError("project_users: projector kind is not user");
  return project_rows(tape, e_user, proj);
}

}  // namespace glta::align
