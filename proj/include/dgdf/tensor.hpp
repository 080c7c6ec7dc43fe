#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dgdf/common.hpp"
#include "dgdf/rng.hpp"

namespace dgdf {

struct Shape4 {
  int n = 1, c = 1, h = 1, w = 1;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }
  bool operator==(const Shape4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape4& o) const { return !(*this == o); }

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

// Dense rank-4 f32 tensor, row-major (N,C,H,W). Value semantics: the payload
// is shared and treated as immutable once published; mutable_data() exists
// for the optimizer and initializers, which are the sole writers.
class Tensor {
 public:
  Tensor() : shape_{0, 0, 0, 0}, data_(std::make_shared<std::vector<float>>()) {}

  static Tensor zeros(Shape4 s) {
    return Tensor(s, std::vector<float>(static_cast<size_t>(s.numel()), 0.0f));
  }
  static Tensor full(Shape4 s, float v) {
    return Tensor(s, std::vector<float>(static_cast<size_t>(s.numel()), v));
  }
  static Tensor from(Shape4 s, std::vector<float> values) {
    require_shape(static_cast<std::int64_t>(values.size()) == s.numel(),
                  "tensor data length " + std::to_string(values.size()) +
                      " does not match shape " + s.str());
    return Tensor(s, std::move(values));
  }
  static Tensor scalar(float v) { return Tensor(Shape4{1, 1, 1, 1}, {v}); }

  const Shape4& shape() const { return shape_; }
  std::int64_t numel() const { return shape_.numel(); }
  bool empty() const { return shape_.numel() == 0; }

  const float* data() const { return data_->data(); }
  float* mutable_data() { return data_->data(); }
  const std::vector<float>& vec() const { return *data_; }

  float at(int n, int c, int h, int w) const {
    return (*data_)[static_cast<size_t>(((static_cast<std::int64_t>(n) * shape_.c + c) *
                                         shape_.h + h) * shape_.w + w)];
  }
  float item() const {
    require_shape(numel() == 1, "item() on non-scalar tensor " + shape_.str());
    return (*data_)[0];
  }

  int node() const { return node_; }
  bool tracked() const { return node_ >= 0; }
  void set_node(int id) { node_ = id; }
  Tensor detached() const {
    Tensor t = *this;
    t.node_ = -1;
    return t;
  }

  bool all_finite() const {
    for (float v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  Tensor(Shape4 s, std::vector<float> values)
      : shape_(s), data_(std::make_shared<std::vector<float>>(std::move(values))) {}

  Shape4 shape_;
  std::shared_ptr<std::vector<float>> data_;
  int node_ = -1;
};

#ifndef NDEBUG
#define DGDF_CHECK_FINITE(t)                                        \
  do {                                                              \
    assert((t).all_finite() && "non-finite tensor element");        \
  } while (0)
#else
#define DGDF_CHECK_FINITE(t) \
  do {                       \
  } while (0)
#endif

// Define-by-run gradient tape. Nodes are appended in execution order, which
// is a topological order, and backward() walks them once in reverse.
class Tape {
 public:
  // Receives this node's accumulated upstream gradient.
  using BackFn = std::function<void(Tape&, const std::vector<float>&)>;

  void reset() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

  // Registers a leaf (parameter or input) and returns a tracked view.
  Tensor leaf(const Tensor& t) {
    Tensor out = t;
    out.set_node(add_node(t.shape()));
    return out;
  }

  int add_node(Shape4 shape) {
    nodes_.push_back(Node{shape, {}, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }
  void set_back(int id, BackFn fn) { nodes_[static_cast<size_t>(id)].back = std::move(fn); }

  // Gradient accumulator for a node; allocates zeros on first touch.
  std::vector<float>& acc(int id) {
    Node& nd = nodes_[static_cast<size_t>(id)];
    if (nd.grad.empty()) nd.grad.assign(static_cast<size_t>(nd.shape.numel()), 0.0f);
    return nd.grad;
  }

  // Gradient of a tracked tensor after backward(); zeros if unreached.
  const std::vector<float>& grad(const Tensor& t) {
    require(t.tracked(), "grad() of untracked tensor");
    return acc(t.node());
  }
  const std::vector<float>& grad(int node_id) { return acc(node_id); }

  void backward(const Tensor& loss) {
    require(loss.tracked(), "backward: loss is not on the tape");
    require_shape(loss.numel() == 1, "backward: loss must be scalar, got " + loss.shape().str());
    acc(loss.node()).assign(1, 1.0f);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& nd = nodes_[static_cast<size_t>(i)];
      if (nd.back && !nd.grad.empty()) nd.back(*this, nd.grad);
    }
  }

 private:
  struct Node {
    Shape4 shape;
    std::vector<float> grad;
    BackFn back;
  };
  std::vector<Node> nodes_;
};

// ------------------------------------------------------------ random fills

// Standard normal tensor; element i uses counters (2i, 2i+1) so the fill is
// reproducible and parallel-safe. Advances rng by 2*numel.
inline Tensor randn(Rng& rng, Shape4 shape) {
  std::vector<float> v(static_cast<size_t>(shape.numel()));
  const Rng snapshot = rng;
  parallel_for(shape.numel(), [&](std::int64_t i) {
    v[static_cast<size_t>(i)] = static_cast<float>(snapshot.normal_at(static_cast<std::uint64_t>(i)));
  }, 4096);
  rng.skip(2 * static_cast<std::uint64_t>(shape.numel()));
  return Tensor::from(shape, std::move(v));
}

inline Tensor rand_uniform(Rng& rng, Shape4 shape, float lo, float hi) {
  std::vector<float> v(static_cast<size_t>(shape.numel()));
  const Rng snapshot = rng;
  parallel_for(shape.numel(), [&](std::int64_t i) {
    float u = static_cast<float>(snapshot.word_at(snapshot.counter() + static_cast<std::uint64_t>(i)) >> 40) * 0x1.0p-24f;
    v[static_cast<size_t>(i)] = lo + (hi - lo) * u;
  }, 4096);
  rng.skip(static_cast<std::uint64_t>(shape.numel()));
  return Tensor::from(shape, std::move(v));
}

inline std::int64_t rand_uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return rng.next_int(lo, hi);
}

}  // namespace dgdf
