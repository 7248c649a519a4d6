#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fusseg/common.hpp"
#include "fusseg/rng.hpp"

namespace fusseg::nn {

// Dense CHW float tensor. Training math runs in float32; losses are evaluated
// in double on the softmax output outside this engine.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, 0.0f) {}
  size_t size() const { return v.size(); }
  float* data() { return v.data(); }
  const float* data() const { return v.data(); }
  float& at(int ci, int i, int j) { return v[(static_cast<size_t>(ci) * h + i) * w + j]; }
  float at(int ci, int i, int j) const { return v[(static_cast<size_t>(ci) * h + i) * w + j]; }
};

// One vertex of the per-step computation graph. Graphs are rebuilt every
// forward pass (define-by-run); parameters are persistent leaves.
class Node {
public:
  Tensor val;
  Tensor grad; // allocated on demand, same shape as val
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn; // accumulates this->grad into parents
  bool requires_grad = false;

  Tensor& ensure_grad() {
    if (grad.v.empty()) grad = Tensor(val.c, val.h, val.w);
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

NodePtr make_input(Tensor t);               // leaf without gradient
NodePtr make_leaf(Tensor t, bool needs_grad); // generic leaf

// Reverse-mode sweep from root; root->grad must be seeded by the caller.
void backward(const NodePtr& root);

// --- ops (stride 1, odd kernel, zero "same" padding) -----------------------
// weight layout: [cout][cin][k*k] packed in Tensor(cout, cin, k*k); bias (cout,1,1).
NodePtr conv2d(NodePtr x, NodePtr weight, NodePtr bias, int ksize, bool grad_to_input = true);
NodePtr relu(NodePtr x);
NodePtr sigmoid(NodePtr x);
NodePtr maxpool2(NodePtr x);   // 2x2, stride 2; H and W must be even
NodePtr upsample2(NodePtr x);  // nearest-neighbor x2
NodePtr concat(std::vector<NodePtr> xs);
NodePtr add(NodePtr a, NodePtr b);
NodePtr mul_gate(NodePtr x, NodePtr gate); // gate has 1 channel, broadcast over x's channels
NodePtr group_norm(NodePtr x, NodePtr gamma, NodePtr beta, int groups, float eps = 1e-5f);
NodePtr softmax_channels(NodePtr x);
NodePtr crop_topleft(NodePtr x, int h, int w);

// Reflect-101 padding on bottom/right; amounts must be < H (resp. W).
Tensor reflect_pad_bottom_right(const Tensor& x, int pad_h, int pad_w);

// --- parameters & optimizer -------------------------------------------------

struct Param {
  std::string name;
  NodePtr node;
};

class ParamStore {
public:
  NodePtr add(const std::string& name, Tensor init);
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  size_t total_size() const;
  void zero_grad();
  // Serialization order is the registration order.
  std::vector<float> pack() const;
  void unpack(const std::vector<float>& flat);

private:
  std::vector<Param> params_;
};

// Deterministic He (fan-in) initialization for conv weights.
Tensor he_init(int cout, int cin, int k, Rng& rng);

class Adam {
public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // grad_scale is applied before the update (1/batch for averaged batches).
  void step(ParamStore& params, double grad_scale = 1.0);

private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

} // namespace fusseg::nn
