#include "fusseg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include <Eigen/Dense>

namespace fusseg::nn {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

NodePtr make_input(Tensor t) { return make_leaf(std::move(t), false); }

NodePtr make_leaf(Tensor t, bool needs_grad) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = needs_grad;
  return n;
}

void backward(const NodePtr& root) {
  require(!root->grad.v.empty(), "backward: root gradient not seeded");
  // Iterative post-order DFS, then reverse for topological order.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.v.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// im2col / col2im: row-major col buffer [cin*k*k][h*w], built with per-row
// segment copies so the GEMM dominates the cost.
// ---------------------------------------------------------------------------

namespace {

void im2col(const Tensor& x, int k, std::vector<float>& col) {
  const int pad = k / 2;
  const int hw = x.h * x.w;
  col.assign(static_cast<size_t>(x.c) * k * k * hw, 0.0f);
  for (int ci = 0; ci < x.c; ++ci) {
    const float* chan = x.data() + static_cast<size_t>(ci) * hw;
    for (int dy = -pad; dy <= pad; ++dy) {
      for (int dx = -pad; dx <= pad; ++dx) {
        const size_t row = (static_cast<size_t>(ci) * k + (dy + pad)) * k + (dx + pad);
        float* dst = col.data() + row * hw;
        for (int i = 0; i < x.h; ++i) {
          const int si = i + dy;
          if (si < 0 || si >= x.h) continue;
          const int j0 = std::max(0, -dx);
          const int j1 = std::min(x.w, x.w - dx);
          if (j1 > j0)
            std::memcpy(dst + static_cast<size_t>(i) * x.w + j0,
                        chan + static_cast<size_t>(si) * x.w + j0 + dx,
                        static_cast<size_t>(j1 - j0) * sizeof(float));
        }
      }
    }
  }
}

void col2im_accumulate(const std::vector<float>& col, int c, int h, int w, int k, Tensor& dx) {
  const int pad = k / 2;
  const int hw = h * w;
  for (int ci = 0; ci < c; ++ci) {
    float* chan = dx.data() + static_cast<size_t>(ci) * hw;
    for (int dy = -pad; dy <= pad; ++dy) {
      for (int dx_ = -pad; dx_ <= pad; ++dx_) {
        const size_t row = (static_cast<size_t>(ci) * k + (dy + pad)) * k + (dx_ + pad);
        const float* src = col.data() + row * hw;
        for (int i = 0; i < h; ++i) {
          const int si = i + dy;
          if (si < 0 || si >= h) continue;
          const int j0 = std::max(0, -dx_);
          const int j1 = std::min(w, w - dx_);
          float* drow = chan + static_cast<size_t>(si) * w + dx_;
          const float* srow = src + static_cast<size_t>(i) * w;
          for (int j = j0; j < j1; ++j) drow[j] += srow[j];
        }
      }
    }
  }
}

} // namespace

NodePtr conv2d(NodePtr x, NodePtr weight, NodePtr bias, int ksize, bool grad_to_input) {
  require(ksize % 2 == 1, "conv2d: kernel size must be odd");
  const int cin = x->val.c, h = x->val.h, w = x->val.w;
  const int cout = weight->val.c;
  require(weight->val.h == cin && weight->val.w == ksize * ksize, "conv2d: weight shape mismatch");
  require(bias->val.c == cout, "conv2d: bias shape mismatch");

  const int hw = h * w;
  const int kk = cin * ksize * ksize;

  auto out = std::make_shared<Node>();
  out->val = Tensor(cout, h, w);
  out->requires_grad = true;
  out->parents = {x, weight, bias};

  {
    MapRM o(out->val.data(), cout, hw);
    CMapRM wm(weight->val.data(), cout, kk);
    if (ksize == 1) {
      CMapRM xm(x->val.data(), cin, hw);
      o.noalias() = wm * xm;
    } else {
      std::vector<float> col;
      im2col(x->val, ksize, col);
      CMapRM cm(col.data(), kk, hw);
      o.noalias() = wm * cm;
    }
    for (int co = 0; co < cout; ++co) o.row(co).array() += bias->val.v[co];
  }

  // The raw image leaf never needs dX; skipping it saves the most expensive
  // col2im of the whole backward pass (the first conv has the most input channels).
  const bool want_dx = grad_to_input && (x->requires_grad || !x->parents.empty() || x->backward_fn);
  out->backward_fn = [x, weight, bias, ksize, cin, cout, h, w, hw, kk, want_dx](Node& self) {
    CMapRM dy(self.grad.data(), cout, hw);
    // bias: serial accumulation — Eigen's redux order depends on buffer
    // alignment, which would break bitwise run-to-run reproducibility
    {
      Tensor& db = bias->ensure_grad();
      const float* dyp = self.grad.data();
      for (int co = 0; co < cout; ++co) {
        double s = 0.0;
        const float* row = dyp + static_cast<size_t>(co) * hw;
        for (int i = 0; i < hw; ++i) s += row[i];
        db.v[co] += static_cast<float>(s);
      }
    }
    if (ksize == 1) {
      CMapRM xm(x->val.data(), cin, hw);
      {
        Tensor& dwt = weight->ensure_grad();
        MapRM dwm(dwt.data(), cout, kk);
        dwm.noalias() += dy * xm.transpose();
      }
      if (want_dx) {
        Tensor& dxt = x->ensure_grad();
        MapRM dxm(dxt.data(), cin, hw);
        CMapRM wm(weight->val.data(), cout, kk);
        dxm.noalias() += wm.transpose() * dy;
      }
    } else {
      std::vector<float> col;
      im2col(x->val, ksize, col); // recomputed: cheaper than caching across the graph
      CMapRM cm(col.data(), kk, hw);
      {
        Tensor& dwt = weight->ensure_grad();
        MapRM dwm(dwt.data(), cout, kk);
        dwm.noalias() += dy * cm.transpose();
      }
      if (want_dx) {
        std::vector<float> dcol(static_cast<size_t>(kk) * hw);
        MapRM dcm(dcol.data(), kk, hw);
        CMapRM wm(weight->val.data(), cout, kk);
        dcm.noalias() = wm.transpose() * dy;
        Tensor& dxt = x->ensure_grad();
        col2im_accumulate(dcol, cin, h, w, ksize, dxt);
      }
    }
  };
  return out;
}

NodePtr relu(NodePtr x) {
  auto out = std::make_shared<Node>();
  out->val = x->val;
  for (float& v : out->val.v) v = v > 0.0f ? v : 0.0f;
  out->requires_grad = true;
  out->parents = {x};
  out->backward_fn = [x](Node& self) {
    Tensor& dx = x->ensure_grad();
    for (size_t i = 0; i < dx.v.size(); ++i)
      if (x->val.v[i] > 0.0f) dx.v[i] += self.grad.v[i];
  };
  return out;
}

NodePtr sigmoid(NodePtr x) {
  auto out = std::make_shared<Node>();
  out->val = x->val;
  for (float& v : out->val.v) v = 1.0f / (1.0f + std::exp(-v));
  out->requires_grad = true;
  out->parents = {x};
  out->backward_fn = [x](Node& self) {
    Tensor& dx = x->ensure_grad();
    for (size_t i = 0; i < dx.v.size(); ++i) {
      const float y = self.val.v[i];
      dx.v[i] += self.grad.v[i] * y * (1.0f - y);
    }
  };
  return out;
}

NodePtr maxpool2(NodePtr x) {
  require(x->val.h % 2 == 0 && x->val.w % 2 == 0, "maxpool2: H and W must be even");
  const int c = x->val.c, h = x->val.h, w = x->val.w;
  const int oh = h / 2, ow = w / 2;
  auto out = std::make_shared<Node>();
  out->val = Tensor(c, oh, ow);
  out->requires_grad = true;
  out->parents = {x};
  auto argmax = std::make_shared<std::vector<uint32_t>>(out->val.size());
  for (int ci = 0; ci < c; ++ci) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        float best = -std::numeric_limits<float>::infinity();
        uint32_t arg = 0;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj) {
            const size_t idx = (static_cast<size_t>(ci) * h + 2 * i + di) * w + 2 * j + dj;
            if (x->val.v[idx] > best) {
              best = x->val.v[idx];
              arg = static_cast<uint32_t>(idx);
            }
          }
        const size_t oidx = (static_cast<size_t>(ci) * oh + i) * ow + j;
        out->val.v[oidx] = best;
        (*argmax)[oidx] = arg;
      }
    }
  }
  out->backward_fn = [x, argmax](Node& self) {
    Tensor& dx = x->ensure_grad();
    for (size_t i = 0; i < self.grad.v.size(); ++i) dx.v[(*argmax)[i]] += self.grad.v[i];
  };
  return out;
}

NodePtr upsample2(NodePtr x) {
  const int c = x->val.c, h = x->val.h, w = x->val.w;
  auto out = std::make_shared<Node>();
  out->val = Tensor(c, 2 * h, 2 * w);
  out->requires_grad = true;
  out->parents = {x};
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j)
        out->val.at(ci, i, j) = x->val.at(ci, i / 2, j / 2);
  out->backward_fn = [x, c, h, w](Node& self) {
    Tensor& dx = x->ensure_grad();
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j) dx.at(ci, i / 2, j / 2) += self.grad.at(ci, i, j);
  };
  return out;
}

NodePtr concat(std::vector<NodePtr> xs) {
  require(!xs.empty(), "concat: empty list");
  const int h = xs[0]->val.h, w = xs[0]->val.w;
  int c = 0;
  for (const auto& x : xs) {
    require(x->val.h == h && x->val.w == w, "concat: spatial shape mismatch");
    c += x->val.c;
  }
  auto out = std::make_shared<Node>();
  out->val = Tensor(c, h, w);
  out->requires_grad = true;
  out->parents = xs;
  size_t offset = 0;
  for (const auto& x : xs) {
    std::memcpy(out->val.data() + offset, x->val.data(), x->val.size() * sizeof(float));
    offset += x->val.size();
  }
  out->backward_fn = [xs](Node& self) {
    size_t off = 0;
    for (const auto& x : xs) {
      Tensor& dx = x->ensure_grad();
      for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += self.grad.v[off + i];
      off += dx.v.size();
    }
  };
  return out;
}

NodePtr add(NodePtr a, NodePtr b) {
  require(a->val.size() == b->val.size(), "add: shape mismatch");
  auto out = std::make_shared<Node>();
  out->val = a->val;
  for (size_t i = 0; i < out->val.v.size(); ++i) out->val.v[i] += b->val.v[i];
  out->requires_grad = true;
  out->parents = {a, b};
  out->backward_fn = [a, b](Node& self) {
    Tensor& da = a->ensure_grad();
    Tensor& db = b->ensure_grad();
    for (size_t i = 0; i < self.grad.v.size(); ++i) {
      da.v[i] += self.grad.v[i];
      db.v[i] += self.grad.v[i];
    }
  };
  return out;
}

NodePtr mul_gate(NodePtr x, NodePtr gate) {
  require(gate->val.c == 1 && gate->val.h == x->val.h && gate->val.w == x->val.w,
          "mul_gate: gate must be [1,H,W] matching x");
  const int c = x->val.c;
  const size_t hw = static_cast<size_t>(x->val.h) * x->val.w;
  auto out = std::make_shared<Node>();
  out->val = x->val;
  for (int ci = 0; ci < c; ++ci)
    for (size_t i = 0; i < hw; ++i) out->val.v[ci * hw + i] *= gate->val.v[i];
  out->requires_grad = true;
  out->parents = {x, gate};
  out->backward_fn = [x, gate, c, hw](Node& self) {
    Tensor& dx = x->ensure_grad();
    Tensor& dg = gate->ensure_grad();
    for (int ci = 0; ci < c; ++ci)
      for (size_t i = 0; i < hw; ++i) {
        dx.v[ci * hw + i] += self.grad.v[ci * hw + i] * gate->val.v[i];
        dg.v[i] += self.grad.v[ci * hw + i] * x->val.v[ci * hw + i];
      }
  };
  return out;
}

NodePtr group_norm(NodePtr x, NodePtr gamma, NodePtr beta, int groups, float eps) {
  const int c = x->val.c;
  require(groups >= 1 && c % groups == 0, "group_norm: channels not divisible by groups");
  require(gamma->val.c == c && beta->val.c == c, "group_norm: affine shape mismatch");
  const size_t hw = static_cast<size_t>(x->val.h) * x->val.w;
  const int gc = c / groups; // channels per group
  const size_t gsize = gc * hw;

  auto out = std::make_shared<Node>();
  out->val = Tensor(x->val.c, x->val.h, x->val.w);
  out->requires_grad = true;
  out->parents = {x, gamma, beta};

  auto xhat = std::make_shared<std::vector<float>>(x->val.size());
  auto inv_std = std::make_shared<std::vector<float>>(groups);

  for (int g = 0; g < groups; ++g) {
    const float* xs = x->val.data() + static_cast<size_t>(g) * gsize;
    double mean = 0.0;
    for (size_t i = 0; i < gsize; ++i) mean += xs[i];
    mean /= static_cast<double>(gsize);
    double var = 0.0;
    for (size_t i = 0; i < gsize; ++i) {
      const double d = xs[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(gsize);
    const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*inv_std)[g] = istd;
    float* xh = xhat->data() + static_cast<size_t>(g) * gsize;
    float* o = out->val.data() + static_cast<size_t>(g) * gsize;
    for (int ci = 0; ci < gc; ++ci) {
      const float gam = gamma->val.v[g * gc + ci];
      const float bet = beta->val.v[g * gc + ci];
      for (size_t i = 0; i < hw; ++i) {
        const size_t idx = ci * hw + i;
        xh[idx] = (xs[idx] - static_cast<float>(mean)) * istd;
        o[idx] = gam * xh[idx] + bet;
      }
    }
  }

  out->backward_fn = [x, gamma, beta, groups, gc, hw, gsize, xhat, inv_std](Node& self) {
    Tensor& dx = x->ensure_grad();
    Tensor& dgam = gamma->ensure_grad();
    Tensor& dbet = beta->ensure_grad();
    for (int g = 0; g < groups; ++g) {
      const float* dy = self.grad.data() + static_cast<size_t>(g) * gsize;
      const float* xh = xhat->data() + static_cast<size_t>(g) * gsize;
      const float istd = (*inv_std)[g];
      // Per-group reductions of dxhat and dxhat*xhat.
      double sum_dxh = 0.0, sum_dxh_xh = 0.0;
      for (int ci = 0; ci < gc; ++ci) {
        const float gam = gamma->val.v[g * gc + ci];
        double sd = 0.0, sdx = 0.0;
        for (size_t i = 0; i < hw; ++i) {
          const size_t idx = ci * hw + i;
          const float dxh = dy[idx] * gam;
          sd += dxh;
          sdx += static_cast<double>(dxh) * xh[idx];
          dgam.v[g * gc + ci] += dy[idx] * xh[idx];
          dbet.v[g * gc + ci] += dy[idx];
        }
        sum_dxh += sd;
        sum_dxh_xh += sdx;
      }
      const double n = static_cast<double>(gsize);
      float* dxp = dx.data() + static_cast<size_t>(g) * gsize;
      for (int ci = 0; ci < gc; ++ci) {
        const float gam = gamma->val.v[g * gc + ci];
        for (size_t i = 0; i < hw; ++i) {
          const size_t idx = ci * hw + i;
          const double dxh = static_cast<double>(dy[idx]) * gam;
          dxp[idx] += static_cast<float>(istd * (dxh - sum_dxh / n - xh[idx] * sum_dxh_xh / n));
        }
      }
    }
  };
  return out;
}

NodePtr softmax_channels(NodePtr x) {
  const int c = x->val.c;
  const size_t hw = static_cast<size_t>(x->val.h) * x->val.w;
  auto out = std::make_shared<Node>();
  out->val = Tensor(x->val.c, x->val.h, x->val.w);
  out->requires_grad = true;
  out->parents = {x};
  for (size_t i = 0; i < hw; ++i) {
    float mx = x->val.v[i];
    for (int ci = 1; ci < c; ++ci) mx = std::max(mx, x->val.v[ci * hw + i]);
    float sum = 0.0f;
    for (int ci = 0; ci < c; ++ci) {
      const float e = std::exp(x->val.v[ci * hw + i] - mx);
      out->val.v[ci * hw + i] = e;
      sum += e;
    }
    for (int ci = 0; ci < c; ++ci) out->val.v[ci * hw + i] /= sum;
  }
  out->backward_fn = [x, c, hw](Node& self) {
    Tensor& dx = x->ensure_grad();
    for (size_t i = 0; i < hw; ++i) {
      float dot = 0.0f;
      for (int ci = 0; ci < c; ++ci) dot += self.grad.v[ci * hw + i] * self.val.v[ci * hw + i];
      for (int ci = 0; ci < c; ++ci)
        dx.v[ci * hw + i] += self.val.v[ci * hw + i] * (self.grad.v[ci * hw + i] - dot);
    }
  };
  return out;
}

NodePtr crop_topleft(NodePtr x, int h, int w) {
  require(h <= x->val.h && w <= x->val.w, "crop_topleft: crop larger than input");
  if (h == x->val.h && w == x->val.w) return x;
  const int c = x->val.c;
  auto out = std::make_shared<Node>();
  out->val = Tensor(c, h, w);
  out->requires_grad = true;
  out->parents = {x};
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < h; ++i)
      std::memcpy(&out->val.at(ci, i, 0), &x->val.at(ci, i, 0), static_cast<size_t>(w) * sizeof(float));
  out->backward_fn = [x, c, h, w](Node& self) {
    Tensor& dx = x->ensure_grad();
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) dx.at(ci, i, j) += self.grad.at(ci, i, j);
  };
  return out;
}

Tensor reflect_pad_bottom_right(const Tensor& x, int pad_h, int pad_w) {
  require(pad_h >= 0 && pad_w >= 0, "reflect_pad: negative padding");
  require(pad_h < x.h && pad_w < x.w, "reflect_pad: padding must be smaller than the image");
  if (pad_h == 0 && pad_w == 0) return x;
  Tensor out(x.c, x.h + pad_h, x.w + pad_w);
  auto mirror = [](int i, int n) { return i < n ? i : 2 * n - 2 - i; };
  for (int ci = 0; ci < x.c; ++ci)
    for (int i = 0; i < out.h; ++i)
      for (int j = 0; j < out.w; ++j) out.at(ci, i, j) = x.at(ci, mirror(i, x.h), mirror(j, x.w));
  return out;
}

// ---------------------------------------------------------------------------
// Parameters / optimizer
// ---------------------------------------------------------------------------

NodePtr ParamStore::add(const std::string& name, Tensor init) {
  auto node = make_leaf(std::move(init), true);
  node->ensure_grad();
  params_.push_back({name, node});
  return node;
}

size_t ParamStore::total_size() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.node->val.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) std::fill(p.node->grad.v.begin(), p.node->grad.v.end(), 0.0f);
}

std::vector<float> ParamStore::pack() const {
  std::vector<float> flat;
  flat.reserve(total_size());
  for (const auto& p : params_) flat.insert(flat.end(), p.node->val.v.begin(), p.node->val.v.end());
  return flat;
}

void ParamStore::unpack(const std::vector<float>& flat) {
  require(flat.size() == total_size(), "ParamStore::unpack: size mismatch");
  size_t off = 0;
  for (auto& p : params_) {
    std::copy(flat.begin() + off, flat.begin() + off + p.node->val.size(), p.node->val.v.begin());
    off += p.node->val.size();
  }
}

Tensor he_init(int cout, int cin, int k, Rng& rng) {
  Tensor t(cout, cin, k * k);
  const double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
  for (float& v : t.v) v = static_cast<float>(rng.normal(0.0, std));
  return t;
}

void Adam::step(ParamStore& params, double grad_scale) {
  auto& ps = params.params();
  if (m_.size() != ps.size()) {
    m_.assign(ps.size(), {});
    v_.assign(ps.size(), {});
    for (size_t i = 0; i < ps.size(); ++i) {
      m_[i].assign(ps[i].node->val.size(), 0.0f);
      v_[i].assign(ps[i].node->val.size(), 0.0f);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < ps.size(); ++i) {
    auto& val = ps[i].node->val.v;
    auto& grad = ps[i].node->grad.v;
    for (size_t j = 0; j < val.size(); ++j) {
      const double g = grad[j] * grad_scale;
      m_[i][j] = static_cast<float>(beta1_ * m_[i][j] + (1.0 - beta1_) * g);
      v_[i][j] = static_cast<float>(beta2_ * v_[i][j] + (1.0 - beta2_) * g * g);
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      val[j] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

} // namespace fusseg::nn
