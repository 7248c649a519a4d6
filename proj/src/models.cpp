#include "fusseg/models.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>

#include "fusseg/core_io.hpp"
#include "fusseg/losses.hpp"

namespace fusseg::models {

using nn::NodePtr;

Variant variant_from_string(const std::string& s) {
  if (s == "unet") return Variant::unet;
  if (s == "attention_unet") return Variant::attention_unet;
  if (s == "unetpp") return Variant::unetpp;
  if (s == "resunet") return Variant::resunet;
  if (s == "multires_unet") return Variant::multires_unet;
  throw ValidationError("unknown architecture variant: " + s);
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::unet: return "unet";
    case Variant::attention_unet: return "attention_unet";
    case Variant::unetpp: return "unetpp";
    case Variant::resunet: return "resunet";
    case Variant::multires_unet: return "multires_unet";
  }
  throw ValidationError("unknown architecture variant");
}

nlohmann::json ArchConfig::to_json() const {
  return {{"variant", models::to_string(variant)},
          {"in_channels", in_channels},
          {"base_width", base_width},
          {"depth", depth},
          {"out_classes", out_classes}};
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  ArchConfig cfg;
  cfg.variant = variant_from_string(j.at("variant").get<std::string>());
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.base_width = j.value("base_width", 32);
  cfg.depth = j.value("depth", 4);
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

namespace {

int pick_groups(int c) {
  for (int g = 8; g >= 1; --g)
    if (c % g == 0) return g;
  return 1;
}

struct Conv {
  NodePtr w, b;
  int k = 3;
  Conv() = default;
  Conv(nn::ParamStore& ps, const std::string& name, int cin, int cout, int k_, Rng& rng) : k(k_) {
    w = ps.add(name + ".w", nn::he_init(cout, cin, k_, rng));
    b = ps.add(name + ".b", nn::Tensor(cout, 1, 1));
  }
  NodePtr operator()(NodePtr x) const { return nn::conv2d(x, w, b, k); }
};

struct Norm {
  NodePtr gamma, beta;
  int groups = 1;
  Norm() = default;
  Norm(nn::ParamStore& ps, const std::string& name, int c) : groups(pick_groups(c)) {
    nn::Tensor g(c, 1, 1);
    std::fill(g.v.begin(), g.v.end(), 1.0f);
    gamma = ps.add(name + ".gamma", std::move(g));
    beta = ps.add(name + ".beta", nn::Tensor(c, 1, 1));
  }
  NodePtr operator()(NodePtr x) const { return nn::group_norm(x, gamma, beta, groups); }
};

// conv -> group norm -> relu
struct ConvBlock {
  Conv conv;
  Norm norm;
  ConvBlock() = default;
  ConvBlock(nn::ParamStore& ps, const std::string& name, int cin, int cout, int k, Rng& rng)
      : conv(ps, name + ".conv", cin, cout, k, rng), norm(ps, name + ".norm", cout) {}
  NodePtr operator()(NodePtr x) const { return nn::relu(norm(conv(x))); }
};

struct DoubleConv {
  ConvBlock c1, c2;
  DoubleConv(nn::ParamStore& ps, const std::string& name, int cin, int cout, Rng& rng)
      : c1(ps, name + ".c1", cin, cout, 3, rng), c2(ps, name + ".c2", cout, cout, 3, rng) {}
  NodePtr operator()(NodePtr x) const { return c2(c1(x)); }
};

// Pre-activation style residual block with a 1x1 projection when channels change.
struct ResBlock {
  Conv conv1, conv2;
  Norm n1, n2;
  std::optional<Conv> proj;
  ResBlock(nn::ParamStore& ps, const std::string& name, int cin, int cout, Rng& rng)
      : conv1(ps, name + ".conv1", cin, cout, 3, rng),
        conv2(ps, name + ".conv2", cout, cout, 3, rng),
        n1(ps, name + ".n1", cout),
        n2(ps, name + ".n2", cout) {
    if (cin != cout) proj.emplace(ps, name + ".proj", cin, cout, 1, rng);
  }
  NodePtr operator()(NodePtr x) const {
    NodePtr y = nn::relu(n1(conv1(x)));
    y = n2(conv2(y));
    NodePtr s = proj ? (*proj)(x) : x;
    return nn::relu(nn::add(y, s));
  }
};

// Additive attention gate on a skip connection (gating signal g = upsampled
// decoder feature, x = encoder skip of the same spatial size). Both branches
// and the gate logits are normalized so the sigmoid stays responsive.
struct AttentionGate {
  Conv wg, wx, psi;
  Norm ng, nx, npsi;
  AttentionGate(nn::ParamStore& ps, const std::string& name, int g_ch, int x_ch, Rng& rng)
      : wg(ps, name + ".wg", g_ch, std::max(1, x_ch / 2), 1, rng),
        wx(ps, name + ".wx", x_ch, std::max(1, x_ch / 2), 1, rng),
        psi(ps, name + ".psi", std::max(1, x_ch / 2), 1, 1, rng),
        ng(ps, name + ".ng", std::max(1, x_ch / 2)),
        nx(ps, name + ".nx", std::max(1, x_ch / 2)),
        npsi(ps, name + ".npsi", 1) {}
  NodePtr operator()(NodePtr g, NodePtr x) const {
    NodePtr a = nn::relu(nn::add(ng(wg(g)), nx(wx(x))));
    return nn::mul_gate(x, nn::sigmoid(npsi(psi(a))));
  }
};

// Three chained 3x3 convs whose outputs are concatenated, plus a 1x1 shortcut.
// The branch widths split W = U into W/6, W/3, W/2 so every variant runs at a
// comparable channel budget for a given base_width.
struct MultiResBlock {
  ConvBlock a, b, c;
  Conv shortcut;
  Norm sn;
  int out_ch = 0;

  static int f1_of(int u) { return std::max(1, u / 6); }
  static int f2_of(int u) { return std::max(1, u / 3); }
  static int f3_of(int u) { return std::max(1, u / 2); }
  static int width_of(int u) { return f1_of(u) + f2_of(u) + f3_of(u); }

  MultiResBlock(nn::ParamStore& ps, const std::string& name, int cin, int u, Rng& rng)
      : a(ps, name + ".a", cin, f1_of(u), 3, rng),
        b(ps, name + ".b", f1_of(u), f2_of(u), 3, rng),
        c(ps, name + ".c", f2_of(u), f3_of(u), 3, rng),
        shortcut(ps, name + ".sc", cin, width_of(u), 1, rng),
        sn(ps, name + ".scn", width_of(u)),
        out_ch(width_of(u)) {}

  NodePtr operator()(NodePtr x) const {
    NodePtr ya = a(x);
    NodePtr yb = b(ya);
    NodePtr yc = c(yb);
    NodePtr cat = nn::concat({ya, yb, yc});
    return nn::relu(nn::add(cat, sn(shortcut(x))));
  }
};

// Chain of conv(3x3) + 1x1-shortcut units carried along a skip connection.
struct ResPath {
  struct Unit {
    Conv conv, sc;
    Norm n, scn;
    Unit(nn::ParamStore& ps, const std::string& name, int ch, Rng& rng)
        : conv(ps, name + ".conv", ch, ch, 3, rng),
          sc(ps, name + ".sc", ch, ch, 1, rng),
          n(ps, name + ".n", ch),
          scn(ps, name + ".scn", ch) {}
    NodePtr operator()(NodePtr x) const { return nn::relu(nn::add(n(conv(x)), scn(sc(x)))); }
  };
  std::vector<Unit> units;
  ResPath(nn::ParamStore& ps, const std::string& name, int ch, int length, Rng& rng) {
    for (int i = 0; i < length; ++i) units.emplace_back(ps, name + ".u" + std::to_string(i), ch, rng);
  }
  NodePtr operator()(NodePtr x) const {
    for (const auto& u : units) x = u(x);
    return x;
  }
};

// ---------------------------------------------------------------------------
// Architectures
// ---------------------------------------------------------------------------

class UNet : public Model {
public:
  std::vector<DoubleConv> enc;
  std::optional<DoubleConv> bott;
  std::vector<ConvBlock> upconv; // decoder order: deepest level first
  std::vector<DoubleConv> dec;
  std::optional<Conv> head;
  std::vector<std::optional<AttentionGate>> gates; // only populated for attention variant
  bool attention = false;

  UNet(ArchConfig cfg, Rng& rng, bool attention_) : Model(cfg), attention(attention_) {
    const int w = cfg.base_width;
    int cin = cfg.in_channels;
    for (int i = 0; i < cfg.depth; ++i) {
      enc.emplace_back(params, "enc" + std::to_string(i), cin, w << i, rng);
      cin = w << i;
    }
    bott.emplace(params, "bott", w << (cfg.depth - 1), w << cfg.depth, rng);
    for (int i = cfg.depth - 1; i >= 0; --i) {
      upconv.emplace_back(params, "up" + std::to_string(i), w << (i + 1), w << i, 3, rng);
      if (attention)
        gates.emplace_back(std::in_place, params, "att" + std::to_string(i), w << i, w << i, rng);
      dec.emplace_back(params, "dec" + std::to_string(i), 2 * (w << i), w << i, rng);
    }
    head.emplace(params, "head", w, out_classes_channels(), 1, rng);
  }

  static int out_classes_channels() { return ArchConfig::out_classes; }

  NodePtr forward(NodePtr x) override {
    std::vector<NodePtr> skips;
    for (int i = 0; i < cfg.depth; ++i) {
      x = enc[i](x);
      skips.push_back(x);
      x = nn::maxpool2(x);
    }
    x = (*bott)(x);
    for (int i = cfg.depth - 1, k = 0; i >= 0; --i, ++k) {
      x = upconv[k](nn::upsample2(x));
      NodePtr skip = skips[i];
      if (attention) skip = (*gates[k])(x, skip);
      x = dec[k](nn::concat({skip, x}));
    }
    return nn::softmax_channels((*head)(x));
  }
};

class ResUNet : public Model {
public:
  std::vector<ResBlock> enc;
  std::optional<ResBlock> bott;
  std::vector<ConvBlock> upconv;
  std::vector<ResBlock> dec;
  std::optional<Conv> head;

  ResUNet(ArchConfig cfg, Rng& rng) : Model(cfg) {
    const int w = cfg.base_width;
    int cin = cfg.in_channels;
    for (int i = 0; i < cfg.depth; ++i) {
      enc.emplace_back(params, "enc" + std::to_string(i), cin, w << i, rng);
      cin = w << i;
    }
    bott.emplace(params, "bott", w << (cfg.depth - 1), w << cfg.depth, rng);
    for (int i = cfg.depth - 1; i >= 0; --i) {
      upconv.emplace_back(params, "up" + std::to_string(i), w << (i + 1), w << i, 3, rng);
      dec.emplace_back(params, "dec" + std::to_string(i), 2 * (w << i), w << i, rng);
    }
    head.emplace(params, "head", w, ArchConfig::out_classes, 1, rng);
  }

  NodePtr forward(NodePtr x) override {
    std::vector<NodePtr> skips;
    for (int i = 0; i < cfg.depth; ++i) {
      x = enc[i](x);
      skips.push_back(x);
      x = nn::maxpool2(x);
    }
    x = (*bott)(x);
    for (int i = cfg.depth - 1, k = 0; i >= 0; --i, ++k) {
      x = upconv[k](nn::upsample2(x));
      x = dec[k](nn::concat({skips[i], x}));
    }
    return nn::softmax_channels((*head)(x));
  }
};

// Nested dense skip pathways; output taken from the last node of the top row.
class UNetPP : public Model {
public:
  std::vector<std::optional<DoubleConv>> grid; // index (i, j) with i + j <= depth
  std::optional<Conv> head;

  int gidx(int i, int j) const { return i * (cfg.depth + 1) + j; }

  UNetPP(ArchConfig cfg, Rng& rng) : Model(cfg) {
    const int w = cfg.base_width;
    grid.resize(static_cast<size_t>(cfg.depth + 1) * (cfg.depth + 1));
    for (int i = 0; i <= cfg.depth; ++i) {
      const int ch_i = w << i;
      const int cin0 = i == 0 ? cfg.in_channels : (w << (i - 1));
      grid[gidx(i, 0)].emplace(params, "x" + std::to_string(i) + "_0", cin0, ch_i, rng);
      for (int j = 1; i + j <= cfg.depth; ++j) {
        const int cin = j * ch_i + (w << (i + 1));
        grid[gidx(i, j)].emplace(params, "x" + std::to_string(i) + "_" + std::to_string(j), cin, ch_i, rng);
      }
    }
    head.emplace(params, "head", w, ArchConfig::out_classes, 1, rng);
  }

  NodePtr forward(NodePtr x) override {
    std::vector<std::vector<NodePtr>> nodes(cfg.depth + 1,
                                            std::vector<NodePtr>(cfg.depth + 1, nullptr));
    for (int i = 0; i <= cfg.depth; ++i) {
      nodes[i][0] = (*grid[gidx(i, 0)])(x);
      if (i < cfg.depth) x = nn::maxpool2(nodes[i][0]);
    }
    for (int j = 1; j <= cfg.depth; ++j) {
      for (int i = 0; i + j <= cfg.depth; ++i) {
        std::vector<NodePtr> inputs;
        for (int p = 0; p < j; ++p) inputs.push_back(nodes[i][p]);
        inputs.push_back(nn::upsample2(nodes[i + 1][j - 1]));
        nodes[i][j] = (*grid[gidx(i, j)])(nn::concat(inputs));
      }
    }
    return nn::softmax_channels((*head)(nodes[0][cfg.depth]));
  }
};

class MultiResUNet : public Model {
public:
  std::vector<MultiResBlock> enc;
  std::optional<MultiResBlock> bott;
  std::vector<ResPath> paths;
  std::vector<ConvBlock> upconv;
  std::vector<MultiResBlock> dec;
  std::optional<Conv> head;

  MultiResUNet(ArchConfig cfg, Rng& rng) : Model(cfg) {
    const int w = cfg.base_width;
    int cin = cfg.in_channels;
    for (int i = 0; i < cfg.depth; ++i) {
      enc.emplace_back(params, "enc" + std::to_string(i), cin, w << i, rng);
      cin = enc.back().out_ch;
      paths.emplace_back(params, "path" + std::to_string(i), cin, cfg.depth - i, rng);
    }
    bott.emplace(params, "bott", cin, w << cfg.depth, rng);
    int up_in = bott->out_ch;
    for (int i = cfg.depth - 1; i >= 0; --i) {
      const int skip_ch = enc[i].out_ch;
      upconv.emplace_back(params, "up" + std::to_string(i), up_in, skip_ch, 3, rng);
      dec.emplace_back(params, "dec" + std::to_string(i), 2 * skip_ch, w << i, rng);
      up_in = dec.back().out_ch;
    }
    head.emplace(params, "head", up_in, ArchConfig::out_classes, 1, rng);
  }

  NodePtr forward(NodePtr x) override {
    std::vector<NodePtr> skips;
    for (int i = 0; i < cfg.depth; ++i) {
      x = enc[i](x);
      skips.push_back(paths[i](x));
      x = nn::maxpool2(x);
    }
    x = (*bott)(x);
    for (int i = cfg.depth - 1, k = 0; i >= 0; --i, ++k) {
      x = upconv[k](nn::upsample2(x));
      x = dec[k](nn::concat({skips[i], x}));
    }
    return nn::softmax_channels((*head)(x));
  }
};

} // namespace

NodePtr Model::run(const nn::Tensor& input) {
  require(input.c == cfg.in_channels, "Model::run: channel count mismatch");
  const int div = 1 << cfg.depth;
  const int ph = (div - input.h % div) % div;
  const int pw = (div - input.w % div) % div;
  nn::Tensor padded = nn::reflect_pad_bottom_right(input, ph, pw);
  NodePtr x = nn::make_input(std::move(padded));
  NodePtr probs = forward(x);
  return nn::crop_topleft(probs, input.h, input.w);
}

std::unique_ptr<Model> build_model(const ArchConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(Rng::mix(seed, 0x696e6974ULL)); // "init" stream
  switch (cfg.variant) {
    case Variant::unet: return std::make_unique<UNet>(cfg, rng, false);
    case Variant::attention_unet: return std::make_unique<UNet>(cfg, rng, true);
    case Variant::unetpp: return std::make_unique<UNetPP>(cfg, rng);
    case Variant::resunet: return std::make_unique<ResUNet>(cfg, rng);
    case Variant::multires_unet: return std::make_unique<MultiResUNet>(cfg, rng);
  }
  throw ValidationError("build_model: unknown variant");
}

// ---------------------------------------------------------------------------
// Frame windows and augmentation
// ---------------------------------------------------------------------------

FrameWindow sample_frame_window(int total, int n, Rng& rng) {
  require(n >= 1, "sample_frame_window: n >= 1");
  require(n <= total, "sample_frame_window: n exceeds available frames");
  FrameWindow win;
  win.n = n;
  win.total = total;
  win.start = (n == total) ? 0 : static_cast<int>(rng.uniform_int(total - n + 1));
  return win;
}

GeomTransform draw_transform(const AugmentSpec& spec, Rng& rng) {
  GeomTransform t;
  if (!spec.enabled) return t;
  t.hflip = rng.bernoulli(spec.p_hflip);
  t.vflip = rng.bernoulli(spec.p_vflip);
  t.angle_deg = spec.rotation_deg > 0.0 ? rng.uniform(-spec.rotation_deg, spec.rotation_deg) : 0.0;
  return t;
}

namespace {

void flip_tensor(nn::Tensor& x, bool hflip, bool vflip) {
  if (!hflip && !vflip) return;
  nn::Tensor out(x.c, x.h, x.w);
  for (int c = 0; c < x.c; ++c)
    for (int i = 0; i < x.h; ++i)
      for (int j = 0; j < x.w; ++j)
        out.at(c, i, j) = x.at(c, vflip ? x.h - 1 - i : i, hflip ? x.w - 1 - j : j);
  x = std::move(out);
}

void flip_labels(TernaryLabelMap& l, bool hflip, bool vflip) {
  if (!hflip && !vflip) return;
  TernaryLabelMap out(l.h, l.w);
  for (int i = 0; i < l.h; ++i)
    for (int j = 0; j < l.w; ++j)
      out.at(i, j) = l.at(vflip ? l.h - 1 - i : i, hflip ? l.w - 1 - j : j);
  l = std::move(out);
}

} // namespace

void apply_geometric(nn::Tensor& frames, TernaryLabelMap& labels, const GeomTransform& t) {
  require(frames.h == labels.h && frames.w == labels.w, "apply_geometric: shape mismatch");
  flip_tensor(frames, t.hflip, t.vflip);
  flip_labels(labels, t.hflip, t.vflip);
  if (t.angle_deg == 0.0) return;

  const int h = frames.h, w = frames.w;
  const double th = t.angle_deg * 3.14159265358979323846 / 180.0;
  const double ct = std::cos(th), st = std::sin(th);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;

  nn::Tensor rot(frames.c, h, w);
  TernaryLabelMap rl(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      // Inverse mapping: rotate the destination pixel back into the source.
      const double sy = ct * (i - cy) + st * (j - cx) + cy;
      const double sx = -st * (i - cy) + ct * (j - cx) + cx;
      const int ni = static_cast<int>(std::lround(sy));
      const int nj = static_cast<int>(std::lround(sx));
      rl.at(i, j) = (ni >= 0 && ni < h && nj >= 0 && nj < w) ? labels.at(ni, nj)
                                                             : static_cast<uint8_t>(kBackground);
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      auto sample = [&](int c, int yy, int xx) -> double {
        return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? frames.at(c, yy, xx) : 0.0;
      };
      for (int c = 0; c < frames.c; ++c) {
        rot.at(c, i, j) = static_cast<float>(
            sample(c, y0, x0) * (1 - fy) * (1 - fx) + sample(c, y0, x0 + 1) * (1 - fy) * fx +
            sample(c, y0 + 1, x0) * fy * (1 - fx) + sample(c, y0 + 1, x0 + 1) * fy * fx);
      }
    }
  }
  frames = std::move(rot);
  labels = std::move(rl);
}

std::pair<nn::Tensor, TernaryLabelMap> augment(const nn::Tensor& frames, const TernaryLabelMap& labels,
                                               const AugmentSpec& spec, Rng& rng) {
  nn::Tensor f = frames;
  TernaryLabelMap l = labels;
  apply_geometric(f, l, draw_transform(spec, rng));
  return {std::move(f), std::move(l)};
}

// ---------------------------------------------------------------------------
// Training / inference
// ---------------------------------------------------------------------------

nn::Tensor window_tensor(const FusStack& stack, int start, int n) {
  require(start >= 0 && start + n <= stack.t, "window_tensor: window out of range");
  nn::Tensor t(n, stack.h, stack.w);
  std::copy(stack.frames.begin() + static_cast<size_t>(start) * stack.h * stack.w,
            stack.frames.begin() + static_cast<size_t>(start + n) * stack.h * stack.w, t.v.begin());
  return t;
}

FusStack temporal_mean_stack(const FusStack& stack) {
  stack.validate();
  FusStack out;
  out.t = 1;
  out.h = stack.h;
  out.w = stack.w;
  out.frame_period_s = stack.frame_period_s;
  out.pixel_size_um = stack.pixel_size_um;
  out.condition = stack.condition;
  const size_t npx = static_cast<size_t>(stack.h) * stack.w;
  out.frames.assign(npx, 0.0f);
  for (size_t i = 0; i < npx; ++i) {
    double sum = 0.0;
    for (int k = 0; k < stack.t; ++k) sum += stack.frames[static_cast<size_t>(k) * npx + i];
    out.frames[i] = static_cast<float>(sum / stack.t);
  }
  return out;
}

namespace {

SoftSegmentation probs_from_node(const nn::Tensor& val) {
  SoftSegmentation s(val.h, val.w);
  for (size_t i = 0; i < val.v.size(); ++i) s.probs[i] = val.v[i];
  return s;
}

} // namespace

TrainResult train_model(Model& model, std::span<const TrainSample> data, const RunConfig& cfg,
                        const ProgressFn& progress) {
  cfg.validate();
  require(!data.empty(), "train: empty dataset");
  const int h = data[0].stack->h, w = data[0].stack->w;
  for (const auto& s : data) {
    require(s.stack && s.labels, "train: null sample");
    require(s.stack->h == h && s.stack->w == w, "train: all stacks must share H,W");
    require(s.stack->t >= cfg.frames, "train: frames exceeds shortest stack");
    require(s.labels->h == h && s.labels->w == w, "train: labels shape mismatch");
  }
  require(model.cfg.in_channels == cfg.frames, "train: model in_channels != cfg.frames");

  nn::Adam opt(cfg.lr);
  const losses::LossWeights lw{cfg.alpha, cfg.beta, cfg.gamma};
  const int n = static_cast<int>(data.size());
  TrainResult result;
  result.epoch_loss.reserve(cfg.epochs);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(Rng::mix(cfg.seed, 0x6f72646572ULL, static_cast<uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[order_rng.uniform_int(i + 1)]);

    double epoch_loss = 0.0;
    for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n - b0);
      model.params.zero_grad();
      for (int k = 0; k < bsz; ++k) {
        const int di = order[b0 + k];
        // Per-(seed, epoch, sample) stream: schedule-independent by construction.
        Rng sample_rng(Rng::mix(cfg.seed, 0x73616d70ULL, static_cast<uint64_t>(epoch),
                                static_cast<uint64_t>(di)));
        const TrainSample& s = data[di];
        FrameWindow win = sample_frame_window(s.stack->t, cfg.frames, sample_rng);
        nn::Tensor frames = window_tensor(*s.stack, win.start, win.n);
        TernaryLabelMap labels = *s.labels;
        if (cfg.augment.enabled) apply_geometric(frames, labels, draw_transform(cfg.augment, sample_rng));

        NodePtr probs_node = model.run(frames);
        SoftSegmentation soft = probs_from_node(probs_node->val);
        std::vector<double> grad;
        epoch_loss += losses::loss_by_id(cfg.loss, soft, labels, lw, &grad);

        nn::Tensor& g = probs_node->ensure_grad();
        for (size_t i = 0; i < grad.size(); ++i) g.v[i] = static_cast<float>(grad[i]);
        nn::backward(probs_node);
      }
      opt.step(model.params, 1.0 / bsz);
    }
    result.epoch_loss.push_back(epoch_loss / n);
    if (progress) progress(epoch, epoch_loss / n);
  }
  return result;
}

Prediction predict(Model& model, const FusStack& stack, int n) {
  require(n >= 1 && n <= stack.t, "predict: stack has too few frames");
  require(model.cfg.in_channels == n, "predict: model in_channels != n");
  nn::Tensor frames = window_tensor(stack, 0, n);
  NodePtr probs_node = model.run(frames);
  Prediction out;
  out.probs = probs_from_node(probs_node->val);
  out.labels = out.probs.argmax();
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void save_model(const Model& model, const RunConfig& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["arch"] = model.cfg.to_json();
  manifest["run"] = io::run_config_to_json(run);
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& p : model.params.params()) {
    plist.push_back({{"name", p.name}, {"shape", {p.node->val.c, p.node->val.h, p.node->val.w}}});
  }
  manifest["params"] = plist;
  manifest["total"] = model.params.total_size();
  io::write_json(dir / "model.json", manifest);

  const std::vector<float> flat = model.params.pack();
  const int64_t shape[1] = {static_cast<int64_t>(flat.size())};
  io::write_tensor(dir / "weights.f32", shape, flat, {{"kind", "model_weights"}});
}

std::unique_ptr<Model> load_model(const std::filesystem::path& dir, RunConfig* run_out) {
  const nlohmann::json manifest = io::read_json(dir / "model.json");
  if (manifest.value("format_version", 0) != 1)
    throw IoError("load_model: unsupported format version");
  ArchConfig arch = ArchConfig::from_json(manifest.at("arch"));
  RunConfig run = io::run_config_from_json(manifest.at("run"));
  if (run_out) *run_out = run;

  auto model = build_model(arch, run.seed);
  const auto tf = io::read_tensor(dir / "weights.f32");
  if (tf.data.size() != model->params.total_size())
    throw IoError("load_model: weights size mismatch");
  // Cross-check stored names against the rebuilt architecture.
  const auto& plist = manifest.at("params");
  const auto& ps = model->params.params();
  if (plist.size() != ps.size()) throw IoError("load_model: parameter list mismatch");
  for (size_t i = 0; i < ps.size(); ++i)
    if (plist[i].at("name").get<std::string>() != ps[i].name)
      throw IoError("load_model: parameter name mismatch at index " + std::to_string(i));
  model->params.unpack(tf.data);
  return model;
}

} // namespace fusseg::models
