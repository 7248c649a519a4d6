#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusseg/nn.hpp"
#include "fusseg/types.hpp"

namespace fusseg::models {

enum class Variant { unet, attention_unet, unetpp, resunet, multires_unet };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ArchConfig {
  Variant variant = Variant::unet;
  int in_channels = 1;
  int base_width = 32;
  int depth = 4; // number of pooling stages; input padded to a multiple of 2^depth
  static constexpr int out_classes = kNumClasses;

  void validate() const {
    require(in_channels >= 1, "ArchConfig: in_channels >= 1");
    require(base_width >= 4, "ArchConfig: base_width >= 4");
    require(depth >= 2 && depth <= 5, "ArchConfig: depth in [2,5]");
  }
  nlohmann::json to_json() const;
  static ArchConfig from_json(const nlohmann::json& j);
};

// A differentiable f_theta: [C_in,H,W] -> [3,H,W] per-pixel softmax. Inputs are
// reflect-padded to the next multiple of 2^depth and outputs cropped back.
class Model {
public:
  explicit Model(ArchConfig cfg) : cfg(cfg) {}
  virtual ~Model() = default;

  // Builds the graph on an already padded input node.
  virtual nn::NodePtr forward(nn::NodePtr x) = 0;

  // Pads, runs forward, crops back to the input size. The returned node can be
  // used as the backward root; probs points at the cropped softmax output.
  nn::NodePtr run(const nn::Tensor& input);

  ArchConfig cfg;
  nn::ParamStore params;
};

std::unique_ptr<Model> build_model(const ArchConfig& cfg, uint64_t seed);

// --- frame windows ----------------------------------------------------------

struct FrameWindow {
  int n = 0, total = 0, start = 0;
};

// If n == total, start = 0; otherwise start is uniform over {0..total-n}.
FrameWindow sample_frame_window(int total, int n, Rng& rng);

// --- augmentation -----------------------------------------------------------

struct GeomTransform {
  bool hflip = false, vflip = false;
  double angle_deg = 0.0;
};

GeomTransform draw_transform(const AugmentSpec& spec, Rng& rng);

// Applies one transform to every frame (bilinear, zero fill) and to the label
// map (nearest, background fill).
void apply_geometric(nn::Tensor& frames, TernaryLabelMap& labels, const GeomTransform& t);

std::pair<nn::Tensor, TernaryLabelMap> augment(const nn::Tensor& frames, const TernaryLabelMap& labels,
                                               const AugmentSpec& spec, Rng& rng);

// --- training / inference ---------------------------------------------------

struct TrainSample {
  const FusStack* stack = nullptr;
  const TernaryLabelMap* labels = nullptr;
};

struct TrainResult {
  std::vector<double> epoch_loss; // mean training loss per epoch
};

using ProgressFn = std::function<void(int epoch, double loss)>;

TrainResult train_model(Model& model, std::span<const TrainSample> data, const RunConfig& cfg,
                        const ProgressFn& progress = {});

struct Prediction {
  SoftSegmentation probs;
  TernaryLabelMap labels;
};

// Deterministic inference on the first n frames.
Prediction predict(Model& model, const FusStack& stack, int n);

// Extracts the window [start, start+n) of a stack as a CHW tensor.
nn::Tensor window_tensor(const FusStack& stack, int start, int n);

// Collapses a stack to its single-frame temporal mean (averaged-stack mode).
FusStack temporal_mean_stack(const FusStack& stack);

// --- serialization ----------------------------------------------------------

void save_model(const Model& model, const RunConfig& run, const std::filesystem::path& dir);
std::unique_ptr<Model> load_model(const std::filesystem::path& dir, RunConfig* run_out = nullptr);

} // namespace fusseg::models
