// fusseg: phantom generation, ULM-based annotation, UNet-family training and
// the experiment harness behind one command-line entry point.
//
// Exit codes: 0 success, 2 validation error (bad flags/inputs), 1 runtime failure.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fusseg/annotation.hpp"
#include "fusseg/core_io.hpp"
#include "fusseg/harness.hpp"
#include "fusseg/losses.hpp"
#include "fusseg/metrics.hpp"
#include "fusseg/models.hpp"
#include "fusseg/phantom.hpp"
#include "fusseg/signal.hpp"

using namespace fusseg;
namespace fs = std::filesystem;

namespace {

struct GlobalOpts {
  uint64_t seed = 0;
  std::string config_path;
};

RunConfig load_run_config(const std::string& path, uint64_t seed_override, bool has_seed) {
  RunConfig cfg;
  if (!path.empty()) {
    cfg = io::run_config_from_json(io::read_json(path));
  } else {
    cfg.apply_weight_defaults();
  }
  if (has_seed) cfg.seed = seed_override;
  cfg.validate();
  return cfg;
}

signal::Roi parse_roi(const std::string& text, int h, int w) {
  // format: r0:r1,c0:c1
  signal::Roi roi;
  const auto comma = text.find(',');
  const auto colon1 = text.find(':');
  require(comma != std::string::npos && colon1 != std::string::npos && colon1 < comma,
          "ROI format is r0:r1,c0:c1");
  const auto colon2 = text.find(':', comma);
  require(colon2 != std::string::npos, "ROI format is r0:r1,c0:c1");
  roi.r0 = std::stoi(text.substr(0, colon1));
  roi.r1 = std::stoi(text.substr(colon1 + 1, comma - colon1 - 1));
  roi.c0 = std::stoi(text.substr(comma + 1, colon2 - comma - 1));
  roi.c1 = std::stoi(text.substr(colon2 + 1));
  roi.validate(h, w);
  return roi;
}

int class_from_string(const std::string& s) {
  if (s == "b" || s == "background") return kBackground;
  if (s == "d" || s == "downward") return kDownward;
  if (s == "u" || s == "upward") return kUpward;
  throw ValidationError("class must be one of b|d|u");
}

void write_phantom_dir(const fs::path& dir, const phantom::PhantomOutput& out, uint64_t subject_seed,
                       int index, const std::string& mode, double tau) {
  fs::create_directories(dir);
  io::write_stack(dir / "stack.f32", out.stack);
  io::write_velocity_map(dir / "ulm.f32", out.ulm);
  io::write_label_map(dir / "labels.pgm", out.labels);
  io::write_binary_mask(dir / "down.pgm", out.masks.downward);
  io::write_binary_mask(dir / "up.pgm", out.masks.upward);
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["subject_id"] = subject_seed;
  manifest["phantom_index"] = index;
  manifest["seed"] = subject_seed;
  manifest["mode"] = mode;
  manifest["frames"] = out.stack.t;
  manifest["tau"] = tau;
  manifest["mixed_fraction"] = out.mixed_fraction;
  manifest["grid"] = {{"h", out.stack.h}, {"w", out.stack.w}, {"h_hi", out.ulm.h}, {"w_hi", out.ulm.w}};
  io::write_json(dir / "manifest.json", manifest);
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"fUS Power-Doppler vascular segmentation toolkit"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--config", g.config_path, "RunConfig JSON file");

  // ---- phantom ----
  auto* cmd_phantom = app.add_subcommand("phantom", "Generate synthetic phantom datasets");
  int ph_count = 1, ph_frames = -1, ph_h = 112, ph_w = 128, ph_ratio = 10, ph_vessels = 10;
  double ph_noise = 0.05, ph_tau = 0.05;
  std::string ph_mode = "rest", ph_out;
  cmd_phantom->add_option("--count", ph_count, "Number of phantoms")->check(CLI::PositiveNumber);
  cmd_phantom->add_option("--mode", ph_mode, "rest|stim")->check(CLI::IsMember({"rest", "stim"}));
  cmd_phantom->add_option("--frames", ph_frames, "Frames per stack (default 3000 rest / 825 stim)");
  cmd_phantom->add_option("--height", ph_h, "Low-res height");
  cmd_phantom->add_option("--width", ph_w, "Low-res width");
  cmd_phantom->add_option("--ratio", ph_ratio, "High-res / low-res grid ratio");
  cmd_phantom->add_option("--vessels", ph_vessels, "Vessel count");
  cmd_phantom->add_option("--noise", ph_noise, "Multiplicative noise sigma");
  cmd_phantom->add_option("--tau", ph_tau, "Annotation threshold");
  cmd_phantom->add_option("--out", ph_out, "Output directory")->required();

  // ---- annotate ----
  auto* cmd_annotate = app.add_subcommand("annotate", "ULM velocity map -> direction masks");
  std::string an_ulm, an_out;
  int an_h = 112, an_w = 128;
  double an_tau = 0.05, an_veps = 0.0;
  std::string an_resize = "block_mean";
  cmd_annotate->add_option("--ulm", an_ulm, "Velocity map tensor file")->required();
  cmd_annotate->add_option("--height", an_h, "Target height");
  cmd_annotate->add_option("--width", an_w, "Target width");
  cmd_annotate->add_option("--tau", an_tau, "Coverage threshold");
  cmd_annotate->add_option("--v-eps", an_veps, "Velocity dead-zone");
  cmd_annotate->add_option("--resize", an_resize, "block_mean|bilinear")
      ->check(CLI::IsMember({"block_mean", "bilinear"}));
  cmd_annotate->add_option("--out", an_out, "Output prefix")->required();

  // ---- train ----
  auto* cmd_train = app.add_subcommand("train", "Train a segmentation model");
  std::string tr_data, tr_out;
  std::string tr_arch, tr_loss;
  int tr_frames = -1, tr_epochs = -1, tr_batch = -1, tr_bw = -1, tr_depth = -1;
  double tr_lr = -1.0;
  bool tr_no_augment = false;
  bool tr_averaged = false;
  cmd_train->add_option("--data", tr_data, "Dataset directory")->required();
  cmd_train->add_option("--out", tr_out, "Model output directory")->required();
  cmd_train->add_option("--arch", tr_arch, "Architecture id");
  cmd_train->add_option("--loss", tr_loss, "Loss id");
  cmd_train->add_option("--frames", tr_frames, "Frame window size n");
  cmd_train->add_option("--epochs", tr_epochs, "Training epochs");
  cmd_train->add_option("--lr", tr_lr, "Learning rate");
  cmd_train->add_option("--batch", tr_batch, "Batch size");
  cmd_train->add_option("--base-width", tr_bw, "Base channel width");
  cmd_train->add_option("--depth", tr_depth, "Encoder depth");
  cmd_train->add_flag("--no-augment", tr_no_augment, "Disable augmentation");
  cmd_train->add_flag("--averaged", tr_averaged, "Collapse stacks to their temporal mean (n=1)");

  // ---- predict ----
  auto* cmd_predict = app.add_subcommand("predict", "Run inference on a stack");
  std::string pr_model, pr_stack, pr_out;
  int pr_frames = -1;
  cmd_predict->add_option("--model", pr_model, "Model directory")->required();
  cmd_predict->add_option("--stack", pr_stack, "Stack tensor file")->required();
  cmd_predict->add_option("--frames", pr_frames, "Frames to use (default: model config)");
  cmd_predict->add_option("--out", pr_out, "Output prefix")->required();

  // ---- eval ----
  auto* cmd_eval = app.add_subcommand("eval", "Compare predicted and truth label maps");
  std::string ev_pred, ev_truth, ev_report;
  cmd_eval->add_option("--pred", ev_pred, "Predicted label map PGM")->required();
  cmd_eval->add_option("--truth", ev_truth, "Ground truth label map PGM")->required();
  cmd_eval->add_option("--report", ev_report, "Report JSON path")->required();

  // ---- xval ----
  auto* cmd_xval = app.add_subcommand("xval", "Cross-validated model/loss grid");
  std::string xv_data, xv_configs, xv_out;
  int xv_folds = 7;
  cmd_xval->add_option("--data", xv_data, "Dataset directory")->required();
  cmd_xval->add_option("--configs", xv_configs, "JSON array of RunConfigs")->required();
  cmd_xval->add_option("--folds", xv_folds, "Fold count");
  cmd_xval->add_option("--out", xv_out, "Output directory")->required();

  // ---- depth-sweep ----
  auto* cmd_depth = app.add_subcommand("depth-sweep", "Stack-depth experiment");
  std::string ds_data, ds_out;
  std::vector<int> ds_depths;
  int ds_folds = 7;
  cmd_depth->add_option("--data", ds_data, "Dataset directory")->required();
  cmd_depth->add_option("--depths", ds_depths, "Frame counts, comma separated")
      ->required()
      ->delimiter(',');
  cmd_depth->add_option("--folds", ds_folds, "Fold count");
  cmd_depth->add_option("--out", ds_out, "Output directory")->required();

  // ---- cross-condition ----
  auto* cmd_cross = app.add_subcommand("cross-condition", "Train on rest, test on stimulation");
  std::string cc_train, cc_test, cc_out;
  cmd_cross->add_option("--train-data", cc_train, "Rest dataset directory")->required();
  cmd_cross->add_option("--test-data", cc_test, "Stimulation dataset directory")->required();
  cmd_cross->add_option("--out", cc_out, "Output directory")->required();

  // ---- signal ----
  auto* cmd_signal = app.add_subcommand("signal", "Per-compartment CBV time series");
  std::string sg_stack, sg_mask, sg_roi, sg_out;
  int sg_baseline = 0;
  cmd_signal->add_option("--stack", sg_stack, "Stack tensor file")->required();
  cmd_signal->add_option("--mask", sg_mask, "Binary mask PGM")->required();
  cmd_signal->add_option("--roi", sg_roi, "r0:r1,c0:c1 (default: full frame)");
  cmd_signal->add_option("--pct-baseline", sg_baseline, "Percent-change baseline frames (0: raw)");
  cmd_signal->add_option("--out", sg_out, "Output CSV")->required();

  // ---- overlay ----
  auto* cmd_overlay = app.add_subcommand("overlay", "Render mask overlay PNG");
  std::string ov_stack, ov_labels, ov_out;
  int ov_frame = 0;
  cmd_overlay->add_option("--stack", ov_stack, "Stack tensor file")->required();
  cmd_overlay->add_option("--labels", ov_labels, "Ternary label map PGM")->required();
  cmd_overlay->add_option("--frame", ov_frame, "Frame index");
  cmd_overlay->add_option("--out", ov_out, "Output PNG")->required();

  // ---- errors ----
  auto* cmd_errors = app.add_subcommand("errors", "FP/FN error images per class");
  std::string er_pred, er_truth, er_cls = "d", er_out;
  cmd_errors->add_option("--pred", er_pred, "Predicted label map PGM")->required();
  cmd_errors->add_option("--truth", er_truth, "Ground truth label map PGM")->required();
  cmd_errors->add_option("--cls", er_cls, "Class: b|d|u");
  cmd_errors->add_option("--out", er_out, "Output prefix")->required();

  // ---- stats ----
  auto* cmd_stats = app.add_subcommand("stats", "Statistical tests");
  auto* cmd_wilcoxon = cmd_stats->add_subcommand("wilcoxon", "Paired signed-rank test");
  std::string wx_a, wx_b, wx_col = "value", wx_out;
  cmd_wilcoxon->add_option("--a", wx_a, "First CSV")->required();
  cmd_wilcoxon->add_option("--b", wx_b, "Second CSV")->required();
  cmd_wilcoxon->add_option("--column", wx_col, "Column name");
  cmd_wilcoxon->add_option("--out", wx_out, "Report JSON path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e); // --help
    app.exit(e);
    return 2;
  }

  try {
    if (*cmd_phantom) {
      phantom::PhantomSpec spec;
      spec.h = ph_h;
      spec.w = ph_w;
      spec.h_hi = ph_h * ph_ratio;
      spec.w_hi = ph_w * ph_ratio;
      spec.vessel_count = ph_vessels;
      spec.noise_sigma = ph_noise;
      // Scale vessel calibre with the high-res grid.
      spec.width_lo = std::max(1.5, 0.005 * spec.w_hi);
      spec.width_hi = std::max(spec.width_lo + 1.0, 0.035 * spec.w_hi);
      std::optional<phantom::StimulusParadigm> paradigm;
      if (ph_mode == "stim") paradigm.emplace();
      const int frames = ph_frames > 0 ? ph_frames : (ph_mode == "stim" ? 825 : 3000);
      for (int i = 0; i < ph_count; ++i) {
        spec.seed = Rng::mix(g.seed, 0x7068616eULL, static_cast<uint64_t>(i));
        auto out = phantom::generate_phantom(spec, paradigm, frames, ph_tau);
        char name[32];
        std::snprintf(name, sizeof(name), "phantom_%04d", i);
        write_phantom_dir(fs::path(ph_out) / name, out, spec.seed, i, ph_mode, ph_tau);
        std::printf("%s: %d vessels, %d frames, mixed %.4f%%\n", name, ph_vessels, frames,
                    100.0 * out.mixed_fraction);
      }
    } else if (*cmd_annotate) {
      auto ulm = io::read_velocity_map(an_ulm);
      annotation::AnnotationParams params;
      params.tau = an_tau;
      params.v_eps = an_veps;
      params.target_h = an_h;
      params.target_w = an_w;
      params.resize = an_resize == "bilinear" ? annotation::ResizeMode::bilinear
                                              : annotation::ResizeMode::block_mean;
      auto res = annotation::annotate(ulm, params);
      io::write_binary_mask(an_out + ".down.pgm", res.masks.downward);
      io::write_binary_mask(an_out + ".up.pgm", res.masks.upward);
      io::write_label_map(an_out + ".labels.pgm", res.labels);
      nlohmann::json info;
      info["tau"] = an_tau;
      info["mixed_fraction"] = res.mixed_fraction;
      info["downward_pixels"] = res.masks.downward.count();
      info["upward_pixels"] = res.masks.upward.count();
      io::write_json(an_out + ".json", info);
      std::printf("annotated: %lld down, %lld up, mixed %.4f%%\n",
                  static_cast<long long>(res.masks.downward.count()),
                  static_cast<long long>(res.masks.upward.count()), 100.0 * res.mixed_fraction);
    } else if (*cmd_train) {
      RunConfig cfg = load_run_config(g.config_path, g.seed, app.count("--seed") > 0);
      if (!tr_arch.empty()) cfg.architecture = tr_arch;
      if (!tr_loss.empty()) {
        cfg.loss = tr_loss;
        cfg.alpha = cfg.beta = cfg.gamma = -1.0;
        cfg.apply_weight_defaults();
      }
      if (tr_frames > 0) cfg.frames = tr_frames;
      if (tr_epochs > 0) cfg.epochs = tr_epochs;
      if (tr_lr >= 0.0) cfg.lr = tr_lr;
      if (tr_batch > 0) cfg.batch_size = tr_batch;
      if (tr_bw > 0) cfg.base_width = tr_bw;
      if (tr_depth > 0) cfg.depth = tr_depth;
      if (tr_no_augment) cfg.augment.enabled = false;
      if (tr_averaged) cfg.averaged_stack = true;
      cfg.validate();

      auto data = harness::load_dataset(tr_data);
      std::vector<FusStack> collapsed;
      if (cfg.averaged_stack) {
        cfg.frames = 1;
        collapsed.reserve(data.size());
        for (const auto& s : data) collapsed.push_back(models::temporal_mean_stack(s.stack));
      }
      std::vector<models::TrainSample> samples;
      for (size_t i = 0; i < data.size(); ++i)
        samples.push_back({cfg.averaged_stack ? &collapsed[i] : &data[i].stack, &data[i].labels});

      models::ArchConfig arch;
      arch.variant = models::variant_from_string(cfg.architecture);
      arch.in_channels = cfg.frames;
      arch.base_width = cfg.base_width;
      arch.depth = cfg.depth;
      auto model = models::build_model(arch, cfg.seed);
      auto result = models::train_model(*model, samples, cfg, [](int epoch, double loss) {
        if ((epoch + 1) % 10 == 0) std::fprintf(stderr, "epoch %d: loss %.6f\n", epoch + 1, loss);
      });
      models::save_model(*model, cfg, tr_out);
      std::vector<std::vector<double>> rows;
      for (size_t e = 0; e < result.epoch_loss.size(); ++e)
        rows.push_back({static_cast<double>(e), result.epoch_loss[e]});
      io::write_csv(fs::path(tr_out) / "loss_curve.csv", {"epoch", "value"}, rows);
      std::printf("trained %s (%zu params), final loss %.6f\n", cfg.architecture.c_str(),
                  model->params.total_size(), result.epoch_loss.back());
    } else if (*cmd_predict) {
      RunConfig run;
      auto model = models::load_model(pr_model, &run);
      auto stack = io::read_stack(pr_stack);
      const int n = pr_frames > 0 ? pr_frames : run.frames;
      auto pred = models::predict(*model, stack, n);
      io::write_soft_seg(pr_out + ".probs.f32", pred.probs);
      io::write_label_map(pr_out + ".labels.pgm", pred.labels);
      io::write_binary_mask(pr_out + ".down.pgm", pred.labels.class_mask(kDownward));
      io::write_binary_mask(pr_out + ".up.pgm", pred.labels.class_mask(kUpward));
      std::printf("predicted %s: %lld down, %lld up\n", pr_stack.c_str(),
                  static_cast<long long>(pred.labels.class_mask(kDownward).count()),
                  static_cast<long long>(pred.labels.class_mask(kUpward).count()));
    } else if (*cmd_eval) {
      auto pred = io::read_label_map(ev_pred);
      auto truth = io::read_label_map(ev_truth);
      auto report = metrics::compute_metrics(metrics::confusion(pred, truth));
      io::write_json(ev_report, report.to_json());
      std::printf("accuracy %.4f f1 %.4f jaccard %.4f\n", report.accuracy, report.f1_macro,
                  report.jaccard_mean);
    } else if (*cmd_xval) {
      auto data = harness::load_dataset(xv_data);
      auto cfg_json = io::read_json(xv_configs);
      std::vector<RunConfig> grid;
      if (cfg_json.is_array())
        for (const auto& j : cfg_json) grid.push_back(io::run_config_from_json(j));
      else
        grid.push_back(io::run_config_from_json(cfg_json));
      FoldSpec folds;
      folds.k = xv_folds;
      folds.seed = g.seed;
      auto report = harness::run_xval(data, grid, folds, true);
      fs::create_directories(xv_out);
      io::write_json(fs::path(xv_out) / "xval_report.json", report);
      std::printf("xval complete: %zu configs x %d folds\n", grid.size(), xv_folds);
    } else if (*cmd_depth) {
      auto data = harness::load_dataset(ds_data);
      RunConfig base = load_run_config(g.config_path, g.seed, app.count("--seed") > 0);
      FoldSpec folds;
      folds.k = ds_folds;
      folds.seed = g.seed;
      std::vector<std::vector<double>> rows;
      auto report = harness::depth_sweep(data, ds_depths, base, folds, &rows, true);
      fs::create_directories(ds_out);
      io::write_json(fs::path(ds_out) / "depth_sweep_report.json", report);
      io::write_csv(fs::path(ds_out) / "depth_sweep.csv", {"depth", "fold", "f1_macro", "jaccard_mean"},
                    rows);
      std::printf("depth sweep complete: %zu depths x %d folds\n", ds_depths.size(), ds_folds);
    } else if (*cmd_cross) {
      auto train_set = harness::load_dataset(cc_train);
      auto test_set = harness::load_dataset(cc_test);
      RunConfig cfg = load_run_config(g.config_path, g.seed, app.count("--seed") > 0);
      metrics::MetricsReport rep;
      auto report = harness::cross_condition(train_set, test_set, cfg, &rep, true);
      fs::create_directories(cc_out);
      io::write_json(fs::path(cc_out) / "cross_condition_report.json", report);
      std::printf("cross-condition: accuracy %.4f f1 %.4f jaccard %.4f\n", rep.accuracy, rep.f1_macro,
                  rep.jaccard_mean);
    } else if (*cmd_signal) {
      auto stack = io::read_stack(sg_stack);
      auto mask = io::read_binary_mask(sg_mask);
      auto roi = sg_roi.empty() ? signal::Roi::full(stack.h, stack.w)
                                : parse_roi(sg_roi, stack.h, stack.w);
      auto series = signal::extract_signal(stack, mask, roi);
      if (sg_baseline > 0) series = signal::percent_change(series, sg_baseline);
      std::vector<std::vector<double>> rows;
      for (size_t k = 0; k < series.values.size(); ++k)
        rows.push_back({static_cast<double>(k), k * series.frame_period_s, series.values[k]});
      io::write_csv(sg_out, {"frame", "time_s", "value"}, rows);
      std::printf("wrote %zu samples to %s\n", series.values.size(), sg_out.c_str());
    } else if (*cmd_overlay) {
      auto stack = io::read_stack(ov_stack);
      auto labels = io::read_label_map(ov_labels);
      auto img = harness::render_overlay(stack, labels, ov_frame);
      png::write_rgb(ov_out, img);
      std::printf("wrote %s\n", ov_out.c_str());
    } else if (*cmd_errors) {
      auto pred = io::read_label_map(er_pred);
      auto truth = io::read_label_map(er_truth);
      auto [fp, fn] = harness::render_error_maps(pred, truth, class_from_string(er_cls));
      io::write_binary_mask(er_out + ".fp.pgm", fp);
      io::write_binary_mask(er_out + ".fn.pgm", fn);
      std::printf("class %s: %lld false positives, %lld false negatives\n", er_cls.c_str(),
                  static_cast<long long>(fp.count()), static_cast<long long>(fn.count()));
    } else if (*cmd_stats) {
      if (*cmd_wilcoxon) {
        auto a = io::read_csv_column(wx_a, wx_col);
        auto b = io::read_csv_column(wx_b, wx_col);
        auto res = metrics::wilcoxon_signed_rank(a, b);
        nlohmann::json j{{"statistic", res.statistic},
                         {"p_value", res.p_value},
                         {"n_effective", res.n_effective},
                         {"exact", res.exact}};
        if (wx_out.empty())
          std::printf("%s\n", j.dump(2).c_str());
        else
          io::write_json(wx_out, j);
      } else {
        throw ValidationError("stats: missing subcommand (wilcoxon)");
      }
    }
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
