#include "fusseg/core_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fusseg {

// Loss weight defaults: alpha=beta=0.5 for dice_ce; alpha=1 for the CF family;
// gamma=1 (cf_b), beta=1 (cf_v); gamma=0.5 and beta=1 for the full cf.
void RunConfig::apply_weight_defaults() {
  if (loss == "dice_ce") {
    if (alpha < 0) alpha = 0.5;
    if (beta < 0) beta = 0.5;
    if (gamma < 0) gamma = 0.0;
  } else if (loss == "cf_b") {
    if (alpha < 0) alpha = 1.0;
    if (gamma < 0) gamma = 1.0;
    if (beta < 0) beta = 0.0;
  } else if (loss == "cf_v") {
    if (alpha < 0) alpha = 1.0;
    if (beta < 0) beta = 1.0;
    if (gamma < 0) gamma = 0.0;
  } else if (loss == "cf") {
    if (alpha < 0) alpha = 1.0;
    if (gamma < 0) gamma = 0.5;
    if (beta < 0) beta = 1.0;
  }
}

void RunConfig::validate() const {
  require(loss == "dice_ce" || loss == "cf_b" || loss == "cf_v" || loss == "cf",
          "RunConfig: unknown loss id '" + loss + "'");
  require(architecture == "unet" || architecture == "attention_unet" || architecture == "unetpp" ||
              architecture == "resunet" || architecture == "multires_unet",
          "RunConfig: unknown architecture '" + architecture + "'");
  require(alpha >= 0.0 && alpha <= 1.0, "RunConfig: alpha in [0,1]");
  require(beta >= 0.0 && beta <= 1.0, "RunConfig: beta in [0,1]");
  require(gamma >= 0.0 && gamma <= 1.0, "RunConfig: gamma in [0,1]");
  require(frames >= 1, "RunConfig: frames >= 1");
  require(epochs >= 1, "RunConfig: epochs >= 1");
  require(lr >= 0.0, "RunConfig: lr >= 0 (0 permitted for no-update runs)");
  require(batch_size >= 1, "RunConfig: batch_size >= 1");
  require(base_width >= 4, "RunConfig: base_width >= 4");
  require(depth >= 2 && depth <= 5, "RunConfig: depth in [2,5]");
  augment.validate();
  folds.validate();
}

} // namespace fusseg

namespace fusseg::io {

namespace {

void byteswap_f32_buffer(std::vector<char>& buf) {
  for (size_t i = 0; i + 4 <= buf.size(); i += 4) {
    std::swap(buf[i], buf[i + 3]);
    std::swap(buf[i + 1], buf[i + 2]);
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  return f;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  return f;
}

} // namespace

void write_tensor(const std::filesystem::path& path, std::span<const int64_t> shape,
                  std::span<const float> data, const nlohmann::json& meta) {
  int64_t count = 1;
  for (int64_t d : shape) {
    require(d >= 0, "write_tensor: negative dimension");
    count *= d;
  }
  require(static_cast<size_t>(count) == data.size(), "write_tensor: shape/data size mismatch");
  for (float v : data)
    if (!std::isfinite(v)) throw ValidationError("write_tensor: non-finite value rejected");

  nlohmann::json header;
  header["dtype"] = "f32le";
  header["shape"] = shape;
  header["meta"] = meta.is_null() ? nlohmann::json::object() : meta;

  auto f = open_out(path);
  f << header.dump() << '\n';

  std::vector<char> buf(data.size() * 4);
  std::memcpy(buf.data(), data.data(), buf.size());
  if constexpr (std::endian::native == std::endian::big) byteswap_f32_buffer(buf);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write_tensor: write failed: " + path.string());
}

TensorFile read_tensor(const std::filesystem::path& path) {
  auto f = open_in(path);
  std::string line;
  if (!std::getline(f, line)) throw IoError("read_tensor: missing header line: " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("read_tensor: malformed header: " + std::string(e.what()));
  }
  if (!header.is_object() || header.value("dtype", "") != "f32le" || !header.contains("shape") ||
      !header["shape"].is_array())
    throw IoError("read_tensor: malformed header in " + path.string());

  TensorFile out;
  int64_t count = 1;
  for (const auto& d : header["shape"]) {
    if (!d.is_number_integer() || d.get<int64_t>() < 0)
      throw IoError("read_tensor: bad shape entry");
    out.shape.push_back(d.get<int64_t>());
    count *= d.get<int64_t>();
  }
  out.meta = header.value("meta", nlohmann::json::object());

  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() != static_cast<size_t>(count) * 4)
    throw IoError("read_tensor: payload length " + std::to_string(buf.size()) + " != shape product * 4 (" +
                  std::to_string(count * 4) + ") in " + path.string());
  if constexpr (std::endian::native == std::endian::big) byteswap_f32_buffer(buf);
  out.data.resize(static_cast<size_t>(count));
  std::memcpy(out.data.data(), buf.data(), buf.size());
  return out;
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

namespace {

void write_pgm(const std::filesystem::path& path, int h, int w, int maxval,
               std::span<const uint8_t> pixels) {
  require(pixels.size() == static_cast<size_t>(h) * w, "write_pgm: size mismatch");
  auto f = open_out(path);
  f << "P5\n" << w << ' ' << h << '\n' << maxval << '\n';
  f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!f) throw IoError("write_pgm: write failed: " + path.string());
}

// Token reader skipping whitespace and '#' comments.
int next_pgm_token(std::istream& s) {
  int c;
  while ((c = s.get()) != EOF) {
    if (c == '#') {
      while ((c = s.get()) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      s.unget();
      int v;
      if (!(s >> v)) throw IoError("PGM: expected integer token");
      return v;
    }
  }
  throw IoError("PGM: unexpected end of header");
}

struct PgmData {
  int h, w, maxval;
  std::vector<uint8_t> pixels;
};

PgmData read_pgm(const std::filesystem::path& path) {
  auto f = open_in(path);
  char magic[2];
  f.read(magic, 2);
  if (!f || magic[0] != 'P' || magic[1] != '5') throw IoError("PGM: not a P5 file: " + path.string());
  PgmData d;
  d.w = next_pgm_token(f);
  d.h = next_pgm_token(f);
  d.maxval = next_pgm_token(f);
  if (d.w <= 0 || d.h <= 0 || d.maxval <= 0 || d.maxval > 255)
    throw IoError("PGM: bad dimensions or maxval in " + path.string());
  f.get(); // single whitespace after maxval
  d.pixels.resize(static_cast<size_t>(d.h) * d.w);
  f.read(reinterpret_cast<char*>(d.pixels.data()), static_cast<std::streamsize>(d.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(d.pixels.size()))
    throw IoError("PGM: truncated payload in " + path.string());
  return d;
}

} // namespace

void write_label_map(const std::filesystem::path& path, const TernaryLabelMap& labels) {
  labels.validate();
  write_pgm(path, labels.h, labels.w, 2, labels.labels);
}

TernaryLabelMap read_label_map(const std::filesystem::path& path) {
  PgmData d = read_pgm(path);
  if (d.maxval != 2) throw IoError("read_label_map: maxval must be 2 in " + path.string());
  TernaryLabelMap out(d.h, d.w);
  for (size_t i = 0; i < d.pixels.size(); ++i) {
    if (d.pixels[i] > 2) throw IoError("read_label_map: pixel value > 2 in " + path.string());
    out.labels[i] = d.pixels[i];
  }
  return out;
}

void write_binary_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  for (uint8_t v : mask.v) require(v <= 1, "write_binary_mask: values must be 0/1");
  write_pgm(path, mask.h, mask.w, 1, mask.v);
}

BinaryMask read_binary_mask(const std::filesystem::path& path) {
  PgmData d = read_pgm(path);
  if (d.maxval != 1) throw IoError("read_binary_mask: maxval must be 1 in " + path.string());
  BinaryMask out(d.h, d.w);
  for (size_t i = 0; i < d.pixels.size(); ++i) {
    if (d.pixels[i] > 1) throw IoError("read_binary_mask: pixel value > 1 in " + path.string());
    out.v[i] = d.pixels[i];
  }
  return out;
}

void write_gray_image(const std::filesystem::path& path, int h, int w, std::span<const uint8_t> pixels) {
  write_pgm(path, h, w, 255, pixels);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  auto f = open_out(path);
  for (size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
  f << '\n';
  for (const auto& row : rows) {
    require(row.size() == header.size(), "write_csv: row width != header width");
    for (size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << format_double(row[i]);
    f << '\n';
  }
  if (!f) throw IoError("write_csv: write failed: " + path.string());
}

std::vector<std::vector<double>> read_csv(const std::filesystem::path& path,
                                          std::vector<std::string>* header) {
  auto f = open_in(path);
  std::string line;
  if (!std::getline(f, line)) throw IoError("read_csv: empty file: " + path.string());
  if (header) {
    header->clear();
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header->push_back(cell);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size())
        throw IoError("read_csv: bad numeric cell '" + cell + "' in " + path.string());
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<double> read_csv_column(const std::filesystem::path& path, const std::string& column) {
  std::vector<std::string> header;
  auto rows = read_csv(path, &header);
  size_t idx = header.size();
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == column) idx = i;
  if (idx == header.size()) throw IoError("read_csv_column: column '" + column + "' not found");
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    if (idx >= row.size()) throw IoError("read_csv_column: short row");
    out.push_back(row[idx]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Domain wrappers
// ---------------------------------------------------------------------------

void write_stack(const std::filesystem::path& path, const FusStack& stack) {
  stack.validate();
  nlohmann::json meta;
  meta["kind"] = "fus_stack";
  meta["frame_period_s"] = stack.frame_period_s;
  meta["pixel_size_um"] = stack.pixel_size_um;
  meta["condition"] = to_string(stack.condition);
  const int64_t shape[3] = {stack.t, stack.h, stack.w};
  write_tensor(path, shape, stack.frames, meta);
}

FusStack read_stack(const std::filesystem::path& path) {
  TensorFile tf = read_tensor(path);
  if (tf.shape.size() != 3) throw IoError("read_stack: expected rank-3 tensor");
  FusStack s;
  s.t = static_cast<int>(tf.shape[0]);
  s.h = static_cast<int>(tf.shape[1]);
  s.w = static_cast<int>(tf.shape[2]);
  s.frames = std::move(tf.data);
  s.frame_period_s = tf.meta.value("frame_period_s", 0.4);
  s.pixel_size_um = tf.meta.value("pixel_size_um", 100.0);
  s.condition = condition_from_string(tf.meta.value("condition", "rest"));
  s.validate();
  return s;
}

void write_velocity_map(const std::filesystem::path& path, const UlmVelocityMap& map) {
  map.validate();
  nlohmann::json meta;
  meta["kind"] = "ulm_velocity";
  meta["pixel_size_um"] = map.pixel_size_um;
  const int64_t shape[2] = {map.h, map.w};
  write_tensor(path, shape, map.values, meta);
}

UlmVelocityMap read_velocity_map(const std::filesystem::path& path) {
  TensorFile tf = read_tensor(path);
  if (tf.shape.size() != 2) throw IoError("read_velocity_map: expected rank-2 tensor");
  UlmVelocityMap m;
  m.h = static_cast<int>(tf.shape[0]);
  m.w = static_cast<int>(tf.shape[1]);
  m.values = std::move(tf.data);
  m.pixel_size_um = tf.meta.value("pixel_size_um", 10.0);
  m.validate();
  return m;
}

void write_soft_seg(const std::filesystem::path& path, const SoftSegmentation& seg) {
  seg.validate();
  std::vector<float> data(seg.probs.begin(), seg.probs.end());
  nlohmann::json meta;
  meta["kind"] = "soft_segmentation";
  const int64_t shape[3] = {kNumClasses, seg.h, seg.w};
  write_tensor(path, shape, data, meta);
}

SoftSegmentation read_soft_seg(const std::filesystem::path& path) {
  TensorFile tf = read_tensor(path);
  if (tf.shape.size() != 3 || tf.shape[0] != kNumClasses)
    throw IoError("read_soft_seg: expected [3,H,W] tensor");
  SoftSegmentation s(static_cast<int>(tf.shape[1]), static_cast<int>(tf.shape[2]));
  s.probs.assign(tf.data.begin(), tf.data.end());
  return s;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  auto f = open_out(path);
  f << j.dump(2) << '\n';
  if (!f) throw IoError("write_json: write failed: " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  auto f = open_in(path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("read_json: " + path.string() + ": " + e.what());
  }
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["architecture"] = cfg.architecture;
  j["loss"] = cfg.loss;
  j["alpha"] = cfg.alpha;
  j["beta"] = cfg.beta;
  j["gamma"] = cfg.gamma;
  j["frames"] = cfg.frames;
  j["epochs"] = cfg.epochs;
  j["lr"] = cfg.lr;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["base_width"] = cfg.base_width;
  j["depth"] = cfg.depth;
  j["averaged_stack"] = cfg.averaged_stack;
  j["augment"] = {{"enabled", cfg.augment.enabled},
                  {"p_hflip", cfg.augment.p_hflip},
                  {"p_vflip", cfg.augment.p_vflip},
                  {"rotation_deg", cfg.augment.rotation_deg}};
  j["folds"] = {{"k", cfg.folds.k},
                {"train_count", cfg.folds.train_count},
                {"test_count", cfg.folds.test_count},
                {"seed", cfg.folds.seed}};
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  cfg.architecture = j.value("architecture", cfg.architecture);
  cfg.loss = j.value("loss", cfg.loss);
  cfg.alpha = j.value("alpha", -1.0);
  cfg.beta = j.value("beta", -1.0);
  cfg.gamma = j.value("gamma", -1.0);
  cfg.frames = j.value("frames", cfg.frames);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.base_width = j.value("base_width", cfg.base_width);
  cfg.depth = j.value("depth", cfg.depth);
  cfg.averaged_stack = j.value("averaged_stack", cfg.averaged_stack);
  if (j.contains("augment")) {
    const auto& a = j["augment"];
    cfg.augment.enabled = a.value("enabled", cfg.augment.enabled);
    cfg.augment.p_hflip = a.value("p_hflip", cfg.augment.p_hflip);
    cfg.augment.p_vflip = a.value("p_vflip", cfg.augment.p_vflip);
    cfg.augment.rotation_deg = a.value("rotation_deg", cfg.augment.rotation_deg);
  }
  if (j.contains("folds")) {
    const auto& fjs = j["folds"];
    cfg.folds.k = fjs.value("k", cfg.folds.k);
    cfg.folds.train_count = fjs.value("train_count", cfg.folds.train_count);
    cfg.folds.test_count = fjs.value("test_count", cfg.folds.test_count);
    cfg.folds.seed = fjs.value("seed", cfg.folds.seed);
  }
  cfg.apply_weight_defaults();
  cfg.validate();
  return cfg;
}

} // namespace fusseg::io
