#include "scolio/data.hpp"

#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <variant>

namespace scolio {

namespace fs = std::filesystem;

namespace {

void check_angle(double a) {
  if (!(a >= 0.0)) throw std::domain_error("angle must be >= 0, got " + std::to_string(a));
}

using detail::format_double;
using detail::parse_number;
using detail::trim;

double smoothstep_edge(double d, double softness) {
  return 0.5 * (1.0 + std::tanh(d / (2.0 * softness)));
}

}  // namespace

// ---- levels ----------------------------------------------------------------

int general_level(double a) {
  check_angle(a);
  if (a <= 10.0) return 1;
  if (a <= 20.0) return 2;
  if (a <= 45.0) return 3;
  return 4;
}

int fine_level(double a) {
  check_angle(a);
  if (a > 45.0) return 10;
  // smallest j with a <= 5j, without trusting the rounding of a / 5
  int j = std::max(1, static_cast<int>(std::ceil(a / 5.0)));
  while (j > 1 && a <= 5.0 * (j - 1)) --j;
  while (a > 5.0 * j) ++j;
  return std::min(j, 9);
}

int fine_to_general(int fine) {
  if (fine < 1 || fine > 10) throw std::out_of_range("fine level outside [1, 10]");
  if (fine <= 2) return 1;
  if (fine <= 4) return 2;
  if (fine <= 9) return 3;
  return 4;
}

int LevelScheme::level(double angle_deg) const {
  return kind == SchemeKind::general ? general_level(angle_deg) : fine_level(angle_deg);
}

std::pair<double, double> LevelScheme::bounds(int level) const {
  if (level < 1 || level > levels()) throw std::out_of_range("level outside scheme");
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (kind == SchemeKind::general) {
    static constexpr double edges[] = {0.0, 10.0, 20.0, 45.0, inf};
    return {edges[level - 1], edges[level]};
  }
  if (level == 10) return {45.0, inf};
  return {5.0 * (level - 1), 5.0 * level};
}

LevelScheme scheme_from_string(const std::string& s) {
  if (s == "general") return LevelScheme::general();
  if (s == "fine") return LevelScheme::fine();
  throw std::invalid_argument("unknown level scheme '" + s + "' (general|fine)");
}

// ---- samples ---------------------------------------------------------------

void check_bbox(const BBox& b, int width, int height) {
  if (b.w <= 0 || b.h <= 0 || b.x < 0 || b.y < 0 || b.x + b.w > width || b.y + b.h > height) {
    throw std::out_of_range("bbox (" + std::to_string(b.x) + "," + std::to_string(b.y) + "," +
                            std::to_string(b.w) + "," + std::to_string(b.h) + ") outside " +
                            std::to_string(width) + "x" + std::to_string(height) + " image");
  }
}

GrayImage to_gray(const TensorD& image) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw std::invalid_argument("to_gray expects 1 x h x w, got " + shape_str(image.shape()));
  }
  GrayImage g;
  g.height = static_cast<int>(image.dim(1));
  g.width = static_cast<int>(image.dim(2));
  g.pixels.resize(static_cast<std::size_t>(image.numel()));
  auto d = image.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    g.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(d[i], 0.0, 1.0) * 255.0));
  }
  return g;
}

TensorD from_gray(const GrayImage& img) {
  TensorD t(Shape{1, img.height, img.width});
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = img.pixels[i] / 255.0;
  return t;
}

// ---- synth config ----------------------------------------------------------

namespace {

using FieldRef = std::variant<int*, double*, std::uint64_t*>;

std::vector<std::pair<std::string, FieldRef>> fields(SynthConfig& c) {
  return {
      {"width", &c.width},
      {"height", &c.height},
      {"seed", &c.seed},
      {"max_angle", &c.max_angle},
      {"background", &c.background},
      {"skin", &c.skin},
      {"skin_jitter", &c.skin_jitter},
      {"width_jitter", &c.width_jitter},
      {"edge_softness", &c.edge_softness},
      {"torso_top", &c.torso_top},
      {"torso_bottom", &c.torso_bottom},
      {"shoulder_half_width", &c.shoulder_half_width},
      {"waist_half_width", &c.waist_half_width},
      {"waist_pos", &c.waist_pos},
      {"spine_top", &c.spine_top},
      {"spine_bottom", &c.spine_bottom},
      {"spine_depth", &c.spine_depth},
      {"spine_width", &c.spine_width},
      {"scapula_x", &c.scapula_x},
      {"scapula_y", &c.scapula_y},
      {"scapula_radius", &c.scapula_radius},
      {"scapula_level", &c.scapula_level},
      {"shoulder_tilt", &c.shoulder_tilt},
      {"scapular_bump", &c.scapular_bump},
      {"waist_shift", &c.waist_shift},
      {"noise", &c.noise},
  };
}

}  // namespace

void SynthConfig::validate() const {
  if (width < 8 || height < 8) throw std::invalid_argument("synth image must be at least 8x8");
  if (!(max_angle > 45.0 && max_angle < 180.0)) {
    throw std::invalid_argument("max_angle must lie in (45, 180)");
  }
  if (noise < 0 || edge_softness <= 0 || spine_width <= 0 || scapula_radius <= 0) {
    throw std::invalid_argument("synth config: noise must be >= 0 and widths > 0");
  }
  if (!(torso_top < torso_bottom) || !(spine_top < spine_bottom)) {
    throw std::invalid_argument("synth config: top must lie above bottom");
  }
}

void SynthConfig::set(const std::string& key, const std::string& value) {
  for (auto& [name, ref] : fields(*this)) {
    if (name != key) continue;
    std::visit(
        [&](auto* p) { *p = parse_number<std::remove_pointer_t<decltype(p)>>(value, key); }, ref);
    return;
  }
  throw std::invalid_argument("unknown synth key '" + key + "'");
}

std::map<std::string, std::string> SynthConfig::to_map() const {
  SynthConfig copy = *this;
  std::map<std::string, std::string> out;
  for (auto& [name, ref] : fields(copy)) {
    std::visit(
        [&](auto* p) {
          if constexpr (std::is_same_v<decltype(p), double*>) {
            out[name] = format_double(*p);
          } else {
            out[name] = std::to_string(*p);
          }
        },
        ref);
  }
  return out;
}

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open config");
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                  ": expected key=value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

SynthConfig read_synth_config(const fs::path& path) {
  SynthConfig cfg;
  for (const auto& [k, v] : read_key_values(path)) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

// ---- renderer --------------------------------------------------------------

Sample synth_back(double angle, const SynthConfig& cfg, std::uint64_t sample_seed) {
  if (!(angle >= 0.0 && angle < 180.0)) {
    throw std::domain_error("synth angle must lie in [0, 180), got " + std::to_string(angle));
  }
  cfg.validate();
  Rng rng(sample_seed);
  const double W = cfg.width, H = cfg.height;
  const double width_scale = 1.0 + cfg.width_jitter * (2.0 * rng.uniform() - 1.0);
  const double skin = cfg.skin + cfg.skin_jitter * (2.0 * rng.uniform() - 1.0);

  const double tilt = cfg.shoulder_tilt * angle;
  const double top0 = cfg.torso_top * H;
  const double bottom = cfg.torso_bottom * H;
  const double shoulder_hw = cfg.shoulder_half_width * W * width_scale;
  const double waist_hw = cfg.waist_half_width * W * width_scale;
  const double waist_y = cfg.waist_pos * H;
  const double shift = cfg.waist_shift * angle * W;

  // spine: circular arc through both spine ends whose tangents differ by `angle`
  const double s_top = cfg.spine_top * H, s_bot = cfg.spine_bottom * H;
  const double s_mid = 0.5 * (s_top + s_bot), s_half = 0.5 * (s_bot - s_top);
  const double theta = angle * std::numbers::pi / 180.0;
  const double radius = angle > 0.0 ? s_half / std::sin(0.5 * theta) : 0.0;
  const double chord_offset = angle > 0.0 ? radius * std::cos(0.5 * theta) : 0.0;

  const double sx = cfg.scapula_x * W, sy = cfg.scapula_y * H;
  const double sr2 = std::pow(cfg.scapula_radius * W, 2);
  const double left_amp = cfg.scapula_level * skin;
  const double right_amp = (cfg.scapula_level + cfg.scapular_bump * angle) * skin;

  Sample s;
  s.image = TensorD(Shape{1, cfg.height, cfg.width});
  auto img = s.image.data();
  int min_x = cfg.width, max_x = -1, min_y = cfg.height, max_y = -1;
  for (int y = 0; y < cfg.height; ++y) {
    const double py = y + 0.5;
    const double dv = (py - waist_y) / (0.2 * H);
    const double hw = shoulder_hw - (shoulder_hw - waist_hw) * std::exp(-dv * dv);
    const double dc = (py - waist_y) / (0.2 * H);
    const double center = shift * std::exp(-dc * dc);
    const double left = center - hw, right = center + hw;
    double spine_x = 0.0;
    if (angle > 0.0 && py > s_top && py < s_bot) {
      const double dy = py - s_mid;
      spine_x = std::sqrt(radius * radius - dy * dy) - chord_offset;
    }
    for (int x = 0; x < cfg.width; ++x) {
      const double px = x + 0.5 - 0.5 * W;
      const double q = px / shoulder_hw;
      const double top = top0 - tilt * px + 0.12 * H * (q * q) * (q * q);
      const double d = std::min(std::min(px - left, right - px), std::min(py - top, bottom - py));
      const double mask = smoothstep_edge(d, cfg.edge_softness);

      const double r = px / hw;
      double value = skin * (1.0 - 0.15 * r * r);
      const double yl = sy + tilt * sx, yr = sy - tilt * sx;
      const double dl = (px + sx) * (px + sx) + (py - yl) * (py - yl);
      const double dr = (px - sx) * (px - sx) + (py - yr) * (py - yr);
      value += left_amp * std::exp(-dl / sr2) + right_amp * std::exp(-dr / sr2);
      const double g = (px - spine_x) / cfg.spine_width;
      value -= cfg.spine_depth * skin * std::exp(-g * g);

      img[static_cast<std::size_t>(y) * cfg.width + x] =
          cfg.background + (value - cfg.background) * mask;
      if (mask > 0.5) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
    }
  }
  for (double& v : img) {
    if (cfg.noise > 0.0) v += cfg.noise * rng.normal();
    v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  }
  if (max_x < 0) throw std::logic_error("synth: torso left the canvas");
  const int margin = 2;
  s.bbox.x = std::max(0, min_x - margin);
  s.bbox.y = std::max(0, min_y - margin);
  s.bbox.w = std::min(cfg.width - 1, max_x + margin) - s.bbox.x + 1;
  s.bbox.h = std::min(cfg.height - 1, max_y + margin) - s.bbox.y + 1;
  s.angle_deg = angle;
  s.general_level = general_level(angle);
  s.fine_level = fine_level(angle);
  return s;
}

std::vector<Sample> synth_corpus(const SynthConfig& cfg, const std::vector<int>& counts,
                                 const LevelScheme& scheme) {
  cfg.validate();
  if (static_cast<int>(counts.size()) != scheme.levels()) {
    throw std::invalid_argument("need one count per " + scheme.name() + " level (" +
                                std::to_string(scheme.levels()) + ")");
  }
  std::vector<Sample> out;
  std::uint64_t index = 0;
  for (int level = 1; level <= scheme.levels(); ++level) {
    const int n = counts[static_cast<std::size_t>(level - 1)];
    if (n < 1) throw std::invalid_argument("every level needs at least one sample");
    auto [lo, hi] = scheme.bounds(level);
    if (std::isinf(hi)) hi = cfg.max_angle;
    for (int i = 0; i < n; ++i, ++index) {
      Rng rng(mix_seed(cfg.seed, index));
      // (lo, hi]; level 1 may also produce lo itself only through rounding
      double angle = hi - (hi - lo) * rng.uniform();
      if (scheme.level(angle) != level) angle = hi;
      out.push_back(synth_back(angle, cfg, rng.next()));
    }
  }
  return out;
}

void write_corpus(const fs::path& dir, std::vector<Sample>& samples) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw std::runtime_error((dir / "images").string() + ": " + ec.message());
  std::vector<ManifestRow> rows;
  rows.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "images/%06zu.png", i);
    samples[i].path = name;
    write_png(dir / name, to_gray(samples[i].image));
    rows.push_back({name, samples[i].angle_deg, samples[i].bbox});
  }
  write_manifest(dir / "manifest.csv", rows);
}

std::vector<Sample> generate_corpus(const fs::path& dir, const SynthConfig& cfg,
                                    const std::vector<int>& counts, const LevelScheme& scheme) {
  auto samples = synth_corpus(cfg, counts, scheme);
  write_corpus(dir, samples);
  return samples;
}

// ---- manifest --------------------------------------------------------------

void write_manifest(const fs::path& file, const std::vector<ManifestRow>& rows) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error(file.string() + ": cannot open for writing");
  out << kManifestHeader << '\n';
  for (const auto& r : rows) {
    if (r.path.find(',') != std::string::npos || r.path.find('\n') != std::string::npos) {
      throw std::invalid_argument("manifest path may not contain ',' or newlines: " + r.path);
    }
    out << r.path << ',' << format_double(r.angle_deg) << ',' << r.bbox.x << ',' << r.bbox.y
        << ',' << r.bbox.w << ',' << r.bbox.h << '\n';
  }
  if (!out) throw std::runtime_error(file.string() + ": write failed");
}

std::vector<ManifestRow> read_manifest(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error(file.string() + ": cannot open manifest");
  std::string line;
  if (!std::getline(in, line) || trim(line) != kManifestHeader) {
    throw std::runtime_error(file.string() + ": bad manifest header");
  }
  std::vector<ManifestRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    const std::string where = file.string() + ":" + std::to_string(lineno);
    if (cols.size() != 6) throw std::runtime_error(where + ": expected 6 columns");
    try {
      ManifestRow r;
      r.path = cols[0];
      r.angle_deg = parse_number<double>(cols[1], "angle_deg");
      r.bbox = {parse_number<int>(cols[2], "bbox_x"), parse_number<int>(cols[3], "bbox_y"),
                parse_number<int>(cols[4], "bbox_w"), parse_number<int>(cols[5], "bbox_h")};
      rows.push_back(std::move(r));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
  }
  return rows;
}

Sample load_sample(const fs::path& image_path, double angle_deg, const BBox& box) {
  Sample s;
  s.image = from_gray(read_png(image_path));
  check_bbox(box, s.width(), s.height());
  s.bbox = box;
  s.angle_deg = angle_deg;
  s.general_level = general_level(angle_deg);
  s.fine_level = fine_level(angle_deg);
  return s;
}

std::vector<Sample> read_corpus(const fs::path& dir) {
  const auto rows = read_manifest(dir / "manifest.csv");
  std::vector<Sample> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    out.push_back(load_sample(dir / r.path, r.angle_deg, r.bbox));
    out.back().path = r.path;
  }
  return out;
}

// ---- preprocessing ---------------------------------------------------------

namespace {

TensorD resample(const TensorD& image, double x0, double y0, double bw, double bh, int out_h,
                 int out_w) {
  const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
  TensorD out(Shape{1, out_h, out_w});
  auto src = image.data();
  auto dst = out.data();
  auto at = [&](int yy, int xx) { return src[static_cast<std::size_t>(yy) * w + xx]; };
  for (int i = 0; i < out_h; ++i) {
    const double sy = std::clamp(y0 + (i + 0.5) * bh / out_h - 0.5, 0.0, h - 1.0);
    const int ya = static_cast<int>(sy);
    const int yb = std::min(ya + 1, h - 1);
    const double fy = sy - ya;
    for (int j = 0; j < out_w; ++j) {
      const double sx = std::clamp(x0 + (j + 0.5) * bw / out_w - 0.5, 0.0, w - 1.0);
      const int xa = static_cast<int>(sx);
      const int xb = std::min(xa + 1, w - 1);
      const double fx = sx - xa;
      const double top = std::lerp(at(ya, xa), at(ya, xb), fx);
      const double bot = std::lerp(at(yb, xa), at(yb, xb), fx);
      dst[static_cast<std::size_t>(i) * out_w + j] = std::lerp(top, bot, fy);
    }
  }
  return out;
}

}  // namespace

TensorD resize_bilinear(const TensorD& image, int out_h, int out_w) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw std::invalid_argument("resize expects 1 x h x w, got " + shape_str(image.shape()));
  }
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize to an empty image");
  return resample(image, 0.0, 0.0, static_cast<double>(image.dim(2)),
                  static_cast<double>(image.dim(1)), out_h, out_w);
}

TensorD crop_bbox(const Sample& s, int out_h, int out_w) {
  check_bbox(s.bbox, s.width(), s.height());
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("crop to an empty image");
  return resample(s.image, s.bbox.x, s.bbox.y, s.bbox.w, s.bbox.h, out_h, out_w);
}

void AugmentPolicy::validate() const {
  auto in = [](double v, double hi) { return v >= 0.0 && v <= hi; };
  if (!in(flip_prob, 1.0) || !in(crop, 0.25) || !in(scale, 0.5) || !in(brightness, 0.5) ||
      !in(contrast, 0.5)) {
    throw std::invalid_argument("augment policy magnitude out of range");
  }
}

Sample augment(const Sample& s, Rng& rng, const AugmentPolicy& policy) {
  policy.validate();
  Sample out = s;
  out.image = s.image.clone();
  const int h = s.height(), w = s.width();

  if (policy.flip_prob > 0.0 && rng.bernoulli(policy.flip_prob)) {
    auto d = out.image.data();
    for (int y = 0; y < h; ++y) {
      auto row = d.subspan(static_cast<std::size_t>(y) * w, static_cast<std::size_t>(w));
      std::reverse(row.begin(), row.end());
    }
    out.bbox.x = w - s.bbox.x - s.bbox.w;
  }

  double x0 = out.bbox.x, y0 = out.bbox.y;
  double x1 = x0 + out.bbox.w, y1 = y0 + out.bbox.h;
  if (policy.scale > 0.0) {
    const double f = rng.uniform(1.0 - policy.scale, 1.0 + policy.scale);
    const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
    const double hw = 0.5 * (x1 - x0) * f, hh = 0.5 * (y1 - y0) * f;
    x0 = cx - hw, x1 = cx + hw, y0 = cy - hh, y1 = cy + hh;
  }
  if (policy.crop > 0.0) {
    const double bw = x1 - x0, bh = y1 - y0;
    x0 += rng.uniform(-policy.crop, policy.crop) * bw;
    x1 += rng.uniform(-policy.crop, policy.crop) * bw;
    y0 += rng.uniform(-policy.crop, policy.crop) * bh;
    y1 += rng.uniform(-policy.crop, policy.crop) * bh;
  }
  if (policy.scale > 0.0 || policy.crop > 0.0) {
    const int bx0 = std::clamp(static_cast<int>(std::lround(x0)), 0, w - 2);
    const int by0 = std::clamp(static_cast<int>(std::lround(y0)), 0, h - 2);
    const int bx1 = std::clamp(static_cast<int>(std::lround(x1)), bx0 + 2, w);
    const int by1 = std::clamp(static_cast<int>(std::lround(y1)), by0 + 2, h);
    out.bbox = {bx0, by0, bx1 - bx0, by1 - by0};
  }

  if (policy.brightness > 0.0 || policy.contrast > 0.0) {
    const double shift =
        policy.brightness > 0.0 ? rng.uniform(-policy.brightness, policy.brightness) : 0.0;
    const double gain =
        policy.contrast > 0.0 ? rng.uniform(1.0 - policy.contrast, 1.0 + policy.contrast) : 1.0;
    auto d = out.image.data();
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(d.size());
    for (double& v : d) v = std::clamp((v - mean) * gain + mean + shift, 0.0, 1.0);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                          int out_h, int out_w) {
  Tensor<Scalar> batch(Shape{static_cast<Index>(idx.size()), 1, out_h, out_w});
  auto dst = batch.data();
  const std::size_t per = static_cast<std::size_t>(out_h) * out_w;
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const TensorD crop = crop_bbox(samples.at(idx[n]), out_h, out_w);
    auto src = crop.data();
    for (std::size_t i = 0; i < per; ++i) dst[n * per + i] = static_cast<Scalar>(src[i]);
  }
  return batch;
}

template Tensor<float> make_batch(const std::vector<Sample>&, const std::vector<std::size_t>&, int,
                                  int);
template Tensor<double> make_batch(const std::vector<Sample>&, const std::vector<std::size_t>&,
                                   int, int);

}  // namespace scolio
