#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "scolio/image_io.hpp"
#include "scolio/rng.hpp"
#include "scolio/tensor.hpp"

namespace scolio {

// ---- severity levels -------------------------------------------------------

enum class SchemeKind { general, fine };

/// Normal [0,10], Minor (10,20], Moderate (20,45], Severe (45,inf).
int general_level(double angle_deg);
/// ceil(angle / 5) clamped to [1, 9] up to 45 degrees, 10 above.
int fine_level(double angle_deg);
/// Fine level 1-2 -> 1, 3-4 -> 2, 5-9 -> 3, 10 -> 4.
int fine_to_general(int fine);

struct LevelScheme {
  SchemeKind kind = SchemeKind::general;

  static LevelScheme general() { return {SchemeKind::general}; }
  static LevelScheme fine() { return {SchemeKind::fine}; }

  int levels() const { return kind == SchemeKind::general ? 4 : 10; }
  int level(double angle_deg) const;
  /// Angle range of a level as (lo, hi]; level 1 also contains lo. The last
  /// bin is open-ended and reported with hi = +inf.
  std::pair<double, double> bounds(int level) const;
  std::string name() const { return kind == SchemeKind::general ? "general" : "fine"; }
};

LevelScheme scheme_from_string(const std::string& s);

// ---- samples ---------------------------------------------------------------

struct BBox {
  int x = 0, y = 0, w = 0, h = 0;
  bool operator==(const BBox&) const = default;
};

struct Sample {
  TensorD image;  // 1 x h x w, values in [0, 1]
  double angle_deg = 0.0;
  BBox bbox;
  int general_level = 1;
  int fine_level = 1;
  std::string path;  // relative to the corpus root when loaded from disk

  int height() const { return static_cast<int>(image.dim(1)); }
  int width() const { return static_cast<int>(image.dim(2)); }
};

/// Throws std::out_of_range if the box leaves the image or is empty.
void check_bbox(const BBox& box, int width, int height);

GrayImage to_gray(const TensorD& image);
TensorD from_gray(const GrayImage& img);

// ---- synthetic generator ---------------------------------------------------

/// Rendering parameters. Geometry is given in fractions of the canvas so
/// the same config works at any size; gains are per degree of curvature.
struct SynthConfig {
  int width = 64;
  int height = 64;
  std::uint64_t seed = 0;
  double max_angle = 100.0;  // upper end of the open-ended last bin

  double background = 0.08;
  double skin = 0.62;
  double skin_jitter = 0.05;      // per-sample brightness spread
  double width_jitter = 0.05;     // per-sample torso width spread
  double edge_softness = 0.9;     // pixels
  double torso_top = 0.14;        // shoulder line, fraction of height
  double torso_bottom = 0.94;
  double shoulder_half_width = 0.40;
  double waist_half_width = 0.33;
  double waist_pos = 0.62;
  double spine_top = 0.16;
  double spine_bottom = 0.86;
  double spine_depth = 0.20;
  double spine_width = 1.1;       // pixels
  double scapula_x = 0.17;
  double scapula_y = 0.32;
  double scapula_radius = 0.085;
  double scapula_level = 0.06;

  double shoulder_tilt = 0.004;   // slope of the shoulder line per degree
  double scapular_bump = 0.004;   // extra brightness of the right scapula per degree
  double waist_shift = 0.001;     // lateral waist shift per degree, fraction of width

  double noise = 0.02;

  void validate() const;
  /// Apply one key=value setting; unknown keys throw std::invalid_argument.
  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
};

/// Flat key=value file, '#' comments and blank lines allowed.
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);
SynthConfig read_synth_config(const std::filesystem::path& path);

/// Pure function of (cfg, angle, sample_seed). At angle 0 without noise the
/// image equals its horizontal mirror exactly.
Sample synth_back(double angle_deg, const SynthConfig& cfg, std::uint64_t sample_seed);

/// In-memory corpus: counts[j] samples for level j + 1, angles uniform within
/// each bin. Sample i uses the stream mix_seed(cfg.seed, i).
std::vector<Sample> synth_corpus(const SynthConfig& cfg, const std::vector<int>& counts,
                                 const LevelScheme& scheme);

/// Writes images/NNNNNN.png and manifest.csv under `dir`.
void write_corpus(const std::filesystem::path& dir, std::vector<Sample>& samples);
std::vector<Sample> generate_corpus(const std::filesystem::path& dir, const SynthConfig& cfg,
                                    const std::vector<int>& counts, const LevelScheme& scheme);

// ---- manifest --------------------------------------------------------------

struct ManifestRow {
  std::string path;
  double angle_deg = 0.0;
  BBox bbox;
};

inline constexpr const char* kManifestHeader = "path,angle_deg,bbox_x,bbox_y,bbox_w,bbox_h";

void write_manifest(const std::filesystem::path& file, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& file);
/// Reads `dir`/manifest.csv and every image it names.
std::vector<Sample> read_corpus(const std::filesystem::path& dir);
Sample load_sample(const std::filesystem::path& image_path, double angle_deg, const BBox& box);

// ---- preprocessing ---------------------------------------------------------

/// Bilinear resize of a 1 x h x w image (pixel-centre aligned, edge clamped).
TensorD resize_bilinear(const TensorD& image, int out_h, int out_w);
/// Crop the sample's bbox and resize it to out_h x out_w.
TensorD crop_bbox(const Sample& s, int out_h = 64, int out_w = 64);

/// Training-time augmentation. Every magnitude of zero makes augment() the
/// identity.
struct AugmentPolicy {
  double flip_prob = 0.5;   // [0, 1]
  double crop = 0.05;       // max fraction of the bbox size each edge may move, [0, 0.25]
  double scale = 0.08;      // bbox scale factor drawn from [1 - scale, 1 + scale], [0, 0.5]
  double brightness = 0.05; // additive offset range, [0, 0.5]
  double contrast = 0.10;   // multiplicative range about the mean, [0, 0.5]

  static AugmentPolicy none() { return {0, 0, 0, 0, 0}; }
  void validate() const;
};

Sample augment(const Sample& s, Rng& rng, const AugmentPolicy& policy);

/// Stack crops of `samples[idx]` into an N x 1 x h x w batch.
template <typename Scalar>
Tensor<Scalar> make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                          int out_h, int out_w);

}  // namespace scolio
