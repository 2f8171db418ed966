#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedtrace/embedding.hpp"

namespace fedtrace {

// Inclusive rectangle over [1,H]x[1,W], 1-based like the layout docs.
struct Window {
  int r0 = 1, c0 = 1, r1 = 1, c1 = 1;

  int rows() const { return r1 - r0 + 1; }
  int cols() const { return c1 - c0 + 1; }
  int cells() const { return rows() * cols(); }
  bool operator==(const Window&) const = default;
};

struct WindowSet {
  int h = 0, w = 0;
  std::vector<Window> windows;
  int count() const { return static_cast<int>(windows.size()); }
};

// Multi-scale overlapping layout. Square windows are laid down scale by
// scale: side = min(H,W), then ceil(2m/3), then ceil(m/k) for k = 2,3,...
// (duplicate sides dropped), each scale enumerating all stride-1 positions
// row-major. The last scale is truncated to land exactly on `target`; if the
// square ladder runs out, remaining rectangles are appended largest-area
// first. Deterministic, all windows distinct and in bounds.
WindowSet generate_windows(int h, int w, int target);

struct MlpLayer {
  Mat weight;  // out x in
  Vec bias;    // out
};

struct VerifierWeights {
  Mat reduce;  // D x (D/4), applied per cell like a 1x1 conv
  std::array<MlpLayer, 3> mlp;
  double gem_p = 3.0;
  std::uint64_t seed = 0;

  int feature_dim() const { return static_cast<int>(reduce.rows()); }
  int reduced_dim() const { return static_cast<int>(reduce.cols()); }
  // The MLP eats a flattened |W|x|W| correlation matrix.
  int window_count() const;

  void validate() const;  // throws std::invalid_argument on shape trouble

  void save(const std::filesystem::path& file) const;
  static VerifierWeights load(const std::filesystem::path& file);
  void write(std::ostream& os) const;
  static VerifierWeights read(std::istream& is);
};

// Per-sample pooled representation: one unit row per window. Rows that
// pooled to all-zero are kept as zero rows and flagged.
struct PooledFeatures {
  Mat rows;                    // |W| x (D/4)
  std::vector<bool> zero_row;  // |W|
};

// Per-cell reduction of a feature map, D -> D/4.
Mat reduce_map(const FeatureMap& fm, const Mat& reduce);  // cells x (D/4)

// GeM over the window's cells on |x|, then L2 normalization.
// Returns the vector and whether it pooled to zero (zero stays zero).
std::pair<Vec, bool> gem_pool(const Mat& reduced, int h, int w, const Window& win, double p);

PooledFeatures pool_features(const FeatureMap& fm, const VerifierWeights& wts,
                             const WindowSet& ws);

Mat correlation_matrix(const PooledFeatures& q, const PooledFeatures& i);

double mlp_eval(const VerifierWeights& wts, const Mat& corr);

// Symmetric score sigma(MLP(C_qi) + MLP(C_iq)) in (0,1).
double verify_pair(const PooledFeatures& a, const PooledFeatures& b, const VerifierWeights& wts);
double verify_pair(const SampleRecord& a, const SampleRecord& b, const VerifierWeights& wts,
                   const Fingerprinter& fp);

struct CalibrationConfig {
  int window_target = 55;
  double gem_p = 3.0;
  int probe_classes = 6;
  int probe_per_class = 24;
  double center_scale = 3.0;
  double offset_scale = 1.0;
  // Latent-space L2 radius of the "near duplicate" probes; sized above the
  // toy generator's noise so real near-copies land inside the positive band.
  double near_dup_noise = 0.45;
  double margin = 6.0;  // logit at the probe extremes
  double dup_min_score = 0.9;
  double cross_max_score = 0.2;
};

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Builds deterministic verifier weights for a given fingerprint space. The
// MLP is synthesized analytically: the first hidden unit measures the mean
// diagonal of the correlation matrix and the output layer maps it through a
// fitted threshold; remaining units carry seeded weights with zero output
// contribution, so symmetry and shape contracts hold structurally. Probes
// drawn from a seeded world check the score contract and set the operating
// point. Throws CalibrationError with per-band statistics if the positive
// and negative probe bands overlap.
VerifierWeights calibrate_default_weights(std::uint64_t world_seed, const Fingerprinter& fp,
                                          const CalibrationConfig& cc = {});
VerifierWeights calibrate_default_weights(std::uint64_t world_seed);

}  // namespace fedtrace
