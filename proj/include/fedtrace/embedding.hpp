#pragma once

#include <cstdint>
#include <vector>

#include "fedtrace/common.hpp"

namespace fedtrace {

struct KernelConfig {
  double lambda = 0.1;
};

// exp(cos(a, b) / lambda). Throws std::domain_error on a zero-norm input.
double similarity_kernel(const Vec& a, const Vec& b, const KernelConfig& cfg = {});

// Softmax-style contrastive loss over a batch of (anchor, positive) pairs.
// For each anchor the positive competes against every other anchor in the
// batch. A single-pair batch has nothing to contrast against and scores 0.
double contrastive_loss(const std::vector<std::pair<Vec, Vec>>& batch,
                        const KernelConfig& cfg = {});

// Dense per-cell map derived from a latent; the raw input to match
// verification. Layout is row-major cells, channels contiguous.
struct FeatureMap {
  int h = 0, w = 0, d = 0;
  Vec data;

  double at(int r, int c, int ch) const { return data[(r * w + c) * d + ch]; }
  int cells() const { return h * w; }
};

struct FingerprintConfig {
  int latent_dim = 32;
  double aug_noise = 0.05;
  int feature_h = 7;
  int feature_w = 7;
  int feature_d = 64;
  KernelConfig kernel;
};

// Deterministic stand-in for a trained fingerprint network: a fixed random
// projection plus tanh. Two fingerprints built from the same seed and config
// agree bit-for-bit, which is what the downstream pipeline needs.
class Fingerprinter {
 public:
  Fingerprinter(FingerprintConfig cfg, std::uint64_t seed);

  // 256-dim embedding of a latent.
  Vec embed(const Latent& latent) const;

  // Embedding of a perturbed copy; models the paper-style augmented view.
  // The perturbation is seeded by (seed, salt) so it is reproducible.
  Vec embed_augmented(const Latent& latent, std::uint64_t salt) const;

  FeatureMap feature_map(const Latent& latent) const;

  const FingerprintConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  // Record-level conveniences; augmentation draws from the record's aug_seed.
  Vec extract_embedding(const SampleRecord& s, bool augment) const {
    return augment ? embed_augmented(s.latent, s.aug_seed) : embed(s.latent);
  }
  FeatureMap expand_feature_map(const SampleRecord& s) const { return feature_map(s.latent); }

 private:
  FingerprintConfig cfg_;
  std::uint64_t seed_;
  Mat embed_proj_;
  Vec embed_bias_;
  Mat feature_proj_;
  Vec feature_bias_;
};

}  // namespace fedtrace
