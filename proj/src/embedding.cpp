#include "fedtrace/embedding.hpp"

#include <cmath>
#include <stdexcept>

#include "fedtrace/rng.hpp"

namespace fedtrace {

double similarity_kernel(const Vec& a, const Vec& b, const KernelConfig& cfg) {
  if (a.size() != b.size()) throw std::invalid_argument("similarity_kernel: size mismatch");
  if (a.size() == 0) throw std::invalid_argument("similarity_kernel: empty vectors");
  if (cfg.lambda <= 0) throw std::invalid_argument("similarity_kernel: lambda must be positive");
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw std::domain_error("similarity_kernel: zero-norm input");
  double c = a.dot(b) / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return std::exp(c / cfg.lambda);
}

double contrastive_loss(const std::vector<std::pair<Vec, Vec>>& batch, const KernelConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("contrastive_loss: empty batch");
  const int n = static_cast<int>(batch.size());
  if (n == 1) return 0.0;

  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double pos = similarity_kernel(batch[i].first, batch[i].second, cfg);
    double denom = pos;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      denom += similarity_kernel(batch[i].first, batch[j].first, cfg);
    }
    loss -= std::log(pos / denom);
  }
  return loss;
}

Fingerprinter::Fingerprinter(FingerprintConfig cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  if (cfg_.latent_dim <= 0) throw std::invalid_argument("fingerprinter: latent_dim must be positive");
  if (cfg_.feature_h <= 0 || cfg_.feature_w <= 0 || cfg_.feature_d <= 0)
    throw std::invalid_argument("fingerprinter: feature dims must be positive");

  const int L = cfg_.latent_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(L));

  auto eng = make_engine(seed_, "fingerprint.embed");
  embed_proj_ = Mat(kEmbeddingDim, L);
  for (int r = 0; r < kEmbeddingDim; ++r)
    for (int c = 0; c < L; ++c) embed_proj_(r, c) = gaussian_vec(eng, 1)[0] * scale;
  embed_bias_ = gaussian_vec(eng, kEmbeddingDim, 0.1);

  const int cells = cfg_.feature_h * cfg_.feature_w * cfg_.feature_d;
  auto feng = make_engine(seed_, "fingerprint.featmap");
  feature_proj_ = Mat(cells, L);
  for (int r = 0; r < cells; ++r)
    for (int c = 0; c < L; ++c) feature_proj_(r, c) = gaussian_vec(feng, 1)[0] * scale;
  feature_bias_ = gaussian_vec(feng, cells, 0.1);
}

Vec Fingerprinter::embed(const Latent& latent) const {
  if (latent.values.size() != cfg_.latent_dim)
    throw std::invalid_argument("fingerprinter: latent dim mismatch");
  return (embed_proj_ * latent.values + embed_bias_).array().tanh();
}

Vec Fingerprinter::embed_augmented(const Latent& latent, std::uint64_t salt) const {
  Vec base = embed(latent);
  auto eng = make_engine(seed_, "fingerprint.aug", salt);
  Vec dir = gaussian_vec(eng, kEmbeddingDim);
  double n = dir.norm();
  if (n > 0) dir /= n;
  std::uniform_real_distribution<double> mag(0.0, cfg_.aug_noise);
  return base + dir * mag(eng);
}

FeatureMap Fingerprinter::feature_map(const Latent& latent) const {
  if (latent.values.size() != cfg_.latent_dim)
    throw std::invalid_argument("fingerprinter: latent dim mismatch");
  FeatureMap fm;
  fm.h = cfg_.feature_h;
  fm.w = cfg_.feature_w;
  fm.d = cfg_.feature_d;
  fm.data = (feature_proj_ * latent.values + feature_bias_).array().tanh();
  return fm;
}

}  // namespace fedtrace
