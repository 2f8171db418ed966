#include "fedtrace/matchverify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "fedtrace/rng.hpp"

namespace fedtrace {

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

WindowSet generate_windows(int h, int w, int target) {
  if (h < 1 || w < 1) throw std::invalid_argument("generate_windows: H and W must be >= 1");
  if (target < 1) throw std::invalid_argument("generate_windows: target must be >= 1");

  const long long possible =
      (static_cast<long long>(h) * (h + 1) / 2) * (static_cast<long long>(w) * (w + 1) / 2);
  if (target > possible) {
    std::ostringstream msg;
    msg << "generate_windows: target " << target << " exceeds the " << possible
        << " distinct windows available on a " << h << "x" << w << " map";
    throw std::invalid_argument(msg.str());
  }

  WindowSet ws;
  ws.h = h;
  ws.w = w;
  ws.windows.reserve(target);

  const int m = std::min(h, w);
  std::vector<int> sides;
  auto push_side = [&](int s) {
    if (s >= 1 && (sides.empty() || std::find(sides.begin(), sides.end(), s) == sides.end()))
      sides.push_back(s);
  };
  push_side(m);
  push_side(ceil_div(2 * m, 3));
  for (int k = 2; k <= m; ++k) push_side(ceil_div(m, k));

  std::set<std::array<int, 4>> taken;
  auto emit = [&](int r0, int c0, int r1, int c1) {
    if (!taken.insert({r0, c0, r1, c1}).second) return;
    ws.windows.push_back(Window{r0, c0, r1, c1});
  };

  for (int s : sides) {
    for (int r0 = 1; r0 + s - 1 <= h && ws.count() < target; ++r0)
      for (int c0 = 1; c0 + s - 1 <= w && ws.count() < target; ++c0)
        emit(r0, c0, r0 + s - 1, c0 + s - 1);
    if (ws.count() >= target) return ws;
  }

  // Square ladder exhausted; fill with the remaining rectangles, biggest first.
  std::vector<Window> rest;
  for (int r0 = 1; r0 <= h; ++r0)
    for (int r1 = r0; r1 <= h; ++r1)
      for (int c0 = 1; c0 <= w; ++c0)
        for (int c1 = c0; c1 <= w; ++c1)
          if (!taken.count({r0, c0, r1, c1})) rest.push_back(Window{r0, c0, r1, c1});
  std::stable_sort(rest.begin(), rest.end(), [](const Window& a, const Window& b) {
    if (a.cells() != b.cells()) return a.cells() > b.cells();
    if (a.r0 != b.r0) return a.r0 < b.r0;
    if (a.c0 != b.c0) return a.c0 < b.c0;
    if (a.r1 != b.r1) return a.r1 < b.r1;
    return a.c1 < b.c1;
  });
  for (const Window& win : rest) {
    if (ws.count() >= target) break;
    ws.windows.push_back(win);
  }
  return ws;
}

int VerifierWeights::window_count() const {
  const auto in = mlp[0].weight.cols();
  const int n = static_cast<int>(std::llround(std::sqrt(static_cast<double>(in))));
  if (static_cast<long long>(n) * n != in)
    throw std::invalid_argument("verifier weights: MLP input is not a square window count");
  return n;
}

void VerifierWeights::validate() const {
  if (gem_p < 1.0) throw std::invalid_argument("verifier weights: gem_p must be >= 1");
  if (reduce.rows() < 4 || reduce.cols() < 1)
    throw std::invalid_argument("verifier weights: bad reduce shape");
  window_count();
  for (size_t i = 0; i < mlp.size(); ++i) {
    if (mlp[i].weight.rows() != mlp[i].bias.size())
      throw std::invalid_argument("verifier weights: layer bias/weight mismatch");
    if (i + 1 < mlp.size() && mlp[i + 1].weight.cols() != mlp[i].weight.rows())
      throw std::invalid_argument("verifier weights: layer chaining mismatch");
  }
  if (mlp[2].weight.rows() != 1)
    throw std::invalid_argument("verifier weights: final layer must have one output");
}

namespace {

void write_hex_row(std::ostream& os, const double* p, Eigen::Index n) {
  char buf[64];
  for (Eigen::Index i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%a", p[i]);
    os << (i ? " " : "") << buf;
  }
  os << '\n';
}

void write_hex_mat(std::ostream& os, const Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[c] = m(r, c);
    write_hex_row(os, row.data(), m.cols());
  }
}

double read_value(std::istream& is) {
  std::string tok;
  if (!(is >> tok)) throw std::runtime_error("verifier weights: truncated file");
  char* end = nullptr;
  double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0')
    throw std::runtime_error("verifier weights: bad number '" + tok + "'");
  return v;
}

Mat read_mat(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = read_value(is);
  return m;
}

}  // namespace

void VerifierWeights::write(std::ostream& os) const {
  os << "fedtrace-verifier-weights 1\n";
  os << "gem_p ";
  write_hex_row(os, &gem_p, 1);
  os << "seed " << seed << '\n';
  os << "reduce " << reduce.rows() << ' ' << reduce.cols() << '\n';
  write_hex_mat(os, reduce);
  os << "mlp " << mlp.size() << '\n';
  for (const MlpLayer& layer : mlp) {
    os << "layer " << layer.weight.rows() << ' ' << layer.weight.cols() << '\n';
    write_hex_mat(os, layer.weight);
    os << "bias\n";
    std::vector<double> b(layer.bias.data(), layer.bias.data() + layer.bias.size());
    write_hex_row(os, b.data(), layer.bias.size());
  }
}

VerifierWeights VerifierWeights::read(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "fedtrace-verifier-weights" || version != 1)
    throw std::runtime_error("verifier weights: unrecognized header");
  VerifierWeights wts;
  std::string key;
  if (!(is >> key) || key != "gem_p") throw std::runtime_error("verifier weights: expected gem_p");
  wts.gem_p = read_value(is);
  if (!(is >> key >> wts.seed) || key != "seed")
    throw std::runtime_error("verifier weights: expected seed");
  Eigen::Index rows = 0, cols = 0;
  if (!(is >> key >> rows >> cols) || key != "reduce")
    throw std::runtime_error("verifier weights: expected reduce shape");
  wts.reduce = read_mat(is, rows, cols);
  size_t layers = 0;
  if (!(is >> key >> layers) || key != "mlp" || layers != wts.mlp.size())
    throw std::runtime_error("verifier weights: expected 3 mlp layers");
  for (MlpLayer& layer : wts.mlp) {
    if (!(is >> key >> rows >> cols) || key != "layer")
      throw std::runtime_error("verifier weights: expected layer shape");
    layer.weight = read_mat(is, rows, cols);
    if (!(is >> key) || key != "bias") throw std::runtime_error("verifier weights: expected bias");
    Mat b = read_mat(is, 1, rows);
    layer.bias = b.row(0).transpose();
  }
  wts.validate();
  return wts;
}

void VerifierWeights::save(const std::filesystem::path& file) const {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("verifier weights: cannot open " + file.string());
  write(os);
  if (!os.good()) throw std::runtime_error("verifier weights: write failed for " + file.string());
}

VerifierWeights VerifierWeights::load(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("verifier weights: cannot open " + file.string());
  return read(is);
}

Mat reduce_map(const FeatureMap& fm, const Mat& reduce) {
  if (fm.d != reduce.rows()) throw std::invalid_argument("reduce_map: channel dim mismatch");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> cells(
      fm.data.data(), fm.cells(), fm.d);
  return cells * reduce;
}

std::pair<Vec, bool> gem_pool(const Mat& reduced, int h, int w, const Window& win, double p) {
  if (p < 1.0) throw std::invalid_argument("gem_pool: p must be >= 1");
  if (win.r0 < 1 || win.c0 < 1 || win.r1 > h || win.c1 > w || win.r0 > win.r1 || win.c0 > win.c1)
    throw std::invalid_argument("gem_pool: window out of bounds or empty");
  if (reduced.rows() != static_cast<Eigen::Index>(h) * w)
    throw std::invalid_argument("gem_pool: reduced map shape mismatch");

  const Eigen::Index d = reduced.cols();
  Vec acc = Vec::Zero(d);
  for (int r = win.r0; r <= win.r1; ++r)
    for (int c = win.c0; c <= win.c1; ++c)
      acc += reduced.row((r - 1) * w + (c - 1)).array().abs().pow(p).matrix();
  acc /= static_cast<double>(win.cells());
  Vec pooled = acc.array().pow(1.0 / p);
  double n = pooled.norm();
  if (n == 0.0) return {Vec::Zero(d), true};
  return {pooled / n, false};
}

PooledFeatures pool_features(const FeatureMap& fm, const VerifierWeights& wts,
                             const WindowSet& ws) {
  if (ws.h != fm.h || ws.w != fm.w)
    throw std::invalid_argument("pool_features: window set built for different map dims");
  Mat reduced = reduce_map(fm, wts.reduce);
  PooledFeatures pf;
  pf.rows = Mat(ws.count(), wts.reduced_dim());
  pf.zero_row.resize(ws.count(), false);
  for (int i = 0; i < ws.count(); ++i) {
    auto [v, zero] = gem_pool(reduced, fm.h, fm.w, ws.windows[i], wts.gem_p);
    pf.rows.row(i) = v.transpose();
    pf.zero_row[i] = zero;
  }
  return pf;
}

Mat correlation_matrix(const PooledFeatures& q, const PooledFeatures& i) {
  if (q.rows.rows() != i.rows.rows() || q.rows.cols() != i.rows.cols())
    throw std::invalid_argument("correlation_matrix: shape mismatch");
  return q.rows * i.rows.transpose();
}

double mlp_eval(const VerifierWeights& wts, const Mat& corr) {
  const Eigen::Index n = corr.rows();
  if (corr.cols() != n || n * n != wts.mlp[0].weight.cols())
    throw std::invalid_argument("mlp_eval: correlation shape inconsistent with weights");
  Vec x(n * n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) x[r * n + c] = corr(r, c);
  Vec h1 = ((wts.mlp[0].weight * x + wts.mlp[0].bias).array().max(0.0)).matrix();
  Vec h2 = ((wts.mlp[1].weight * h1 + wts.mlp[1].bias).array().max(0.0)).matrix();
  Vec out = wts.mlp[2].weight * h2 + wts.mlp[2].bias;
  return out[0];
}

double verify_pair(const PooledFeatures& a, const PooledFeatures& b, const VerifierWeights& wts) {
  double fwd = mlp_eval(wts, correlation_matrix(a, b));
  double bwd = mlp_eval(wts, correlation_matrix(b, a));
  double s = stable_sigmoid(fwd + bwd);
  // The sigmoid underflows to 0 (or rounds to 1) for extreme logits; scores
  // are contractually inside the open interval.
  return std::clamp(s, std::numeric_limits<double>::min(),
                    1.0 - std::numeric_limits<double>::epsilon() / 2);
}

double verify_pair(const SampleRecord& a, const SampleRecord& b, const VerifierWeights& wts,
                   const Fingerprinter& fp) {
  WindowSet ws = generate_windows(fp.config().feature_h, fp.config().feature_w,
                                  wts.window_count());
  PooledFeatures pa = pool_features(fp.expand_feature_map(a), wts, ws);
  PooledFeatures pb = pool_features(fp.expand_feature_map(b), wts, ws);
  return verify_pair(pa, pb, wts);
}

namespace {

double mean_diag(const Mat& corr) { return corr.diagonal().mean(); }

struct ProbeBands {
  std::vector<double> dup, near_dup, same_class, cross;
};

}  // namespace

VerifierWeights calibrate_default_weights(std::uint64_t world_seed, const Fingerprinter& fp,
                                          const CalibrationConfig& cc) {
  const FingerprintConfig& fc = fp.config();
  if (fc.feature_d % 4 != 0)
    throw CalibrationError("calibrate: feature depth must be divisible by 4");
  const int d4 = fc.feature_d / 4;

  VerifierWeights wts;
  wts.seed = world_seed;
  wts.gem_p = cc.gem_p;

  auto reng = make_engine(world_seed, "verifier.reduce");
  wts.reduce = Mat(fc.feature_d, d4);
  const double rscale = 1.0 / std::sqrt(static_cast<double>(fc.feature_d));
  for (int r = 0; r < fc.feature_d; ++r)
    for (int c = 0; c < d4; ++c) wts.reduce(r, c) = gaussian_vec(reng, 1)[0] * rscale;

  WindowSet ws = generate_windows(fc.feature_h, fc.feature_w, cc.window_target);
  const int wn = ws.count();
  const Eigen::Index in = static_cast<Eigen::Index>(wn) * wn;

  // Probe world: seeded class centers with per-class samples, plus the four
  // pair populations the operating point is fitted against.
  auto peng = make_engine(world_seed, "verifier.probe");
  std::vector<std::vector<Vec>> latents(cc.probe_classes);
  for (int c = 0; c < cc.probe_classes; ++c) {
    Vec center = gaussian_vec(peng, fc.latent_dim) * cc.center_scale;
    for (int s = 0; s < cc.probe_per_class; ++s)
      latents[c].push_back(center + gaussian_vec(peng, fc.latent_dim) * cc.offset_scale);
  }

  auto pooled_of = [&](const Vec& latent, int cls) {
    return pool_features(fp.feature_map(Latent{latent, cls}), wts, ws);
  };

  ProbeBands bands;
  std::uniform_real_distribution<double> frac(0.3, 1.0);
  for (int c = 0; c < cc.probe_classes; ++c) {
    const auto& cls = latents[c];
    for (size_t s = 0; s < cls.size(); ++s) {
      PooledFeatures base = pooled_of(cls[s], c);

      // exact duplicate
      if (s % 4 == 0) bands.dup.push_back(mean_diag(correlation_matrix(base, base)));

      // near duplicate at a seeded radius
      Vec dir = gaussian_vec(peng, fc.latent_dim);
      if (dir.norm() > 0) dir /= dir.norm();
      Vec near = cls[s] + dir * (frac(peng) * cc.near_dup_noise);
      bands.near_dup.push_back(mean_diag(correlation_matrix(base, pooled_of(near, c))));

      // nearest same-class sibling: the hard negative
      double best = -1;
      size_t best_j = s;
      for (size_t j = 0; j < cls.size(); ++j) {
        if (j == s) continue;
        double dist = (cls[j] - cls[s]).norm();
        if (best < 0 || dist < best) {
          best = dist;
          best_j = j;
        }
      }
      bands.same_class.push_back(mean_diag(correlation_matrix(base, pooled_of(cls[best_j], c))));

      // cross-class partner
      int oc = (c + 1 + static_cast<int>(s) % (cc.probe_classes - 1)) % cc.probe_classes;
      const Vec& other = latents[oc][s % latents[oc].size()];
      bands.cross.push_back(mean_diag(correlation_matrix(base, pooled_of(other, oc))));
    }
  }

  auto band_min = [](const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); };
  auto band_max = [](const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); };

  double pos_min = std::min(band_min(bands.dup), band_min(bands.near_dup));
  double neg_max = std::max(band_max(bands.same_class), band_max(bands.cross));
  double gap = pos_min - neg_max;
  if (gap <= 1e-9) {
    std::ostringstream msg;
    msg << "calibrate: positive and negative probe bands overlap; "
        << "dup[min " << band_min(bands.dup) << "] near_dup[min " << band_min(bands.near_dup)
        << "] same_class[max " << band_max(bands.same_class) << "] cross[max "
        << band_max(bands.cross) << "] gap " << gap;
    throw CalibrationError(msg.str());
  }

  double t = neg_max + 0.5 * gap;
  double a = cc.margin / gap;
  double b = -a * t;

  auto weng = make_engine(world_seed, "verifier.mlp");
  auto noise_mat = [&](Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = gaussian_vec(weng, 1)[0] * 0.02;
    return m;
  };

  MlpLayer& l1 = wts.mlp[0];
  l1.weight = noise_mat(256, in);
  l1.bias = noise_mat(256, 1).col(0);
  l1.weight.row(0).setZero();
  for (int k = 0; k < wn; ++k) l1.weight(0, static_cast<Eigen::Index>(k) * wn + k) = 1.0 / wn;
  l1.bias[0] = 2.0;  // keeps unit 0 linear: mean diag is never below -1

  MlpLayer& l2 = wts.mlp[1];
  l2.weight = noise_mat(64, 256);
  l2.bias = noise_mat(64, 1).col(0);
  l2.weight.row(0).setZero();
  l2.weight(0, 0) = 1.0;
  l2.bias[0] = 0.0;

  MlpLayer& l3 = wts.mlp[2];
  l3.weight = Mat::Zero(1, 64);
  l3.weight(0, 0) = a;
  l3.bias = Vec::Constant(1, b - 2.0 * a);

  wts.validate();

  // Contract check on the fitted operating point.
  auto score_of_m = [&](double m) { return stable_sigmoid(2.0 * (a * m + b)); };
  double worst_pos = score_of_m(pos_min);
  double worst_neg = score_of_m(neg_max);
  if (worst_pos < cc.dup_min_score || worst_neg > cc.cross_max_score) {
    std::ostringstream msg;
    msg << "calibrate: operating point misses the score contract; worst positive " << worst_pos
        << " (need >= " << cc.dup_min_score << "), worst negative " << worst_neg << " (need <= "
        << cc.cross_max_score << ")";
    throw CalibrationError(msg.str());
  }
  return wts;
}

VerifierWeights calibrate_default_weights(std::uint64_t world_seed) {
  Fingerprinter fp(FingerprintConfig{}, world_seed);
  return calibrate_default_weights(world_seed, fp, CalibrationConfig{});
}

}  // namespace fedtrace
