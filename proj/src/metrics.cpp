#include "fedtrace/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <vector>

namespace fedtrace {

namespace {

Mat pairwise_sq(const Mat& a, const Mat& b) {
  Vec an = a.rowwise().squaredNorm();
  Vec bn = b.rowwise().squaredNorm();
  Mat d = (-2.0 * a * b.transpose());
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  return d.cwiseMax(0.0);
}

Mat psd_sqrt(const Mat& sym, const char* what) {
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  if (es.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << what << ": eigendecomposition failed to converge (dim " << sym.rows() << ")";
    throw std::runtime_error(msg.str());
  }
  Vec ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < 0) {
      if (ev[i] < -1e-10 * scale) {
        std::ostringstream msg;
        msg << what << ": matrix square root residual too large; eigenvalue " << ev[i]
            << " at index " << i << " (scale " << scale << ") is beyond the PSD tolerance";
        throw std::runtime_error(msg.str());
      }
      ev[i] = 0;  // roundoff-level negative, clamp
    }
  }
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

GaussianSummary fit_gaussian(const Mat& rows) {
  if (rows.rows() < 2) throw std::invalid_argument("fit_gaussian: need at least 2 rows");
  GaussianSummary g;
  g.n = static_cast<int>(rows.rows());
  g.mean = rows.colwise().mean().transpose();
  Mat centered = rows.rowwise() - g.mean.transpose();
  g.covariance = (centered.transpose() * centered) / static_cast<double>(g.n - 1);
  // Symmetrize away accumulation noise so eigen solvers stay on the PSD path.
  g.covariance = 0.5 * (g.covariance + g.covariance.transpose());
  return g;
}

double fid_from(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.mean.size() != b.mean.size()) throw std::invalid_argument("fid: dimension mismatch");
  Mat sa_half = psd_sqrt(a.covariance, "fid");
  Mat inner = sa_half * b.covariance * sa_half;
  inner = 0.5 * (inner + inner.transpose());
  Mat cross = psd_sqrt(inner, "fid");
  double mean_term = (a.mean - b.mean).squaredNorm();
  double trace_term = a.covariance.trace() + b.covariance.trace() - 2.0 * cross.trace();
  return std::max(mean_term + trace_term, 0.0);
}

double fid(const Mat& set_a, const Mat& set_b) {
  return fid_from(fit_gaussian(set_a), fit_gaussian(set_b));
}

double qn_score(double fid_value, double v_c, double v_a, double r_c) {
  if (fid_value < 0) throw std::invalid_argument("qn_score: fid must be >= 0");
  for (double v : {v_c, v_a, r_c})
    if (v < 0 || v > 1) throw std::invalid_argument("qn_score: v_c, v_a, r_c must be in [0,1]");
  return (fid_value + v_c * v_a * r_c * 1000.0) / 2.0;
}

double blended_fld_fid(double fid_value, double fld) {
  if (fid_value < 0) throw std::invalid_argument("blended_fld_fid: fid must be >= 0");
  return (fid_value + fld * 100.0) / 2.0;
}

double authpct(const Mat& train, const Mat& generated) {
  if (train.rows() < 2) throw std::invalid_argument("authpct: need at least 2 train rows");
  if (generated.rows() < 1) throw std::invalid_argument("authpct: need generated rows");

  Mat tt = pairwise_sq(train, train);
  Vec train_nn(train.rows());
  for (Eigen::Index i = 0; i < train.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < train.rows(); ++j) {
      if (j == i) continue;
      best = std::min(best, tt(i, j));
    }
    train_nn[i] = best;
  }

  Mat gt = pairwise_sq(generated, train);
  int authentic = 0;
  for (Eigen::Index g = 0; g < generated.rows(); ++g) {
    Eigen::Index nearest = 0;
    double best = gt(g, 0);
    for (Eigen::Index t = 1; t < train.rows(); ++t) {
      if (gt(g, t) < best) {
        best = gt(g, t);
        nearest = t;
      }
    }
    if (!(best < train_nn[nearest])) ++authentic;
  }
  return 100.0 * static_cast<double>(authentic) / static_cast<double>(generated.rows());
}

namespace {

// Farthest-first k-means seeding: start at the row nearest the global mean,
// then repeatedly take the row farthest from its nearest chosen center.
// Order-invariant ties broken by row norm then lexicographic coordinates.
std::vector<int> seed_centers(const Mat& rows, int k) {
  const Eigen::Index n = rows.rows();
  auto lex_less = [&](Eigen::Index a, Eigen::Index b) {
    double na = rows.row(a).norm(), nb = rows.row(b).norm();
    if (na != nb) return na < nb;
    for (Eigen::Index c = 0; c < rows.cols(); ++c)
      if (rows(a, c) != rows(b, c)) return rows(a, c) < rows(b, c);
    return false;
  };

  Vec mean = rows.colwise().mean().transpose();
  Eigen::Index first = 0;
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    double d = (rows.row(i).transpose() - mean).squaredNorm();
    if (d < best || (d == best && lex_less(i, first))) {
      best = d;
      first = i;
    }
  }

  std::vector<int> centers{static_cast<int>(first)};
  Vec dist = (rows.rowwise() - rows.row(first)).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    Eigen::Index far = 0;
    double fbest = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (dist[i] > fbest || (dist[i] == fbest && lex_less(i, far))) {
        fbest = dist[i];
        far = i;
      }
    }
    centers.push_back(static_cast<int>(far));
    Vec nd = (rows.rowwise() - rows.row(far)).rowwise().squaredNorm();
    dist = dist.cwiseMin(nd);
  }
  return centers;
}

std::vector<int> kmeans_assign(const Mat& rows, int k) {
  const Eigen::Index n = rows.rows();
  std::vector<int> seeds = seed_centers(rows, k);
  Mat centers(k, rows.cols());
  for (int i = 0; i < k; ++i) centers.row(i) = rows.row(seeds[i]);

  std::vector<int> assign(n, 0);
  for (int iter = 0; iter < 50; ++iter) {
    bool changed = false;
    Mat d = pairwise_sq(rows, centers);
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      for (int c = 1; c < k; ++c)
        if (d(i, c) < d(i, best)) best = c;
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    Mat sums = Mat::Zero(k, rows.cols());
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += rows.row(i);
      counts[assign[i]] += 1;
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
    if (!changed) break;
  }
  return assign;
}

// Mann-Whitney standardized z with tie correction; positive when xs tend to
// exceed ys.
double mann_whitney_z(const std::vector<double>& xs, const std::vector<double>& ys) {
  const size_t n1 = xs.size(), n2 = ys.size();
  std::vector<std::pair<double, int>> all;
  all.reserve(n1 + n2);
  for (double v : xs) all.push_back({v, 0});
  for (double v : ys) all.push_back({v, 1});
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // Midranks plus tie bookkeeping.
  std::vector<double> ranks(all.size());
  double tie_sum = 0;  // sum of t^3 - t over tie groups
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    while (j + 1 < all.size() && all[j + 1].first == all[i].first) ++j;
    double r = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t q = i; q <= j; ++q) ranks[q] = r;
    double t = static_cast<double>(j - i + 1);
    if (t > 1) tie_sum += t * t * t - t;
    i = j + 1;
  }

  double r1 = 0;
  for (size_t q = 0; q < all.size(); ++q)
    if (all[q].second == 0) r1 += ranks[q];

  const double dn1 = static_cast<double>(n1), dn2 = static_cast<double>(n2);
  double u = r1 - dn1 * (dn1 + 1) / 2.0;
  double mean_u = dn1 * dn2 / 2.0;
  double nn = dn1 + dn2;
  double var_u = dn1 * dn2 / 12.0 * ((nn + 1) - tie_sum / (nn * (nn - 1)));
  if (var_u <= 0) return 0.0;
  return (u - mean_u) / std::sqrt(var_u);
}

}  // namespace

double ct_score(const Mat& train, const Mat& test, const Mat& generated, int k_cells) {
  if (train.rows() < 1 || test.rows() < 1 || generated.rows() < 1)
    throw std::invalid_argument("ct_score: all three sets must be nonempty");
  int k = k_cells;
  if (k == 0) k = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(train.rows())) / 2));
  if (k < 1) throw std::invalid_argument("ct_score: k_cells must be >= 1");
  k = std::min<int>(k, static_cast<int>(train.rows()));

  std::vector<int> assign = kmeans_assign(train, k);

  // Direct differences: a duplicate row must land at distance exactly zero,
  // and equal distances must tie exactly, or the rank statistic shifts.
  auto nn_to = [&](const Mat& x) {
    Vec out(train.rows());
    for (Eigen::Index i = 0; i < train.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < x.rows(); ++j) {
        double s = 0;
        for (Eigen::Index c = 0; c < train.cols(); ++c) {
          double d = train(i, c) - x(j, c);
          s += d * d;
        }
        best = std::min(best, s);
      }
      out[i] = std::sqrt(best);
    }
    return out;
  };
  Vec nn_gen = nn_to(generated);
  Vec nn_test = nn_to(test);

  double z_sum = 0;
  int used = 0;
  for (int c = 0; c < k; ++c) {
    std::vector<double> xs, ys;
    for (Eigen::Index i = 0; i < train.rows(); ++i) {
      if (assign[i] != c) continue;
      xs.push_back(nn_gen[i]);
      ys.push_back(nn_test[i]);
    }
    if (xs.size() < 2) continue;  // cell too small to rank
    z_sum += mann_whitney_z(xs, ys);
    ++used;
  }
  if (used == 0) throw std::runtime_error("ct_score: every cell was too small to evaluate");
  return z_sum / static_cast<double>(used);
}

double scott_bandwidth(const Mat& rows) {
  if (rows.rows() < 2) throw std::invalid_argument("scott_bandwidth: need at least 2 rows");
  const double n = static_cast<double>(rows.rows());
  const double d = static_cast<double>(rows.cols());
  Vec mean = rows.colwise().mean().transpose();
  Mat centered = rows.rowwise() - mean.transpose();
  double avg_var = centered.array().square().sum() / ((n - 1) * d);
  double sigma = std::sqrt(std::max(avg_var, 1e-12));
  return sigma * std::pow(n, -1.0 / (d + 4.0));
}

double fld_lite(const Mat& train, const Mat& test, const Mat& generated, double bandwidth) {
  if (bandwidth <= 0) throw std::invalid_argument("fld_lite: bandwidth must be positive");
  if (train.rows() < 1 || test.rows() < 1 || generated.rows() < 1)
    throw std::invalid_argument("fld_lite: all three sets must be nonempty");

  const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
  // Log KDE up to a shared constant; the constant cancels except for the
  // log-count term, which does not.
  auto log_kde = [&](const Mat& ref, const Mat& query) {
    Mat d2 = pairwise_sq(query, ref);
    Vec out(query.rows());
    for (Eigen::Index q = 0; q < query.rows(); ++q) {
      double m = -d2.row(q).minCoeff() * inv2h2;
      double s = 0;
      for (Eigen::Index r = 0; r < ref.rows(); ++r)
        s += std::exp(-d2(q, r) * inv2h2 - m);
      out[q] = m + std::log(s) - std::log(static_cast<double>(ref.rows()));
    }
    return out;
  };

  Vec lt = log_kde(train, generated);
  Vec le = log_kde(test, generated);
  int higher = 0;
  for (Eigen::Index q = 0; q < generated.rows(); ++q)
    if (lt[q] > le[q]) ++higher;
  return 100.0 * static_cast<double>(higher) / static_cast<double>(generated.rows());
}

}  // namespace fedtrace
