#pragma once

#include "fedtrace/common.hpp"

namespace fedtrace {

struct GaussianSummary {
  Vec mean;
  Mat covariance;
  int n = 0;
};

// Sample mean and covariance (n-1 denominator). Needs >= 2 rows.
GaussianSummary fit_gaussian(const Mat& rows);

// Frechet distance between Gaussians fitted to the two row sets:
// |muA - muB|^2 + tr(SA + SB - 2 (SA SB)^(1/2)).
double fid(const Mat& set_a, const Mat& set_b);
double fid_from(const GaussianSummary& a, const GaussianSummary& b);

// (fid + v_c * v_a * r_c * 1000) / 2; lower is better.
double qn_score(double fid_value, double v_c, double v_a, double r_c);

// (fid + fld * 100) / 2; lower is better.
double blended_fld_fid(double fid_value, double fld);

// Percentage of generated samples whose nearest train distance is NOT below
// that train sample's own nearest-neighbor distance within the train set.
double authpct(const Mat& train, const Mat& generated);

// Cell-averaged Mann-Whitney z comparing train-to-generated against
// train-to-test nearest distances; higher means less memorization.
// k_cells = 0 picks max(1, floor(sqrt(n_train) / 2)).
double ct_score(const Mat& train, const Mat& test, const Mat& generated, int k_cells = 0);

// Percentage of generated samples likelier under the train KDE than the test
// KDE; shared Gaussian bandwidth, ties count as not higher.
double fld_lite(const Mat& train, const Mat& test, const Mat& generated, double bandwidth);

// Scott's rule bandwidth for a row set.
double scott_bandwidth(const Mat& rows);

struct ScoreBundle {
  double qn = 0, fid = 0, fld = 0, authpct = 0, ct = 0;
  double v_a = 0, v_c = 0, r_c = 0;
};

}  // namespace fedtrace
