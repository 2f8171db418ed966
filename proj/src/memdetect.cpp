#include "fedtrace/memdetect.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fedtrace {

namespace {

EmbeddedSet embed_span(const SampleRecord* const* recs, size_t n, const Fingerprinter& fp) {
  EmbeddedSet set;
  set.ids.reserve(n);
  set.class_ids.reserve(n);
  set.embeddings = Mat(static_cast<Eigen::Index>(n), kEmbeddingDim);
  for (size_t i = 0; i < n; ++i) {
    const SampleRecord& r = *recs[i];
    set.ids.push_back(r.id);
    set.class_ids.push_back(r.latent.class_id);
    set.embeddings.row(static_cast<Eigen::Index>(i)) = fp.embed(r.latent).transpose();
  }
  return set;
}

// Pairwise squared L2 between row sets, the usual |a|^2 + |b|^2 - 2ab expansion.
Mat pairwise_sq(const Mat& a, const Mat& b) {
  Vec an = a.rowwise().squaredNorm();
  Vec bn = b.rowwise().squaredNorm();
  Mat d = (-2.0 * a * b.transpose());
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  return d.cwiseMax(0.0);
}

}  // namespace

EmbeddedSet embed_records(const std::vector<SampleRecord>& records, const Fingerprinter& fp) {
  std::vector<const SampleRecord*> ptrs;
  ptrs.reserve(records.size());
  for (const auto& r : records) ptrs.push_back(&r);
  return embed_span(ptrs.data(), ptrs.size(), fp);
}

EmbeddedSet embed_records(const std::vector<const SampleRecord*>& records,
                          const Fingerprinter& fp) {
  return embed_span(records.data(), records.size(), fp);
}

ClassThresholds intra_class_thresholds(const EmbeddedSet& train, bool population_stdev) {
  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < train.size(); ++i) by_class[train.class_ids[i]].push_back(i);

  ClassThresholds out;
  out.population_stdev = population_stdev;
  for (const auto& [cls, rows] : by_class) {
    const int n = static_cast<int>(rows.size());
    if (n < 2) {
      std::ostringstream msg;
      msg << "intra_class_thresholds: class " << cls << " has " << n
          << " training samples; need at least 2";
      throw std::invalid_argument(msg.str());
    }
    Mat sub(n, train.embeddings.cols());
    for (int i = 0; i < n; ++i) sub.row(i) = train.embeddings.row(rows[i]);
    Mat d2 = pairwise_sq(sub, sub);
    std::vector<double> nn(n);
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        best = std::min(best, d2(i, j));
      }
      nn[i] = std::sqrt(best);
    }
    double mean = 0;
    for (double v : nn) mean += v;
    mean /= n;
    double var = 0;
    for (double v : nn) var += (v - mean) * (v - mean);
    var /= population_stdev ? n : (n - 1);
    ClassThresholdEntry e;
    e.mean = mean;
    e.stdev = std::sqrt(var);
    e.t_l2 = mean - 0.5 * e.stdev;
    e.n_pairs = n;
    out.per_class[cls] = e;
  }
  return out;
}

std::vector<CandidatePair> knn_candidates(const EmbeddedSet& generated, const EmbeddedSet& train,
                                          const ClassThresholds& thresholds, int k) {
  if (k < 1) throw std::invalid_argument("knn_candidates: k must be >= 1");

  std::map<int, std::vector<int>> train_by_class;
  for (int i = 0; i < train.size(); ++i) train_by_class[train.class_ids[i]].push_back(i);
  // Fixed scan order regardless of caller's train ordering.
  for (auto& [cls, rows] : train_by_class)
    std::sort(rows.begin(), rows.end(),
              [&](int a, int b) { return train.ids[a] < train.ids[b]; });

  std::vector<CandidatePair> out;
  for (int g = 0; g < generated.size(); ++g) {
    const int cls = generated.class_ids[g];
    auto cit = train_by_class.find(cls);
    auto tit = thresholds.per_class.find(cls);
    if (cit == train_by_class.end() || tit == thresholds.per_class.end()) continue;
    const double t = tit->second.t_l2;
    if (t <= 0) continue;

    std::vector<CandidatePair> mine;
    for (int row : cit->second) {
      double d = (generated.embeddings.row(g) - train.embeddings.row(row)).norm();
      if (d < t) {
        CandidatePair p;
        p.generated_id = generated.ids[g];
        p.train_id = train.ids[row];
        p.l2_distance = d;
        p.class_id = cls;
        p.train_index = row;
        p.generated_index = g;
        mine.push_back(std::move(p));
      }
    }
    std::sort(mine.begin(), mine.end(), [](const CandidatePair& a, const CandidatePair& b) {
      if (a.l2_distance != b.l2_distance) return a.l2_distance < b.l2_distance;
      return a.train_id < b.train_id;
    });
    if (static_cast<int>(mine.size()) > k) mine.resize(k);
    out.insert(out.end(), mine.begin(), mine.end());
  }
  return out;
}

MemorizationReport confirm_matches(const std::vector<CandidatePair>& candidates,
                                   const PairScorer& scorer, double confirm_threshold) {
  if (confirm_threshold <= 0 || confirm_threshold >= 1)
    throw std::invalid_argument("confirm_matches: threshold must be in (0,1)");

  MemorizationReport report;
  report.checked.reserve(candidates.size());
  for (const CandidatePair& c : candidates) {
    double s = scorer(c);
    if (s < 0 || s > 1) throw std::invalid_argument("confirm_matches: score outside [0,1]");
    report.checked.push_back(ScoredPair{c, s});
  }

  std::vector<const ScoredPair*> passing;
  for (const ScoredPair& sp : report.checked)
    if (sp.score >= confirm_threshold) passing.push_back(&sp);

  std::sort(passing.begin(), passing.end(), [](const ScoredPair* a, const ScoredPair* b) {
    if (a->score != b->score) return a->score > b->score;
    if (a->pair.l2_distance != b->pair.l2_distance) return a->pair.l2_distance < b->pair.l2_distance;
    if (a->pair.generated_id != b->pair.generated_id) return a->pair.generated_id < b->pair.generated_id;
    return a->pair.train_id < b->pair.train_id;
  });

  std::set<std::string> used_generated, used_train;
  for (const ScoredPair* sp : passing) {
    if (used_generated.count(sp->pair.generated_id) || used_train.count(sp->pair.train_id))
      continue;
    used_generated.insert(sp->pair.generated_id);
    used_train.insert(sp->pair.train_id);
    report.confirmed.push_back(*sp);
    report.per_train_counts[sp->pair.train_id] += 1;
    report.per_generated_counts[sp->pair.generated_id] += 1;
  }
  return report;
}

void aggregate_report(MemorizationReport& report, int n_generated) {
  if (n_generated < 1) throw std::invalid_argument("aggregate_report: n_generated must be >= 1");
  report.n_generated = n_generated;

  auto mean_score = [](const std::vector<ScoredPair>& v) {
    if (v.empty()) return 0.0;
    double s = 0;
    for (const auto& sp : v) s += sp.score;
    return s / static_cast<double>(v.size());
  };
  report.v_a = mean_score(report.checked);
  report.v_c = mean_score(report.confirmed);

  std::set<std::string> confirmed_generated;
  for (const auto& sp : report.confirmed) confirmed_generated.insert(sp.pair.generated_id);
  report.r_c = static_cast<double>(confirmed_generated.size()) / static_cast<double>(n_generated);
}

std::set<std::string> exclusion_set(const std::map<std::string, int>& cumulative_counts,
                                    double percentile) {
  if (percentile <= 0 || percentile >= 100)
    throw std::invalid_argument("exclusion_set: percentile must be in (0,100)");
  if (cumulative_counts.empty()) return {};

  int lo = std::numeric_limits<int>::max(), hi = std::numeric_limits<int>::min();
  for (const auto& [id, c] : cumulative_counts) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  if (hi == lo) return {};  // degenerate min-max; includes the all-zero case

  std::vector<double> normalized;
  normalized.reserve(cumulative_counts.size());
  const double span = static_cast<double>(hi - lo);
  for (const auto& [id, c] : cumulative_counts) normalized.push_back((c - lo) / span);

  // Nearest-rank percentile over the normalized distribution.
  std::vector<double> sorted = normalized;
  std::sort(sorted.begin(), sorted.end());
  size_t rank = static_cast<size_t>(
      std::ceil(percentile / 100.0 * static_cast<double>(sorted.size())));
  rank = std::clamp<size_t>(rank, 1, sorted.size());
  const double cutoff = sorted[rank - 1];

  std::set<std::string> out;
  for (const auto& [id, c] : cumulative_counts) {
    double norm = (c - lo) / span;
    if (norm >= cutoff && norm > 0.0) out.insert(id);
  }
  return out;
}

nlohmann::json report_to_json(const MemorizationReport& report) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& sp : report.confirmed)
    pairs.push_back({{"generated_id", sp.pair.generated_id},
                     {"train_id", sp.pair.train_id},
                     {"score", sp.score},
                     {"l2", sp.pair.l2_distance},
                     {"class_id", sp.pair.class_id}});
  return nlohmann::json{{"format_version", 1},
                        {"v_a", report.v_a},
                        {"v_c", report.v_c},
                        {"r_c", report.r_c},
                        {"n_generated", report.n_generated},
                        {"n_checked", report.checked.size()},
                        {"n_confirmed", report.confirmed.size()},
                        {"confirmed_pairs", std::move(pairs)}};
}

std::string confirmed_pairs_csv(const MemorizationReport& report) {
  std::ostringstream os;
  os << "generated_id,train_id,score,l2\n";
  os.precision(17);
  for (const auto& sp : report.confirmed)
    os << sp.pair.generated_id << ',' << sp.pair.train_id << ',' << sp.score << ','
       << sp.pair.l2_distance << '\n';
  return os.str();
}

}  // namespace fedtrace
