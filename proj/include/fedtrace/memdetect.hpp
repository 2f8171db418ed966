#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedtrace/embedding.hpp"

namespace fedtrace {

// Embeddings for a batch of records, row per sample, aligned id/class lists.
struct EmbeddedSet {
  std::vector<std::string> ids;
  std::vector<int> class_ids;
  Mat embeddings;  // n x 256

  int size() const { return static_cast<int>(ids.size()); }
};

EmbeddedSet embed_records(const std::vector<SampleRecord>& records, const Fingerprinter& fp);
EmbeddedSet embed_records(const std::vector<const SampleRecord*>& records, const Fingerprinter& fp);

struct ClassThresholdEntry {
  double t_l2 = 0;   // mean - 0.5 * stdev of nearest intra-class neighbor distances
  double mean = 0;
  double stdev = 0;
  int n_pairs = 0;
};

struct ClassThresholds {
  std::map<int, ClassThresholdEntry> per_class;
  bool population_stdev = true;
};

// Nearest intra-class neighbor distances per class; every class needs >= 2
// samples or this throws naming the class.
ClassThresholds intra_class_thresholds(const EmbeddedSet& train, bool population_stdev = true);

struct CandidatePair {
  std::string generated_id;
  std::string train_id;
  double l2_distance = 0;
  int class_id = 0;
  int train_index = -1;
  int generated_index = -1;
};

// Per generated sample, its <= k nearest same-class train samples under the
// class threshold, sorted by distance ascending (ties by train id).
std::vector<CandidatePair> knn_candidates(const EmbeddedSet& generated, const EmbeddedSet& train,
                                          const ClassThresholds& thresholds, int k = 5);

struct ScoredPair {
  CandidatePair pair;
  double score = 0;
};

struct MemorizationReport {
  double v_a = 0, v_c = 0, r_c = 0;
  int n_generated = 0;
  std::vector<ScoredPair> checked;
  std::vector<ScoredPair> confirmed;
  std::map<std::string, int> per_train_counts;
  std::map<std::string, int> per_generated_counts;
};

using PairScorer = std::function<double(const CandidatePair&)>;

// Scores every candidate, keeps scores >= confirm_threshold, then applies the
// count-once rule: each generated id and each train id appears in at most one
// confirmed pair, preferring higher score, then lower distance, then ids.
MemorizationReport confirm_matches(const std::vector<CandidatePair>& candidates,
                                   const PairScorer& scorer, double confirm_threshold = 0.8);

// Fills v_a / v_c / r_c from the pair lists. n_generated must be >= 1.
void aggregate_report(MemorizationReport& report, int n_generated);

// Min-max normalizes counts and returns ids at or above the percentile cutoff
// (nearest-rank). Ids with zero count never qualify; all-equal counts produce
// an empty set.
std::set<std::string> exclusion_set(const std::map<std::string, int>& cumulative_counts,
                                    double percentile = 95.0);

nlohmann::json report_to_json(const MemorizationReport& report);
std::string confirmed_pairs_csv(const MemorizationReport& report);

}  // namespace fedtrace
