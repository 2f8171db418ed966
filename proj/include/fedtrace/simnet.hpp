#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedtrace/ledger.hpp"
#include "fedtrace/matchverify.hpp"
#include "fedtrace/memdetect.hpp"
#include "fedtrace/metrics.hpp"
#include "fedtrace/provenance.hpp"

namespace fedtrace {

struct WorldConfig {
  int classes = 10;
  int per_class = 80;  // total per class across all nodes, split half train half test
  int latent_dim = 32;
  double duplicate_rate = 0.0;
  double center_scale = 3.0;
  double offset_scale = 1.0;
  std::vector<std::string> node_ids;
};

struct NodeSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

struct WorldDataset {
  WorldConfig cfg;
  std::uint64_t seed = 0;
  std::vector<SampleRecord> records;
  std::vector<Vec> class_centers;
  std::map<std::string, NodeSplit> node_splits;
  std::map<std::string, int> index_by_id;

  const SampleRecord& by_id(const std::string& id) const;
  std::vector<const SampleRecord*> resolve(const std::vector<std::string>& ids) const;
  std::vector<const SampleRecord*> train_of(const std::string& node) const;
  std::vector<const SampleRecord*> test_of(const std::string& node) const;
  std::vector<const SampleRecord*> all_train() const;
  std::vector<const SampleRecord*> all_test() const;
};

// Seeded synthetic world: Gaussian class centers, per-class offsets, equal
// per-node per-class splits halved into train/test, optional duplicate
// injection into the training side.
WorldDataset generate_world(const WorldConfig& cfg, std::uint64_t seed);

struct ToyModelConfig {
  int prototypes_per_class = 20;
  double noise_sigma = 0.05;
  double learning_rate = 0.1;
  double init_spread = 1.0;
};

// Prototype-based memorizing generator. Training pulls the nearest
// same-class prototype toward each latent, so prototypes collapse onto
// training data with enough epochs; generation samples a prototype plus
// Gaussian noise.
struct ToyModel {
  int classes = 0;
  int prototypes_per_class = 0;
  int latent_dim = 0;
  double noise_sigma = 0.05;
  std::int64_t trained_epochs = 0;
  Mat prototypes;  // (classes * prototypes_per_class) x latent_dim, class-major

  std::string serialize() const;
  static ToyModel deserialize(const std::string& bytes);
};

ToyModel init_toy_model(const std::vector<const SampleRecord*>& train, const ToyModelConfig& cfg,
                        int classes, int latent_dim, std::uint64_t seed);

void train_epochs(ToyModel& model, const std::vector<const SampleRecord*>& train,
                  const std::set<std::string>& excluded_ids, int epochs, double learning_rate,
                  std::uint64_t seed);

std::vector<SampleRecord> generate_samples(const ToyModel& model, int n, std::uint64_t seed,
                                           const std::string& id_prefix,
                                           const std::string& owner);

struct NodeStrategy {
  NodeRole role = NodeRole::Trainer;
  Objective objective = Objective::Qn;
  int epochs_per_round = 50;
  int samples_per_eval = 1000;
  double vote_blend_alpha = 1.0;  // 1 = pure local score, 0 = pure vote tally
  VoterFilter vote_source_filter = VoterFilter::All;
  SimTime wake_interval_ms = 10'000;
  double wake_jitter_frac = 0.25;
  SimTime join_at_ms = 0;
  std::optional<SimTime> leave_at_ms;
};

struct MetricsConfig {
  int knn_k = 5;
  double confirm_threshold = 0.8;
  double exclusion_percentile = 95.0;
  int k_cells = 0;          // 0 = auto
  double kde_bandwidth = 0;  // 0 = Scott's rule on the train split
  bool population_stdev = true;
  KernelConfig kernel;
  int window_target = 55;
  double gem_p = 3.0;
};

struct ScoreRow {
  SimTime time = 0;
  std::string node_id;
  std::string model_cid;
  ScoreBundle bundle;
};

// Fingerprinter, calibrated verifier and window set for a scenario, derived
// from the run seed. Every node in a run shares one of these; building it
// again from the same scenario and seed reproduces it exactly.
struct ScenarioEvaluator {
  Fingerprinter fp;
  VerifierWeights weights;
  WindowSet windows;
};

struct Scenario {
  WorldConfig world;
  FingerprintConfig fingerprint;
  ToyModelConfig model;
  MetricsConfig metrics;
  LedgerConfig protocol;
  std::int64_t reward_pool = 0;
  std::map<std::string, NodeStrategy> nodes;
  int stop_after_submissions = 20;
  SimTime max_sim_ms = 10'000'000;
};

struct ExperimentTrace {
  std::unique_ptr<Ledger> ledger;
  std::unique_ptr<ScenarioEvaluator> evaluator;
  WorldDataset world;
  KeyRegistry keys;
  std::vector<ScoreRow> node_rows;  // node-local evaluations, in emit order
  std::map<std::string, double> excluded_fraction_by_node;
  std::map<std::string, std::set<std::string>> excluded_ids_by_node;
  std::string winning_model_cid;  // most-voted confirmed model, if any
  std::vector<std::pair<std::string, std::int64_t>> rewards;

  std::string trace_digest() const;
};

// Full-pipeline evaluation of one generated batch against reference splits.
// The verifier scorer is shared so pooled features can be cached by caller.
struct EvalContext {
  const Fingerprinter* fp = nullptr;
  const VerifierWeights* weights = nullptr;
  const WindowSet* windows = nullptr;
  const MetricsConfig* metrics = nullptr;
};

struct EvalInputs {
  const EmbeddedSet* train = nullptr;
  const EmbeddedSet* test = nullptr;
  const ClassThresholds* thresholds = nullptr;
  double bandwidth = 0;
  // Pooled-feature cache for train rows, keyed by train row index.
  std::map<int, PooledFeatures>* train_pooled = nullptr;
  const std::vector<const SampleRecord*>* train_records = nullptr;
};

struct EvalResult {
  ScoreBundle bundle;
  MemorizationReport report;
};

EvalResult evaluate_generated(const std::vector<SampleRecord>& generated,
                              const EvalContext& ctx, const EvalInputs& in);

ScenarioEvaluator make_scenario_evaluator(const Scenario& scenario, std::uint64_t seed);

ExperimentTrace run_schedule(const Scenario& scenario, std::uint64_t seed);

}  // namespace fedtrace
