#pragma once

#include <optional>

#include "fedtrace/config.hpp"

namespace fedtrace {

struct RunArtifacts {
  std::filesystem::path dir;
  Json summary;
  ExperimentTrace trace;
  std::vector<ScoreRow> global_rows;  // per confirmed submission, uniform evaluator
};

// Runs the scenario, evaluates every confirmed submission against the full
// world with a shared evaluator, and writes ledger.jsonl, ledger.digest,
// scores.csv, manifests/, keys.json, summary.json under the output dir.
RunArtifacts run_experiment(const ExperimentConfig& cfg,
                            std::optional<std::uint64_t> seed_override = std::nullopt,
                            std::optional<std::string> out_override = std::nullopt);

std::string scores_csv_text(const std::vector<ScoreRow>& node_rows,
                            const std::vector<ScoreRow>& global_rows);

// Full-pipeline scoring of standalone latent sets: derives a fingerprinter
// and calibrated verifier from the seed (or takes prebuilt weights), embeds
// the splits, and evaluates the generated set against them.
EvalResult score_record_sets(const std::vector<SampleRecord>& train,
                             const std::vector<SampleRecord>& test,
                             const std::vector<SampleRecord>& generated,
                             const MetricsConfig& metrics, std::uint64_t seed,
                             const std::optional<VerifierWeights>& weights = std::nullopt);

struct VerifyReport {
  bool ok = true;
  std::vector<std::string> checks;      // passed checks, one line each
  std::vector<std::string> violations;  // failed checks, naming the event or CID
};

// Replays a persisted run: recomputes the log digest against the sidecar,
// folds the events into contract state, and validates every model lineage
// (or just `lineage_cid`). Sidecar and registry default to ledger.digest and
// keys.json next to the ledger file.
VerifyReport verify_run(const std::filesystem::path& ledger_file,
                        const std::filesystem::path& store_dir,
                        const std::optional<std::filesystem::path>& digest_file = std::nullopt,
                        const std::optional<std::filesystem::path>& keys_file = std::nullopt,
                        const std::optional<std::string>& lineage_cid = std::nullopt);

struct PrivacyHit {
  std::string sample_id;
  std::string encoding;  // "latent-raw", "latent-json", "embedding-raw", "embedding-json"
  std::string haystack;
  size_t offset = 0;
};

// Searches the byte buffers for any training latent (and its unaugmented
// embedding) in the encodings the artifact writer uses: raw little-endian
// doubles and JSON number arrays.
std::vector<PrivacyHit> privacy_scan(const WorldDataset& world,
                                     const std::vector<std::pair<std::string, std::string>>&
                                         haystacks);

// Scans ledger.jsonl, scores.csv, summary.json, keys.json and every blob in
// manifests/ under an experiment output directory.
std::vector<PrivacyHit> privacy_scan_dir(const WorldDataset& world,
                                         const std::filesystem::path& out_dir);

}  // namespace fedtrace
