#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "fedtrace/config.hpp"
#include "fedtrace/experiment.hpp"
#include "fedtrace/matchverify.hpp"
#include "fedtrace/memdetect.hpp"
#include "fedtrace/metrics.hpp"
#include "fedtrace/provenance.hpp"
#include "fedtrace/rng.hpp"
#include "fedtrace/simnet.hpp"

namespace {

using namespace fedtrace;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct LatentFile {
  int dim = 0;
  std::vector<SampleRecord> records;
};

// Text format, one sample per row:
//   fedtrace-latents 1
//   dim <D>
//   <id> <class> <v0> ... <v{D-1}>
LatentFile read_latents(const std::filesystem::path& file, Origin origin) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error(file.string() + ": cannot open");
  auto fail = [&](int line, const std::string& what) {
    throw std::runtime_error(file.string() + ":" + std::to_string(line) + ": " + what);
  };

  std::string line;
  if (!std::getline(is, line)) fail(1, "empty file");
  if (line != "fedtrace-latents 1") fail(1, "expected header 'fedtrace-latents 1'");

  LatentFile out;
  if (!std::getline(is, line)) fail(2, "missing 'dim <D>' line");
  {
    std::istringstream hs(line);
    std::string word;
    if (!(hs >> word >> out.dim) || word != "dim" || out.dim < 1 || (hs >> word))
      fail(2, "expected 'dim <D>' with D >= 1");
  }

  std::set<std::string> seen;
  int lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream rs(line);
    SampleRecord rec;
    rec.origin = origin;
    if (!(rs >> rec.id >> rec.latent.class_id)) fail(lineno, "expected '<id> <class> <values...>'");
    if (rec.latent.class_id < 0) fail(lineno, "class must be >= 0");
    if (!seen.insert(rec.id).second) fail(lineno, "duplicate id '" + rec.id + "'");
    rec.latent.values.resize(out.dim);
    for (int i = 0; i < out.dim; ++i)
      if (!(rs >> rec.latent.values[i])) fail(lineno, "expected " + std::to_string(out.dim) +
                                                          " values after the id and class");
    std::string extra;
    if (rs >> extra) fail(lineno, "trailing tokens after the last value");
    out.records.push_back(std::move(rec));
  }
  if (out.records.empty()) fail(lineno, "no sample rows");
  return out;
}

struct RunArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_run(const RunArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  std::optional<std::string> out;
  if (!a.out.empty()) {
    out = a.out;
  } else if (cfg.out_dir.empty()) {
    if (const char* env = std::getenv("FEDTRACE_OUT"); env && *env) out = env;
  }
  RunArtifacts art = run_experiment(cfg, a.seed, out);

  Json report{{"out", art.dir.string()},
              {"submissions", art.global_rows.size()},
              {"ledger_digest", art.trace.ledger->log_digest()},
              {"winner", art.trace.winning_model_cid}};
  std::cout << report.dump(2) << '\n';
  return kOk;
}

struct ScoreArgs {
  std::string train, test, generated;
  std::uint64_t seed = 1;
  std::string weights_file;
  std::string pairs_out;
  MetricsConfig metrics;
};

int cmd_score(const ScoreArgs& a) {
  LatentFile train = read_latents(a.train, Origin::Train);
  LatentFile test = read_latents(a.test, Origin::Test);
  LatentFile generated = read_latents(a.generated, Origin::Generated);
  if (train.dim != test.dim || train.dim != generated.dim)
    throw std::runtime_error("dimension mismatch: train " + std::to_string(train.dim) + ", test " +
                             std::to_string(test.dim) + ", generated " +
                             std::to_string(generated.dim));

  std::optional<VerifierWeights> weights;
  if (!a.weights_file.empty()) weights = VerifierWeights::load(a.weights_file);
  EvalResult res =
      score_record_sets(train.records, test.records, generated.records, a.metrics, a.seed, weights);

  Json out{{"format_version", 1},
           {"qn", res.bundle.qn},
           {"fid", res.bundle.fid},
           {"fld", res.bundle.fld},
           {"authpct", res.bundle.authpct},
           {"ct", res.bundle.ct},
           {"v_a", res.bundle.v_a},
           {"v_c", res.bundle.v_c},
           {"r_c", res.bundle.r_c},
           {"n_generated", res.report.n_generated},
           {"n_confirmed", res.report.confirmed.size()}};
  std::cout << out.dump(2) << '\n';

  if (!a.pairs_out.empty()) {
    std::ofstream ps(a.pairs_out);
    if (!ps) throw std::runtime_error(a.pairs_out + ": cannot open for writing");
    ps << confirmed_pairs_csv(res.report);
  }
  return kOk;
}

struct VerifyArgs {
  std::string ledger;
  std::string store;
  std::string lineage_cid;
  std::string digest_file;
  std::string keys_file;
};

int cmd_verify(const VerifyArgs& a) {
  auto opt_path = [](const std::string& s) {
    return s.empty() ? std::nullopt : std::optional<std::filesystem::path>(s);
  };
  VerifyReport report = verify_run(
      a.ledger, a.store, opt_path(a.digest_file), opt_path(a.keys_file),
      a.lineage_cid.empty() ? std::nullopt : std::optional<std::string>(a.lineage_cid));

  for (const std::string& line : report.checks) std::cout << "ok " << line << '\n';
  for (const std::string& line : report.violations) std::cout << "FAIL " << line << '\n';
  if (!report.ok) {
    std::cout << "verify: FAIL (" << report.violations.size() << " violations)\n";
    return kFailure;
  }
  std::cout << "verify: PASS\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aggregator-free federated learning simulator and memorization scorer"};
  app.require_subcommand(1);

  RunArgs run_args;
  std::uint64_t run_seed = 0;
  CLI::App* run = app.add_subcommand("run", "run an experiment from a config file");
  run->add_option("config", run_args.config, "experiment config file")->required();
  CLI::Option* seed_opt = run->add_option("--seed", run_seed, "override the config seed");
  run->add_option("--out", run_args.out,
                  "output directory (falls back to config output.dir, then $FEDTRACE_OUT)");

  ScoreArgs score_args;
  CLI::App* score = app.add_subcommand("score", "score generated latents against train and test");
  score->add_option("--train", score_args.train, "train latents file")->required();
  score->add_option("--test", score_args.test, "test latents file")->required();
  score->add_option("--generated", score_args.generated, "generated latents file")->required();
  score->add_option("--seed", score_args.seed, "fingerprinter and verifier seed");
  score->add_option("--weights", score_args.weights_file,
                    "load verifier weights instead of calibrating from the seed");
  score->add_option("--knn-k", score_args.metrics.knn_k, "nearest neighbors per generated sample");
  score->add_option("--confirm-threshold", score_args.metrics.confirm_threshold,
                    "verifier score needed to confirm a pair");
  score->add_option("--cells", score_args.metrics.k_cells, "rank-test cell count (0 = auto)");
  score->add_option("--bandwidth", score_args.metrics.kde_bandwidth,
                    "density bandwidth (0 = Scott's rule on the train split)");
  score->add_option("--kernel-lambda", score_args.metrics.kernel.lambda,
                    "similarity kernel temperature");
  score->add_option("--window-target", score_args.metrics.window_target,
                    "verifier window count for calibration");
  score->add_option("--gem-p", score_args.metrics.gem_p, "pooling exponent");
  score->add_option("--pairs-out", score_args.pairs_out, "write confirmed pairs as CSV");

  VerifyArgs verify_args;
  CLI::App* verify = app.add_subcommand("verify", "replay a ledger and validate lineages");
  verify->add_option("--ledger", verify_args.ledger, "ledger jsonl file")->required();
  verify->add_option("--store", verify_args.store, "content store directory")->required();
  verify->add_option("--lineage", verify_args.lineage_cid,
                     "validate one model cid (default: all models)");
  verify->add_option("--digest", verify_args.digest_file,
                     "digest sidecar (default: ledger.digest next to the ledger)");
  verify->add_option("--keys", verify_args.keys_file,
                     "signer registry (default: keys.json next to the ledger)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (run->parsed()) {
      if (seed_opt->count() > 0) run_args.seed = run_seed;
      return cmd_run(run_args);
    }
    if (score->parsed()) return cmd_score(score_args);
    return cmd_verify(verify_args);
  } catch (const std::exception& e) {
    std::cerr << "fedtrace: " << e.what() << '\n';
    return kFailure;
  }
}
