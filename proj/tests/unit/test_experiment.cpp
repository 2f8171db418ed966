#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedtrace/experiment.hpp"

using namespace fedtrace;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

ExperimentConfig tiny_config(const std::string& out) {
  std::string text = R"({
    "format_version": 1,
    "world": {"classes": 3, "per_class": 8, "latent_dim": 8},
    "model": {"prototypes_per_class": 2, "learning_rate": 0.3},
    "metrics": {"knn_k": 2},
    "protocol": {"confirmation_delay_ms": 1000, "reward_pool": 500},
    "run": {"seed": 5, "stop_after_submissions": 3},
    "nodes": [{"id": "n0", "epochs_per_round": 4, "samples_per_eval": 12,
               "wake_interval_ms": 10000}],
    "output": {"global_eval_samples": 12}
  })";
  ExperimentConfig cfg = parse_config(text, "tiny.json");
  cfg.out_dir = out;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("a run writes the full artifact set") {
  TempDir tmp("fedtrace_exp_artifacts");
  RunArtifacts run = run_experiment(tiny_config((tmp.path / "out").string()));

  for (const char* name :
       {"ledger.jsonl", "ledger.digest", "scores.csv", "summary.json", "keys.json"})
    CHECK(std::filesystem::is_regular_file(run.dir / name));
  CHECK(std::filesystem::is_directory(run.dir / "manifests"));

  // Digest sidecar matches the log and the persisted jsonl.
  Json digest = Json::parse(slurp(run.dir / "ledger.digest"));
  CHECK(digest.at("sha256_hex").get<std::string>() == run.trace.ledger->log_digest());
  auto events = Ledger::read_jsonl(run.dir / "ledger.jsonl");
  CHECK(Ledger::digest_of(events) == run.trace.ledger->log_digest());
  CHECK(digest.at("events").get<size_t>() == events.size());

  // Every stored blob survives the round trip through manifests/.
  ContentStore reloaded = ContentStore::load(run.dir / "manifests");
  CHECK(reloaded.size() == run.trace.ledger->store().size());

  KeyRegistry keys = KeyRegistry::load(run.dir / "keys.json");
  CHECK(keys.contains("n0"));
}

TEST_CASE("score rows satisfy the aggregate identity") {
  TempDir tmp("fedtrace_exp_scores");
  RunArtifacts run = run_experiment(tiny_config((tmp.path / "out").string()));

  std::istringstream csv(slurp(run.dir / "scores.csv"));
  std::string line;
  REQUIRE(std::getline(csv, line));
  CHECK(line == "# fedtrace-scores 1");
  REQUIRE(std::getline(csv, line));
  CHECK(line == "time,node_id,model_cid,qn,fid,fld,authpct,ct,v_a,v_c,r_c");

  int rows = 0;
  int global_rows = 0;
  while (std::getline(csv, line)) {
    std::istringstream fields(line);
    std::string time, node, cid, qn, fid, fld, authpct, ct, v_a, v_c, r_c;
    REQUIRE(std::getline(fields, time, ','));
    REQUIRE(std::getline(fields, node, ','));
    REQUIRE(std::getline(fields, cid, ','));
    REQUIRE(std::getline(fields, qn, ','));
    REQUIRE(std::getline(fields, fid, ','));
    REQUIRE(std::getline(fields, fld, ','));
    REQUIRE(std::getline(fields, authpct, ','));
    REQUIRE(std::getline(fields, ct, ','));
    REQUIRE(std::getline(fields, v_a, ','));
    REQUIRE(std::getline(fields, v_c, ','));
    REQUIRE(std::getline(fields, r_c));
    CHECK(is_cid(cid));
    double qn_re = qn_score(std::stod(fid), std::stod(v_c), std::stod(v_a), std::stod(r_c));
    CHECK(std::stod(qn) == doctest::Approx(qn_re).epsilon(1e-12));
    double a = std::stod(authpct);
    CHECK(a >= 0.0);
    CHECK(a <= 100.0);
    ++rows;
    if (node == "_global") ++global_rows;
  }
  CHECK(rows == static_cast<int>(run.trace.node_rows.size() + run.global_rows.size()));
  CHECK(global_rows == static_cast<int>(run.global_rows.size()));
  CHECK(global_rows == static_cast<int>(run.trace.ledger->state().models.size()));
}

TEST_CASE("the summary captures the run outcome") {
  TempDir tmp("fedtrace_exp_summary");
  RunArtifacts run = run_experiment(tiny_config((tmp.path / "out").string()));
  Json s = Json::parse(slurp(run.dir / "summary.json"));

  for (const char* key :
       {"format_version", "seed", "world", "nodes", "mean_excluded_fraction", "n_events",
        "n_submissions", "winning_model_cid", "rewards", "ledger_digest", "trace_digest",
        "per_submission", "final10"})
    CHECK(s.contains(key));

  CHECK(s.at("format_version").get<int>() == 1);
  CHECK(s.at("seed").get<std::uint64_t>() == 5);
  CHECK(s.at("n_submissions").get<size_t>() == run.trace.ledger->state().models.size());
  CHECK(s.at("ledger_digest").get<std::string>() == run.trace.ledger->log_digest());
  CHECK(s.at("trace_digest").get<std::string>() == run.trace.trace_digest());
  CHECK(s.at("nodes").at("n0").at("objective").get<std::string>() == "qn");

  std::int64_t reward_total = 0;
  for (const Json& r : s.at("rewards")) reward_total += r.at("amount").get<std::int64_t>();
  CHECK(reward_total == 500);

  REQUIRE(s.at("per_submission").is_array());
  CHECK(s.at("per_submission").size() == run.global_rows.size());
  for (const Json& row : s.at("per_submission")) {
    double qn_re = qn_score(row.at("fid").get<double>(), row.at("v_c").get<double>(),
                            row.at("v_a").get<double>(), row.at("r_c").get<double>());
    CHECK(row.at("qn").get<double>() == doctest::Approx(qn_re).epsilon(1e-12));
    double novelty = row.at("v_c").get<double>() * row.at("v_a").get<double>() *
                     row.at("r_c").get<double>() * 1000.0;
    CHECK(row.at("novelty_term").get<double>() == doctest::Approx(novelty).epsilon(1e-12));
  }
  CHECK(s.at("final10").at("n").get<int>() > 0);
}

TEST_CASE("runs replay bit for bit and honor overrides") {
  TempDir tmp("fedtrace_exp_replay");
  ExperimentConfig cfg = tiny_config((tmp.path / "a").string());
  RunArtifacts a = run_experiment(cfg);
  RunArtifacts b = run_experiment(cfg, std::nullopt, (tmp.path / "b").string());

  CHECK(b.dir == tmp.path / "b");
  CHECK(a.trace.trace_digest() == b.trace.trace_digest());
  CHECK(slurp(a.dir / "scores.csv") == slurp(b.dir / "scores.csv"));
  CHECK(slurp(a.dir / "ledger.jsonl") == slurp(b.dir / "ledger.jsonl"));
  CHECK(a.summary.at("trace_digest") == b.summary.at("trace_digest"));

  RunArtifacts c = run_experiment(cfg, 777, (tmp.path / "c").string());
  CHECK(c.summary.at("seed").get<std::uint64_t>() == 777);
  CHECK(a.summary.at("trace_digest") != c.summary.at("trace_digest"));

  ExperimentConfig no_out = cfg;
  no_out.out_dir.clear();
  CHECK_THROWS(run_experiment(no_out));
}

TEST_CASE("artifacts never leak training latents") {
  TempDir tmp("fedtrace_exp_privacy");
  RunArtifacts run = run_experiment(tiny_config((tmp.path / "out").string()));

  auto hits = privacy_scan_dir(run.trace.world, run.dir);
  CHECK(hits.empty());

  // Positive control: planting one training latent must trip the scan in
  // both encodings.
  const SampleRecord* victim = run.trace.world.all_train().front();
  std::string raw(reinterpret_cast<const char*>(victim->latent.values.data()),
                  static_cast<size_t>(victim->latent.values.size()) * sizeof(double));
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < victim->latent.values.size(); ++i)
    arr.push_back(victim->latent.values[i]);
  std::string json_text = arr.dump();

  auto raw_hits = privacy_scan(
      run.trace.world, {{"leaky.bin", "prefix " + raw + " suffix"}});
  REQUIRE(!raw_hits.empty());
  CHECK(raw_hits.front().sample_id == victim->id);
  CHECK(raw_hits.front().encoding == "latent-raw");
  CHECK(raw_hits.front().haystack == "leaky.bin");

  auto json_hits = privacy_scan(run.trace.world, {{"leaky.json", json_text}});
  REQUIRE(!json_hits.empty());
  CHECK(json_hits.front().sample_id == victim->id);

  // Whitespace cannot hide a leak.
  std::string spaced;
  for (char c : json_text) {
    spaced += c;
    spaced += ' ';
  }
  auto spaced_hits = privacy_scan(run.trace.world, {{"spaced.json", spaced}});
  CHECK(!spaced_hits.empty());

  // A planted file inside the output dir is caught by the directory scan.
  {
    std::ofstream os(run.dir / "manifests" / std::string(64, 'f'), std::ios::binary);
    os << raw;
  }
  auto dir_hits = privacy_scan_dir(run.trace.world, run.dir);
  CHECK(!dir_hits.empty());
}

TEST_CASE("the global pass reuses the run evaluator verbatim") {
  TempDir tmp("fedtrace_exp_global");
  RunArtifacts run = run_experiment(tiny_config((tmp.path / "out").string()));

  REQUIRE(!run.global_rows.empty());
  for (const ScoreRow& row : run.global_rows) {
    CHECK(row.node_id == "_global");
    CHECK(run.trace.ledger->state().models.count(row.model_cid) == 1);
  }
  // Global rows are ordered by confirmation sequence.
  const ContractState& state = run.trace.ledger->state();
  std::uint64_t prev_seq = 0;
  for (const ScoreRow& row : run.global_rows) {
    std::uint64_t seq = state.models.at(row.model_cid).seq;
    CHECK(seq >= prev_seq);
    prev_seq = seq;
  }
}
