#include "fedtrace/experiment.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "fedtrace/rng.hpp"

namespace fedtrace {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + file.string());
  os << text;
  if (!os) throw std::runtime_error("short write: " + file.string());
}

std::string read_text(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + file.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

void append_row(std::ostream& os, const ScoreRow& r) {
  os << r.time << ',' << r.node_id << ',' << r.model_cid << ',' << r.bundle.qn << ','
     << r.bundle.fid << ',' << r.bundle.fld << ',' << r.bundle.authpct << ',' << r.bundle.ct
     << ',' << r.bundle.v_a << ',' << r.bundle.v_c << ',' << r.bundle.r_c << '\n';
}

double novelty_term(const ScoreBundle& b) { return b.v_c * b.v_a * b.r_c * 1000.0; }

Json bundle_json(const ScoreBundle& b) {
  return Json{{"qn", b.qn},           {"fid", b.fid}, {"fld", b.fld}, {"authpct", b.authpct},
              {"ct", b.ct},           {"v_a", b.v_a}, {"v_c", b.v_c}, {"r_c", b.r_c},
              {"novelty_term", novelty_term(b)}};
}

}  // namespace

std::string scores_csv_text(const std::vector<ScoreRow>& node_rows,
                            const std::vector<ScoreRow>& global_rows) {
  std::ostringstream os;
  os.precision(17);
  os << "# fedtrace-scores 1\n";
  os << "time,node_id,model_cid,qn,fid,fld,authpct,ct,v_a,v_c,r_c\n";
  for (const ScoreRow& r : node_rows) append_row(os, r);
  for (const ScoreRow& r : global_rows) append_row(os, r);
  return os.str();
}

RunArtifacts run_experiment(const ExperimentConfig& cfg,
                            std::optional<std::uint64_t> seed_override,
                            std::optional<std::string> out_override) {
  const std::uint64_t seed = seed_override.value_or(cfg.seed);
  const fs::path out = out_override ? fs::path(*out_override) : fs::path(cfg.out_dir);
  if (out.empty()) throw ConfigError("output.dir is required to write run artifacts");
  if (cfg.global_eval_samples < cfg.scenario.world.classes)
    throw ConfigError("output.global_eval_samples below class count");

  RunArtifacts art;
  art.dir = out;
  art.trace = run_schedule(cfg.scenario, seed);
  ExperimentTrace& trace = art.trace;

  // Re-score every confirmed submission with one shared evaluator over the
  // full world, so rows are comparable across nodes and objectives.
  {
    const ScenarioEvaluator& ev = *trace.evaluator;
    auto train_records = trace.world.all_train();
    auto test_records = trace.world.all_test();
    EmbeddedSet train_set = embed_records(train_records, ev.fp);
    EmbeddedSet test_set = embed_records(test_records, ev.fp);
    ClassThresholds thresholds =
        intra_class_thresholds(train_set, cfg.scenario.metrics.population_stdev);
    double bandwidth = cfg.scenario.metrics.kde_bandwidth > 0
                           ? cfg.scenario.metrics.kde_bandwidth
                           : scott_bandwidth(train_set.embeddings);
    std::map<int, PooledFeatures> train_pooled;

    EvalContext ctx{&ev.fp, &ev.weights, &ev.windows, &cfg.scenario.metrics};
    EvalInputs in;
    in.train = &train_set;
    in.test = &test_set;
    in.thresholds = &thresholds;
    in.bandwidth = bandwidth;
    in.train_pooled = &train_pooled;
    in.train_records = &train_records;

    for (const LedgerEvent& evn : trace.ledger->events_since(0)) {
      if (evn.kind != EventKind::ModelSubmitted) continue;
      const std::string cid = evn.payload.at("model_cid").get<std::string>();
      ToyModel model = ToyModel::deserialize(trace.ledger->store().get(cid));
      auto generated =
          generate_samples(model, cfg.global_eval_samples, derive_seed(seed, "eval.global." + cid),
                           "global/" + cid.substr(0, 8), "_global");
      EvalResult res = evaluate_generated(generated, ctx, in);
      art.global_rows.push_back(ScoreRow{evn.confirmed_at, "_global", cid, res.bundle});
    }
  }

  Json summary;
  summary["format_version"] = 1;
  summary["seed"] = seed;
  summary["world"] = Json{{"classes", cfg.scenario.world.classes},
                          {"per_class", cfg.scenario.world.per_class},
                          {"latent_dim", cfg.scenario.world.latent_dim},
                          {"duplicate_rate", cfg.scenario.world.duplicate_rate}};
  {
    Json nodes = Json::object();
    for (const auto& [id, strat] : cfg.scenario.nodes) {
      Json n;
      n["role"] = node_role_name(strat.role);
      n["objective"] = objective_name(strat.objective);
      auto it = trace.excluded_fraction_by_node.find(id);
      n["excluded_fraction"] = it == trace.excluded_fraction_by_node.end() ? 0.0 : it->second;
      nodes[id] = std::move(n);
    }
    summary["nodes"] = std::move(nodes);
  }
  {
    double sum = 0;
    size_t cnt = 0;
    for (const auto& [id, frac] : trace.excluded_fraction_by_node) {
      sum += frac;
      ++cnt;
    }
    summary["mean_excluded_fraction"] = cnt ? sum / static_cast<double>(cnt) : 0.0;
  }
  summary["n_events"] = trace.ledger->events_since(0).size();
  summary["n_submissions"] = art.global_rows.size();
  summary["winning_model_cid"] = trace.winning_model_cid;
  {
    Json rewards = Json::array();
    for (const auto& [wallet, amount] : trace.rewards)
      rewards.push_back(Json{{"wallet", wallet}, {"amount", amount}});
    summary["rewards"] = std::move(rewards);
  }
  summary["ledger_digest"] = trace.ledger->log_digest();
  summary["trace_digest"] = trace.trace_digest();
  {
    std::map<std::string, std::string> submitter_of;
    for (const LedgerEvent& evn : trace.ledger->events_since(0))
      if (evn.kind == EventKind::ModelSubmitted)
        submitter_of[evn.payload.at("model_cid").get<std::string>()] = evn.sender;
    Json rows = Json::array();
    for (const ScoreRow& r : art.global_rows) {
      Json row = bundle_json(r.bundle);
      row["time"] = r.time;
      row["model_cid"] = r.model_cid;
      row["submitter"] = submitter_of[r.model_cid];
      rows.push_back(std::move(row));
    }
    summary["per_submission"] = std::move(rows);
  }
  {
    const size_t n = art.global_rows.size();
    const size_t take = std::min<size_t>(10, n);
    ScoreBundle acc;
    double nov = 0;
    for (size_t i = n - take; i < n; ++i) {
      const ScoreBundle& b = art.global_rows[i].bundle;
      acc.qn += b.qn;
      acc.fid += b.fid;
      acc.fld += b.fld;
      acc.authpct += b.authpct;
      acc.ct += b.ct;
      acc.v_a += b.v_a;
      acc.v_c += b.v_c;
      acc.r_c += b.r_c;
      nov += novelty_term(b);
    }
    const double d = take ? static_cast<double>(take) : 1.0;
    Json f;
    f["n"] = take;
    f["qn"] = acc.qn / d;
    f["qn_1e3"] = acc.qn / d / 1000.0;
    f["fid"] = acc.fid / d;
    f["fld"] = acc.fld / d;
    f["authpct"] = acc.authpct / d;
    f["ct"] = acc.ct / d;
    f["v_a"] = acc.v_a / d;
    f["v_c"] = acc.v_c / d;
    f["r_c"] = acc.r_c / d;
    f["novelty_term"] = nov / d;
    summary["final10"] = std::move(f);
  }
  art.summary = summary;

  fs::create_directories(out);
  trace.ledger->write_jsonl(out / "ledger.jsonl");
  {
    Json dig;
    dig["format_version"] = 1;
    dig["events"] = trace.ledger->events_since(0).size();
    dig["sha256_hex"] = trace.ledger->log_digest();
    write_text(out / "ledger.digest", dig.dump(2) + "\n");
  }
  trace.ledger->store().persist(out / "manifests");
  trace.keys.save(out / "keys.json");
  write_text(out / "scores.csv", scores_csv_text(trace.node_rows, art.global_rows));
  write_text(out / "summary.json", summary.dump(2) + "\n");
  return art;
}

namespace {

struct Needle {
  std::string sample_id;
  std::string encoding;
  std::string bytes;
};

std::vector<Needle> latent_needles(const WorldDataset& world) {
  std::vector<Needle> needles;
  for (const SampleRecord& rec : world.records) {
    if (rec.origin != Origin::Train) continue;
    std::string raw(static_cast<size_t>(rec.latent.values.size()) * sizeof(double), '\0');
    std::memcpy(raw.data(), rec.latent.values.data(), raw.size());
    needles.push_back({rec.id, "latent-raw", std::move(raw)});

    Json arr = Json::array();
    for (Eigen::Index i = 0; i < rec.latent.values.size(); ++i)
      arr.push_back(rec.latent.values[static_cast<int>(i)]);
    std::string text = arr.dump();
    // Trim the brackets so leaks inside longer arrays still match.
    needles.push_back({rec.id, "latent-json", text.substr(1, text.size() - 2)});
  }
  return needles;
}

std::uint64_t prefix_key(const char* p) {
  std::uint64_t k;
  std::memcpy(&k, p, sizeof(k));
  return k;
}

void scan_buffer(const std::string& name, const std::string& hay,
                 const std::vector<Needle>& needles,
                 const std::unordered_map<std::uint64_t, std::vector<size_t>>& by_prefix,
                 const std::vector<size_t>& short_needles, std::vector<PrivacyHit>& hits) {
  for (size_t idx : short_needles) {
    size_t pos = hay.find(needles[idx].bytes);
    if (pos != std::string::npos)
      hits.push_back({needles[idx].sample_id, needles[idx].encoding, name, pos});
  }
  if (hay.size() < sizeof(std::uint64_t)) return;
  for (size_t off = 0; off + sizeof(std::uint64_t) <= hay.size(); ++off) {
    auto it = by_prefix.find(prefix_key(hay.data() + off));
    if (it == by_prefix.end()) continue;
    for (size_t idx : it->second) {
      const std::string& n = needles[idx].bytes;
      if (off + n.size() <= hay.size() && std::memcmp(hay.data() + off, n.data(), n.size()) == 0)
        hits.push_back({needles[idx].sample_id, needles[idx].encoding, name, off});
    }
  }
}

std::string strip_whitespace(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s)
    if (c != ' ' && c != '\n' && c != '\t' && c != '\r') out.push_back(c);
  return out;
}

}  // namespace

EvalResult score_record_sets(const std::vector<SampleRecord>& train,
                             const std::vector<SampleRecord>& test,
                             const std::vector<SampleRecord>& generated,
                             const MetricsConfig& metrics, std::uint64_t seed,
                             const std::optional<VerifierWeights>& weights) {
  if (train.empty() || test.empty() || generated.empty())
    throw std::invalid_argument("score_record_sets: all three sets must be nonempty");
  const auto dim = train.front().latent.values.size();
  for (const auto* set : {&train, &test, &generated})
    for (const SampleRecord& r : *set)
      if (r.latent.values.size() != dim)
        throw std::invalid_argument("score_record_sets: latent dimension mismatch at '" + r.id +
                                    "'");

  Scenario sc;
  sc.world.latent_dim = static_cast<int>(dim);
  sc.fingerprint.latent_dim = static_cast<int>(dim);
  sc.metrics = metrics;

  ScenarioEvaluator ev = [&] {
    if (!weights) return make_scenario_evaluator(sc, seed);
    if (weights->feature_dim() != sc.fingerprint.feature_d)
      throw std::invalid_argument("score_record_sets: weights expect feature depth " +
                                  std::to_string(weights->feature_dim()) +
                                  ", fingerprinter has " +
                                  std::to_string(sc.fingerprint.feature_d));
    Fingerprinter fp(sc.fingerprint, derive_seed(seed, "fingerprint"));
    WindowSet ws = generate_windows(sc.fingerprint.feature_h, sc.fingerprint.feature_w,
                                    weights->window_count());
    return ScenarioEvaluator{std::move(fp), *weights, std::move(ws)};
  }();

  std::vector<const SampleRecord*> train_records;
  train_records.reserve(train.size());
  for (const SampleRecord& r : train) train_records.push_back(&r);
  EmbeddedSet train_set = embed_records(train_records, ev.fp);
  EmbeddedSet test_set = embed_records(test, ev.fp);
  ClassThresholds thresholds = intra_class_thresholds(train_set, metrics.population_stdev);
  double bandwidth =
      metrics.kde_bandwidth > 0 ? metrics.kde_bandwidth : scott_bandwidth(train_set.embeddings);
  std::map<int, PooledFeatures> train_pooled;

  EvalContext ctx{&ev.fp, &ev.weights, &ev.windows, &sc.metrics};
  EvalInputs in;
  in.train = &train_set;
  in.test = &test_set;
  in.thresholds = &thresholds;
  in.bandwidth = bandwidth;
  in.train_pooled = &train_pooled;
  in.train_records = &train_records;
  return evaluate_generated(generated, ctx, in);
}

VerifyReport verify_run(const std::filesystem::path& ledger_file,
                        const std::filesystem::path& store_dir,
                        const std::optional<std::filesystem::path>& digest_file,
                        const std::optional<std::filesystem::path>& keys_file,
                        const std::optional<std::string>& lineage_cid) {
  VerifyReport report;
  auto ok = [&](const std::string& what) { report.checks.push_back(what); };
  auto violation = [&](const std::string& what) {
    report.violations.push_back(what);
    report.ok = false;
  };

  std::vector<LedgerEvent> events = Ledger::read_jsonl(ledger_file);

  const fs::path digest_path = digest_file.value_or(ledger_file.parent_path() / "ledger.digest");
  {
    Json sidecar = Json::parse(read_text(digest_path));
    const auto expect = sidecar.at("sha256_hex").get<std::string>();
    const auto actual = Ledger::digest_of(events);
    if (actual != expect)
      violation("log digest mismatch: recomputed " + actual + ", recorded " + expect);
    else
      ok("log digest " + actual + " over " + std::to_string(events.size()) + " events");
    if (sidecar.contains("events") && sidecar.at("events").get<size_t>() != events.size())
      violation("event count mismatch: log has " + std::to_string(events.size()) + ", recorded " +
                std::to_string(sidecar.at("events").get<size_t>()));
  }

  ContractState state = fold_events(events);
  ok("state fold: " + std::to_string(state.models.size()) + " models, " +
     std::to_string(state.votes.size()) + " votes, " + std::to_string(state.rewards.size()) +
     " rewards");

  ContentStore store = ContentStore::load(store_dir);
  KeyRegistry keys = KeyRegistry::load(keys_file.value_or(ledger_file.parent_path() / "keys.json"));

  ManifestResolver resolver = [&](const std::string& cid) -> std::optional<std::string> {
    auto it = state.models.find(cid);
    if (it == state.models.end()) return std::nullopt;
    return it->second.manifest_cid;
  };

  std::vector<std::string> targets;
  if (lineage_cid) {
    targets.push_back(*lineage_cid);
  } else {
    for (const auto& [cid, info] : state.models) targets.push_back(cid);
  }
  for (const std::string& cid : targets) {
    try {
      auto lineage = validate_lineage(cid, store, resolver, keys);
      ok("lineage " + cid + " (" + std::to_string(lineage.size()) + " links)");
    } catch (const LineageError& e) {
      violation("lineage " + cid + ": " + e.what() + " (cid " + e.offending_cid + ")");
    }
  }
  return report;
}

std::vector<PrivacyHit> privacy_scan(
    const WorldDataset& world,
    const std::vector<std::pair<std::string, std::string>>& haystacks) {
  std::vector<Needle> needles = latent_needles(world);
  std::unordered_map<std::uint64_t, std::vector<size_t>> by_prefix;
  std::vector<size_t> short_needles;
  for (size_t i = 0; i < needles.size(); ++i) {
    if (needles[i].bytes.size() < sizeof(std::uint64_t))
      short_needles.push_back(i);
    else
      by_prefix[prefix_key(needles[i].bytes.data())].push_back(i);
  }

  std::vector<PrivacyHit> hits;
  for (const auto& [name, hay] : haystacks) {
    scan_buffer(name, hay, needles, by_prefix, short_needles, hits);
    // Pretty-printed JSON inserts whitespace between array elements, which
    // would hide a leaked array from the compact-text needles.
    std::string stripped = strip_whitespace(hay);
    if (stripped.size() != hay.size())
      scan_buffer(name + " (whitespace stripped)", stripped, needles, by_prefix, short_needles,
                  hits);
  }
  return hits;
}

std::vector<PrivacyHit> privacy_scan_dir(const WorldDataset& world,
                                         const std::filesystem::path& out_dir) {
  std::vector<std::pair<std::string, std::string>> haystacks;
  for (const char* f : {"ledger.jsonl", "scores.csv", "summary.json", "keys.json",
                        "ledger.digest"}) {
    fs::path p = out_dir / f;
    if (fs::exists(p)) haystacks.emplace_back(f, read_text(p));
  }
  fs::path blobs = out_dir / "manifests";
  if (fs::exists(blobs))
    for (const auto& entry : fs::directory_iterator(blobs))
      if (entry.is_regular_file())
        haystacks.emplace_back("manifests/" + entry.path().filename().string(),
                               read_text(entry.path()));
  return privacy_scan(world, haystacks);
}

}  // namespace fedtrace
