#include "fedtrace/simnet.hpp"

#include <algorithm>
#include <cstring>
#include <queue>
#include <sstream>

#include "fedtrace/crypto.hpp"
#include "fedtrace/rng.hpp"

namespace fedtrace {

const SampleRecord& WorldDataset::by_id(const std::string& id) const {
  auto it = index_by_id.find(id);
  if (it == index_by_id.end()) throw NotFoundError("world: unknown sample id " + id);
  return records[static_cast<size_t>(it->second)];
}

std::vector<const SampleRecord*> WorldDataset::resolve(const std::vector<std::string>& ids) const {
  std::vector<const SampleRecord*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(&by_id(id));
  return out;
}

std::vector<const SampleRecord*> WorldDataset::train_of(const std::string& node) const {
  auto it = node_splits.find(node);
  if (it == node_splits.end()) throw NotFoundError("world: unknown node " + node);
  return resolve(it->second.train_ids);
}

std::vector<const SampleRecord*> WorldDataset::test_of(const std::string& node) const {
  auto it = node_splits.find(node);
  if (it == node_splits.end()) throw NotFoundError("world: unknown node " + node);
  return resolve(it->second.test_ids);
}

std::vector<const SampleRecord*> WorldDataset::all_train() const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : records)
    if (r.origin == Origin::Train) out.push_back(&r);
  return out;
}

std::vector<const SampleRecord*> WorldDataset::all_test() const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : records)
    if (r.origin == Origin::Test) out.push_back(&r);
  return out;
}

WorldDataset generate_world(const WorldConfig& cfg, std::uint64_t seed) {
  if (cfg.classes < 2) throw std::invalid_argument("generate_world: need at least 2 classes");
  if (cfg.per_class < 4) throw std::invalid_argument("generate_world: need per_class >= 4");
  if (cfg.latent_dim < 1) throw std::invalid_argument("generate_world: latent_dim must be >= 1");
  if (cfg.duplicate_rate < 0 || cfg.duplicate_rate >= 1)
    throw std::invalid_argument("generate_world: duplicate_rate must be in [0,1)");
  if (cfg.node_ids.empty()) throw std::invalid_argument("generate_world: need at least one node");
  {
    std::set<std::string> uniq(cfg.node_ids.begin(), cfg.node_ids.end());
    if (uniq.size() != cfg.node_ids.size())
      throw std::invalid_argument("generate_world: duplicate node ids");
  }
  const int n_nodes = static_cast<int>(cfg.node_ids.size());
  if (cfg.per_class % (2 * n_nodes) != 0) {
    std::ostringstream msg;
    msg << "generate_world: per_class " << cfg.per_class << " cannot be split evenly into "
        << n_nodes << " node(s) x {train,test}; need per_class % " << (2 * n_nodes) << " == 0";
    throw std::invalid_argument(msg.str());
  }

  WorldDataset world;
  world.cfg = cfg;
  world.seed = seed;

  auto ceng = make_engine(seed, "world.centers");
  for (int c = 0; c < cfg.classes; ++c)
    world.class_centers.push_back(gaussian_vec(ceng, cfg.latent_dim) * cfg.center_scale);

  const int share = cfg.per_class / n_nodes;  // per node per class, half train half test
  for (auto& node : cfg.node_ids) world.node_splits[node];  // materialize in id order

  for (int c = 0; c < cfg.classes; ++c) {
    auto seng = make_engine(seed, "world.samples", static_cast<std::uint64_t>(c));
    std::vector<int> order(cfg.per_class);
    for (int i = 0; i < cfg.per_class; ++i) order[i] = i;
    auto aeng = make_engine(seed, "world.assign", static_cast<std::uint64_t>(c));
    std::shuffle(order.begin(), order.end(), aeng);

    std::vector<SampleRecord> class_records(cfg.per_class);
    for (int i = 0; i < cfg.per_class; ++i) {
      SampleRecord r;
      std::ostringstream id;
      id << "s" << c << "_" << i;
      r.id = id.str();
      r.latent.values = world.class_centers[static_cast<size_t>(c)] +
                        gaussian_vec(seng, cfg.latent_dim) * cfg.offset_scale;
      r.latent.class_id = c;
      r.aug_seed = derive_seed(seed, "world.aug", static_cast<std::uint64_t>(c) * 1000003u +
                                                      static_cast<std::uint64_t>(i));
      class_records[static_cast<size_t>(i)] = std::move(r);
    }

    int cursor = 0;
    for (int n = 0; n < n_nodes; ++n) {
      const std::string& node = cfg.node_ids[static_cast<size_t>(n)];
      for (int k = 0; k < share; ++k) {
        SampleRecord& r = class_records[static_cast<size_t>(order[static_cast<size_t>(cursor++)])];
        r.owner = node;
        if (k < share / 2) {
          r.origin = Origin::Train;
          world.node_splits[node].train_ids.push_back(r.id);
        } else {
          r.origin = Origin::Test;
          world.node_splits[node].test_ids.push_back(r.id);
        }
      }
    }
    for (auto& r : class_records) world.records.push_back(std::move(r));
  }

  for (int i = 0; i < static_cast<int>(world.records.size()); ++i)
    world.index_by_id[world.records[static_cast<size_t>(i)].id] = i;

  // Duplicate injection: a seeded subset of training records get their
  // latents overwritten with another same-class training latent.
  if (cfg.duplicate_rate > 0) {
    std::vector<int> train_idx;
    for (int i = 0; i < static_cast<int>(world.records.size()); ++i)
      if (world.records[static_cast<size_t>(i)].origin == Origin::Train) train_idx.push_back(i);
    const int n_dup = static_cast<int>(cfg.duplicate_rate *
                                       static_cast<double>(train_idx.size()));
    auto deng = make_engine(seed, "world.duplicates");
    std::vector<int> shuffled = train_idx;
    std::shuffle(shuffled.begin(), shuffled.end(), deng);
    std::set<int> targets(shuffled.begin(), shuffled.begin() + n_dup);

    std::map<int, std::vector<int>> sources_by_class;
    for (int i : train_idx)
      if (!targets.count(i))
        sources_by_class[world.records[static_cast<size_t>(i)].latent.class_id].push_back(i);

    for (int t : targets) {
      SampleRecord& rec = world.records[static_cast<size_t>(t)];
      auto& pool = sources_by_class[rec.latent.class_id];
      if (pool.empty()) continue;  // whole class marked as targets; leave as-is
      std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
      const SampleRecord& src = world.records[static_cast<size_t>(pool[pick(deng)])];
      rec.latent.values = src.latent.values;
      rec.is_duplicate = true;
      rec.duplicate_of = src.id;
    }
  }
  return world;
}

std::string ToyModel::serialize() const {
  std::ostringstream os(std::ios::binary);
  os << "fedtrace-toymodel 1\n";
  os << classes << ' ' << prototypes_per_class << ' ' << latent_dim << ' ' << trained_epochs
     << '\n';
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%a", noise_sigma);
  os << buf << '\n';
  for (Eigen::Index r = 0; r < prototypes.rows(); ++r)
    for (Eigen::Index c = 0; c < prototypes.cols(); ++c) {
      double v = prototypes(r, c);
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      os.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
  return os.str();
}

ToyModel ToyModel::deserialize(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "fedtrace-toymodel" || version != 1)
    throw std::runtime_error("toy model: unrecognized header");
  ToyModel m;
  std::string sigma_tok;
  if (!(is >> m.classes >> m.prototypes_per_class >> m.latent_dim >> m.trained_epochs >>
        sigma_tok))
    throw std::runtime_error("toy model: truncated header");
  m.noise_sigma = std::strtod(sigma_tok.c_str(), nullptr);
  if (m.classes < 1 || m.prototypes_per_class < 1 || m.latent_dim < 1)
    throw std::runtime_error("toy model: bad dimensions");
  is.get();  // newline before the raw block
  const Eigen::Index rows = static_cast<Eigen::Index>(m.classes) * m.prototypes_per_class;
  m.prototypes = Mat(rows, m.latent_dim);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < m.latent_dim; ++c) {
      std::uint64_t bits = 0;
      if (!is.read(reinterpret_cast<char*>(&bits), sizeof(bits)))
        throw std::runtime_error("toy model: truncated prototype block");
      double v;
      std::memcpy(&v, &bits, sizeof(v));
      m.prototypes(r, c) = v;
    }
  return m;
}

ToyModel init_toy_model(const std::vector<const SampleRecord*>& train, const ToyModelConfig& cfg,
                        int classes, int latent_dim, std::uint64_t seed) {
  if (classes < 1 || latent_dim < 1)
    throw std::invalid_argument("init_toy_model: bad dimensions");
  ToyModel m;
  m.classes = classes;
  m.prototypes_per_class = cfg.prototypes_per_class;
  m.latent_dim = latent_dim;
  m.noise_sigma = cfg.noise_sigma;
  m.prototypes = Mat(static_cast<Eigen::Index>(classes) * cfg.prototypes_per_class, latent_dim);

  // Class means of the local training split; spread keeps the start point
  // away from any individual latent.
  std::vector<Vec> means(static_cast<size_t>(classes), Vec::Zero(latent_dim));
  std::vector<int> counts(static_cast<size_t>(classes), 0);
  for (const SampleRecord* r : train) {
    const int c = r->latent.class_id;
    if (c < 0 || c >= classes) throw std::invalid_argument("init_toy_model: class out of range");
    means[static_cast<size_t>(c)] += r->latent.values;
    counts[static_cast<size_t>(c)] += 1;
  }
  auto eng = make_engine(seed, "toymodel.init");
  for (int c = 0; c < classes; ++c) {
    Vec base = counts[static_cast<size_t>(c)] > 0
                   ? Vec(means[static_cast<size_t>(c)] / counts[static_cast<size_t>(c)])
                   : Vec(Vec::Zero(latent_dim));
    for (int p = 0; p < cfg.prototypes_per_class; ++p)
      m.prototypes.row(static_cast<Eigen::Index>(c) * cfg.prototypes_per_class + p) =
          (base + gaussian_vec(eng, latent_dim) * cfg.init_spread).transpose();
  }
  return m;
}

void train_epochs(ToyModel& model, const std::vector<const SampleRecord*>& train,
                  const std::set<std::string>& excluded_ids, int epochs, double learning_rate,
                  std::uint64_t seed) {
  if (epochs < 1) throw std::invalid_argument("train_epochs: epochs must be >= 1");
  if (learning_rate <= 0 || learning_rate > 1)
    throw std::invalid_argument("train_epochs: learning rate must be in (0,1]");

  std::vector<const SampleRecord*> active;
  for (const SampleRecord* r : train)
    if (!excluded_ids.count(r->id)) active.push_back(r);
  if (active.empty()) {
    model.trained_epochs += epochs;
    return;
  }

  const int m = model.prototypes_per_class;
  for (int e = 0; e < epochs; ++e) {
    auto eng = make_engine(seed, "toymodel.epoch",
                           static_cast<std::uint64_t>(model.trained_epochs) + 1);
    std::vector<size_t> order(active.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), eng);

    for (size_t oi : order) {
      const SampleRecord* r = active[oi];
      const int c = r->latent.class_id;
      if (c < 0 || c >= model.classes) continue;
      const Eigen::Index base = static_cast<Eigen::Index>(c) * m;
      Eigen::Index best = base;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index p = base; p < base + m; ++p) {
        double d = (model.prototypes.row(p).transpose() - r->latent.values).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = p;
        }
      }
      model.prototypes.row(best) +=
          learning_rate * (r->latent.values.transpose() - model.prototypes.row(best));
    }
    model.trained_epochs += 1;
  }
}

std::vector<SampleRecord> generate_samples(const ToyModel& model, int n, std::uint64_t seed,
                                           const std::string& id_prefix,
                                           const std::string& owner) {
  if (n < model.classes)
    throw std::invalid_argument("generate_samples: n must be >= number of classes");
  auto eng = make_engine(seed, "toymodel.generate");
  std::uniform_int_distribution<int> pick(0, model.prototypes_per_class - 1);

  std::vector<SampleRecord> out;
  out.reserve(static_cast<size_t>(n));
  const int base_quota = n / model.classes;
  const int extra = n % model.classes;
  int idx = 0;
  for (int c = 0; c < model.classes; ++c) {
    const int quota = base_quota + (c < extra ? 1 : 0);
    for (int i = 0; i < quota; ++i) {
      SampleRecord r;
      std::ostringstream id;
      id << id_prefix << "_g" << idx++;
      r.id = id.str();
      const Eigen::Index p = static_cast<Eigen::Index>(c) * model.prototypes_per_class + pick(eng);
      r.latent.values =
          model.prototypes.row(p).transpose() + gaussian_vec(eng, model.latent_dim) * model.noise_sigma;
      r.latent.class_id = c;
      r.origin = Origin::Generated;
      r.owner = owner;
      out.push_back(std::move(r));
    }
  }
  return out;
}

EvalResult evaluate_generated(const std::vector<SampleRecord>& generated,
                              const EvalContext& ctx, const EvalInputs& in) {
  if (generated.empty()) throw std::invalid_argument("evaluate_generated: empty batch");

  EmbeddedSet gen_set = embed_records(generated, *ctx.fp);
  std::vector<CandidatePair> candidates =
      knn_candidates(gen_set, *in.train, *in.thresholds, ctx.metrics->knn_k);

  // Pooled features: cache train rows across evaluations, generated rows
  // only within this one.
  std::map<int, PooledFeatures> gen_pooled;
  auto pooled_train = [&](int row) -> const PooledFeatures& {
    auto it = in.train_pooled->find(row);
    if (it == in.train_pooled->end()) {
      const SampleRecord* rec = (*in.train_records)[static_cast<size_t>(row)];
      it = in.train_pooled
               ->emplace(row, pool_features(ctx.fp->feature_map(rec->latent), *ctx.weights,
                                            *ctx.windows))
               .first;
    }
    return it->second;
  };
  auto pooled_gen = [&](int row) -> const PooledFeatures& {
    auto it = gen_pooled.find(row);
    if (it == gen_pooled.end()) {
      it = gen_pooled
               .emplace(row, pool_features(ctx.fp->feature_map(
                                               generated[static_cast<size_t>(row)].latent),
                                           *ctx.weights, *ctx.windows))
               .first;
    }
    return it->second;
  };

  PairScorer scorer = [&](const CandidatePair& pair) {
    return verify_pair(pooled_gen(pair.generated_index), pooled_train(pair.train_index),
                       *ctx.weights);
  };

  MemorizationReport report =
      confirm_matches(candidates, scorer, ctx.metrics->confirm_threshold);
  aggregate_report(report, gen_set.size());

  EvalResult result;
  result.bundle.v_a = report.v_a;
  result.bundle.v_c = report.v_c;
  result.bundle.r_c = report.r_c;
  result.bundle.fid = fid(gen_set.embeddings, in.test->embeddings);
  result.bundle.qn = qn_score(result.bundle.fid, report.v_c, report.v_a, report.r_c);
  result.bundle.fld =
      fld_lite(in.train->embeddings, in.test->embeddings, gen_set.embeddings, in.bandwidth);
  result.bundle.authpct = authpct(in.train->embeddings, gen_set.embeddings);
  result.bundle.ct = ct_score(in.train->embeddings, in.test->embeddings, gen_set.embeddings,
                              ctx.metrics->k_cells);
  result.report = std::move(report);
  return result;
}

namespace {

double objective_value(Objective obj, const ScoreBundle& b) {
  switch (obj) {
    case Objective::FldFid: return blended_fld_fid(b.fid, b.fld);
    case Objective::Qn:
    case Objective::QnDedup: return b.qn;
  }
  throw std::logic_error("bad objective");
}

struct CandidateModel {
  std::string cid;
  std::uint64_t seq = 0;
  std::string submitter;
};

class NodeAgent {
 public:
  NodeAgent(std::string id, NodeStrategy strategy, const WorldDataset& world,
            const Fingerprinter& fp, const VerifierWeights& weights, const WindowSet& windows,
            const MetricsConfig& metrics, const ToyModelConfig& toy_cfg, std::uint64_t seed)
      : id_(std::move(id)),
        strategy_(strategy),
        world_(world),
        fp_(fp),
        weights_(weights),
        windows_(windows),
        metrics_(metrics),
        toy_cfg_(toy_cfg),
        seed_(derive_seed(seed, "node." + id)),
        wallet_(wallet_address_of(id_, seed)),
        key_(KeyRegistry::derive_key(id_, seed)) {
    train_records_ = world_.train_of(id_);
    test_records_ = world_.test_of(id_);
    train_set_ = embed_records(train_records_, fp_);
    test_set_ = embed_records(test_records_, fp_);
    thresholds_ = intra_class_thresholds(train_set_, metrics_.population_stdev);
    bandwidth_ = metrics_.kde_bandwidth > 0 ? metrics_.kde_bandwidth
                                            : scott_bandwidth(train_set_.embeddings);
  }

  const std::string& id() const { return id_; }
  const std::string& wallet() const { return wallet_; }
  const std::string& key() const { return key_; }
  const NodeStrategy& strategy() const { return strategy_; }
  double excluded_fraction() const {
    return train_records_.empty()
               ? 0.0
               : static_cast<double>(exclusion_union_.size()) /
                     static_cast<double>(train_records_.size());
  }
  const std::set<std::string>& excluded_ids() const { return exclusion_union_; }

  // One atomic wake. Returns the number of accepted model submissions.
  int step(Ledger& ledger, SimTime now, std::vector<ScoreRow>& rows) {
    if (!registered_) {
      ledger.register_node(id_, strategy_.role, now);
      registered_ = true;
    }

    for (const LedgerEvent& ev : ledger.events_since(cursor_)) {
      ++cursor_;
      if (ev.kind != EventKind::ModelSubmitted) continue;
      CandidateModel c;
      c.cid = ev.payload.at("model_cid").get<std::string>();
      c.seq = ev.seq;
      c.submitter = ev.sender;
      catalog_.push_back(std::move(c));
    }

    for (const CandidateModel& c : catalog_)
      if (!own_scores_.count(c.cid)) evaluate(c.cid, ledger, now, rows);

    std::optional<std::string> winner = select_winner(ledger);

    if (strategy_.role == NodeRole::Validator) {
      if (winner) ledger.submit_vote(id_, *winner, now);
      return 0;
    }

    ToyModel model;
    std::string parent_cid;
    if (winner) {
      model = ToyModel::deserialize(ledger.store().get(*winner));
      parent_cid = *winner;
    } else {
      model = init_toy_model(train_records_, toy_cfg_, world_.cfg.classes, world_.cfg.latent_dim,
                             derive_seed(seed_, "init", round_));
    }

    const std::set<std::string> no_exclusions;
    const std::set<std::string>& excluded =
        strategy_.objective == Objective::QnDedup ? exclusion_union_ : no_exclusions;
    train_epochs(model, train_records_, excluded, strategy_.epochs_per_round,
                 toy_cfg_.learning_rate, derive_seed(seed_, "train", round_));

    std::string model_cid = ledger.store().put(model.serialize());
    std::string digest_cid = ledger.store().put(data_summary_json());

    TrainingAssertion assertion;
    assertion.author = id_;
    assertion.epochs = strategy_.epochs_per_round;
    assertion.data_digest = digest_cid;
    assertion.objective = strategy_.objective;
    assertion.timestamp = now;

    const ContentStore& store = ledger.store();
    ManifestResolver resolver = [&ledger](const std::string& cid) -> std::optional<std::string> {
      auto it = ledger.state().models.find(cid);
      if (it == ledger.state().models.end()) return std::nullopt;
      return it->second.manifest_cid;
    };
    Manifest manifest;
    if (!parent_cid.empty()) {
      manifest = build_manifest(model_cid, parent_cid, assertion, wallet_, id_, key_, store,
                                resolver);
    } else {
      manifest = build_manifest(model_cid, "", assertion, wallet_, id_, key_, store, resolver);
    }
    std::string manifest_cid = ledger.store().put(manifest.serialize());

    SubmitOutcome outcome =
        ledger.submit_model(id_, model_cid, manifest_cid, parent_cid, submission_meta(), now);

    if (winner) ledger.submit_vote(id_, *winner, now);
    ++round_;
    return outcome.accepted ? 1 : 0;
  }

 private:
  Json submission_meta() const {
    return Json{{"objective", objective_name(strategy_.objective)},
                {"epochs", strategy_.epochs_per_round}};
  }

  std::string data_summary_json() const {
    std::map<std::string, int> class_counts;
    std::string id_concat;
    for (const SampleRecord* r : train_records_) {
      class_counts[std::to_string(r->latent.class_id)] += 1;
      id_concat += r->id;
      id_concat += '\n';
    }
    Json j{{"format_version", 1},
           {"node", id_},
           {"n_train", train_records_.size()},
           {"class_counts", class_counts},
           {"salted_id_digest", sha256_hex("fedtrace-data|" + id_ + "|" + id_concat)}};
    return j.dump();
  }

  void evaluate(const std::string& cid, Ledger& ledger, SimTime now,
                std::vector<ScoreRow>& rows) {
    ToyModel model = ToyModel::deserialize(ledger.store().get(cid));
    std::vector<SampleRecord> generated =
        generate_samples(model, strategy_.samples_per_eval,
                         derive_seed(seed_, "eval." + cid), id_ + "/" + cid.substr(0, 8), id_);

    EvalContext ctx{&fp_, &weights_, &windows_, &metrics_};
    EvalInputs in;
    in.train = &train_set_;
    in.test = &test_set_;
    in.thresholds = &thresholds_;
    in.bandwidth = bandwidth_;
    in.train_pooled = &train_pooled_;
    in.train_records = &train_records_;

    EvalResult result = evaluate_generated(generated, ctx, in);
    own_scores_[cid] = objective_value(strategy_.objective, result.bundle);

    if (strategy_.objective == Objective::QnDedup) {
      for (const auto& [train_id, count] : result.report.per_train_counts)
        cumulative_counts_[train_id] += count;
      // Ratchet semantics: once excluded, always excluded, so the set only grows.
      std::set<std::string> current =
          exclusion_set(cumulative_counts_, metrics_.exclusion_percentile);
      exclusion_union_.insert(current.begin(), current.end());
    }

    rows.push_back(ScoreRow{now, id_, cid, result.bundle});
  }

  std::optional<std::string> select_winner(const Ledger& ledger) {
    if (catalog_.empty()) return std::nullopt;

    double own_min = std::numeric_limits<double>::infinity();
    double own_max = -std::numeric_limits<double>::infinity();
    std::vector<double> own(catalog_.size()), votes(catalog_.size());
    double vote_min = std::numeric_limits<double>::infinity();
    double vote_max = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < catalog_.size(); ++i) {
      own[i] = own_scores_.at(catalog_[i].cid);
      own_min = std::min(own_min, own[i]);
      own_max = std::max(own_max, own[i]);
      votes[i] = static_cast<double>(
          ledger.tally_votes(catalog_[i].cid, strategy_.vote_source_filter));
      vote_min = std::min(vote_min, votes[i]);
      vote_max = std::max(vote_max, votes[i]);
    }
    auto norm = [](double v, double lo, double hi) {
      return hi > lo ? (v - lo) / (hi - lo) : 0.0;
    };

    size_t best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < catalog_.size(); ++i) {
      double s = strategy_.vote_blend_alpha * norm(own[i], own_min, own_max) +
                 (1.0 - strategy_.vote_blend_alpha) * (1.0 - norm(votes[i], vote_min, vote_max));
      bool better = s < best_score ||
                    (s == best_score && catalog_[i].seq < catalog_[best].seq);
      if (better) {
        best_score = s;
        best = i;
      }
    }
    return catalog_[best].cid;
  }

  std::string id_;
  NodeStrategy strategy_;
  const WorldDataset& world_;
  const Fingerprinter& fp_;
  const VerifierWeights& weights_;
  const WindowSet& windows_;
  const MetricsConfig& metrics_;
  ToyModelConfig toy_cfg_;
  std::uint64_t seed_;
  std::string wallet_;
  std::string key_;

  std::vector<const SampleRecord*> train_records_, test_records_;
  EmbeddedSet train_set_, test_set_;
  ClassThresholds thresholds_;
  double bandwidth_ = 0;
  std::map<int, PooledFeatures> train_pooled_;

  bool registered_ = false;
  std::uint64_t cursor_ = 0;
  std::uint64_t round_ = 0;
  std::vector<CandidateModel> catalog_;
  std::map<std::string, double> own_scores_;
  std::map<std::string, int> cumulative_counts_;
  std::set<std::string> exclusion_union_;
};

}  // namespace

std::string ExperimentTrace::trace_digest() const {
  std::ostringstream os;
  os << ledger->log_digest() << '\n';
  os.precision(17);
  for (const ScoreRow& r : node_rows)
    os << r.time << ',' << r.node_id << ',' << r.model_cid << ',' << r.bundle.qn << ','
       << r.bundle.fid << ',' << r.bundle.fld << ',' << r.bundle.authpct << ',' << r.bundle.ct
       << ',' << r.bundle.v_a << ',' << r.bundle.v_c << ',' << r.bundle.r_c << '\n';
  return sha256_hex(os.str());
}

ScenarioEvaluator make_scenario_evaluator(const Scenario& scenario, std::uint64_t seed) {
  FingerprintConfig fp_cfg = scenario.fingerprint;
  fp_cfg.latent_dim = scenario.world.latent_dim;
  Fingerprinter fp(fp_cfg, derive_seed(seed, "fingerprint"));
  CalibrationConfig cc;
  cc.window_target = scenario.metrics.window_target;
  cc.gem_p = scenario.metrics.gem_p;
  cc.center_scale = scenario.world.center_scale;
  cc.offset_scale = scenario.world.offset_scale;
  cc.near_dup_noise =
      std::max(0.45, 2.0 * scenario.model.noise_sigma *
                         std::sqrt(static_cast<double>(scenario.world.latent_dim)));
  VerifierWeights weights = calibrate_default_weights(derive_seed(seed, "verifier"), fp, cc);
  WindowSet windows = generate_windows(scenario.fingerprint.feature_h,
                                       scenario.fingerprint.feature_w,
                                       scenario.metrics.window_target);
  return ScenarioEvaluator{std::move(fp), std::move(weights), std::move(windows)};
}

ExperimentTrace run_schedule(const Scenario& scenario, std::uint64_t seed) {
  if (scenario.nodes.empty()) throw std::invalid_argument("run_schedule: no nodes configured");
  if (scenario.stop_after_submissions < 1)
    throw std::invalid_argument("run_schedule: stop_after_submissions must be >= 1");
  for (const auto& [id, strat] : scenario.nodes) {
    if (strat.vote_blend_alpha < 0 || strat.vote_blend_alpha > 1)
      throw std::invalid_argument("run_schedule: vote_blend_alpha out of [0,1] for node " + id);
    if (strat.role == NodeRole::Trainer && strat.epochs_per_round < 1)
      throw std::invalid_argument("run_schedule: trainer needs epochs_per_round >= 1: " + id);
    if (strat.samples_per_eval < scenario.world.classes)
      throw std::invalid_argument("run_schedule: samples_per_eval below class count for " + id);
    if (strat.wake_interval_ms < 1)
      throw std::invalid_argument("run_schedule: wake_interval_ms must be >= 1 for " + id);
    if (strat.wake_jitter_frac < 0 || strat.wake_jitter_frac >= 1)
      throw std::invalid_argument("run_schedule: wake_jitter_frac out of [0,1) for " + id);
  }
  {
    bool any_trainer = false;
    for (const auto& [id, strat] : scenario.nodes)
      any_trainer |= strat.role == NodeRole::Trainer;
    if (!any_trainer) throw std::invalid_argument("run_schedule: at least one trainer required");
  }

  WorldConfig world_cfg = scenario.world;
  world_cfg.node_ids.clear();
  for (const auto& [id, strat] : scenario.nodes) world_cfg.node_ids.push_back(id);

  ExperimentTrace trace;
  trace.world = generate_world(world_cfg, seed);

  trace.evaluator = std::make_unique<ScenarioEvaluator>(make_scenario_evaluator(scenario, seed));
  const Fingerprinter& fp = trace.evaluator->fp;
  const VerifierWeights& weights = trace.evaluator->weights;
  const WindowSet& windows = trace.evaluator->windows;

  LedgerConfig ledger_cfg = scenario.protocol;
  ledger_cfg.seed = derive_seed(seed, "ledger");
  trace.ledger = std::make_unique<Ledger>(ledger_cfg);

  std::vector<std::unique_ptr<NodeAgent>> agents;
  for (const auto& [id, strat] : scenario.nodes) {
    agents.push_back(std::make_unique<NodeAgent>(id, strat, trace.world, fp, weights, windows,
                                                 scenario.metrics, scenario.model, seed));
    trace.keys.add(id, agents.back()->key());
  }

  struct Wake {
    SimTime time;
    size_t agent;
    std::string node_id;
    bool operator>(const Wake& o) const {
      if (time != o.time) return time > o.time;
      return node_id > o.node_id;
    }
  };
  std::priority_queue<Wake, std::vector<Wake>, std::greater<Wake>> queue;
  std::vector<std::uint64_t> wake_counts(agents.size(), 0);

  for (size_t i = 0; i < agents.size(); ++i) {
    SimTime start = std::max<SimTime>(agents[i]->strategy().join_at_ms, 0);
    queue.push(Wake{start, i, agents[i]->id()});
  }

  int submissions = 0;
  while (!queue.empty()) {
    Wake wake = queue.top();
    queue.pop();
    if (wake.time > scenario.max_sim_ms) break;

    NodeAgent& agent = *agents[wake.agent];
    const NodeStrategy& strat = agent.strategy();
    if (strat.leave_at_ms && wake.time >= *strat.leave_at_ms) continue;

    trace.ledger->confirm_until(wake.time);
    submissions += agent.step(*trace.ledger, wake.time, trace.node_rows);
    if (submissions >= scenario.stop_after_submissions) break;

    std::uint64_t count = ++wake_counts[wake.agent];
    auto eng = make_engine(derive_seed(seed, "wake." + agent.id()), "jitter", count);
    std::uniform_real_distribution<double> jitter(-strat.wake_jitter_frac,
                                                  strat.wake_jitter_frac);
    SimTime interval = std::max<SimTime>(
        1, static_cast<SimTime>(std::llround(static_cast<double>(strat.wake_interval_ms) *
                                             (1.0 + jitter(eng)))));
    queue.push(Wake{wake.time + interval, wake.agent, agent.id()});
  }

  trace.ledger->confirm_all();

  for (const auto& agent : agents) {
    trace.excluded_fraction_by_node[agent->id()] = agent->excluded_fraction();
    trace.excluded_ids_by_node[agent->id()] = agent->excluded_ids();
  }

  // Winner = most-voted confirmed model; rewards flow along its lineage.
  const ContractState& state = trace.ledger->state();
  if (!state.models.empty() && scenario.reward_pool > 0) {
    std::string best;
    int best_votes = -1;
    std::uint64_t best_seq = 0;
    for (const auto& [cid, info] : state.models) {
      int v = trace.ledger->tally_votes(cid, VoterFilter::All);
      if (v > best_votes || (v == best_votes && info.seq < best_seq)) {
        best = cid;
        best_votes = v;
        best_seq = info.seq;
      }
    }
    trace.winning_model_cid = best;

    ManifestResolver resolver = [&state](const std::string& cid) -> std::optional<std::string> {
      auto it = state.models.find(cid);
      if (it == state.models.end()) return std::nullopt;
      return it->second.manifest_cid;
    };
    std::vector<LineageEntry> lineage =
        validate_lineage(best, trace.ledger->store(), resolver, trace.keys);
    trace.rewards = apportion_rewards(lineage, scenario.reward_pool);
    SimTime pay_time = trace.ledger->events().empty()
                           ? 0
                           : trace.ledger->events().back().confirmed_at;
    for (const auto& [wallet, amount] : trace.rewards)
      trace.ledger->record_reward(wallet, amount, best, pay_time);
    trace.ledger->confirm_all();
  }
  return trace;
}

}  // namespace fedtrace
