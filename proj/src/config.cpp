#include "fedtrace/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace fedtrace {

namespace {

[[noreturn]] void fail(const std::string& origin, const std::string& path,
                       const std::string& what) {
  std::ostringstream msg;
  msg << origin << ": " << (path.empty() ? "(root)" : path) << ": " << what;
  throw ConfigError(msg.str());
}

void expect_keys(const Json& obj, const std::string& origin, const std::string& path,
                 const std::set<std::string>& allowed) {
  if (!obj.is_object()) fail(origin, path, "expected an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) fail(origin, path.empty() ? key : path + "." + key, "unknown key");
}

template <typename T>
T get_field(const Json& obj, const std::string& origin, const std::string& path,
            const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception& e) {
    fail(origin, path + "." + key, std::string("bad value: ") + e.what());
  }
}

template <typename T>
T require_field(const Json& obj, const std::string& origin, const std::string& path,
                const std::string& key) {
  if (!obj.contains(key)) fail(origin, path + "." + key, "required key missing");
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception& e) {
    fail(origin, path + "." + key, std::string("bad value: ") + e.what());
  }
}

std::pair<size_t, size_t> line_of_offset(const std::string& text, size_t byte) {
  size_t line = 1, col = 1;
  for (size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    auto [line, col] = line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0);
    std::ostringstream msg;
    msg << origin << ":" << line << ":" << col << ": " << e.what();
    throw ConfigError(msg.str());
  }

  ExperimentConfig cfg;
  expect_keys(j, origin, "",
              {"format_version", "world", "fingerprint", "model", "metrics", "protocol", "run",
               "nodes", "output"});

  int version = require_field<int>(j, origin, "", "format_version");
  if (version != 1) fail(origin, "format_version", "unsupported version (expected 1)");

  if (j.contains("world")) {
    const Json& w = j.at("world");
    expect_keys(w, origin, "world",
                {"classes", "per_class", "latent_dim", "duplicate_rate", "center_scale",
                 "offset_scale"});
    WorldConfig& wc = cfg.scenario.world;
    wc.classes = get_field<int>(w, origin, "world", "classes", wc.classes);
    wc.per_class = get_field<int>(w, origin, "world", "per_class", wc.per_class);
    wc.latent_dim = get_field<int>(w, origin, "world", "latent_dim", wc.latent_dim);
    wc.duplicate_rate = get_field<double>(w, origin, "world", "duplicate_rate", wc.duplicate_rate);
    wc.center_scale = get_field<double>(w, origin, "world", "center_scale", wc.center_scale);
    wc.offset_scale = get_field<double>(w, origin, "world", "offset_scale", wc.offset_scale);
    if (wc.classes < 2) fail(origin, "world.classes", "must be >= 2");
    if (wc.per_class < 4) fail(origin, "world.per_class", "must be >= 4");
    if (wc.latent_dim < 1) fail(origin, "world.latent_dim", "must be >= 1");
    if (wc.duplicate_rate < 0 || wc.duplicate_rate >= 1)
      fail(origin, "world.duplicate_rate", "must be in [0,1)");
  }
  cfg.scenario.fingerprint.latent_dim = cfg.scenario.world.latent_dim;

  if (j.contains("fingerprint")) {
    const Json& f = j.at("fingerprint");
    expect_keys(f, origin, "fingerprint",
                {"aug_noise", "feature_h", "feature_w", "feature_d", "kernel_lambda"});
    FingerprintConfig& fc = cfg.scenario.fingerprint;
    fc.aug_noise = get_field<double>(f, origin, "fingerprint", "aug_noise", fc.aug_noise);
    fc.feature_h = get_field<int>(f, origin, "fingerprint", "feature_h", fc.feature_h);
    fc.feature_w = get_field<int>(f, origin, "fingerprint", "feature_w", fc.feature_w);
    fc.feature_d = get_field<int>(f, origin, "fingerprint", "feature_d", fc.feature_d);
    fc.kernel.lambda = get_field<double>(f, origin, "fingerprint", "kernel_lambda",
                                         fc.kernel.lambda);
    if (fc.feature_h < 1 || fc.feature_w < 1) fail(origin, "fingerprint", "feature dims >= 1");
    if (fc.feature_d < 4 || fc.feature_d % 4 != 0)
      fail(origin, "fingerprint.feature_d", "must be a positive multiple of 4");
    if (fc.kernel.lambda <= 0) fail(origin, "fingerprint.kernel_lambda", "must be > 0");
  }

  if (j.contains("model")) {
    const Json& m = j.at("model");
    expect_keys(m, origin, "model",
                {"prototypes_per_class", "noise_sigma", "learning_rate", "init_spread"});
    ToyModelConfig& tc = cfg.scenario.model;
    tc.prototypes_per_class =
        get_field<int>(m, origin, "model", "prototypes_per_class", tc.prototypes_per_class);
    tc.noise_sigma = get_field<double>(m, origin, "model", "noise_sigma", tc.noise_sigma);
    tc.learning_rate = get_field<double>(m, origin, "model", "learning_rate", tc.learning_rate);
    tc.init_spread = get_field<double>(m, origin, "model", "init_spread", tc.init_spread);
    if (tc.prototypes_per_class < 1) fail(origin, "model.prototypes_per_class", "must be >= 1");
    if (tc.noise_sigma <= 0) fail(origin, "model.noise_sigma", "must be > 0");
    if (tc.learning_rate <= 0 || tc.learning_rate > 1)
      fail(origin, "model.learning_rate", "must be in (0,1]");
  }

  if (j.contains("metrics")) {
    const Json& m = j.at("metrics");
    expect_keys(m, origin, "metrics",
                {"knn_k", "confirm_threshold", "exclusion_percentile", "k_cells", "kde_bandwidth",
                 "population_stdev", "window_target", "gem_p"});
    MetricsConfig& mc = cfg.scenario.metrics;
    mc.knn_k = get_field<int>(m, origin, "metrics", "knn_k", mc.knn_k);
    mc.confirm_threshold =
        get_field<double>(m, origin, "metrics", "confirm_threshold", mc.confirm_threshold);
    mc.exclusion_percentile =
        get_field<double>(m, origin, "metrics", "exclusion_percentile", mc.exclusion_percentile);
    mc.k_cells = get_field<int>(m, origin, "metrics", "k_cells", mc.k_cells);
    mc.kde_bandwidth = get_field<double>(m, origin, "metrics", "kde_bandwidth", mc.kde_bandwidth);
    mc.population_stdev =
        get_field<bool>(m, origin, "metrics", "population_stdev", mc.population_stdev);
    mc.window_target = get_field<int>(m, origin, "metrics", "window_target", mc.window_target);
    mc.gem_p = get_field<double>(m, origin, "metrics", "gem_p", mc.gem_p);
    if (mc.knn_k < 1) fail(origin, "metrics.knn_k", "must be >= 1");
    if (mc.confirm_threshold <= 0 || mc.confirm_threshold >= 1)
      fail(origin, "metrics.confirm_threshold", "must be in (0,1)");
    if (mc.exclusion_percentile <= 0 || mc.exclusion_percentile >= 100)
      fail(origin, "metrics.exclusion_percentile", "must be in (0,100)");
    if (mc.k_cells < 0) fail(origin, "metrics.k_cells", "must be >= 0 (0 = auto)");
    if (mc.kde_bandwidth < 0) fail(origin, "metrics.kde_bandwidth", "must be >= 0 (0 = auto)");
    if (mc.window_target < 1) fail(origin, "metrics.window_target", "must be >= 1");
    if (mc.gem_p < 1) fail(origin, "metrics.gem_p", "must be >= 1");
  }
  cfg.scenario.metrics.kernel = cfg.scenario.fingerprint.kernel;

  if (j.contains("protocol")) {
    const Json& p = j.at("protocol");
    expect_keys(p, origin, "protocol",
                {"confirmation_delay_ms", "confirmation_jitter_ms", "reward_pool"});
    cfg.scenario.protocol.confirmation_delay_ms = get_field<SimTime>(
        p, origin, "protocol", "confirmation_delay_ms",
        cfg.scenario.protocol.confirmation_delay_ms);
    cfg.scenario.protocol.confirmation_jitter_ms = get_field<SimTime>(
        p, origin, "protocol", "confirmation_jitter_ms",
        cfg.scenario.protocol.confirmation_jitter_ms);
    cfg.scenario.reward_pool =
        get_field<std::int64_t>(p, origin, "protocol", "reward_pool", cfg.scenario.reward_pool);
    if (cfg.scenario.protocol.confirmation_delay_ms < 0)
      fail(origin, "protocol.confirmation_delay_ms", "must be >= 0");
    if (cfg.scenario.protocol.confirmation_jitter_ms < 0)
      fail(origin, "protocol.confirmation_jitter_ms", "must be >= 0");
    if (cfg.scenario.reward_pool < 0) fail(origin, "protocol.reward_pool", "must be >= 0");
  }

  if (j.contains("run")) {
    const Json& r = j.at("run");
    expect_keys(r, origin, "run", {"seed", "stop_after_submissions", "max_sim_ms"});
    cfg.seed = get_field<std::uint64_t>(r, origin, "run", "seed", cfg.seed);
    cfg.scenario.stop_after_submissions = get_field<int>(
        r, origin, "run", "stop_after_submissions", cfg.scenario.stop_after_submissions);
    cfg.scenario.max_sim_ms =
        get_field<SimTime>(r, origin, "run", "max_sim_ms", cfg.scenario.max_sim_ms);
    if (cfg.scenario.stop_after_submissions < 1)
      fail(origin, "run.stop_after_submissions", "must be >= 1");
    if (cfg.scenario.max_sim_ms < 1) fail(origin, "run.max_sim_ms", "must be >= 1");
  }

  if (!j.contains("nodes") || !j.at("nodes").is_array() || j.at("nodes").empty())
    fail(origin, "nodes", "required non-empty array of node entries");
  size_t idx = 0;
  for (const Json& n : j.at("nodes")) {
    std::string path = "nodes[" + std::to_string(idx) + "]";
    expect_keys(n, origin, path,
                {"id", "role", "objective", "epochs_per_round", "samples_per_eval",
                 "vote_blend_alpha", "vote_source_filter", "wake_interval_ms", "wake_jitter_frac",
                 "join_at_ms", "leave_at_ms"});
    std::string id = require_field<std::string>(n, origin, path, "id");
    if (id.empty()) fail(origin, path + ".id", "must be nonempty");
    if (cfg.scenario.nodes.count(id)) fail(origin, path + ".id", "duplicate node id " + id);

    NodeStrategy s;
    std::string role = get_field<std::string>(n, origin, path, "role", "trainer");
    try {
      s.role = node_role_from_name(role);
    } catch (const std::exception& e) {
      fail(origin, path + ".role", e.what());
    }
    std::string objective = get_field<std::string>(n, origin, path, "objective", "qn");
    try {
      s.objective = objective_from_name(objective);
    } catch (const std::exception& e) {
      fail(origin, path + ".objective", e.what());
    }
    s.epochs_per_round =
        get_field<int>(n, origin, path, "epochs_per_round", s.epochs_per_round);
    s.samples_per_eval =
        get_field<int>(n, origin, path, "samples_per_eval", s.samples_per_eval);
    s.vote_blend_alpha =
        get_field<double>(n, origin, path, "vote_blend_alpha", s.vote_blend_alpha);
    std::string filter = get_field<std::string>(n, origin, path, "vote_source_filter", "all");
    if (filter == "all") s.vote_source_filter = VoterFilter::All;
    else if (filter == "trainers") s.vote_source_filter = VoterFilter::Trainers;
    else if (filter == "validators") s.vote_source_filter = VoterFilter::Validators;
    else fail(origin, path + ".vote_source_filter", "must be all|trainers|validators");
    s.wake_interval_ms =
        get_field<SimTime>(n, origin, path, "wake_interval_ms", s.wake_interval_ms);
    s.wake_jitter_frac =
        get_field<double>(n, origin, path, "wake_jitter_frac", s.wake_jitter_frac);
    s.join_at_ms = get_field<SimTime>(n, origin, path, "join_at_ms", s.join_at_ms);
    if (n.contains("leave_at_ms") && !n.at("leave_at_ms").is_null())
      s.leave_at_ms = get_field<SimTime>(n, origin, path, "leave_at_ms", 0);

    if (s.role == NodeRole::Trainer && s.epochs_per_round < 1)
      fail(origin, path + ".epochs_per_round", "trainer needs >= 1");
    if (s.samples_per_eval < cfg.scenario.world.classes)
      fail(origin, path + ".samples_per_eval", "must be >= world.classes");
    if (s.vote_blend_alpha < 0 || s.vote_blend_alpha > 1)
      fail(origin, path + ".vote_blend_alpha", "must be in [0,1]");
    if (s.wake_interval_ms < 1) fail(origin, path + ".wake_interval_ms", "must be >= 1");
    if (s.wake_jitter_frac < 0 || s.wake_jitter_frac >= 1)
      fail(origin, path + ".wake_jitter_frac", "must be in [0,1)");
    if (s.join_at_ms < 0) fail(origin, path + ".join_at_ms", "must be >= 0");
    if (s.leave_at_ms && *s.leave_at_ms <= s.join_at_ms)
      fail(origin, path + ".leave_at_ms", "must be after join_at_ms");

    cfg.scenario.nodes[id] = s;
    ++idx;
  }

  const int n_nodes = static_cast<int>(cfg.scenario.nodes.size());
  if (cfg.scenario.world.per_class % (2 * n_nodes) != 0)
    fail(origin, "world.per_class",
         "must be divisible by 2 * node count (" + std::to_string(2 * n_nodes) +
             ") for equal train/test splits");

  if (j.contains("output")) {
    const Json& o = j.at("output");
    expect_keys(o, origin, "output", {"dir", "global_eval_samples"});
    cfg.out_dir = get_field<std::string>(o, origin, "output", "dir", cfg.out_dir);
    cfg.global_eval_samples =
        get_field<int>(o, origin, "output", "global_eval_samples", cfg.global_eval_samples);
    if (cfg.global_eval_samples < cfg.scenario.world.classes)
      fail(origin, "output.global_eval_samples", "must be >= world.classes");
  }

  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw ConfigError("cannot open config file " + file.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config(buf.str(), file.string());
}

}  // namespace fedtrace
