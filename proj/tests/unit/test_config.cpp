#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fedtrace/config.hpp"

using namespace fedtrace;
using doctest::Contains;

namespace {

std::string minimal = R"({"format_version": 1, "nodes": [{"id": "a"}]})";

}  // namespace

TEST_CASE("a minimal config inherits every default") {
  ExperimentConfig cfg = parse_config(minimal);
  CHECK(cfg.seed == 1);
  CHECK(cfg.out_dir.empty());
  CHECK(cfg.global_eval_samples == 200);
  CHECK(cfg.scenario.world.classes == 10);
  CHECK(cfg.scenario.world.per_class == 80);
  CHECK(cfg.scenario.fingerprint.latent_dim == cfg.scenario.world.latent_dim);
  CHECK(cfg.scenario.metrics.kernel.lambda == cfg.scenario.fingerprint.kernel.lambda);
  REQUIRE(cfg.scenario.nodes.count("a") == 1);
  const NodeStrategy& s = cfg.scenario.nodes.at("a");
  CHECK(s.role == NodeRole::Trainer);
  CHECK(s.objective == Objective::Qn);
  CHECK(s.epochs_per_round == 50);
  CHECK(!s.leave_at_ms.has_value());
}

TEST_CASE("a full config lands in the right fields") {
  std::string text = R"({
    "format_version": 1,
    "world": {"classes": 4, "per_class": 24, "latent_dim": 8, "duplicate_rate": 0.05,
              "center_scale": 2.5, "offset_scale": 0.75},
    "fingerprint": {"aug_noise": 0.02, "feature_h": 5, "feature_w": 6, "feature_d": 32,
                    "kernel_lambda": 0.2},
    "model": {"prototypes_per_class": 4, "noise_sigma": 0.03, "learning_rate": 0.4,
              "init_spread": 0.5},
    "metrics": {"knn_k": 3, "confirm_threshold": 0.7, "exclusion_percentile": 90,
                "k_cells": 2, "kde_bandwidth": 0.8, "population_stdev": false,
                "window_target": 20, "gem_p": 2.0},
    "protocol": {"confirmation_delay_ms": 500, "confirmation_jitter_ms": 100,
                 "reward_pool": 4242},
    "run": {"seed": 99, "stop_after_submissions": 7, "max_sim_ms": 500000},
    "nodes": [
      {"id": "t1", "role": "trainer", "objective": "qn_dedup", "epochs_per_round": 12,
       "samples_per_eval": 48, "vote_blend_alpha": 0.6, "vote_source_filter": "validators",
       "wake_interval_ms": 4000, "wake_jitter_frac": 0.1, "join_at_ms": 100,
       "leave_at_ms": 90000},
      {"id": "v1", "role": "validator", "objective": "fld_fid", "samples_per_eval": 16,
       "leave_at_ms": null}
    ],
    "output": {"dir": "runs/demo", "global_eval_samples": 64}
  })";
  ExperimentConfig cfg = parse_config(text, "demo.json");

  CHECK(cfg.seed == 99);
  CHECK(cfg.out_dir == "runs/demo");
  CHECK(cfg.global_eval_samples == 64);
  CHECK(cfg.scenario.world.classes == 4);
  CHECK(cfg.scenario.world.duplicate_rate == 0.05);
  CHECK(cfg.scenario.fingerprint.latent_dim == 8);
  CHECK(cfg.scenario.fingerprint.feature_d == 32);
  CHECK(cfg.scenario.fingerprint.kernel.lambda == 0.2);
  CHECK(cfg.scenario.metrics.kernel.lambda == 0.2);
  CHECK(cfg.scenario.metrics.population_stdev == false);
  CHECK(cfg.scenario.metrics.window_target == 20);
  CHECK(cfg.scenario.protocol.confirmation_delay_ms == 500);
  CHECK(cfg.scenario.reward_pool == 4242);
  CHECK(cfg.scenario.stop_after_submissions == 7);

  const NodeStrategy& t1 = cfg.scenario.nodes.at("t1");
  CHECK(t1.objective == Objective::QnDedup);
  CHECK(t1.epochs_per_round == 12);
  CHECK(t1.vote_blend_alpha == 0.6);
  CHECK(t1.vote_source_filter == VoterFilter::Validators);
  CHECK(t1.join_at_ms == 100);
  REQUIRE(t1.leave_at_ms.has_value());
  CHECK(*t1.leave_at_ms == 90000);

  const NodeStrategy& v1 = cfg.scenario.nodes.at("v1");
  CHECK(v1.role == NodeRole::Validator);
  CHECK(v1.objective == Objective::FldFid);
  CHECK(!v1.leave_at_ms.has_value());
}

TEST_CASE("unknown keys are rejected with their dotted path") {
  CHECK_THROWS_WITH_AS(
      parse_config(R"({"format_version":1, "world": {"classez": 3}, "nodes": [{"id":"a"}]})"),
      Contains("world.classez"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_config(R"({"format_version":1, "bogus": 2, "nodes": [{"id":"a"}]})"),
      Contains("bogus"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_config(
          R"({"format_version":1, "nodes": [{"id":"a", "speed": 9}]})"),
      Contains("nodes[0].speed"), ConfigError);
}

TEST_CASE("json syntax errors carry origin, line and column") {
  std::string text = "{\n  \"format_version\": 1,\n  oops\n}";
  try {
    parse_config(text, "broken.json");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("broken.json:3:") != std::string::npos);
  }
}

TEST_CASE("version and type errors name the offending field") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"nodes": [{"id":"a"}]})"),
                       Contains("format_version"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"format_version": 2, "nodes": [{"id":"a"}]})"),
                       Contains("unsupported version"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_config(
          R"({"format_version":1, "world": {"classes": "three"}, "nodes": [{"id":"a"}]})"),
      Contains("world.classes"), ConfigError);
}

TEST_CASE("node entries are validated in place") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"format_version": 1})"), Contains("nodes"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_config(R"({"format_version":1, "nodes": [{"id":"a"}, {"id":"a"}]})"),
      Contains("duplicate node id"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_config(R"({"format_version":1, "nodes": [{"id":"a", "role": "oracle"}]})"),
      Contains("nodes[0].role"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_config(R"({"format_version":1, "nodes": [{"id":"a", "objective": "speed"}]})"),
      Contains("nodes[0].objective"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_config(
          R"({"format_version":1, "nodes": [{"id":"a", "vote_source_filter": "friends"}]})"),
      Contains("vote_source_filter"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_config(
          R"({"format_version":1, "nodes": [{"id":"a", "samples_per_eval": 3}]})"),
      Contains("samples_per_eval"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_config(
          R"({"format_version":1,
              "nodes": [{"id":"a", "join_at_ms": 5000, "leave_at_ms": 1000}]})"),
      Contains("leave_at_ms"), ConfigError);
}

TEST_CASE("the split constraint counts the parsed nodes") {
  std::string text = R"({
    "format_version": 1,
    "world": {"per_class": 10},
    "nodes": [{"id": "a"}, {"id": "b"}]
  })";
  CHECK_THROWS_WITH_AS(parse_config(text), Contains("world.per_class"), ConfigError);
}

TEST_CASE("configs load from disk with the filename as origin") {
  auto tmp = std::filesystem::temp_directory_path() / "fedtrace_cfg_test.json";
  {
    std::ofstream os(tmp);
    os << minimal;
  }
  ExperimentConfig cfg = load_config(tmp);
  CHECK(cfg.scenario.nodes.count("a") == 1);
  std::filesystem::remove(tmp);

  CHECK_THROWS_AS(load_config(tmp), ConfigError);

  {
    std::ofstream os(tmp);
    os << "{ nope";
  }
  try {
    load_config(tmp);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(tmp.string()) != std::string::npos);
  }
  std::filesystem::remove(tmp);
}
