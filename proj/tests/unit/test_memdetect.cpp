#include <doctest.h>

#include <algorithm>
#include <random>

#include "fedtrace/memdetect.hpp"
#include "fedtrace/rng.hpp"

using namespace fedtrace;

namespace {

// Points on the first axis of a small embedding space; distances are the
// absolute coordinate differences, so expected values are hand-computable.
EmbeddedSet line_set(const std::vector<std::tuple<std::string, int, double>>& pts, int dim = 4) {
  EmbeddedSet s;
  s.embeddings = Mat::Zero(static_cast<int>(pts.size()), dim);
  int r = 0;
  for (const auto& [id, cls, x] : pts) {
    s.ids.push_back(id);
    s.class_ids.push_back(cls);
    s.embeddings(r, 0) = x;
    ++r;
  }
  return s;
}

EmbeddedSet train_fixture() {
  return line_set({{"t0", 0, 0.0},
                   {"t1", 0, 8.0},
                   {"t2", 0, 18.0},
                   {"t3", 0, 30.0},
                   {"u0", 1, 0.0},
                   {"u1", 1, 3.0},
                   {"u2", 1, 7.0}});
}

}  // namespace

TEST_CASE("intra-class thresholds match the hand-computed statistic") {
  ClassThresholds th = intra_class_thresholds(train_fixture(), true);
  // Class 0 nearest-neighbor distances {8,8,10,12}; class 1 {3,3,4}.
  CHECK(th.per_class.at(0).t_l2 == doctest::Approx(8.670843802411).epsilon(1e-9));
  CHECK(th.per_class.at(1).t_l2 == doctest::Approx(3.097631072938).epsilon(1e-9));
  CHECK(th.per_class.at(0).n_pairs == 4);
  CHECK(th.per_class.at(1).n_pairs == 3);

  // Sample stdev variant shifts the threshold down (larger stdev).
  ClassThresholds sample = intra_class_thresholds(train_fixture(), false);
  CHECK(sample.per_class.at(0).t_l2 < th.per_class.at(0).t_l2);

  EmbeddedSet lonely = line_set({{"a", 0, 0.0}, {"b", 0, 1.0}, {"c", 7, 5.0}});
  CHECK_THROWS_WITH_AS(intra_class_thresholds(lonely),
                       doctest::Contains("class 7"), std::invalid_argument);
}

TEST_CASE("knn candidates follow the strict threshold rule") {
  EmbeddedSet train = train_fixture();
  ClassThresholds th = intra_class_thresholds(train);
  EmbeddedSet gen = line_set({{"g0", 0, 7.5}, {"g1", 1, 2.9}, {"g2", 0, 100.0}});

  auto cands = knn_candidates(gen, train, th, 5);
  std::map<std::string, std::vector<std::string>> by_gen;
  std::map<std::string, double> dist;
  for (const auto& c : cands) {
    by_gen[c.generated_id].push_back(c.train_id);
    dist[c.generated_id + "/" + c.train_id] = c.l2_distance;
  }
  CHECK(by_gen["g0"] == std::vector<std::string>{"t1", "t0"});
  CHECK(by_gen["g1"] == std::vector<std::string>{"u1", "u0"});
  CHECK(by_gen.count("g2") == 0);
  CHECK(dist["g0/t1"] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(dist["g1/u1"] == doctest::Approx(0.1).epsilon(1e-9));

  auto top1 = knn_candidates(gen, train, th, 1);
  std::vector<std::string> kept;
  for (const auto& c : top1) kept.push_back(c.generated_id + "/" + c.train_id);
  CHECK(kept == std::vector<std::string>{"g0/t1", "g1/u1"});
}

TEST_CASE("knn candidates are invariant to train ordering") {
  auto eng = make_engine(41, "knn.order");
  std::vector<std::tuple<std::string, int, double>> pts;
  for (int i = 0; i < 40; ++i)
    pts.push_back({"t" + std::to_string(i), i % 3,
                   std::uniform_real_distribution<double>(-10, 10)(eng)});
  EmbeddedSet gen;
  {
    std::vector<std::tuple<std::string, int, double>> gp;
    for (int i = 0; i < 15; ++i)
      gp.push_back({"g" + std::to_string(i), i % 3,
                    std::uniform_real_distribution<double>(-10, 10)(eng)});
    gen = line_set(gp);
  }

  EmbeddedSet train_a = line_set(pts);
  std::shuffle(pts.begin(), pts.end(), eng);
  EmbeddedSet train_b = line_set(pts);

  ClassThresholds th = intra_class_thresholds(train_a);
  auto ca = knn_candidates(gen, train_a, th, 5);
  auto cb = knn_candidates(gen, train_b, intra_class_thresholds(train_b), 5);
  REQUIRE(ca.size() == cb.size());
  for (size_t i = 0; i < ca.size(); ++i) {
    CHECK(ca[i].generated_id == cb[i].generated_id);
    CHECK(ca[i].train_id == cb[i].train_id);
    CHECK(ca[i].l2_distance == doctest::Approx(cb[i].l2_distance).epsilon(1e-12));
  }
}

TEST_CASE("count-once confirmation keeps the best pair per id") {
  std::vector<CandidatePair> cands;
  auto add = [&](const std::string& g, const std::string& t, double d) {
    CandidatePair c;
    c.generated_id = g;
    c.train_id = t;
    c.l2_distance = d;
    cands.push_back(c);
  };
  add("g0", "t0", 1.0);
  add("g0", "t1", 2.0);
  add("g1", "t0", 1.5);
  add("g1", "t2", 3.0);
  add("g2", "t9", 4.0);

  std::map<std::string, double> scores{{"g0/t0", 0.95},
                                       {"g0/t1", 0.90},
                                       {"g1/t0", 0.93},
                                       {"g1/t2", 0.85},
                                       {"g2/t9", 0.10}};
  auto scorer = [&](const CandidatePair& c) { return scores.at(c.generated_id + "/" + c.train_id); };

  MemorizationReport rep = confirm_matches(cands, scorer, 0.8);
  aggregate_report(rep, 10);

  REQUIRE(rep.checked.size() == 5);
  // g0/t0 wins both ids it touches; g1 falls back to t2; g0/t1 is blocked
  // because g0 is already spoken for; g2 failed the threshold.
  REQUIRE(rep.confirmed.size() == 2);
  CHECK(rep.confirmed[0].pair.generated_id == "g0");
  CHECK(rep.confirmed[0].pair.train_id == "t0");
  CHECK(rep.confirmed[1].pair.generated_id == "g1");
  CHECK(rep.confirmed[1].pair.train_id == "t2");
  CHECK(rep.per_train_counts.at("t0") == 1);
  CHECK(rep.per_train_counts.count("t1") == 0);
  CHECK(rep.per_generated_counts.at("g0") == 1);
  CHECK(rep.per_train_counts.count("t9") == 0);

  // v_a over all checked pairs, v_c over confirmed, r_c over generated count.
  double va = (0.95 + 0.90 + 0.93 + 0.85 + 0.10) / 5.0;
  double vc = (0.95 + 0.85) / 2.0;
  CHECK(rep.v_a == doctest::Approx(va).epsilon(1e-12));
  CHECK(rep.v_c == doctest::Approx(vc).epsilon(1e-12));
  CHECK(rep.r_c == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(rep.v_c >= 0.8);
}

TEST_CASE("aggregate handles the no-candidate convention") {
  MemorizationReport rep = confirm_matches({}, [](const CandidatePair&) { return 1.0; }, 0.8);
  aggregate_report(rep, 100);
  CHECK(rep.v_a == 0.0);
  CHECK(rep.v_c == 0.0);
  CHECK(rep.r_c == 0.0);
  CHECK_THROWS_AS(aggregate_report(rep, 0), std::invalid_argument);
}

TEST_CASE("aggregate statistics match a flat recomputation") {
  std::vector<CandidatePair> cands;
  CandidatePair a;
  a.generated_id = "gA";
  a.train_id = "tA";
  CandidatePair b;
  b.generated_id = "gB";
  b.train_id = "tB";
  cands = {a, b};
  auto scorer = [](const CandidatePair& c) { return c.generated_id == "gA" ? 0.9 : 0.7; };
  MemorizationReport rep = confirm_matches(cands, scorer, 0.8);
  aggregate_report(rep, 100);
  CHECK(rep.v_a == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(rep.v_c == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(rep.r_c == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("exclusion set follows the normalized percentile rule") {
  CHECK(exclusion_set({{"a", 0}, {"b", 0}, {"c", 10}}, 95.0) == std::set<std::string>{"c"});
  CHECK(exclusion_set({{"a", 3}, {"b", 3}, {"c", 3}}, 95.0).empty());
  CHECK(exclusion_set({}, 95.0).empty());

  // Tie at the minimum must not drag everything in through normalization.
  std::map<std::string, int> skew;
  for (int i = 0; i < 19; ++i) skew["id" + std::to_string(i)] = 1;
  skew["hot"] = 10;
  CHECK(exclusion_set(skew, 95.0) == std::set<std::string>{"hot"});

  // Sort-based oracle on a seeded spread of distinct counts.
  auto eng = make_engine(42, "exclusion");
  std::map<std::string, int> counts;
  std::vector<int> values;
  for (int i = 0; i < 1000; ++i) {
    int v = static_cast<int>(std::uniform_int_distribution<int>(0, 100000)(eng));
    counts["s" + std::to_string(i)] = v;
    values.push_back(v);
  }
  auto excluded = exclusion_set(counts, 95.0);
  int lo = *std::min_element(values.begin(), values.end());
  int hi = *std::max_element(values.begin(), values.end());
  std::vector<double> norm;
  for (int v : values) norm.push_back(static_cast<double>(v - lo) / (hi - lo));
  std::vector<double> sorted = norm;
  std::sort(sorted.begin(), sorted.end());
  size_t rank = static_cast<size_t>(std::ceil(0.95 * sorted.size()));
  rank = std::clamp<size_t>(rank, 1, sorted.size());
  double cutoff = sorted[rank - 1];
  std::set<std::string> oracle;
  int i = 0;
  for (int v : values) {
    double nv = static_cast<double>(v - lo) / (hi - lo);
    if (nv >= cutoff && nv > 0) oracle.insert("s" + std::to_string(i));
    ++i;
  }
  CHECK(excluded == oracle);
  double frac = static_cast<double>(excluded.size()) / 1000.0;
  CHECK(frac > 0.04);
  CHECK(frac < 0.06);
}

TEST_CASE("report serialization carries the confirmed pairs") {
  std::vector<CandidatePair> cands;
  CandidatePair c;
  c.generated_id = "g";
  c.train_id = "t";
  c.l2_distance = 0.25;
  c.class_id = 2;
  cands.push_back(c);
  MemorizationReport rep = confirm_matches(cands, [](const CandidatePair&) { return 0.9; }, 0.8);
  aggregate_report(rep, 4);

  nlohmann::json j = report_to_json(rep);
  CHECK(j.at("v_c").get<double>() == doctest::Approx(0.9));
  CHECK(j.at("r_c").get<double>() == doctest::Approx(0.25));
  CHECK(j.at("n_confirmed").get<int>() == 1);
  CHECK(j.at("confirmed_pairs").size() == 1);
  CHECK(j.at("confirmed_pairs")[0].at("generated_id").get<std::string>() == "g");

  std::string csv = confirmed_pairs_csv(rep);
  CHECK(csv.find("generated_id,train_id,score,l2") == 0);
  CHECK(csv.find("g,t,") != std::string::npos);
}
