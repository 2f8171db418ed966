#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fedtrace/config.hpp"
#include "fedtrace/experiment.hpp"
#include "fedtrace/metrics.hpp"

namespace py = pybind11;
using namespace fedtrace;

namespace {

py::object json_to_py(const Json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

std::vector<SampleRecord> records_from(const Mat& latents, const std::vector<int>& classes,
                                       Origin origin, const char* prefix) {
  if (latents.rows() != static_cast<Eigen::Index>(classes.size()))
    throw std::invalid_argument(std::string(prefix) +
                                ": class list length must match the latent row count");
  std::vector<SampleRecord> out(latents.rows());
  for (Eigen::Index i = 0; i < latents.rows(); ++i) {
    out[i].id = std::string(prefix) + std::to_string(i);
    out[i].latent = Latent{latents.row(i).transpose(), classes[i]};
    out[i].origin = origin;
  }
  return out;
}

py::dict run_config_py(const std::string& text, const std::string& origin,
                       std::optional<std::string> out_dir, std::optional<std::uint64_t> seed) {
  ExperimentConfig cfg = parse_config(text, origin);
  RunArtifacts art = run_experiment(cfg, seed, std::move(out_dir));
  py::dict d;
  d["out"] = art.dir.string();
  d["summary"] = json_to_py(art.summary);
  d["winner"] = art.trace.winning_model_cid;
  return d;
}

py::dict run_config_file_py(const std::string& path, std::optional<std::string> out_dir,
                            std::optional<std::uint64_t> seed) {
  ExperimentConfig cfg = load_config(path);
  RunArtifacts art = run_experiment(cfg, seed, std::move(out_dir));
  py::dict d;
  d["out"] = art.dir.string();
  d["summary"] = json_to_py(art.summary);
  d["winner"] = art.trace.winning_model_cid;
  return d;
}

py::dict score_sets_py(const Mat& train, const std::vector<int>& train_classes, const Mat& test,
                       const std::vector<int>& test_classes, const Mat& generated,
                       const std::vector<int>& generated_classes, std::uint64_t seed, int knn_k,
                       double confirm_threshold, int cells, double bandwidth, double kernel_lambda,
                       int window_target, double gem_p) {
  MetricsConfig metrics;
  metrics.knn_k = knn_k;
  metrics.confirm_threshold = confirm_threshold;
  metrics.k_cells = cells;
  metrics.kde_bandwidth = bandwidth;
  metrics.kernel.lambda = kernel_lambda;
  metrics.window_target = window_target;
  metrics.gem_p = gem_p;

  EvalResult res = score_record_sets(records_from(train, train_classes, Origin::Train, "tr"),
                                     records_from(test, test_classes, Origin::Test, "te"),
                                     records_from(generated, generated_classes, Origin::Generated,
                                                  "g"),
                                     metrics, seed);

  py::dict d;
  d["qn"] = res.bundle.qn;
  d["fid"] = res.bundle.fid;
  d["fld"] = res.bundle.fld;
  d["authpct"] = res.bundle.authpct;
  d["ct"] = res.bundle.ct;
  d["v_a"] = res.bundle.v_a;
  d["v_c"] = res.bundle.v_c;
  d["r_c"] = res.bundle.r_c;
  d["n_generated"] = res.report.n_generated;
  d["report"] = json_to_py(report_to_json(res.report));
  return d;
}

py::dict verify_run_py(const std::filesystem::path& ledger, const std::filesystem::path& store,
                       std::optional<std::filesystem::path> digest,
                       std::optional<std::filesystem::path> keys,
                       std::optional<std::string> lineage) {
  VerifyReport report = verify_run(ledger, store, digest, keys, lineage);
  py::dict d;
  d["ok"] = report.ok;
  d["checks"] = report.checks;
  d["violations"] = report.violations;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "memorization-aware scoring and ledger-orchestrated federation simulator";

  m.def("qn_score", &qn_score, py::arg("fid"), py::arg("v_c"), py::arg("v_a"), py::arg("r_c"),
        "memorization-penalized quality: (fid + v_c * v_a * r_c * 1000) / 2, lower is better");
  m.def("fid", &fid, py::arg("set_a"), py::arg("set_b"),
        "Frechet distance between Gaussian fits of two embedding sets");
  m.def("authpct", &authpct, py::arg("train"), py::arg("generated"),
        "percent of generated rows farther from train than train's own nearest neighbor");
  m.def("ct_score", &ct_score, py::arg("train"), py::arg("test"), py::arg("generated"),
        py::arg("cells") = 0, "cellwise rank-test z comparing generated and test distances");
  m.def("fld_lite", &fld_lite, py::arg("train"), py::arg("test"), py::arg("generated"),
        py::arg("bandwidth"), "density-based generalization gap under a Gaussian KDE");
  m.def("scott_bandwidth", &scott_bandwidth, py::arg("rows"),
        "Scott's-rule KDE bandwidth for an embedding set");

  m.def("run_config", &run_config_py, py::arg("text"), py::arg("origin") = "<config>",
        py::arg("out_dir") = std::nullopt, py::arg("seed") = std::nullopt,
        "run an experiment from config text; writes artifacts, returns the summary");
  m.def("run_config_file", &run_config_file_py, py::arg("path"),
        py::arg("out_dir") = std::nullopt, py::arg("seed") = std::nullopt,
        "run an experiment from a config file; writes artifacts, returns the summary");
  m.def("score_sets", &score_sets_py, py::arg("train"), py::arg("train_classes"), py::arg("test"),
        py::arg("test_classes"), py::arg("generated"), py::arg("generated_classes"),
        py::arg("seed") = 1, py::arg("knn_k") = 5, py::arg("confirm_threshold") = 0.8,
        py::arg("cells") = 0, py::arg("bandwidth") = 0.0, py::arg("kernel_lambda") = 0.1,
        py::arg("window_target") = 55, py::arg("gem_p") = 3.0,
        "full-pipeline scoring of latent matrices with aligned class lists");
  m.def("verify_run", &verify_run_py, py::arg("ledger"), py::arg("store"),
        py::arg("digest") = std::nullopt, py::arg("keys") = std::nullopt,
        py::arg("lineage") = std::nullopt,
        "replay a persisted run: digest, state fold, and lineage validation");
}
