#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "llmmap/causal_metrics.hpp"
#include "llmmap/geometry_metrics.hpp"
#include "llmmap/judge_client.hpp"
#include "llmmap/manifold.hpp"
#include "llmmap/pipeline.hpp"
#include "llmmap/trace_store.hpp"

namespace py = pybind11;
using namespace llmmap;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

py::tuple interval_tuple(const map::LayerInterval& iv) {
  return py::make_tuple(iv.start, iv.end, iv.strength, iv.flags);
}

std::string run_command(const std::string& command, const std::string& config_json,
                        const std::vector<std::string>& args) {
  const auto cfg = pipeline::config_from_json(nlohmann::json::parse(config_json));
  nlohmann::json out;
  if (command == "gen-prompts") {
    out = pipeline::cmd_gen_prompts(cfg);
  } else if (command == "analyze") {
    if (args.size() != 3) throw Error("cli", "analyze expects [analysis, corpus, bundle]");
    out = pipeline::cmd_analyze(cfg, parse_analysis(args[0]), args[1], args[2]);
  } else if (command == "judge") {
    if (args.size() != 1) throw Error("cli", "judge expects [bundle]");
    out = pipeline::cmd_judge(cfg, args[0]);
  } else if (command == "map") {
    out = pipeline::cmd_map(cfg, std::vector<std::filesystem::path>(args.begin(), args.end()));
  } else {
    throw Error("cli", "unknown command '" + command + "'");
  }
  return out.dump();
}

}  // namespace

PYBIND11_MODULE(_llmmap, m) {
  m.doc() = "Core numerics of the llmmap toolkit";

  static py::exception<Error> error_type(m, "LlmmapError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error_type, e.what());
    }
  });

  m.def("knn_graph",
        [](const RowMatrix& points, std::size_t k) {
          const auto g = manifold::knn_graph(points, k);
          return py::make_tuple(g.indices, g.distances);
        },
        py::arg("points"), py::arg("k"), "Exact k-NN; returns flat (indices, distances), row-major n x k.");

  m.def("umap_embed",
        [](const RowMatrix& points, int dim, int n_neighbors, double min_dist, int n_epochs, std::uint64_t seed) {
          manifold::UmapParams p;
          p.n_neighbors = n_neighbors;
          p.min_dist = min_dist;
          p.n_epochs = n_epochs;
          py::gil_scoped_release release;
          return RowMatrix(manifold::umap_embed(points, dim, p, seed).points);
        },
        py::arg("points"), py::arg("dim") = 2, py::arg("n_neighbors") = 15, py::arg("min_dist") = 0.1,
        py::arg("n_epochs") = 500, py::arg("seed") = 0);

  m.def("fit_curve_params", [](double spread, double min_dist) {
    const auto c = manifold::fit_curve_params(spread, min_dist);
    return py::make_tuple(c.a, c.b);
  });

  m.def("silhouette",
        [](const RowMatrix& points, const std::vector<int>& labels) { return geometry::silhouette(points, labels); },
        py::arg("points"), py::arg("labels"));

  m.def("local_anisotropy",
        [](const RowMatrix& points, std::size_t k) { return geometry::local_anisotropy(points, k); },
        py::arg("points"), py::arg("k") = 20);

  m.def("age_linear_fit",
        [](const RowMatrix& points, const std::vector<double>& ages) {
          const auto f = geometry::age_linear_fit(points, ages);
          return py::make_tuple(f.r_squared, f.residuals);
        },
        py::arg("embedding"), py::arg("ages"));

  m.def("stage_circularity",
        [](const RowMatrix& points, const std::vector<int>& stages) {
          const auto c = geometry::stage_circularity(points, stages);
          return py::make_tuple(c.csfs, c.csls);
        },
        py::arg("points"), py::arg("stages"));

  m.def("bootstrap_mean",
        [](const std::vector<double>& values, int n_resamples, std::uint64_t seed) {
          stats::BootstrapOptions o;
          o.n_resamples = n_resamples;
          o.seed = seed;
          const auto i = stats::bootstrap_mean(values, o);
          return py::make_tuple(i.mean, i.ci_low, i.ci_high);
        },
        py::arg("values"), py::arg("n_resamples") = 1000, py::arg("seed") = 0);

  m.def("patching_effect",
        [](double clean_r, double clean_rp, double corrupt_r, double corrupt_rp, double patched_r, double patched_rp,
           double eps) -> std::optional<double> {
          trace::PatchRecord r;
          r.logit_clean_r = clean_r;
          r.logit_clean_rp = clean_rp;
          r.logit_corrupt_r = corrupt_r;
          r.logit_corrupt_rp = corrupt_rp;
          r.logit_patched_r = patched_r;
          r.logit_patched_rp = patched_rp;
          const auto e = causal::patching_effect(r, eps);
          return e ? std::optional<double>(e->effect) : std::nullopt;
        },
        py::arg("clean_r"), py::arg("clean_rp"), py::arg("corrupt_r"), py::arg("corrupt_rp"), py::arg("patched_r"),
        py::arg("patched_rp"), py::arg("eps") = causal::kDefaultEpsilon);

  m.def("gaussian_smooth", py::overload_cast<const map::Series&, double>(&map::gaussian_smooth), py::arg("series"),
        py::arg("sigma") = 1.0);
  m.def("rising_window_interval",
        [](const map::Series& s, int window) { return interval_tuple(map::rising_window_interval(s, window)); },
        py::arg("series"), py::arg("window") = 3);
  m.def("percentile_intervals",
        [](const map::Series& s, double p, int min_len, int max_n) {
          py::list out;
          for (const auto& iv : map::percentile_intervals(s, p, min_len, max_n)) out.append(interval_tuple(iv));
          return out;
        },
        py::arg("series"), py::arg("p") = 75.0, py::arg("min_len") = 2, py::arg("max_n") = 3);

  m.def("parse_score", [](const std::string& reply) { return judge::parse_score(reply); }, py::arg("reply"));

  m.def("write_tensor",
        [](const std::filesystem::path& path, const std::vector<std::uint64_t>& shape, const std::vector<float>& data) {
          trace::TensorBlob b;
          b.shape = shape;
          b.data = data;
          trace::write_tensor(b, path);
        },
        py::arg("path"), py::arg("shape"), py::arg("data"));
  m.def("read_tensor",
        [](const std::filesystem::path& path) {
          const auto b = trace::read_tensor(path);
          return py::make_tuple(b.shape, b.data);
        },
        py::arg("path"));
  m.def("load_run_summary",
        [](const std::filesystem::path& path) {
          const auto b = trace::load_run(path);
          auto j = trace::to_json(b.manifest());
          j["size"] = b.size();
          return j.dump();
        },
        py::arg("path"), "Validates a bundle and returns its manifest (JSON text) with the record count.");

  m.def("run_command", &run_command, py::arg("command"), py::arg("config_json"), py::arg("args"),
        "Runs a pipeline command; returns the JSON summary as text.");
}
