#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "osal/alloop.hpp"
#include "osal/config.hpp"
#include "osal/errors.hpp"
#include "osal/report.hpp"
#include "osal/sampling.hpp"
#include "osal/vnn.hpp"

namespace py = pybind11;
using namespace osal;

namespace {

py::dict stage_dict(const StageRecord& r) {
  py::dict d;
  d["stage"] = r.stage;
  d["labeled"] = r.labeled;
  d["accuracy"] = r.accuracy;
  d["sampling_seconds"] = r.sampling_seconds;
  d["budget"] = r.budget;
  d["selected"] = r.selected;
  d["promoted"] = r.promoted;
  d["rejected_ood"] = r.rejected_ood;
  d["filtered_ood"] = r.filtered_ood;
  d["pending"] = r.pending;
  d["foreign_selected"] = r.foreign_selected;
  d["excluded_class_selected"] = r.excluded_class_selected;
  d["epoch_loss"] = r.epoch_loss;
  return d;
}

py::dict run_dict(const RunResult& r) {
  py::dict d;
  d["seed"] = r.seed;
  d["train_size"] = r.train_size;
  d["complete"] = r.complete;
  py::list stages;
  for (const auto& s : r.stages) stages.append(stage_dict(s));
  d["stages"] = stages;
  return d;
}

ExperimentConfig config_from(const std::string& path, const std::vector<std::string>& overrides) {
  return load_config(path, overrides);
}

}  // namespace

PYBIND11_MODULE(_osal, m) {
  m.doc() = "Open-set active learning core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DegenerateStatsError>(m, "DegenerateStatsError", base.ptr());
  py::register_exception<FitError>(m, "FitError", base.ptr());
  py::register_exception<NumericsError>(m, "NumericsError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());

  m.def(
      "kl_term",
      [](const std::vector<double>& mean, const std::vector<double>& log_variance) {
        if (mean.size() != log_variance.size()) throw ShapeError("mean and log_variance lengths differ");
        LatentPosterior p{Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                          Eigen::Map<const Vector>(log_variance.data(), static_cast<Eigen::Index>(log_variance.size()))};
        return kl_term(p);
      },
      py::arg("mean"), py::arg("log_variance"), "KL divergence of a diagonal Gaussian from N(0, I).");

  m.def(
      "fit_weibull",
      [](const std::vector<double>& distances, double tail_fraction) {
        const auto f = fit_weibull(distances, tail_fraction);
        return py::make_tuple(f.shape, f.scale, f.tail_size);
      },
      py::arg("distances"), py::arg("tail_fraction") = 1.0,
      "Maximum-likelihood Weibull fit to the upper tail. Returns (shape, scale, tail_size).");

  m.def("weibull_cdf", &weibull_cdf, py::arg("x"), py::arg("shape"), py::arg("scale"));

  m.def(
      "load_config",
      [](const std::string& path, const std::vector<std::string>& overrides) {
        return config_to_json(config_from(path, overrides));
      },
      py::arg("path"), py::arg("overrides") = std::vector<std::string>{},
      "Validated config as normalized JSON text.");

  m.def(
      "run_experiment",
      [](const std::string& config_path, std::uint64_t seed, std::optional<std::filesystem::path> run_dir,
         const std::vector<std::string>& overrides) {
        const auto config = config_from(config_path, overrides);
        RunResult result;
        {
          py::gil_scoped_release release;
          result = run_experiment(config, seed, {run_dir, {}});
        }
        return run_dict(result);
      },
      py::arg("config_path"), py::arg("seed") = 0, py::arg("run_dir") = py::none(),
      py::arg("overrides") = std::vector<std::string>{},
      "Runs one seed. With run_dir the run is persisted and resumable.");

  m.def(
      "accuracy_csv",
      [](const std::filesystem::path& run_dir) { return accuracy_csv(load_run_result(run_dir)); },
      py::arg("run_dir"));
}
