#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lapref/data_io.hpp"
#include "lapref/error.hpp"
#include "lapref/experiments.hpp"
#include "lapref/laplace.hpp"
#include "lapref/results_json.hpp"

namespace py = pybind11;
using namespace lapref;

namespace {

Dataset make_dataset(const Matrix& x, const std::vector<int>& y, int n_classes) {
  Dataset d;
  d.features = x;
  d.labels = y;
  d.n_classes = n_classes > 0 ? n_classes : (y.empty() ? 0 : *std::max_element(y.begin(), y.end()) + 1);
  d.validate();
  return d;
}

py::tuple dataset_tuple(const Dataset& d) {
  if (d.is_regression()) return py::make_tuple(d.features, d.targets);
  return py::make_tuple(d.features, d.labels);
}

// Binary problems use the single-logit Bernoulli head, like the 2D toy.
std::pair<Model, Likelihood> classifier(const Dataset& d) {
  const int p = static_cast<int>(d.n_features());
  if (d.n_classes == 2) return {LinearModel{p, 1, true}, Likelihood::bernoulli()};
  return {LinearModel{p, d.n_classes, true}, Likelihood::categorical()};
}

GaussianPosterior gaussian(const Vector& mean, const Matrix& cov, double lambda) {
  return GaussianPosterior::from_covariance(mean, cov, lambda, Provenance::kLaplace);
}

// JSON crosses the boundary as text; the Python package decodes it.
std::string dump(const Json& j) { return j.dump(); }

}  // namespace

PYBIND11_MODULE(_lapref, m) {
  m.doc() = "Flow refinement of Gaussian posteriors";
  m.attr("__version__") = library_version();

  static py::exception<Error> error_type(m, "LaprefError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      error_type((std::string(error_code_name(e.code())) + ": " + e.what()).c_str());
    }
  });

  // Predictive approximations.
  m.def("probit_binary", &probit_binary, py::arg("m"), py::arg("s2"));
  m.def("mpa", &mpa, py::arg("f_mean"), py::arg("s_diag"));
  m.def("logistic_gaussian_quadrature", &logistic_gaussian_quadrature, py::arg("m"),
        py::arg("s"), py::arg("n_points") = 20000);

  // Metrics on an N x C probability matrix.
  m.def("nll", &nll, py::arg("probs"), py::arg("labels"));
  m.def("ece", &ece, py::arg("probs"), py::arg("labels"), py::arg("n_bins") = 15);
  m.def("brier", &brier, py::arg("probs"), py::arg("labels"));
  m.def("accuracy", &accuracy, py::arg("probs"), py::arg("labels"));
  m.def("mmd", &mmd, py::arg("x"), py::arg("y"));
  m.def("fpr95", &fpr95, py::arg("scores_in"), py::arg("scores_out"));

  // Data.
  m.def(
      "gen_toy_logreg", [](std::uint64_t seed) {
        RngStream rng(seed);
        return dataset_tuple(gen_toy_logreg(rng));
      },
      py::arg("seed") = 0);
  m.def(
      "gen_toy_regression", [](std::uint64_t seed, int n) {
        RngStream rng(seed);
        return dataset_tuple(gen_toy_regression(rng, n));
      },
      py::arg("seed") = 0, py::arg("n") = 60);
  m.def(
      "gen_mixture_classes",
      [](int c, int p, int n, std::uint64_t seed, double radius) {
        RngStream rng(seed);
        return dataset_tuple(gen_mixture_classes(c, p, n, rng, radius));
      },
      py::arg("n_classes"), py::arg("n_features"), py::arg("n_points"), py::arg("seed") = 0,
      py::arg("radius") = 3.5);

  // Last-layer Laplace fit: returns (mean, covariance).
  m.def(
      "fit_laplace",
      [](const Matrix& x, const std::vector<int>& y, double lambda, int n_classes) {
        const Dataset d = make_dataset(x, y, n_classes);
        const auto [model, lik] = classifier(d);
        const MapResult map = fit_map(model, lik, d, lambda);
        const GaussianPosterior la = laplace_posterior(
            map.theta, hessian_log_joint(model, lik, map.theta, d, lambda), lambda);
        return py::make_tuple(la.mean, la.covariance);
      },
      py::arg("x"), py::arg("y"), py::arg("lambda_") = 1.0, py::arg("n_classes") = 0);

  py::class_<RefinedPosterior>(m, "RefinedPosterior")
      .def_property_readonly("dim", &RefinedPosterior::dim)
      .def_property_readonly("flow_length", [](const RefinedPosterior& rp) { return rp.flow.length(); })
      .def_property_readonly("mean", [](const RefinedPosterior& rp) { return rp.base.mean; })
      .def_property_readonly("covariance",
                             [](const RefinedPosterior& rp) { return rp.base.covariance; })
      .def(
          "sample",
          [](const RefinedPosterior& rp, Eigen::Index n, std::uint64_t seed) {
            RngStream rng(seed);
            const RefinedSamples s = sample_refined(rp, n, rng);
            return py::make_tuple(s.samples.draws, s.log_density);
          },
          py::arg("n"), py::arg("seed") = 0)
      .def("log_density", &refined_log_density, py::arg("theta"))
      .def("save", [](const RefinedPosterior& rp, const std::string& path) {
        save_posterior(path, rp);
      });

  m.def("load_posterior",
        [](const std::string& path) { return as_refined(load_posterior(path)); });

  // Refines N(mean, cov) on (x, y); returns (posterior, trace JSON).
  m.def(
      "refine",
      [](const Vector& mean, const Matrix& cov, const Matrix& x, const std::vector<int>& y,
         double lambda, int flow_length, int epochs, double lr, std::uint64_t seed,
         int n_classes) {
        const Dataset d = make_dataset(x, y, n_classes);
        const auto [model, lik] = classifier(d);
        RefineConfig rc;
        rc.flow_length = flow_length;
        rc.epochs = epochs;
        rc.learning_rate = lr;
        rc.seed = seed;
        auto [rp, trace] = refine(gaussian(mean, cov, lambda), model, lik, d, lambda, rc);
        return py::make_tuple(std::move(rp), dump(to_json(trace)));
      },
      py::arg("mean"), py::arg("covariance"), py::arg("x"), py::arg("y"),
      py::arg("lambda_") = 1.0, py::arg("flow_length") = 5, py::arg("epochs") = 20,
      py::arg("lr") = 1e-3, py::arg("seed") = 0, py::arg("n_classes") = 0);

  // Experiment drivers; each returns the results document as JSON text.
  m.def(
      "run_mc_grid",
      [](std::int64_t samples, int grid, int repeats, std::uint64_t seed) {
        McGridConfig c;
        c.samples = samples;
        c.grid = grid;
        c.repeats = repeats;
        c.seed = seed;
        py::gil_scoped_release release;
        return dump(mc_grid_json(c, run_mc_grid(c)));
      },
      py::arg("samples") = 100, py::arg("grid") = 50, py::arg("repeats") = 10,
      py::arg("seed") = 0);
  m.def(
      "run_compare",
      [](const Matrix& x, const std::vector<int>& y, const std::vector<std::string>& methods,
         std::optional<double> lambda, std::uint64_t seed) {
        CompareConfig c;
        c.data = make_dataset(x, y, 0);
        c.methods = methods;
        c.bayes.lambda = lambda;
        c.seed = seed;
        py::gil_scoped_release release;
        const Json run = compare_run_json(seed, run_compare(c));
        return dump(multi_seed_document("compare", {run}, "methods", "method",
                                        {"nll", "ece", "brier", "accuracy", "mmd"}));
      },
      py::arg("x"), py::arg("y"), py::arg("methods"), py::arg("lambda_") = py::none(),
      py::arg("seed") = 0);
  m.def(
      "run_toy2d",
      [](const std::vector<int>& flow_lengths, std::uint64_t seed) {
        Toy2dConfig c;
        c.flow_lengths = flow_lengths;
        c.seed = seed;
        py::gil_scoped_release release;
        const Json run = toy2d_run_json(seed, run_toy2d(c));
        return dump(multi_seed_document("toy-2d", {run}, "rows", "method", {"mmd"}));
      },
      py::arg("flow_lengths") = std::vector<int>{1, 5, 10}, py::arg("seed") = 0);
}
