// lapref-refine: one subcommand per experiment. Every run writes its
// artifacts plus manifest.json into --out; failures still leave a manifest
// with status "failed" and print a single "error code=... message=..." line.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lapref/data_io.hpp"
#include "lapref/error.hpp"
#include "lapref/experiments.hpp"
#include "lapref/laplace.hpp"
#include "lapref/results_json.hpp"

namespace fs = std::filesystem;
using namespace lapref;

namespace {

// Collects artifact paths (relative to the output directory) as they are written.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }
  const std::vector<std::string>& artifacts() const { return artifacts_; }

  void text(const std::string& rel, const std::string& contents) {
    const fs::path p = prepare(rel);
    write_text_file(p.string(), contents);
    artifacts_.push_back(rel);
  }

  void json(const std::string& rel, const Json& doc) { text(rel, doc.dump(2) + "\n"); }

  void samples(const std::string& rel, const SampleSet& s) {
    save_samples(prepare(rel).string(), s, SamplesFormat::kCsv);
    artifacts_.push_back(rel);
  }

  void posterior(const std::string& rel, const RefinedPosterior& rp) {
    save_posterior(prepare(rel).string(), rp);
    artifacts_.push_back(rel);
  }

 private:
  fs::path prepare(const std::string& rel) {
    const fs::path p = root_ / rel;
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw Error(ErrorCode::kIoError, "cannot create " + p.parent_path().string());
    return p;
  }

  fs::path root_;
  std::vector<std::string> artifacts_;
};

// Fixed-precision CSV builder; 17 significant digits round-trip doubles.
class Csv {
 public:
  explicit Csv(const std::string& header) { out_ << header << '\n'; out_.precision(17); }

  template <typename... Ts>
  void row(const Ts&... values) {
    bool first = true;
    ((out_ << (first ? "" : ",") << values, first = false), ...);
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

std::string optional_cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s.precision(17);
  s << *v;
  return s.str();
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

struct Common {
  std::string out;
  std::uint64_t seed = 0;
  int seeds = 1;
};

void add_common(CLI::App* cmd, Common& c, bool multi_seed) {
  cmd->add_option("--out", c.out, "Output directory")->required();
  cmd->add_option("--seed", c.seed, "Base seed")->capture_default_str();
  if (multi_seed)
    cmd->add_option("--seeds", c.seeds, "Number of consecutive seeds starting at --seed")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
}

std::optional<Dataset> optional_csv(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_features_csv(path);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

// ---------------------------------------------------------------- mc-grid

void cmd_mc_grid(const McGridConfig& c, OutputDir& out) {
  const McGridResult r = run_mc_grid(c);
  const ErrorGrid& g = r.grid;
  Csv mc("m,s,mean_error,max_error"), probit("m,s,error");
  for (std::size_t i = 0; i < g.m_values.size(); ++i)
    for (std::size_t j = 0; j < g.s_values.size(); ++j) {
      const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
      mc.row(g.m_values[i], g.s_values[j], g.mc_mean_error(a, b), g.mc_max_error(a, b));
      probit.row(g.m_values[i], g.s_values[j], g.probit_error(a, b));
    }
  out.text("mc_error.csv", mc.str());
  out.text("probit_error.csv", probit.str());
  out.json("summary.json", mc_grid_json(c, r));
}

// ----------------------------------------------------------------- toy-2d

void cmd_toy2d(Toy2dConfig c, const Common& common, OutputDir& out) {
  std::vector<Json> runs;
  for (int k = 0; k < common.seeds; ++k) {
    c.seed = common.seed + static_cast<std::uint64_t>(k);
    const Toy2dResult r = run_toy2d(c);
    const std::string dir = "seed_" + std::to_string(c.seed) + "/";
    for (const auto& [name, s] : r.samples) out.samples(dir + "samples_" + name + ".csv", s);
    Csv mmd("method,mmd");
    for (const auto& [name, v] : r.mmd) mmd.row(name, v);
    out.text(dir + "mmd.csv", mmd.str());
    for (const DensityGrid& g : r.densities) {
      Csv kde("w0,w1,density");
      for (std::size_t i = 0; i < g.x.size(); ++i)
        for (std::size_t j = 0; j < g.y.size(); ++j)
          kde.row(g.x[i], g.y[j],
                  g.density(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      out.text(dir + "density_" + g.method + ".csv", kde.str());
    }
    runs.push_back(toy2d_run_json(c.seed, r));
  }
  out.json("results.json", multi_seed_document("toy-2d", runs, "rows", "method", {"mmd"}));
}

// ----------------------------------------------------------------- refine

struct RefineArgs {
  std::string data, in_posterior;
  std::optional<double> lambda;
  int flow_length = 5;
  int epochs = RefineConfig{}.epochs;
  double lr = RefineConfig{}.learning_rate;
  std::int64_t samples = 20;
};

constexpr std::uint64_t kCliRefineStream = 0x636c69;

void cmd_refine(const RefineArgs& a, const Common& common, OutputDir& out) {
  const Dataset data = a.data.empty() ? make_mixture(MixtureTask{}, common.seed)
                                      : load_features_csv(a.data);
  data.validate();
  if (data.is_regression())
    throw Error(ErrorCode::kInvalidArgument, "refine: needs a classification dataset");
  RngStream root(common.seed, kCliRefineStream);
  RngStream split_rng = root.split(0);
  const DataSplit split = split_dataset(data, 0.2, 0.1, split_rng);
  const Model model = LinearModel{static_cast<int>(data.n_features()), data.n_classes, true};
  const Likelihood lik = Likelihood::categorical();

  GaussianPosterior base;
  double lambda = 0.0;
  Json tuning;
  if (!a.in_posterior.empty()) {
    const PosteriorFile file = load_posterior(a.in_posterior);
    base = file.base;
    if (base.mean.size() != model_dim(model))
      throw Error(ErrorCode::kDimensionMismatch,
                  "refine: posterior dimension does not match the data");
    lambda = a.lambda ? *a.lambda : base.prior_precision;
  } else {
    BayesConfig bc;
    bc.lambda = a.lambda;
    const FittedBase fitted = fit_base(model, lik, split, bc, common.seed);
    base = fitted.la;
    lambda = fitted.lambda;
    if (fitted.tuning) tuning = to_json(*fitted.tuning);
  }

  RefineConfig rc;
  rc.flow_length = a.flow_length;
  rc.epochs = a.epochs;
  rc.learning_rate = a.lr;
  rc.seed = root.split(1).next_u64();
  const auto [rp, trace] = refine(base, model, lik, split.train, lambda, rc);
  out.posterior("refined_posterior.json", rp);

  Csv steps("step,elbo,learning_rate");
  for (std::size_t i = 0; i < trace.step_elbo.size(); ++i)
    steps.row(i, trace.step_elbo[i], trace.step_lr[i]);
  out.text("elbo_steps.csv", steps.str());
  Csv epochs("epoch,elbo,seconds");
  for (std::size_t i = 0; i < trace.epoch_elbo.size(); ++i)
    epochs.row(i, trace.epoch_elbo[i], trace.epoch_seconds[i]);
  out.text("elbo_epochs.csv", epochs.str());

  // Common base noise: both predictives draw from copies of one stream.
  const RngStream noise = root.split(2);
  RngStream base_rng = noise, refined_rng = noise;
  const Matrix p_base =
      mc_predictive(base.sample(a.samples, base_rng), model, lik, split.test.features).probs;
  const Matrix p_refined =
      mc_predictive(sample_refined(rp, a.samples, refined_rng).samples, model, lik,
                    split.test.features)
          .probs;
  for (const auto& [name, p] : {std::pair{"la", &p_base}, std::pair{"refined", &p_refined}}) {
    std::string header;
    for (Eigen::Index k = 0; k < p->cols(); ++k) header += (k ? ",p" : "p") + std::to_string(k);
    Csv csv(header + ",label");
    for (Eigen::Index i = 0; i < p->rows(); ++i) {
      std::ostringstream line;
      line.precision(17);
      for (Eigen::Index k = 0; k < p->cols(); ++k) line << (k ? "," : "") << (*p)(i, k);
      csv.row(line.str(), split.test.labels[i]);
    }
    out.text(std::string("predictive_") + name + ".csv", csv.str());
  }

  Json doc = {{"format_version", kResultsFormatVersion},
              {"kind", "refine"},
              {"seed", common.seed},
              {"lambda", lambda},
              {"flow_length", a.flow_length},
              {"epochs", a.epochs},
              {"learning_rate", a.lr},
              {"trace", to_json(trace)},
              {"base_metrics", to_json(evaluate_predictions("la", p_base, split.test.labels,
                                                            a.samples, common.seed))},
              {"refined_metrics",
               to_json(evaluate_predictions("la-refine-" + std::to_string(a.flow_length),
                                            p_refined, split.test.labels, a.samples,
                                            common.seed))}};
  if (!tuning.is_null()) doc["tuning"] = tuning;
  out.json("results.json", doc);
}

// ---------------------------------------------------------------- compare

void cmd_compare(CompareConfig c, const Common& common, OutputDir& out) {
  std::vector<Json> runs;
  Csv csv("seed,method,nll,ece,brier,accuracy,mmd,samples,seconds");
  for (int k = 0; k < common.seeds; ++k) {
    c.seed = common.seed + static_cast<std::uint64_t>(k);
    const CompareResult r = run_compare(c);
    for (const MethodOutcome& m : r.rows)
      csv.row(c.seed, m.method.name, m.metrics.nll, m.metrics.ece, m.metrics.brier,
              m.metrics.accuracy, optional_cell(m.metrics.mmd), m.metrics.samples, m.seconds);
    runs.push_back(compare_run_json(c.seed, r));
  }
  out.text("metrics.csv", csv.str());
  out.json("results.json",
           multi_seed_document("compare", runs, "methods", "method",
                               {"nll", "ece", "brier", "accuracy", "mmd", "seconds"}));
}

// ------------------------------------------------------------ ablate-flow

void cmd_ablate(AblateConfig c, const Common& common, OutputDir& out) {
  std::vector<Json> runs;
  Csv csv("seed,base,length,nll,ece,accuracy,final_elbo,seconds");
  for (int k = 0; k < common.seeds; ++k) {
    c.seed = common.seed + static_cast<std::uint64_t>(k);
    const AblateResult r = run_ablate(c);
    for (const AblationRow& row : r.rows)
      csv.row(c.seed, ablation_base_name(row.base), row.length, row.nll, row.ece, row.accuracy,
              row.final_elbo, row.seconds);
    runs.push_back(ablate_run_json(c.seed, r));
  }
  out.text("ablation.csv", csv.str());
  out.json("results.json", multi_seed_document("ablate-flow", runs, "rows", "name",
                                               {"nll", "ece", "accuracy", "seconds"}));
}

// -------------------------------------------------------------------- ood

void cmd_ood(OodConfig c, const Common& common, OutputDir& out) {
  std::vector<Json> runs;
  Csv csv("seed,method,fpr95,mean_confidence_in,mean_confidence_out");
  for (int k = 0; k < common.seeds; ++k) {
    c.seed = common.seed + static_cast<std::uint64_t>(k);
    const OodResult r = run_ood(c);
    for (const OodRow& row : r.rows)
      csv.row(c.seed, row.method.name, row.fpr95, row.mean_confidence_in,
              row.mean_confidence_out);
    runs.push_back(ood_run_json(c.seed, r));
  }
  out.text("ood.csv", csv.str());
  out.json("results.json",
           multi_seed_document("ood", runs, "rows", "method",
                               {"fpr95", "mean_confidence_in", "mean_confidence_out"}));
}

// --------------------------------------------------------- mc-vs-analytic

void cmd_mc_vs_analytic(const McVsAnalyticConfig& c, OutputDir& out) {
  const McVsAnalyticResult r = run_mc_vs_analytic(c);
  Csv reg("x,mc_mean,mc_std,lin_mean,lin_std");
  for (const RegressionComparisonRow& row : r.regression)
    reg.row(row.x, row.mc_mean, row.mc_std, row.lin_mean, row.lin_std);
  out.text("regression.csv", reg.str());
  Csv grid("x0,x1,mc_confidence,mpa_confidence");
  for (const GridComparisonRow& row : r.grid)
    grid.row(row.x0, row.x1, row.mc_confidence, row.mpa_confidence);
  out.text("grid.csv", grid.str());
  Csv lin("point,via_samples_p1,via_outputs_p1,standard_error");
  for (Eigen::Index i = 0; i < r.linear.via_samples.rows(); ++i)
    lin.row(i, r.linear.via_samples(i, 1), r.linear.via_outputs(i, 1),
            r.linear.standard_error[i]);
  out.text("linear_control.csv", lin.str());
  out.json("results.json", mc_vs_analytic_json(c, r));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow refinement of Gaussian posteriors: experiment runner"};
  app.set_version_flag("--version", library_version());
  app.require_subcommand(1);
  Common common;
  Json config;
  std::function<void(OutputDir&)> action;

  // mc-grid
  McGridConfig grid;
  std::vector<double> m_range{grid.m_min, grid.m_max}, s_range{grid.s_min, grid.s_max};
  auto* mc = app.add_subcommand("mc-grid", "MC vs probit error surfaces");
  mc->add_option("--s-samples", grid.samples)->capture_default_str();
  mc->add_option("--m-range", m_range)->expected(2)->delimiter(',')->capture_default_str();
  mc->add_option("--s-range", s_range)->expected(2)->delimiter(',')->capture_default_str();
  mc->add_option("--grid", grid.grid)->capture_default_str();
  mc->add_option("--repeats", grid.repeats)->capture_default_str();
  add_common(mc, common, false);
  mc->callback([&] {
    grid.m_min = m_range[0];
    grid.m_max = m_range[1];
    grid.s_min = s_range[0];
    grid.s_max = s_range[1];
    grid.seed = common.seed;
    config = {{"s_samples", grid.samples}, {"m_range", m_range}, {"s_range", s_range},
              {"grid", grid.grid},         {"repeats", grid.repeats}};
    action = [&](OutputDir& out) { cmd_mc_grid(grid, out); };
  });

  // toy-2d
  Toy2dConfig toy;
  auto* t2 = app.add_subcommand("toy-2d", "LA / VB / refined LA vs HMC on the 2D toy");
  t2->add_option("--flow-lengths", toy.flow_lengths)->delimiter(',')->capture_default_str();
  t2->add_option("--mmd-samples", toy.mmd_samples)->capture_default_str();
  add_common(t2, common, true);
  t2->callback([&] {
    config = {{"flow_lengths", toy.flow_lengths}, {"mmd_samples", toy.mmd_samples},
              {"lambda", toy.lambda}, {"seeds", common.seeds}};
    action = [&](OutputDir& out) { cmd_toy2d(toy, common, out); };
  });

  // refine
  RefineArgs ra;
  auto* rf = app.add_subcommand("refine", "Refine a Laplace posterior with a radial flow");
  rf->add_option("--data", ra.data, "Feature CSV (default: generated mixture task)");
  rf->add_option("--lambda", ra.lambda, "Prior precision (default: tuned or from posterior)");
  rf->add_option("--flow-length", ra.flow_length)->capture_default_str();
  rf->add_option("--epochs", ra.epochs)->capture_default_str();
  rf->add_option("--lr", ra.lr)->capture_default_str();
  rf->add_option("--s-samples", ra.samples)->capture_default_str();
  rf->add_option("--in-posterior", ra.in_posterior, "Gaussian posterior file to refine");
  add_common(rf, common, false);
  rf->callback([&] {
    config = {{"data", ra.data},       {"flow_length", ra.flow_length}, {"epochs", ra.epochs},
              {"lr", ra.lr},           {"s_samples", ra.samples},
              {"in_posterior", ra.in_posterior}};
    if (ra.lambda) config["lambda"] = *ra.lambda;
    action = [&](OutputDir& out) { cmd_refine(ra, common, out); };
  });

  // compare
  CompareConfig cmp;
  std::string cmp_data, cmp_methods = "map,map-temp,la,la-refine-5,vb,hmc";
  std::optional<double> cmp_lambda;
  auto* cp = app.add_subcommand("compare", "Per-method calibration metrics");
  cp->add_option("--data", cmp_data, "Feature CSV (default: generated mixture task)");
  cp->add_option("--methods", cmp_methods)->capture_default_str();
  cp->add_option("--s-samples", cmp.bayes.mc_samples)->capture_default_str();
  cp->add_option("--lambda", cmp_lambda, "Prior precision (default: tuned)");
  add_common(cp, common, true);
  cp->callback([&] {
    cmp.methods = split_commas(cmp_methods);
    cmp.bayes.lambda = cmp_lambda;
    config = {{"data", cmp_data}, {"methods", cmp.methods},
              {"s_samples", cmp.bayes.mc_samples}, {"seeds", common.seeds}};
    if (cmp_lambda) config["lambda"] = *cmp_lambda;
    action = [&](OutputDir& out) {
      cmp.data = optional_csv(cmp_data);
      parse_methods(cmp.methods);
      cmd_compare(cmp, common, out);
    };
  });

  // ablate-flow
  AblateConfig abl;
  std::string abl_data, abl_bases = "la,standard-normal";
  auto* ab = app.add_subcommand("ablate-flow", "NLL and cost vs flow length per base");
  ab->add_option("--lengths", abl.lengths)->delimiter(',')->capture_default_str();
  ab->add_option("--base", abl_bases, "la, standard-normal, or both comma separated")
      ->capture_default_str();
  ab->add_option("--data", abl_data, "Feature CSV (default: generated mixture task)");
  add_common(ab, common, true);
  ab->callback([&] {
    config = {{"lengths", abl.lengths}, {"base", split_commas(abl_bases)},
              {"data", abl_data}, {"seeds", common.seeds}};
    action = [&](OutputDir& out) {
      abl.bases.clear();
      for (const std::string& b : split_commas(abl_bases)) abl.bases.push_back(parse_ablation_base(b));
      abl.data = optional_csv(abl_data);
      cmd_ablate(abl, common, out);
    };
  });

  // ood
  OodConfig ood;
  std::string ood_in, ood_out, ood_methods = "map,la,la-refine-5";
  auto* od = app.add_subcommand("ood", "FPR95 of max-probability scores");
  od->add_option("--in-data", ood_in, "In-distribution CSV (default: generated mixture task)");
  od->add_option("--out-data", ood_out, "Out-of-distribution CSV (default: fresh modes)");
  od->add_option("--methods", ood_methods)->capture_default_str();
  add_common(od, common, true);
  od->callback([&] {
    ood.methods = split_commas(ood_methods);
    config = {{"in_data", ood_in}, {"out_data", ood_out}, {"methods", ood.methods},
              {"seeds", common.seeds}};
    action = [&](OutputDir& out) {
      parse_methods(ood.methods);
      ood.in_data = optional_csv(ood_in);
      if (!ood_out.empty()) ood.out_data = load_features_csv(ood_out, ood.in_data ? ood.in_data->n_classes : 0);
      cmd_ood(ood, common, out);
    };
  });

  // mc-vs-analytic
  McVsAnalyticConfig mva;
  std::string mva_data;
  auto* mv = app.add_subcommand("mc-vs-analytic", "MC vs linearized / MPA predictives");
  mv->add_option("--data", mva_data, "Regression CSV (default: toy regression)");
  mv->add_option("--grid2d", mva.grid2d)->check(CLI::PositiveNumber)->capture_default_str();
  mv->add_option("--s-samples", mva.mc_samples)->capture_default_str();
  add_common(mv, common, false);
  mv->callback([&] {
    mva.seed = common.seed;
    config = {{"data", mva_data}, {"grid2d", mva.grid2d}, {"s_samples", mva.mc_samples}};
    action = [&](OutputDir& out) {
      if (!mva_data.empty()) mva.regression_data = load_features_csv(mva_data);
      cmd_mc_vs_analytic(mva, out);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error code=InvalidArgument message=\"" << one_line(e.what()) << "\"\n";
    return 2;
  }

  RunManifest manifest;
  manifest.subcommand = app.get_subcommands().front()->get_name();
  manifest.config = config;
  manifest.seed = common.seed;
  OutputDir out(common.out);
  const auto start = std::chrono::steady_clock::now();
  int status = 0;
  try {
    action(out);
  } catch (const Error& e) {
    manifest.ok = false;
    manifest.error = std::string(error_code_name(e.code())) + ": " + one_line(e.what());
    std::cerr << "error code=" << error_code_name(e.code()) << " message=\"" << one_line(e.what())
              << "\"\n";
    status = 1;
  } catch (const std::exception& e) {
    manifest.ok = false;
    manifest.error = "Internal: " + one_line(e.what());
    std::cerr << "error code=Internal message=\"" << one_line(e.what()) << "\"\n";
    status = 1;
  }
  manifest.artifacts = out.artifacts();
  manifest.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  try {
    std::error_code ec;
    fs::create_directories(out.root(), ec);
    write_text_file((out.root() / "manifest.json").string(), to_json(manifest).dump(2) + "\n");
  } catch (const Error& e) {
    std::cerr << "error code=" << error_code_name(e.code()) << " message=\"" << one_line(e.what())
              << "\"\n";
    return 1;
  }
  return status;
}
