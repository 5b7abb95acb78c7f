#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "overlap/cli.hpp"

namespace {

using nlohmann::json;
using namespace overlap;

enum Exit { kOk = 0, kInput = 2, kSolver = 3, kDegenerate = 4 };

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
}

int report_error(const std::string& kind, const std::string& message, int code) {
  const json e = {{"schema_version", kSchemaVersion}, {"error", kind}, {"message", message}};
  std::cout << e.dump() << '\n';
  std::cerr << "error (" << kind << "): " << message << '\n';
  return code;
}

void add_common(CLI::App* sub, cli::CommonConfig& c, std::vector<double>& eps_set) {
  sub->add_option("--input", c.input, "dataset CSV (x1..xd, y, z, pi[, sigma])")->required();
  sub->add_option("--alpha", c.alpha, "miscoverage level")->check(CLI::Range(1e-12, 1.0 - 1e-12));
  sub->add_option("--epsilon", c.epsilon, "fixed trimming threshold");
  sub->add_option("--epsilon-set", eps_set, "candidate thresholds for epsilon selection")->delimiter(',');
  sub->add_option("--j", c.j, "neighbours of the noise estimator when sigma is missing")->check(CLI::PositiveNumber);
  sub->add_option("--knn", c.knn, "neighbours of the default outcome regressor")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Minimax inference for treatment effects under limited overlap"};
  app.require_subcommand(1);
  std::string output;
  bool strict = false;
  app.add_option("--output", output, "output file (default stdout)");
  app.add_flag("--strict", strict, "exit with code 4 on degenerate-estimand warnings");

  cli::AnalyzeConfig an;
  std::vector<double> an_eps;
  auto* analyze = app.add_subcommand("analyze", "AIPW, AIPWP, MP, M and MC intervals as JSON");
  add_common(analyze, an, an_eps);
  analyze->add_option("--L", an.L, "Lipschitz constant");
  analyze->add_option("--percentile", an.percentile, "contextualize L at this quantile when --L is absent");

  cli::SensitivityConfig se;
  std::vector<double> se_eps;
  auto* sens = app.add_subcommand("sensitivity", "MP over a grid of Lipschitz constants (CSV)");
  add_common(sens, se, se_eps);
  sens->add_option("--L", se.L, "explicit Lipschitz constants (bypass contextualization)")->delimiter(',');
  sens->add_option("--percentiles", se.percentiles, "quantile grid for contextualized L")->delimiter(',');

  std::string cov_config, cov_summary;
  cli::CoverageConfig cov;
  std::vector<std::string> cov_methods;
  auto* coverage = app.add_subcommand("coverage", "Monte Carlo coverage and half-length per method (CSV)");
  coverage->add_option("--config", cov_config, "JSON experiment spec; flags below override it");
  coverage->add_option("--summary", cov_summary, "write the JSON summary here");
  coverage->add_option("--eta", cov.eta, "example1 non-overlap parameter grid")->delimiter(',');
  coverage->add_option("--L", cov.spec.L, "Lipschitz constant");
  coverage->add_option("--reps", cov.spec.reps, "replications per grid point");
  coverage->add_option("--seed", cov.spec.seed, "master seed");
  coverage->add_option("--alpha", cov.spec.alpha, "miscoverage level");
  coverage->add_option("--methods", cov_methods, "subset of AIPW,AIPWP,MP,M,MC")->delimiter(',');
  coverage->add_option("--epsilon-set", cov.spec.epsilon_set, "candidate thresholds")->delimiter(',');

  cli::SimulateConfig sim;
  std::string truth_path;
  auto* simulate = app.add_subcommand("simulate", "write a simulated dataset as CSV");
  simulate->add_option("--dgp", sim.dgp, "example1 | toy | rct | sampling");
  simulate->add_option("--seed", sim.seed, "seed");
  simulate->add_option("--n", sim.example1.n, "units (example1)");
  simulate->add_option("--eta", sim.example1.eta, "non-overlap parameter (example1)");
  simulate->add_option("--o", sim.example1.o, "overlap parameter (example1)");
  simulate->add_option("--kappa", sim.kappa, "propensity-map parameter (rct); -1 disables limited overlap");
  simulate->add_option("--truth", truth_path, "also write f(x,0), f(x,1), tau per unit");

  cli::SampleOptionsConfig so;
  auto* sample = app.add_subcommand("sample-options", "expected MP length after each sampling option (CSV)");
  sample->add_option("--input", so.input, "dataset CSV (default: simulated sampling design)");
  sample->add_option("--epsilon", so.epsilon, "trimming threshold");
  sample->add_option("--L", so.L, "Lipschitz constants")->delimiter(',');
  sample->add_option("--alpha", so.alpha, "miscoverage level");
  sample->add_option("--n-mc", so.n_mc, "treatment draws per option");
  sample->add_option("--seed", so.seed, "seed");
  sample->add_option("--j", so.j, "noise-estimator neighbours");

  cli::ConfseqConfig cs;
  auto* confseq = app.add_subcommand("confseq", "confidence sequence over continual-sampling epochs (JSON lines)");
  confseq->add_option("--L", cs.spec.L, "Lipschitz constant");
  confseq->add_option("--epsilon", cs.spec.epsilon, "trimming threshold");
  confseq->add_option("--alpha", cs.spec.alpha, "miscoverage level");
  confseq->add_option("--seed", cs.spec.seed, "seed");
  confseq->add_option("--designs", cs.designs, "designs for a Monte Carlo coverage summary (0 = none)");
  confseq->add_option("--noise-reps", cs.noise_reps, "outcome draws per design");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), kInput);
  }

  try {
    cli::Outcome out;
    if (*analyze) {
      if (!an_eps.empty()) an.epsilon_set = an_eps;
      out = cli::cmd_analyze(an);
      emit(output, out.doc.dump(2) + "\n");
    } else if (*sens) {
      if (!se_eps.empty()) se.epsilon_set = se_eps;
      out = cli::cmd_sensitivity(se);
      emit(output, out.text);
    } else if (*coverage) {
      if (!cov_config.empty()) {
        std::ifstream in(cov_config);
        if (!in) throw InputError("cannot open '" + cov_config + "'");
        json j;
        try {
          in >> j;
        } catch (const json::exception& e) {
          throw InputError(std::string("schema: coverage config is not JSON: ") + e.what());
        }
        cli::CoverageConfig base = cli::coverage_config_from_json(j);
        // command-line flags override the file
        for (const CLI::Option* o : coverage->get_options()) {
          if (o->count() == 0) continue;
          const std::string n = o->get_name();
          if (n == "--eta") base.eta = cov.eta;
          else if (n == "--L") base.spec.L = cov.spec.L;
          else if (n == "--reps") base.spec.reps = cov.spec.reps;
          else if (n == "--seed") base.spec.seed = cov.spec.seed;
          else if (n == "--alpha") base.spec.alpha = cov.spec.alpha;
          else if (n == "--epsilon-set") base.spec.epsilon_set = cov.spec.epsilon_set;
        }
        cov = base;
      }
      if (!cov_methods.empty()) {
        cov.spec.methods.clear();
        for (const auto& m : cov_methods) cov.spec.methods.push_back(parse_method(m));
      }
      out = cli::cmd_coverage(cov);
      emit(output, out.text);
      if (!cov_summary.empty()) emit(cov_summary, out.doc.dump(2) + "\n");
    } else if (*simulate) {
      out = cli::cmd_simulate(sim);
      emit(output, out.text);
      if (!truth_path.empty()) emit(truth_path, out.doc["truth_csv"].get<std::string>());
    } else if (*sample) {
      out = cli::cmd_sample_options(so);
      emit(output, out.text);
    } else if (*confseq) {
      out = cli::cmd_confseq(cs);
      emit(output, out.text);
    }
    for (const auto& w : out.warnings) std::cerr << "warning: " << w << '\n';
    if (strict && out.degenerate) return kDegenerate;
    return kOk;
  } catch (const SolverError& e) {
    return report_error("solver", e.what(), kSolver);
  } catch (const InputError& e) {
    const std::string msg = e.what();
    return report_error(msg.rfind("schema", 0) == 0 ? "schema" : "input", msg, kInput);
  } catch (const DegenerateProblem& e) {
    return report_error("degenerate", e.what(), strict ? kDegenerate : kInput);
  } catch (const Error& e) {
    return report_error("error", e.what(), kInput);
  }
}
