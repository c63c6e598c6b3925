#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cmkl/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 1;
constexpr int kExitRuntimeError = 2;
constexpr int kExitGradCheckFailure = 3;

int cmd_run(const std::string& config_path, const std::string& out_path) {
  cmkl::ExperimentConfig config = cmkl::load_experiment_config(config_path);
  cmkl::ExperimentResult result = cmkl::run_experiment(config);
  cmkl::write_results_file(out_path, result);
  nlohmann::json j = cmkl::experiment_result_json(result);
  std::cout << "method=" << config.method << " seeds=" << config.seeds.size()
            << " ap=" << j["aggregate"]["ap_mean"].dump()
            << " af=" << j["aggregate"]["af_mean"].dump() << "\n";
  std::cout << "results written to " << out_path << "\n";
  return kExitOk;
}

int cmd_matrix(const std::string& config_path, const std::string& sweep_path, const std::string& out_dir) {
  cmkl::ExperimentConfig base = cmkl::load_experiment_config(config_path);
  std::ifstream in(sweep_path);
  if (!in) throw std::runtime_error("cannot open sweep " + sweep_path);
  nlohmann::json sweep = nlohmann::json::parse(in);
  nlohmann::json matrix = cmkl::run_matrix(base, sweep, out_dir);
  std::string json_path = out_dir + "/matrix.json";
  std::string csv_path = out_dir + "/matrix.csv";
  {
    std::ofstream out(json_path);
    out << matrix.dump(2) << '\n';
  }
  cmkl::write_matrix_csv(matrix, csv_path);
  int failed = 0;
  for (const auto& cell : matrix.at("cells")) {
    if (cell.at("status") != "ok") ++failed;
    std::cout << cell.at("label").get<std::string>() << ": " << cell.at("status").get<std::string>() << "\n";
  }
  std::cout << "matrix written to " << json_path << " and " << csv_path << "\n";
  return failed == 0 ? kExitOk : kExitRuntimeError;
}

int cmd_gradcheck(const std::string& config_path, double tol) {
  cmkl::FusionKind fusion = cmkl::FusionKind::Moe;
  std::uint64_t seed = 42;
  if (!config_path.empty()) {
    cmkl::ExperimentConfig config = cmkl::load_experiment_config(config_path);
    cmkl::ExperimentConfig resolved = config;
    cmkl::apply_method(resolved);
    fusion = resolved.model.fusion;
    if (!config.seeds.empty()) seed = config.seeds.front();
  }
  cmkl::GradCheckOptions options;
  options.tol = tol;
  cmkl::GradCheckReport report = cmkl::harness_gradcheck(fusion, cmkl::LossTerms::Full, seed, options);
  for (const auto& t : report.tensors) {
    std::printf("%-16s %-24s max_rel_err=%.3e %s\n", cmkl::group_name(t.group), t.name.c_str(),
                t.max_rel_error, t.passed ? "ok" : "FAIL");
  }
  std::printf("gradcheck %s (max %.3e, tol %.1e)\n", report.passed ? "PASSED" : "FAILED",
              report.max_rel_error, tol);
  return report.passed ? kExitOk : kExitGradCheckFailure;
}

int cmd_gen_synthetic(const std::string& config_path, const std::string& out_dir) {
  cmkl::ExperimentConfig config = cmkl::load_experiment_config(config_path);
  auto [seq, features] = cmkl::generate_synthetic(config.synth, config.synth_seed);
  cmkl::save_dataset_dir(out_dir, seq, features);
  std::cout << "wrote " << seq.tasks.size() << " tasks, " << seq.num_entities() << " entities, "
            << seq.num_relations() << " relations to " << out_dir << "\n";
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& files, const std::string& out_csv) {
  cmkl::collate_reports(files, out_csv);
  std::cout << "collated " << files.size() << " results into " << out_csv << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual multimodal KG embedding engine"};
  app.require_subcommand(1);

  std::string config_path, out_path = "results.json", sweep_path, out_dir = "matrix_out";
  double tol = 1e-4;
  std::vector<std::string> report_files;
  std::string report_out = "report.csv";

  CLI::App* run = app.add_subcommand("run", "run one experiment across its seeds");
  run->add_option("--config", config_path, "experiment config (json)")->required();
  run->add_option("--out", out_path, "results file");

  CLI::App* matrix = app.add_subcommand("matrix", "run a sweep over lambda/buffer/fusion/method");
  matrix->add_option("--config", config_path, "base experiment config")->required();
  matrix->add_option("--sweep", sweep_path, "sweep spec (json)")->required();
  matrix->add_option("--out-dir", out_dir, "output directory");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full loss");
  gradcheck->add_option("--config", config_path, "optional config (fusion + first seed are used)");
  gradcheck->add_option("--tol", tol, "relative-error tolerance");

  CLI::App* gen = app.add_subcommand("gen-synthetic", "write a synthetic benchmark to disk");
  gen->add_option("--config", config_path, "experiment config with dataset.synthetic")->required();
  gen->add_option("--out-dir", out_dir, "dataset directory")->required();

  CLI::App* report = app.add_subcommand("report", "collate results files into a csv");
  report->add_option("--in", report_files, "results json files")->required();
  report->add_option("--out", report_out, "output csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, out_path);
    if (matrix->parsed()) return cmd_matrix(config_path, sweep_path, out_dir);
    if (gradcheck->parsed()) return cmd_gradcheck(config_path, tol);
    if (gen->parsed()) return cmd_gen_synthetic(config_path, out_dir);
    if (report->parsed()) return cmd_report(report_files, report_out);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  return kExitConfigError;
}
