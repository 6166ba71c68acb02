#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "otrack/experiment.hpp"

namespace {

std::vector<double> parse_eps_list(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto comma = text.find(',', pos);
    const std::string tok = text.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (!tok.empty()) out.push_back(std::stod(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

void print_report(const otrack::LinearizingReport& rep) {
  std::printf("linearizing assumption: %s\n", rep.ok() ? "satisfied" : "NOT satisfied");
  std::printf("  omega constant: %s (max deviation %.3e)\n", rep.omega_constant ? "yes" : "no",
              rep.omega_max_deviation);
  std::printf("  Q R affine:     %s (max residual  %.3e)\n", rep.qr_affine ? "yes" : "no",
              rep.qr_max_residual);
  std::printf("  samples: %d, tol %.1e\n", rep.samples_used, rep.tol);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"optimal trajectory tracking via singular perturbation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::string method_override;
  std::string eps_csv;
  double sample_dt = 0.0;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
    cmd->add_option("--out", out_override, "output directory override");
  };

  CLI::App* solve = app.add_subcommand("solve", "run the configured method");
  add_config(solve);
  solve->add_option("--method", method_override, "override config method");

  CLI::App* check = app.add_subcommand("check", "verify the linearizing assumption");
  add_config(check);

  CLI::App* compare = app.add_subcommand("compare", "composite vs oracle comparison");
  add_config(compare);

  CLI::App* sweep = app.add_subcommand("sweep", "composite solves across epsilons");
  add_config(sweep);
  sweep->add_option("--epsilon", eps_csv, "comma-separated epsilon list")->required();

  CLI::App* feedback = app.add_subcommand("feedback", "sampled-data feedback simulation");
  add_config(feedback);
  feedback->add_option("--sample-dt", sample_dt, "time between state measurements")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    otrack::ExperimentConfig cfg = otrack::parse_config(config_path);
    const std::filesystem::path out_dir = out_override.empty() ? cfg.output : out_override;

    if (check->parsed()) {
      const auto problem = cfg.to_problem();
      const auto report = otrack::verify_linearizing(
          problem.system, problem.S, otrack::detail::linearizing_samples(cfg, problem),
          cfg.linearizing ? cfg.linearizing->tol : 1e-8);
      print_report(report);
      std::filesystem::create_directories(out_dir);
      otrack::write_json_file(out_dir / "report.json", otrack::report_to_json(report));
      return report.ok() ? 0 : otrack::exit_code(otrack::ErrorCode::NotLinearizable);
    }

    if (sweep->parsed()) {
      const auto eps_list = parse_eps_list(eps_csv);
      const auto rows = otrack::epsilon_sweep(cfg, eps_list);
      otrack::emit_sweep(rows, out_dir);
      std::printf("eps          layer_width  u_peak       interior_dev J\n");
      for (const auto& r : rows)
        std::printf("%-12.4e %-12.4e %-12.4e %-12.4e %-12.6e\n", r.eps, r.layer_width, r.u_peak,
                    r.interior_deviation, r.cost);
      return 0;
    }

    if (feedback->parsed()) {
      const auto traj = otrack::sampled_feedback(cfg, sample_dt);
      std::filesystem::create_directories(out_dir);
      otrack::write_trajectory_csv(out_dir / "trajectory.csv", traj);
      std::printf("closed-loop simulation written (%zu samples)\n", traj.grid.size());
      return 0;
    }

    if (compare->parsed()) cfg.method = "compare";
    if (solve->parsed() && !method_override.empty()) cfg.method = method_override;

    const auto result = otrack::run_experiment(cfg);
    otrack::emit_outputs(result, out_dir);
    print_report(result.report);
    for (const auto& [key, value] : result.scalar_metrics)
      std::printf("  %-24s %.10e\n", key.c_str(), value);
    std::printf("outputs in %s\n", out_dir.string().c_str());
    return 0;
  } catch (const otrack::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return otrack::exit_code(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
