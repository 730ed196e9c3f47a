// Command-line driver: binds models, families, scores, estimators,
// regularizers and optimizers from a JSON config, then runs experiments.
//
//   pvi run       --config c.json --out dir [--seed N]
//   pvi gradcheck --config c.json --out dir
//   pvi eval      --config c.json --phi phi_final.json --data test.csv --out dir
//   pvi sweep     --config c.json --out dir [--jobs N]
//
// Exit codes: 0 ok, 1 runtime/tolerance failure, 2 validation failure.

#include <pvi/runner.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <thread>

namespace {

void print_error(const std::string& kind, const std::string& what) {
  pvi::Json err;
  err["error"] = kind;
  err["message"] = what;
  std::cout << err.dump(2) << std::endl;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const pvi::ConfigError& e) {
    print_error("validation", e.what());
    return 2;
  } catch (const pvi::ContractError& e) {
    print_error("validation", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"predictive variational inference driver"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", phi_path, data_path;
  std::int64_t seed_override = -1;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  auto* run = app.add_subcommand("run", "optimize one configuration end to end");
  run->add_option("--config", config_path, "config file")->required();
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--seed", seed_override, "override the optimizer seed");

  auto* gradcheck = app.add_subcommand("gradcheck", "frozen-batch gradient verification");
  gradcheck->add_option("--config", config_path, "config file")->required();
  gradcheck->add_option("--out", out_dir, "output directory");

  auto* eval = app.add_subcommand("eval", "held-out scores and heterogeneity report");
  eval->add_option("--config", config_path, "config file")->required();
  eval->add_option("--phi", phi_path, "phi snapshot (phi_final.json)")->required();
  eval->add_option("--data", data_path, "held-out data csv")->required();
  eval->add_option("--out", out_dir, "output directory");

  auto* sweep = app.add_subcommand("sweep", "cross-product of configured axes");
  sweep->add_option("--config", config_path, "config file")->required();
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--jobs", jobs, "concurrent cells");

  CLI11_PARSE(app, argc, argv);

  return guarded([&]() -> int {
    const pvi::Json config = pvi::read_json(config_path);
    if (run->parsed()) {
      pvi::execute_run(config, out_dir,
                       seed_override >= 0
                           ? std::optional<std::uint64_t>(
                                 static_cast<std::uint64_t>(seed_override))
                           : std::nullopt);
      return 0;
    }
    if (gradcheck->parsed()) {
      const pvi::Json report = pvi::gradcheck_report(config);
      std::filesystem::create_directories(out_dir);
      pvi::write_json(report, out_dir + "/gradcheck.json");
      if (!report.at("pass").get<bool>()) {
        print_error("tolerance", "gradcheck failed; see gradcheck.json");
        return 1;
      }
      return 0;
    }
    if (eval->parsed()) {
      pvi::execute_eval(config, phi_path, data_path, out_dir);
      return 0;
    }
    return pvi::execute_sweep(config, out_dir, jobs);
  });
}
