#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "qembed/experiment.hpp"

namespace fs = std::filesystem;
using namespace qembed;

int main(int argc, char** argv) {
  CLI::App app{"Randomized embedding of discrete queue parameters: sweeps, exact oracle, optimizers"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;

  auto* run = app.add_subcommand("run", "Run one experiment config (JSON)");
  std::string config;
  run->add_option("config", config, "Experiment config file, or a protocol name from list-protocols")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out, "Output directory (default results/<config name>)");
  run->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* cmp = app.add_subcommand("compare-oracle", "Compare a simulated sweep CSV with an exact oracle CSV");
  std::string sim_csv, exact_csv;
  cmp->add_option("simulated", sim_csv, "Sweep CSV")->required();
  cmp->add_option("exact", exact_csv, "Oracle CSV")->required();

  auto* list = app.add_subcommand("list-protocols", "List the bundled experiment protocols");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*run) {
      fs::path path = config;
      if (!fs::exists(path) && path.extension().empty()) {
        const auto bundled = default_protocol_dir() / (config + ".json");
        if (fs::exists(bundled)) path = bundled;
      }
      RunOptions opts;
      opts.seed = seed;
      opts.jobs = jobs;
      opts.out = out.empty() ? fs::path("results") / path.stem() : fs::path(out);
      const auto report = run_config_file(path, opts);
      for (const auto& a : report.artifacts) std::cout << a.string() << '\n';
      std::cout << (opts.out / "manifest.json").string() << '\n';
    } else if (*cmp) {
      const auto result = compare_oracle_files(sim_csv, exact_csv);
      write_comparison(std::cout, result);
      return result.pass ? kExitOk : kExitCompareFailed;
    } else if (*list) {
      for (const auto& p : list_protocols()) {
        std::cout << fmt::format("{:<14} {:<13} {}\n", p.name, p.kind, p.description);
      }
    }
  } catch (const std::exception& e) {
    const int code = exit_code_for_current_exception();
    std::cerr << "qembed: " << e.what() << '\n';
    return code;
  }
  return kExitOk;
}
