// Command-line front end: simulate / train / evaluate / benchmark.
//
// Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "annotmix/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"annotmix: classification from multiple error-prone annotators"};
  app.require_subcommand(1);

  annotmix::CliOptions opts;
  std::string command;
  std::optional<long long> seed_flag;

  auto add_common = [&](CLI::App* sub, bool with_seed, bool with_jobs) {
    sub->add_option("--config", opts.config, "JSON config file")->required();
    sub->add_option("--out", opts.out, "output run directory (must not already hold a run)")
        ->required();
    if (with_seed)
      sub->add_option("--seed", seed_flag, "override the seed in the config");
    if (with_jobs)
      sub->add_option("--jobs", opts.jobs, "parallel benchmark cells")
          ->check(CLI::PositiveNumber);
    sub->callback([&, sub]() { command = sub->get_name(); });
  };

  add_common(app.add_subcommand("simulate", "train weak annotators and write an annotation set"),
             true, false);
  add_common(app.add_subcommand("train", "fit a model on annotations"), true, false);
  add_common(app.add_subcommand("evaluate", "score a checkpoint and write report.json"), false,
             false);
  add_common(app.add_subcommand("benchmark", "methods x seeds grid with a summary table"), false,
             true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? annotmix::kExitOk : annotmix::kExitConfig;
  }
  if (seed_flag) {
    if (*seed_flag < 0) {
      std::cerr << "config error: --seed must be non-negative\n";
      return annotmix::kExitConfig;
    }
    opts.seed = static_cast<std::uint64_t>(*seed_flag);
  }
  return annotmix::run_command(command, opts);
}
