#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "wdis/commands.hpp"

int main(int argc, char** argv) {
  using namespace wdis;
  CLI::App app{"Feature disentanglement with Wasserstein critics on synthetic data"};
  app.require_subcommand(1, 1);

  std::string config_path, out_dir, backend = "identity", data_dir, checkpoint, resume;
  std::uint64_t seed = 0;
  for (const auto& name : command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--out", out_dir, "output directory (default: $WDIS_OUT, then config out_dir)");
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--data", data_dir, "dataset directory (default: <out>/data)");
    if (name == "compose-guides") {
      sub->add_option("--backend", backend, "identity or remote:http://host:port/path");
    }
    if (name == "probe") sub->add_option("--checkpoint", checkpoint, "model checkpoint to probe");
    if (name == "train") sub->add_option("--resume", resume, "checkpoint to continue from");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << error_json(ErrorCode::kUsage, e.what()) << "\n";
    return 2;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    CommandOptions opt;
    opt.name = sub->get_name();
    opt.config = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (sub->count("--seed")) opt.config.seed = seed;
    if (!out_dir.empty()) {
      opt.config.out_dir = out_dir;
    } else if (const char* env = std::getenv("WDIS_OUT"); env && *env) {
      opt.config.out_dir = env;
    }
    opt.backend = backend;
    if (!data_dir.empty()) opt.data_dir = data_dir;
    if (!checkpoint.empty()) opt.checkpoint = checkpoint;
    if (!resume.empty()) opt.resume = resume;
    run_command(opt, std::cout);
  } catch (const Error& e) {
    std::cerr << error_json(e.code(), e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << error_json(ErrorCode::kIo, e.what()) << "\n";
    return 1;
  }
  return 0;
}
