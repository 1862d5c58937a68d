// Command-line front end. Every config key is accepted as --key value.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cellsurv/config.hpp"
#include "cellsurv/errors.hpp"
#include "cellsurv/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumerical = 4 };

// Pairs of --key value (or --key=value); a key followed by another flag is a boolean switch.
void apply_overrides(cellsurv::RunConfig& cfg, const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& tok = args[i];
    if (tok.rfind("--", 0) != 0) throw cellsurv::ConfigError("unexpected argument '" + tok + "'");
    std::string key = tok.substr(2);
    std::string value;
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.erase(eq);
    } else if (i + 1 < args.size() && args[i + 1].rfind("--", 0) != 0) {
      value = args[++i];
    } else {
      value = "true";
    }
    std::replace(key.begin(), key.end(), '-', '_');
    cellsurv::set_config_value(cfg, key, value);
  }
}

const std::map<std::string, std::string> kDescriptions{
    {"build-graph", "build KNN graphs from cell tables and write .csg files"},
    {"train", "train one model per seed on all patients"},
    {"cross-validate", "folds x seeds cross-validation with pooled stratification"},
    {"sweep-sparsity", "cross-validate at each sweep_sparsity value"},
    {"sweep-bcp", "cross-validate at each sweep_alphas value"},
    {"evaluate", "score a checkpoint on a cohort"},
    {"generate-synthetic", "write a synthetic cohort as CSV files"},
};

std::string key_list() {
  std::string out = "Config keys (use as --key value or in the config file):\n";
  for (const auto& f : cellsurv::config_fields()) {
    out += "  " + f.key + std::string(f.key.size() < 26 ? 26 - f.key.size() : 1, ' ') + f.help + "\n";
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse multi-modal cellular-graph survival models"};
  app.require_subcommand(1);
  app.footer(key_list());

  std::string config_path;
  std::vector<std::uint64_t> seeds;
  for (const auto& name : cellsurv::kCommands) {
    auto* sub = app.add_subcommand(name, kDescriptions.at(name));
    sub->add_option("-c,--config", config_path, "key = value config file");
    sub->add_option("--seed", seeds, "training seed, repeatable")->take_all()->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    sub->allow_extras();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  auto* sub = app.get_subcommands().front();
  try {
    cellsurv::RunConfig cfg;
    if (!config_path.empty()) cellsurv::apply_config_file(cfg, config_path);
    apply_overrides(cfg, sub->remaining());
    if (!seeds.empty()) cfg.seeds = seeds;
    const auto out = cellsurv::run_command(sub->get_name(), cfg);
    std::cout << out.run_dir.string() << '\n';
    return kOk;
  } catch (const cellsurv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const cellsurv::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kConfig;
  } catch (const cellsurv::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const cellsurv::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const cellsurv::DegenerateInputError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
