#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "privdistil/cli/config.hpp"
#include "privdistil/cli/registry.hpp"

namespace privdistil::cli {

struct CommandOptions {
  std::optional<std::string> run_id;
  std::optional<uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

datamodel::DatasetManifest cmd_procgen(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log);
void cmd_train_translator(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log);
datamodel::DatasetManifest cmd_synth(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log);
void cmd_train(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log);
void cmd_eval(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log);
void cmd_saliency(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log);
void cmd_report(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log);

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Full command-line entry point (verb + flags); returns the exit code.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace privdistil::cli
