#pragma once

// The chartnet command line: gen, train, eval and ask.

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>

#include "chartnet/train.hpp"

namespace chartnet {

enum ExitCode { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2 };

struct CliHooks {
  // Replaces checkpoint loading for eval and ask; tests inject fake models.
  std::function<std::unique_ptr<Model<float>>(const std::filesystem::path&, CheckpointInfo*)> load_model;
};

// Checkpoint metadata written by train: chart type and the full vocabulary,
// so ask needs nothing but the checkpoint.
nlohmann::json checkpoint_metadata(ChartType type, const Vocab& vocab);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err, const CliHooks& hooks = {});

}  // namespace chartnet
