#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dgpmpc/inference.hpp"
#include "dgpmpc/kernels.hpp"
#include "dgpmpc/planning.hpp"

namespace dgpmpc {

struct RunConfig {
  std::string env = "cartpole-modified";
  Index layers = 2;
  std::vector<KernelFamily> kernels{KernelFamily::kMatern32};  // one entry, or one per layer
  Index inducing = 200;
  PlannerConfig planner;
  SghmcConfig sghmc;
  HyperOptConfig hyper;
  Index episodes = 15;
  Index task_horizon = 200;
  Index metric_episodes = 15;
  std::uint64_t seed = 0;
  bool oracle_dynamics = false;
  std::string out = "runs/out";

  KernelFamily kernel_for_layer(Index l) const;
  void validate() const;  // throws ConfigError
  bool operator==(const RunConfig&) const = default;
};

// Presets: "cartpole" (H 30), "reacher" (H 20), "cheetah" (H 40, 10 CEM
// iterations, 2 actions per replan).
void apply_preset(RunConfig& config, const std::string& preset);
RunConfig default_config(const std::string& env);

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Parses "key = value" lines; '#' starts a comment. Errors carry the line.
KeyValues parse_config_text(std::istream& in, const std::string& source);

// Resolves defaults < file < overrides. "env" and "preset" are applied
// first so their defaults never clobber explicit keys.
RunConfig resolve_config(const KeyValues& file_values, const KeyValues& overrides);
RunConfig load_config(const std::string& path, const KeyValues& overrides = {});

// Writes every resolved key; the result re-parses to an equal RunConfig.
void write_config(std::ostream& out, const RunConfig& config);

}  // namespace dgpmpc
