#include "dgpmpc/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace dgpmpc {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

Index parse_index(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return static_cast<Index>(out);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<KernelFamily> parse_kernels(const std::string& key, const std::string& v) {
  std::vector<KernelFamily> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(parse_kernel_family(trim(item)));
    } catch (const std::exception& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  if (out.empty()) throw ConfigError(key + ": no kernel given");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"layers", [](RunConfig& c, const std::string& k, const std::string& v) { c.layers = parse_index(k, v); }},
      {"kernel", [](RunConfig& c, const std::string& k, const std::string& v) { c.kernels = parse_kernels(k, v); }},
      {"inducing", [](RunConfig& c, const std::string& k, const std::string& v) { c.inducing = parse_index(k, v); }},
      {"episodes", [](RunConfig& c, const std::string& k, const std::string& v) { c.episodes = parse_index(k, v); }},
      {"task-horizon", [](RunConfig& c, const std::string& k, const std::string& v) { c.task_horizon = parse_index(k, v); }},
      {"metric-episodes", [](RunConfig& c, const std::string& k, const std::string& v) { c.metric_episodes = parse_index(k, v); }},
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
      {"oracle-dynamics", [](RunConfig& c, const std::string& k, const std::string& v) { c.oracle_dynamics = parse_bool(k, v); }},
      {"out", [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; }},
      {"particles", [](RunConfig& c, const std::string& k, const std::string& v) { c.planner.num_particles = parse_index(k, v); }},
      {"popsize", [](RunConfig& c, const std::string& k, const std::string& v) { c.planner.num_sequences = parse_index(k, v); }},
      {"horizon", [](RunConfig& c, const std::string& k, const std::string& v) { c.planner.horizon = parse_index(k, v); }},
      {"cem-iters", [](RunConfig& c, const std::string& k, const std::string& v) { c.planner.cem_iterations = parse_index(k, v); }},
      {"elite-frac", [](RunConfig& c, const std::string& k, const std::string& v) { c.planner.elite_fraction = parse_double(k, v); }},
      {"actions-per-replan", [](RunConfig& c, const std::string& k, const std::string& v) { c.planner.actions_per_replan = parse_index(k, v); }},
      {"include-noise", [](RunConfig& c, const std::string& k, const std::string& v) { c.planner.include_noise = parse_bool(k, v); }},
      {"workers", [](RunConfig& c, const std::string& k, const std::string& v) { c.planner.workers = parse_index(k, v); }},
      {"step-size", [](RunConfig& c, const std::string& k, const std::string& v) { c.sghmc.step_size = parse_double(k, v); }},
      {"friction", [](RunConfig& c, const std::string& k, const std::string& v) { c.sghmc.friction = parse_double(k, v); }},
      {"noise-estimate", [](RunConfig& c, const std::string& k, const std::string& v) { c.sghmc.noise_estimate = parse_double(k, v); }},
      {"mass", [](RunConfig& c, const std::string& k, const std::string& v) { c.sghmc.mass = parse_double(k, v); }},
      {"burn-in", [](RunConfig& c, const std::string& k, const std::string& v) { c.sghmc.burn_in_steps = parse_index(k, v); }},
      {"thinning", [](RunConfig& c, const std::string& k, const std::string& v) { c.sghmc.thinning = parse_index(k, v); }},
      {"reservoir", [](RunConfig& c, const std::string& k, const std::string& v) { c.sghmc.reservoir_size = parse_index(k, v); }},
      {"minibatch", [](RunConfig& c, const std::string& k, const std::string& v) { c.sghmc.minibatch_size = parse_index(k, v); }},
      {"step-budget", [](RunConfig& c, const std::string& k, const std::string& v) { c.sghmc.step_budget = parse_index(k, v); }},
      {"hyper-lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.hyper.learning_rate = parse_double(k, v); }},
      {"hyper-interval", [](RunConfig& c, const std::string& k, const std::string& v) { c.hyper.hyper_interval = parse_index(k, v); }},
      {"optimize-inducing", [](RunConfig& c, const std::string& k, const std::string& v) { c.hyper.optimize_inducing_inputs = parse_bool(k, v); }},
      {"min-lengthscale", [](RunConfig& c, const std::string& k, const std::string& v) { c.hyper.min_lengthscale = parse_double(k, v); }},
      {"max-lengthscale", [](RunConfig& c, const std::string& k, const std::string& v) { c.hyper.max_lengthscale = parse_double(k, v); }},
      {"min-signal-variance", [](RunConfig& c, const std::string& k, const std::string& v) { c.hyper.min_signal_variance = parse_double(k, v); }},
      {"max-signal-variance", [](RunConfig& c, const std::string& k, const std::string& v) { c.hyper.max_signal_variance = parse_double(k, v); }},
      {"min-noise-precision", [](RunConfig& c, const std::string& k, const std::string& v) { c.hyper.min_noise_precision = parse_double(k, v); }},
      {"max-noise-precision", [](RunConfig& c, const std::string& k, const std::string& v) { c.hyper.max_noise_precision = parse_double(k, v); }},
  };
  return table;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

KernelFamily RunConfig::kernel_for_layer(Index l) const {
  if (kernels.size() == 1) return kernels.front();
  return kernels.at(static_cast<std::size_t>(l));
}

void RunConfig::validate() const {
  auto wrap = [](const std::function<void()>& f) {
    try {
      f();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  };
  if (env != "cartpole-modified" && env != "cartpole-center" && env != "reacher")
    throw ConfigError("env: unknown environment '" + env + "'");
  if (layers < 1) throw ConfigError("layers: must be >= 1");
  if (kernels.size() != 1 && static_cast<Index>(kernels.size()) != layers)
    throw ConfigError("kernel: give one family or one per layer");
  if (inducing < 1) throw ConfigError("inducing: must be >= 1");
  if (episodes < 1) throw ConfigError("episodes: must be >= 1");
  if (task_horizon < 1) throw ConfigError("task-horizon: must be >= 1");
  if (metric_episodes < 1) throw ConfigError("metric-episodes: must be >= 1");
  if (!(planner.elite_fraction > 0.0 && planner.elite_fraction <= 1.0))
    throw ConfigError("elite-frac: must lie in (0, 1], got " + format_double(planner.elite_fraction));
  wrap([&] { planner.validate(); });
  wrap([&] { sghmc.validate(); });
  wrap([&] { hyper.validate(); });
}

void apply_preset(RunConfig& config, const std::string& preset) {
  config.planner.num_sequences = 300;
  config.planner.num_particles = 5;
  config.planner.elite_fraction = 0.1;
  if (preset == "cartpole") {
    config.planner.horizon = 30;
    config.planner.cem_iterations = 5;
    config.planner.actions_per_replan = 1;
    config.metric_episodes = 15;
  } else if (preset == "reacher") {
    config.planner.horizon = 20;
    config.planner.cem_iterations = 5;
    config.planner.actions_per_replan = 1;
    config.metric_episodes = 15;
  } else if (preset == "cheetah") {
    config.planner.horizon = 40;
    config.planner.cem_iterations = 10;
    config.planner.actions_per_replan = 2;
    config.metric_episodes = 10;
  } else {
    throw ConfigError("preset: unknown preset '" + preset + "'");
  }
}

RunConfig default_config(const std::string& env) {
  RunConfig c;
  c.env = env;
  if (env == "reacher") {
    apply_preset(c, "reacher");
    c.task_horizon = 150;
  } else {
    apply_preset(c, "cartpole");
    c.task_horizon = 200;
  }
  return c;
}

KeyValues parse_config_text(std::istream& in, const std::string& source) {
  KeyValues out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string body = line;
    bool quoted = false;
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (body[i] == '"') quoted = !quoted;
      if (body[i] == '#' && !quoted) {
        body.resize(i);
        break;
      }
    }
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = unquote(trim(body.substr(eq + 1)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (key != "env" && key != "preset" && !setters().count(key))
      throw ConfigError(where + ": unknown key '" + key + "'");
    out.emplace_back(key, value);
  }
  return out;
}

RunConfig resolve_config(const KeyValues& file_values, const KeyValues& overrides) {
  std::map<std::string, std::string> merged;
  std::vector<std::string> order;
  for (const KeyValues* src : {&file_values, &overrides}) {
    for (const auto& [k, v] : *src) {
      if (k != "env" && k != "preset" && !setters().count(k))
        throw ConfigError("unknown key '" + k + "'");
      if (!merged.count(k)) order.push_back(k);
      merged[k] = v;
    }
  }
  RunConfig c = default_config(merged.count("env") ? merged["env"] : RunConfig{}.env);
  if (merged.count("preset")) apply_preset(c, merged["preset"]);
  for (const auto& k : order) {
    if (k == "env" || k == "preset") continue;
    setters().at(k)(c, k, merged[k]);
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path, const KeyValues& overrides) {
  KeyValues file_values;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    file_values = parse_config_text(in, path);
  }
  return resolve_config(file_values, overrides);
}

void write_config(std::ostream& out, const RunConfig& c) {
  std::string kernels;
  for (std::size_t i = 0; i < c.kernels.size(); ++i)
    kernels += std::string(i ? "," : "") + std::string(to_string(c.kernels[i]));
  auto b = [](bool v) { return v ? "true" : "false"; };
  auto d = format_double;
  out << "env = \"" << c.env << "\"\n"
      << "layers = " << c.layers << '\n'
      << "kernel = \"" << kernels << "\"\n"
      << "inducing = " << c.inducing << '\n'
      << "episodes = " << c.episodes << '\n'
      << "task-horizon = " << c.task_horizon << '\n'
      << "metric-episodes = " << c.metric_episodes << '\n'
      << "seed = " << c.seed << '\n'
      << "oracle-dynamics = " << b(c.oracle_dynamics) << '\n'
      << "out = \"" << c.out << "\"\n"
      << "particles = " << c.planner.num_particles << '\n'
      << "popsize = " << c.planner.num_sequences << '\n'
      << "horizon = " << c.planner.horizon << '\n'
      << "cem-iters = " << c.planner.cem_iterations << '\n'
      << "elite-frac = " << d(c.planner.elite_fraction) << '\n'
      << "actions-per-replan = " << c.planner.actions_per_replan << '\n'
      << "include-noise = " << b(c.planner.include_noise) << '\n'
      << "workers = " << c.planner.workers << '\n'
      << "step-size = " << d(c.sghmc.step_size) << '\n'
      << "friction = " << d(c.sghmc.friction) << '\n'
      << "noise-estimate = " << d(c.sghmc.noise_estimate) << '\n'
      << "mass = " << d(c.sghmc.mass) << '\n'
      << "burn-in = " << c.sghmc.burn_in_steps << '\n'
      << "thinning = " << c.sghmc.thinning << '\n'
      << "reservoir = " << c.sghmc.reservoir_size << '\n'
      << "minibatch = " << c.sghmc.minibatch_size << '\n'
      << "step-budget = " << c.sghmc.step_budget << '\n'
      << "hyper-lr = " << d(c.hyper.learning_rate) << '\n'
      << "hyper-interval = " << c.hyper.hyper_interval << '\n'
      << "optimize-inducing = " << b(c.hyper.optimize_inducing_inputs) << '\n'
      << "min-lengthscale = " << d(c.hyper.min_lengthscale) << '\n'
      << "max-lengthscale = " << d(c.hyper.max_lengthscale) << '\n'
      << "min-signal-variance = " << d(c.hyper.min_signal_variance) << '\n'
      << "max-signal-variance = " << d(c.hyper.max_signal_variance) << '\n'
      << "min-noise-precision = " << d(c.hyper.min_noise_precision) << '\n'
      << "max-noise-precision = " << d(c.hyper.max_noise_precision) << '\n';
}

}  // namespace dgpmpc
