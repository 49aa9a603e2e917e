#include "spim/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "spim/errors.hpp"

namespace spim {

using nlohmann::json;

namespace {

void check_keys(const json &obj, const std::string &where, const std::set<std::string> &allowed) {
  if (!obj.is_object()) {
    throw ConfigError(where + ": expected an object");
  }
  for (const auto &item : obj.items()) {
    if (!allowed.count(item.key())) {
      throw ConfigError(where + ": unknown key '" + item.key() + "'");
    }
  }
}

template <typename T> void read(const json &obj, const char *key, T &dst, const std::string &where) {
  const auto it = obj.find(key);
  if (it == obj.end()) {
    return;
  }
  try {
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_integer()) {
        throw ConfigError(where + "." + key + ": expected an integer");
      }
      if constexpr (std::is_unsigned_v<T>) {
        if (it->is_number_integer() && !it->is_number_unsigned() && it->get<long long>() < 0) {
          throw ConfigError(where + "." + key + ": expected a non-negative integer");
        }
      }
    }
    dst = it->get<T>();
  } catch (const json::exception &e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::string init_name(AnalogInit i) { return i == AnalogInit::path ? "path" : "random"; }
std::string norm_name(BasebandNorm n) { return n == BasebandNorm::rows ? "rows" : "columns"; }

void overlay(RunConfig &c, const json &j) {
  check_keys(j, "config",
             {"preset", "seed", "workers", "out", "scenario", "altmin", "design", "dataset", "arch",
              "train", "experiment"});
  read(j, "seed", c.seed, "config");
  read(j, "workers", c.workers, "config");
  read(j, "out", c.out, "config");

  if (const auto it = j.find("scenario"); it != j.end()) {
    const std::string w = "scenario";
    check_keys(*it, w,
               {"n_tx", "n_rx", "users", "paths", "snr_db", "theta_min", "theta_max", "gains"});
    read(*it, "n_tx", c.scenario.n_tx, w);
    read(*it, "n_rx", c.scenario.n_rx, w);
    read(*it, "users", c.scenario.users, w);
    read(*it, "paths", c.scenario.paths, w);
    read(*it, "snr_db", c.snr_db, w);
    read(*it, "theta_min", c.scenario.theta_min, w);
    read(*it, "theta_max", c.scenario.theta_max, w);
    read(*it, "gains", c.scenario.gains, w);
  }
  if (const auto it = j.find("altmin"); it != j.end()) {
    const std::string w = "altmin";
    check_keys(*it, w, {"max_outer_iters", "max_cg_iters", "grad_tol", "obj_rel_tol"});
    read(*it, "max_outer_iters", c.design.altmin.max_outer_iters, w);
    read(*it, "max_cg_iters", c.design.altmin.max_cg_iters, w);
    read(*it, "grad_tol", c.design.altmin.grad_tol, w);
    read(*it, "obj_rel_tol", c.design.altmin.obj_rel_tol, w);
  }
  if (const auto it = j.find("design"); it != j.end()) {
    const std::string w = "design";
    check_keys(*it, w, {"init", "baseband_norm"});
    std::string init = init_name(c.design.init), norm = norm_name(c.design.norm);
    read(*it, "init", init, w);
    read(*it, "baseband_norm", norm, w);
    if (init != "path" && init != "random") {
      throw ConfigError("design.init: expected 'path' or 'random'");
    }
    if (norm != "rows" && norm != "columns") {
      throw ConfigError("design.baseband_norm: expected 'rows' or 'columns'");
    }
    c.design.init = init == "path" ? AnalogInit::path : AnalogInit::random;
    c.design.norm = norm == "rows" ? BasebandNorm::rows : BasebandNorm::columns;
  }
  if (const auto it = j.find("dataset"); it != j.end()) {
    const std::string w = "dataset";
    check_keys(*it, w,
               {"realizations", "copies", "snr_train_db", "planes", "fixed_pattern",
                "validation_fraction"});
    read(*it, "realizations", c.data.realizations, w);
    read(*it, "copies", c.data.copies, w);
    read(*it, "snr_train_db", c.data.levels, w);
    read(*it, "planes", c.data.planes, w);
    read(*it, "validation_fraction", c.validation_fraction, w);
    if (const auto fp = it->find("fixed_pattern"); fp != it->end()) {
      if (fp->is_null()) {
        c.data.fixed_pattern.reset();
      } else {
        std::size_t p = 0;
        read(*it, "fixed_pattern", p, w);
        c.data.fixed_pattern = p;
      }
    }
  }
  if (const auto it = j.find("arch"); it != j.end()) {
    const std::string w = "arch";
    check_keys(*it, w,
               {"conv_layers", "filters", "kernel_x", "kernel_y", "fc_units", "dropout_prob"});
    read(*it, "conv_layers", c.arch.conv_layers, w);
    read(*it, "filters", c.arch.filters, w);
    read(*it, "kernel_x", c.arch.kernel_x, w);
    read(*it, "kernel_y", c.arch.kernel_y, w);
    read(*it, "fc_units", c.arch.fc_units, w);
    read(*it, "dropout_prob", c.arch.dropout_prob, w);
  }
  if (const auto it = j.find("train"); it != j.end()) {
    const std::string w = "train";
    check_keys(*it, w, {"learning_rate", "momentum", "batch_size", "rounds"});
    read(*it, "learning_rate", c.train.learning_rate, w);
    read(*it, "momentum", c.train.momentum, w);
    read(*it, "batch_size", c.train.batch_size, w);
    read(*it, "rounds", c.rounds, w);
  }
  if (const auto it = j.find("experiment"); it != j.end()) {
    const std::string w = "experiment";
    check_keys(*it, w, {"snr_db", "gamma1", "trials", "index_bits"});
    read(*it, "snr_db", c.snr_grid, w);
    read(*it, "gamma1", c.gamma1_grid, w);
    read(*it, "trials", c.trials, w);
    read(*it, "index_bits", c.index_bits, w);
  }
}

} // namespace

RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.scenario.n_tx = 128;
  c.scenario.n_rx = 9;
  c.scenario.users = 8;
  c.scenario.paths = 2;
  c.scenario.gains = {0.5, 0.5};
  c.data.realizations = 200;
  c.data.copies = 200;
  c.data.levels = {20.0, 25.0, 30.0};
  c.data.planes = 3;
  c.data.fixed_pattern = 0;
  c.arch = NetworkArch{};
  c.train = TrainConfig{};
  c.rounds = 50;
  c.snr_grid = {0.0, 5.0, 10.0, 15.0, 20.0};
  c.gamma1_grid = {0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};
  c.trials = 1000;
  return c;
}

RunConfig desk_preset() {
  RunConfig c = paper_preset();
  c.preset = "desk";
  c.scenario.n_tx = 32;
  c.scenario.n_rx = 4;
  c.scenario.users = 2;
  c.data.realizations = 50;
  c.data.copies = 10;
  c.data.levels = {20.0};
  c.data.planes = 4;
  c.data.fixed_pattern.reset();
  c.arch.filters = 8;
  c.arch.fc_units = 64;
  c.train.learning_rate = 0.05;
  c.snr_grid = {0.0, 10.0, 20.0};
  c.trials = 200;
  return c;
}

RunConfig make_preset(const std::string &name) {
  if (name == "paper") {
    return paper_preset();
  }
  if (name == "desk") {
    return desk_preset();
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

RunConfig apply_config_text(RunConfig base, const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error &e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (j.is_object()) {
    if (const auto it = j.find("preset"); it != j.end()) {
      if (!it->is_string()) {
        throw ConfigError("config.preset: expected a string");
      }
      base = make_preset(it->get<std::string>());
    }
  }
  overlay(base, j);
  return base;
}

RunConfig apply_config_file(RunConfig base, const std::string &path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("config: cannot open " + path);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return apply_config_text(std::move(base), ss.str());
}

void RunConfig::finalize() {
  if (std::isnan(snr_db) || std::isinf(snr_db)) {
    throw ConfigError("scenario.snr_db must be finite");
  }
  if (workers < 1) {
    throw ConfigError("workers must be >= 1");
  }
  if (out.empty()) {
    throw ConfigError("out must not be empty");
  }
  scenario.noise_var = std::pow(10.0, -snr_db / 10.0);
  scenario.seed = seed;
  scenario.validate();
  design.altmin.seed = seed;
  design.workers = workers;
  design.altmin.validate();
  data.workers = workers;
  data.validate(scenario);
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("dataset.validation_fraction must lie in (0, 1)");
  }
  network().validate();
  train.validate();
  if (rounds < 1) {
    throw ConfigError("train.rounds must be >= 1");
  }
  if (trials < 1) {
    throw ConfigError("experiment.trials must be >= 1");
  }
  if (snr_grid.empty() || gamma1_grid.empty()) {
    throw ConfigError("experiment: snr_db and gamma1 grids must be non-empty");
  }
  for (const double g : gamma1_grid) {
    if (!(g >= 0.0 && g <= 1.0)) {
      throw ConfigError("experiment.gamma1 values must lie in [0, 1]");
    }
  }
  for (const double s : snr_grid) {
    if (!std::isfinite(s)) {
      throw ConfigError("experiment.snr_db values must be finite");
    }
  }
}

NetworkArch RunConfig::network() const {
  NetworkArch a = arch;
  a.n_rx = scenario.n_rx;
  a.n_tx = scenario.n_tx;
  a.channels = data.planes;
  a.output_dim = static_cast<int>(label_size(scenario.n_tx, scenario.users, scenario.n_rx));
  return a;
}

std::uint64_t RunConfig::total_samples() const {
  return std::uint64_t(data.levels.size()) * std::uint64_t(scenario.users) *
         std::uint64_t(data.realizations) * std::uint64_t(data.copies);
}

std::string config_json(const RunConfig &c) {
  json j;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["out"] = c.out;
  j["scenario"] = {{"n_tx", c.scenario.n_tx},           {"n_rx", c.scenario.n_rx},
                   {"users", c.scenario.users},         {"paths", c.scenario.paths},
                   {"snr_db", c.snr_db},                {"theta_min", c.scenario.theta_min},
                   {"theta_max", c.scenario.theta_max}, {"gains", c.scenario.gains}};
  j["altmin"] = {{"max_outer_iters", c.design.altmin.max_outer_iters},
                 {"max_cg_iters", c.design.altmin.max_cg_iters},
                 {"grad_tol", c.design.altmin.grad_tol},
                 {"obj_rel_tol", c.design.altmin.obj_rel_tol}};
  j["design"] = {{"init", init_name(c.design.init)}, {"baseband_norm", norm_name(c.design.norm)}};
  j["dataset"] = {{"realizations", c.data.realizations},
                  {"copies", c.data.copies},
                  {"snr_train_db", c.data.levels},
                  {"planes", c.data.planes},
                  {"fixed_pattern", c.data.fixed_pattern ? json(*c.data.fixed_pattern) : json()},
                  {"validation_fraction", c.validation_fraction}};
  j["arch"] = {{"conv_layers", c.arch.conv_layers}, {"filters", c.arch.filters},
               {"kernel_x", c.arch.kernel_x},       {"kernel_y", c.arch.kernel_y},
               {"fc_units", c.arch.fc_units},       {"dropout_prob", c.arch.dropout_prob}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"momentum", c.train.momentum},
                {"batch_size", c.train.batch_size},
                {"rounds", c.rounds}};
  j["experiment"] = {{"snr_db", c.snr_grid},
                     {"gamma1", c.gamma1_grid},
                     {"trials", c.trials},
                     {"index_bits", c.index_bits}};
  return j.dump(2);
}

std::string config_hash(const RunConfig &c) {
  RunConfig copy = c;
  copy.workers = 1; // results do not depend on it
  const std::string text = config_json(copy);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

} // namespace spim
