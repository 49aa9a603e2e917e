#include "spim/commands.hpp"

#include <Eigen/Core>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "spim/errors.hpp"
#include "spim/predict.hpp"

namespace spim {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_text(const RunConfig &c, const std::string &name, const std::string &text) {
  fs::create_directories(c.out);
  std::ofstream out(fs::path(c.out) / name, std::ios::binary);
  if (!out) {
    throw ConfigError("cannot write " + (fs::path(c.out) / name).string());
  }
  out << text;
  if (!out) {
    throw Error("write failed: " + (fs::path(c.out) / name).string());
  }
}

void write_manifest(const RunConfig &c, const std::string &command,
                    const std::vector<std::string> &outputs) {
  json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["config_hash"] = config_hash(c);
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["compiler"] = __VERSION__;
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
               "." + std::to_string(EIGEN_MINOR_VERSION);
  j["outputs"] = outputs;
  j["config"] = json::parse(config_json(c));
  write_text(c, "manifest_" + command + ".json", j.dump(2) + "\n");
}

json complex_matrix(const CMatrix &m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
      row.push_back({m(i, k).real(), m(i, k).imag()});
    }
    rows.push_back(row);
  }
  return rows;
}

std::string join_paths(const std::vector<int> &paths) {
  std::string s;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    s += (i ? "-" : "") + std::to_string(paths[i]);
  }
  return s;
}

std::uint64_t fnv_file(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char ch;
  while (in.get(ch)) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<LocalDataset> load_users(const RunConfig &c, const std::string &data_dir) {
  const fs::path dir = data_dir.empty() ? fs::path(c.out) : fs::path(data_dir);
  std::vector<LocalDataset> out;
  for (int u = 0; u < c.scenario.users; ++u) {
    const fs::path p = dir / ("user_" + std::to_string(u) + ".bin");
    if (!fs::exists(p)) {
      throw ConfigError("dataset file missing: " + p.string() + " (run `spimctl dataset` first)");
    }
    LocalDataset d = load_dataset(p.string(), u);
    const DatasetHeader &h = d.header;
    if (int(h.n_rx) != c.scenario.n_rx || int(h.n_tx) != c.scenario.n_tx ||
        int(h.planes) != c.data.planes || int(h.users) != c.scenario.users ||
        int(h.paths) != c.scenario.paths) {
      throw ConfigError("dataset " + p.string() + " does not match the configuration");
    }
    if (!out.empty() && d.samples.size() != out.front().samples.size()) {
      throw ConfigError("user datasets differ in size");
    }
    out.push_back(std::move(d));
  }
  return out;
}

} // namespace

std::vector<std::string> cmd_design(const RunConfig &c) {
  const Realization real = make_realization(c.scenario, c.design, c.seed, 0);
  const BeamformerBank &bank = real.bank;
  json jb;
  jb["n_tx"] = bank.n_tx;
  jb["n_rx"] = bank.n_rx;
  jb["users"] = bank.users;
  jb["paths"] = bank.paths;
  jb["patterns"] = json::array();
  std::string csv = "pattern,paths,valid,power,zf_residual,condition,power_check\n";
  for (const PatternEntry &e : bank.patterns) {
    json jp;
    jp["index"] = e.pattern.index;
    jp["paths"] = e.pattern.paths;
    jp["valid"] = e.valid;
    if (e.valid) {
      jp["f_rf"] = complex_matrix(e.beams.f_rf);
      jp["f_bb"] = complex_matrix(e.f_bb);
      json w = json::array();
      for (const CVector &v : e.beams.w_rf) {
        w.push_back(complex_matrix(v));
      }
      jp["w_rf"] = w;
    } else {
      jp["diagnostic"] = e.diagnostic;
    }
    jb["patterns"].push_back(jp);
    const bool ok = e.valid && std::abs(e.power - double(c.scenario.users)) <= 1e-8 &&
                    e.zf_residual <= 1e-8;
    csv += std::to_string(e.pattern.index) + "," + join_paths(e.pattern.paths) + "," +
           (e.valid ? "true" : "false") + "," + fmt(e.power) + "," + fmt(e.zf_residual) + "," +
           fmt(e.condition) + "," + (ok ? "true" : "false") + "\n";
  }
  write_text(c, "bank.json", jb.dump() + "\n");
  write_text(c, "design_summary.csv", csv);
  std::vector<std::string> files = {"bank.json", "design_summary.csv"};
  write_manifest(c, "design", files);
  return files;
}

std::vector<std::string> cmd_sweep(const RunConfig &c, SweepKind kind) {
  SweepSpec spec;
  spec.kind = kind;
  spec.grid = kind == SweepKind::snr ? c.snr_grid : c.gamma1_grid;
  spec.trials = c.trials;
  spec.index_bits = c.index_bits;
  const auto rows = sweep(spec, c.scenario, c.design);
  const std::string name = "sweep_" + to_string(kind) + ".csv";
  write_text(c, name, sweep_csv(rows));
  std::vector<std::string> files = {name};
  write_manifest(c, "sweep_" + to_string(kind), files);
  return files;
}

std::vector<std::string> cmd_dataset(const RunConfig &c) {
  const auto data = generate_all(c.scenario, c.design, c.data, c.seed);
  fs::create_directories(c.out);
  std::vector<std::string> files;
  std::string csv = "user,samples,input_size,output_size,checksum\n";
  for (const LocalDataset &d : data) {
    const std::string name = "user_" + std::to_string(d.user) + ".bin";
    save_dataset(d, (fs::path(c.out) / name).string());
    char sum[17];
    std::snprintf(sum, sizeof sum, "%016llx",
                  static_cast<unsigned long long>(fnv_file(fs::path(c.out) / name)));
    csv += std::to_string(d.user) + "," + std::to_string(d.samples.size()) + "," +
           std::to_string(d.header.input_size()) + "," + std::to_string(d.header.output_size()) +
           "," + sum + "\n";
    files.push_back(name);
  }
  write_text(c, "dataset_summary.csv", csv);
  files.push_back("dataset_summary.csv");
  write_manifest(c, "dataset", files);
  return files;
}

std::vector<std::string> cmd_train(const RunConfig &c, TrainMode mode, const std::string &data_dir) {
  const auto data = load_users(c, data_dir);
  const std::size_t count = data.front().samples.size();
  const Split split = split_indices(count, c.validation_fraction, c.seed);
  NetworkArch arch = c.network();
  FlOptions opts;
  opts.rounds = c.rounds;
  opts.seed = c.seed;
  opts.workers = c.workers;

  TrainResult result;
  std::vector<Sample> pooled;
  if (mode == TrainMode::fl) {
    std::vector<UserData> users;
    for (const LocalDataset &d : data) {
      users.push_back({d.samples, split.train, split.validation});
    }
    result = train_fl(users, arch, c.train, opts);
  } else {
    UserData all;
    for (std::size_t u = 0; u < data.size(); ++u) {
      const std::size_t base = u * count;
      pooled.insert(pooled.end(), data[u].samples.begin(), data[u].samples.end());
      for (const std::size_t k : split.train) {
        all.train.push_back(base + k);
      }
      for (const std::size_t k : split.validation) {
        all.validation.push_back(base + k);
      }
    }
    all.samples = pooled;
    result = train_cl(all, pooled.size(), c.scenario.users, arch, c.train, opts);
  }

  const std::string tag = mode == TrainMode::fl ? "fl" : "cl";
  fs::create_directories(c.out);
  save_checkpoint(result.state.model, result.state.velocity,
                  (fs::path(c.out) / ("model_" + tag + ".bin")).string());
  write_text(c, "train_" + tag + ".csv", training_log_csv(result.log));
  const OverheadLedger &l = result.ledger;
  write_text(c, "ledger_" + tag + ".csv",
             "scheme,uplink_symbols,downlink_symbols,total_symbols,blocks\n" +
                 to_string(l.scheme) + "," + std::to_string(l.uplink) + "," +
                 std::to_string(l.downlink) + "," + std::to_string(l.total()) + "," +
                 std::to_string(l.blocks()) + "\n");
  std::vector<std::string> files = {"model_" + tag + ".bin", "train_" + tag + ".csv",
                                    "ledger_" + tag + ".csv"};
  write_manifest(c, "train_" + tag, files);
  return files;
}

std::string overhead_csv(const RunConfig &c) {
  const NetworkArch arch = c.network();
  const std::uint64_t t = std::uint64_t(c.rounds), u = std::uint64_t(c.scenario.users);
  const std::uint64_t d = c.total_samples();
  struct Row {
    Scheme scheme;
    std::uint64_t params;
    std::uint64_t symbols;
  };
  const std::uint64_t p_drop = param_count(arch, arch.keep());
  const std::uint64_t p_full = param_count(arch, 1.0);
  const Row rows[] = {
      {Scheme::fl_dropout, p_drop, overhead_fl(p_drop, t, u)},
      {Scheme::fl_full, p_full, overhead_fl(p_full, t, u)},
      {Scheme::cl, 0, overhead_cl(std::uint64_t(c.scenario.n_tx), std::uint64_t(c.scenario.n_rx),
                                  u, d)},
  };
  std::string csv = "scheme,params,rounds,users,samples,symbols,blocks\n";
  for (const Row &r : rows) {
    const bool fl = r.scheme != Scheme::cl;
    csv += to_string(r.scheme) + "," + (fl ? std::to_string(r.params) : "") + "," +
           (fl ? std::to_string(t) : "") + "," + std::to_string(u) + "," +
           (fl ? "" : std::to_string(d)) + "," + std::to_string(r.symbols) + "," +
           std::to_string((r.symbols + kBlockSymbols - 1) / kBlockSymbols) + "\n";
  }
  return csv;
}

std::vector<std::string> cmd_overhead(const RunConfig &c) {
  write_text(c, "overhead.csv", overhead_csv(c));
  std::vector<std::string> files = {"overhead.csv"};
  write_manifest(c, "overhead", files);
  return files;
}

std::vector<std::string> cmd_eval(const RunConfig &c, const std::string &data_dir,
                                  const std::string &model_path) {
  const auto data = load_users(c, data_dir);
  const fs::path mp = model_path.empty() ? fs::path(c.out) / "model_fl.bin" : fs::path(model_path);
  if (!fs::exists(mp)) {
    throw ConfigError("model file missing: " + mp.string() + " (run `spimctl train` first)");
  }
  const Checkpoint ck = load_checkpoint(mp.string());
  const NetworkArch want = c.network();
  if (ck.model.arch.n_rx != want.n_rx || ck.model.arch.n_tx != want.n_tx ||
      ck.model.arch.channels != want.channels || ck.model.arch.output_dim != want.output_dim) {
    throw ConfigError("checkpoint " + mp.string() + " does not match the configuration");
  }
  const Split split = split_indices(data.front().samples.size(), c.validation_fraction, c.seed);
  double mse = 0.0;
  for (const LocalDataset &d : data) {
    mse += evaluate_mse<float>(ck.model, d.samples, split.validation, c.workers);
  }
  mse /= double(data.size());
  const ValidationRates vr =
      validation_rates(ck.model, data, split.validation, c.scenario, c.design, c.data, c.seed,
                       c.scenario.noise_var, c.index_bits, c.workers);
  std::string csv = "metric,value\n";
  csv += "snr_db," + fmt(c.snr_db) + "\n";
  csv += "samples," + std::to_string(vr.samples) + "\n";
  csv += "val_mse," + fmt(mse) + "\n";
  csv += "spim_mo_se," + fmt(vr.spim_mo) + "\n";
  csv += "spim_fl_se," + fmt(vr.spim_fl) + "\n";
  csv += "ratio," + fmt(vr.spim_fl / vr.spim_mo) + "\n";
  write_text(c, "eval.csv", csv);
  std::vector<std::string> files = {"eval.csv"};
  write_manifest(c, "eval", files);
  return files;
}

int run_guarded(const std::function<void()> &body) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

} // namespace spim
