#include "spim/federated.hpp"

#include <cstdio>
#include <random>

#include "spim/errors.hpp"
#include "spim/rng.hpp"

namespace spim {

std::string to_string(Scheme s) {
  switch (s) {
  case Scheme::fl_dropout:
    return "fl-dropout";
  case Scheme::fl_full:
    return "fl-full";
  case Scheme::cl:
    return "cl";
  }
  return "unknown";
}

std::uint64_t overhead_fl(std::uint64_t p, std::uint64_t rounds, std::uint64_t users) {
  return 2 * p * rounds * users;
}

std::uint64_t overhead_cl(std::uint64_t n_tx, std::uint64_t n_rx, std::uint64_t users,
                          std::uint64_t samples) {
  return (3 * n_tx * n_rx + 2 * n_tx * users + n_rx) * samples;
}

std::uint64_t active_parameters(const NetworkArch &arch, const DropoutMask &mask) {
  if (static_cast<int>(mask.keep.size()) != arch.fc_inputs()) {
    throw ShapeError("active_parameters: mask does not match architecture");
  }
  return param_count(arch, 0.0) + std::uint64_t(mask.active()) * std::uint64_t(arch.fc_units);
}

LocalUpdate local_gradient(const Model<float> &model, const DropoutMask &mask,
                           std::span<const Sample> samples, std::span<const std::size_t> batch,
                           int workers) {
  if (samples.empty() || batch.empty()) {
    throw ConfigError("local_gradient: empty local dataset");
  }
  BatchGradient<float> g = batch_gradient<float>(model, samples, batch, &mask, workers);
  return {std::move(g.grad), std::move(g.stats)};
}

void aggregate(ServerState &state, std::span<const std::optional<LocalUpdate>> updates,
               const TrainConfig &config) {
  if (updates.empty()) {
    throw ProtocolError("aggregate: no user updates");
  }
  for (std::size_t u = 0; u < updates.size(); ++u) {
    if (!updates[u]) {
      throw ProtocolError("aggregate: missing gradient from user " + std::to_string(u));
    }
    if (updates[u]->grad.size() != state.model.theta.size()) {
      throw ProtocolError("aggregate: gradient of user " + std::to_string(u) + " has wrong length");
    }
  }
  std::vector<float> mean(state.model.theta.size(), 0.0f);
  BatchStats stats;
  for (const auto &up : updates) {
    for (std::size_t i = 0; i < mean.size(); ++i) {
      mean[i] += up->grad[i];
    }
    stats.merge(up->stats);
  }
  const float inv = 1.0f / float(updates.size());
  for (float &v : mean) {
    v *= inv;
  }
  if (state.velocity.empty()) {
    state.velocity.assign(state.model.theta.size(), 0.0f);
  }
  sgd_momentum_step<float>(state.model.theta, state.velocity, mean, config);
  update_norm_stats(state.model, stats);
}

std::vector<std::size_t> draw_batch(std::span<const std::size_t> pool, int batch_size,
                                    std::uint64_t seed, int user, int round) {
  std::vector<std::size_t> v(pool.begin(), pool.end());
  if (v.size() <= std::size_t(batch_size)) {
    return v;
  }
  Rng rng = make_rng(seed, {stream::kBatch, std::uint64_t(user), std::uint64_t(round)});
  for (std::size_t i = 0; i < std::size_t(batch_size); ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, v.size() - 1)(rng);
    std::swap(v[i], v[j]);
  }
  v.resize(std::size_t(batch_size));
  return v;
}

namespace {

double validation_mse(const Model<float> &model, std::span<const UserData> users, int workers) {
  double total = 0.0;
  std::size_t count = 0;
  for (const UserData &u : users) {
    if (u.validation.empty()) {
      continue;
    }
    total += evaluate_mse<float>(model, u.samples, u.validation, workers) * double(u.validation.size());
    count += u.validation.size();
  }
  return count ? total / double(count) : 0.0;
}

DropoutMask round_mask(const NetworkArch &arch, std::uint64_t seed, int round) {
  return arch.dropout_prob > 0.0 ? make_mask(arch, seed, std::uint64_t(round)) : full_mask(arch);
}

void check_users(std::span<const UserData> users, const NetworkArch &arch) {
  if (users.empty()) {
    throw ConfigError("training: no users");
  }
  for (std::size_t u = 0; u < users.size(); ++u) {
    if (users[u].samples.empty() || users[u].train.empty()) {
      throw ConfigError("training: user " + std::to_string(u) + " has no training samples");
    }
    const Sample &s = users[u].samples.front();
    if (s.x.size() != std::size_t(arch.n_rx) * arch.n_tx * arch.channels ||
        s.y.size() != std::size_t(arch.output_dim)) {
      throw ConfigError("training: dataset of user " + std::to_string(u) +
                        " does not match the architecture");
    }
  }
}

} // namespace

TrainResult train_fl(std::span<const UserData> users, const NetworkArch &arch,
                     const TrainConfig &config, const FlOptions &options) {
  arch.validate();
  config.validate();
  check_users(users, arch);
  if (options.rounds < 0) {
    throw ConfigError("train_fl: rounds must be >= 0");
  }
  TrainResult r;
  r.state.model = init_model<float>(arch, options.seed);
  r.state.velocity.assign(r.state.model.theta.size(), 0.0f);
  r.ledger.scheme = arch.dropout_prob > 0.0 ? Scheme::fl_dropout : Scheme::fl_full;

  for (int t = 1; t <= options.rounds; ++t) {
    const DropoutMask mask = round_mask(arch, options.seed, t);
    const std::uint64_t active = active_parameters(arch, mask);
    std::vector<std::optional<LocalUpdate>> updates(users.size());
    for (std::size_t u = 0; u < users.size(); ++u) {
      r.ledger.downlink += active;
      const auto batch = draw_batch(users[u].train, config.batch_size, options.seed, int(u), t);
      updates[u] = local_gradient(r.state.model, mask, users[u].samples, batch, options.workers);
      r.ledger.uplink += active;
    }
    aggregate(r.state, updates, config);
    if (options.record_trajectory) {
      r.trajectory.push_back(r.state.model.theta);
    }
    r.log.push_back({t, validation_mse(r.state.model, users, options.workers), r.ledger.uplink,
                     r.ledger.downlink, r.ledger.blocks()});
  }
  return r;
}

TrainResult train_cl(const UserData &pooled, std::uint64_t uploaded_samples, int users,
                     const NetworkArch &arch, const TrainConfig &config, const FlOptions &options) {
  arch.validate();
  config.validate();
  check_users(std::span<const UserData>(&pooled, 1), arch);
  if (users < 1) {
    throw ConfigError("train_cl: users must be >= 1");
  }
  TrainResult r;
  r.state.model = init_model<float>(arch, options.seed);
  r.state.velocity.assign(r.state.model.theta.size(), 0.0f);
  r.ledger.scheme = Scheme::cl;
  r.ledger.uplink = overhead_cl(std::uint64_t(arch.n_tx), std::uint64_t(arch.n_rx),
                                std::uint64_t(users), uploaded_samples);

  for (int t = 1; t <= options.rounds; ++t) {
    const DropoutMask mask = round_mask(arch, options.seed, t);
    const auto batch = draw_batch(pooled.train, config.batch_size, options.seed, 0, t);
    BatchGradient<float> g = batch_gradient<float>(r.state.model, pooled.samples, batch, &mask,
                                                   options.workers);
    sgd_momentum_step<float>(r.state.model.theta, r.state.velocity, g.grad, config);
    update_norm_stats(r.state.model, g.stats);
    if (options.record_trajectory) {
      r.trajectory.push_back(r.state.model.theta);
    }
    r.log.push_back({t, validation_mse(r.state.model, std::span<const UserData>(&pooled, 1),
                                       options.workers),
                     r.ledger.uplink, r.ledger.downlink, r.ledger.blocks()});
  }
  return r;
}

std::string training_log_csv(const std::vector<RoundLog> &log) {
  std::string out = "round,val_mse,uplink_symbols,downlink_symbols,cum_blocks\n";
  char buf[160];
  for (const RoundLog &r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%llu,%llu,%llu\n", r.round, r.val_mse,
                  static_cast<unsigned long long>(r.uplink),
                  static_cast<unsigned long long>(r.downlink),
                  static_cast<unsigned long long>(r.blocks));
    out += buf;
  }
  return out;
}

} // namespace spim
