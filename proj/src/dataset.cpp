#include "spim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <limits>
#include <numbers>

#include "binio.hpp"
#include "spim/errors.hpp"

namespace spim {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'I', 'M', 'D', 'S', '0', '1'};
constexpr int kMaxRedraws = 100;

// arg() folded into (-pi, pi].
double principal_arg(cplx z) {
  const double a = std::arg(z);
  return a <= -std::numbers::pi ? std::numbers::pi : a;
}

template <typename T>
DecodedLabel decode_impl(std::span<const T> label, int n_tx, int users, int n_rx) {
  const std::size_t block = std::size_t(n_tx) * users;
  if (label.size() != label_size(n_tx, users, n_rx)) {
    throw ShapeError("decode_label: label length " + std::to_string(label.size()) + ", expected " +
                     std::to_string(label_size(n_tx, users, n_rx)));
  }
  DecodedLabel d;
  d.precoder.resize(n_tx, users);
  for (int c = 0; c < users; ++c) {
    for (int r = 0; r < n_tx; ++r) {
      const std::size_t k = std::size_t(c) * n_tx + r;
      d.precoder(r, c) = cplx(double(label[k]), double(label[block + k]));
    }
  }
  const double mod = 1.0 / std::sqrt(double(n_rx));
  d.combiner.resize(n_rx);
  for (int r = 0; r < n_rx; ++r) {
    d.combiner(r) = std::polar(mod, double(label[2 * block + r]));
  }
  return d;
}

} // namespace

std::vector<float> build_input(const CMatrix &h, const std::optional<PatternPlane> &pattern) {
  if (!all_finite(h)) {
    throw InvalidInput("build_input: non-finite channel");
  }
  const auto rows = static_cast<std::size_t>(h.rows());
  const auto cols = static_cast<std::size_t>(h.cols());
  const std::size_t plane = rows * cols;
  std::vector<float> x(plane * (pattern ? 4 : 3));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const cplx z = h(Eigen::Index(i), Eigen::Index(j));
      const std::size_t k = i * cols + j;
      x[k] = static_cast<float>(z.real());
      x[plane + k] = static_cast<float>(z.imag());
      x[2 * plane + k] = static_cast<float>(principal_arg(z));
    }
  }
  if (pattern) {
    const float v = pattern->count > 1
                        ? static_cast<float>(double(pattern->index) / double(pattern->count - 1))
                        : 0.0f;
    std::fill(x.begin() + std::ptrdiff_t(3 * plane), x.end(), v);
  }
  return x;
}

RVector build_label(const CMatrix &f_rf, const CMatrix &f_bb, const CVector &w_rf) {
  if (f_rf.cols() != f_bb.rows()) {
    throw ShapeError("build_label: F_RF columns do not match F_BB rows");
  }
  const CMatrix f = f_rf * f_bb;
  const Eigen::Index block = f.size();
  RVector y(2 * block + w_rf.size());
  for (Eigen::Index k = 0; k < block; ++k) {
    y(k) = f(k).real();
    y(block + k) = f(k).imag();
  }
  for (Eigen::Index r = 0; r < w_rf.size(); ++r) {
    y(2 * block + r) = principal_arg(w_rf(r));
  }
  return y;
}

DecodedLabel decode_label(std::span<const double> label, int n_tx, int users, int n_rx) {
  return decode_impl(label, n_tx, users, n_rx);
}

DecodedLabel decode_label(std::span<const float> label, int n_tx, int users, int n_rx) {
  return decode_impl(label, n_tx, users, n_rx);
}

ChannelMatrix corrupt(const ChannelMatrix &h, double snr_db, Rng &rng) {
  if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity()) {
    throw InvalidInput("corrupt: snr must be finite or +inf");
  }
  if (std::isinf(snr_db)) {
    return h;
  }
  const double entries = double(h.h.rows()) * double(h.h.cols());
  const double var = h.h.squaredNorm() / (entries * std::pow(10.0, snr_db / 10.0));
  std::normal_distribution<double> gauss(0.0, std::sqrt(var / 2.0));
  ChannelMatrix out = h;
  for (Eigen::Index j = 0; j < out.h.cols(); ++j) {
    for (Eigen::Index i = 0; i < out.h.rows(); ++i) {
      const double re = gauss(rng);
      const double im = gauss(rng);
      out.h(i, j) += cplx(re, im);
    }
  }
  return out;
}

void GenerateControls::validate(const ScenarioConfig &scenario) const {
  if (realizations < 1 || copies < 1) {
    throw ConfigError("dataset: realizations (N) and copies (G) must be >= 1");
  }
  if (levels.empty()) {
    throw ConfigError("dataset: at least one SNR_TRAIN level is required");
  }
  for (const double l : levels) {
    if (std::isnan(l) || l == -std::numeric_limits<double>::infinity()) {
      throw ConfigError("dataset: SNR_TRAIN levels must be finite or +inf");
    }
  }
  if (planes != 3 && planes != 4) {
    throw ConfigError("dataset: planes must be 3 or 4");
  }
  const std::size_t n_patterns = pattern_count(scenario.paths, scenario.users);
  if (planes == 3) {
    if (!fixed_pattern) {
      throw ConfigError("dataset: 3-plane mode needs a fixed pattern");
    }
    if (*fixed_pattern >= n_patterns) {
      throw ConfigError("dataset: fixed pattern out of range");
    }
  }
  if (workers < 1) {
    throw ConfigError("dataset: workers must be >= 1");
  }
}

Realization make_realization(const ScenarioConfig &scenario, const DesignOptions &options,
                             std::uint64_t seed, int realization) {
  std::optional<std::vector<double>> gains;
  if (!scenario.gains.empty()) {
    gains = scenario.gains;
  }
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    Rng rng = make_rng(seed, {stream::kDataset, std::uint64_t(realization), std::uint64_t(attempt)});
    Realization r;
    r.paths = draw_paths(scenario, gains, rng);
    r.channels = synthesize_all(r.paths, scenario);
    DesignOptions opt = options;
    opt.workers = 1;
    opt.altmin.seed =
        derive_seed(options.altmin.seed, {std::uint64_t(realization), std::uint64_t(attempt)});
    r.bank = build_bank_serial(scenario, r.channels, opt);
    r.attempt = attempt;
    if (r.bank.valid_count() == r.bank.patterns.size()) {
      return r;
    }
  }
  throw EvaluationError("dataset: no realization with all patterns valid after " +
                        std::to_string(kMaxRedraws) + " draws");
}

std::size_t sample_pattern(std::uint64_t seed, int realization, std::size_t sample,
                           std::size_t n_patterns) {
  Rng rng = make_rng(seed, {stream::kPattern, std::uint64_t(realization), std::uint64_t(sample)});
  return std::uniform_int_distribution<std::size_t>(0, n_patterns - 1)(rng);
}

namespace {

void fill_user(LocalDataset &data, int user, int r, const Realization &real,
               const GenerateControls &controls, std::uint64_t seed, std::size_t n_patterns) {
  const std::size_t per_real = controls.levels.size() * std::size_t(controls.copies);
  Rng rng = make_rng(seed, {stream::kNoise, std::uint64_t(user), std::uint64_t(r)});
  std::size_t j = 0;
  for (const double level : controls.levels) {
    for (int g = 0; g < controls.copies; ++g, ++j) {
      const std::size_t p = controls.planes == 4 ? sample_pattern(seed, r, j, n_patterns)
                                                 : *controls.fixed_pattern;
      const PatternEntry &entry = real.bank.patterns[p];
      const ChannelMatrix noisy = corrupt(real.channels[user], level, rng);
      Sample &s = data.samples[std::size_t(r) * per_real + j];
      s.user = user;
      s.pattern = std::uint32_t(p);
      s.snr_db = static_cast<float>(level);
      s.x = build_input(noisy.h, controls.planes == 4
                                     ? std::optional<PatternPlane>(PatternPlane{p, n_patterns})
                                     : std::nullopt);
      const RVector y = build_label(entry.beams.f_rf, entry.f_bb, entry.beams.w_rf[user]);
      s.y.resize(std::size_t(y.size()));
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        s.y[std::size_t(i)] = static_cast<float>(y(i));
      }
    }
  }
}

std::vector<LocalDataset> generate_users(const std::vector<int> &users,
                                         const ScenarioConfig &scenario,
                                         const DesignOptions &options,
                                         const GenerateControls &controls, std::uint64_t seed) {
  scenario.validate();
  controls.validate(scenario);
  for (const int u : users) {
    if (u < 0 || u >= scenario.users) {
      throw ConfigError("dataset: user index out of range");
    }
  }
  const std::size_t n_patterns = pattern_count(scenario.paths, scenario.users);
  const std::size_t count =
      controls.levels.size() * std::size_t(controls.copies) * std::size_t(controls.realizations);

  std::vector<LocalDataset> out(users.size());
  for (std::size_t i = 0; i < users.size(); ++i) {
    out[i].user = users[i];
    out[i].header = {std::uint32_t(scenario.n_rx), std::uint32_t(scenario.n_tx),
                     std::uint32_t(controls.planes), std::uint32_t(scenario.users),
                     std::uint32_t(scenario.paths), std::uint32_t(count)};
    out[i].samples.resize(count);
  }

  std::exception_ptr failure;
#pragma omp parallel for num_threads(controls.workers) schedule(dynamic)
  for (int r = 0; r < controls.realizations; ++r) {
    try {
      const Realization real = make_realization(scenario, options, seed, r);
      for (std::size_t i = 0; i < users.size(); ++i) {
        fill_user(out[i], users[i], r, real, controls, seed, n_patterns);
      }
    } catch (...) {
#pragma omp critical(spim_dataset_failure)
      if (!failure) {
        failure = std::current_exception();
      }
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
  return out;
}

} // namespace

LocalDataset generate_local(int user, const ScenarioConfig &scenario, const DesignOptions &options,
                            const GenerateControls &controls, std::uint64_t seed) {
  return std::move(generate_users({user}, scenario, options, controls, seed).front());
}

std::vector<LocalDataset> generate_all(const ScenarioConfig &scenario, const DesignOptions &options,
                                       const GenerateControls &controls, std::uint64_t seed) {
  std::vector<int> users(std::size_t(std::max(0, scenario.users)));
  for (std::size_t u = 0; u < users.size(); ++u) {
    users[u] = int(u);
  }
  return generate_users(users, scenario, options, controls, seed);
}

void save_dataset(const LocalDataset &data, const std::string &path) {
  const DatasetHeader &h = data.header;
  if (h.count != data.samples.size()) {
    throw InvalidInput("save_dataset: header count does not match samples");
  }
  binio::Writer w;
  w.bytes(kMagic, sizeof kMagic);
  for (const std::uint32_t v : {h.n_rx, h.n_tx, h.planes, h.users, h.paths, h.count}) {
    w.u32(v);
  }
  for (const Sample &s : data.samples) {
    if (s.x.size() != h.input_size() || s.y.size() != h.output_size()) {
      throw ShapeError("save_dataset: sample dimensions do not match header");
    }
    w.u32(s.pattern);
    w.f32(s.snr_db);
    w.f32s(s.x);
    w.f32s(s.y);
  }
  w.to_file(path);
}

LocalDataset load_dataset(const std::string &path, int user) {
  binio::Reader r = binio::Reader::from_file(path);
  char magic[8];
  r.bytes(magic, sizeof magic, "header magic");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw FormatError(path + ": bad magic at byte offset 0 (expected SPIMDS01)");
  }
  LocalDataset data;
  data.user = user;
  DatasetHeader &h = data.header;
  h.n_rx = r.u32("header");
  h.n_tx = r.u32("header");
  h.planes = r.u32("header");
  h.users = r.u32("header");
  h.paths = r.u32("header");
  h.count = r.u32("header");
  if (h.n_rx == 0 || h.n_tx == 0 || h.users == 0 || h.paths == 0 || (h.planes != 3 && h.planes != 4)) {
    r.fail("invalid header dimensions");
  }
  const std::size_t record = 8 + 4 * (h.input_size() + h.output_size());
  const std::size_t expected = r.offset() + record * h.count;
  if (r.size() != expected) {
    throw FormatError(path + ": payload length mismatch after header at byte offset " +
                      std::to_string(r.offset()) + ": expected " + std::to_string(expected) +
                      " bytes, file has " + std::to_string(r.size()));
  }
  data.samples.resize(h.count);
  for (Sample &s : data.samples) {
    s.user = user;
    s.pattern = r.u32("sample pattern");
    s.snr_db = r.f32("sample snr");
    r.f32s(s.x, h.input_size(), "sample input");
    r.f32s(s.y, h.output_size(), "sample label");
  }
  return data;
}

Split split_indices(std::size_t count, double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("split: validation fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> perm(count);
  for (std::size_t i = 0; i < count; ++i) {
    perm[i] = i;
  }
  Rng rng = make_rng(seed, {stream::kSplit, std::uint64_t(count)});
  for (std::size_t i = count; i > 1; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(perm[i - 1], perm[j]);
  }
  const auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * double(count)));
  Split s;
  s.validation.assign(perm.begin(), perm.begin() + std::ptrdiff_t(n_val));
  s.train.assign(perm.begin() + std::ptrdiff_t(n_val), perm.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

} // namespace spim
