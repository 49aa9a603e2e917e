#include "spim/neural.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <random>

#include "binio.hpp"
#include "spim/errors.hpp"
#include "spim/rng.hpp"

namespace spim {

namespace {

constexpr double kNormEps = 1e-5;
constexpr std::size_t kChunk = 16;
constexpr char kMagic[8] = {'S', 'P', 'I', 'M', 'N', 'N', '0', '1'};

int bin_start(int k, int size, int target) { return (k * size) / target; }
int bin_end(int k, int size, int target) { return ((k + 1) * size + target - 1) / target; }

template <typename T> struct Trace {
  std::vector<std::vector<T>> conv_in;
  std::vector<std::vector<T>> conv_out; // before normalization
  std::vector<std::vector<T>> norm_out; // before activation
  std::vector<T> pooled;
  std::vector<T> fc_in;
  std::vector<T> hidden;
  std::vector<T> output;
  T scale = 1;
};

struct Offsets {
  std::vector<std::size_t> conv_w, conv_b, norm_scale, norm_shift;
  std::size_t fc_w = 0, fc_b = 0, out_w = 0, out_b = 0;

  explicit Offsets(const Layout &layout, int layers) {
    for (int l = 0; l < layers; ++l) {
      const std::string n = std::to_string(l);
      conv_w.push_back(layout.at("conv" + n + ".weight").offset);
      conv_b.push_back(layout.at("conv" + n + ".bias").offset);
      norm_scale.push_back(layout.at("norm" + n + ".scale").offset);
      norm_shift.push_back(layout.at("norm" + n + ".shift").offset);
    }
    fc_w = layout.at("fc.weight").offset;
    fc_b = layout.at("fc.bias").offset;
    out_w = layout.at("out.weight").offset;
    out_b = layout.at("out.bias").offset;
  }
};

void check_mask(const NetworkArch &arch, const DropoutMask *mask) {
  if (mask && static_cast<int>(mask->keep.size()) != arch.fc_inputs()) {
    throw ShapeError("dropout layer: mask has " + std::to_string(mask->keep.size()) +
                     " entries, expected " + std::to_string(arch.fc_inputs()));
  }
  if (mask && mask->active() == 0) {
    throw ShapeError("dropout layer: mask keeps no features");
  }
}

template <typename T>
void conv_forward(const T *w, const T *b, const std::vector<T> &in, std::vector<T> &out, int c_in,
                  int c_out, int rows, int cols, int kx, int ky) {
  const int px = kx / 2, py = ky / 2;
  out.assign(std::size_t(c_out) * rows * cols, T(0));
  for (int o = 0; o < c_out; ++o) {
    T *dst = out.data() + std::size_t(o) * rows * cols;
    for (int k = 0; k < rows * cols; ++k) {
      dst[k] = b[o];
    }
    for (int ci = 0; ci < c_in; ++ci) {
      const T *src = in.data() + std::size_t(ci) * rows * cols;
      for (int a = 0; a < kx; ++a) {
        for (int bb = 0; bb < ky; ++bb) {
          const T wv = w[((std::size_t(o) * c_in + ci) * kx + a) * ky + bb];
          if (wv == T(0)) {
            continue;
          }
          const int di = a - px, dj = bb - py;
          const int i0 = std::max(0, -di), i1 = std::min(rows, rows - di);
          const int j0 = std::max(0, -dj), j1 = std::min(cols, cols - dj);
          for (int i = i0; i < i1; ++i) {
            const T *s = src + std::size_t(i + di) * cols + dj;
            T *d = dst + std::size_t(i) * cols;
            for (int j = j0; j < j1; ++j) {
              d[j] += wv * s[j];
            }
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T> run(const Model<T> &model, std::span<const T> x, const DropoutMask *mask, Mode mode,
                   BatchStats *stats, Trace<T> *trace) {
  const NetworkArch &a = model.arch;
  const std::size_t expected = std::size_t(a.n_rx) * a.n_tx * a.channels;
  if (x.size() != expected) {
    throw ShapeError("input layer: got " + std::to_string(x.size()) + " values, expected " +
                     std::to_string(expected));
  }
  if (model.theta.size() != model.layout.total) {
    throw ShapeError("parameters: theta length does not match layout");
  }
  check_mask(a, mask);
  const Offsets off(model.layout, a.conv_layers);
  const T *th = model.theta.data();
  const int rows = a.n_rx, cols = a.n_tx, plane = a.n_rx * a.n_tx;

  if (stats && stats->sum.empty()) {
    stats->sum.assign(std::size_t(a.conv_layers) * a.filters, 0.0);
    stats->sumsq.assign(std::size_t(a.conv_layers) * a.filters, 0.0);
  }

  std::vector<T> act(x.begin(), x.end());
  int c_in = a.channels;
  for (int l = 0; l < a.conv_layers; ++l) {
    std::vector<T> conv;
    conv_forward(th + off.conv_w[l], th + off.conv_b[l], act, conv, c_in, a.filters, rows, cols,
                 a.kernel_x, a.kernel_y);
    std::vector<T> normed(conv.size());
    for (int c = 0; c < a.filters; ++c) {
      const std::size_t sidx = std::size_t(l) * a.filters + c;
      const T mean = model.stats.mean[sidx];
      const T inv = T(1) / std::sqrt(model.stats.var[sidx] + T(kNormEps));
      const T g = th[off.norm_scale[l] + c];
      const T beta = th[off.norm_shift[l] + c];
      double s = 0.0, s2 = 0.0;
      for (int k = 0; k < plane; ++k) {
        const T v = conv[std::size_t(c) * plane + k];
        s += double(v);
        s2 += double(v) * double(v);
        normed[std::size_t(c) * plane + k] = g * (v - mean) * inv + beta;
      }
      if (stats) {
        stats->sum[sidx] += s;
        stats->sumsq[sidx] += s2;
      }
    }
    std::vector<T> next(normed.size());
    for (std::size_t k = 0; k < normed.size(); ++k) {
      next[k] = normed[k] > T(0) ? normed[k] : T(0);
    }
    if (trace) {
      trace->conv_in.push_back(std::move(act));
      trace->conv_out.push_back(std::move(conv));
      trace->norm_out.push_back(std::move(normed));
    }
    act = std::move(next);
    c_in = a.filters;
  }
  if (stats) {
    stats->count += double(plane);
  }

  const int feat = a.fc_inputs();
  std::vector<T> pooled(feat);
  for (int c = 0; c < a.filters; ++c) {
    for (int bx = 0; bx < a.pool_x(); ++bx) {
      const int i0 = bin_start(bx, rows, a.pool_x()), i1 = bin_end(bx, rows, a.pool_x());
      for (int by = 0; by < a.pool_y(); ++by) {
        const int j0 = bin_start(by, cols, a.pool_y()), j1 = bin_end(by, cols, a.pool_y());
        T s = 0;
        for (int i = i0; i < i1; ++i) {
          for (int j = j0; j < j1; ++j) {
            s += act[std::size_t(c) * plane + std::size_t(i) * cols + j];
          }
        }
        pooled[(std::size_t(c) * a.pool_x() + bx) * a.pool_y() + by] = s / T((i1 - i0) * (j1 - j0));
      }
    }
  }

  std::vector<T> fc_in = pooled;
  T scale = 1;
  if (mode == Mode::train && mask) {
    scale = T(feat) / T(mask->active());
    for (int j = 0; j < feat; ++j) {
      fc_in[j] = mask->keep[j] ? fc_in[j] * scale : T(0);
    }
  }

  std::vector<T> hidden(a.fc_units);
  for (int k = 0; k < a.fc_units; ++k) {
    const T *wr = th + off.fc_w + std::size_t(k) * feat;
    T s = th[off.fc_b + k];
    for (int j = 0; j < feat; ++j) {
      s += wr[j] * fc_in[j];
    }
    hidden[k] = s;
  }

  std::vector<T> out(a.output_dim);
  for (int o = 0; o < a.output_dim; ++o) {
    const T *wr = th + off.out_w + std::size_t(o) * a.fc_units;
    T s = th[off.out_b + o];
    for (int k = 0; k < a.fc_units; ++k) {
      s += wr[k] * hidden[k];
    }
    out[o] = s;
  }

  if (trace) {
    trace->pooled = std::move(pooled);
    trace->fc_in = std::move(fc_in);
    trace->hidden = std::move(hidden);
    trace->output = out;
    trace->scale = scale;
  }
  return out;
}

template <typename T> std::vector<T> to_vec(const std::vector<float> &v) {
  return std::vector<T>(v.begin(), v.end());
}

template <typename T> void add_into(std::vector<T> &acc, const std::vector<T> &v) {
  for (std::size_t i = 0; i < acc.size(); ++i) {
    acc[i] += v[i];
  }
}

} // namespace

void NetworkArch::validate() const {
  if (n_rx < 1 || n_tx < 1 || channels < 1) {
    throw ConfigError("arch: input dimensions must be >= 1");
  }
  if (conv_layers < 1 || filters < 1 || fc_units < 1) {
    throw ConfigError("arch: conv_layers, filters and fc_units must be >= 1");
  }
  if (kernel_x < 1 || kernel_y < 1 || kernel_x % 2 == 0 || kernel_y % 2 == 0) {
    throw ConfigError("arch: kernel sizes must be odd and >= 1");
  }
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) {
    throw ConfigError("arch: dropout_prob must lie in [0, 1)");
  }
  if (output_dim < 1) {
    throw ConfigError("arch: output_dim must be >= 1");
  }
  if (kernel_x > n_rx || kernel_y > n_tx) {
    throw ConfigError("arch: pool target must be within the feature map size");
  }
  if (std::llround(keep() * fc_inputs()) < 1) {
    throw ConfigError("arch: dropout would remove every FC input feature");
  }
}

std::uint64_t param_count(const NetworkArch &a, double kappa) {
  if (!(kappa >= 0.0 && kappa <= 1.0)) {
    throw ConfigError("param_count: kappa must lie in [0, 1]");
  }
  const std::uint64_t conv = std::uint64_t(a.conv_layers) * a.channels * a.filters * a.kernel_x *
                             a.kernel_y;
  const std::uint64_t fc = std::uint64_t(a.filters) * a.kernel_x * a.kernel_y * a.fc_units;
  return conv + static_cast<std::uint64_t>(std::llround(kappa * double(fc)));
}

const Segment &Layout::at(const std::string &name) const {
  for (const Segment &s : segments) {
    if (s.name == name) {
      return s;
    }
  }
  throw ShapeError("layout: no segment named " + name);
}

Layout make_layout(const NetworkArch &a) {
  a.validate();
  Layout layout;
  auto add = [&](const std::string &name, std::vector<int> shape) {
    std::size_t n = 1;
    for (const int d : shape) {
      n *= std::size_t(d);
    }
    layout.segments.push_back({name, layout.total, n, std::move(shape)});
    layout.total += n;
  };
  int c_in = a.channels;
  for (int l = 0; l < a.conv_layers; ++l) {
    const std::string n = std::to_string(l);
    add("conv" + n + ".weight", {a.filters, c_in, a.kernel_x, a.kernel_y});
    add("conv" + n + ".bias", {a.filters});
    add("norm" + n + ".scale", {a.filters});
    add("norm" + n + ".shift", {a.filters});
    c_in = a.filters;
  }
  add("fc.weight", {a.fc_units, a.fc_inputs()});
  add("fc.bias", {a.fc_units});
  add("out.weight", {a.output_dim, a.fc_units});
  add("out.bias", {a.output_dim});
  return layout;
}

template <typename T> Model<T> zero_model(const NetworkArch &arch) {
  Model<T> m;
  m.arch = arch;
  m.layout = make_layout(arch);
  m.theta.assign(m.layout.total, T(0));
  m.stats.mean.assign(std::size_t(arch.conv_layers) * arch.filters, T(0));
  m.stats.var.assign(std::size_t(arch.conv_layers) * arch.filters, T(1));
  return m;
}

template <typename T> Model<T> init_model(const NetworkArch &arch, std::uint64_t seed) {
  Model<T> m = zero_model<T>(arch);
  Rng rng = make_rng(seed, {stream::kInit});
  auto fill = [&](const std::string &name, double fan_in, double gain) {
    const Segment &s = m.layout.at(name);
    std::normal_distribution<double> g(0.0, std::sqrt(gain / fan_in));
    for (std::size_t i = 0; i < s.size; ++i) {
      m.theta[s.offset + i] = T(g(rng));
    }
  };
  int c_in = arch.channels;
  for (int l = 0; l < arch.conv_layers; ++l) {
    const std::string n = std::to_string(l);
    fill("conv" + n + ".weight", double(c_in) * arch.kernel_x * arch.kernel_y, 2.0);
    const Segment &sc = m.layout.at("norm" + n + ".scale");
    std::fill_n(m.theta.begin() + std::ptrdiff_t(sc.offset), sc.size, T(1));
    c_in = arch.filters;
  }
  fill("fc.weight", arch.fc_inputs(), 2.0);
  fill("out.weight", arch.fc_units, 1.0);
  return m;
}

std::size_t DropoutMask::active() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t(1)));
}

std::uint64_t DropoutMask::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const std::uint8_t b : keep) {
    h = (h ^ b) * 1099511628211ULL;
  }
  return h;
}

DropoutMask make_mask(const NetworkArch &arch, std::uint64_t seed, std::uint64_t round) {
  const int feat = arch.fc_inputs();
  const auto kept = static_cast<int>(std::max<long long>(1, std::llround(arch.keep() * feat)));
  DropoutMask m;
  m.seed = seed;
  m.round = round;
  m.keep.assign(feat, 0);
  std::vector<int> idx(feat);
  for (int i = 0; i < feat; ++i) {
    idx[i] = i;
  }
  Rng rng = make_rng(seed, {stream::kMask, round});
  for (int i = 0; i < kept; ++i) {
    const int j = std::uniform_int_distribution<int>(i, feat - 1)(rng);
    std::swap(idx[i], idx[j]);
    m.keep[idx[i]] = 1;
  }
  return m;
}

DropoutMask full_mask(const NetworkArch &arch) {
  DropoutMask m;
  m.keep.assign(arch.fc_inputs(), 1);
  return m;
}

void BatchStats::merge(const BatchStats &other) {
  if (other.sum.empty()) {
    return;
  }
  if (sum.empty()) {
    sum.assign(other.sum.size(), 0.0);
    sumsq.assign(other.sumsq.size(), 0.0);
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    sum[i] += other.sum[i];
    sumsq[i] += other.sumsq[i];
  }
  count += other.count;
}

template <typename T>
std::vector<T> forward(const Model<T> &model, std::span<const T> x, const DropoutMask *mask,
                       Mode mode, BatchStats *stats) {
  return run<T>(model, x, mask, mode, stats, nullptr);
}

template <typename T> T loss_mse(std::span<const T> pred, std::span<const T> label) {
  if (pred.size() != label.size() || pred.empty()) {
    throw ShapeError("loss: prediction has " + std::to_string(pred.size()) +
                     " entries, label has " + std::to_string(label.size()));
  }
  T s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - label[i];
    s += d * d;
  }
  return s / T(pred.size());
}

template <typename T>
SampleGradient<T> backward(const Model<T> &model, std::span<const T> x, std::span<const T> label,
                           const DropoutMask *mask, BatchStats *stats) {
  const NetworkArch &a = model.arch;
  if (label.size() != std::size_t(a.output_dim)) {
    throw ShapeError("output layer: label has " + std::to_string(label.size()) +
                     " entries, expected " + std::to_string(a.output_dim));
  }
  Trace<T> tr;
  run<T>(model, x, mask, Mode::train, stats, &tr);
  const Offsets off(model.layout, a.conv_layers);
  const T *th = model.theta.data();

  SampleGradient<T> out;
  out.loss = loss_mse<T>(tr.output, label);
  out.grad.assign(model.layout.total, T(0));
  T *g = out.grad.data();

  const T n = T(a.output_dim);
  std::vector<T> dy(a.output_dim);
  for (int o = 0; o < a.output_dim; ++o) {
    dy[o] = T(2) * (tr.output[o] - label[o]) / n;
  }

  std::vector<T> dh(a.fc_units, T(0));
  for (int o = 0; o < a.output_dim; ++o) {
    const T *wr = th + off.out_w + std::size_t(o) * a.fc_units;
    T *gw = g + off.out_w + std::size_t(o) * a.fc_units;
    g[off.out_b + o] = dy[o];
    for (int k = 0; k < a.fc_units; ++k) {
      gw[k] = dy[o] * tr.hidden[k];
      dh[k] += wr[k] * dy[o];
    }
  }

  const int feat = a.fc_inputs();
  std::vector<T> dfc(feat, T(0));
  for (int k = 0; k < a.fc_units; ++k) {
    const T *wr = th + off.fc_w + std::size_t(k) * feat;
    T *gw = g + off.fc_w + std::size_t(k) * feat;
    g[off.fc_b + k] = dh[k];
    for (int j = 0; j < feat; ++j) {
      gw[j] = dh[k] * tr.fc_in[j];
      dfc[j] += wr[j] * dh[k];
    }
  }
  if (mask) {
    for (int j = 0; j < feat; ++j) {
      dfc[j] = mask->keep[j] ? dfc[j] * tr.scale : T(0);
    }
  }

  const int rows = a.n_rx, cols = a.n_tx, plane = rows * cols;
  std::vector<T> dact(std::size_t(a.filters) * plane, T(0));
  for (int c = 0; c < a.filters; ++c) {
    for (int bx = 0; bx < a.pool_x(); ++bx) {
      const int i0 = bin_start(bx, rows, a.pool_x()), i1 = bin_end(bx, rows, a.pool_x());
      for (int by = 0; by < a.pool_y(); ++by) {
        const int j0 = bin_start(by, cols, a.pool_y()), j1 = bin_end(by, cols, a.pool_y());
        const T d = dfc[(std::size_t(c) * a.pool_x() + bx) * a.pool_y() + by] / T((i1 - i0) * (j1 - j0));
        for (int i = i0; i < i1; ++i) {
          for (int j = j0; j < j1; ++j) {
            dact[std::size_t(c) * plane + std::size_t(i) * cols + j] += d;
          }
        }
      }
    }
  }

  const int px = a.kernel_x / 2, py = a.kernel_y / 2;
  for (int l = a.conv_layers - 1; l >= 0; --l) {
    const std::vector<T> &z = tr.norm_out[l];
    const std::vector<T> &c_out = tr.conv_out[l];
    const std::vector<T> &in = tr.conv_in[l];
    const int c_in = l == 0 ? a.channels : a.filters;

    std::vector<T> dconv(dact.size());
    for (int c = 0; c < a.filters; ++c) {
      const std::size_t sidx = std::size_t(l) * a.filters + c;
      const T mean = model.stats.mean[sidx];
      const T inv = T(1) / std::sqrt(model.stats.var[sidx] + T(kNormEps));
      const T gamma = th[off.norm_scale[l] + c];
      T dg = 0, db = 0;
      for (int k = 0; k < plane; ++k) {
        const std::size_t idx = std::size_t(c) * plane + k;
        const T dz = z[idx] > T(0) ? dact[idx] : T(0);
        dg += dz * (c_out[idx] - mean) * inv;
        db += dz;
        dconv[idx] = dz * gamma * inv;
      }
      g[off.norm_scale[l] + c] = dg;
      g[off.norm_shift[l] + c] = db;
    }

    std::vector<T> din(l > 0 ? std::size_t(c_in) * plane : 0, T(0));
    for (int o = 0; o < a.filters; ++o) {
      const T *dsrc = dconv.data() + std::size_t(o) * plane;
      T bsum = 0;
      for (int k = 0; k < plane; ++k) {
        bsum += dsrc[k];
      }
      g[off.conv_b[l] + o] = bsum;
      for (int ci = 0; ci < c_in; ++ci) {
        const T *src = in.data() + std::size_t(ci) * plane;
        for (int ka = 0; ka < a.kernel_x; ++ka) {
          for (int kb = 0; kb < a.kernel_y; ++kb) {
            const int di = ka - px, dj = kb - py;
            const int i0 = std::max(0, -di), i1 = std::min(rows, rows - di);
            const int j0 = std::max(0, -dj), j1 = std::min(cols, cols - dj);
            const std::size_t widx = ((std::size_t(o) * c_in + ci) * a.kernel_x + ka) * a.kernel_y + kb;
            T gw = 0;
            for (int i = i0; i < i1; ++i) {
              const T *s = src + std::size_t(i + di) * cols + dj;
              const T *d = dsrc + std::size_t(i) * cols;
              for (int j = j0; j < j1; ++j) {
                gw += d[j] * s[j];
              }
            }
            g[off.conv_w[l] + widx] = gw;
            if (l > 0) {
              const T wv = th[off.conv_w[l] + widx];
              T *dd = din.data() + std::size_t(ci) * plane;
              for (int i = i0; i < i1; ++i) {
                T *t = dd + std::size_t(i + di) * cols + dj;
                const T *d = dsrc + std::size_t(i) * cols;
                for (int j = j0; j < j1; ++j) {
                  t[j] += wv * d[j];
                }
              }
            }
          }
        }
      }
    }
    dact = std::move(din);
  }
  return out;
}

template <typename T>
BatchGradient<T> batch_gradient(const Model<T> &model, std::span<const Sample> samples,
                                std::span<const std::size_t> indices, const DropoutMask *mask,
                                int workers) {
  if (indices.empty()) {
    throw ConfigError("batch_gradient: empty batch");
  }
  const std::size_t n_chunks = (indices.size() + kChunk - 1) / kChunk;
  std::vector<std::vector<T>> partial(n_chunks);
  std::vector<double> losses(indices.size());
  std::vector<BatchStats> stats(n_chunks);
  std::exception_ptr failure;
#pragma omp parallel for num_threads(std::max(1, workers)) schedule(static)
  for (std::ptrdiff_t ci = 0; ci < std::ptrdiff_t(n_chunks); ++ci) {
    try {
      std::vector<T> acc(model.layout.total, T(0));
      const std::size_t lo = std::size_t(ci) * kChunk;
      const std::size_t hi = std::min(indices.size(), lo + kChunk);
      for (std::size_t k = lo; k < hi; ++k) {
        const Sample &s = samples[indices[k]];
        const std::vector<T> x = to_vec<T>(s.x), y = to_vec<T>(s.y);
        const SampleGradient<T> sg = backward<T>(model, x, y, mask, &stats[ci]);
        add_into(acc, sg.grad);
        losses[k] = double(sg.loss);
      }
      partial[ci] = std::move(acc);
    } catch (...) {
#pragma omp critical(spim_batch_failure)
      if (!failure) {
        failure = std::current_exception();
      }
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
  BatchGradient<T> out;
  out.grad.assign(model.layout.total, T(0));
  for (std::size_t ci = 0; ci < n_chunks; ++ci) {
    add_into(out.grad, partial[ci]);
    out.stats.merge(stats[ci]);
  }
  const T inv = T(1) / T(indices.size());
  for (T &v : out.grad) {
    v *= inv;
  }
  double l = 0.0;
  for (const double v : losses) {
    l += v;
  }
  out.loss = l / double(indices.size());
  return out;
}

template <typename T>
BatchGradient<T> batch_gradient_serial(const Model<T> &model, std::span<const Sample> samples,
                                       std::span<const std::size_t> indices,
                                       const DropoutMask *mask) {
  if (indices.empty()) {
    throw ConfigError("batch_gradient: empty batch");
  }
  BatchGradient<T> out;
  out.grad.assign(model.layout.total, T(0));
  for (const std::size_t i : indices) {
    const std::vector<T> x = to_vec<T>(samples[i].x), y = to_vec<T>(samples[i].y);
    const SampleGradient<T> sg = backward<T>(model, x, y, mask, &out.stats);
    add_into(out.grad, sg.grad);
    out.loss += double(sg.loss);
  }
  for (T &v : out.grad) {
    v /= T(indices.size());
  }
  out.loss /= double(indices.size());
  return out;
}

template <typename T> void update_norm_stats(Model<T> &model, const BatchStats &batch) {
  if (batch.count <= 0.0 || batch.sum.empty()) {
    return;
  }
  if (batch.sum.size() != model.stats.mean.size()) {
    throw ShapeError("normalization: batch statistics do not match the model");
  }
  const double rho = std::max(0.1, 1.0 / double(model.stats.updates + 1));
  for (std::size_t i = 0; i < batch.sum.size(); ++i) {
    const double m = batch.sum[i] / batch.count;
    const double v = std::max(0.0, batch.sumsq[i] / batch.count - m * m);
    model.stats.mean[i] = T((1.0 - rho) * double(model.stats.mean[i]) + rho * m);
    model.stats.var[i] = T((1.0 - rho) * double(model.stats.var[i]) + rho * v);
  }
  ++model.stats.updates;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train: learning_rate must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("train: momentum must lie in [0, 1)");
  }
  if (batch_size < 1) {
    throw ConfigError("train: batch_size must be >= 1");
  }
}

template <typename T>
void sgd_momentum_step(std::vector<T> &theta, std::vector<T> &velocity, std::span<const T> grad,
                       const TrainConfig &config) {
  if (theta.size() != velocity.size() || theta.size() != grad.size()) {
    throw ShapeError("sgd: theta, velocity and gradient lengths differ");
  }
  const T mu = T(config.momentum), lr = T(config.learning_rate);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity[i] = mu * velocity[i] + grad[i];
    theta[i] -= lr * velocity[i];
  }
}

template <typename T>
double evaluate_mse(const Model<T> &model, std::span<const Sample> samples,
                    std::span<const std::size_t> indices, int workers) {
  if (indices.empty()) {
    throw ConfigError("evaluate: empty sample set");
  }
  std::vector<double> losses(indices.size());
  std::exception_ptr failure;
#pragma omp parallel for num_threads(std::max(1, workers)) schedule(static)
  for (std::ptrdiff_t k = 0; k < std::ptrdiff_t(indices.size()); ++k) {
    try {
      const Sample &s = samples[indices[k]];
      const std::vector<T> x = to_vec<T>(s.x), y = to_vec<T>(s.y);
      const std::vector<T> p = forward<T>(model, x, nullptr, Mode::infer);
      losses[k] = double(loss_mse<T>(p, y));
    } catch (...) {
#pragma omp critical(spim_eval_failure)
      if (!failure) {
        failure = std::current_exception();
      }
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
  double s = 0.0;
  for (const double v : losses) {
    s += v;
  }
  return s / double(indices.size());
}

template <typename To, typename From> Model<To> convert_model(const Model<From> &m) {
  Model<To> out;
  out.arch = m.arch;
  out.layout = m.layout;
  out.theta.assign(m.theta.begin(), m.theta.end());
  out.stats.mean.assign(m.stats.mean.begin(), m.stats.mean.end());
  out.stats.var.assign(m.stats.var.begin(), m.stats.var.end());
  out.stats.updates = m.stats.updates;
  return out;
}

void save_checkpoint(const Model<float> &model, const std::vector<float> &velocity,
                     const std::string &path) {
  if (velocity.size() != model.theta.size()) {
    throw ShapeError("checkpoint: velocity length does not match theta");
  }
  const NetworkArch &a = model.arch;
  binio::Writer w;
  w.bytes(kMagic, sizeof kMagic);
  for (const int v : {a.n_rx, a.n_tx, a.channels, a.conv_layers, a.filters, a.kernel_x, a.kernel_y,
                      a.fc_units}) {
    w.u32(std::uint32_t(v));
  }
  w.f32(static_cast<float>(a.dropout_prob));
  w.u32(std::uint32_t(a.output_dim));
  w.u32(std::uint32_t(model.theta.size()));
  w.f32s(model.theta);
  w.f32s(velocity);
  w.u32(std::uint32_t(model.stats.mean.size()));
  w.f32s(model.stats.mean);
  w.f32s(model.stats.var);
  w.u64(model.stats.updates);
  w.to_file(path);
}

Checkpoint load_checkpoint(const std::string &path) {
  binio::Reader r = binio::Reader::from_file(path);
  char magic[8];
  r.bytes(magic, sizeof magic, "header magic");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw FormatError(path + ": bad magic at byte offset 0 (expected SPIMNN01)");
  }
  NetworkArch a;
  int *fields[] = {&a.n_rx, &a.n_tx, &a.channels, &a.conv_layers,
                   &a.filters, &a.kernel_x, &a.kernel_y, &a.fc_units};
  for (int *f : fields) {
    *f = static_cast<int>(r.u32("arch"));
  }
  a.dropout_prob = r.f32("arch");
  a.output_dim = static_cast<int>(r.u32("arch"));
  try {
    a.validate();
  } catch (const ConfigError &e) {
    r.fail(std::string("invalid architecture (") + e.what() + ")");
  }
  Checkpoint cp;
  cp.model = zero_model<float>(a);
  const std::uint32_t n = r.u32("parameter count");
  if (n != cp.model.layout.total) {
    r.fail("parameter count " + std::to_string(n) + " does not match architecture (" +
           std::to_string(cp.model.layout.total) + ")");
  }
  r.f32s(cp.model.theta, n, "parameters");
  r.f32s(cp.velocity, n, "velocity");
  const std::uint32_t ns = r.u32("statistics count");
  if (ns != cp.model.stats.mean.size()) {
    r.fail("normalization statistics count does not match architecture");
  }
  r.f32s(cp.model.stats.mean, ns, "running mean");
  r.f32s(cp.model.stats.var, ns, "running variance");
  cp.model.stats.updates = r.u64("statistics updates");
  if (r.remaining() != 0) {
    r.fail("trailing bytes after checkpoint");
  }
  return cp;
}

#define SPIM_INSTANTIATE(T)                                                                        \
  template Model<T> zero_model<T>(const NetworkArch &);                                            \
  template Model<T> init_model<T>(const NetworkArch &, std::uint64_t);                             \
  template std::vector<T> forward<T>(const Model<T> &, std::span<const T>, const DropoutMask *,    \
                                     Mode, BatchStats *);                                          \
  template T loss_mse<T>(std::span<const T>, std::span<const T>);                                  \
  template SampleGradient<T> backward<T>(const Model<T> &, std::span<const T>, std::span<const T>, \
                                         const DropoutMask *, BatchStats *);                       \
  template BatchGradient<T> batch_gradient<T>(const Model<T> &, std::span<const Sample>,           \
                                              std::span<const std::size_t>, const DropoutMask *,   \
                                              int);                                                \
  template BatchGradient<T> batch_gradient_serial<T>(const Model<T> &, std::span<const Sample>,    \
                                                     std::span<const std::size_t>,                 \
                                                     const DropoutMask *);                         \
  template void update_norm_stats<T>(Model<T> &, const BatchStats &);                              \
  template void sgd_momentum_step<T>(std::vector<T> &, std::vector<T> &, std::span<const T>,       \
                                     const TrainConfig &);                                         \
  template double evaluate_mse<T>(const Model<T> &, std::span<const Sample>,                       \
                                  std::span<const std::size_t>, int);

SPIM_INSTANTIATE(float)
SPIM_INSTANTIATE(double)
#undef SPIM_INSTANTIATE

template Model<double> convert_model<double, float>(const Model<float> &);
template Model<float> convert_model<float, double>(const Model<double> &);
template Model<float> convert_model<float, float>(const Model<float> &);
template Model<double> convert_model<double, double>(const Model<double> &);

} // namespace spim
