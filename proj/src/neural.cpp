#include "isee/neural.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "isee/errors.hpp"

namespace isee {

bool MlpParams::all_finite() const {
  auto ok = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return ok(w1) && ok(b1) && ok(w2) && ok(b2);
}

Gradients Gradients::zeros_like(const MlpParams& p) {
  Gradients g;
  g.w1.assign(p.w1.size(), 0.0);
  g.b1.assign(p.b1.size(), 0.0);
  g.w2.assign(p.w2.size(), 0.0);
  g.b2.assign(p.b2.size(), 0.0);
  return g;
}

void Gradients::set_zero() {
  std::fill(w1.begin(), w1.end(), 0.0);
  std::fill(b1.begin(), b1.end(), 0.0);
  std::fill(w2.begin(), w2.end(), 0.0);
  std::fill(b2.begin(), b2.end(), 0.0);
}

Gradients& Gradients::operator+=(const Gradients& other) {
  for_each_block(*this, other, [](std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ContractError("gradient shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  });
  return *this;
}

Gradients& Gradients::operator*=(double s) {
  for (auto* v : {&w1, &b1, &w2, &b2})
    for (auto& x : *v) x *= s;
  return *this;
}

MlpParams mlp_init(MlpDims dims, Head head, const RngStream& rng) {
  if (dims.in == 0 || dims.hidden == 0 || dims.out == 0) throw ContractError("mlp dims must be positive");
  MlpParams p;
  p.dims = dims;
  p.head = head;
  // Weights depend only on (seed, stream) so the seed record reproduces them.
  p.seed = RngStream(rng.seed(), rng.stream());
  RngStream draw = p.seed;
  auto glorot = [&](std::vector<double>& w, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    w.resize(fan_in * fan_out);
    for (auto& x : w) x = draw.uniform(-limit, limit);
  };
  glorot(p.w1, dims.in, dims.hidden);
  p.b1.assign(dims.hidden, 0.0);
  glorot(p.w2, dims.hidden, dims.out);
  p.b2.assign(dims.out, 0.0);
  return p;
}

void forward(const MlpParams& p, std::span<const double> x, ForwardCache& cache) {
  const auto [in, hid, out] = p.dims;
  if (x.size() != in) throw ContractError("forward: input size mismatch");
  for (const double v : x)
    if (!std::isfinite(v)) throw NumericError("forward: non-finite input");

  cache.hidden.resize(hid);
  for (std::size_t h = 0; h < hid; ++h) {
    const double* row = p.w1.data() + h * in;
    double z = p.b1[h];
    for (std::size_t i = 0; i < in; ++i) z += row[i] * x[i];
    cache.hidden[h] = std::tanh(z);
  }
  cache.logits.resize(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = p.w2.data() + o * hid;
    double z = p.b2[o];
    for (std::size_t h = 0; h < hid; ++h) z += row[h] * cache.hidden[h];
    cache.logits[o] = z;
  }
  cache.output.resize(out);
  switch (p.head) {
    case Head::linear:
      cache.output = cache.logits;
      break;
    case Head::sigmoid:
      for (std::size_t o = 0; o < out; ++o) cache.output[o] = 1.0 / (1.0 + std::exp(-cache.logits[o]));
      break;
    case Head::softmax: {
      const double m = *std::max_element(cache.logits.begin(), cache.logits.end());
      double sum = 0.0;
      for (std::size_t o = 0; o < out; ++o) sum += (cache.output[o] = std::exp(cache.logits[o] - m));
      for (auto& y : cache.output) y /= sum;
      break;
    }
  }
}

std::vector<double> forward(const MlpParams& p, std::span<const double> x) {
  ForwardCache cache;
  forward(p, x, cache);
  return std::move(cache.output);
}

std::vector<double> head_backward(Head head, const ForwardCache& cache, std::span<const double> d_output) {
  const auto& y = cache.output;
  std::vector<double> dz(y.size());
  switch (head) {
    case Head::linear:
      std::copy(d_output.begin(), d_output.end(), dz.begin());
      break;
    case Head::sigmoid:
      for (std::size_t o = 0; o < y.size(); ++o) dz[o] = d_output[o] * y[o] * (1.0 - y[o]);
      break;
    case Head::softmax: {
      double dot = 0.0;
      for (std::size_t o = 0; o < y.size(); ++o) dot += d_output[o] * y[o];
      for (std::size_t o = 0; o < y.size(); ++o) dz[o] = y[o] * (d_output[o] - dot);
      break;
    }
  }
  return dz;
}

void backward_logits(const MlpParams& p, std::span<const double> x, const ForwardCache& cache,
                     std::span<const double> d_logits, Gradients& g) {
  const auto [in, hid, out] = p.dims;
  if (d_logits.size() != out || x.size() != in) throw ContractError("backward: shape mismatch");
  std::vector<double> d_hidden(hid, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    const double dz = d_logits[o];
    if (dz == 0.0) continue;
    g.b2[o] += dz;
    double* grow = g.w2.data() + o * hid;
    const double* wrow = p.w2.data() + o * hid;
    for (std::size_t h = 0; h < hid; ++h) {
      grow[h] += dz * cache.hidden[h];
      d_hidden[h] += dz * wrow[h];
    }
  }
  for (std::size_t h = 0; h < hid; ++h) {
    const double a = cache.hidden[h];
    const double dz = d_hidden[h] * (1.0 - a * a);
    if (dz == 0.0) continue;
    g.b1[h] += dz;
    double* grow = g.w1.data() + h * in;
    for (std::size_t i = 0; i < in; ++i) grow[i] += dz * x[i];
  }
}

Gradients backward(const MlpParams& p, std::span<const double> x, std::span<const double> d_output) {
  if (d_output.size() != p.dims.out) throw ContractError("backward: upstream size mismatch");
  ForwardCache cache;
  forward(p, x, cache);
  const auto dz = head_backward(p.head, cache, d_output);
  auto g = Gradients::zeros_like(p);
  backward_logits(p, x, cache, dz, g);
  return g;
}

AdamState AdamState::for_params(const MlpParams& p) {
  return {Gradients::zeros_like(p), Gradients::zeros_like(p), 0};
}

void adam_step(MlpParams& p, const Gradients& g, AdamState& state, const AdamConfig& cfg) {
  ++state.steps;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps));
  auto update = [&](std::vector<double>& w, const std::vector<double>& grad, std::vector<double>& m,
                    std::vector<double>& v) {
    if (w.size() != grad.size() || w.size() != m.size()) throw ContractError("adam: shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      w[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  };
  update(p.w1, g.w1, state.m.w1, state.v.w1);
  update(p.b1, g.b1, state.m.b1, state.v.b1);
  update(p.w2, g.w2, state.m.w2, state.v.w2);
  update(p.b2, g.b2, state.m.b2, state.v.b2);
}

// ---------------------------------------------------------------------------

namespace binio {

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, 8);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) throw FormatError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace binio

namespace {

constexpr char kMagic[8] = {'I', 'S', 'E', 'E', 'M', 'L', 'P', '\0'};
constexpr std::uint64_t kVersion = 1;
constexpr std::uint64_t kMaxDim = 1u << 20;

}  // namespace

void save_mlp(std::ostream& out, const MlpParams& p) {
  out.write(kMagic, sizeof kMagic);
  binio::put_u64(out, kVersion);
  binio::put_u64(out, p.dims.in);
  binio::put_u64(out, p.dims.hidden);
  binio::put_u64(out, p.dims.out);
  binio::put_u64(out, static_cast<std::uint64_t>(p.head));
  binio::put_u64(out, p.seed.seed());
  binio::put_u64(out, p.seed.stream());
  for (const auto* block : {&p.w1, &p.b1, &p.w2, &p.b2})
    for (const double x : *block) binio::put_f64(out, x);
}

MlpParams load_mlp(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw FormatError("not an mlp checkpoint");
  if (binio::get_u64(in) != kVersion) throw FormatError("unsupported mlp checkpoint version");
  MlpParams p;
  p.dims.in = binio::get_u64(in);
  p.dims.hidden = binio::get_u64(in);
  p.dims.out = binio::get_u64(in);
  for (const auto d : {p.dims.in, p.dims.hidden, p.dims.out})
    if (d == 0 || d > kMaxDim) throw FormatError("mlp checkpoint has invalid dims");
  const auto head = binio::get_u64(in);
  if (head > static_cast<std::uint64_t>(Head::softmax)) throw FormatError("mlp checkpoint has invalid head");
  p.head = static_cast<Head>(head);
  const auto seed = binio::get_u64(in);
  const auto stream = binio::get_u64(in);
  p.seed = RngStream(seed, stream);
  p.w1.resize(p.dims.in * p.dims.hidden);
  p.b1.resize(p.dims.hidden);
  p.w2.resize(p.dims.hidden * p.dims.out);
  p.b2.resize(p.dims.out);
  for (auto* block : {&p.w1, &p.b1, &p.w2, &p.b2})
    for (double& x : *block) x = binio::get_f64(in);
  return p;
}

void save_mlp(const std::string& path, const MlpParams& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  save_mlp(out, p);
}

MlpParams load_mlp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  return load_mlp(in);
}

}  // namespace isee
