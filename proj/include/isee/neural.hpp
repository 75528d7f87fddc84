#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "isee/rng.hpp"

namespace isee {

enum class Head : std::uint8_t { sigmoid, linear, softmax };

struct MlpDims {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t out = 0;
  bool operator==(const MlpDims&) const = default;
};

// in -> tanh(hidden) -> head(out). Weights are row-major: w1 is
// hidden x in, w2 is out x hidden.
struct MlpParams {
  MlpDims dims;
  Head head = Head::linear;
  RngStream seed;
  std::vector<double> w1, b1, w2, b2;

  std::size_t num_params() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
  bool all_finite() const;
  bool operator==(const MlpParams&) const = default;
};

struct Gradients {
  std::vector<double> w1, b1, w2, b2;

  static Gradients zeros_like(const MlpParams& p);
  void set_zero();
  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double s);
  bool operator==(const Gradients&) const = default;
};

// Visits the four parameter blocks in a fixed order (w1, b1, w2, b2).
template <typename P, typename G, typename F>
void for_each_block(P& params, G& grads, F&& f) {
  f(params.w1, grads.w1);
  f(params.b1, grads.b1);
  f(params.w2, grads.w2);
  f(params.b2, grads.b2);
}

// Glorot-uniform weights, zero biases. Only rng.seed() and rng.stream() are
// used, so the stored seed record regenerates the same parameters.
MlpParams mlp_init(MlpDims dims, Head head, const RngStream& rng);

struct ForwardCache {
  std::vector<double> hidden;  // tanh activations
  std::vector<double> logits;  // output pre-activations
  std::vector<double> output;  // after the head
};

// Throws NumericError on non-finite input, ContractError on size mismatch.
std::vector<double> forward(const MlpParams& p, std::span<const double> x);
void forward(const MlpParams& p, std::span<const double> x, ForwardCache& cache);

// Gradient of a scalar loss w.r.t. the parameters, given dL/d(output).
Gradients backward(const MlpParams& p, std::span<const double> x, std::span<const double> d_output);

// Accumulates into `grads` given dL/d(logits) and a cache from forward().
void backward_logits(const MlpParams& p, std::span<const double> x, const ForwardCache& cache,
                     std::span<const double> d_logits, Gradients& grads);

// dL/d(logits) from dL/d(output) through the head.
std::vector<double> head_backward(Head head, const ForwardCache& cache, std::span<const double> d_output);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Gradients m;
  Gradients v;
  std::int64_t steps = 0;

  static AdamState for_params(const MlpParams& p);
  bool operator==(const AdamState&) const = default;
};

void adam_step(MlpParams& p, const Gradients& g, AdamState& state, const AdamConfig& cfg);

// Versioned little-endian blob: magic, version, dims, head, seed record,
// then w1, b1, w2, b2 as IEEE-754 doubles.
void save_mlp(std::ostream& out, const MlpParams& p);
MlpParams load_mlp(std::istream& in);
void save_mlp(const std::string& path, const MlpParams& p);
MlpParams load_mlp(const std::string& path);

// Little-endian primitives shared with other checkpoint writers.
namespace binio {
void put_u64(std::ostream& out, std::uint64_t v);
void put_f64(std::ostream& out, double v);
std::uint64_t get_u64(std::istream& in);
double get_f64(std::istream& in);
}  // namespace binio

}  // namespace isee
