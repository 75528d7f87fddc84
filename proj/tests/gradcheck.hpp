#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "isee/neural.hpp"

namespace testing_util {

// Flat views in the w1, b1, w2, b2 order.
inline std::vector<double*> param_slots(isee::MlpParams& p) {
  std::vector<double*> out;
  for (auto* block : {&p.w1, &p.b1, &p.w2, &p.b2})
    for (auto& v : *block) out.push_back(&v);
  return out;
}

inline std::vector<double> flat(const isee::Gradients& g) {
  std::vector<double> out;
  for (const auto* block : {&g.w1, &g.b1, &g.w2, &g.b2}) out.insert(out.end(), block->begin(), block->end());
  return out;
}

// Forward pass written out with plain loops, independent of the library.
inline std::vector<double> straight_line_forward(const isee::MlpParams& p, const std::vector<double>& x) {
  const auto in = p.dims.in, hid = p.dims.hidden, out = p.dims.out;
  std::vector<double> h(hid), z(out), y(out);
  for (std::size_t j = 0; j < hid; ++j) {
    double a = p.b1[j];
    for (std::size_t i = 0; i < in; ++i) a += p.w1[j * in + i] * x[i];
    h[j] = std::tanh(a);
  }
  for (std::size_t k = 0; k < out; ++k) {
    double a = p.b2[k];
    for (std::size_t j = 0; j < hid; ++j) a += p.w2[k * hid + j] * h[j];
    z[k] = a;
  }
  switch (p.head) {
    case isee::Head::linear: y = z; break;
    case isee::Head::sigmoid:
      for (std::size_t k = 0; k < out; ++k) y[k] = 1.0 / (1.0 + std::exp(-z[k]));
      break;
    case isee::Head::softmax: {
      const double m = *std::max_element(z.begin(), z.end());
      double s = 0;
      for (std::size_t k = 0; k < out; ++k) s += (y[k] = std::exp(z[k] - m));
      for (auto& v : y) v /= s;
      break;
    }
  }
  return y;
}

// Largest componentwise relative error between an analytic gradient and
// central differences of `loss` (step h). Components where both are tiny
// are compared in absolute terms.
inline double gradient_error(isee::MlpParams p, const isee::Gradients& analytic,
                             const std::function<double(const isee::MlpParams&)>& loss, double h = 1e-5) {
  const auto a = flat(analytic);
  auto slots = param_slots(p);
  double worst = 0.0;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const double keep = *slots[k];
    *slots[k] = keep + h;
    const double up = loss(p);
    *slots[k] = keep - h;
    const double down = loss(p);
    *slots[k] = keep;
    const double num = (up - down) / (2 * h);
    const double scale = std::max(std::abs(a[k]), std::abs(num));
    const double err = scale < 1e-6 ? std::abs(a[k] - num) : std::abs(a[k] - num) / scale;
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace testing_util
