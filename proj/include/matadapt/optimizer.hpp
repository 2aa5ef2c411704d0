#pragma once
// Bias-corrected Adam over flat parameter vectors, plus a convenience
// overload that walks an adaptor's parameter blocks against one shared
// moment buffer.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "matadapt/adaptor.hpp"
#include "matadapt/errors.hpp"

namespace matadapt {

struct AdamState {
  std::uint64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : first_moment(n, 0.0), second_moment(n, 0.0) {}
};

namespace detail {

inline void adam_update(std::span<double> params, std::span<const double> grads, double* m,
                        double* v, const AdamState& s, double lr) {
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * grads[i];
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + s.epsilon);
  }
}

}  // namespace detail

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      double lr) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size())
    throw DimMismatch("adam_step: parameter/gradient/state size mismatch");
  state.step += 1;
  detail::adam_update(params, grads, state.first_moment.data(), state.second_moment.data(), state,
                      lr);
}

// One update over all four adaptor blocks (w1, b1, w2, b2 order); `state`
// must be sized to f.param_count().
inline void adam_step(MlpAdaptor& f, const AdaptorGrads& g, AdamState& state, double lr) {
  if (state.first_moment.size() != f.param_count())
    throw DimMismatch("adam_step: state not sized to adaptor parameters");
  state.step += 1;
  std::size_t offset = 0;
  auto params = param_blocks(f);
  auto grads = grad_blocks(g);
  for (std::size_t b = 0; b < params.size(); ++b) {
    detail::adam_update(params[b], grads[b], state.first_moment.data() + offset,
                        state.second_moment.data() + offset, state, lr);
    offset += params[b].size();
  }
}

}  // namespace matadapt
