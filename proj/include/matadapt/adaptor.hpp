#pragma once
// Residual MLP over frozen embeddings:
//
//   y = x + W2 * tanh(W1 * x + b1) + b2
//
// W2 and b2 start at exactly zero, so a freshly initialized adaptor is the
// identity map and training begins from the untouched embeddings. One hidden
// layer; the activation is fixed to tanh and recorded in the weight file.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "matadapt/embedding.hpp"
#include "matadapt/errors.hpp"
#include "matadapt/matrix.hpp"
#include "matadapt/rng.hpp"

namespace matadapt {

struct MlpAdaptor {
  std::uint32_t d = 0;  // input == output dimension
  std::uint32_t h = 0;  // hidden width
  std::vector<double> w1;  // h x d row-major
  std::vector<double> b1;  // h
  std::vector<double> w2;  // d x h row-major
  std::vector<double> b2;  // d

  std::size_t param_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
};

// Gradient accumulator shaped like the adaptor's parameter blocks.
struct AdaptorGrads {
  std::vector<double> w1, b1, w2, b2;

  AdaptorGrads() = default;
  explicit AdaptorGrads(const MlpAdaptor& f)
      : w1(f.w1.size(), 0.0), b1(f.b1.size(), 0.0), w2(f.w2.size(), 0.0), b2(f.b2.size(), 0.0) {}

  void clear() {
    std::fill(w1.begin(), w1.end(), 0.0);
    std::fill(b1.begin(), b1.end(), 0.0);
    std::fill(w2.begin(), w2.end(), 0.0);
    std::fill(b2.begin(), b2.end(), 0.0);
  }
};

inline std::array<std::span<double>, 4> param_blocks(MlpAdaptor& f) {
  return {std::span(f.w1), std::span(f.b1), std::span(f.w2), std::span(f.b2)};
}

inline std::array<std::span<const double>, 4> param_blocks(const MlpAdaptor& f) {
  return {std::span(f.w1), std::span(f.b1), std::span(f.w2), std::span(f.b2)};
}

inline std::array<std::span<const double>, 4> grad_blocks(const AdaptorGrads& g) {
  return {std::span(g.w1), std::span(g.b1), std::span(g.w2), std::span(g.b2)};
}

// Layer 1 gets uniform noise at scale 1/sqrt(d); layer 2 starts at zero so
// adapt(init, x) == x exactly. Deterministic under `seed`.
inline MlpAdaptor init_adaptor(std::uint32_t d, std::uint32_t h, std::uint64_t seed) {
  if (d < 1 || h < 1) throw Error("init_adaptor: d and hidden_dim must be positive");
  MlpAdaptor f;
  f.d = d;
  f.h = h;
  f.w1.resize(static_cast<std::size_t>(h) * d);
  f.b1.resize(h);
  f.w2.assign(static_cast<std::size_t>(d) * h, 0.0);
  f.b2.assign(d, 0.0);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& w : f.w1) w = rng.uniform(-scale, scale);
  for (auto& b : f.b1) b = rng.uniform(-scale, scale);
  return f;
}

// Forward pass; `hidden` receives tanh(W1 x + b1) for reuse in the backward
// pass. All three spans must be caller-sized (x, y: d; hidden: h).
inline void adapt_into(const MlpAdaptor& f, std::span<const double> x, std::span<double> y,
                       std::span<double> hidden) {
  if (x.size() != f.d) throw DimMismatch("adapt: input dimension mismatch");
  for (std::uint32_t j = 0; j < f.h; ++j) {
    const double* w = f.w1.data() + static_cast<std::size_t>(j) * f.d;
    double acc = f.b1[j];
    for (std::uint32_t i = 0; i < f.d; ++i) acc += w[i] * x[i];
    hidden[j] = std::tanh(acc);
  }
  for (std::uint32_t i = 0; i < f.d; ++i) {
    const double* w = f.w2.data() + static_cast<std::size_t>(i) * f.h;
    double acc = x[i] + f.b2[i];
    for (std::uint32_t j = 0; j < f.h; ++j) acc += w[j] * hidden[j];
    y[i] = acc;
  }
}

inline std::vector<double> adapt(const MlpAdaptor& f, std::span<const double> x) {
  std::vector<double> y(f.d), hidden(f.h);
  adapt_into(f, x, y, hidden);
  return y;
}

inline std::vector<double> adapt(const MlpAdaptor& f, std::span<const float> x) {
  std::vector<double> xd(x.begin(), x.end());
  return adapt(f, xd);
}

struct AdaptedBatch {
  Matrix adapted;  // rows x d
  Matrix hidden;   // rows x h
};

inline AdaptedBatch adapt_batch(const MlpAdaptor& f, const Matrix& x) {
  if (x.cols != f.d) throw DimMismatch("adapt_batch: input dimension mismatch");
  AdaptedBatch out;
  out.adapted = Matrix(x.rows, f.d);
  out.hidden = Matrix(x.rows, f.h);
  for (std::size_t r = 0; r < x.rows; ++r)
    adapt_into(f, x.row(r), out.adapted.row(r), out.hidden.row(r));
  return out;
}

// Accumulates d(loss)/d(params) into `acc` given d(loss)/d(y) for one input.
// `hidden` must be the forward activations for `x`. When `grad_x` is
// non-empty it receives d(loss)/d(x), which includes the identity term from
// the skip connection.
inline void adapt_backward_into(const MlpAdaptor& f, std::span<const double> x,
                                std::span<const double> hidden, std::span<const double> upstream,
                                AdaptorGrads& acc, std::span<double> grad_x = {}) {
  if (x.size() != f.d || upstream.size() != f.d)
    throw DimMismatch("adapt_backward: dimension mismatch");

  // y_i = x_i + b2_i + sum_j w2[i][j] * hidden_j
  std::vector<double> grad_hidden(f.h, 0.0);
  for (std::uint32_t i = 0; i < f.d; ++i) {
    const double u = upstream[i];
    acc.b2[i] += u;
    const double* w = f.w2.data() + static_cast<std::size_t>(i) * f.h;
    double* gw = acc.w2.data() + static_cast<std::size_t>(i) * f.h;
    for (std::uint32_t j = 0; j < f.h; ++j) {
      gw[j] += u * hidden[j];
      grad_hidden[j] += u * w[j];
    }
  }

  // hidden_j = tanh(pre_j); d tanh = 1 - hidden^2
  if (!grad_x.empty())
    for (std::uint32_t i = 0; i < f.d; ++i) grad_x[i] += upstream[i];
  for (std::uint32_t j = 0; j < f.h; ++j) {
    const double gpre = grad_hidden[j] * (1.0 - hidden[j] * hidden[j]);
    if (gpre == 0.0) continue;
    acc.b1[j] += gpre;
    const double* w = f.w1.data() + static_cast<std::size_t>(j) * f.d;
    double* gw = acc.w1.data() + static_cast<std::size_t>(j) * f.d;
    for (std::uint32_t i = 0; i < f.d; ++i) {
      gw[i] += gpre * x[i];
      if (!grad_x.empty()) grad_x[i] += gpre * w[i];
    }
  }
}

// Convenience form that recomputes the forward activations.
inline AdaptorGrads adapt_backward(const MlpAdaptor& f, std::span<const double> x,
                                   std::span<const double> upstream) {
  std::vector<double> y(f.d), hidden(f.h);
  adapt_into(f, x, y, hidden);
  AdaptorGrads acc(f);
  adapt_backward_into(f, x, hidden, upstream, acc);
  return acc;
}

inline void adapt_backward_batch(const MlpAdaptor& f, const Matrix& x, const Matrix& hidden,
                                 const Matrix& upstream, AdaptorGrads& acc) {
  if (!x.same_shape(upstream) || hidden.rows != x.rows)
    throw DimMismatch("adapt_backward_batch: shape mismatch");
  for (std::size_t r = 0; r < x.rows; ++r)
    adapt_backward_into(f, x.row(r), hidden.row(r), upstream.row(r), acc);
}

// --------------------------------------------------------------------------
// Weight persistence (versioned JSON)

inline void save_weights(const MlpAdaptor& f, const std::filesystem::path& path) {
  nlohmann::json j;
  j["version"] = 1;
  j["d"] = f.d;
  j["h"] = f.h;
  j["activation"] = "tanh";
  auto nested = [](const std::vector<double>& flat, std::size_t rows, std::size_t cols) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t r = 0; r < rows; ++r)
      out.push_back(std::vector<double>(flat.begin() + r * cols, flat.begin() + (r + 1) * cols));
    return out;
  };
  j["w1"] = nested(f.w1, f.h, f.d);
  j["b1"] = f.b1;
  j["w2"] = nested(f.w2, f.d, f.h);
  j["b2"] = f.b2;
  detail::write_file_bytes(path, j.dump());
}

inline MlpAdaptor load_weights(const std::filesystem::path& path) {
  const std::string buf = detail::read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || j.value("version", 0) != 1)
    throw FormatError(path.string() + ": unsupported weight file version");
  if (j.value("activation", "") != std::string("tanh"))
    throw FormatError(path.string() + ": unsupported activation");

  MlpAdaptor f;
  try {
    f.d = j.at("d").get<std::uint32_t>();
    f.h = j.at("h").get<std::uint32_t>();
    auto flat = [&](const nlohmann::json& rows, std::size_t nrows, std::size_t ncols,
                    const char* name) {
      if (!rows.is_array() || rows.size() != nrows)
        throw DimMismatch(path.string() + ": bad row count in " + name);
      std::vector<double> out;
      out.reserve(nrows * ncols);
      for (const auto& row : rows) {
        if (!row.is_array() || row.size() != ncols)
          throw DimMismatch(path.string() + ": bad row length in " + name);
        for (const auto& v : row) out.push_back(v.get<double>());
      }
      return out;
    };
    f.w1 = flat(j.at("w1"), f.h, f.d, "w1");
    f.b1 = j.at("b1").get<std::vector<double>>();
    f.w2 = flat(j.at("w2"), f.d, f.h, "w2");
    f.b2 = j.at("b2").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (f.d < 1 || f.h < 1 || f.b1.size() != f.h || f.b2.size() != f.d)
    throw DimMismatch(path.string() + ": inconsistent dimensions");
  for (auto blocks = param_blocks(f); const auto& block : blocks)
    for (double v : block)
      if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite parameter");
  return f;
}

}  // namespace matadapt
