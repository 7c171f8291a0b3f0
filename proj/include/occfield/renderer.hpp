#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "occfield/ray_sampler.hpp"

namespace occfield {

/// Weight mode treats the field value as the per-sample rendering alpha
/// directly (the default). Density mode is the classic extinction form and is
/// kept for the literal-equivalence checks against the textbook recurrence.
enum class RenderMode { Weight, Density };

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

/// Raw grid parameter -> per-sample alpha (weight mode, in [0,1)) or density
/// (density mode, >= 0).
inline double activate_opacity(double raw, RenderMode mode) {
  if (mode == RenderMode::Weight) return std::min(sigmoid(raw), 1.0 - 1e-15);
  return softplus(raw);
}

inline double activate_opacity_derivative(double raw, RenderMode mode) {
  if (mode == RenderMode::Weight) {
    const double s = sigmoid(raw);
    return s >= 1.0 - 1e-15 ? 0.0 : s * (1.0 - s);
  }
  return sigmoid(raw);  // d softplus
}

/// One rendered ray. Weights and transmittance are retained for the backward
/// pass and the normalization tests.
struct RenderedPixel {
  double depth = 0;                 // expected distance along the unit ray
  double accumulated_opacity = 0;   // sum of weights
  std::vector<double> semantics;    // pre-softmax accumulated logits
  std::vector<double> weights;      // w_k per sample
  std::vector<double> transmittance;  // T(t_k) per sample
};

namespace detail {
inline void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::runtime_error(std::string("render: non-finite ") + what);
}
}  // namespace detail

/// Fills weights/transmittance from per-sample opacity values and integrates
/// expected depth. `values` are alphas (weight mode) or densities (density
/// mode); intervals come from the samples.
inline void render_depth(const RaySamples& samples, const std::vector<double>& values,
                         RenderMode mode, RenderedPixel& out) {
  const int L = samples.count;
  if (static_cast<int>(values.size()) != L)
    throw std::runtime_error("render_depth: value/sample count mismatch");
  detail::check_finite(values, "opacity");
  out.weights.resize(L);
  out.transmittance.resize(L);
  out.semantics.clear();
  double T = 1.0;
  double depth = 0.0, acc = 0.0;
  for (int k = 0; k < L; ++k) {
    out.transmittance[k] = T;
    const double a = mode == RenderMode::Weight
                         ? values[k]
                         : 1.0 - std::exp(-values[k] * samples.delta[k]);
    const double w = T * a;
    out.weights[k] = w;
    depth += w * samples.t[k];
    acc += w;
    T *= 1.0 - a;
  }
  out.depth = depth;
  out.accumulated_opacity = acc;
}

inline RenderedPixel render_depth(const RaySamples& samples, const std::vector<double>& values,
                                  RenderMode mode) {
  RenderedPixel px;
  render_depth(samples, values, mode, px);
  return px;
}

/// Semantic rendering over its own (typically strided) sample set:
/// S_hat_c = sum_k w_k * logits[k*C + c]. Weights are recomputed from the
/// subset so it behaves as an independent, shorter ray.
inline std::vector<double> render_semantics(const RaySamples& samples,
                                            const std::vector<double>& values,
                                            const std::vector<double>& logits, int num_classes,
                                            RenderMode mode, RenderedPixel* retained = nullptr) {
  const int L = samples.count;
  if (static_cast<int>(logits.size()) != L * num_classes)
    throw std::runtime_error("render_semantics: logits dimension mismatch");
  RenderedPixel local;
  RenderedPixel& px = retained ? *retained : local;
  render_depth(samples, values, mode, px);
  std::vector<double> out(num_classes, 0.0);
  for (int k = 0; k < L; ++k)
    for (int c = 0; c < num_classes; ++c) out[c] += px.weights[k] * logits[k * num_classes + c];
  px.semantics = out;
  return out;
}

/// Upstream derivatives flowing into one rendered ray.
struct RenderUpstream {
  double depth = 0;
  double accumulated = 0;
  const double* semantics = nullptr;  // num_classes entries or null
  int num_classes = 0;
};

/// Reverse mode of render_depth/render_semantics. Produces d(loss)/d(value_k)
/// for the activated per-sample opacities and, when logits are given,
/// d(loss)/d(logit) as well. Uses the retained weights/transmittance.
inline void render_backward(const RaySamples& samples, const std::vector<double>& values,
                            RenderMode mode, const RenderedPixel& fwd,
                            const RenderUpstream& up, std::vector<double>& g_values,
                            const std::vector<double>* logits = nullptr,
                            std::vector<double>* g_logits = nullptr) {
  const int L = samples.count;
  g_values.assign(L, 0.0);
  if (g_logits) g_logits->assign(L * up.num_classes, 0.0);

  // dL/dw_k from every consumer of the weights
  std::vector<double> g_w(L, 0.0);
  for (int k = 0; k < L; ++k) {
    double g = up.depth * samples.t[k] + up.accumulated;
    if (up.semantics && logits)
      for (int c = 0; c < up.num_classes; ++c)
        g += up.semantics[c] * (*logits)[k * up.num_classes + c];
    g_w[k] = g;
    if (g_logits && up.semantics)
      for (int c = 0; c < up.num_classes; ++c)
        (*g_logits)[k * up.num_classes + c] = up.semantics[c] * fwd.weights[k];
  }

  // each w_k already carries every consumer (depth, accumulated opacity,
  // semantics), so only the occlusion chain through later weights remains
  double suffix = 0.0;  // sum_{k > i} g_w[k] * w[k]
  for (int i = L - 1; i >= 0; --i) {
    const double Ti = fwd.transmittance[i];
    if (mode == RenderMode::Weight) {
      const double one_minus = 1.0 - values[i];
      g_values[i] = g_w[i] * Ti - (suffix == 0.0 ? 0.0 : suffix / one_minus);
    } else {
      const double att = std::exp(-values[i] * samples.delta[i]);
      g_values[i] =
          g_w[i] * Ti * samples.delta[i] * att - samples.delta[i] * suffix;
    }
    suffix += g_w[i] * fwd.weights[i];
  }
}

}  // namespace occfield
