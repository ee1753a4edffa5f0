#pragma once

// Single-timestep recurrent cells (vanilla, GRU, LSTM): forward steps with the
// intermediate values kept for backpropagation, the matching reverse steps, and
// parameter construction.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

#include "terrain/core_math.hpp"

namespace terrain {

enum class CellKind { vanilla, gru, lstm };

inline std::string_view to_string(CellKind k) {
  switch (k) {
    case CellKind::vanilla: return "vanilla";
    case CellKind::gru: return "gru";
    case CellKind::lstm: return "lstm";
  }
  return "?";
}

inline CellKind parse_cell_kind(std::string_view s) {
  if (s == "vanilla" || s == "rnn") return CellKind::vanilla;
  if (s == "gru") return CellKind::gru;
  if (s == "lstm") return CellKind::lstm;
  throw ArgumentError("unknown cell kind '" + std::string(s) + "' (expected vanilla, gru or lstm)");
}

/// h_t = tanh(W x_t + U h_{t-1} + b)
struct VanillaParams {
  static constexpr CellKind kind = CellKind::vanilla;
  Matrix w, u;
  Vector b;
  bool use_bias = true;

  std::size_t input_dim() const { return w.cols(); }
  std::size_t hidden_dim() const { return u.rows(); }
};

struct GruParams {
  static constexpr CellKind kind = CellKind::gru;
  Matrix w_z, u_z, w_r, u_r, w, u;
  Vector b_z, b_r, b_h;
  bool use_bias = true;

  std::size_t input_dim() const { return w_z.cols(); }
  std::size_t hidden_dim() const { return u_z.rows(); }
};

struct LstmParams {
  static constexpr CellKind kind = CellKind::lstm;
  Matrix w_i, u_i, w_f, u_f, w_o, u_o, w_c, u_c;
  Vector b_i, b_f, b_o, b_c;
  bool use_bias = true;

  std::size_t input_dim() const { return w_i.cols(); }
  std::size_t hidden_dim() const { return u_i.rows(); }
};

template <typename P>
concept RecurrentParams = std::same_as<std::remove_const_t<P>, VanillaParams> ||
                          std::same_as<std::remove_const_t<P>, GruParams> ||
                          std::same_as<std::remove_const_t<P>, LstmParams>;

/// Calls f(name, tensor) for every learnable tensor. Biases are skipped when
/// disabled, so they stay at zero and never enter the L2 term.
template <typename P, typename F>
  requires std::same_as<std::remove_const_t<P>, VanillaParams>
void visit_tensors(P& p, F&& f) {
  f("w", p.w);
  f("u", p.u);
  if (p.use_bias) f("b", p.b);
}

template <typename P, typename F>
  requires std::same_as<std::remove_const_t<P>, GruParams>
void visit_tensors(P& p, F&& f) {
  f("w_z", p.w_z);
  f("u_z", p.u_z);
  f("w_r", p.w_r);
  f("u_r", p.u_r);
  f("w", p.w);
  f("u", p.u);
  if (p.use_bias) {
    f("b_z", p.b_z);
    f("b_r", p.b_r);
    f("b_h", p.b_h);
  }
}

template <typename P, typename F>
  requires std::same_as<std::remove_const_t<P>, LstmParams>
void visit_tensors(P& p, F&& f) {
  f("w_i", p.w_i);
  f("u_i", p.u_i);
  f("w_f", p.w_f);
  f("u_f", p.u_f);
  f("w_o", p.w_o);
  f("u_o", p.u_o);
  f("w_c", p.w_c);
  f("u_c", p.u_c);
  if (p.use_bias) {
    f("b_i", p.b_i);
    f("b_f", p.b_f);
    f("b_o", p.b_o);
    f("b_c", p.b_c);
  }
}

/// Hidden state, plus the memory cell for LSTM (empty otherwise).
struct CellState {
  Vector h;
  Vector c;
};

// ---------------------------------------------------------------------------
// Parameter construction

namespace detail {

inline void glorot_fill(Matrix& m, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : m.span()) v = dist(rng);
}

inline void check_dims(std::size_t input_dim, std::size_t hidden) {
  if (input_dim == 0 || hidden == 0) {
    throw ArgumentError("init_params: input and hidden dims must be >= 1 (got input " +
                        std::to_string(input_dim) + ", hidden " + std::to_string(hidden) + ")");
  }
}

}  // namespace detail

/// Uniform Glorot bound for a fan_out x fan_in weight matrix.
inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <RecurrentParams P>
P make_params(std::size_t input_dim, std::size_t hidden, std::uint64_t seed, bool use_bias = true) {
  detail::check_dims(input_dim, hidden);
  P p;
  p.use_bias = use_bias;
  std::mt19937_64 rng(seed);
  auto input_side = [&](Matrix& m) {
    m = Matrix(hidden, input_dim);
    detail::glorot_fill(m, rng);
  };
  auto hidden_side = [&](Matrix& m) {
    m = Matrix(hidden, hidden);
    detail::glorot_fill(m, rng);
  };
  auto bias = [&](Vector& b) { b = Vector(hidden); };
  if constexpr (P::kind == CellKind::vanilla) {
    input_side(p.w), hidden_side(p.u), bias(p.b);
  } else if constexpr (P::kind == CellKind::gru) {
    input_side(p.w_z), hidden_side(p.u_z);
    input_side(p.w_r), hidden_side(p.u_r);
    input_side(p.w), hidden_side(p.u);
    bias(p.b_z), bias(p.b_r), bias(p.b_h);
  } else {
    input_side(p.w_i), hidden_side(p.u_i);
    input_side(p.w_f), hidden_side(p.u_f);
    input_side(p.w_o), hidden_side(p.u_o);
    input_side(p.w_c), hidden_side(p.u_c);
    bias(p.b_i), bias(p.b_f), bias(p.b_o), bias(p.b_c);
  }
  return p;
}

using CellParams = std::variant<VanillaParams, GruParams, LstmParams>;

inline CellParams init_params(CellKind cell, std::size_t input_dim, std::size_t hidden,
                              std::uint64_t seed, bool use_bias = true) {
  switch (cell) {
    case CellKind::vanilla: return make_params<VanillaParams>(input_dim, hidden, seed, use_bias);
    case CellKind::gru: return make_params<GruParams>(input_dim, hidden, seed, use_bias);
    case CellKind::lstm: return make_params<LstmParams>(input_dim, hidden, seed, use_bias);
  }
  throw ArgumentError("init_params: unknown cell kind");
}

inline CellKind kind_of(const CellParams& p) {
  return std::visit([](const auto& q) { return std::remove_cvref_t<decltype(q)>::kind; }, p);
}

inline std::size_t hidden_dim(const CellParams& p) {
  return std::visit([](const auto& q) { return q.hidden_dim(); }, p);
}

inline std::size_t input_dim(const CellParams& p) {
  return std::visit([](const auto& q) { return q.input_dim(); }, p);
}

/// Same structure as `p`, every tensor zero. Used for gradient accumulators.
template <RecurrentParams P>
P zeros_like(const P& p) {
  P z = p;
  visit_tensors(z, [](std::string_view, auto& t) { t.fill(0.0); });
  if constexpr (P::kind == CellKind::vanilla) {
    z.b.fill(0.0);
  } else if constexpr (P::kind == CellKind::gru) {
    z.b_z.fill(0.0), z.b_r.fill(0.0), z.b_h.fill(0.0);
  } else {
    z.b_i.fill(0.0), z.b_f.fill(0.0), z.b_o.fill(0.0), z.b_c.fill(0.0);
  }
  return z;
}

// ---------------------------------------------------------------------------
// Step caches and forward steps

struct VanillaStepCache {
  Vector x, h_prev, h;
};

struct GruStepCache {
  Vector x, h_prev, z, r, rh, cand, h;
};

struct LstmStepCache {
  Vector x, h_prev, c_prev, i, f, o, g, c, tanh_c, h;
};

template <RecurrentParams P>
struct StepCacheFor;
template <>
struct StepCacheFor<VanillaParams> {
  using type = VanillaStepCache;
};
template <>
struct StepCacheFor<GruParams> {
  using type = GruStepCache;
};
template <>
struct StepCacheFor<LstmParams> {
  using type = LstmStepCache;
};
template <RecurrentParams P>
using StepCache = typename StepCacheFor<std::remove_const_t<P>>::type;

namespace detail {

inline void check_step_dims(std::size_t in, std::size_t hid, std::size_t x, std::size_t h,
                            const char* who) {
  if (x != in || h != hid) {
    throw ShapeError(std::string(who) + ": params expect input " + std::to_string(in) +
                     ", hidden " + std::to_string(hid) + "; got input " + std::to_string(x) +
                     ", hidden " + std::to_string(h));
  }
}

// out = W x + U h + b (bias only when enabled)
inline void affine2(const Matrix& w, const Matrix& u, const Vector& b, bool use_bias,
                    std::span<const double> x, std::span<const double> h, Vector& out) {
  if (use_bias) {
    out = b;
  } else {
    out = Vector(u.rows());
  }
  gemv_add(w, x, out.span());
  gemv_add(u, h, out.span());
}

}  // namespace detail

/// Forward step; `state` is updated in place and `cache` receives everything
/// the reverse step needs.
inline void forward_step(const VanillaParams& p, std::span<const double> x, CellState& state,
                         VanillaStepCache& cache) {
  cache.x = Vector(std::vector<double>(x.begin(), x.end()));
  cache.h_prev = state.h;
  detail::affine2(p.w, p.u, p.b, p.use_bias, x, state.h.span(), cache.h);
  for (auto& v : cache.h) v = std::tanh(v);
  state.h = cache.h;
}

inline void forward_step(const GruParams& p, std::span<const double> x, CellState& state,
                         GruStepCache& cache) {
  const std::size_t n = p.hidden_dim();
  cache.x = Vector(std::vector<double>(x.begin(), x.end()));
  cache.h_prev = state.h;
  const auto hp = cache.h_prev.span();
  detail::affine2(p.w_z, p.u_z, p.b_z, p.use_bias, x, hp, cache.z);
  detail::affine2(p.w_r, p.u_r, p.b_r, p.use_bias, x, hp, cache.r);
  cache.rh = Vector(n);
  for (std::size_t j = 0; j < n; ++j) {
    cache.z[j] = sigmoid(cache.z[j]);
    cache.r[j] = sigmoid(cache.r[j]);
    cache.rh[j] = cache.r[j] * hp[j];
  }
  detail::affine2(p.w, p.u, p.b_h, p.use_bias, x, cache.rh.span(), cache.cand);
  cache.h = Vector(n);
  for (std::size_t j = 0; j < n; ++j) {
    cache.cand[j] = std::tanh(cache.cand[j]);
    cache.h[j] = (1.0 - cache.z[j]) * hp[j] + cache.z[j] * cache.cand[j];
  }
  state.h = cache.h;
}

inline void forward_step(const LstmParams& p, std::span<const double> x, CellState& state,
                         LstmStepCache& cache) {
  const std::size_t n = p.hidden_dim();
  cache.x = Vector(std::vector<double>(x.begin(), x.end()));
  cache.h_prev = state.h;
  cache.c_prev = state.c.dim() == n ? state.c : Vector(n);
  const auto hp = cache.h_prev.span();
  detail::affine2(p.w_i, p.u_i, p.b_i, p.use_bias, x, hp, cache.i);
  detail::affine2(p.w_f, p.u_f, p.b_f, p.use_bias, x, hp, cache.f);
  detail::affine2(p.w_o, p.u_o, p.b_o, p.use_bias, x, hp, cache.o);
  detail::affine2(p.w_c, p.u_c, p.b_c, p.use_bias, x, hp, cache.g);
  cache.c = Vector(n);
  cache.tanh_c = Vector(n);
  cache.h = Vector(n);
  for (std::size_t j = 0; j < n; ++j) {
    cache.i[j] = sigmoid(cache.i[j]);
    cache.f[j] = sigmoid(cache.f[j]);
    cache.o[j] = sigmoid(cache.o[j]);
    cache.g[j] = std::tanh(cache.g[j]);
    cache.c[j] = cache.f[j] * cache.c_prev[j] + cache.i[j] * cache.g[j];
    cache.tanh_c[j] = std::tanh(cache.c[j]);
    cache.h[j] = cache.o[j] * cache.tanh_c[j];
  }
  state.h = cache.h;
  state.c = cache.c;
}

// Public single-step API.

inline Vector rnn_step(const Matrix& w, const Matrix& u, const Vector& b, const Vector& x_t,
                       const Vector& h_prev) {
  detail::check_step_dims(w.cols(), u.rows(), x_t.dim(), h_prev.dim(), "rnn_step");
  if (u.cols() != u.rows() || w.rows() != u.rows() || b.dim() != u.rows()) {
    throw ShapeError("rnn_step: W " + w.shape_string() + ", U " + u.shape_string() + ", b " +
                     std::to_string(b.dim()) + " are inconsistent");
  }
  VanillaParams p{w, u, b, true};
  CellState s{h_prev, {}};
  VanillaStepCache cache;
  forward_step(p, x_t.span(), s, cache);
  return s.h;
}

inline Vector gru_step(const GruParams& p, const Vector& x_t, const Vector& h_prev) {
  detail::check_step_dims(p.input_dim(), p.hidden_dim(), x_t.dim(), h_prev.dim(), "gru_step");
  CellState s{h_prev, {}};
  GruStepCache cache;
  forward_step(p, x_t.span(), s, cache);
  return s.h;
}

inline CellState lstm_step(const LstmParams& p, const Vector& x_t, const CellState& state) {
  detail::check_step_dims(p.input_dim(), p.hidden_dim(), x_t.dim(), state.h.dim(), "lstm_step");
  if (state.c.dim() != p.hidden_dim()) {
    throw ShapeError("lstm_step: memory cell has dim " + std::to_string(state.c.dim()) +
                     ", expected " + std::to_string(p.hidden_dim()));
  }
  CellState s = state;
  LstmStepCache cache;
  forward_step(p, x_t.span(), s, cache);
  return s;
}

// ---------------------------------------------------------------------------
// Reverse steps
//
// On entry `dh` (and `dc` for LSTM) hold the gradient w.r.t. this step's
// outputs; on exit they hold the gradient w.r.t. the previous step's state.
// Parameter gradients accumulate into `g`; `dx`, when non-empty, receives the
// gradient w.r.t. the step input (accumulated).

namespace detail {

inline void accumulate_gate(const Matrix& w, const Matrix& u, Matrix& gw, Matrix& gu, Vector& gb,
                            bool use_bias, std::span<const double> da,
                            std::span<const double> x, std::span<const double> h_in,
                            std::span<double> dh_prev, std::span<double> dx) {
  outer_add(gw, da, x);
  outer_add(gu, da, h_in);
  if (use_bias) {
    for (std::size_t j = 0; j < da.size(); ++j) gb[j] += da[j];
  }
  if (!dh_prev.empty()) gemv_t_add(u, da, dh_prev);
  if (!dx.empty()) gemv_t_add(w, da, dx);
}

}  // namespace detail

inline void backward_step(const VanillaParams& p, const VanillaStepCache& c, Vector& dh,
                          Vector& /*dc*/, VanillaParams& g, std::span<double> dx) {
  const std::size_t n = p.hidden_dim();
  Vector da(n);
  for (std::size_t j = 0; j < n; ++j) da[j] = dh[j] * (1.0 - c.h[j] * c.h[j]);
  Vector dh_prev(n);
  detail::accumulate_gate(p.w, p.u, g.w, g.u, g.b, p.use_bias, da.span(), c.x.span(),
                          c.h_prev.span(), dh_prev.span(), dx);
  dh = std::move(dh_prev);
}

inline void backward_step(const GruParams& p, const GruStepCache& c, Vector& dh, Vector& /*dc*/,
                          GruParams& g, std::span<double> dx) {
  const std::size_t n = p.hidden_dim();
  Vector dh_prev(n), da_z(n), da_h(n), d_rh(n), da_r(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double dz = dh[j] * (c.cand[j] - c.h_prev[j]);
    const double dcand = dh[j] * c.z[j];
    dh_prev[j] = dh[j] * (1.0 - c.z[j]);
    da_z[j] = dz * c.z[j] * (1.0 - c.z[j]);
    da_h[j] = dcand * (1.0 - c.cand[j] * c.cand[j]);
  }
  // candidate path: U sees r * h_prev
  detail::accumulate_gate(p.w, p.u, g.w, g.u, g.b_h, p.use_bias, da_h.span(), c.x.span(),
                          c.rh.span(), d_rh.span(), dx);
  for (std::size_t j = 0; j < n; ++j) {
    const double dr = d_rh[j] * c.h_prev[j];
    dh_prev[j] += d_rh[j] * c.r[j];
    da_r[j] = dr * c.r[j] * (1.0 - c.r[j]);
  }
  detail::accumulate_gate(p.w_z, p.u_z, g.w_z, g.u_z, g.b_z, p.use_bias, da_z.span(), c.x.span(),
                          c.h_prev.span(), dh_prev.span(), dx);
  detail::accumulate_gate(p.w_r, p.u_r, g.w_r, g.u_r, g.b_r, p.use_bias, da_r.span(), c.x.span(),
                          c.h_prev.span(), dh_prev.span(), dx);
  dh = std::move(dh_prev);
}

inline void backward_step(const LstmParams& p, const LstmStepCache& c, Vector& dh, Vector& dc,
                          LstmParams& g, std::span<double> dx) {
  const std::size_t n = p.hidden_dim();
  if (dc.dim() != n) dc = Vector(n);
  Vector da_i(n), da_f(n), da_o(n), da_g(n), dh_prev(n), dc_prev(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double d_o = dh[j] * c.tanh_c[j];
    const double dct = dc[j] + dh[j] * c.o[j] * (1.0 - c.tanh_c[j] * c.tanh_c[j]);
    const double d_i = dct * c.g[j];
    const double d_g = dct * c.i[j];
    const double d_f = dct * c.c_prev[j];
    dc_prev[j] = dct * c.f[j];
    da_i[j] = d_i * c.i[j] * (1.0 - c.i[j]);
    da_f[j] = d_f * c.f[j] * (1.0 - c.f[j]);
    da_o[j] = d_o * c.o[j] * (1.0 - c.o[j]);
    da_g[j] = d_g * (1.0 - c.g[j] * c.g[j]);
  }
  const auto x = c.x.span();
  const auto hp = c.h_prev.span();
  detail::accumulate_gate(p.w_i, p.u_i, g.w_i, g.u_i, g.b_i, p.use_bias, da_i.span(), x, hp,
                          dh_prev.span(), dx);
  detail::accumulate_gate(p.w_f, p.u_f, g.w_f, g.u_f, g.b_f, p.use_bias, da_f.span(), x, hp,
                          dh_prev.span(), dx);
  detail::accumulate_gate(p.w_o, p.u_o, g.w_o, g.u_o, g.b_o, p.use_bias, da_o.span(), x, hp,
                          dh_prev.span(), dx);
  detail::accumulate_gate(p.w_c, p.u_c, g.w_c, g.u_c, g.b_c, p.use_bias, da_g.span(), x, hp,
                          dh_prev.span(), dx);
  dh = std::move(dh_prev);
  dc = std::move(dc_prev);
}

}  // namespace terrain
