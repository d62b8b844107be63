// SPDX-License-Identifier: Apache-2.0
#include "lprec/mlp.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

#include "lprec/errors.hpp"
#include "lprec/qops.hpp"

namespace lprec {

namespace {

void check_spec(const MlpSpec& spec) {
  if (spec.input_dim < 1 || spec.hidden_dim < 1)
    throw ConfigError("mlp: input_dim and hidden_dim must be >= 1");
}

// numerically stable two-class logistic loss from the label margin
// m = z_label - z_other:  log(1 + exp(-m))
double softplus_of_neg(double m) {
  if (m >= 0.0) return std::log1p(std::exp(-m));
  return -m + std::log1p(std::exp(m));
}

double stable_sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

MlpParams mlp_zero_params(const MlpSpec& spec, const FloatFormat& fmt) {
  check_spec(spec);
  MlpParams p;
  p.w1.value = QTensor::zeros(spec.hidden_dim, spec.input_dim, fmt);
  p.b1.value = QTensor::zeros_vec(spec.hidden_dim, fmt);
  p.w2.value = QTensor::zeros(MlpSpec::kClasses, spec.hidden_dim, fmt);
  p.b2.value = QTensor::zeros_vec(MlpSpec::kClasses, fmt);
  return p;
}

MlpParams mlp_init_params(const MlpSpec& spec, const FloatFormat& fmt,
                          std::uint64_t seed) {
  MlpParams p = mlp_zero_params(spec, fmt);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(spec.hidden_dim));
  RngStream r1(seed, stream_id_from("mlp/w1"));
  for (std::size_t i = 0; i < p.w1.value.size(); ++i)
    p.w1.value.set(i, round_nearest(s1 * r1.normal(), fmt));
  RngStream r2(seed, stream_id_from("mlp/w2"));
  for (std::size_t i = 0; i < p.w2.value.size(); ++i)
    p.w2.value.set(i, round_nearest(s2 * r2.normal(), fmt));
  return p;
}

MlpBatch MlpDataset::sample(std::size_t i) const {
  if (i >= n) throw ConfigError("MlpDataset::sample: index out of range");
  MlpBatch b;
  b.x.assign(x.begin() + static_cast<std::ptrdiff_t>(i * spec.input_dim),
             x.begin() + static_cast<std::ptrdiff_t>((i + 1) * spec.input_dim));
  b.label = labels[i];
  return b;
}

MlpDataset gen_mlp_data(const MlpSpec& spec, std::size_t n, std::uint64_t seed,
                        const FloatFormat& fmt) {
  check_spec(spec);
  if (n < 1) throw ConfigError("gen_mlp_data: n must be >= 1");
  MlpDataset ds;
  ds.spec = spec;
  ds.n = n;
  std::vector<double> teacher(spec.input_dim);
  RngStream tr(seed, stream_id_from("mlp/teacher"));
  for (double& t : teacher) t = tr.normal();
  RngStream xr(seed, stream_id_from("mlp/data"));
  ds.x.resize(n * spec.input_dim);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < spec.input_dim; ++j)
      ds.x[i * spec.input_dim + j] = round_nearest(xr.normal(), fmt);
    const double m = accumulate_dot(
        std::span<const double>(ds.x).subspan(i * spec.input_dim, spec.input_dim),
        teacher, 0.0, AccumPrecision::Wide64);
    ds.labels[i] = m >= 0.0 ? 1 : 0;
  }
  return ds;
}

MlpResult mlp_forward_backward(const MlpParams& params, const MlpBatch& batch,
                               const FloatFormat& fmt, RoundingMode mode,
                               const QuantPolicy& policy, RngStream* rng) {
  const std::size_t in = params.w1.value.cols();
  const std::size_t hidden = params.w1.value.rows();
  constexpr std::size_t classes = MlpSpec::kClasses;
  if (in < 1 || hidden < 1 || params.b1.value.size() != hidden ||
      params.w2.value.rows() != classes || params.w2.value.cols() != hidden ||
      params.b2.value.size() != classes)
    throw ConfigError("mlp_forward_backward: inconsistent parameter shapes");
  if (batch.x.size() != in)
    throw ConfigError("mlp_forward_backward: batch dimension mismatch");
  if (batch.label != 0 && batch.label != 1)
    throw ConfigError("mlp_forward_backward: label must be 0 or 1");

  const bool rounding = policy.round_forward_backward;
  // one rounding per operator output when enabled; identity otherwise
  auto q = [&](double v) {
    return rounding ? round_value(v, fmt, mode, rng) : v;
  };
  const FloatFormat grad_fmt = rounding ? fmt : FloatFormat::exact();

  // ---- forward ----
  std::vector<double> h_pre(hidden), hb(hidden), act(hidden);
  for (std::size_t j = 0; j < hidden; ++j)
    h_pre[j] = q(accumulate_dot(
        params.w1.value.span().subspan(j * in, in), batch.x, 0.0,
        AccumPrecision::Wide64));
  for (std::size_t j = 0; j < hidden; ++j)
    hb[j] = q(h_pre[j] + params.b1.value[j]);
  for (std::size_t j = 0; j < hidden; ++j) act[j] = q(hb[j] > 0.0 ? hb[j] : 0.0);

  double z_pre[classes], z[classes];
  for (std::size_t k = 0; k < classes; ++k)
    z_pre[k] = q(accumulate_dot(
        params.w2.value.span().subspan(k * hidden, hidden), act, 0.0,
        AccumPrecision::Wide64));
  for (std::size_t k = 0; k < classes; ++k)
    z[k] = q(z_pre[k] + params.b2.value[k]);

  const std::size_t y = static_cast<std::size_t>(batch.label);
  const double margin = z[y] - z[1 - y];
  const double loss = q(softplus_of_neg(margin));
  if (!std::isfinite(loss))
    throw NumericError("mlp_forward_backward: non-finite loss");

  // ---- backward ----
  // softmax probabilities, then logits gradient p - onehot(label)
  double p[classes], dz[classes];
  p[0] = q(stable_sigmoid(z[0] - z[1]));
  p[1] = q(stable_sigmoid(z[1] - z[0]));
  dz[0] = q(p[0] - (y == 0 ? 1.0 : 0.0));
  dz[1] = q(p[1] - (y == 1 ? 1.0 : 0.0));

  MlpResult res;
  res.loss = loss;
  res.grads.w1 = QTensor::zeros(hidden, in, grad_fmt);
  res.grads.b1 = QTensor::zeros_vec(hidden, grad_fmt);
  res.grads.w2 = QTensor::zeros(classes, hidden, grad_fmt);
  res.grads.b2 = QTensor::zeros_vec(classes, grad_fmt);

  // bias gradient of the output layer: pass-through of dz
  for (std::size_t k = 0; k < classes; ++k) res.grads.b2.set(k, dz[k]);

  for (std::size_t k = 0; k < classes; ++k)
    for (std::size_t j = 0; j < hidden; ++j)
      res.grads.w2.set(k * hidden + j, q(dz[k] * act[j]));

  std::vector<double> da(hidden), dhb(hidden);
  for (std::size_t j = 0; j < hidden; ++j) {
    const double col[classes] = {params.w2.value[0 * hidden + j],
                                 params.w2.value[1 * hidden + j]};
    da[j] = q(accumulate_dot(col, dz, 0.0, AccumPrecision::Wide64));
  }
  for (std::size_t j = 0; j < hidden; ++j)
    dhb[j] = q(hb[j] > 0.0 ? da[j] : 0.0);

  // bias gradient of the hidden layer: pass-through of dhb
  for (std::size_t j = 0; j < hidden; ++j) res.grads.b1.set(j, dhb[j]);

  for (std::size_t j = 0; j < hidden; ++j)
    for (std::size_t i = 0; i < in; ++i)
      res.grads.w1.set(j * in + i, q(dhb[j] * batch.x[i]));

  return res;
}

}  // namespace lprec
