// SPDX-License-Identifier: Apache-2.0
#include "lprec/mlp.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "lprec/errors.hpp"
#include "lprec/formats.hpp"
#include "lprec/rng.hpp"

using namespace lprec;

namespace {

const MlpSpec kSpec{4, 3};  // 4 inputs, 3 hidden units, 2 classes

QuantPolicy rounding_off() {
  QuantPolicy p;
  p.round_forward_backward = false;
  return p;
}

QuantPolicy rounding_on() { return QuantPolicy{}; }

// (tensor, element) handles over all trainable scalars, in a fixed order,
// for finite differencing; perturbed values go through the checked set()
struct ParamSlot {
  QTensor* t;
  std::size_t i;
  double get() const { return (*t)[i]; }
  void put(double v) const { t->set(i, v); }
};

std::vector<ParamSlot> param_slots(MlpParams& p) {
  std::vector<ParamSlot> slots;
  for (QTensor* t : {&p.w1.value, &p.b1.value, &p.w2.value, &p.b2.value})
    for (std::size_t i = 0; i < t->size(); ++i) slots.push_back({t, i});
  return slots;
}

std::vector<double> grad_slots(const MlpGrads& g) {
  std::vector<double> out;
  for (const QTensor* t : {&g.w1, &g.b1, &g.w2, &g.b2})
    out.insert(out.end(), t->data().begin(), t->data().end());
  return out;
}

}  // namespace

TEST_CASE("zero parameters give the uniform-prediction loss log 2") {
  const FloatFormat fmt = parse_format("E8M7");
  const MlpParams params = mlp_zero_params(kSpec, fmt);
  MlpBatch batch;
  batch.x = {0.5, -1.0, 2.0, 0.25};

  for (int label : {0, 1}) {
    batch.label = label;
    const MlpResult exact = mlp_forward_backward(
        params, batch, fmt, RoundingMode::NearestTiesToEven, rounding_off());
    CHECK(exact.loss == std::log(2.0));
    const MlpResult rounded = mlp_forward_backward(
        params, batch, fmt, RoundingMode::NearestTiesToEven, rounding_on());
    CHECK(rounded.loss == round_nearest(std::log(2.0), fmt));
  }
}

TEST_CASE("zero-parameter gradients are the symmetric logistic gradients") {
  // with p = (1/2, 1/2): dz = p - onehot, all activations zero, so only the
  // output bias receives a nonzero gradient
  const FloatFormat fmt = parse_format("E8M7");
  const MlpParams params = mlp_zero_params(kSpec, fmt);
  MlpBatch batch;
  batch.x = {1.0, 1.0, 1.0, 1.0};
  batch.label = 1;
  const MlpResult r = mlp_forward_backward(
      params, batch, fmt, RoundingMode::NearestTiesToEven, rounding_off());
  CHECK(r.grads.b2[0] == 0.5);
  CHECK(r.grads.b2[1] == -0.5);
  for (std::size_t i = 0; i < r.grads.w1.size(); ++i)
    CHECK(r.grads.w1[i] == 0.0);
  for (std::size_t i = 0; i < r.grads.w2.size(); ++i)
    CHECK(r.grads.w2[i] == 0.0);
  for (std::size_t i = 0; i < r.grads.b1.size(); ++i)
    CHECK(r.grads.b1[i] == 0.0);
}

TEST_CASE("gradients match central finite differences on 100 random probes") {
  // parameters live on the exact carrier so +/- delta perturbations are
  // representable; the rounding-off graph never consults the format anyway
  const FloatFormat carrier = FloatFormat::exact();
  const QuantPolicy off = rounding_off();
  const double delta = 1e-5;
  RngStream rng(2024, stream_id_from("test/mlp-fd"));

  std::size_t probes = 0;
  std::size_t checked_coords = 0;
  while (probes < 100) {
    MlpParams params = mlp_init_params(kSpec, carrier, rng.next_u64());
    // random nonzero biases so the probe exercises every term
    for (std::size_t j = 0; j < params.b1.value.size(); ++j)
      params.b1.value.set(j, 0.3 * rng.normal());
    for (std::size_t k = 0; k < params.b2.value.size(); ++k)
      params.b2.value.set(k, 0.3 * rng.normal());
    MlpBatch batch;
    batch.x.resize(kSpec.input_dim);
    for (double& v : batch.x) v = rng.normal();
    batch.label = rng.uniform01() < 0.5 ? 0 : 1;

    // skip probes whose hidden pre-activations sit near the ReLU kink, where
    // central differences straddle the nondifferentiable point
    bool near_kink = false;
    for (std::size_t j = 0; j < kSpec.hidden_dim; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < kSpec.input_dim; ++i)
        acc = std::fma(params.w1.value[j * kSpec.input_dim + i], batch.x[i],
                       acc);
      if (std::abs(acc + params.b1.value[j]) < 1e-3) near_kink = true;
    }
    if (near_kink) continue;
    ++probes;

    const MlpResult r = mlp_forward_backward(
        params, batch, carrier, RoundingMode::NearestTiesToEven, off);
    const std::vector<double> analytic = grad_slots(r.grads);
    const std::vector<ParamSlot> slots = param_slots(params);
    REQUIRE(analytic.size() == slots.size());

    for (std::size_t s = 0; s < slots.size(); ++s) {
      const double saved = slots[s].get();
      slots[s].put(saved + delta);
      const double up = mlp_forward_backward(params, batch, carrier,
                                             RoundingMode::NearestTiesToEven,
                                             off)
                            .loss;
      slots[s].put(saved - delta);
      const double dn = mlp_forward_backward(params, batch, carrier,
                                             RoundingMode::NearestTiesToEven,
                                             off)
                            .loss;
      slots[s].put(saved);
      const double fd = (up - dn) / (2.0 * delta);
      const double scale = std::max(std::abs(fd), 1e-6);
      CHECK(std::abs(analytic[s] - fd) / scale <= 1e-4);
      ++checked_coords;
    }
  }
  CHECK(probes == 100);
  CHECK(checked_coords == 100 * (4 * 3 + 3 + 2 * 3 + 2));
}

TEST_CASE("rounded gradients stay near the exact ones") {
  const FloatFormat fmt = parse_format("E8M7");
  const double eps = fmt.machine_epsilon();
  RngStream rng(77, stream_id_from("test/mlp-rounded"));
  for (int trial = 0; trial < 50; ++trial) {
    MlpParams params = mlp_init_params(kSpec, fmt, rng.next_u64());
    MlpBatch batch;
    batch.x.resize(kSpec.input_dim);
    for (double& v : batch.x) v = round_nearest(rng.normal(), fmt);
    batch.label = rng.uniform01() < 0.5 ? 0 : 1;

    const MlpResult exact = mlp_forward_backward(
        params, batch, fmt, RoundingMode::NearestTiesToEven, rounding_off());
    const MlpResult rounded = mlp_forward_backward(
        params, batch, fmt, RoundingMode::NearestTiesToEven, rounding_on());

    CHECK(std::abs(rounded.loss - exact.loss) <=
          32.0 * eps * std::max(1.0, std::abs(exact.loss)));
    const std::vector<double> ge = grad_slots(exact.grads);
    const std::vector<double> gr = grad_slots(rounded.grads);
    double num = 0.0, den = 0.0;
    for (std::size_t s = 0; s < ge.size(); ++s) {
      num += (ge[s] - gr[s]) * (ge[s] - gr[s]);
      den += ge[s] * ge[s];
    }
    // per-operator O(eps) relative error over a depth-~6 graph
    CHECK(std::sqrt(num) <= 64.0 * eps * std::max(1.0, std::sqrt(den)));
  }
}

TEST_CASE("every rounded tensor lands on the format grid") {
  const FloatFormat fmt = parse_format("E8M3");
  RngStream rng(5, stream_id_from("test/mlp-grid"));
  MlpParams params = mlp_init_params(kSpec, fmt, 12);
  MlpBatch batch;
  batch.x.resize(kSpec.input_dim);
  for (double& v : batch.x) v = round_nearest(rng.normal(), fmt);
  batch.label = 1;
  const MlpResult r = mlp_forward_backward(
      params, batch, fmt, RoundingMode::NearestTiesToEven, rounding_on());
  CHECK(is_representable(r.loss, fmt));
  for (const QTensor* t : {&r.grads.w1, &r.grads.b1, &r.grads.w2, &r.grads.b2})
    for (std::size_t i = 0; i < t->size(); ++i)
      CHECK(is_representable((*t)[i], fmt));
}

TEST_CASE("stochastic rounding consumes one draw per operator output") {
  const FloatFormat fmt = parse_format("E8M7");
  MlpParams params = mlp_init_params(kSpec, fmt, 9);
  MlpBatch batch;
  batch.x = {0.5, -0.25, 1.0, -1.5};
  batch.label = 0;
  RngStream rng(3, stream_id_from("mlp/rounding"));
  const MlpResult r = mlp_forward_backward(params, batch, fmt,
                                           RoundingMode::Stochastic,
                                           rounding_on(), &rng);
  (void)r;
  const std::size_t h = kSpec.hidden_dim, in = kSpec.input_dim;
  // forward: h_pre + hb + relu + z_pre + z + loss
  // backward: p + dz + dw2 + da + dhb + dw1   (bias grads are pass-through)
  const std::uint64_t expected = (h + h + h + 2 + 2 + 1) +
                                 (2 + 2 + 2 * h + h + h + h * in);
  CHECK(rng.counter() == expected);

  // identical draws replay bitwise
  RngStream rng2(3, stream_id_from("mlp/rounding"));
  const MlpResult r2 = mlp_forward_backward(params, batch, fmt,
                                            RoundingMode::Stochastic,
                                            rounding_on(), &rng2);
  CHECK(r2.loss == r.loss);
  for (std::size_t i = 0; i < r.grads.w1.size(); ++i)
    CHECK(r2.grads.w1[i] == r.grads.w1[i]);
}

TEST_CASE("synthetic data generator is deterministic and on-grid") {
  const FloatFormat fmt = parse_format("E8M7");
  const MlpDataset a = gen_mlp_data(kSpec, 32, 99, fmt);
  const MlpDataset b = gen_mlp_data(kSpec, 32, 99, fmt);
  CHECK(a.x == b.x);
  CHECK(a.labels == b.labels);
  CHECK(a.n == 32);
  CHECK(a.x.size() == 32 * kSpec.input_dim);
  for (double v : a.x) CHECK(is_representable(v, fmt));
  // both classes appear in a 32-sample draw
  int ones = 0;
  for (int l : a.labels) ones += l;
  CHECK(ones > 0);
  CHECK(ones < 32);

  const MlpBatch s = a.sample(3);
  CHECK(s.x.size() == kSpec.input_dim);
  CHECK(s.x[0] == a.x[3 * kSpec.input_dim]);
  CHECK(s.label == a.labels[3]);
  CHECK_THROWS_AS((void)a.sample(32), ConfigError);
}

TEST_CASE("argument validation") {
  const FloatFormat fmt = parse_format("E8M7");
  MlpParams params = mlp_zero_params(kSpec, fmt);
  MlpBatch batch;
  batch.x = {1.0, 2.0, 3.0, 4.0};
  batch.label = 2;
  CHECK_THROWS_AS((void)mlp_forward_backward(params, batch, fmt,
                                             RoundingMode::NearestTiesToEven,
                                             rounding_on()),
                  ConfigError);
  batch.label = 0;
  batch.x = {1.0, 2.0};
  CHECK_THROWS_AS((void)mlp_forward_backward(params, batch, fmt,
                                             RoundingMode::NearestTiesToEven,
                                             rounding_on()),
                  ConfigError);
  batch.x = {1.0, 2.0, 3.0, 4.0};
  CHECK_THROWS_AS((void)mlp_forward_backward(params, batch, fmt,
                                             RoundingMode::Stochastic,
                                             rounding_on(), nullptr),
                  ConfigError);
  CHECK_THROWS_AS((void)gen_mlp_data(MlpSpec{0, 3}, 8, 1, fmt), ConfigError);
  CHECK_THROWS_AS((void)mlp_zero_params(MlpSpec{4, 0}, fmt), ConfigError);
}

TEST_CASE("a short training loop reduces the loss") {
  // end-to-end smoke: nearest weight updates on the 16-bit grid
  const FloatFormat fmt = parse_format("E8M7");
  const MlpDataset data = gen_mlp_data(kSpec, 64, 7, fmt);
  MlpParams params = mlp_init_params(kSpec, fmt, 21);
  const QuantPolicy policy = rounding_on();

  OptimState st_w1 = make_optim_state(params.w1.value, params.w1.policy);
  OptimState st_b1 = make_optim_state(params.b1.value, params.b1.policy);
  OptimState st_w2 = make_optim_state(params.w2.value, params.w2.policy);
  OptimState st_b2 = make_optim_state(params.b2.value, params.b2.policy);
  SgdConfig cfg;
  cfg.lr.base = 0.125;  // representable: no hyperparameter drift

  auto mean_loss = [&]() {
    double acc = 0.0;
    for (std::size_t i = 0; i < data.n; ++i)
      acc += mlp_forward_backward(params, data.sample(i), fmt,
                                  RoundingMode::NearestTiesToEven, policy)
                 .loss;
    return acc / static_cast<double>(data.n);
  };

  const double before = mean_loss();
  RngStream samples(7, stream_id_from("sample-index"));
  for (int step = 0; step < 600; ++step) {
    const MlpBatch b = data.sample(samples.uniform_below(data.n));
    const MlpResult r = mlp_forward_backward(
        params, b, fmt, RoundingMode::NearestTiesToEven, policy);
    params.w1.value = sgd_step(params.w1.value, r.grads.w1.span(), st_w1, cfg,
                               params.w1.policy, fmt, nullptr)
                          .w;
    params.b1.value = sgd_step(params.b1.value, r.grads.b1.span(), st_b1, cfg,
                               params.b1.policy, fmt, nullptr)
                          .w;
    params.w2.value = sgd_step(params.w2.value, r.grads.w2.span(), st_w2, cfg,
                               params.w2.policy, fmt, nullptr)
                          .w;
    params.b2.value = sgd_step(params.b2.value, r.grads.b2.span(), st_b2, cfg,
                               params.b2.policy, fmt, nullptr)
                          .w;
  }
  const double after = mean_loss();
  CHECK(after < before);
  CHECK(after < 0.5);  // well under the log 2 uniform baseline
}
