// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sandglasset/training.hpp"

namespace sandglasset::training {

GradCheckResult check_model_gradients(const model::ModelConfig& config,
                                      std::uint64_t seed,
                                      const GradCheckOptions& options,
                                      const std::string& fault_op) {
  config.validate();
  ParamTable<double> params = model::init_params(config, seed).cast<double>();
  Rng rng(seed, 1ull << 48);
  for (auto& p : params.entries())
    for (double& v : p.value.storage()) v += 0.05 * rng.normal();

  // Odd length so frame and segment padding are both exercised.
  const std::size_t samples = 2 * config.window * config.segment - 3;
  std::vector<Tensor<double>> refs;
  Tensor<double> mixture({samples});
  for (std::size_t c = 0; c < config.sources; ++c) {
    Tensor<double> r({samples});
    for (auto& v : r.storage()) v = 0.5 * rng.normal();
    add_into(mixture, r);
    refs.push_back(std::move(r));
  }

  const std::uint64_t dropout_seed = rng.next_u64();
  LossFunction loss = [&](ParamTable<double>& table, bool with_grad) {
    Tape<double> tape(with_grad);
    if (!fault_op.empty()) tape.inject_backward_fault(fault_op);
    Rng dropout(dropout_seed);
    auto result = model::forward(tape, table, config, mixture,
                                 model::ForwardOptions{true, &dropout});
    auto upit = upit_loss(result.sources, refs);
    if (with_grad) tape.backward(upit.loss);
    return upit.loss.value()[0];
  };
  return grad_check(loss, params, options);
}

}  // namespace sandglasset::training
