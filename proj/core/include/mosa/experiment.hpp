// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "mosa/adapter_set.hpp"
#include "mosa/backbone.hpp"
#include "mosa/checkpoint.hpp"
#include "mosa/config.hpp"
#include "mosa/optimizer.hpp"

namespace mosa {

/// A model, its tuned modules and optimizer state, described by a RunConfig.
struct Experiment {
  RunConfig config;
  FrozenModel model;
  AdapterSet adapters;
  OptimizerState optimizer;
};

/// Backbone from backbone_seed; head and adapters from the plan seed's
/// head-init and adapter-init streams. Validates the config first.
Experiment make_experiment(const RunConfig& cfg);

/// Every model and adapter tensor by name, expert masks as
/// `<weight>.expert<k>`, pruning masks as `<weight>.retained`, optimizer
/// moments as `optim.m.<name>` / `optim.v.<name>` and the step as `optim.step`.
Checkpoint to_checkpoint(const Experiment& exp);
/// Rebuilds an experiment from its config blob and restores every tensor,
/// mask and optimizer moment. Missing or misshapen records raise FormatError.
Experiment from_checkpoint(const Checkpoint& ckpt);

/// Merges the adapters' expert splits and marks the config as merged.
Experiment merged_experiment(const Experiment& exp);

/// count_trainable_params for `cfg` without building the backbone.
std::size_t count_config_params(const RunConfig& cfg);

}  // namespace mosa
