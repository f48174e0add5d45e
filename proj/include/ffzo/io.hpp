#pragma once

#include <optional>
#include <string>

#include "ffzo/infer.hpp"
#include "ffzo/nn.hpp"

namespace ffzo::io {

/// A trained model together with the fixed readout directions it was
/// trained against. Exactly one bank is present, matching the task.
struct Checkpoint {
  nn::Model model;
  std::optional<infer::PrototypeBank> class_bank;
  std::optional<infer::RegressionBank> regression_bank;
};

/// Versioned JSON snapshot: spec, trainable parameters, frozen projections,
/// and the prototype bank. Loading rebuilds a model that predicts
/// bit-identically to the saved one.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ffzo::io
