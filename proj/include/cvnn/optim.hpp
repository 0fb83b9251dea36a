#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cvnn/autodiff.hpp"
#include "cvnn/tensor.hpp"

namespace cvnn {

/// A named trainable tensor. real_only parameters (batch-norm gamma, modReLU
/// bias, real-network weights) keep a zero imaginary plane; their gradients
/// never have an imaginary component, so no optimizer moves it.
struct Parameter {
  std::string name;
  ComplexTensor value;
  bool real_only = false;
};

class ParamSet {
 public:
  /// Returns the index of the new parameter. Names must be unique.
  std::size_t add(std::string name, ComplexTensor value, bool real_only = false);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  const Parameter* find(std::string_view name) const;
  Parameter* find(std::string_view name);
  std::size_t scalar_count() const;  // total complex entries

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

/// One gradient per parameter, aligned by index.
using ParamGrads = std::vector<ComplexTensor>;

/// Pulls the gradients of `leaves` (aligned with a ParamSet) out of a store.
/// Throws if one is missing.
ParamGrads collect_grads(const GradStore& store, const std::vector<Var>& leaves);

enum class OptimKind { sgd, adam };
OptimKind parse_optim_kind(std::string_view name);

struct OptimState {
  OptimKind kind = OptimKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::optional<double> clip_norm;
  std::size_t step = 0;
  // Adam moments per parameter, per plane; empty until the first step.
  std::vector<ComplexTensor> m, v;
};

/// p <- p - lr g, plane by plane.
void sgd_step(ParamSet& params, const ParamGrads& grads, OptimState& st);
/// Bias-corrected Adam treating every complex entry as two real parameters.
void adam_step(ParamSet& params, const ParamGrads& grads, OptimState& st);
/// Clips (if st.clip_norm is set) then dispatches on st.kind.
void optimizer_step(ParamSet& params, ParamGrads grads, OptimState& st);

/// Global L2 norm over both planes of all gradients.
double global_grad_norm(const ParamGrads& grads);
/// Scales every gradient by max_norm / norm when norm > max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(ParamGrads& grads, double max_norm);

// Checkpoints: "CVNNCKPT", u32 version, then records up to end of file, each
// a u32 name length, the UTF-8 name and a CVTNSR01 tensor.

using NamedTensors = std::vector<std::pair<std::string, ComplexTensor>>;

void save_checkpoint(const std::string& path, const NamedTensors& records);
NamedTensors load_checkpoint(const std::string& path);
void write_checkpoint(std::ostream& os, const NamedTensors& records);
NamedTensors read_checkpoint(std::istream& is);

/// Optimizer state as named records ("optim.step", "optim.hyper",
/// "optim.m.<param>", "optim.v.<param>").
NamedTensors optimizer_records(const OptimState& st, const ParamSet& params);
/// Restores state written by optimizer_records; throws on missing or
/// mis-shaped records.
void restore_optimizer(OptimState& st, const ParamSet& params, const NamedTensors& records);

}  // namespace cvnn
