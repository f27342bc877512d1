// SPDX-License-Identifier: Apache-2.0
//
// The quantized-activation classifier: QCFS staircase activation, the
// batched forward pass, average cross-entropy training over the leading
// frame segment, and frozen teacher predictions.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "hsd/model.hpp"
#include "hsd/ops.hpp"
#include "hsd/tensor.hpp"

namespace hsd {

/// Quantized clip-floor-shift activation state: step count L and the
/// trainable per-layer threshold lambda (kept > 0 by clamping). Output
/// values lie on the L+1 levels {0, lambda/L, ..., lambda}.
struct QcfsActivation {
  std::int64_t quant_step = 16;
  Tensor lambda;  // scalar, requires_grad
};

/// (lambda/L) * clip(floor(z*L/lambda + 1/2), 0, L).
double qcfs_scalar(double z, std::int64_t quant_step, double lambda);
Tensor qcfs_forward(const Tensor& z, std::int64_t quant_step, double lambda);

/// Straight-through-through-floor backward. grad_z passes upstream inside
/// the open interval 0 < z*L/lambda + 1/2 < L and is zero outside;
/// grad_lambda treats the quantization index as constant (d out / d lambda
/// = q/L, summed over elements).
struct QcfsGrad {
  Tensor grad_z;
  double grad_lambda = 0.0;
};
QcfsGrad qcfs_backward(const Tensor& upstream, const Tensor& z, std::int64_t quant_step,
                       double lambda);

/// Graph-recorded QCFS with a trainable lambda parameter.
Tensor qcfs_op(const Tensor& z, const QcfsActivation& activation);

/// Feed-forward classifier over single frames. Copies of an AnnModel share
/// parameter storage; use clone() for an independent model.
class AnnModel {
 public:
  AnnModel() = default;
  AnnModel(ModelSpec spec, std::vector<LayerParams> params);

  static AnnModel create(const ModelSpec& spec, std::uint64_t seed, double lambda_init = 4.0);

  const ModelSpec& spec() const { return spec_; }
  std::vector<LayerParams>& params() { return params_; }
  const std::vector<LayerParams>& params() const { return params_; }

  /// x: (B, in_channels, H, W) -> logits (B, class_count). Records onto the
  /// active tape when one is present.
  Tensor forward(const Tensor& x) const;

  /// forward() that also captures each QCFS layer's output (for conversion
  /// fidelity probes).
  Tensor forward_collect(const Tensor& x, std::vector<Tensor>& qcfs_outputs) const;

  std::vector<Tensor> trainable_parameters() const;
  void clamp_thresholds(double floor);
  std::int64_t parameter_count() const;

  AnnModel clone() const;

 private:
  ModelSpec spec_;
  std::vector<LayerParams> params_;
};

struct AnnTrainConfig {
  std::int64_t epochs = 30;
  std::int64_t batch_size = 32;
  std::string optimizer = "sgd";
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool cosine_schedule = true;
  double lambda_floor = 1e-3;
  std::uint64_t seed = 0;
};

struct FitSummary {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = -1.0;  // -1 when no validation set was given
};

/// Average cross-entropy loss and accuracy of the model on `samples`, where
/// each sample's per-frame logits are averaged before the softmax.
std::pair<double, double> ann_evaluate(const AnnModel& model,
                                       const std::vector<FrameSample>& samples,
                                       std::int64_t batch_size = 64);

/// Trains with the average cross-entropy loss over each sample's frames,
/// treating frames as independent through the shared 2-D network. Writes
/// `epoch,split,loss,accuracy` CSV rows to log_csv when given. Throws on
/// divergence (non-finite loss).
FitSummary train_ann(AnnModel& model, const std::vector<FrameSample>& train,
                     const std::vector<FrameSample>* validation, const AnnTrainConfig& cfg,
                     std::ostream* log_csv = nullptr);

/// Frozen teacher view of one sample: per-frame logits and the averaged
/// temperature-softened distribution.
struct TeacherOutput {
  Tensor per_frame_logits;       // (T1, classes)
  Tensor mean_logits;            // (classes)
  Tensor averaged_probability;   // (classes), sums to 1
  double temperature = 1.0;
};

TeacherOutput teacher_predict(const AnnModel& model, const Tensor& frames_t1, double temperature);

}  // namespace hsd
