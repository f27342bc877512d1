// SPDX-License-Identifier: Apache-2.0

#include "hsd/ann.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "hsd/optimizer.hpp"
#include "hsd/rng.hpp"

namespace hsd {

double qcfs_scalar(double z, std::int64_t quant_step, double lambda) {
  const double steps = static_cast<double>(quant_step);
  double q = std::floor(z * steps / lambda + 0.5);
  if (q < 0.0) q = 0.0;
  if (q > steps) q = steps;
  // lambda * (q/steps) rather than (lambda/steps) * q: saturation then
  // returns exactly lambda for every step count, not just powers of two.
  return lambda * (q / steps);
}

Tensor qcfs_forward(const Tensor& z, std::int64_t quant_step, double lambda) {
  if (quant_step < 1) throw std::invalid_argument("qcfs: quantization step must be >= 1");
  if (!(lambda > 0.0)) throw std::invalid_argument("qcfs: lambda must be positive");
  Tensor out(z.shape());
  auto zv = z.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = qcfs_scalar(zv[i], quant_step, lambda);
  return out;
}

QcfsGrad qcfs_backward(const Tensor& upstream, const Tensor& z, std::int64_t quant_step,
                       double lambda) {
  if (upstream.shape() != z.shape()) {
    throw std::invalid_argument("qcfs_backward: upstream shape " + upstream.shape_str() +
                                " does not match input shape " + z.shape_str());
  }
  const double steps = static_cast<double>(quant_step);
  QcfsGrad grad;
  grad.grad_z = Tensor(z.shape());
  auto uv = upstream.values();
  auto zv = z.values();
  auto gz = grad.grad_z.values();
  for (std::size_t i = 0; i < gz.size(); ++i) {
    const double y = zv[i] * steps / lambda + 0.5;
    gz[i] = (y > 0.0 && y < steps) ? uv[i] : 0.0;
    double q = std::floor(y);
    if (q < 0.0) q = 0.0;
    if (q > steps) q = steps;
    grad.grad_lambda += uv[i] * (q / steps);
  }
  return grad;
}

Tensor qcfs_op(const Tensor& z, const QcfsActivation& activation) {
  if (activation.lambda.numel() != 1) {
    throw std::invalid_argument("qcfs: lambda must be a scalar, got " +
                                activation.lambda.shape_str());
  }
  const std::int64_t quant_step = activation.quant_step;
  return ops::custom_gradient(
      {z, activation.lambda},
      [quant_step](std::span<const Tensor> inputs) {
        return qcfs_forward(inputs[0], quant_step, inputs[1].item());
      },
      [quant_step](const Tensor& upstream, std::span<const Tensor> inputs,
                   const Tensor&) -> std::vector<Tensor> {
        QcfsGrad g = qcfs_backward(upstream, inputs[0], quant_step, inputs[1].item());
        return {std::move(g.grad_z), Tensor::scalar(g.grad_lambda)};
      });
}

AnnModel::AnnModel(ModelSpec spec, std::vector<LayerParams> params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  trace_shapes(spec_);
  if (params_.size() != spec_.layers.size()) {
    throw std::invalid_argument("model: parameter list does not match layer list");
  }
}

AnnModel AnnModel::create(const ModelSpec& spec, std::uint64_t seed, double lambda_init) {
  return AnnModel(spec, init_params(spec, seed, lambda_init));
}

namespace {

Tensor apply_layer(const LayerDesc& layer, const LayerParams& params, const Tensor& x,
                   std::size_t index) {
  switch (layer.kind) {
    case LayerKind::Conv2d:
      return ops::bias_add(ops::conv2d(x, params.weight, static_cast<int>(layer.c)), params.bias,
                           1);
    case LayerKind::AvgPool2d:
      return ops::avgpool2d(x, static_cast<int>(layer.a));
    case LayerKind::Dense:
      return ops::linear(x, params.weight, params.bias);
    case LayerKind::Qcfs:
      return qcfs_op(x, QcfsActivation{layer.a, params.threshold});
    case LayerKind::Flatten:
      return ops::reshape(x, {x.dim(0), x.numel() / x.dim(0)});
    case LayerKind::Relu:
      return ops::relu(x);
    case LayerKind::MaxPool2d:
      throw std::runtime_error("layer " + std::to_string(index) +
                               ": maxpool2d is not executable; replace it with avgpool2d");
  }
  throw std::logic_error("unhandled layer kind");
}

}  // namespace

Tensor AnnModel::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    h = apply_layer(spec_.layers[i], params_[i], h, i);
  }
  return h;
}

Tensor AnnModel::forward_collect(const Tensor& x, std::vector<Tensor>& qcfs_outputs) const {
  Tensor h = x;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    h = apply_layer(spec_.layers[i], params_[i], h, i);
    if (spec_.layers[i].kind == LayerKind::Qcfs) qcfs_outputs.push_back(h);
  }
  return h;
}

std::vector<Tensor> AnnModel::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const LayerParams& p : params_) {
    if (p.weight.defined()) out.push_back(p.weight);
    if (p.bias.defined()) out.push_back(p.bias);
    if (p.threshold.defined()) out.push_back(p.threshold);
  }
  return out;
}

void AnnModel::clamp_thresholds(double floor) {
  for (LayerParams& p : params_) {
    if (!p.threshold.defined()) continue;
    double& v = p.threshold.values()[0];
    if (v < floor) v = floor;
  }
}

std::int64_t AnnModel::parameter_count() const { return hsd::parameter_count(params_); }

AnnModel AnnModel::clone() const {
  std::vector<LayerParams> copy(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].weight.defined()) {
      copy[i].weight = params_[i].weight.clone();
      copy[i].weight.set_requires_grad(true);
    }
    if (params_[i].bias.defined()) {
      copy[i].bias = params_[i].bias.clone();
      copy[i].bias.set_requires_grad(true);
    }
    if (params_[i].threshold.defined()) {
      copy[i].threshold = params_[i].threshold.clone();
      copy[i].threshold.set_requires_grad(true);
    }
  }
  return AnnModel(spec_, std::move(copy));
}

namespace {

/// Stacks the chosen samples' frames into one (B*T, 2, H, W) batch.
Tensor stack_frames(const std::vector<FrameSample>& samples, std::span<const std::size_t> chosen) {
  const Tensor& first = samples[chosen[0]].frames;
  const std::int64_t per_sample = first.numel();
  Tensor out({static_cast<std::int64_t>(chosen.size()) * first.dim(0), first.dim(1), first.dim(2),
              first.dim(3)});
  auto ov = out.values();
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const Tensor& frames = samples[chosen[i]].frames;
    if (frames.shape() != first.shape()) {
      throw std::invalid_argument("all samples must share the frame shape; got " +
                                  frames.shape_str() + " vs " + first.shape_str());
    }
    auto fv = frames.values();
    std::copy(fv.begin(), fv.end(), ov.begin() + static_cast<std::ptrdiff_t>(i * per_sample));
  }
  return out;
}

struct BatchStats {
  double loss_sum = 0.0;
  std::int64_t correct = 0;
  std::int64_t count = 0;
};

/// Eq-style objective: per-frame logits averaged per sample, then softmax
/// cross-entropy against the label. Returns the scalar loss node.
Tensor average_ce_loss(const AnnModel& model, const Tensor& frame_batch,
                       const std::vector<int>& labels, std::int64_t frames_per_sample,
                       BatchStats* stats) {
  const std::int64_t batch = static_cast<std::int64_t>(labels.size());
  Tensor logits = model.forward(frame_batch);  // (B*T1, C)
  Tensor grouped = ops::reshape(logits, {batch, frames_per_sample, logits.dim(1)});
  Tensor mean_logits = ops::mean(grouped, 1);  // (B, C)
  Tensor probs = ops::softmax(mean_logits, 1);
  Tensor picked = ops::gather_labels(probs, labels);
  Tensor loss = ops::scale(ops::sum_all(ops::log(ops::clamp_min(picked, 1e-300))),
                           -1.0 / static_cast<double>(batch));
  if (stats != nullptr) {
    stats->loss_sum += loss.item() * static_cast<double>(batch);
    stats->count += batch;
    auto mv = mean_logits.values();
    const std::int64_t classes = mean_logits.dim(1);
    for (std::int64_t b = 0; b < batch; ++b) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < classes; ++c) {
        if (mv[b * classes + c] > mv[b * classes + best]) best = c;
      }
      if (best == labels[static_cast<std::size_t>(b)]) ++stats->correct;
    }
  }
  return loss;
}

}  // namespace

std::pair<double, double> ann_evaluate(const AnnModel& model,
                                       const std::vector<FrameSample>& samples,
                                       std::int64_t batch_size) {
  BatchStats stats;
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    std::span<const std::size_t> chosen(order.data() + start, end - start);
    Tensor batch = stack_frames(samples, chosen);
    std::vector<int> labels;
    for (std::size_t i : chosen) labels.push_back(samples[i].label);
    average_ce_loss(model, batch, labels, samples[chosen[0]].frames.dim(0), &stats);
  }
  return {stats.loss_sum / static_cast<double>(stats.count),
          static_cast<double>(stats.correct) / static_cast<double>(stats.count)};
}

FitSummary train_ann(AnnModel& model, const std::vector<FrameSample>& train,
                     const std::vector<FrameSample>* validation, const AnnTrainConfig& cfg,
                     std::ostream* log_csv) {
  if (train.empty()) throw std::invalid_argument("train_ann: empty training set");
  if (cfg.epochs < 1) throw std::invalid_argument("train_ann: epochs must be >= 1");

  std::vector<Tensor> params = model.trainable_parameters();
  auto optimizer = make_optimizer(cfg.optimizer, cfg.lr, cfg.momentum, cfg.weight_decay);
  const std::int64_t frames_per_sample = train[0].frames.dim(0);

  if (log_csv != nullptr) *log_csv << "epoch,split,loss,accuracy\n";

  FitSummary summary;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.cosine_schedule) optimizer->set_lr(cosine_lr(cfg.lr, epoch, cfg.epochs));
    Rng shuffle_rng(mix_seed(cfg.seed, 0xa55u, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    BatchStats stats;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> chosen(order.data() + start, end - start);
      Tensor batch = stack_frames(train, chosen);
      std::vector<int> labels;
      for (std::size_t i : chosen) labels.push_back(train[i].label);

      Tape tape;
      double loss_value = 0.0;
      {
        Tape::Scope scope(tape);
        Tensor loss = average_ce_loss(model, batch, labels, frames_per_sample, &stats);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw std::runtime_error("train_ann: loss diverged (" + std::to_string(loss_value) +
                                   ") at epoch " + std::to_string(epoch));
        }
        tape.backward(loss);
      }
      optimizer->step(params);
      model.clamp_thresholds(cfg.lambda_floor);
    }

    summary.train_loss = stats.loss_sum / static_cast<double>(stats.count);
    summary.train_accuracy = static_cast<double>(stats.correct) / static_cast<double>(stats.count);
    if (log_csv != nullptr) {
      *log_csv << epoch << ",train," << summary.train_loss << ',' << summary.train_accuracy
               << '\n';
    }
    if (validation != nullptr && !validation->empty()) {
      auto [val_loss, val_acc] = ann_evaluate(model, *validation);
      summary.val_accuracy = val_acc;
      if (log_csv != nullptr) {
        *log_csv << epoch << ",val," << val_loss << ',' << val_acc << '\n';
      }
    }
  }
  return summary;
}

TeacherOutput teacher_predict(const AnnModel& model, const Tensor& frames_t1, double temperature) {
  if (frames_t1.rank() != 4) {
    throw std::invalid_argument("teacher_predict: frames must be (T1,2,H,W), got " +
                                frames_t1.shape_str());
  }
  if (!(temperature > 0.0)) throw std::invalid_argument("teacher_predict: temperature must be > 0");

  Tape::NoGradScope frozen;  // the teacher never records gradients
  TeacherOutput out;
  out.temperature = temperature;
  out.per_frame_logits = model.forward(frames_t1);            // (T1, C)
  out.mean_logits = ops::mean(out.per_frame_logits, 0);       // (C)
  out.averaged_probability = ops::softmax(ops::scale(out.mean_logits, 1.0 / temperature), 0);
  return out;
}

}  // namespace hsd
