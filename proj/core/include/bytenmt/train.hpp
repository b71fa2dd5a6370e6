#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bytenmt/data.hpp"
#include "bytenmt/model.hpp"
#include "bytenmt/tensor.hpp"

namespace bytenmt {

/// Inverse-square-root schedule with linear warmup:
/// lr = peak * min(step/warmup, sqrt(warmup/step)).
inline double lr_at(int64_t step, int64_t warmup = 4000, double peak = 5e-4) {
  if (step < 1) throw Error("lr_at: step " + std::to_string(step) +
                            " must be >= 1");
  if (warmup < 1) throw Error("lr_at: warmup must be >= 1");
  const double ramp = static_cast<double>(step) / static_cast<double>(warmup);
  const double decay =
      std::sqrt(static_cast<double>(warmup) / static_cast<double>(step));
  return peak * std::min(ramp, decay);
}

/// Label-smoothed cross entropy, averaged over non-PAD target positions:
/// loss = mean of -sum_v q(v) log p(v) with q = (1-eps)*onehot + eps/V.
/// PAD targets are masked out of both the loss and the gradient.
template <typename T>
Tensor<T> smoothed_cross_entropy(const Tensor<T>& logits,
                                 const ByteSequence& targets, double eps) {
  if (logits.ndim() != 2)
    throw Error("smoothed_cross_entropy: logits must be 2-D, got " +
                shape_str(logits.shape()));
  const int rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.length() != rows)
    throw Error("smoothed_cross_entropy: " + std::to_string(targets.length()) +
                " targets for " + std::to_string(rows) + " logit rows");
  for (int id : targets.ids)
    if (id != kPadId && (id < 0 || id >= vocab))
      throw Error("smoothed_cross_entropy: target ID " + std::to_string(id) +
                  " outside vocabulary of size " + std::to_string(vocab));
  int active = 0;
  for (int id : targets.ids) active += id != kPadId;

  std::vector<T> probs(static_cast<size_t>(rows) * vocab);
  double total = 0.0;
  for (int i = 0; i < rows; ++i) {
    const T* row = logits.values().data() + static_cast<size_t>(i) * vocab;
    T* prow = probs.data() + static_cast<size_t>(i) * vocab;
    T best = row[0];
    for (int v = 1; v < vocab; ++v) best = std::max(best, row[v]);
    double lse = 0.0;
    for (int v = 0; v < vocab; ++v)
      lse += std::exp(static_cast<double>(row[v] - best));
    const double log_z = static_cast<double>(best) + std::log(lse);
    for (int v = 0; v < vocab; ++v)
      prow[v] = static_cast<T>(
          std::exp(static_cast<double>(row[v]) - log_z));
    const int target = targets.ids[static_cast<size_t>(i)];
    if (target == kPadId) continue;
    double row_loss = 0.0;
    for (int v = 0; v < vocab; ++v) {
      const double q =
          (v == target ? 1.0 - eps : 0.0) + eps / static_cast<double>(vocab);
      row_loss -= q * (static_cast<double>(row[v]) - log_z);
    }
    total += row_loss;
  }
  const double mean = active > 0 ? total / active : 0.0;
  auto ln = logits.node();
  auto ids = targets.ids;
  return Tensor<T>::make(
      {1}, {static_cast<T>(mean)}, {logits},
      [ln, ids = std::move(ids), probs = std::move(probs), rows, vocab, eps,
       active](TensorNode<T>& o) {
        if (!ln->requires_grad || active == 0) return;
        ln->ensure_grad();
        const T g = o.grad[0] / static_cast<T>(active);
        for (int i = 0; i < rows; ++i) {
          const int target = ids[static_cast<size_t>(i)];
          if (target == kPadId) continue;
          const T* prow = probs.data() + static_cast<size_t>(i) * vocab;
          T* drow = ln->grad.data() + static_cast<size_t>(i) * vocab;
          for (int v = 0; v < vocab; ++v) {
            const T q = static_cast<T>(
                (v == target ? 1.0 - eps : 0.0) + eps / vocab);
            drow[v] += g * (prow[v] - q);
          }
        }
      });
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;
  int64_t warmup_steps = 4000;
  double peak_lr = 5e-4;
  double label_smoothing = 0.1;
};

/// Adam with decoupled weight decay on the inverse-sqrt schedule. Layer
/// norm gains/biases and the fusion lambda weights are decay-exempt.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<std::pair<std::string, Tensor<float>>>& params,
                AdamConfig config);

  /// One update from the gradients currently accumulated on the
  /// parameters. Clips the global gradient norm first.
  void step();

  int64_t step_count() const { return step_; }
  void set_step_count(int64_t step) { step_ = step; }
  const AdamConfig& config() const { return config_; }
  double current_lr() const {
    return lr_at(std::max<int64_t>(step_, 1), config_.warmup_steps,
                 config_.peak_lr);
  }

  static bool decay_exempt(const std::string& name);

  /// Moment buffers as named arrays ("adam.m.<param>", "adam.v.<param>")
  /// for checkpointing.
  std::vector<std::pair<std::string, std::vector<float>>> named_state() const;
  void load_state(
      const std::vector<std::pair<std::string, std::vector<float>>>& state,
      int64_t step);

 private:
  std::vector<std::pair<std::string, Tensor<float>>>* params_;
  AdamConfig config_;
  int64_t step_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

struct StepRecord {
  int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainOptions {
  int64_t steps = 1000;
  uint64_t seed = 1;
  int64_t token_budget = 1024;
  int64_t checkpoint_interval = 0;  // 0 = final checkpoint only
  AdamConfig adam;
  std::string run_dir;      // when set: train.log + checkpoints live here
  int64_t start_step = 0;   // resume point (optimizer step count)
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  int64_t final_step = 0;
  double final_loss = 0.0;
  std::vector<StepRecord> log;
};

/// Deterministic training loop: per-step derived dropout streams and
/// per-epoch derived batch shuffles make a resumed run reproduce the
/// uninterrupted loss trace bitwise.
TrainResult train(TransformerModel<float>& model, AdamOptimizer& optimizer,
                  const ParallelCorpus& corpus, const TrainOptions& options);

/// Mean label-smoothed loss over a corpus in evaluation mode (no dropout,
/// no graph). Weighted by target length like the training objective.
double corpus_loss(TransformerModel<float>& model, const ParallelCorpus& corpus,
                   double label_smoothing);

/// Continues optimization from a checkpoint on a new corpus with a fresh
/// optimizer and schedule. Byte vocabularies are universal, so no
/// vocabulary rebuild happens (or is possible).
TrainResult finetune(TransformerModel<float>& model,
                     const ParallelCorpus& corpus, TrainOptions options);

}  // namespace bytenmt
