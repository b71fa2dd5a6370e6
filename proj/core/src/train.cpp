#include "bytenmt/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "bytenmt/checkpoint.hpp"
#include "bytenmt/fusion.hpp"
#include "bytenmt/rng.hpp"

namespace bytenmt {

AdamOptimizer::AdamOptimizer(
    std::vector<std::pair<std::string, Tensor<float>>>& params,
    AdamConfig config)
    : params_(&params), config_(config) {
  m_.resize(params.size());
  v_.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i].assign(static_cast<size_t>(params[i].second.size()), 0.0F);
    v_[i].assign(static_cast<size_t>(params[i].second.size()), 0.0F);
  }
}

bool AdamOptimizer::decay_exempt(const std::string& name) {
  return name.find(".ln") != std::string::npos ||
         name.find("final_ln") != std::string::npos ||
         name.ends_with("lambda");
}

void AdamOptimizer::step() {
  auto& params = *params_;
  for (auto& [name, p] : params) p.node()->ensure_grad();

  double norm_sq = 0.0;
  for (auto& [name, p] : params)
    for (float g : p.grad()) norm_sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(norm_sq);
  double scale = 1.0;
  if (config_.clip_norm > 0.0 && norm > config_.clip_norm)
    scale = config_.clip_norm / norm;

  ++step_;
  const double lr = lr_at(step_, config_.warmup_steps, config_.peak_lr);
  const double bias1 = 1.0 - std::pow(config_.beta1, double(step_));
  const double bias2 = 1.0 - std::pow(config_.beta2, double(step_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& [name, p] = params[i];
    const bool exempt = decay_exempt(name);
    auto grads = p.grad();
    auto data = p.raw();
    for (size_t j = 0; j < data.size(); ++j) {
      const double g = static_cast<double>(grads[j]) * scale;
      double m = config_.beta1 * m_[i][j] + (1.0 - config_.beta1) * g;
      double v = config_.beta2 * v_[i][j] + (1.0 - config_.beta2) * g * g;
      m_[i][j] = static_cast<float>(m);
      v_[i][j] = static_cast<float>(v);
      const double update =
          (m / bias1) / (std::sqrt(v / bias2) + config_.eps);
      double value = static_cast<double>(data[j]) - lr * update;
      if (!exempt && config_.weight_decay > 0.0)
        value -= lr * config_.weight_decay * value;
      data[j] = static_cast<float>(value);
    }
  }
}

std::vector<std::pair<std::string, std::vector<float>>>
AdamOptimizer::named_state() const {
  std::vector<std::pair<std::string, std::vector<float>>> state;
  state.reserve(params_->size() * 2);
  for (size_t i = 0; i < params_->size(); ++i) {
    state.emplace_back("adam.m." + (*params_)[i].first, m_[i]);
    state.emplace_back("adam.v." + (*params_)[i].first, v_[i]);
  }
  return state;
}

void AdamOptimizer::load_state(
    const std::vector<std::pair<std::string, std::vector<float>>>& state,
    int64_t step) {
  auto find = [&](const std::string& name) -> const std::vector<float>* {
    for (const auto& [n, values] : state)
      if (n == name) return &values;
    return nullptr;
  };
  for (size_t i = 0; i < params_->size(); ++i) {
    const auto& pname = (*params_)[i].first;
    const auto* m = find("adam.m." + pname);
    const auto* v = find("adam.v." + pname);
    if (!m || !v)
      throw Error("optimizer state missing moments for parameter " + pname);
    if (m->size() != m_[i].size() || v->size() != v_[i].size())
      throw Error("optimizer state size mismatch for parameter " + pname);
    m_[i] = *m;
    v_[i] = *v;
  }
  step_ = step;
}

namespace {

ByteSequence strip_padding(const std::vector<int>& row,
                           const std::vector<uint8_t>& mask) {
  ByteSequence seq;
  for (size_t i = 0; i < row.size(); ++i)
    if (mask[i]) seq.ids.push_back(row[i]);
  return seq;
}

struct SentenceLoss {
  Tensor<float> loss;  // mean over this sentence's target positions
  int positions = 0;
};

SentenceLoss sentence_loss(TransformerModel<float>& model,
                           const ByteSequence& source,
                           const WordSpanMap& spans,
                           const ByteSequence& target, double label_smoothing,
                           bool training) {
  auto z = encode_source(model, source, &spans, training);
  ByteSequence prefix{std::vector<int>(target.ids.begin(),
                                       target.ids.end() - 1)};
  ByteSequence labels{std::vector<int>(target.ids.begin() + 1,
                                       target.ids.end())};
  auto logits = model.decoder_forward(prefix, z, training);
  auto loss = smoothed_cross_entropy(logits, labels, label_smoothing);
  return {loss, labels.length()};
}

}  // namespace

TrainResult train(TransformerModel<float>& model, AdamOptimizer& optimizer,
                  const ParallelCorpus& corpus, const TrainOptions& options) {
  if (corpus.empty()) throw Error("train: empty corpus");
  TrainResult result;
  result.final_step = options.start_step;

  std::ofstream log_file;
  std::filesystem::path run_dir;
  if (!options.run_dir.empty()) {
    run_dir = options.run_dir;
    std::filesystem::create_directories(run_dir);
    log_file.open(run_dir / "train.log", std::ios::app);
  }
  auto write_checkpoint = [&](int64_t step) {
    if (run_dir.empty()) return;
    save_checkpoint((run_dir / "checkpoint_last.bnc").string(), model.config(),
                    model.parameters(), optimizer.named_state(), step);
  };

  int64_t epoch = -1;
  std::vector<Batch> batches;
  int64_t batches_per_epoch = 0;
  for (int64_t step = options.start_step + 1; step <= options.steps; ++step) {
    // Epoch layout is derived from (seed, epoch), so resuming at any step
    // rebuilds exactly the stream an uninterrupted run would see.
    if (batches_per_epoch == 0) {
      batches = make_batches(corpus, options.token_budget,
                             mix_seed(options.seed, 0));
      batches_per_epoch = static_cast<int64_t>(batches.size());
    }
    const int64_t wanted_epoch = (step - 1) / batches_per_epoch;
    if (wanted_epoch != epoch) {
      epoch = wanted_epoch;
      batches = make_batches(corpus, options.token_budget,
                             mix_seed(options.seed, uint64_t(epoch)));
    }
    const Batch& batch =
        batches[static_cast<size_t>((step - 1) % batches_per_epoch)];

    model.reseed_dropout(options.seed, static_cast<uint64_t>(step));
    model.zero_grads();

    int total_positions = 0;
    for (size_t r = 0; r < batch.size(); ++r) {
      int len = 0;
      for (uint8_t m : batch.target_pad_mask[r]) len += m;
      total_positions += len - 1;
    }
    double batch_loss = 0.0;
    for (size_t r = 0; r < batch.size(); ++r) {
      auto src = strip_padding(batch.source[r], batch.source_pad_mask[r]);
      auto tgt = strip_padding(batch.target[r], batch.target_pad_mask[r]);
      auto sentence = sentence_loss(model, src, batch.source_spans[r], tgt,
                                    optimizer.config().label_smoothing, true);
      // Weight each sentence by its share of target positions so the batch
      // objective is the mean over all non-PAD positions.
      auto weighted = scale(
          sentence.loss,
          static_cast<float>(double(sentence.positions) / total_positions));
      batch_loss += weighted.item();
      weighted.backward();
    }
    if (!std::isfinite(batch_loss))
      throw Error("train: non-finite loss at step " + std::to_string(step));

    optimizer.step();
    StepRecord record{step, batch_loss,
                      lr_at(step, optimizer.config().warmup_steps,
                            optimizer.config().peak_lr)};
    result.log.push_back(record);
    result.final_step = step;
    result.final_loss = batch_loss;
    if (log_file.is_open())
      log_file << record.step << '\t' << record.loss << '\t' << record.lr
               << '\n';
    if (options.on_step) options.on_step(record);
    if (options.checkpoint_interval > 0 &&
        step % options.checkpoint_interval == 0)
      write_checkpoint(step);
  }
  if (options.steps > options.start_step) write_checkpoint(result.final_step);
  if (log_file.is_open()) log_file.flush();
  return result;
}

double corpus_loss(TransformerModel<float>& model,
                   const ParallelCorpus& corpus, double label_smoothing) {
  if (corpus.empty()) throw Error("corpus_loss: empty corpus");
  NoGradGuard ng;
  double total = 0.0;
  int64_t positions = 0;
  for (const auto& [src_text, tgt_text] : corpus.pairs) {
    auto src = tokenize(src_text, true);
    auto tgt = tokenize(tgt_text, true);
    auto spans = word_spans(src_text);
    auto sentence =
        sentence_loss(model, src, spans, tgt, label_smoothing, false);
    total += static_cast<double>(sentence.loss.item()) * sentence.positions;
    positions += sentence.positions;
  }
  return total / static_cast<double>(positions);
}

TrainResult finetune(TransformerModel<float>& model,
                     const ParallelCorpus& corpus, TrainOptions options) {
  // Fresh schedule: optimizer restarts from step zero regardless of how
  // far the base run went.
  AdamOptimizer optimizer(model.parameters(), options.adam);
  options.start_step = 0;
  return train(model, optimizer, corpus, options);
}

}  // namespace bytenmt
