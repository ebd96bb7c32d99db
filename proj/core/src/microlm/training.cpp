#include "convrisk/microlm/training.hpp"

#include <cmath>
#include <numeric>

#include "convrisk/error.hpp"
#include "convrisk/rng.hpp"
#include "transformer.hpp"

namespace convrisk::microlm {

namespace {

TokenId target_of(const TrainingExample& ex) { return ex.label ? Tokenizer::kYes : Tokenizer::kNo; }

// Returns loss; writes softmax - onehot into dlogits.
double cross_entropy(const Vector& logits, TokenId target, Vector* dlogits) {
  const double m = logits.maxCoeff();
  const Vector e = (logits.array() - m).exp();
  const double sum = e.sum();
  const double loss = m + std::log(sum) - logits(target);
  if (dlogits) {
    *dlogits = e / sum;
    (*dlogits)(target) -= 1.0;
  }
  return loss;
}

// Adam state for any container exposing for_each(name, Matrix&).
class Adam {
 public:
  template <typename Params>
  explicit Adam(const Params& like) {
    like.for_each([&](const std::string&, const Matrix& m) {
      m_.push_back(Matrix::Zero(m.rows(), m.cols()));
      v_.push_back(Matrix::Zero(m.rows(), m.cols()));
    });
  }

  template <typename Params>
  void step(Params& params, const Params& grads, const TrainingHyper& h, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t_));
    std::vector<const Matrix*> g;
    grads.for_each([&](const std::string&, const Matrix& m) { g.push_back(&m); });
    std::size_t i = 0;
    params.for_each([&](const std::string&, Matrix& p) {
      const Matrix& gi = *g[i];
      m_[i] = h.beta1 * m_[i] + (1.0 - h.beta1) * gi;
      v_[i] = h.beta2 * v_[i] + (1.0 - h.beta2) * gi.cwiseProduct(gi);
      p.array() -= lr * ((m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + h.epsilon) + h.weight_decay * p.array());
      ++i;
    });
  }

 private:
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

template <typename Params>
double squared_norm(const Params& p) {
  double s = 0.0;
  p.for_each([&](const std::string&, const Matrix& m) { s += m.squaredNorm(); });
  return s;
}

template <typename Params>
void scale_all(Params& p, double factor) {
  p.for_each([&](const std::string&, Matrix& m) { m *= factor; });
}

// Scales summed gradients to a mean and applies the global-norm clip.
template <typename Params>
void finish_gradient(Params& grad, std::size_t batch, double clip) {
  scale_all(grad, 1.0 / static_cast<double>(batch));
  if (clip > 0.0) {
    const double norm = std::sqrt(squared_norm(grad));
    if (norm > clip) scale_all(grad, clip / norm);
  }
}

double learning_rate_at(const TrainingHyper& h, std::size_t step) {
  if (!h.cosine_decay || h.steps <= 1) return h.learning_rate;
  const double progress = static_cast<double>(step) / static_cast<double>(h.steps - 1);
  return h.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(progress * 3.141592653589793)));
}

// Minibatch schedule: reshuffle the corpus each epoch and walk it in order.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
      : order_(n), batch_(batch == 0 || batch > n ? n : batch), rng_(Rng::derive(seed, "batches")) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    if (batch_ < order_.size()) rng_.shuffle(std::span<std::size_t>(order_));
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  Rng rng_;
};

}  // namespace

TrainingExample make_example(const SerializedPrompt& prompt, std::uint8_t label) {
  if (label > 1) throw ArgumentError("label must be 0 or 1");
  return {prompt.token_ids, label};
}

double example_loss(const MicroLMWeights& weights, const LoraAdapter* adapter, const TrainingExample& example) {
  detail::ForwardCache cache;
  const Vector logits = detail::run_forward(weights, adapter, example.tokens, cache);
  return cross_entropy(logits, target_of(example), nullptr);
}

double batch_loss(const MicroLMWeights& weights, const LoraAdapter* adapter, std::span<const TrainingExample> batch) {
  double total = 0.0;
  for (const auto& ex : batch) total += example_loss(weights, adapter, ex);
  return total;
}

double mean_loss(const MicroLMWeights& weights, const LoraAdapter* adapter, std::span<const TrainingExample> batch) {
  if (batch.empty()) return 0.0;
  return batch_loss(weights, adapter, batch) / static_cast<double>(batch.size());
}

double accumulate_gradients(const MicroLMWeights& weights, const LoraAdapter* adapter,
                            std::span<const TrainingExample> batch, MicroLMWeights* base_grad,
                            LoraAdapter* adapter_grad) {
  double total = 0.0;
  detail::ForwardCache cache;
  Vector dlogits;
  for (const auto& ex : batch) {
    const Vector logits = detail::run_forward(weights, adapter, ex.tokens, cache);
    total += cross_entropy(logits, target_of(ex), &dlogits);
    detail::run_backward(weights, adapter, cache, dlogits, base_grad, adapter_grad);
  }
  return total;
}

PretrainResult pretrain(const MicroLMConfig& config, std::span<const TrainingExample> corpus,
                        const TrainingHyper& hyper) {
  if (corpus.empty()) throw ArgumentError("pretraining corpus is empty");
  config.validate();
  for (const auto& ex : corpus) detail::check_tokens(config, ex.tokens);

  PretrainResult result{MicroLMWeights::initialize(config, hyper.seed), {}};
  auto& w = result.weights;
  MicroLMWeights grad = MicroLMWeights::zeros(config);
  Adam adam(w);
  BatchSampler sampler(corpus.size(), hyper.batch_size, hyper.seed);
  std::vector<TrainingExample> batch;

  for (std::size_t step = 0; step < hyper.steps; ++step) {
    const auto picks = sampler.next();
    batch.clear();
    for (auto i : picks) batch.push_back(corpus[i]);
    grad.set_zero();
    const double loss = accumulate_gradients(w, nullptr, batch, &grad, nullptr) / static_cast<double>(batch.size());
    if (!std::isfinite(loss)) throw TrainingError("pretraining loss became non-finite at step " + std::to_string(step));
    finish_gradient(grad, batch.size(), hyper.grad_clip);
    adam.step(w, grad, hyper, learning_rate_at(hyper, step));
    result.loss_trace.push_back(loss);
    if (hyper.on_step) hyper.on_step(step, loss);
  }
  if (!w.all_finite()) throw TrainingError("pretraining produced non-finite weights");
  return result;
}

FinetuneResult finetune_lora(const MicroLMWeights& base, std::span<const TrainingExample> shots,
                             std::span<const TrainingExample> validation, const LoraSpec& spec,
                             const TrainingHyper& hyper) {
  if (shots.empty()) throw ArgumentError("fine-tuning needs at least one shot");
  const auto positives = std::count_if(shots.begin(), shots.end(), [](const auto& ex) { return ex.label == 1; });
  if (positives * 2 != static_cast<std::ptrdiff_t>(shots.size()))
    throw ArgumentError("fine-tuning shots must be class-balanced");
  for (const auto& ex : shots) detail::check_tokens(base.config, ex.tokens);

  LoraAdapter adapter = LoraAdapter::initialize(base.config, spec, hyper.seed);
  LoraAdapter grad = LoraAdapter::zeros_like(adapter);
  Adam adam(adapter);
  BatchSampler sampler(shots.size(), hyper.batch_size, hyper.seed);
  std::vector<TrainingExample> batch;

  FinetuneResult result;
  result.adapter = adapter;
  const bool has_validation = !validation.empty();
  auto evaluate = [&](std::size_t step) {
    if (!has_validation) return;
    const double v = mean_loss(base, &adapter, validation);
    if (!std::isfinite(v)) throw TrainingError("validation loss became non-finite at step " + std::to_string(step));
    result.validation_trace.emplace_back(step, v);
    if (result.validation_trace.size() == 1 || v < result.best_validation_loss) {
      result.best_validation_loss = v;
      result.best_step = step;
      result.adapter = adapter;
    }
  };

  evaluate(0);
  const std::size_t interval = hyper.eval_interval == 0 ? 1 : hyper.eval_interval;
  for (std::size_t step = 1; step <= hyper.steps; ++step) {
    const auto picks = sampler.next();
    batch.clear();
    for (auto i : picks) batch.push_back(shots[i]);
    grad.set_zero();
    const double loss = accumulate_gradients(base, &adapter, batch, nullptr, &grad) / static_cast<double>(batch.size());
    if (!std::isfinite(loss)) throw TrainingError("fine-tuning loss became non-finite at step " + std::to_string(step));
    finish_gradient(grad, batch.size(), hyper.grad_clip);
    adam.step(adapter, grad, hyper, learning_rate_at(hyper, step - 1));
    result.train_loss_trace.push_back(loss);
    if (hyper.on_step) hyper.on_step(step, loss);
    if (step % interval == 0 || step == hyper.steps) evaluate(step);
  }

  result.final_adapter = adapter;
  if (has_validation) {
    result.final_validation_loss = result.validation_trace.back().second;
  } else {
    result.adapter = adapter;
    result.best_step = hyper.steps;
  }
  return result;
}

GradientCheckReport gradient_check(const MicroLMWeights& weights, const LoraAdapter& adapter,
                                   std::span<const TrainingExample> batch, const GradientCheckOptions& options) {
  GradientCheckReport report;
  LoraAdapter adapter_grad = LoraAdapter::zeros_like(adapter);
  MicroLMWeights base_grad = options.include_base ? MicroLMWeights::zeros(weights.config) : MicroLMWeights{};
  accumulate_gradients(weights, &adapter, batch, options.include_base ? &base_grad : nullptr, &adapter_grad);

  auto record = [&](double a, double n) {
    const double e = std::abs(a - n) / std::max({std::abs(a), std::abs(n), options.floor});
    if (e > report.max_relative_error || report.checked == 0) {
      report.max_relative_error = e;
      report.worst_analytic = a;
      report.worst_numeric = n;
    }
    ++report.checked;
  };

  LoraAdapter probe = adapter;
  std::vector<Matrix*> params;
  std::vector<const Matrix*> grads;
  probe.for_each([&](const std::string&, Matrix& m) { params.push_back(&m); });
  adapter_grad.for_each([&](const std::string&, const Matrix& m) { grads.push_back(&m); });
  for (std::size_t t = 0; t < params.size(); ++t) {
    Matrix& m = *params[t];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double saved = m.data()[i];
      m.data()[i] = saved + options.step;
      const double up = batch_loss(weights, &probe, batch);
      m.data()[i] = saved - options.step;
      const double down = batch_loss(weights, &probe, batch);
      m.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      record(grads[t]->data()[i], numeric);
    }
  }

  if (options.include_base && options.base_samples > 0) {
    MicroLMWeights probe_base = weights;
    std::vector<Matrix*> bp;
    std::vector<const Matrix*> bg;
    probe_base.for_each([&](const std::string&, Matrix& m) { bp.push_back(&m); });
    base_grad.for_each([&](const std::string&, const Matrix& m) { bg.push_back(&m); });
    Rng rng(Rng::derive(options.seed, "gradient-check"));
    for (std::size_t s = 0; s < options.base_samples; ++s) {
      const auto t = static_cast<std::size_t>(rng.below(bp.size()));
      Matrix& m = *bp[t];
      const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(m.size())));
      const double saved = m.data()[i];
      m.data()[i] = saved + options.step;
      const double up = batch_loss(probe_base, &adapter, batch);
      m.data()[i] = saved - options.step;
      const double down = batch_loss(probe_base, &adapter, batch);
      m.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      record(bg[t]->data()[i], numeric);
    }
  }
  return report;
}

}  // namespace convrisk::microlm
