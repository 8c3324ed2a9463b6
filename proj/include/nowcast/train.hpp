#pragma once

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>

#include "nowcast/network.hpp"

namespace nowcast {

// ---------------------------------------------------------------------------
// Masked MSE loss
// ---------------------------------------------------------------------------

template <class S>
struct MseResult {
  S loss;
  Tensor<S> grad;
};

/// loss = sum(mask * (pred - target)^2) / sum(mask);
/// grad = 2 * mask * (pred - target) / sum(mask).
template <class S>
MseResult<S> mse_loss(const Tensor<S>& pred, const Tensor<S>& target, const Tensor<S>& mask) {
  if (pred.shape() != target.shape() || pred.shape() != mask.shape())
    throw std::invalid_argument("mse_loss: shape mismatch");
  const S denom = mask.array().sum();
  if (denom <= S(0)) throw std::invalid_argument("mse_loss: all-zero mask");
  MseResult<S> r;
  ArrayX<S> diff = mask.array() * (pred.array() - target.array());
  r.loss = (diff * (pred.array() - target.array())).sum() / denom;
  r.grad = Tensor<S>(pred.shape());
  r.grad.array() = S(2) * diff / denom;
  return r;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 4;
  int max_epochs = 100;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  int patience = 10;
  double validation_fraction = 0.2;
  double clip_norm = 5.0;

  void validate() const {
    if (learning_rate < 0) throw std::invalid_argument("train: learning_rate must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (max_epochs < 0) throw std::invalid_argument("train: max_epochs must be >= 0");
    if (validation_fraction < 0 || validation_fraction >= 1)
      throw std::invalid_argument("train: validation_fraction must be in [0, 1)");
    if (patience < 1) throw std::invalid_argument("train: patience must be >= 1");
    if (clip_norm <= 0) throw std::invalid_argument("train: clip_norm must be > 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || epsilon <= 0)
      throw std::invalid_argument("train: invalid adam parameters");
  }
};

template <class S>
struct OptimizerState {
  std::vector<Tensor<S>> m, v;  // adam moments, one per parameter tensor
  long step = 0;
};

/// Scales gradients in place so their global L2 norm is at most max_norm.
template <class S>
void clip_global_norm(std::vector<Tensor<S>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads) sq += double(g.array().square().sum());
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const S scale = S(max_norm / norm);
    for (auto& g : grads) g.array() *= scale;
  }
}

/// One optimizer step over the full parameter registry. Adam uses the
/// standard bias-corrected update.
template <class S>
void apply_update(std::vector<ParamRef<S>>& params, const std::vector<Tensor<S>>& grads,
                  const TrainConfig& cfg, OptimizerState<S>& state) {
  if (params.size() != grads.size())
    throw std::invalid_argument("apply_update: parameter/gradient count mismatch");
  if (cfg.optimizer == OptimizerKind::sgd) {
    for (size_t i = 0; i < params.size(); ++i)
      params[i].tensor->array() -= S(cfg.learning_rate) * grads[i].array();
    return;
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(Tensor<S>(p.tensor->shape()));
      state.v.emplace_back(Tensor<S>(p.tensor->shape()));
    }
  }
  state.step += 1;
  const S b1 = S(cfg.beta1), b2 = S(cfg.beta2);
  const S corr1 = S(1) - S(std::pow(cfg.beta1, double(state.step)));
  const S corr2 = S(1) - S(std::pow(cfg.beta2, double(state.step)));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i].array();
    auto& v = state.v[i].array();
    const auto& g = grads[i].array();
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.square();
    params[i].tensor->array() -=
        S(cfg.learning_rate) * (m / corr1) / ((v / corr2).sqrt() + S(cfg.epsilon));
  }
}

// ---------------------------------------------------------------------------
// Target assembly
// ---------------------------------------------------------------------------

/// Target frame j (0..2) for horizon h is the sequence frame at t + h - 2 + j,
/// i.e. the 3 frames ending at t + h. Missing (NaN) pixels get mask 0.
template <class S>
struct TargetBatch {
  Tensor<S> values;  // (B,3,1,rows,cols), normalized
  Tensor<S> mask;    // (B,3,1,rows,cols), 1 = observed
};

template <class S>
TargetBatch<S> assemble_targets(const std::vector<SampleWindow>& windows, int horizon,
                                const NormalizationSpec& spec) {
  if (windows.empty()) throw std::invalid_argument("assemble_targets: no windows");
  if (horizon < 1 || horizon > 3) throw std::invalid_argument("assemble_targets: horizon must be 1..3");
  const GridFrame& first = windows[0].input(0);
  const Eigen::Index rows = first.rows, cols = first.cols, plane = rows * cols;
  TargetBatch<S> out{Tensor<S>({Eigen::Index(windows.size()), kSeqLen, 1, rows, cols}),
                     Tensor<S>({Eigen::Index(windows.size()), kSeqLen, 1, rows, cols})};
  for (size_t b = 0; b < windows.size(); ++b) {
    const auto& w = windows[b];
    for (int j = 0; j < kSeqLen; ++j) {
      const GridFrame& f = w.seq->frames[size_t(w.t_index + horizon - 2 + j)];
      if (f.rows != rows || f.cols != cols)
        throw std::invalid_argument("assemble_targets: inconsistent grid shape");
      const Eigen::Index off = (Eigen::Index(b) * kSeqLen + j) * plane;
      Eigen::Map<ArrayX<S>>(out.values.data() + off, plane) = normalize<S>(f, spec).array();
      Eigen::Map<ArrayX<S>>(out.mask.data() + off, plane) = observation_mask<S>(f).array();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Trains the model in place. Windows are split (seeded shuffle) into a
/// validation slice of `validation_fraction` and a training remainder; each
/// epoch runs shuffled mini-batches and the parameters with the best
/// validation loss (training loss when the split is empty) are restored at
/// the end. Early-stops after `patience` epochs without improvement.
template <class S>
void train_model(NowcastModel<S>& model, const std::vector<SampleWindow>& windows,
                 const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (windows.empty()) throw std::invalid_argument("train_model: no training windows");
  if (model.config.horizon < 1 || model.config.horizon > 3)
    throw std::invalid_argument("train_model: model horizon must be 1..3");

  std::mt19937 rng(static_cast<std::uint32_t>(cfg.seed ^ (cfg.seed >> 32)));
  std::vector<size_t> order(windows.size());
  std::iota(order.begin(), order.end(), size_t(0));
  std::shuffle(order.begin(), order.end(), rng);
  const size_t n_val = size_t(double(windows.size()) * cfg.validation_fraction);
  std::vector<SampleWindow> val_set, train_set;
  for (size_t i = 0; i < order.size(); ++i)
    (i < n_val ? val_set : train_set).push_back(windows[order[i]]);
  if (train_set.empty()) throw std::invalid_argument("train_model: validation split leaves no training data");

  auto params = model_parameters(model);
  auto state_refs = model_state_tensors(model);
  OptimizerState<S> opt;

  auto batch_targets = [&](const std::vector<SampleWindow>& batch) {
    return assemble_targets<S>(batch, model.config.horizon, model.normalization);
  };
  auto eval_loss = [&](const std::vector<SampleWindow>& set) {
    double total = 0, weight = 0;
    for (size_t i = 0; i < set.size(); i += size_t(cfg.batch_size)) {
      std::vector<SampleWindow> batch(set.begin() + long(i),
                                      set.begin() + long(std::min(set.size(), i + size_t(cfg.batch_size))));
      auto x = assemble_batch<S>(batch, model.normalization, model.config.input_channels);
      auto y = forward(model, x, RunMode::infer);
      auto t = batch_targets(batch);
      const double w = double(t.mask.array().sum());
      total += double(mse_loss(y, t.values, t.mask).loss) * w;
      weight += w;
    }
    return weight > 0 ? total / weight : 0.0;
  };

  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor<S>> best_state;
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<size_t> idx(train_set.size());
    std::iota(idx.begin(), idx.end(), size_t(0));
    std::shuffle(idx.begin(), idx.end(), rng);

    double epoch_loss = 0, epoch_weight = 0;
    for (size_t i = 0; i < idx.size(); i += size_t(cfg.batch_size)) {
      std::vector<SampleWindow> batch;
      for (size_t j = i; j < std::min(idx.size(), i + size_t(cfg.batch_size)); ++j)
        batch.push_back(train_set[idx[j]]);
      auto x = assemble_batch<S>(batch, model.normalization, model.config.input_channels);
      ForwardCache<S> cache;
      auto y = forward(model, x, RunMode::train, &cache);
      auto t = batch_targets(batch);
      auto loss = mse_loss(y, t.values, t.mask);
      if (!std::isfinite(double(loss.loss)))
        throw std::runtime_error("train_model: non-finite loss (training diverged)");
      const double w = double(t.mask.array().sum());
      epoch_loss += double(loss.loss) * w;
      epoch_weight += w;
      auto grads = backward(model, cache, loss.grad);
      clip_global_norm(grads, cfg.clip_norm);
      apply_update(params, grads, cfg, opt);
    }
    const double train_loss = epoch_weight > 0 ? epoch_loss / epoch_weight : 0.0;
    const double val_loss = val_set.empty() ? train_loss : eval_loss(val_set);
    model.train_loss_history.push_back(float(train_loss));
    model.val_loss_history.push_back(float(val_loss));
    model.epochs_trained += 1;
    if (log)
      *log << "epoch " << epoch + 1 << " train_loss " << train_loss << " val_loss " << val_loss
           << '\n';

    if (val_loss < best) {
      best = val_loss;
      since_best = 0;
      best_state.clear();
      for (const auto& r : state_refs) best_state.push_back(*r.tensor);
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (!best_state.empty())
    for (size_t i = 0; i < state_refs.size(); ++i) *state_refs[i].tensor = best_state[i];
}

// ---------------------------------------------------------------------------
// Config file + loss-history CSV
// ---------------------------------------------------------------------------

/// Reads a plain `key = value` (or `key value`, `key=value`) config file.
/// Blank lines and lines starting with '#' are ignored; unknown keys error.
inline TrainConfig parse_train_config(std::istream& is, TrainConfig base = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::string body = line;
    std::replace(body.begin(), body.end(), '=', ' ');
    std::istringstream ls(body);
    std::string key, value;
    if (!(ls >> key >> value))
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key=value");
    try {
      if (key == "learning_rate") base.learning_rate = std::stod(value);
      else if (key == "batch_size") base.batch_size = std::stoi(value);
      else if (key == "max_epochs") base.max_epochs = std::stoi(value);
      else if (key == "beta1") base.beta1 = std::stod(value);
      else if (key == "beta2") base.beta2 = std::stod(value);
      else if (key == "epsilon") base.epsilon = std::stod(value);
      else if (key == "seed") base.seed = std::stoull(value);
      else if (key == "patience") base.patience = std::stoi(value);
      else if (key == "validation_fraction") base.validation_fraction = std::stod(value);
      else if (key == "clip_norm") base.clip_norm = std::stod(value);
      else if (key == "optimizer") {
        if (value == "sgd") base.optimizer = OptimizerKind::sgd;
        else if (value == "adam") base.optimizer = OptimizerKind::adam;
        else throw std::runtime_error("config line " + std::to_string(lineno) +
                                      ": optimizer must be sgd or adam");
      } else {
        throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown key '" + key +
                                 "'");
      }
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": bad value for '" + key +
                               "'");
    }
  }
  base.validate();
  return base;
}

template <class S>
void write_loss_history_csv(const NowcastModel<S>& model, std::ostream& os) {
  os << "epoch,train_loss,val_loss\n";
  for (size_t i = 0; i < model.train_loss_history.size(); ++i)
    os << i + 1 << ',' << model.train_loss_history[i] << ','
       << (i < model.val_loss_history.size() ? model.val_loss_history[i] : 0.f) << '\n';
}

}  // namespace nowcast
