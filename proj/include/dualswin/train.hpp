#pragma once

// Optimisation: learning-rate schedule, AdamW, gradient clipping, the training
// step and the epoch loop with validation, checkpointing and resume.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dualswin/checkpoint.hpp"
#include "dualswin/config.hpp"
#include "dualswin/data.hpp"
#include "dualswin/evaluate.hpp"
#include "dualswin/losses.hpp"
#include "dualswin/model.hpp"

namespace dualswin {

/// Linear warmup from base/warmup (epoch 0) to base (epoch = warmup), then
/// base · rate^⌊(epoch − warmup)/decay_epochs⌋.
inline double lr_at(int epoch, const TrainConfig& cfg) {
  const double base = cfg.base_lr;
  const int w = cfg.warmup_epochs;
  if (epoch < w) return base / w + (base - base / w) * epoch / w;
  return base * std::pow(cfg.decay_rate, (epoch - w) / cfg.decay_epochs);
}

template <class Real>
double global_grad_norm(const ParameterStore<Real>& store) {
  double sum = 0;
  for (const auto& p : store)
    for (Real g : p->grad.data()) sum += static_cast<double>(g) * g;
  return std::sqrt(sum);
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class Real>
double clip_gradients(ParameterStore<Real>& store, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_gradients: max_norm must be positive");
  const double norm = global_grad_norm(store);
  if (norm > max_norm) {
    const Real scale = static_cast<Real>(max_norm / norm);
    for (auto& p : store) p->grad *= scale;
  }
  return norm;
}

template <class Real>
void require_finite_gradients(const ParameterStore<Real>& store) {
  for (const auto& p : store) {
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in parameter " + p->name);
  }
}

/// Adam with bias correction and decoupled weight decay:
/// θ ← θ − lr·(m̂/(√v̂ + ε) + wd·θ).
template <class Real>
class AdamW {
 public:
  AdamW(const ParameterStore<Real>& store, double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
    for (const auto& p : store) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  std::uint64_t steps() const { return step_; }

  void step(ParameterStore<Real>& store, double lr) {
    if (store.size() != m_.size()) throw std::logic_error("AdamW: parameter store changed size");
    require_finite_gradients(store);
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t k = 0; k < store.size(); ++k) {
      auto& p = store[k];
      Real* theta = p.value.ptr();
      const Real* g = p.grad.ptr();
      Real* m = m_[k].ptr();
      Real* v = v_[k].ptr();
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        m[i] = static_cast<Real>(beta1_ * m[i] + (1 - beta1_) * g[i]);
        v[i] = static_cast<Real>(beta2_ * v[i] + (1 - beta2_) * static_cast<double>(g[i]) * g[i]);
        const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_) + weight_decay_ * theta[i];
        theta[i] = static_cast<Real>(theta[i] - lr * update);
      }
    }
  }

  void save(Checkpoint& ck, const ParameterStore<Real>& store) const {
    for (std::size_t k = 0; k < store.size(); ++k) {
      append_arrays(ck, "adam.m/", store[k].name, m_[k]);
      append_arrays(ck, "adam.v/", store[k].name, v_[k]);
    }
    ck.meta["adam_steps"] = std::to_string(step_);
  }

  void restore(const Checkpoint& ck, const ParameterStore<Real>& store) {
    std::vector<std::pair<std::string, Tensor<Real>*>> m, v;
    for (std::size_t k = 0; k < store.size(); ++k) {
      m.emplace_back(store[k].name, &m_[k]);
      v.emplace_back(store[k].name, &v_[k]);
    }
    restore_arrays(ck, "adam.m/", m);
    restore_arrays(ck, "adam.v/", v);
    step_ = std::stoull(ck.meta_or("adam_steps", "0"));
  }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::uint64_t step_ = 0;
  std::vector<Tensor<Real>> m_, v_;
};

/// One row of the training history.
struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_jaccard_thy = std::numeric_limits<double>::quiet_NaN();
  double val_dice_thy = std::numeric_limits<double>::quiet_NaN();
  double val_jaccard_ptmc = std::numeric_limits<double>::quiet_NaN();
  double val_dice_ptmc = std::numeric_limits<double>::quiet_NaN();
  double lr = 0;
};

inline constexpr const char* kHistoryHeader =
    "epoch,train_loss,val_jaccard_thy,val_dice_thy,val_jaccard_ptmc,val_dice_ptmc,lr";

inline std::string format_history_row(const EpochRecord& r) {
  std::ostringstream os;
  os << std::setprecision(10) << r.epoch << ',' << r.train_loss << ',' << r.val_jaccard_thy << ',' << r.val_dice_thy
     << ',' << r.val_jaccard_ptmc << ',' << r.val_dice_ptmc << ',' << r.lr;
  return os.str();
}

struct FitOptions {
  std::filesystem::path out_dir;
  bool resume = false;          // continue from out_dir/checkpoint_last.bin if present
  int stop_after_epochs = -1;   // stop early after this many total epochs (for interrupted runs)
  std::ostream* log = nullptr;
};

struct FitResult {
  std::vector<EpochRecord> history;
  double best_val_dice_ptmc = std::numeric_limits<double>::quiet_NaN();
  int best_epoch = -1;
};

template <class Real>
class Trainer {
 public:
  explicit Trainer(const Config& cfg)
      : cfg_(cfg),
        model_(cfg.model, mix_seed(cfg.train.seed, 0x1417)),
        opt_(model_.parameters(), cfg.train.betas[0], cfg.train.betas[1], cfg.train.adam_eps,
             cfg.train.weight_decay) {
    validate(cfg_);
  }

  DualSwinUnet<Real>& model() { return model_; }
  const DualSwinUnet<Real>& model() const { return model_; }
  const AdamW<Real>& optimizer() const { return opt_; }
  const Config& config() const { return cfg_; }

  /// forward → loss → backward → clip → AdamW. Returns the pre-step loss.
  double train_step(const Batch<Real>& batch, double lr, std::mt19937_64* dropout_rng = nullptr) {
    auto& params = model_.parameters();
    params.zero_grad();
    const auto pred = model_.forward(Var<Real>::constant(batch.images), dropout_rng);
    const Var<Real> loss = combined_loss(pred, batch.thyroid, batch.ptmc, {cfg_.train.alpha, cfg_.train.beta},
                                         cfg_.train.label_smoothing);
    const double value = loss.value()[0];
    if (!std::isfinite(value)) throw NumericError("non-finite training loss");
    backward(loss);
    require_finite_gradients(params);
    clip_gradients(params, cfg_.train.clip_grad);
    opt_.step(params, lr);
    return value;
  }

  /// Validation Jaccard/Dice of both decoders at the configured threshold.
  EpochRecord validate_on(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) const {
    EpochRecord r;
    if (indices.empty()) return r;
    std::vector<const Sample*> chosen;
    for (auto i : indices) chosen.push_back(&samples[i]);
    const auto preds = predict(model_, chosen, static_cast<std::size_t>(cfg_.train.batch_size));
    const Evaluation ev = evaluate_predictions(chosen, preds, cfg_.train.threshold, false);
    r.val_jaccard_ptmc = ev.ptmc.report.jaccard;
    r.val_dice_ptmc = ev.ptmc.report.dice;
    if (ev.thyroid) {
      r.val_jaccard_thy = ev.thyroid->report.jaccard;
      r.val_dice_thy = ev.thyroid->report.dice;
    }
    return r;
  }

  Checkpoint make_checkpoint(int epochs_done, const FitResult& state) const {
    Checkpoint ck;
    ck.config_text = serialize_config(cfg_);
    ck.meta["epochs_completed"] = std::to_string(epochs_done);
    ck.meta["best_epoch"] = std::to_string(state.best_epoch);
    std::ostringstream best;
    best << std::setprecision(17) << state.best_val_dice_ptmc;
    ck.meta["best_val_dice_ptmc"] = best.str();
    store_parameters(ck, model_.parameters());
    opt_.save(ck, model_.parameters());
    return ck;
  }

  /// Restores weights, optimiser moments and counters from a training checkpoint.
  int restore(const Checkpoint& ck, FitResult& state) {
    load_parameters(ck, model_.parameters());
    opt_.restore(ck, model_.parameters());
    state.best_epoch = std::stoi(ck.meta_or("best_epoch", "-1"));
    state.best_val_dice_ptmc = std::stod(ck.meta_or("best_val_dice_ptmc", "nan"));
    return std::stoi(ck.meta_or("epochs_completed", "0"));
  }

  /// Epoch loop. Writes history.csv after every epoch, checkpoint_last.bin
  /// after every epoch and checkpoint_best.bin whenever validation PTMC Dice
  /// improves (every epoch when there is no validation split).
  FitResult fit(const std::vector<Sample>& samples, const DatasetSplit& split, const FitOptions& opt) {
    namespace fs = std::filesystem;
    if (split.train.empty()) throw DataError("training split is empty");
    fs::create_directories(opt.out_dir);
    const fs::path last = opt.out_dir / "checkpoint_last.bin", best = opt.out_dir / "checkpoint_best.bin";
    const fs::path history_path = opt.out_dir / "history.csv";
    FitResult state;
    int start = 0;
    std::vector<std::string> rows;
    if (opt.resume && fs::exists(last)) {
      const Checkpoint ck = load_checkpoint(last);
      if (ck.config_text != serialize_config(cfg_)) {
        throw CheckpointError("cannot resume: " + last.string() + " was written with a different config");
      }
      start = restore(ck, state);
      std::ifstream in(history_path);
      std::string line;
      std::getline(in, line);
      while (static_cast<int>(rows.size()) < start && std::getline(in, line)) rows.push_back(line);
      if (static_cast<int>(rows.size()) != start) throw DataError("cannot resume: history.csv is shorter than checkpoint");
      if (opt.log) *opt.log << "resuming after epoch " << start << "\n";
    }
    const int end = opt.stop_after_epochs >= 0 ? std::min(cfg_.train.epochs, opt.stop_after_epochs) : cfg_.train.epochs;
    const auto batch_size = static_cast<std::size_t>(cfg_.train.batch_size);
    for (int epoch = start; epoch < end; ++epoch) {
      const double lr = lr_at(epoch, cfg_.train);
      std::vector<std::size_t> order = split.train;
      std::mt19937_64 shuffle_rng(mix_seed(cfg_.train.seed, 1, epoch));
      for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng() % (i + 1)]);
      std::mt19937_64 aug_rng(mix_seed(cfg_.train.seed, 2, epoch));
      std::mt19937_64 drop_rng(mix_seed(cfg_.train.seed, 3, epoch));
      double loss_sum = 0;
      for (std::size_t b = 0; b < order.size(); b += batch_size) {
        std::vector<Sample> augmented;
        for (std::size_t i = b; i < std::min(order.size(), b + batch_size); ++i) {
          augmented.push_back(cfg_.data.augmentation.empty()
                                  ? samples[order[i]]
                                  : random_augment(samples[order[i]], cfg_.data.augmentation, aug_rng));
        }
        std::vector<const Sample*> ptrs;
        for (const auto& s : augmented) ptrs.push_back(&s);
        loss_sum += train_step(make_batch<Real>(ptrs, static_cast<std::size_t>(cfg_.model.in_channels)), lr, &drop_rng) * static_cast<double>(ptrs.size());
      }
      EpochRecord rec = validate_on(samples, split.val);
      rec.epoch = epoch;
      rec.train_loss = loss_sum / static_cast<double>(order.size());
      rec.lr = lr;
      state.history.push_back(rec);
      rows.push_back(format_history_row(rec));

      const bool improved = split.val.empty() || (!std::isnan(rec.val_dice_ptmc) &&
                                                  (state.best_epoch < 0 || rec.val_dice_ptmc > state.best_val_dice_ptmc));
      if (improved) {
        state.best_epoch = epoch;
        state.best_val_dice_ptmc = rec.val_dice_ptmc;
      }
      const Checkpoint ck = make_checkpoint(epoch + 1, state);
      if (improved) save_checkpoint(best, ck);
      save_checkpoint(last, ck);
      {
        std::ofstream h(history_path, std::ios::trunc);
        h << kHistoryHeader << '\n';
        for (const auto& r : rows) h << r << '\n';
        if (!h) throw DataError("failed writing " + history_path.string());
      }
      if (opt.log) *opt.log << format_history_row(rec) << '\n';
    }
    return state;
  }

 private:
  Config cfg_;
  DualSwinUnet<Real> model_;
  AdamW<Real> opt_;
};

/// Rebuilds a model from a checkpoint's embedded config and weights.
template <class Real>
DualSwinUnet<Real> model_from_checkpoint(const Checkpoint& ck, Config* cfg_out = nullptr) {
  const Config cfg = parse_config(ck.config_text);
  DualSwinUnet<Real> model(cfg.model, 0);
  load_parameters(ck, model.parameters());
  if (cfg_out) *cfg_out = cfg;
  return model;
}

}  // namespace dualswin
