#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dlpr/datasets.hpp"
#include "dlpr/network.hpp"

namespace dlpr::train {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  unsigned seed = 0;
  int eval_every = 1;

  void validate() const {
    if (epochs < 1) throw UsageError("train: epochs must be >= 1");
    if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
    // learning_rate 0 is legal and trains as the identity; negative is not
    if (learning_rate < 0) throw UsageError("train: learning_rate must be >= 0");
  }
};

struct EpochStats {
  int epoch = 0;
  double train_l1 = 0;
  double test_l1 = 0;
  double seconds = 0;
};

struct History {
  std::vector<EpochStats> epochs;
  void save_csv(const std::filesystem::path& path) const;
};

// Adaptive-moment state for one flat parameter list.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  long step = 0;

  explicit AdamState(const std::vector<TensorPtr<T>>& params) {
    for (const auto& p : params) {
      m.emplace_back(p->val.size(), T(0));
      v.emplace_back(p->val.size(), T(0));
    }
  }
};

// One bias-corrected adaptive-moment update, elementwise, from the
// gradients currently stored on the parameters.
template <typename T>
void adam_step(const std::vector<TensorPtr<T>>& params, AdamState<T>& state,
               const TrainConfig& cfg) {
  if (state.m.size() != params.size())
    throw UsageError("adam_step: state does not match parameter list");
  ++state.step;
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T eps = static_cast<T>(cfg.epsilon);
  const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, state.step));
  const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, state.step));
  const T lr = static_cast<T>(cfg.learning_rate);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (p.grad.size() != p.val.size())
      throw UsageError("adam_step: parameter missing gradient");
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t k = 0; k < p.val.size(); ++k) {
      const T g = p.grad[k];
      m[k] = b1 * m[k] + (T(1) - b1) * g;
      v[k] = b2 * v[k] + (T(1) - b2) * g * g;
      const T mhat = m[k] / bc1;
      const T vhat = v[k] / bc2;
      p.val[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// Mean per-sample Eq.-style L1 between model outputs and truths.
template <typename T>
double evaluate(const net::Model<T>& model, const std::vector<data::Sample>& samples,
                int batch_size = 32);

// MAE of predicting `mean_truth` for every sample.
double constant_predictor_mae(const std::vector<float>& mean_truth,
                              const std::vector<data::Sample>& samples);

// Mean training-set truth image; with the above this is the null baseline.
std::vector<float> mean_truth_image(const std::vector<data::Sample>& train);
double null_baseline(const data::LoadedDataset& ds);

struct TrainResult {
  History history;
  double best_test_l1 = 0;
  int best_epoch = 0;
};

// Seeded-shuffle epoch loop; saves best-test and final checkpoints plus the
// history CSV (rewritten after every epoch) when out_dir is non-empty.
template <typename T>
TrainResult train(net::Model<T>& model, const data::LoadedDataset& ds,
                  const TrainConfig& cfg,
                  const std::filesystem::path& out_dir = {},
                  bool verbose = false);

}  // namespace dlpr::train
