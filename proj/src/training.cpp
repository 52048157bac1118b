#include "dlpr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>

namespace dlpr::train {

void History::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history " + path.string());
  out << "epoch,train_l1,test_l1,seconds\n";
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.3f\n", e.epoch, e.train_l1,
                  e.test_l1, e.seconds);
    out << buf;
  }
  if (!out) throw IoError("write failure on history " + path.string());
}

namespace {

template <typename T>
TensorPtr<T> batch_tensor(const std::vector<data::Sample>& samples,
                          const std::vector<size_t>& idx, size_t lo, size_t hi,
                          int grid, bool truth) {
  const int n = static_cast<int>(hi - lo);
  auto t = make_tensor<T>({n, 1, grid, grid});
  for (size_t s = lo; s < hi; ++s) {
    const auto& src = truth ? samples[idx[s]].truth : samples[idx[s]].raw;
    T* dst = t->val.data() + (s - lo) * static_cast<size_t>(grid) * grid;
    for (size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
  return t;
}

}  // namespace

template <typename T>
double evaluate(const net::Model<T>& model, const std::vector<data::Sample>& samples,
                int batch_size) {
  if (samples.empty()) throw UsageError("evaluate: empty dataset");
  const int grid = model.spec().input_size;
  std::vector<size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  double total = 0;
  for (size_t lo = 0; lo < samples.size(); lo += static_cast<size_t>(batch_size)) {
    const size_t hi = std::min(samples.size(), lo + static_cast<size_t>(batch_size));
    Graph<T> g;
    auto x = batch_tensor<T>(samples, idx, lo, hi, grid, false);
    auto out = model.forward(g, x);
    for (size_t s = lo; s < hi; ++s) {
      const auto& truth = samples[idx[s]].truth;
      const T* y = out->val.data() + (s - lo) * truth.size();
      double acc = 0;
      for (size_t i = 0; i < truth.size(); ++i)
        acc += std::abs(static_cast<double>(y[i]) - static_cast<double>(truth[i]));
      total += acc / static_cast<double>(truth.size());
    }
  }
  return total / static_cast<double>(samples.size());
}

std::vector<float> mean_truth_image(const std::vector<data::Sample>& train) {
  if (train.empty()) throw UsageError("null baseline: empty training set");
  std::vector<double> acc(train[0].truth.size(), 0.0);
  for (const auto& s : train)
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += s.truth[i];
  std::vector<float> mean(acc.size());
  for (size_t i = 0; i < acc.size(); ++i)
    mean[i] = static_cast<float>(acc[i] / static_cast<double>(train.size()));
  return mean;
}

double constant_predictor_mae(const std::vector<float>& mean_truth,
                              const std::vector<data::Sample>& samples) {
  if (samples.empty()) throw UsageError("null baseline: empty evaluation set");
  double total = 0;
  for (const auto& s : samples) {
    double acc = 0;
    for (size_t i = 0; i < s.truth.size(); ++i)
      acc += std::abs(static_cast<double>(mean_truth[i]) -
                      static_cast<double>(s.truth[i]));
    total += acc / static_cast<double>(s.truth.size());
  }
  return total / static_cast<double>(samples.size());
}

double null_baseline(const data::LoadedDataset& ds) {
  return constant_predictor_mae(mean_truth_image(ds.train), ds.test);
}

template <typename T>
TrainResult train(net::Model<T>& model, const data::LoadedDataset& ds,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir,
                  bool verbose) {
  cfg.validate();
  if (ds.train.empty()) throw UsageError("train: dataset has no training split");
  if (ds.grid != model.spec().input_size)
    throw UsageError("train: dataset grid " + std::to_string(ds.grid) +
                     " does not match spec input_size " +
                     std::to_string(model.spec().input_size));
  model.meta().optics_digest = ds.digest;

  auto params = model.parameters();
  AdamState<T> state(params);
  std::mt19937 shuffle_rng(cfg.seed ^ 0x9e3779b9u);
  std::vector<size_t> idx(ds.train.size());
  std::iota(idx.begin(), idx.end(), size_t{0});

  TrainResult result;
  result.best_test_l1 = std::numeric_limits<double>::infinity();
  const int grid = ds.grid;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(idx.begin(), idx.end(), shuffle_rng);
    double loss_sum = 0;
    int batches = 0;
    for (size_t lo = 0; lo < idx.size(); lo += static_cast<size_t>(cfg.batch_size)) {
      const size_t hi = std::min(idx.size(), lo + static_cast<size_t>(cfg.batch_size));
      Graph<T> g;
      auto x = batch_tensor<T>(ds.train, idx, lo, hi, grid, false);
      auto truth = batch_tensor<T>(ds.train, idx, lo, hi, grid, true);
      auto out = model.forward(g, x);
      auto loss = l1_loss(g, out, truth);
      const double lval = static_cast<double>(loss->val[0]);
      if (!std::isfinite(lval))
        throw DivergenceError("train: non-finite loss at epoch " +
                              std::to_string(epoch) + ", batch " +
                              std::to_string(batches));
      for (auto& p : params) p->zero_grad();
      g.backward(loss);
      adam_step(params, state, cfg);
      loss_sum += lval;
      ++batches;
    }
    EpochStats es;
    es.epoch = epoch;
    es.train_l1 = loss_sum / std::max(1, batches);
    es.test_l1 = ds.test.empty() ? 0.0 : evaluate(model, ds.test);
    es.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(es);
    if (verbose)
      std::cerr << "epoch " << epoch << ": train_l1 " << es.train_l1
                << " test_l1 " << es.test_l1 << " (" << es.seconds << "s)\n";

    if (!out_dir.empty()) {
      model.meta().epoch = epoch;
      result.history.save_csv(out_dir / "history.csv");
      if (es.test_l1 < result.best_test_l1) {
        model.save_checkpoint(out_dir / "best.ckpt");
      }
      model.save_checkpoint(out_dir / "final.ckpt");
    }
    if (es.test_l1 < result.best_test_l1) {
      result.best_test_l1 = es.test_l1;
      result.best_epoch = epoch;
    }
  }
  return result;
}

template double evaluate<float>(const net::Model<float>&,
                                const std::vector<data::Sample>&, int);
template double evaluate<double>(const net::Model<double>&,
                                 const std::vector<data::Sample>&, int);
template TrainResult train<float>(net::Model<float>&, const data::LoadedDataset&,
                                  const TrainConfig&, const std::filesystem::path&,
                                  bool);
template TrainResult train<double>(net::Model<double>&, const data::LoadedDataset&,
                                   const TrainConfig&, const std::filesystem::path&,
                                   bool);

}  // namespace dlpr::train
