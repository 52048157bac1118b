#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dlpr/datasets.hpp"
#include "dlpr/network.hpp"

namespace dlpr::exp {

struct TagMae {
  std::string tag;
  double mae = 0;
  int n = 0;
};

// MAE of the model on each dataset's test split. Every dataset must carry
// the optics digest the model was trained against; sweep paths that
// deliberately re-simulate at other optics bypass this guard internally.
std::vector<TagMae> cross_domain_eval(
    const net::ModelF& model, const std::vector<std::filesystem::path>& dataset_dirs);

void save_mae_table(const std::filesystem::path& path,
                    const std::vector<TagMae>& rows);

struct SweepRow {
  double value = 0;
  double mae = 0;
  int n = 0;
};

struct SweepResult {
  std::string axis;  // "distance" | "shift" | "rotation"
  std::vector<SweepRow> rows;
  void save_csv(const std::filesystem::path& path) const;
};

// Re-simulates the dataset's test split at each distance (same source
// images, same truths) and evaluates.
SweepResult distance_sweep(const net::ModelF& model,
                           const data::LoadedDataset& ds,
                           const std::vector<double>& distances);

// Object shifted on the SLM before simulation; vacated columns are filled
// with gray 0, and the truth shifts with the object.
SweepResult shift_sweep(const net::ModelF& model, const data::LoadedDataset& ds,
                        const std::vector<int>& shifts_px);

// Rotations restricted to multiples of 90 degrees.
SweepResult rotation_sweep(const net::ModelF& model,
                           const data::LoadedDataset& ds,
                           const std::vector<int>& degrees);

struct MapResult {
  int input_size = 0;
  std::vector<double> image;  // unit-L2 optimized input (double-normalized)
  std::vector<double> trace;  // bias-free mean activation per step (steps+1)
  double noise_activation = 0;  // mean |bias-free activation| of noise probes
};

// Plain gradient ascent on the input against one filter's mean response,
// renormalizing the input to unit L2 norm each step. The recorded trace
// subtracts the filter bias (the zero-input response) so magnitudes are
// comparable against noise probes.
MapResult max_activation_pattern(const net::ModelF& model, int layer,
                                 int filter, int steps, double step_size,
                                 int input_size, unsigned seed);

// Tiled grayscale panel: one row per sample, columns
// {truth phase, raw intensity, reconstruction}; phases mapped [-pi,0] ->
// [0,255]. Writes a PGM plus a CSV of per-sample L1 values; returns the
// per-sample L1 list.
std::vector<double> reconstruct_grid(const net::ModelF& model,
                                     const data::LoadedDataset& ds,
                                     const std::vector<std::string>& ids,
                                     const std::filesystem::path& out_pgm);

}  // namespace dlpr::exp
