#include "dlpr/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>

#include "dlpr/image_io.hpp"
#include "dlpr/training.hpp"

namespace dlpr::exp {

namespace fs = std::filesystem;
using optics::GrayImage;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<data::Sample> resimulate(
    const data::LoadedDataset& ds, const optics::PropagationConfig& cfg,
    const std::function<GrayImage(const GrayImage&)>& transform) {
  std::vector<std::string> ids;
  for (const auto& s : ds.test) ids.push_back(s.id);
  std::vector<data::Sample> out(ids.size());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < static_cast<int>(ids.size()); ++i) {
    auto gray = io::read_pgm(ds.dir / "gray" / (ids[static_cast<size_t>(i)] + ".pgm"));
    if (transform) gray = transform(gray);
    const auto raw = optics::simulate_measurement(gray, cfg);
    data::Sample s;
    s.id = ids[static_cast<size_t>(i)];
    data::standardize(raw.intensity, s.raw);
    const auto truth = optics::calibrate_phase(gray, cfg.grid);
    s.truth.assign(truth.phase.begin(), truth.phase.end());
    out[static_cast<size_t>(i)] = std::move(s);
  }
  return out;
}

}  // namespace

std::vector<TagMae> cross_domain_eval(const net::ModelF& model,
                                      const std::vector<fs::path>& dataset_dirs) {
  if (dataset_dirs.empty()) throw UsageError("cross_domain_eval: no datasets");
  std::vector<TagMae> rows;
  for (const auto& dir : dataset_dirs) {
    auto ds = data::load_dataset(dir);
    if (!model.meta().optics_digest.empty() &&
        ds.digest != model.meta().optics_digest)
      throw ArtifactMismatch(
          "cross_domain_eval: dataset " + dir.string() + " has optics digest " +
          ds.digest + " but the model was trained against " +
          model.meta().optics_digest);
    TagMae r;
    r.tag = ds.dataset_tag;
    r.n = static_cast<int>(ds.test.size());
    r.mae = train::evaluate(model, ds.test);
    rows.push_back(std::move(r));
  }
  return rows;
}

void save_mae_table(const fs::path& path, const std::vector<TagMae>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "dataset,mae,n\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%d\n", r.tag.c_str(), r.mae, r.n);
    out << buf;
  }
  if (!out) throw IoError("write failure on " + path.string());
}

void SweepResult::save_csv(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "axis,value,mae,n\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%d\n", axis.c_str(), r.value,
                  r.mae, r.n);
    out << buf;
  }
  if (!out) throw IoError("write failure on " + path.string());
}

SweepResult distance_sweep(const net::ModelF& model,
                           const data::LoadedDataset& ds,
                           const std::vector<double>& distances) {
  if (distances.empty()) throw UsageError("distance_sweep: no values");
  for (double d : distances)
    if (d <= 0) throw UsageError("distance_sweep: distance must be > 0");
  SweepResult res;
  res.axis = "distance";
  for (double d : distances) {
    auto cfg = ds.cfg;
    cfg.distance = d;  // deliberate digest override: that is the experiment
    auto samples = resimulate(ds, cfg, nullptr);
    res.rows.push_back({d, train::evaluate(model, samples),
                        static_cast<int>(samples.size())});
  }
  return res;
}

SweepResult shift_sweep(const net::ModelF& model, const data::LoadedDataset& ds,
                        const std::vector<int>& shifts_px) {
  if (shifts_px.empty()) throw UsageError("shift_sweep: no values");
  for (int s : shifts_px)
    if (std::abs(s) >= ds.grid)
      throw UsageError("shift_sweep: |shift| " + std::to_string(s) +
                       " >= grid " + std::to_string(ds.grid));
  SweepResult res;
  res.axis = "shift";
  for (int s : shifts_px) {
    auto shifted = [s](const GrayImage& g) {
      GrayImage out(g.height, g.width, 0);  // vacated area: gray 0
      for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c) {
          const int src = c - s;
          if (src >= 0 && src < g.width) out.at(r, c) = g.at(r, src);
        }
      return out;
    };
    auto samples = resimulate(ds, ds.cfg, shifted);
    res.rows.push_back({static_cast<double>(s), train::evaluate(model, samples),
                        static_cast<int>(samples.size())});
  }
  return res;
}

SweepResult rotation_sweep(const net::ModelF& model,
                           const data::LoadedDataset& ds,
                           const std::vector<int>& degrees) {
  if (degrees.empty()) throw UsageError("rotation_sweep: no values");
  SweepResult res;
  res.axis = "rotation";
  for (int deg : degrees) {
    const int norm = ((deg % 360) + 360) % 360;
    if (norm % 90 != 0)
      throw UsageError("rotation_sweep: " + std::to_string(deg) +
                       " is not a multiple of 90 degrees");
    const int quarter = norm / 90;
    auto rotated = [quarter](const GrayImage& g) {
      GrayImage out = g;
      for (int q = 0; q < quarter; ++q) {
        GrayImage t(out.width, out.height);
        // 90 degrees counterclockwise
        for (int r = 0; r < out.height; ++r)
          for (int c = 0; c < out.width; ++c) t.at(out.width - 1 - c, r) = out.at(r, c);
        out = std::move(t);
      }
      return out;
    };
    auto samples = resimulate(ds, ds.cfg, rotated);
    res.rows.push_back({static_cast<double>(deg), train::evaluate(model, samples),
                        static_cast<int>(samples.size())});
  }
  return res;
}

MapResult max_activation_pattern(const net::ModelF& model, int layer,
                                 int filter, int steps, double step_size,
                                 int input_size, unsigned seed) {
  if (layer < 0 || layer >= model.conv_layer_count())
    throw UsageError("maps: layer " + std::to_string(layer) +
                     " out of range (model has " +
                     std::to_string(model.conv_layer_count()) + " conv layers)");
  if (filter < 0 || filter >= model.filters_of_conv(layer))
    throw UsageError("maps: filter " + std::to_string(filter) +
                     " out of range (layer has " +
                     std::to_string(model.filters_of_conv(layer)) + " filters)");
  if (steps < 0 || input_size < 2) throw UsageError("maps: bad steps/input_size");

  const double bias = static_cast<double>(model.bias_of(layer, filter));
  std::mt19937 rng(seed);
  std::normal_distribution<float> nd(0.0f, 1.0f);

  auto x = make_tensor<float>({1, 1, input_size, input_size});
  for (auto& v : x->val) v = 0.1f * nd(rng);
  auto renorm = [&] {
    double n2 = 0;
    for (float v : x->val) n2 += static_cast<double>(v) * v;
    const float inv = static_cast<float>(1.0 / std::sqrt(std::max(n2, 1e-30)));
    for (auto& v : x->val) v *= inv;
  };
  renorm();

  auto activation_of = [&](const TensorPtr<float>& in, bool with_grad) {
    Graph<float> g;
    auto act = model.forward_to_conv(g, in, layer);
    auto obj = mean_channel(g, act, filter);
    if (with_grad) g.backward(obj);
    return static_cast<double>(obj->val[0]) - bias;
  };

  MapResult res;
  res.input_size = input_size;

  // noise probes for the comparison baseline
  double noise_acc = 0;
  const int probes = 8;
  for (int p = 0; p < probes; ++p) {
    auto xn = make_tensor<float>({1, 1, input_size, input_size});
    for (auto& v : xn->val) v = nd(rng);
    double n2 = 0;
    for (float v : xn->val) n2 += static_cast<double>(v) * v;
    for (auto& v : xn->val) v = static_cast<float>(v / std::sqrt(n2));
    noise_acc += std::abs(activation_of(xn, false));
  }
  res.noise_activation = noise_acc / probes;

  for (int t = 0; t < steps; ++t) {
    x->requires_grad = true;
    x->zero_grad();
    res.trace.push_back(activation_of(x, true));
    for (size_t i = 0; i < x->val.size(); ++i)
      x->val[i] += static_cast<float>(step_size) * x->grad[i];
    renorm();
  }
  res.trace.push_back(activation_of(x, false));
  // final normalization in double so the returned image carries an exact
  // unit L2 norm
  res.image.assign(x->val.begin(), x->val.end());
  double n2 = 0;
  for (double v : res.image) n2 += v * v;
  const double inv = 1.0 / std::sqrt(std::max(n2, 1e-300));
  for (double& v : res.image) v *= inv;
  return res;
}

std::vector<double> reconstruct_grid(const net::ModelF& model,
                                     const data::LoadedDataset& ds,
                                     const std::vector<std::string>& ids,
                                     const fs::path& out_pgm) {
  if (ids.empty()) throw UsageError("reconstruct_grid: no samples");
  const int grid = ds.grid;
  std::vector<const data::Sample*> samples;
  for (const auto& id : ids) {
    const data::Sample* found = nullptr;
    for (const auto& s : ds.test)
      if (s.id == id) found = &s;
    for (const auto& s : ds.train)
      if (!found && s.id == id) found = &s;
    if (!found)
      throw UsageError("reconstruct_grid: id '" + id + "' not in dataset");
    samples.push_back(found);
  }

  const int gap = 2;
  const int rows = static_cast<int>(samples.size());
  GrayImage panel(rows * grid + (rows - 1) * gap, 3 * grid + 2 * gap, 0);
  std::vector<double> l1s;

  auto phase_to_u8 = [](float phi) {
    return static_cast<std::uint8_t>(
        std::lround(std::clamp(255.0 * (phi + kPi) / kPi, 0.0, 255.0)));
  };

  for (int r = 0; r < rows; ++r) {
    const auto& s = *samples[static_cast<size_t>(r)];
    Graph<float> g;
    auto x = make_tensor<float>({1, 1, grid, grid},
                                std::vector<float>(s.raw.begin(), s.raw.end()));
    auto out = model.forward(g, x);
    double acc = 0;
    for (size_t i = 0; i < s.truth.size(); ++i)
      acc += std::abs(static_cast<double>(out->val[i]) - s.truth[i]);
    l1s.push_back(acc / static_cast<double>(s.truth.size()));

    float raw_max = 1e-20f;
    for (float v : s.raw) raw_max = std::max(raw_max, std::abs(v));
    const int r0 = r * (grid + gap);
    for (int i = 0; i < grid; ++i)
      for (int j = 0; j < grid; ++j) {
        const size_t k = static_cast<size_t>(i) * grid + j;
        panel.at(r0 + i, j) = phase_to_u8(s.truth[k]);
        panel.at(r0 + i, grid + gap + j) = static_cast<std::uint8_t>(
            std::lround(127.5 + 127.5 * s.raw[k] / raw_max));
        panel.at(r0 + i, 2 * (grid + gap) + j) = phase_to_u8(out->val[k]);
      }
  }
  io::write_pgm(out_pgm, panel);

  std::ofstream csv(out_pgm.string() + ".csv");
  csv << "id,l1\n";
  char buf[96];
  for (size_t i = 0; i < ids.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g\n", ids[i].c_str(), l1s[i]);
    csv << buf;
  }
  return l1s;
}

}  // namespace dlpr::exp
