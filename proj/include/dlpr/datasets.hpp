#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dlpr/optics.hpp"

namespace dlpr::data {

struct ManifestRecord {
  std::string id;
  std::string source;   // original path or "procedural:<kind>#<index>"
  std::string split;    // "train" | "test"
  std::string dataset;  // dataset tag, e.g. "blobs"
  std::string optics_digest;  // empty until synthesized
};

struct Manifest {
  std::vector<ManifestRecord> records;

  // Enforces id uniqueness and train/test disjointness.
  void validate() const;
  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);
};

enum class Kind { Blobs, Gratings, DigitsLike, CharactersLike, Null };

Kind kind_from_string(const std::string& s);
std::string kind_to_string(Kind k);

// One deterministic synthetic object image; the rng carries the sequence
// state across a generated set.
optics::GrayImage generate_image(Kind kind, int grid, std::mt19937& rng);

// Dataset directory layout:
//   manifest.csv  optics.txt  norms.csv  gray/<id>.pgm  raw/<id>.dlt
//   truth/<id>.dlt
// gray/ holds the object images; sweeps re-simulate from them.

struct GenerateOptions {
  int grid = 64;
  double split_ratio = 0.9;
  unsigned seed = 0;
};

// Writes gray images + manifest (no synthesis yet) under out_dir.
Manifest generate_procedural(Kind kind, int count, const GenerateOptions& opt,
                             const std::filesystem::path& out_dir);

struct IngestOptions {
  int grid = 64;
  int margin = 0;
  double split_ratio = 0.9;
  unsigned seed = 0;
  std::string dataset_tag = "ingested";
};

// Reads every readable grayscale image under src_dir (non-images are skipped
// with a counted warning), resizes into the grid, writes gray images +
// manifest under out_dir. Returns the manifest; skipped count via out-param.
Manifest ingest(const std::filesystem::path& src_dir,
                const std::filesystem::path& out_dir, const IngestOptions& opt,
                int* skipped = nullptr);

// Simulates every manifest record (raw intensity + ground-truth phase),
// standardizes raw per sample, stores tensors and provenance.
void synthesize(Manifest& manifest, const std::filesystem::path& dir,
                const optics::PropagationConfig& cfg,
                const optics::NoiseSpec& noise = {});

struct Sample {
  std::string id;
  std::vector<float> raw;    // standardized intensity, grid*grid
  std::vector<float> truth;  // phase in [-pi, 0], grid*grid
};

struct LoadedDataset {
  std::filesystem::path dir;
  int grid = 0;
  optics::PropagationConfig cfg;
  std::string digest;
  std::string dataset_tag;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

// Tensor container files: magic "DLT0", u32 rank, u32 extents, f32 data,
// all little-endian.
void write_tensor_f32(const std::filesystem::path& path,
                      const std::vector<int>& shape, const float* data);
std::pair<std::vector<int>, std::vector<float>> read_tensor_f32(
    const std::filesystem::path& path);

// Standardization used for network inputs: zero mean, unit variance per
// sample; constant images become all-zero with the degenerate flag set.
struct SampleNorm {
  double mean = 0;
  double scale = 1;
  bool degenerate = false;
};
SampleNorm standardize(const std::vector<double>& in, std::vector<float>& out);

}  // namespace dlpr::data
