#include "dlpr/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "dlpr/image_io.hpp"

namespace dlpr::data {

namespace fs = std::filesystem;
using optics::GrayImage;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// Seeded disjoint split: shuffle indices, first round(ratio*n) are train.
std::vector<std::string> assign_splits(size_t n, double ratio, unsigned seed) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::mt19937 rng(seed ^ 0x5b1f00d5u);
  std::shuffle(idx.begin(), idx.end(), rng);
  const size_t n_train =
      static_cast<size_t>(std::llround(ratio * static_cast<double>(n)));
  std::vector<std::string> split(n, "test");
  for (size_t i = 0; i < std::min(n_train, n); ++i) split[idx[i]] = "train";
  return split;
}

double uni(std::mt19937& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void stamp_disk(std::vector<double>& img, int grid, double cx, double cy,
                double rad, double value) {
  const int r0 = std::max(0, static_cast<int>(std::floor(cx - rad - 1)));
  const int r1 = std::min(grid, static_cast<int>(std::ceil(cx + rad + 2)));
  const int c0 = std::max(0, static_cast<int>(std::floor(cy - rad - 1)));
  const int c1 = std::min(grid, static_cast<int>(std::ceil(cy + rad + 2)));
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c)
      if ((r - cx) * (r - cx) + (c - cy) * (c - cy) <= rad * rad)
        img[static_cast<size_t>(r) * grid + c] = value;
}

GrayImage to_gray(const std::vector<double>& img, int grid) {
  GrayImage g(grid, grid);
  for (size_t i = 0; i < img.size(); ++i)
    g.pixels[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0));
  return g;
}

// Every procedural class sits on a canonical gray-26 background so training
// targets stay interior to the phase head's range; targets pinned exactly at
// the logistic asymptote make L1 training collapse to a constant output.
constexpr double kBackground = 26.0 / 255.0;

// Smoothed random blobs: a handful of vertically skewed anisotropic bumps.
// The downward-heavy tails make the class orientation-asymmetric, the way
// natural photographic corpora are, so rotation sweeps measure something.
GrayImage gen_blobs(int grid, std::mt19937& rng) {
  const double s = grid / 64.0;
  std::vector<double> img(static_cast<size_t>(grid) * grid, 0.0);
  const int bumps = 2 + static_cast<int>(rng() % 5u);
  for (int b = 0; b < bumps; ++b) {
    const double cx = uni(rng, 12 * s, 52 * s);
    const double cy = uni(rng, 12 * s, 52 * s);
    const double sx = uni(rng, 4 * s, 8 * s);
    const double sy = uni(rng, 3 * s, 6 * s);
    const double amp = uni(rng, 0.35, 1.0);
    for (int r = 0; r < grid; ++r) {
      const double sx_eff = (r > cx) ? sx * 1.7 : sx * 0.8;
      for (int c = 0; c < grid; ++c) {
        const double dr = r - cx, dc = c - cy;
        img[static_cast<size_t>(r) * grid + c] +=
            amp * std::exp(-dr * dr / (2 * sx_eff * sx_eff) -
                           dc * dc / (2 * sy * sy));
      }
    }
  }
  for (auto& v : img) v = std::clamp(kBackground + v, kBackground, 235.0 / 255.0);
  return to_gray(img, grid);
}

GrayImage gen_gratings(int grid, std::mt19937& rng) {
  const double period = uni(rng, 6.0, 24.0) * grid / 64.0;
  const double theta = uni(rng, 0.0, kPi);
  const double phase = uni(rng, 0.0, 2 * kPi);
  std::vector<double> img(static_cast<size_t>(grid) * grid);
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c)
      img[static_cast<size_t>(r) * grid + c] =
          kBackground + (1.0 - kBackground) * 0.5 *
              (1.0 + std::sin(2 * kPi * (r * std::cos(theta) + c * std::sin(theta)) /
                                  period +
                              phase));
  return to_gray(img, grid);
}

// Thick random strokes along a quadratic Bezier chain.
GrayImage gen_digits_like(int grid, std::mt19937& rng) {
  const double s = grid / 64.0;
  std::vector<double> img(static_cast<size_t>(grid) * grid, 0.0);
  const int npts = 3 + static_cast<int>(rng() % 2u);
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < npts; ++i)
    pts.emplace_back(uni(rng, 12 * s, 52 * s), uni(rng, 12 * s, 52 * s));
  const double rad = uni(rng, 2.0 * s, 3.5 * s);
  for (int seg = 0; seg + 2 < npts; ++seg) {
    const auto [x0, y0] = pts[static_cast<size_t>(seg)];
    const auto [x1, y1] = pts[static_cast<size_t>(seg) + 1];
    const auto [x2, y2] = pts[static_cast<size_t>(seg) + 2];
    for (int t = 0; t < 40; ++t) {
      const double u = t / 39.0;
      const double qx = (1 - u) * (1 - u) * x0 + 2 * (1 - u) * u * x1 + u * u * x2;
      const double qy = (1 - u) * (1 - u) * y0 + 2 * (1 - u) * u * y1 + u * u * y2;
      stamp_disk(img, grid, qx, qy, rad, 1.0);
    }
  }
  for (auto& v : img) v = std::max(v, kBackground);
  return to_gray(img, grid);
}

// Sparse glyph-like line segments.
GrayImage gen_characters_like(int grid, std::mt19937& rng) {
  const double s = grid / 64.0;
  std::vector<double> img(static_cast<size_t>(grid) * grid, 0.0);
  const int nseg = 2 + static_cast<int>(rng() % 4u);
  for (int i = 0; i < nseg; ++i) {
    const double x0 = uni(rng, 14 * s, 50 * s);
    const double y0 = uni(rng, 14 * s, 50 * s);
    const double ang = uni(rng, 0.0, 2 * kPi);
    const double len = uni(rng, 8 * s, 24 * s);
    const double rad = uni(rng, 1.0 * s, 2.0 * s);
    for (int t = 0; t < 30; ++t) {
      const double u = t / 29.0;
      stamp_disk(img, grid, x0 + u * len * std::cos(ang),
                 y0 + u * len * std::sin(ang), rad, 1.0);
    }
  }
  for (auto& v : img) v = std::max(v, kBackground);
  return to_gray(img, grid);
}

}  // namespace

void Manifest::validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second)
      throw UsageError("manifest: duplicate id '" + r.id + "'");
    if (r.split != "train" && r.split != "test")
      throw UsageError("manifest: bad split '" + r.split + "' for id " + r.id);
  }
}

void Manifest::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,source,split,dataset,optics_digest\n";
  for (const auto& r : records)
    out << csv_escape(r.id) << ',' << csv_escape(r.source) << ',' << r.split
        << ',' << csv_escape(r.dataset) << ',' << r.optics_digest << "\n";
  if (!out) throw IoError("write failure on " + path.string());
}

Manifest Manifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || csv_split(line).size() != 5)
    throw IoError("bad manifest header in " + path.string());
  Manifest m;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = csv_split(line);
    if (f.size() != 5)
      throw IoError("bad manifest row in " + path.string() + ": " + line);
    m.records.push_back({f[0], f[1], f[2], f[3], f[4]});
  }
  m.validate();
  return m;
}

Kind kind_from_string(const std::string& s) {
  if (s == "blobs") return Kind::Blobs;
  if (s == "gratings") return Kind::Gratings;
  if (s == "digits-like") return Kind::DigitsLike;
  if (s == "characters-like") return Kind::CharactersLike;
  if (s == "null") return Kind::Null;
  throw UsageError("unknown procedural kind '" + s +
                   "' (blobs|gratings|digits-like|characters-like|null)");
}

std::string kind_to_string(Kind k) {
  switch (k) {
    case Kind::Blobs: return "blobs";
    case Kind::Gratings: return "gratings";
    case Kind::DigitsLike: return "digits-like";
    case Kind::CharactersLike: return "characters-like";
    case Kind::Null: return "null";
  }
  return "?";
}

GrayImage generate_image(Kind kind, int grid, std::mt19937& rng) {
  switch (kind) {
    case Kind::Blobs: return gen_blobs(grid, rng);
    case Kind::Gratings: return gen_gratings(grid, rng);
    case Kind::DigitsLike: return gen_digits_like(grid, rng);
    case Kind::CharactersLike: return gen_characters_like(grid, rng);
    case Kind::Null: return GrayImage(grid, grid, 26);
  }
  throw UsageError("unknown kind");
}

Manifest generate_procedural(Kind kind, int count, const GenerateOptions& opt,
                             const fs::path& out_dir) {
  if (count < 1) throw UsageError("generate_procedural: count must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir / "gray", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "gray").string());

  std::mt19937 rng(opt.seed);
  const auto tag = kind_to_string(kind);
  const auto splits = assign_splits(static_cast<size_t>(count),
                                    opt.split_ratio, opt.seed);
  Manifest m;
  for (int i = 0; i < count; ++i) {
    const auto img = generate_image(kind, opt.grid, rng);
    char idbuf[64];
    std::snprintf(idbuf, sizeof(idbuf), "%s-%05d", tag.c_str(), i);
    io::write_pgm(out_dir / "gray" / (std::string(idbuf) + ".pgm"), img);
    m.records.push_back({idbuf, "procedural:" + tag + "#" + std::to_string(i),
                         splits[static_cast<size_t>(i)], tag, ""});
  }
  m.validate();
  m.save(out_dir / "manifest.csv");
  return m;
}

Manifest ingest(const fs::path& src_dir, const fs::path& out_dir,
                const IngestOptions& opt, int* skipped) {
  if (!fs::is_directory(src_dir))
    throw IoError("ingest: " + src_dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(src_dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("ingest: no files in " + src_dir.string());

  std::error_code ec;
  fs::create_directories(out_dir / "gray", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "gray").string());

  int skip = 0;
  std::vector<std::pair<std::string, GrayImage>> images;
  for (const auto& f : files) {
    try {
      images.emplace_back(f.string(),
                          io::resize_into_grid(io::read_image(f), opt.grid, opt.margin));
    } catch (const IoError&) {
      ++skip;
    }
  }
  if (images.empty())
    throw IoError("ingest: no readable images in " + src_dir.string());
  if (skipped) *skipped = skip;

  const auto splits = assign_splits(images.size(), opt.split_ratio, opt.seed);
  Manifest m;
  for (size_t i = 0; i < images.size(); ++i) {
    char idbuf[64];
    std::snprintf(idbuf, sizeof(idbuf), "%s-%05zu", opt.dataset_tag.c_str(), i);
    io::write_pgm(out_dir / "gray" / (std::string(idbuf) + ".pgm"),
                  images[i].second);
    m.records.push_back({idbuf, images[i].first, splits[i], opt.dataset_tag, ""});
  }
  m.validate();
  m.save(out_dir / "manifest.csv");
  return m;
}

SampleNorm standardize(const std::vector<double>& in, std::vector<float>& out) {
  SampleNorm norm;
  double mu = 0;
  for (double v : in) mu += v;
  mu /= static_cast<double>(in.size());
  double var = 0;
  for (double v : in) var += (v - mu) * (v - mu);
  var /= static_cast<double>(in.size());
  const double sd = std::sqrt(var);
  norm.mean = mu;
  out.resize(in.size());
  if (sd < 1e-12) {
    norm.scale = 0.0;
    norm.degenerate = true;
    std::fill(out.begin(), out.end(), 0.0f);
  } else {
    norm.scale = sd;
    for (size_t i = 0; i < in.size(); ++i)
      out[i] = static_cast<float>((in[i] - mu) / sd);
  }
  return norm;
}

void write_tensor_f32(const fs::path& path, const std::vector<int>& shape,
                      const float* data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("DLT0", 4);
  const std::uint32_t rank = static_cast<std::uint32_t>(shape.size());
  out.write(reinterpret_cast<const char*>(&rank), 4);
  long n = 1;
  for (int e : shape) {
    const std::uint32_t ext = static_cast<std::uint32_t>(e);
    out.write(reinterpret_cast<const char*>(&ext), 4);
    n *= e;
  }
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(n * 4));
  if (!out) throw IoError("write failure on " + path.string());
}

std::pair<std::vector<int>, std::vector<float>> read_tensor_f32(
    const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "DLT0", 4) != 0)
    throw IoError(path.string() + ": bad tensor magic");
  std::uint32_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), 4);
  if (!in || rank > 8) throw IoError(path.string() + ": bad tensor rank");
  std::vector<int> shape(rank);
  long n = 1;
  for (auto& e : shape) {
    std::uint32_t ext = 0;
    in.read(reinterpret_cast<char*>(&ext), 4);
    e = static_cast<int>(ext);
    n *= e;
  }
  if (!in || n < 0) throw IoError(path.string() + ": bad tensor extents");
  std::vector<float> data(static_cast<size_t>(n));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(n * 4));
  if (!in) throw IoError(path.string() + ": truncated tensor data");
  return {shape, data};
}

void synthesize(Manifest& manifest, const fs::path& dir,
                const optics::PropagationConfig& cfg,
                const optics::NoiseSpec& noise) {
  manifest.validate();
  cfg.validate();
  std::error_code ec;
  fs::create_directories(dir / "raw", ec);
  fs::create_directories(dir / "truth", ec);
  if (ec) throw IoError("cannot create dataset directories under " + dir.string());

  const auto digest = cfg.digest();
  const int n = static_cast<int>(manifest.records.size());
  std::vector<SampleNorm> norms(static_cast<size_t>(n));
  std::vector<std::string> errors(static_cast<size_t>(n));

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    auto& rec = manifest.records[static_cast<size_t>(i)];
    try {
      const auto gray = io::read_pgm(dir / "gray" / (rec.id + ".pgm"));
      optics::NoiseSpec per = noise;
      per.seed = noise.seed ^ (static_cast<unsigned>(i) * 2654435761u);
      const auto raw = optics::simulate_measurement(gray, cfg, per);
      std::vector<float> std_raw;
      norms[static_cast<size_t>(i)] = standardize(raw.intensity, std_raw);
      write_tensor_f32(dir / "raw" / (rec.id + ".dlt"), {cfg.grid, cfg.grid},
                       std_raw.data());
      const auto truth = optics::calibrate_phase(gray, cfg.grid);
      std::vector<float> tr(truth.phase.begin(), truth.phase.end());
      write_tensor_f32(dir / "truth" / (rec.id + ".dlt"), {cfg.grid, cfg.grid},
                       tr.data());
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw IoError("synthesize: " + e);

  for (auto& rec : manifest.records) rec.optics_digest = digest;
  manifest.save(dir / "manifest.csv");

  std::ofstream ocfg(dir / "optics.txt");
  ocfg << "wavelength = " << cfg.wavelength << "\n"
       << "pixel_pitch = " << cfg.pixel_pitch << "\n"
       << "distance = " << cfg.distance << "\n"
       << "grid = " << cfg.grid << "\n"
       << "pad_factor = " << cfg.pad_factor << "\n";
  ocfg.precision(17);
  if (!ocfg) throw IoError("cannot write optics.txt");

  std::ofstream onorm(dir / "norms.csv");
  onorm << "id,mean,scale,degenerate\n";
  onorm.precision(17);
  for (int i = 0; i < n; ++i) {
    const auto& nm = norms[static_cast<size_t>(i)];
    onorm << manifest.records[static_cast<size_t>(i)].id << ',' << nm.mean
          << ',' << nm.scale << ',' << (nm.degenerate ? 1 : 0) << "\n";
  }
  if (!onorm) throw IoError("cannot write norms.csv");
}

LoadedDataset load_dataset(const fs::path& dir) {
  LoadedDataset ds;
  ds.dir = dir;
  auto manifest = Manifest::load(dir / "manifest.csv");

  std::ifstream ocfg(dir / "optics.txt");
  if (!ocfg) throw IoError("dataset missing optics.txt in " + dir.string());
  std::string key, eq;
  double val;
  std::map<std::string, double> kv;
  while (ocfg >> key >> eq >> val) kv[key] = val;
  ds.cfg.wavelength = kv.at("wavelength");
  ds.cfg.pixel_pitch = kv.at("pixel_pitch");
  ds.cfg.distance = kv.at("distance");
  ds.cfg.grid = static_cast<int>(kv.at("grid"));
  ds.cfg.pad_factor = static_cast<int>(kv.at("pad_factor"));
  ds.grid = ds.cfg.grid;
  ds.digest = ds.cfg.digest();

  for (const auto& rec : manifest.records) {
    if (rec.optics_digest != ds.digest)
      throw ArtifactMismatch("dataset " + dir.string() + " record " + rec.id +
                             " carries optics digest " + rec.optics_digest +
                             " but optics.txt hashes to " + ds.digest);
    Sample s;
    s.id = rec.id;
    auto [rshape, rdata] = read_tensor_f32(dir / "raw" / (rec.id + ".dlt"));
    auto [tshape, tdata] = read_tensor_f32(dir / "truth" / (rec.id + ".dlt"));
    if (rshape != std::vector<int>{ds.grid, ds.grid} || rshape != tshape)
      throw ArtifactMismatch("dataset tensor shape mismatch for " + rec.id);
    s.raw = std::move(rdata);
    s.truth = std::move(tdata);
    if (ds.dataset_tag.empty()) ds.dataset_tag = rec.dataset;
    (rec.split == "train" ? ds.train : ds.test).push_back(std::move(s));
  }
  return ds;
}

}  // namespace dlpr::data
