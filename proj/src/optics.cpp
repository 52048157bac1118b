#include "dlpr/optics.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <random>
#include <sstream>

namespace dlpr::optics {

namespace {

constexpr double kPi = 3.14159265358979323846;

// FFTW planning is not thread safe; execution of a private plan is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

void fft2_inplace(std::vector<std::complex<double>>& buf, int n, int sign) {
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan = fftw_plan_dft_2d(n, n, reinterpret_cast<fftw_complex*>(buf.data()),
                            reinterpret_cast<fftw_complex*>(buf.data()), sign,
                            FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
}

}  // namespace

void PropagationConfig::validate() const {
  if (wavelength <= 0) throw UsageError("wavelength must be > 0");
  if (pixel_pitch <= 0) throw UsageError("pixel_pitch must be > 0");
  if (grid < 2) throw UsageError("grid must be >= 2");
  if (pad_factor < 1) throw UsageError("pad_factor must be >= 1");
}

std::string PropagationConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "wavelength=" << wavelength << ";pitch=" << pixel_pitch
     << ";distance=" << distance << ";grid=" << grid << ";pad=" << pad_factor;
  return os.str();
}

std::string PropagationConfig::digest() const { return to_hex(fnv1a(canonical())); }

PhaseObject calibrate_phase(const GrayImage& gray, int grid) {
  if (gray.height != grid || gray.width != grid)
    throw UsageError("calibrate_phase: image is " + std::to_string(gray.height) +
                     "x" + std::to_string(gray.width) +
                     " but the simulation grid is " + std::to_string(grid) +
                     "x" + std::to_string(grid));
  PhaseObject obj;
  obj.height = gray.height;
  obj.width = gray.width;
  obj.phase.resize(gray.pixels.size());
  for (size_t i = 0; i < gray.pixels.size(); ++i)
    obj.phase[i] = -kPi * static_cast<double>(gray.pixels[i]) / 255.0;
  return obj;
}

ComplexField phase_to_field(const PhaseObject& obj) {
  ComplexField f;
  f.height = obj.height;
  f.width = obj.width;
  f.values.resize(obj.phase.size());
  for (size_t i = 0; i < obj.phase.size(); ++i)
    f.values[i] = std::polar(1.0, obj.phase[i]);
  return f;
}

ComplexField propagate(const ComplexField& field, const PropagationConfig& cfg) {
  cfg.validate();
  if (field.height != cfg.grid || field.width != cfg.grid)
    throw UsageError("propagate: field " + std::to_string(field.height) + "x" +
                     std::to_string(field.width) + " does not match grid " +
                     std::to_string(cfg.grid));
  for (const auto& v : field.values)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw UsageError("propagate: non-finite value in input field");

  const int n = cfg.grid;
  const int P = n * cfg.pad_factor;
  const int off = (P - n) / 2;

  std::vector<std::complex<double>> buf(static_cast<size_t>(P) * P,
                                        std::complex<double>(0, 0));
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      buf[static_cast<size_t>(r + off) * P + (c + off)] =
          field.values[static_cast<size_t>(r) * n + c];

  fft2_inplace(buf, P, FFTW_FORWARD);

  const double df = 1.0 / (P * cfg.pixel_pitch);
  const double inv_lam2 = 1.0 / (cfg.wavelength * cfg.wavelength);
  std::vector<double> freq(static_cast<size_t>(P));
  for (int i = 0; i < P; ++i)
    freq[static_cast<size_t>(i)] = df * (i < (P + 1) / 2 ? i : i - P);

  for (int r = 0; r < P; ++r) {
    const double fy2 = freq[static_cast<size_t>(r)] * freq[static_cast<size_t>(r)];
    for (int c = 0; c < P; ++c) {
      const double f2 = fy2 + freq[static_cast<size_t>(c)] * freq[static_cast<size_t>(c)];
      auto& v = buf[static_cast<size_t>(r) * P + c];
      if (f2 < inv_lam2) {
        v *= std::polar(1.0, 2.0 * kPi * cfg.distance * std::sqrt(inv_lam2 - f2));
      } else {
        v = 0.0;  // evanescent: zeroed, not attenuated
      }
    }
  }

  fft2_inplace(buf, P, FFTW_BACKWARD);
  const double scale = 1.0 / (static_cast<double>(P) * P);

  ComplexField out;
  out.height = n;
  out.width = n;
  out.values.resize(static_cast<size_t>(n) * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      out.values[static_cast<size_t>(r) * n + c] =
          buf[static_cast<size_t>(r + off) * P + (c + off)] * scale;
  return out;
}

RawImage intensity(const ComplexField& field) {
  RawImage img;
  img.height = field.height;
  img.width = field.width;
  img.intensity.resize(field.values.size());
  for (size_t i = 0; i < field.values.size(); ++i)
    img.intensity[i] = std::norm(field.values[i]);
  return img;
}

RawImage simulate_measurement(const GrayImage& gray, const PropagationConfig& cfg,
                              const NoiseSpec& noise) {
  RawImage img =
      intensity(propagate(phase_to_field(calibrate_phase(gray, cfg.grid)), cfg));
  if (noise.gaussian_sigma > 0) {
    std::mt19937 rng(noise.seed);
    std::normal_distribution<double> dist(0.0, noise.gaussian_sigma);
    for (auto& v : img.intensity) v = std::max(0.0, v + dist(rng));
  }
  if (noise.quantize_8bit) {
    double mx = 0.0;
    for (double v : img.intensity) mx = std::max(mx, v);
    std::vector<std::uint8_t> q(img.intensity.size(), 0);
    if (mx > 0) {
      for (size_t i = 0; i < img.intensity.size(); ++i)
        q[i] = static_cast<std::uint8_t>(
            std::lround(255.0 * img.intensity[i] / mx));
    }
    img.quantized = std::move(q);
  }
  return img;
}

double total_energy(const ComplexField& field) {
  double e = 0.0;
  for (const auto& v : field.values) e += std::norm(v);
  return e;
}

}  // namespace dlpr::optics
