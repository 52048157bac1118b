#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dlpr/util.hpp"

namespace dlpr::optics {

// 8-bit grayscale object image, the SLM drive signal.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(static_cast<size_t>(h) * w, fill) {}
  std::uint8_t& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
};

// Per-pixel phase delays in radians, all within [-pi, 0].
struct PhaseObject {
  int height = 0;
  int width = 0;
  std::vector<double> phase;
};

struct ComplexField {
  int height = 0;
  int width = 0;
  std::vector<std::complex<double>> values;
};

// Detector-plane intensity; quantized view present only when the noise spec
// asked for 8-bit quantization.
struct RawImage {
  int height = 0;
  int width = 0;
  std::vector<double> intensity;
  std::optional<std::vector<std::uint8_t>> quantized;
};

struct PropagationConfig {
  double wavelength = 632.8e-9;  // He-Ne line
  double pixel_pitch = 20e-6;    // assumed SLM pitch; not a measured value
  double distance = 0.375;       // meters; negative = back-propagation
  int grid = 64;                 // pixels per side
  int pad_factor = 2;

  void validate() const;
  // Canonical text form; hashing it yields the provenance digest carried by
  // datasets and checkpoints.
  std::string canonical() const;
  std::string digest() const;
};

struct NoiseSpec {
  double gaussian_sigma = 0.0;  // additive, on intensity
  bool quantize_8bit = false;
  unsigned seed = 0;
};

// phi(m,n) = -pi * gray(m,n) / 255.
PhaseObject calibrate_phase(const GrayImage& gray, int grid);

// value(m,n) = exp(i * phi(m,n)); unit modulus everywhere.
ComplexField phase_to_field(const PhaseObject& obj);

// Band-limited angular-spectrum propagation: zero-pad to pad_factor*grid,
// FFT, multiply by H(fx,fy) = exp(i*2*pi*d*sqrt(1/lambda^2 - fx^2 - fy^2))
// for propagating frequencies (zero beyond the evanescent cutoff), inverse
// FFT, crop back to grid.
ComplexField propagate(const ComplexField& field, const PropagationConfig& cfg);

// I = |u|^2.
RawImage intensity(const ComplexField& field);

RawImage simulate_measurement(const GrayImage& gray,
                              const PropagationConfig& cfg,
                              const NoiseSpec& noise = {});

double total_energy(const ComplexField& field);

}  // namespace dlpr::optics
