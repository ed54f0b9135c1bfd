#pragma once

#include <string>

#include "mcfe/tensor.hpp"

namespace mcfe {

/// Writes a [1,H,W] or [H,W] image with values in [0,1] as 8-bit binary PGM
/// (P5). Values are clamped and rounded to the nearest of 256 levels.
void write_pgm(const std::string& path, const Tensor& image);

/// Reads a P5 or P2 PGM into a [1,H,W] tensor scaled to [0,1].
Tensor read_pgm(const std::string& path);

/// The value write_pgm followed by read_pgm would produce.
double quantize_pixel(double v);

}  // namespace mcfe
