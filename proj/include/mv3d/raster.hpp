#pragma once

#include <span>
#include <string>
#include <vector>

namespace mv3d {

/// Row-major, channels-last float image. Integer coordinates address pixel centres.
struct Raster
{
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  Raster() = default;
  Raster(int w, int h, int c, float fill = 0.0F);

  float& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  /// Bilinear sample at continuous (x, y); returns false (and zeros) outside
  /// [0, width-1] x [0, height-1].
  bool sample(double x, double y, std::span<float> out) const;
};

/// Binary PGM (P5, 1 channel) or PPM (P6, 3 channels), 8-bit.
auto read_pnm(const std::string& path) -> Raster;
void write_pnm(const std::string& path, const Raster& image);

}  // namespace mv3d
