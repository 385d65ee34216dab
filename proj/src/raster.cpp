#include "mv3d/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mv3d {

Raster::Raster(int w, int h, int c, float fill)
    : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill)
{
  if (w < 1 || h < 1 || c < 1)
    throw std::invalid_argument("raster dimensions must be positive");
}

bool Raster::sample(double x, double y, std::span<float> out) const
{
  if (!(x >= 0.0 && y >= 0.0 && x <= width - 1 && y <= height - 1)) {
    std::fill(out.begin(), out.end(), 0.0F);
    return false;
  }
  const int x0 = std::min(static_cast<int>(std::floor(x)), std::max(width - 2, 0));
  const int y0 = std::min(static_cast<int>(std::floor(y)), std::max(height - 2, 0));
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = x - x0, fy = y - y0;
  for (int c = 0; c < channels; ++c) {
    const double top = (1.0 - fx) * at(x0, y0, c) + fx * at(x1, y0, c);
    const double bottom = (1.0 - fx) * at(x0, y1, c) + fx * at(x1, y1, c);
    out[c] = static_cast<float>((1.0 - fy) * top + fy * bottom);
  }
  return true;
}

namespace {

// Next whitespace-separated header token, skipping '#' comments.
std::string next_token(std::istream& in)
{
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty())
        break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

}  // namespace

auto read_pnm(const std::string& path) -> Raster
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open image " + path);
  const std::string magic = next_token(in);
  int channels = 0;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw std::runtime_error(path + ": unsupported image format '" + magic + "'");

  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(next_token(in));
    height = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error(path + ": malformed header");
  }
  if (maxval <= 0 || maxval > 255)
    throw std::runtime_error(path + ": only 8-bit images are supported");

  Raster img(width, height, channels);
  std::vector<unsigned char> bytes(img.data.size());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error(path + ": truncated pixel data");
  std::transform(bytes.begin(), bytes.end(), img.data.begin(),
                 [](unsigned char b) { return static_cast<float>(b); });
  return img;
}

void write_pnm(const std::string& path, const Raster& image)
{
  if (image.channels != 1 && image.channels != 3)
    throw std::invalid_argument("write_pnm: only 1 or 3 channels supported");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write image " + path);
  out << (image.channels == 1 ? "P5" : "P6") << '\n'
      << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.data.size());
  std::transform(image.data.begin(), image.data.end(), bytes.begin(), [](float v) {
    return static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
  });
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace mv3d
