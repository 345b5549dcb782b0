#pragma once

#include <string>

#include "imf/image.hpp"
#include "imf/scene.hpp"

namespace imf {

// ASCII PLY with float x,y,z and uchar red,green,blue vertex properties.
// Floats are printed with 9 significant digits. Malformed input raises a
// parse error carrying the byte offset.
PointCloud ply_read(const std::string& path);
void ply_write(const std::string& path, const PointCloud& cloud);

// Binary PPM (P6), maxval 255. Loading center-crops to dimensions divisible
// by 8 to satisfy the image contract.
Image ppm_read(const std::string& path);
void ppm_write(const std::string& path, const Image& img);

// Write a file atomically (temp file + rename).
void atomic_write(const std::string& path, const std::string& contents);

}  // namespace imf
