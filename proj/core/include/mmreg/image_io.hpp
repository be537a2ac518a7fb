#pragma once

#include <string>

#include "mmreg/image.hpp"

namespace mmreg {

// Decodes a PNG or TIFF file (8- or 16-bit, 1 or 3 channels) and min-max
// normalizes intensities to [0, 1]. A constant image maps to all zeros.
GridImage load_image(const std::string& path, Modality modality);

// Encodes to 8-bit PNG (values clamped to [0, 1] and scaled to 0..255).
// Channel count of the file matches the image (1 -> gray, 3 -> RGB).
void save_image_png(const std::string& path, const GridImage& img);

// Reads a single-channel mask file; any nonzero sample is tissue.
BinaryMask load_mask(const std::string& path);

void save_mask_png(const std::string& path, const BinaryMask& mask);

// Landmark CSV format: header `id,x,y`, pixel coordinates of the owning
// image. Coordinates are validated against [0, W-1] x [0, H-1]; violations
// and duplicate ids raise diagnostics naming the offending id.
LandmarkSet read_landmarks(const std::string& path, int image_height, int image_width);

void write_landmarks(const std::string& path, const LandmarkSet& lms);

}  // namespace mmreg
