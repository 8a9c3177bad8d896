#pragma once

#include <cstdint>
#include <filesystem>
#include <random>

#include "cipher/dataio/image.hpp"

namespace cipher::dataio {

// Procedural stand-in for an aligned face corpus: a shaded oval head with eyes,
// brows, nose and mouth over a gradient background, plus sensor-like grain.
Raster render_toy_face(int size, std::mt19937_64& rng);

// Writes n PNGs named face_00000.png ... into dir.
void write_toy_faces(const std::filesystem::path& dir, int n, int size, std::uint64_t seed);

}  // namespace cipher::dataio
