#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bevpred {

struct GrayImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels; // row-major
};

struct RgbImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels; // row-major, 3 bytes per pixel

    void set(std::size_t row, std::size_t col, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::string& path, const GrayImage& img);
GrayImage read_pgm(const std::string& path);

/// Binary PPM (P6, maxval 255).
void write_ppm(const std::string& path, const RgbImage& img);
RgbImage read_ppm(const std::string& path);

} // namespace bevpred
