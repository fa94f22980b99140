#include "bevpred/image_io.hpp"

#include <fstream>
#include <stdexcept>

namespace bevpred {

void RgbImage::set(std::size_t row, std::size_t col, std::uint8_t r, std::uint8_t g,
                   std::uint8_t b) {
    const std::size_t base = (row * width + col) * 3;
    pixels[base] = r;
    pixels[base + 1] = g;
    pixels[base + 2] = b;
}

namespace {

void write_netpbm(const std::string& path, const char* magic, std::size_t width,
                  std::size_t height, const std::vector<std::uint8_t>& pixels) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    os << magic << "\n" << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(pixels.data()),
             static_cast<std::streamsize>(pixels.size()));
    if (!os) {
        throw std::runtime_error("write failed: " + path);
    }
}

void read_netpbm(const std::string& path, const char* magic, std::size_t bytes_per_pixel,
                 std::size_t& width, std::size_t& height, std::vector<std::uint8_t>& pixels) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open: " + path);
    }
    std::string tag;
    is >> tag;
    if (tag != magic) {
        throw std::runtime_error(path + ": expected " + magic + " header");
    }
    std::size_t maxval = 0;
    is >> width >> height >> maxval;
    if (!is || maxval != 255 || width == 0 || height == 0) {
        throw std::runtime_error(path + ": unsupported netpbm header");
    }
    is.get(); // single whitespace after maxval
    pixels.resize(width * height * bytes_per_pixel);
    is.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (is.gcount() != static_cast<std::streamsize>(pixels.size())) {
        throw std::runtime_error(path + ": truncated pixel data");
    }
}

} // namespace

void write_pgm(const std::string& path, const GrayImage& img) {
    write_netpbm(path, "P5", img.width, img.height, img.pixels);
}

GrayImage read_pgm(const std::string& path) {
    GrayImage img;
    read_netpbm(path, "P5", 1, img.width, img.height, img.pixels);
    return img;
}

void write_ppm(const std::string& path, const RgbImage& img) {
    write_netpbm(path, "P6", img.width, img.height, img.pixels);
}

RgbImage read_ppm(const std::string& path) {
    RgbImage img;
    read_netpbm(path, "P6", 3, img.width, img.height, img.pixels);
    return img;
}

} // namespace bevpred
