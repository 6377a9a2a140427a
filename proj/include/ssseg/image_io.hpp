#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ssseg {

struct GrayImage8 {
    int h = 0, w = 0;
    std::vector<uint8_t> v;
};

struct GrayImage16 {
    int h = 0, w = 0;
    std::vector<uint16_t> v;
};

struct RgbImage8 {
    int h = 0, w = 0;
    std::vector<std::array<uint8_t, 3>> v;
};

// Binary portable graymaps (P5). 16-bit samples are most-significant byte
// first, per the netpbm convention.
void write_pgm8(const std::string& path, const GrayImage8& img);
void write_pgm16(const std::string& path, const GrayImage16& img);
GrayImage8 read_pgm8(const std::string& path);
GrayImage16 read_pgm16(const std::string& path);

// Binary portable pixmap (P6), used for overlay visualizations.
void write_ppm(const std::string& path, const RgbImage8& img);

}  // namespace ssseg
