#include "ssseg/image_io.hpp"

#include <fstream>
#include <stdexcept>

namespace ssseg {

namespace {

void write_header(std::ostream& os, const char* magic, int w, int h, int maxval) {
    os << magic << "\n" << w << " " << h << "\n" << maxval << "\n";
}

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw std::runtime_error("pgm: truncated header");
    return tok;
}

struct PgmHeader {
    int w, h, maxval;
};

PgmHeader read_pgm_header(std::istream& is, const std::string& path) {
    if (next_token(is) != "P5") throw std::runtime_error("not a binary PGM (P5): " + path);
    PgmHeader hd{};
    hd.w = std::stoi(next_token(is));
    hd.h = std::stoi(next_token(is));
    hd.maxval = std::stoi(next_token(is));
    if (hd.w < 1 || hd.h < 1) throw std::runtime_error("pgm: bad dimensions in " + path);
    return hd;
}

}  // namespace

void write_pgm8(const std::string& path, const GrayImage8& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    write_header(f, "P5", img.w, img.h, 255);
    f.write(reinterpret_cast<const char*>(img.v.data()),
            static_cast<std::streamsize>(img.v.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

void write_pgm16(const std::string& path, const GrayImage16& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    write_header(f, "P5", img.w, img.h, 65535);
    std::vector<uint8_t> bytes(img.v.size() * 2);
    for (size_t i = 0; i < img.v.size(); ++i) {
        bytes[2 * i] = static_cast<uint8_t>(img.v[i] >> 8);  // MSB first
        bytes[2 * i + 1] = static_cast<uint8_t>(img.v[i] & 0xff);
    }
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

GrayImage8 read_pgm8(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    const PgmHeader hd = read_pgm_header(f, path);
    if (hd.maxval != 255) throw std::runtime_error("expected 8-bit PGM: " + path);
    GrayImage8 img;
    img.w = hd.w;
    img.h = hd.h;
    img.v.resize(static_cast<size_t>(hd.w) * hd.h);
    f.read(reinterpret_cast<char*>(img.v.data()), static_cast<std::streamsize>(img.v.size()));
    if (!f) throw std::runtime_error("pgm: truncated pixel data in " + path);
    return img;
}

GrayImage16 read_pgm16(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    const PgmHeader hd = read_pgm_header(f, path);
    if (hd.maxval != 65535) throw std::runtime_error("expected 16-bit PGM: " + path);
    GrayImage16 img;
    img.w = hd.w;
    img.h = hd.h;
    img.v.resize(static_cast<size_t>(hd.w) * hd.h);
    std::vector<uint8_t> bytes(img.v.size() * 2);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("pgm: truncated pixel data in " + path);
    for (size_t i = 0; i < img.v.size(); ++i)
        img.v[i] = static_cast<uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
    return img;
}

void write_ppm(const std::string& path, const RgbImage8& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    write_header(f, "P6", img.w, img.h, 255);
    for (const auto& px : img.v)
        f.write(reinterpret_cast<const char*>(px.data()), 3);
    if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace ssseg
