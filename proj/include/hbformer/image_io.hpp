#pragma once

// Binary netpbm I/O. Masks are PGM (P5) with the label id stored directly in
// each byte. RGB images are PPM (P6) headers whose payload is planar: the
// full R plane, then G, then B — not interleaved. Maxval is always 255.

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hbformer/errors.hpp"

namespace hbf {

struct ImageBytes {
    int width = 0;
    int height = 0;
    std::vector<unsigned char> pixels;  // h*w for PGM, 3*h*w planar for PPM
};

namespace detail {

inline void write_pnm(const std::string& path, const std::string& magic, int w, int h,
                      const std::vector<unsigned char>& pixels, size_t expected) {
    if (w <= 0 || h <= 0) throw IoError("invalid image size for " + path);
    if (pixels.size() != expected)
        throw IoError("pixel count " + std::to_string(pixels.size()) + " does not match " +
                      std::to_string(w) + "x" + std::to_string(h) + " for " + path);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write image: " + path);
    f << magic << "\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
    if (!f) throw IoError("failed writing image: " + path);
}

// Reads one header token, skipping whitespace and # comments. Returns what it
// consumed so malformed headers can be echoed back.
inline std::string pnm_token(std::istream& f, std::string& seen) {
    std::string tok;
    int c;
    while ((c = f.get()) != EOF) {
        seen.push_back(static_cast<char>(c));
        if (c == '#') {
            while ((c = f.get()) != EOF && c != '\n') seen.push_back(static_cast<char>(c));
            if (c == '\n') seen.push_back('\n');
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

inline ImageBytes read_pnm(const std::string& path, const std::string& magic, int planes) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read image: " + path);
    std::string seen;
    const std::string m = pnm_token(f, seen);
    auto malformed = [&](const std::string& why) {
        return IoError(why + " in " + path + "; header began \"" + seen + "\"");
    };
    if (m != magic) throw malformed("expected " + magic);
    auto intval = [&](const std::string& what) {
        const std::string tok = pnm_token(f, seen);
        try {
            size_t pos = 0;
            const int v = std::stoi(tok, &pos);
            if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
            return v;
        } catch (const std::exception&) {
            throw malformed("bad " + what + " \"" + tok + "\"");
        }
    };
    ImageBytes img;
    img.width = intval("width");
    img.height = intval("height");
    const int maxval = intval("maxval");
    if (maxval != 255) throw malformed("maxval must be 255, got " + std::to_string(maxval));
    const size_t n = static_cast<size_t>(planes) * img.width * img.height;
    img.pixels.resize(n);
    f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(f.gcount()) != n)
        throw IoError("truncated pixel data in " + path + ": expected " + std::to_string(n) +
                      " bytes, got " + std::to_string(f.gcount()));
    return img;
}

}  // namespace detail

inline void pgm_write(const std::string& path, int w, int h,
                      const std::vector<unsigned char>& pixels) {
    detail::write_pnm(path, "P5", w, h, pixels, static_cast<size_t>(w) * h);
}

inline ImageBytes pgm_read(const std::string& path) { return detail::read_pnm(path, "P5", 1); }

inline void ppm_write_planar(const std::string& path, int w, int h,
                             const std::vector<unsigned char>& pixels) {
    detail::write_pnm(path, "P6", w, h, pixels, 3 * static_cast<size_t>(w) * h);
}

inline ImageBytes ppm_read_planar(const std::string& path) {
    return detail::read_pnm(path, "P6", 3);
}

inline unsigned char float_to_byte(double v) {
    const double r = std::round(v * 255.0);
    return static_cast<unsigned char>(r < 0.0 ? 0.0 : r > 255.0 ? 255.0 : r);
}

inline double byte_to_float(unsigned char b) { return b / 255.0; }

inline void mask_write(const std::string& path, int size, const std::vector<int>& mask) {
    std::vector<unsigned char> bytes(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) bytes[i] = static_cast<unsigned char>(mask[i]);
    pgm_write(path, size, size, bytes);
}

inline std::vector<int> mask_read(const std::string& path, int expected_size) {
    const ImageBytes img = pgm_read(path);
    if (img.width != expected_size || img.height != expected_size)
        throw ShapeError("mask " + path + " is " + std::to_string(img.width) + "x" +
                         std::to_string(img.height) + ", expected " +
                         std::to_string(expected_size) + "x" + std::to_string(expected_size));
    std::vector<int> mask(img.pixels.size());
    for (size_t i = 0; i < mask.size(); ++i) mask[i] = img.pixels[i];
    return mask;
}

inline void image_write(const std::string& path, int size, const std::vector<double>& planes3) {
    std::vector<unsigned char> bytes(planes3.size());
    for (size_t i = 0; i < planes3.size(); ++i) bytes[i] = float_to_byte(planes3[i]);
    ppm_write_planar(path, size, size, bytes);
}

inline std::vector<double> image_read(const std::string& path, int expected_size) {
    const ImageBytes img = ppm_read_planar(path);
    if (img.width != expected_size || img.height != expected_size)
        throw ShapeError("image " + path + " is " + std::to_string(img.width) + "x" +
                         std::to_string(img.height) + ", expected " +
                         std::to_string(expected_size) + "x" + std::to_string(expected_size));
    std::vector<double> v(img.pixels.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = byte_to_float(img.pixels[i]);
    return v;
}

}  // namespace hbf
