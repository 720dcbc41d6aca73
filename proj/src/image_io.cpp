#include "egodiff/image_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace egodiff {

namespace {

void put_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(static_cast<uint8_t>(x >> 24));
    v.push_back(static_cast<uint8_t>(x >> 16));
    v.push_back(static_cast<uint8_t>(x >> 8));
    v.push_back(static_cast<uint8_t>(x));
}

void write_chunk(std::ofstream& f, const char type[4], const std::vector<uint8_t>& data) {
    std::vector<uint8_t> head;
    put_u32(head, static_cast<uint32_t>(data.size()));
    f.write(reinterpret_cast<const char*>(head.data()), 4);
    std::vector<uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    f.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, body.data(), static_cast<uInt>(body.size())));
    std::vector<uint8_t> tail;
    put_u32(tail, crc);
    f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

uint8_t quantize(double v) {
    v = std::min(1.0, std::max(0.0, v));
    return static_cast<uint8_t>(v * 255.0 + 0.5);
}

}  // namespace

void write_png(const Image& im, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    f.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(im.w));
    put_u32(ihdr, static_cast<uint32_t>(im.h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(f, "IHDR", ihdr);

    // filter byte 0 per scanline
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(im.h * (1 + im.w * 3)));
    for (long y = 0; y < im.h; ++y) {
        raw.push_back(0);
        for (long x = 0; x < im.w; ++x) {
            for (int c = 0; c < 3; ++c) raw.push_back(quantize(im.at(y, x, c)));
        }
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(bound);
    if (compress2(comp.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw std::runtime_error("png: deflate failed");
    }
    comp.resize(bound);
    write_chunk(f, "IDAT", comp);
    write_chunk(f, "IEND", {});
}

void write_png_strip(const std::vector<Image>& frames, const std::string& path, long every) {
    if (frames.empty()) throw std::invalid_argument("write_png_strip: no frames");
    if (every < 1) every = 1;
    std::vector<const Image*> pick;
    for (size_t i = 0; i < frames.size(); i += static_cast<size_t>(every)) pick.push_back(&frames[i]);
    const long h = pick.front()->h, w = pick.front()->w;
    Image strip = Image::zeros(h, w * static_cast<long>(pick.size()));
    for (size_t k = 0; k < pick.size(); ++k) {
        for (long y = 0; y < h; ++y) {
            for (long x = 0; x < w; ++x) {
                for (int c = 0; c < 3; ++c) {
                    strip.at(y, static_cast<long>(k) * w + x, c) = pick[k]->at(y, x, c);
                }
            }
        }
    }
    write_png(strip, path);
}

}  // namespace egodiff
