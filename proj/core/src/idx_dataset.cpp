#include "rfa/idx_dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>

namespace rfa {

static constexpr uint32_t kImageMagic = 0x00000803;
static constexpr uint32_t kLabelMagic = 0x00000801;

static uint32_t read_be_u32(std::istream& is, const std::string& path, int64_t offset) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    check(static_cast<bool>(is), path + ": truncated while reading 4 bytes at offset " +
                                     std::to_string(offset));
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

static void write_be_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<char*>(b), 4);
}

static std::string hex(uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", v);
    return buf;
}

IdxDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    check(img.is_open(), "cannot open " + images_path);
    const uint32_t img_magic = read_be_u32(img, images_path, 0);
    check(img_magic == kImageMagic, images_path + ": bad magic " + hex(img_magic) + " at offset 0, expected " +
                                        hex(kImageMagic));
    const int64_t n = read_be_u32(img, images_path, 4);
    const int64_t h = read_be_u32(img, images_path, 8);
    const int64_t w = read_be_u32(img, images_path, 12);
    check(n >= 1 && h >= 1 && w >= 1, images_path + ": empty image set");

    IdxDataset set;
    set.images = zeros({n, 1, h, w});
    std::vector<unsigned char> row(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        check(static_cast<bool>(img), images_path + ": truncated at image " + std::to_string(i) +
                                          " (offset " + std::to_string(16 + i * h * w) + ")");
        for (int64_t p = 0; p < h * w; ++p)
            set.images.data[static_cast<size_t>(i * h * w + p)] =
                static_cast<double>(row[static_cast<size_t>(p)]) / 255.0;
    }

    std::ifstream lab(labels_path, std::ios::binary);
    check(lab.is_open(), "cannot open " + labels_path);
    const uint32_t lab_magic = read_be_u32(lab, labels_path, 0);
    check(lab_magic == kLabelMagic, labels_path + ": bad magic " + hex(lab_magic) + " at offset 0, expected " +
                                        hex(kLabelMagic));
    const int64_t ln = read_be_u32(lab, labels_path, 4);
    check(ln == n, "image count " + std::to_string(n) + " does not match label count " + std::to_string(ln));
    set.labels.resize(static_cast<size_t>(ln));
    for (int64_t i = 0; i < ln; ++i) {
        unsigned char b;
        lab.read(reinterpret_cast<char*>(&b), 1);
        check(static_cast<bool>(lab), labels_path + ": truncated at label " + std::to_string(i));
        set.labels[static_cast<size_t>(i)] = b;
    }
    return set;
}

void save_idx(const IdxDataset& set, const std::string& images_path, const std::string& labels_path) {
    check(set.images.rank() == 4 && set.images.c() == 1,
          "save_idx expects (N,1,H,W) images, got " + shape_str(set.images.shape));
    check(set.images.n() == set.size(), "image/label count mismatch");

    std::ofstream img(images_path, std::ios::binary);
    check(img.is_open(), "cannot open " + images_path + " for writing");
    write_be_u32(img, kImageMagic);
    write_be_u32(img, static_cast<uint32_t>(set.images.n()));
    write_be_u32(img, static_cast<uint32_t>(set.images.h()));
    write_be_u32(img, static_cast<uint32_t>(set.images.w()));
    for (double v : set.images.data) {
        const double clamped = std::clamp(v, 0.0, 1.0);
        const unsigned char b = static_cast<unsigned char>(std::lround(clamped * 255.0));
        img.write(reinterpret_cast<const char*>(&b), 1);
    }

    std::ofstream lab(labels_path, std::ios::binary);
    check(lab.is_open(), "cannot open " + labels_path + " for writing");
    write_be_u32(lab, kLabelMagic);
    write_be_u32(lab, static_cast<uint32_t>(set.size()));
    for (int64_t l : set.labels) {
        const unsigned char b = static_cast<unsigned char>(l);
        lab.write(reinterpret_cast<const char*>(&b), 1);
    }
}

SyntheticBars make_oriented_bars(int64_t count, int64_t hw, uint64_t seed) {
    check(count >= 1 && hw >= 8, "oriented-bar set needs count >= 1 and extent >= 8");
    SeededRng rng(seed);
    SyntheticBars out;
    out.data.images = zeros({count, 1, hw, hw});
    out.data.labels.resize(static_cast<size_t>(count));
    out.bar_masks = zeros({count, 1, hw, hw});

    for (int64_t i = 0; i < count; ++i) {
        const int64_t label = rng.uniform_int(2); // 0 horizontal, 1 vertical
        const int64_t thickness = 2 + rng.uniform_int(2);
        const int64_t offset = rng.uniform_int(hw - thickness + 1);
        const double intensity = 0.7 + 0.25 * rng.uniform();
        out.data.labels[static_cast<size_t>(i)] = label;

        for (int64_t h = 0; h < hw; ++h)
            for (int64_t w = 0; w < hw; ++w) {
                const bool on_bar = (label == 0) ? (h >= offset && h < offset + thickness)
                                                 : (w >= offset && w < offset + thickness);
                double v = 0.12 * rng.uniform();
                if (on_bar) {
                    v = intensity + 0.05 * rng.uniform();
                    out.bar_masks.at(i, 0, h, w) = 1.0;
                }
                // quantize to the byte grid so IDX round trips are exact
                const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
                out.data.images.at(i, 0, h, w) = q;
            }
    }
    return out;
}

} // namespace rfa
