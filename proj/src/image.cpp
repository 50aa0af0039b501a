#include "fgs/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace fgs {

namespace {

struct FileCloser {
    std::FILE* f = nullptr;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

}  // namespace

void save_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DataError(cat("save_png: unsupported channel count ", img.channels));
    FileCloser fc{std::fopen(path.c_str(), "wb")};
    if (!fc.f) throw DataError(cat("save_png: cannot open '", path, "'"));

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("save_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError(cat("save_png: write failed for '", path, "'"));
    }
    png_init_io(png, fc.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 8, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                const double v = std::min(1.0, std::max(0.0, img.at(c, y, x)));
                row[static_cast<std::size_t>(x) * img.channels + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image load_png(const std::string& path) {
    FileCloser fc{std::fopen(path.c_str(), "rb")};
    if (!fc.f) throw DataError(cat("load_png: cannot open '", path, "'"));

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("load_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(cat("load_png: read failed for '", path, "'"));
    }
    png_init_io(png, fc.f);
    png_read_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const png_byte color_type = png_get_color_type(png, info);
    const png_byte bit_depth = png_get_bit_depth(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int channels = static_cast<int>(png_get_channels(png, info));
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(cat("load_png: unsupported channel count ", channels, " in '", path, "'"));
    }

    Image img(channels, height, width);
    std::vector<unsigned char> row(static_cast<std::size_t>(width) * channels);
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(c, y, x) = row[static_cast<std::size_t>(x) * channels + c] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

FgtTensor image_to_fgt(const Image& img, diff::Dtype dtype) {
    FgtTensor t;
    t.shape = {img.channels, img.height, img.width};
    t.dtype = dtype;
    t.data = img.data;
    if (dtype == diff::Dtype::F32) diff::round_f32(t.data);
    return t;
}

Image image_from_fgt(const FgtTensor& t) {
    if (t.shape.size() != 3)
        throw DataError(cat("image_from_fgt: expected CHW tensor, got ", diff::shape_str(t.shape)));
    Image img(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), static_cast<int>(t.shape[2]));
    img.data = t.data;
    return img;
}

Image dilate(const Image& mask, int radius) {
    if (mask.channels != 1) throw DataError("dilate: mask must be single-channel");
    Image out(1, mask.height, mask.width, 0.0);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(0, y, x) <= 0.5) continue;
            const int y0 = std::max(0, y - radius), y1 = std::min(mask.height - 1, y + radius);
            const int x0 = std::max(0, x - radius), x1 = std::min(mask.width - 1, x + radius);
            for (int yy = y0; yy <= y1; ++yy)
                for (int xx = x0; xx <= x1; ++xx) out.at(0, yy, xx) = 1.0;
        }
    return out;
}

BBox mask_bbox(const Image& mask) {
    BBox box;
    box.x0 = mask.width;
    box.y0 = mask.height;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(0, y, x) > 0.5) {
                box.x0 = std::min(box.x0, x);
                box.y0 = std::min(box.y0, y);
                box.x1 = std::max(box.x1, x);
                box.y1 = std::max(box.y1, y);
            }
    return box;
}

bool mask_centroid(const Image& mask, double& cx, double& cy) {
    double sx = 0.0, sy = 0.0;
    std::int64_t n = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(0, y, x) > 0.5) {
                sx += x;
                sy += y;
                ++n;
            }
    if (n == 0) return false;
    cx = sx / static_cast<double>(n);
    cy = sy / static_cast<double>(n);
    return true;
}

}  // namespace fgs
