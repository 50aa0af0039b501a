#pragma once

#include <string>
#include <vector>

#include "fgs/fgt.hpp"

namespace fgs {

/// Planar CHW image with values nominally in [0,1]. Channels is 1 (masks) or
/// 3 (color).
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;  // CHW

    Image() = default;
    Image(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w),
          data(static_cast<std::size_t>(c) * h * w, fill) {}

    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    std::size_t size() const { return data.size(); }
};

/// 8-bit PNG I/O (RGB for 3 channels, grayscale for 1). Values are clamped to
/// [0,1] and rounded on write; reads return values in [0,1].
void save_png(const std::string& path, const Image& img);
Image load_png(const std::string& path);

FgtTensor image_to_fgt(const Image& img, diff::Dtype dtype = diff::Dtype::F32);
Image image_from_fgt(const FgtTensor& t);

/// Binary dilation with a square structuring element of the given radius.
/// Input values are thresholded at 0.5.
Image dilate(const Image& mask, int radius);

/// Bounding box of mask pixels > 0.5; valid() is false for an empty mask.
struct BBox {
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive
    bool valid() const { return x1 >= x0 && y1 >= y0; }
    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
};
BBox mask_bbox(const Image& mask);

/// Centroid of mask pixels > 0.5 as (x, y); returns false for an empty mask.
bool mask_centroid(const Image& mask, double& cx, double& cy);

}  // namespace fgs
