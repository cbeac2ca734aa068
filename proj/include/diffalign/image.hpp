#pragma once

#include "diffalign/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace diffalign {

/// Row-major raster of real samples in [0,1]; 1 or 3 channels,
/// interleaved as data[(y*width + x)*channels + c].
struct ImageBuffer {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, int c, double fill = 0.0);

    double& at(int x, int y, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

/// Dense per-cell pixel offsets (u = x offset, v = y offset).
struct DisplacementField {
    int width = 0;
    int height = 0;
    std::vector<double> u, v;

    DisplacementField() = default;
    DisplacementField(int w, int h);

    std::size_t size() const { return static_cast<std::size_t>(width) * height; }
    double u_at(int x, int y) const { return u[static_cast<std::size_t>(y) * width + x]; }
    double v_at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }

    Tensor to_tensor() const;                       // (2, H, W)
    static DisplacementField from_tensor(const Tensor& t);
    bool is_zero() const;
};

/// True where a warped sample fell inside the source bounds.
struct ValidityMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> valid;

    ValidityMask() = default;
    ValidityMask(int w, int h, std::uint8_t fill = 0);

    bool at(int x, int y) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool b) { valid[static_cast<std::size_t>(y) * width + x] = b ? 1 : 0; }
    std::size_t count() const;
};

ImageBuffer to_gray(const ImageBuffer& img);

/// General bilinear resize, corner-aligned sample positions.
ImageBuffer resize_bilinear(const ImageBuffer& img, int out_w, int out_h);

/// Integer-factor box downsample (block average). in % out must be 0.
ImageBuffer downsample_box(const ImageBuffer& img, int out_w, int out_h);

/// Bilinear (corner-aligned) upsample of a coarse field to a target size.
DisplacementField upsample_field(const DisplacementField& f, int out_w, int out_h);

// --- PNM I/O: binary PGM (P5) for 1 channel, binary PPM (P6) for 3. ---
void save_pnm(const std::string& path, const ImageBuffer& img);
ImageBuffer load_pnm(const std::string& path);

void save_mask_pgm(const std::string& path, const ValidityMask& m);
ValidityMask load_mask_pgm(const std::string& path);

} // namespace diffalign
