#include "diffalign/image.hpp"

#include "diffalign/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace diffalign {

ImageBuffer::ImageBuffer(int w, int h, int c, double fill)
    : width(w), height(h), channels(c),
      data(static_cast<std::size_t>(w) * h * c, fill) {
    if (w <= 0 || h <= 0 || (c != 1 && c != 3))
        throw InvalidParameter("ImageBuffer: bad dimensions");
}

DisplacementField::DisplacementField(int w, int h)
    : width(w), height(h),
      u(static_cast<std::size_t>(w) * h, 0.0),
      v(static_cast<std::size_t>(w) * h, 0.0) {
    if (w <= 0 || h <= 0)
        throw InvalidParameter("DisplacementField: bad dimensions");
}

Tensor DisplacementField::to_tensor() const {
    Tensor t({2, height, width});
    std::copy(u.begin(), u.end(), t.data.begin());
    std::copy(v.begin(), v.end(), t.data.begin() + static_cast<std::ptrdiff_t>(size()));
    return t;
}

DisplacementField DisplacementField::from_tensor(const Tensor& t) {
    if (t.dims.size() != 3 || t.dims[0] != 2)
        throw ShapeMismatch("DisplacementField::from_tensor: expected (2,H,W)");
    DisplacementField f(t.dims[2], t.dims[1]);
    std::copy(t.data.begin(), t.data.begin() + static_cast<std::ptrdiff_t>(f.size()), f.u.begin());
    std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(f.size()), t.data.end(), f.v.begin());
    return f;
}

bool DisplacementField::is_zero() const {
    for (double x : u) if (x != 0.0) return false;
    for (double x : v) if (x != 0.0) return false;
    return true;
}

ValidityMask::ValidityMask(int w, int h, std::uint8_t fill)
    : width(w), height(h), valid(static_cast<std::size_t>(w) * h, fill) {}

std::size_t ValidityMask::count() const {
    std::size_t n = 0;
    for (std::uint8_t b : valid) n += (b != 0);
    return n;
}

ImageBuffer to_gray(const ImageBuffer& img) {
    if (img.channels == 1) return img;
    ImageBuffer g(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            g.at(x, y) = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1)
                       + 0.114 * img.at(x, y, 2);
    return g;
}

ImageBuffer resize_bilinear(const ImageBuffer& img, int out_w, int out_h) {
    if (out_w <= 0 || out_h <= 0)
        throw InvalidParameter("resize_bilinear: bad output size");
    ImageBuffer out(out_w, out_h, img.channels);
    const double sx = (out_w > 1) ? static_cast<double>(img.width - 1) / (out_w - 1) : 0.0;
    const double sy = (out_h > 1) ? static_cast<double>(img.height - 1) / (out_h - 1) : 0.0;
    for (int y = 0; y < out_h; ++y) {
        const double fy = y * sy;
        const int y0 = std::min(static_cast<int>(fy), img.height - 1);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = x * sx;
            const int x0 = std::min(static_cast<int>(fx), img.width - 1);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < img.channels; ++c) {
                const double a = img.at(x0, y0, c), b = img.at(x1, y0, c);
                const double d = img.at(x0, y1, c), e = img.at(x1, y1, c);
                out.at(x, y, c) = (1 - wy) * ((1 - wx) * a + wx * b)
                                + wy * ((1 - wx) * d + wx * e);
            }
        }
    }
    return out;
}

ImageBuffer downsample_box(const ImageBuffer& img, int out_w, int out_h) {
    if (out_w <= 0 || out_h <= 0 || img.width % out_w != 0 || img.height % out_h != 0)
        throw InvalidParameter("downsample_box: size not an integer factor");
    const int bx = img.width / out_w;
    const int by = img.height / out_h;
    ImageBuffer out(out_w, out_h, img.channels);
    const double inv = 1.0 / (bx * by);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (int j = 0; j < by; ++j)
                    for (int i = 0; i < bx; ++i)
                        acc += img.at(x * bx + i, y * by + j, c);
                out.at(x, y, c) = acc * inv;
            }
    return out;
}

DisplacementField upsample_field(const DisplacementField& f, int out_w, int out_h) {
    if (f.width == out_w && f.height == out_h) return f;
    DisplacementField out(out_w, out_h);
    const double sx = (out_w > 1) ? static_cast<double>(f.width - 1) / (out_w - 1) : 0.0;
    const double sy = (out_h > 1) ? static_cast<double>(f.height - 1) / (out_h - 1) : 0.0;
    for (int y = 0; y < out_h; ++y) {
        const double fy = y * sy;
        const int y0 = std::min(static_cast<int>(fy), f.height - 1);
        const int y1 = std::min(y0 + 1, f.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = x * sx;
            const int x0 = std::min(static_cast<int>(fx), f.width - 1);
            const int x1 = std::min(x0 + 1, f.width - 1);
            const double wx = fx - x0;
            const std::size_t i = static_cast<std::size_t>(y) * out_w + x;
            out.u[i] = (1 - wy) * ((1 - wx) * f.u_at(x0, y0) + wx * f.u_at(x1, y0))
                     + wy * ((1 - wx) * f.u_at(x0, y1) + wx * f.u_at(x1, y1));
            out.v[i] = (1 - wy) * ((1 - wx) * f.v_at(x0, y0) + wx * f.v_at(x1, y0))
                     + wy * ((1 - wx) * f.v_at(x0, y1) + wx * f.v_at(x1, y1));
        }
    }
    return out;
}

namespace {

int read_pnm_token(std::istream& is) {
    // skips whitespace and '#' comments
    while (true) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            break;
        }
    }
    int value = 0;
    is >> value;
    return value;
}

std::uint8_t to_byte(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

} // namespace

void save_pnm(const std::string& path, const ImageBuffer& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IOError("save_pnm: cannot open " + path);
    f << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                row[static_cast<std::size_t>(x) * img.channels + c] = to_byte(img.at(x, y, c));
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IOError("save_pnm: write failed for " + path);
}

ImageBuffer load_pnm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IOError("load_pnm: cannot open " + path);
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    if (m0 != 'P' || (m1 != '5' && m1 != '6'))
        throw IOError("load_pnm: unsupported format in " + path);
    const int channels = (m1 == '5') ? 1 : 3;
    const int w = read_pnm_token(f);
    const int h = read_pnm_token(f);
    const int maxval = read_pnm_token(f);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw IOError("load_pnm: bad header in " + path);
    f.get(); // single whitespace after maxval
    ImageBuffer img(w, h, channels);
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * channels);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw IOError("load_pnm: truncated data in " + path);
    for (std::size_t i = 0; i < raw.size(); ++i)
        img.data[i] = raw[i] / 255.0;
    return img;
}

void save_mask_pgm(const std::string& path, const ValidityMask& m) {
    ImageBuffer img(m.width, m.height, 1);
    for (std::size_t i = 0; i < m.valid.size(); ++i)
        img.data[i] = m.valid[i] ? 1.0 : 0.0;
    save_pnm(path, img);
}

ValidityMask load_mask_pgm(const std::string& path) {
    const ImageBuffer img = load_pnm(path);
    ValidityMask m(img.width, img.height);
    for (std::size_t i = 0; i < m.valid.size(); ++i)
        m.valid[i] = img.data[i] > 0.5 ? 1 : 0;
    return m;
}

} // namespace diffalign
