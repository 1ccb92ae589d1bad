#include "robustmtl/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace rmtl {

namespace {

void write_pnm(const std::string& path, const ImageU8& img, const char* magic, int channels) {
    if (img.c != channels) throw IoError(std::string("image has wrong channel count for ") + magic);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << magic << "\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.v.data()), static_cast<std::streamsize>(img.v.size()));
    if (!f) throw IoError("write failed: " + path);
}

ImageU8 read_pnm(const std::string& path, const char* magic, int channels) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string m;
    f >> m;
    if (m != magic) throw IoError("expected " + std::string(magic) + " in " + path + ", got '" + m + "'");
    // skip whitespace/comments between header tokens
    auto next_int = [&]() {
        int v = -1;
        while (f) {
            f >> std::ws;
            if (f.peek() == '#') {
                std::string comment;
                std::getline(f, comment);
                continue;
            }
            f >> v;
            break;
        }
        if (!f || v < 0) throw IoError("malformed header in " + path);
        return v;
    };
    ImageU8 img;
    img.w = next_int();
    img.h = next_int();
    const int maxval = next_int();
    if (maxval != 255) throw IoError("unsupported maxval in " + path);
    f.get();  // single whitespace byte after maxval
    img.c = channels;
    img.v.resize(static_cast<size_t>(img.h) * img.w * channels);
    f.read(reinterpret_cast<char*>(img.v.data()), static_cast<std::streamsize>(img.v.size()));
    if (!f) throw IoError("truncated pixel data in " + path);
    return img;
}

}  // namespace

void write_ppm(const std::string& path, const ImageU8& img) { write_pnm(path, img, "P6", 3); }
ImageU8 read_ppm(const std::string& path) { return read_pnm(path, "P6", 3); }
void write_pgm(const std::string& path, const ImageU8& img) { write_pnm(path, img, "P5", 1); }
ImageU8 read_pgm(const std::string& path) { return read_pnm(path, "P5", 1); }

Tensor image_to_tensor(const ImageU8& img) {
    std::vector<double> d(static_cast<size_t>(img.c) * img.h * img.w);
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                d[(static_cast<size_t>(ch) * img.h + y) * img.w + x] = img.at(y, x, ch);
    return Tensor::from_data({1, img.c, img.h, img.w}, std::move(d));
}

ImageU8 tensor_to_image(const Tensor& t) {
    if (t.ndim() != 4 || t.dim(0) != 1) throw DimensionError("tensor_to_image: expected {1,C,H,W}");
    ImageU8 img;
    img.c = t.dim(1), img.h = t.dim(2), img.w = t.dim(3);
    img.v.resize(static_cast<size_t>(img.c) * img.h * img.w);
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                const double v = std::round(t.at({0, ch, y, x}));
                img.at(y, x, ch) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
            }
    return img;
}

}  // namespace rmtl
