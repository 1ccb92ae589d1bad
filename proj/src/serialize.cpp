#include "robustmtl/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace rmtl {

namespace {

void put_f32_le(std::ostream& out, float v) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                       static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
    out.write(b, 4);
}

float get_f32_le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                            (static_cast<std::uint32_t>(b[1]) << 8) |
                            (static_cast<std::uint32_t>(b[2]) << 16) |
                            (static_cast<std::uint32_t>(b[3]) << 24);
    return std::bit_cast<float>(u);
}

[[noreturn]] void parse_fail(const std::string& what, const std::string& context,
                             std::streampos pos) {
    throw IoError(what + (context.empty() ? "" : " in " + context) + " at offset " +
                  std::to_string(static_cast<long long>(pos)));
}

}  // namespace

void write_tnsr(std::ostream& out, const Tensor& t) {
    out << "TNSR " << t.ndim();
    for (int i = 0; i < t.ndim(); ++i) out << ' ' << t.dim(i);
    out << '\n';
    for (double v : t.data()) put_f32_le(out, static_cast<float>(v));
}

Tensor read_tnsr(std::istream& in, const std::string& context) {
    const std::streampos start = in.tellg();
    std::string line;
    if (!std::getline(in, line)) parse_fail("unexpected end of stream", context, start);
    std::istringstream hdr(line);
    std::string magic;
    int ndim = -1;
    hdr >> magic >> ndim;
    if (magic != "TNSR" || ndim < 0 || hdr.fail())
        parse_fail("malformed TNSR header '" + line + "'", context, start);
    Shape shape(static_cast<size_t>(ndim));
    for (int i = 0; i < ndim; ++i) {
        hdr >> shape[static_cast<size_t>(i)];
        if (hdr.fail() || shape[static_cast<size_t>(i)] <= 0)
            parse_fail("malformed TNSR dims '" + line + "'", context, start);
    }
    const std::int64_t n = numel_of(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) data[static_cast<size_t>(i)] = get_f32_le(in);
    if (!in) parse_fail("truncated TNSR payload", context, start);
    return Tensor::from_data(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    write_tnsr(f, t);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    return read_tnsr(f, path);
}

void write_dmap(std::ostream& out, int h, int w, const float* data) {
    out << "DMAP " << h << ' ' << w << '\n';
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) put_f32_le(out, data[i]);
}

void read_dmap(std::istream& in, int& h, int& w, std::vector<float>& data,
               const std::string& context) {
    const std::streampos start = in.tellg();
    std::string line;
    if (!std::getline(in, line)) parse_fail("unexpected end of stream", context, start);
    std::istringstream hdr(line);
    std::string magic;
    hdr >> magic >> h >> w;
    if (magic != "DMAP" || hdr.fail() || h <= 0 || w <= 0)
        parse_fail("malformed DMAP header '" + line + "'", context, start);
    data.resize(static_cast<size_t>(h) * w);
    for (auto& v : data) v = get_f32_le(in);
    if (!in) parse_fail("truncated DMAP payload", context, start);
}

std::uint64_t hash_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (f) {
        f.read(buf, sizeof(buf));
        const std::streamsize got = f.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace rmtl
