#include "robustmtl/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "robustmtl/parallel.hpp"
#include "robustmtl/rng.hpp"
#include "robustmtl/serialize.hpp"

namespace rmtl {

namespace {

constexpr double kGroundY = 1.6;   // world y points down; ground is below the camera
constexpr double kFogStart = 50.0;
constexpr double kFogEnd = 70.0;
constexpr double kFarCut = 78.0;   // ground beyond this becomes sky

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

struct Rot3 {
    double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    Vec3 apply(Vec3 v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Rot3 then(const Rot3& o) const {  // this * o
        Rot3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double acc = 0;
                for (int k = 0; k < 3; ++k) acc += m[i * 3 + k] * o.m[k * 3 + j];
                r.m[i * 3 + j] = acc;
            }
        return r;
    }
};

Rot3 rot_from_axis_angle(Vec3 w) {
    const double theta = norm(w);
    Rot3 r;
    double K[9] = {0, -w.z, w.y, w.z, 0, -w.x, -w.y, w.x, 0};
    double s, c2;
    if (theta < 1e-9) {
        s = 1.0;
        c2 = 0.5;
    } else {
        s = std::sin(theta) / theta;
        const double hs = std::sin(0.5 * theta);
        c2 = 2.0 * hs * hs / (theta * theta);
    }
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double kk = 0;
            for (int l = 0; l < 3; ++l) kk += K[i * 3 + l] * K[l * 3 + j];
            r.m[i * 3 + j] = (i == j ? 1.0 : 0.0) + s * K[i * 3 + j] + c2 * kk;
        }
    return r;
}

struct Color {
    double r = 0, g = 0, b = 0;
};

inline Color lerp(Color a, Color b, double t) {
    return {a.r + t * (b.r - a.r), a.g + t * (b.g - a.g), a.b + t * (b.b - a.b)};
}

struct SceneObject {
    bool is_box = true;
    Vec3 center;
    Vec3 half;      // box half extents
    double radius = 0;  // sphere
    Color base;
    double freq = 0.3;
    Vec3 phase;
};

struct Scene {
    std::vector<SceneObject> objects;
    bool has_ground = true;
    double ground_freq = 0.35;
    Vec3 ground_phase;
    Color sky_horizon{0.62, 0.68, 0.78};
    Color sky_zenith{0.25, 0.38, 0.62};
};

struct CamFrame {
    Rot3 R;  // camera-to-world rotation
    Vec3 p;  // camera position in world
};

Color sky_color(const Scene& sc, Vec3 dir) {
    const double n = norm(dir);
    const double up = std::clamp(-dir.y / n * 1.6, 0.0, 1.0);
    Color c = lerp(sc.sky_horizon, sc.sky_zenith, up);
    const double tint = 0.02 * std::sin(2.0 * dir.x / n) * std::cos(1.5 * dir.z / n);
    return {c.r + tint, c.g + tint, c.b - tint};
}

Color ground_color(const Scene& sc, Vec3 p) {
    const double f = sc.ground_freq;
    const double a = std::sin(f * (p.x + sc.ground_phase.x)) * std::sin(f * (p.z + sc.ground_phase.z));
    const double b = std::sin(2.7 * f * p.x + 1.1) * std::sin(2.3 * f * p.z + 0.4);
    const double t = 0.30 * a + 0.12 * b;
    return {0.42 + t, 0.34 + 0.8 * t, 0.22 + 0.5 * t};
}

Color object_color(const SceneObject& o, Vec3 p) {
    const Vec3 q = p - o.center;
    const double f = o.freq;
    const double t = 0.30 * std::sin(f * (q.x + o.phase.x)) * std::sin(f * (q.y + o.phase.y)) +
                     0.18 * std::sin(0.7 * f * (q.z + o.phase.z));
    return {o.base.r * (1.0 + t), o.base.g * (1.0 + 0.8 * t), o.base.b * (1.0 + 0.6 * t)};
}

// smallest positive ray parameter (camera-depth units: dir has z_cam = 1)
double intersect_box(const SceneObject& o, Vec3 org, Vec3 dir) {
    double t0 = 0.0, t1 = 1e30;
    const double ov[3] = {org.x, org.y, org.z};
    const double dv[3] = {dir.x, dir.y, dir.z};
    const double cv[3] = {o.center.x, o.center.y, o.center.z};
    const double hv[3] = {o.half.x, o.half.y, o.half.z};
    for (int a = 0; a < 3; ++a) {
        if (std::fabs(dv[a]) < 1e-12) {
            if (std::fabs(ov[a] - cv[a]) > hv[a]) return -1.0;
            continue;
        }
        double lo = (cv[a] - hv[a] - ov[a]) / dv[a];
        double hi = (cv[a] + hv[a] - ov[a]) / dv[a];
        if (lo > hi) std::swap(lo, hi);
        t0 = std::max(t0, lo);
        t1 = std::min(t1, hi);
        if (t0 > t1) return -1.0;
    }
    return t0 > 1e-9 ? t0 : -1.0;
}

double intersect_sphere(const SceneObject& o, Vec3 org, Vec3 dir) {
    const Vec3 oc = org - o.center;
    const double a = dot(dir, dir);
    const double b = 2.0 * dot(dir, oc);
    const double c = dot(oc, oc) - o.radius * o.radius;
    const double disc = b * b - 4 * a * c;
    if (disc < 0) return -1.0;
    const double sq = std::sqrt(disc);
    const double t0 = (-b - sq) / (2 * a);
    if (t0 > 1e-9) return t0;
    const double t1 = (-b + sq) / (2 * a);
    return t1 > 1e-9 ? t1 : -1.0;
}

struct Hit {
    double t = kSceneDepthMax;
    std::uint8_t label = kSky;
    Color color;
};

Hit cast_ray(const Scene& sc, Vec3 org, Vec3 dir) {
    double best_t = 1e30;
    int best_obj = -1;
    bool ground = false;

    if (sc.has_ground && dir.y > 1e-9) {
        const double t = (kGroundY - org.y) / dir.y;
        if (t > 1e-9 && t < best_t) {
            best_t = t;
            ground = true;
        }
    }
    for (size_t i = 0; i < sc.objects.size(); ++i) {
        const auto& o = sc.objects[i];
        const double t = o.is_box ? intersect_box(o, org, dir) : intersect_sphere(o, org, dir);
        if (t > 0 && t < best_t) {
            best_t = t;
            best_obj = static_cast<int>(i);
            ground = false;
        }
    }

    Hit h;
    if (best_t > kFarCut) {
        h.t = kSceneDepthMax;
        h.label = kSky;
        h.color = sky_color(sc, dir);
        return h;
    }
    const Vec3 p = org + best_t * dir;
    Color c;
    if (ground) {
        h.label = kGround;
        c = ground_color(sc, p);
    } else {
        const auto& o = sc.objects[static_cast<size_t>(best_obj)];
        h.label = o.is_box ? kBox : kBall;
        c = object_color(o, p);
    }
    const double fog = std::clamp((best_t - kFogStart) / (kFogEnd - kFogStart), 0.0, 1.0);
    h.color = lerp(c, sky_color(sc, dir), fog);
    h.t = best_t;
    return h;
}

Scene build_scene(const SceneSpec& spec, Rng& rng) {
    Scene sc;
    sc.ground_freq = 0.35 * spec.texture_freq;
    sc.ground_phase = {rng.uniform(0, 20), 0, rng.uniform(0, 20)};
    sc.sky_horizon = {rng.uniform(0.55, 0.7), rng.uniform(0.6, 0.72), rng.uniform(0.72, 0.85)};
    sc.sky_zenith = {rng.uniform(0.18, 0.3), rng.uniform(0.3, 0.45), rng.uniform(0.55, 0.7)};

    const int n = rng.uniform_int(spec.min_objects, spec.max_objects);
    const Color palette[4] = {{0.75, 0.3, 0.25}, {0.3, 0.55, 0.75}, {0.75, 0.65, 0.3}, {0.45, 0.7, 0.4}};
    for (int i = 0; i < n; ++i) {
        SceneObject o;
        o.is_box = rng.uniform() < 0.5;
        // first object sits near the view axis so frames rarely miss all objects
        const double zlo = i == 0 ? 8.0 : 6.0, zhi = i == 0 ? 16.0 : 26.0;
        const double xspan = i == 0 ? 2.5 : 7.0;
        for (int attempt = 0; attempt < 40; ++attempt) {
            o.center = {rng.uniform(-xspan, xspan), rng.uniform(kGroundY - 3.2, kGroundY - 0.9),
                        rng.uniform(zlo, zhi)};
            const double size = rng.uniform(0.5, 1.4);
            o.half = {size * rng.uniform(0.7, 1.3), size * rng.uniform(0.7, 1.3),
                      size * rng.uniform(0.7, 1.3)};
            o.radius = size;
            bool clear = o.center.y + std::max({o.half.x, o.half.y, o.half.z, o.radius}) <
                         kGroundY - 0.2;  // keeps a gap below every object
            for (const auto& prev : sc.objects)
                clear = clear && norm(prev.center - o.center) >
                                     o.radius + prev.radius + std::max(o.half.x, o.half.z) +
                                         std::max(prev.half.x, prev.half.z) + 0.6;
            if (clear) break;
        }
        const Color base = palette[rng.uniform_int(0, 3)];
        o.base = {base.r * rng.uniform(0.8, 1.2), base.g * rng.uniform(0.8, 1.2),
                  base.b * rng.uniform(0.8, 1.2)};
        o.freq = rng.uniform(1.2, 2.6) * spec.texture_freq;
        o.phase = {rng.uniform(0, 6), rng.uniform(0, 6), rng.uniform(0, 6)};
        sc.objects.push_back(o);
    }
    return sc;
}

std::vector<CamFrame> build_camera_path(const SceneSpec& spec, const Scene& sc, Rng& rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<CamFrame> path;
        CamFrame cam;
        cam.p = {rng.uniform(-1.0, 1.0), rng.uniform(-0.2, 0.2), rng.uniform(-1.0, 0.5)};
        cam.R = rot_from_axis_angle({rng.uniform(-0.06, 0.06), rng.uniform(-0.12, 0.12), 0});
        path.push_back(cam);
        for (int fidx = 1; fidx < spec.frames; ++fidx) {
            const double ms = spec.motion_scale;
            const Vec3 step_cam{ms * rng.uniform(-0.06, 0.06), ms * rng.uniform(-0.03, 0.03),
                                ms * rng.uniform(0.10, 0.30)};
            const Vec3 daa{ms * rng.uniform(-0.015, 0.015), ms * rng.uniform(-0.02, 0.02),
                           ms * rng.uniform(-0.01, 0.01)};
            CamFrame next;
            next.p = cam.p + cam.R.apply(step_cam);
            next.R = cam.R.then(rot_from_axis_angle(daa));
            path.push_back(next);
            cam = next;
        }
        bool ok = true;
        for (const auto& f : path) {
            ok = ok && f.p.y < kGroundY - 0.5;
            for (const auto& o : sc.objects) {
                const double margin =
                    (o.is_box ? std::max({o.half.x, o.half.y, o.half.z}) : o.radius) + 0.7;
                ok = ok && norm(f.p - o.center) > margin;
            }
        }
        if (ok) return path;
    }
    throw ContractError("degenerate camera path could not be resampled");
}

RenderedFrame render_view(const SceneSpec& spec, const Scene& sc, const CamFrame& cam,
                          const Intrinsics& K) {
    RenderedFrame out;
    const int H = spec.height, W = spec.width;
    out.image.h = H, out.image.w = W, out.image.c = 3;
    out.image.v.resize(static_cast<size_t>(H) * W * 3);
    out.labels.resize(static_cast<size_t>(H) * W);
    out.depth.resize(static_cast<size_t>(H) * W);

    parallel_for(H, [&](std::int64_t y) {
        for (int x = 0; x < W; ++x) {
            const Vec3 dir_cam{(x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0};
            const Hit h = cast_ray(sc, cam.p, cam.R.apply(dir_cam));
            const size_t i = static_cast<size_t>(y) * W + x;
            out.labels[i] = h.label;
            out.depth[i] = static_cast<float>(std::clamp(h.t, kSceneDepthMin, kSceneDepthMax));
            const double rgb[3] = {h.color.r, h.color.g, h.color.b};
            for (int c = 0; c < 3; ++c)
                out.image.v[i * 3 + static_cast<size_t>(c)] = static_cast<std::uint8_t>(
                    std::clamp(std::round(rgb[c] * 255.0), 0.0, 255.0));
        }
    });

    std::vector<double> m(16, 0.0);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) m[static_cast<size_t>(i * 4 + j)] = cam.R.m[i * 3 + j];
    }
    m[3] = cam.p.x, m[7] = cam.p.y, m[11] = cam.p.z, m[15] = 1.0;
    out.cam_to_world = Tensor::from_data({4, 4}, std::move(m));
    return out;
}

Intrinsics default_intrinsics(const SceneSpec& spec) {
    const double fx = 0.866 * spec.width;  // ~60 degree horizontal field of view
    return {fx, fx, (spec.width - 1) / 2.0, (spec.height - 1) / 2.0};
}

}  // namespace

Sequence render_sequence(const SceneSpec& spec) {
    Rng rng(mix_seed(spec.seed, 0x5ce11e));
    Sequence seq;
    seq.intrinsics = default_intrinsics(spec);
    const Scene sc = build_scene(spec, rng);
    const auto path = build_camera_path(spec, sc, rng);
    for (const auto& cam : path) seq.frames.push_back(render_view(spec, sc, cam, seq.intrinsics));
    return seq;
}

Sequence render_wall_pair(double depth, double dz, const SceneSpec& spec) {
    Sequence seq;
    seq.intrinsics = default_intrinsics(spec);
    Scene sc;
    sc.has_ground = false;
    SceneObject wall;
    wall.is_box = true;
    wall.center = {0, 0, depth + 50.0};
    wall.half = {500.0, 500.0, 50.0};  // front face is the plane z = depth
    wall.base = {0.55, 0.45, 0.35};
    wall.freq = 0.8 * spec.texture_freq;
    wall.phase = {1.3, 2.1, 0.0};
    sc.objects.push_back(wall);
    CamFrame a, b;
    b.p = {0, 0, dz};
    seq.frames.push_back(render_view(spec, sc, a, seq.intrinsics));
    seq.frames.push_back(render_view(spec, sc, b, seq.intrinsics));
    return seq;
}

Tensor relative_transform(const RenderedFrame& from, const RenderedFrame& to) {
    return mat4_mul(rigid_inverse(to.cam_to_world), from.cam_to_world);
}

// --- dataset I/O ------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::array<double, 6> pose_to_six(const Tensor& transform) {
    Pose p = pose_from_matrix(transform);
    std::array<double, 6> out{};
    for (int i = 0; i < 3; ++i) {
        out[static_cast<size_t>(i)] = p.axis_angle.data()[static_cast<size_t>(i)];
        out[static_cast<size_t>(i + 3)] = p.translation.data()[static_cast<size_t>(i)];
    }
    return out;
}

}  // namespace

DatasetIndex generate_dataset(const GenOptions& opt, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    DatasetIndex idx;
    idx.root = dir;

    const int n_train = static_cast<int>(std::floor(opt.count * opt.train_frac));
    const int n_val = static_cast<int>(std::floor(opt.count * opt.val_frac));

    for (int t = 0; t < opt.count; ++t) {
        SceneSpec spec = opt.scene;
        spec.seed = mix_seed(opt.seed, static_cast<std::uint64_t>(t));
        spec.frames = 3;
        Sequence seq = render_sequence(spec);

        char sub[32];
        std::snprintf(sub, sizeof(sub), "t%04d", t);
        fs::create_directories(fs::path(dir) / sub);

        const std::string split = t < n_train ? "train" : (t < n_train + n_val ? "val" : "test");
        for (int s = 0; s < 3; ++s) {
            const RenderedFrame& fr = seq.frames[static_cast<size_t>(s)];
            char stem[48];
            std::snprintf(stem, sizeof(stem), "%s/f%d", sub, s);
            FrameRecord rec;
            rec.triplet = t;
            rec.slot = s;
            rec.image = std::string(stem) + ".ppm";
            rec.label = std::string(stem) + ".pgm";
            rec.depth = std::string(stem) + ".dmap";
            rec.K = seq.intrinsics;
            rec.split = split;
            write_ppm(dir + "/" + rec.image, fr.image);
            ImageU8 lab;
            lab.h = fr.image.h, lab.w = fr.image.w, lab.c = 1;
            lab.v = fr.labels;
            write_pgm(dir + "/" + rec.label, lab);
            std::ofstream df(dir + "/" + rec.depth, std::ios::binary);
            if (!df) throw IoError("cannot open for writing: " + rec.depth);
            write_dmap(df, fr.image.h, fr.image.w, fr.depth.data());

            if (s > 0) {
                rec.has_prev = true;
                rec.pose_prev = pose_to_six(relative_transform(seq.frames[static_cast<size_t>(s)],
                                                               seq.frames[static_cast<size_t>(s - 1)]));
            }
            if (s < 2) {
                rec.has_next = true;
                rec.pose_next = pose_to_six(relative_transform(seq.frames[static_cast<size_t>(s)],
                                                               seq.frames[static_cast<size_t>(s + 1)]));
            }
            idx.records.push_back(std::move(rec));
        }
    }

    std::ofstream f(dir + "/index.csv");
    if (!f) throw IoError("cannot open for writing: " + dir + "/index.csv");
    f << "triplet,slot,image,label,depth,fx,fy,cx,cy,split,"
         "pp_ax,pp_ay,pp_az,pp_tx,pp_ty,pp_tz,pn_ax,pn_ay,pn_az,pn_tx,pn_ty,pn_tz\n";
    for (const auto& r : idx.records) {
        f << r.triplet << ',' << r.slot << ',' << r.image << ',' << r.label << ',' << r.depth
          << ',' << fmt_double(r.K.fx) << ',' << fmt_double(r.K.fy) << ',' << fmt_double(r.K.cx)
          << ',' << fmt_double(r.K.cy) << ',' << r.split;
        for (int i = 0; i < 6; ++i) f << ',' << (r.has_prev ? fmt_double(r.pose_prev[static_cast<size_t>(i)]) : "");
        for (int i = 0; i < 6; ++i) f << ',' << (r.has_next ? fmt_double(r.pose_next[static_cast<size_t>(i)]) : "");
        f << '\n';
    }
    if (!f) throw IoError("write failed: " + dir + "/index.csv");
    return idx;
}

DatasetIndex load_dataset(const std::string& dir) {
    std::ifstream f(dir + "/index.csv");
    if (!f) throw IoError("cannot open: " + dir + "/index.csv");
    DatasetIndex idx;
    idx.root = dir;
    std::string line;
    if (!std::getline(f, line)) throw IoError("empty index: " + dir + "/index.csv");
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cols.push_back(cell);
        while (cols.size() < 22) cols.push_back("");
        if (cols.size() != 22)
            throw IoError("bad column count in " + dir + "/index.csv line " + std::to_string(lineno));
        FrameRecord r;
        r.triplet = std::stoi(cols[0]);
        r.slot = std::stoi(cols[1]);
        r.image = cols[2];
        r.label = cols[3];
        r.depth = cols[4];
        r.K = {std::stod(cols[5]), std::stod(cols[6]), std::stod(cols[7]), std::stod(cols[8])};
        r.split = cols[9];
        r.has_prev = !cols[10].empty();
        r.has_next = !cols[16].empty();
        for (int i = 0; i < 6; ++i) {
            if (r.has_prev) r.pose_prev[static_cast<size_t>(i)] = std::stod(cols[static_cast<size_t>(10 + i)]);
            if (r.has_next) r.pose_next[static_cast<size_t>(i)] = std::stod(cols[static_cast<size_t>(16 + i)]);
        }
        idx.records.push_back(std::move(r));
    }
    return idx;
}

std::vector<int> DatasetIndex::triplets(const std::string& split) const {
    std::vector<int> out;
    for (const auto& r : records)
        if (r.slot == 1 && r.split == split) out.push_back(r.triplet);
    return out;
}

const FrameRecord& DatasetIndex::frame(int triplet, int slot) const {
    const size_t i = static_cast<size_t>(triplet) * 3 + static_cast<size_t>(slot);
    if (i >= records.size() || records[i].triplet != triplet || records[i].slot != slot)
        throw ContractError("dataset index is not triplet-major");
    return records[i];
}

Tensor load_image_tensor(const DatasetIndex& idx, const FrameRecord& rec) {
    return image_to_tensor(read_ppm(idx.root + "/" + rec.image));
}

std::vector<std::uint8_t> load_label_map(const DatasetIndex& idx, const FrameRecord& rec) {
    return read_pgm(idx.root + "/" + rec.label).v;
}

Tensor load_depth_tensor(const DatasetIndex& idx, const FrameRecord& rec) {
    std::ifstream f(idx.root + "/" + rec.depth, std::ios::binary);
    if (!f) throw IoError("cannot open: " + idx.root + "/" + rec.depth);
    int h = 0, w = 0;
    std::vector<float> data;
    read_dmap(f, h, w, data, rec.depth);
    std::vector<double> d(data.begin(), data.end());
    return Tensor::from_data({1, 1, h, w}, std::move(d));
}

}  // namespace rmtl
