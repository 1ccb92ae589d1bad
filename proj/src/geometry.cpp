#include "robustmtl/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "robustmtl/parallel.hpp"

namespace rmtl {

namespace {

using detail::Node;

inline void cross3(const double a[3], const double b[3], double out[3]) {
    out[0] = a[1] * b[2] - a[2] * b[1];
    out[1] = a[2] * b[0] - a[0] * b[2];
    out[2] = a[0] * b[1] - a[1] * b[0];
}

inline void skew(const double w[3], double out[9]) {
    out[0] = 0, out[1] = -w[2], out[2] = w[1];
    out[3] = w[2], out[4] = 0, out[5] = -w[0];
    out[6] = -w[1], out[7] = w[0], out[8] = 0;
}

}  // namespace

Pose Pose::identity() {
    return {Tensor::zeros({3}), Tensor::zeros({3})};
}

Pose Pose::from_values(const std::array<double, 3>& aa, const std::array<double, 3>& t) {
    return {Tensor::from_data({3}, {aa[0], aa[1], aa[2]}),
            Tensor::from_data({3}, {t[0], t[1], t[2]})};
}

Tensor rodrigues(const Tensor& axis_angle) {
    if (axis_angle.ndim() != 1 || axis_angle.dim(0) != 3)
        throw DimensionError("rodrigues: expected a 3-vector");
    const double* w = axis_angle.data().data();
    const double theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    const double theta = std::sqrt(theta2);

    double K[9];
    skew(w, K);
    // R = I + sin(t)/t K + (1-cos(t))/t^2 K^2, series for tiny angles
    double s, c2;  // sin(t)/t and (1-cos(t))/t^2
    if (theta < 1e-8) {
        s = 1.0 - theta2 / 6.0;
        c2 = 0.5 - theta2 / 24.0;
    } else {
        s = std::sin(theta) / theta;
        const double half_sin = std::sin(0.5 * theta);
        c2 = 2.0 * half_sin * half_sin / theta2;
    }
    std::vector<double> R(9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double kk = 0.0;
            for (int l = 0; l < 3; ++l) kk += K[i * 3 + l] * K[l * 3 + j];
            R[static_cast<size_t>(i * 3 + j)] = (i == j ? 1.0 : 0.0) + s * K[i * 3 + j] + c2 * kk;
        }

    // Jacobian dR/dw_i (Gallego & Yezzi): (w_i [w]x + [w x ((I-R)e_i)]x)/t^2 * R,
    // with limit [e_i]x at w = 0.
    std::vector<double> jac(27);  // jac[i][9] = dR/dw_i
    if (theta2 < 1e-16) {
        for (int i = 0; i < 3; ++i) {
            double e[3] = {0, 0, 0};
            e[i] = 1.0;
            skew(e, jac.data() + i * 9);
        }
    } else {
        for (int i = 0; i < 3; ++i) {
            double imr_e[3];  // (I - R) e_i  == column i of (I - R)
            for (int r = 0; r < 3; ++r) imr_e[r] = (r == i ? 1.0 : 0.0) - R[r * 3 + i];
            double wx_imre[3];
            cross3(w, imr_e, wx_imre);
            double M[9], S[9];
            skew(wx_imre, S);
            skew(w, K);
            for (int k = 0; k < 9; ++k) M[k] = (w[i] * K[k] + S[k]) / theta2;
            double* J = jac.data() + i * 9;
            for (int r = 0; r < 3; ++r)
                for (int cjs = 0; cjs < 3; ++cjs) {
                    double acc = 0.0;
                    for (int l = 0; l < 3; ++l) acc += M[r * 3 + l] * R[l * 3 + cjs];
                    J[r * 3 + cjs] = acc;
                }
        }
    }

    return custom_op("rodrigues", {3, 3}, std::move(R), {axis_angle}, [jac](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (int i = 0; i < 3; ++i) {
            double acc = 0.0;
            for (int k = 0; k < 9; ++k) acc += n.grad[static_cast<size_t>(k)] * jac[i * 9 + k];
            p.grad[static_cast<size_t>(i)] += acc;
        }
    });
}

Tensor pose_to_matrix(const Pose& p) {
    if (p.translation.ndim() != 1 || p.translation.dim(0) != 3)
        throw DimensionError("pose_to_matrix: translation must be a 3-vector");
    Tensor rot = rodrigues(p.axis_angle);
    Tensor top = concat({rot, reshape(p.translation, {3, 1})}, 1);  // {3,4}
    Tensor bottom = Tensor::from_data({1, 4}, {0, 0, 0, 1});
    return concat({top, bottom}, 0);
}

Tensor mat4_mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != Shape{4, 4} || b.shape() != Shape{4, 4})
        throw DimensionError("mat4_mul: expected {4,4} inputs");
    std::vector<double> out(16, 0.0);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k)
                acc += a.data()[static_cast<size_t>(i * 4 + k)] * b.data()[static_cast<size_t>(k * 4 + j)];
            out[static_cast<size_t>(i * 4 + j)] = acc;
        }
    return Tensor::from_data({4, 4}, std::move(out));
}

Tensor rigid_inverse(const Tensor& t) {
    if (t.shape() != Shape{4, 4}) throw DimensionError("rigid_inverse: expected {4,4}");
    const auto m = t.data();
    std::vector<double> out(16, 0.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out[static_cast<size_t>(i * 4 + j)] = m[static_cast<size_t>(j * 4 + i)];
    for (int i = 0; i < 3; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 3; ++j) acc += m[static_cast<size_t>(j * 4 + i)] * m[static_cast<size_t>(j * 4 + 3)];
        out[static_cast<size_t>(i * 4 + 3)] = -acc;
    }
    out[15] = 1.0;
    return Tensor::from_data({4, 4}, std::move(out));
}

Pose pose_from_matrix(const Tensor& t) {
    if (t.shape() != Shape{4, 4}) throw DimensionError("pose_from_matrix: expected {4,4}");
    const auto m = t.data();
    const double tr = m[0] + m[5] + m[10];
    const double cos_t = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
    const double theta = std::acos(cos_t);
    double v[3] = {m[9] - m[6], m[2] - m[8], m[4] - m[1]};  // vee(R - R^T)
    double scale;
    if (theta < 1e-7) {
        scale = 0.5;
    } else {
        scale = theta / (2.0 * std::sin(theta));
    }
    return Pose::from_values({v[0] * scale, v[1] * scale, v[2] * scale},
                             {m[3], m[7], m[11]});
}

Tensor identity_grid(int n, int h, int w) {
    std::vector<double> g(static_cast<size_t>(n) * h * w * 2);
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const size_t i = ((static_cast<size_t>(b) * h + y) * w + x) * 2;
                g[i] = x;
                g[i + 1] = y;
            }
    return Tensor::from_data({n, h, w, 2}, std::move(g));
}

namespace {

// mesh of pixel x (or y) coordinates, shape {1,1,h,w}
Tensor coord_mesh(int h, int w, bool xs) {
    std::vector<double> m(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m[static_cast<size_t>(y) * w + x] = xs ? x : y;
    return Tensor::from_data({1, 1, h, w}, std::move(m));
}

Tensor mat_entry(const Tensor& m, int i, int j) {
    return slice(slice(m, 0, i, 1), 1, j, 1);  // {1,1}, stays in the graph
}

}  // namespace

Tensor reproject_grid(const Tensor& depth, const Tensor& transform, const Intrinsics& K,
                      Tensor* valid_mask) {
    if (depth.ndim() != 4 || depth.dim(1) != 1)
        throw DimensionError("reproject_grid: depth must be {N,1,H,W}");
    if (transform.shape() != Shape{4, 4})
        throw DimensionError("reproject_grid: transform must be {4,4}");
    const int N = depth.dim(0), H = depth.dim(2), W = depth.dim(3);

    Tensor U = coord_mesh(H, W, true);
    Tensor V = coord_mesh(H, W, false);

    std::vector<Tensor> grids;
    std::vector<double> mask_all;
    if (valid_mask) mask_all.reserve(static_cast<size_t>(N) * H * W);
    for (int n = 0; n < N; ++n) {
        Tensor d = N == 1 ? depth : slice(depth, 0, n, 1);
        Tensor xc = mul(mul_scalar(add_scalar(U, -K.cx), 1.0 / K.fx), d);
        Tensor yc = mul(mul_scalar(add_scalar(V, -K.cy), 1.0 / K.fy), d);
        const Tensor& zc = d;

        auto row = [&](int i) {
            return add(add(add(mul(xc, mat_entry(transform, i, 0)),
                               mul(yc, mat_entry(transform, i, 1))),
                           mul(zc, mat_entry(transform, i, 2))),
                       mat_entry(transform, i, 3));
        };
        Tensor xp = row(0), yp = row(1), zp = row(2);

        // points behind the camera sample far off-grid (border clamp)
        std::vector<double> mask(static_cast<size_t>(H) * W);
        bool all_valid = true;
        for (size_t i = 0; i < mask.size(); ++i) {
            mask[i] = zp.data()[i] > 0.0 ? 1.0 : 0.0;
            all_valid = all_valid && mask[i] == 1.0;
        }
        if (valid_mask) mask_all.insert(mask_all.end(), mask.begin(), mask.end());

        Tensor zsafe = maximum(zp, Tensor::scalar(1e-6));
        Tensor u = add_scalar(mul_scalar(div(xp, zsafe), K.fx), K.cx);
        Tensor v = add_scalar(mul_scalar(div(yp, zsafe), K.fy), K.cy);
        if (!all_valid) {
            Tensor m = Tensor::from_data({1, 1, H, W}, mask);
            Tensor off = mul_scalar(add_scalar(neg(m), 1.0), -1e4);
            u = add(mul(u, m), off);
            v = add(mul(v, m), off);
        }
        grids.push_back(concat({reshape(u, {1, H, W, 1}), reshape(v, {1, H, W, 1})}, 3));
    }
    if (valid_mask) *valid_mask = Tensor::from_data({N, 1, H, W}, std::move(mask_all));
    return N == 1 ? grids[0] : concat(grids, 0);
}

Tensor reproject_grid(const Tensor& depth, const Pose& pose, const Intrinsics& K,
                      Tensor* valid_mask) {
    return reproject_grid(depth, pose_to_matrix(pose), K, valid_mask);
}

Tensor disparity_to_depth(const Tensor& sigma) {
    return reciprocal(add_scalar(mul_scalar(sigma, kDispA), kDispB));
}

}  // namespace rmtl
