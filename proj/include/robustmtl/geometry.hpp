#pragma once

#include <array>

#include "robustmtl/tensor.hpp"

namespace rmtl {

inline constexpr double kDepthMin = 0.1;
inline constexpr double kDepthMax = 100.0;
// d = 1 / (a*sigma + b) maps sigmoid output [0,1] onto [kDepthMin, kDepthMax]
inline constexpr double kDispB = 1.0 / kDepthMax;
inline constexpr double kDispA = 1.0 / kDepthMin - kDispB;

// Pinhole intrinsics in pixels.
struct Intrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;

    // Intrinsics of the image downscaled by 2^level.
    Intrinsics scaled(int level) const {
        const double f = 1.0 / static_cast<double>(1 << level);
        return {fx * f, fy * f, cx * f, cy * f};
    }
};

// Rigid transform as axis-angle (radians * unit axis) plus translation.
// Both parts are 3-element tensors so they can sit inside a recorded graph.
struct Pose {
    Tensor axis_angle;
    Tensor translation;

    static Pose identity();
    static Pose from_values(const std::array<double, 3>& aa, const std::array<double, 3>& t);
};

// Rotation matrix {3,3} from axis-angle {3}; differentiable (analytic
// Jacobian, exact limit at zero rotation).
Tensor rodrigues(const Tensor& axis_angle);

// 4x4 rigid transform from a pose; differentiable w.r.t. both parts.
Tensor pose_to_matrix(const Pose& p);

// Plain (non-recorded) 4x4 helpers for tests and the renderer.
Tensor mat4_mul(const Tensor& a, const Tensor& b);
Tensor rigid_inverse(const Tensor& t);
Pose pose_from_matrix(const Tensor& t);

// For every target pixel: backproject with its depth, transform, project.
// depth: {N,1,H,W}, transform: {4,4}, result: {N,H,W,2} continuous source
// pixel coordinates (x, y). Points mapping behind the camera are forced far
// off-grid so they sample the border; if valid_mask is given it receives a
// {N,1,H,W} 0/1 constant tensor marking the good points.
Tensor reproject_grid(const Tensor& depth, const Tensor& transform, const Intrinsics& K,
                      Tensor* valid_mask = nullptr);
Tensor reproject_grid(const Tensor& depth, const Pose& pose, const Intrinsics& K,
                      Tensor* valid_mask = nullptr);

// d = 1/(a*sigma + b); strictly decreasing, range [kDepthMin, kDepthMax].
Tensor disparity_to_depth(const Tensor& sigma);

// The identity sampling grid {N,H,W,2} (constant).
Tensor identity_grid(int n, int h, int w);

}  // namespace rmtl
