#pragma once

#include <Eigen/Dense>

#include "fgs/common.hpp"

namespace fgs {

/// Pinhole camera. world_to_camera maps world points into a frame whose +z
/// axis looks into the scene; pixel (x, y) samples are taken at integer
/// coordinates with u = fx * X/Z + cx, v = fy * Y/Z + cy.
struct Camera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();

    Eigen::Matrix3d rotation() const { return world_to_camera.block<3, 3>(0, 0); }
    Eigen::Vector3d translation() const { return world_to_camera.block<3, 1>(0, 3); }
    /// Camera center in world coordinates.
    Eigen::Vector3d position() const { return -rotation().transpose() * translation(); }

    void validate() const;
};

}  // namespace fgs
