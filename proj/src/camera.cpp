#include "fgs/camera.hpp"

namespace fgs {

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw DataError(cat("camera: focal lengths must be positive, got fx=", fx, " fy=", fy));
    if (width <= 0 || height <= 0) throw DataError(cat("camera: bad image size ", width, "x", height));
    const Eigen::Matrix3d r = rotation();
    if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
        throw DataError("camera: rotation block is not orthonormal within 1e-6");
    const Eigen::RowVector4d last = world_to_camera.row(3);
    if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9)
        throw DataError("camera: world_to_camera last row must be (0,0,0,1)");
}

}  // namespace fgs
