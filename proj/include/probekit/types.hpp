#pragma once

#include <Eigen/Dense>

namespace probekit {

using Vec3 = Eigen::Vector3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
// Point sets and index sets as rows; `P.row(i)` is one point / one triangle.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Triangles = Eigen::Matrix<int, Eigen::Dynamic, 3>;

} // namespace probekit
