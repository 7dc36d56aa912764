#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace meshtok {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

// Input that violates an operation's preconditions.
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument("meshtok: " + msg);
}

// Failure while executing an otherwise valid request (I/O, divergence, ...).
inline void ensure(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error("meshtok: " + msg);
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace meshtok
