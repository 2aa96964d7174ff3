// SPDX-License-Identifier: Apache-2.0
/**
 * Small value types and error categories shared across the toolkit.
 *
 * Units: momenta are normalized (m = c = kT = 1), so the particle energy is
 * p0 = sqrt(1 + |p|^2) and all kernels below are dimensionless.
 */
#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rvmb {

/// Numerical-consistency failure (invalid radicand, non-finite input, ...).
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration (unknown key, out-of-range value, bad rule order).
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// An iterative refinement failed to reach its tolerance.
class convergence_error : public std::runtime_error {
public:
    explicit convergence_error(const std::string& what) : std::runtime_error(what) {}
};

struct vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline vec3 operator+(vec3 a, vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline vec3 operator-(vec3 a, vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline vec3 operator-(vec3 a) { return {-a.x, -a.y, -a.z}; }
inline vec3 operator*(double c, vec3 a) { return {c * a.x, c * a.y, c * a.z}; }
inline vec3 operator*(vec3 a, double c) { return c * a; }
inline vec3 operator/(vec3 a, double c) { return {a.x / c, a.y / c, a.z / c}; }
inline vec3& operator+=(vec3& a, vec3 b) { a = a + b; return a; }
inline vec3& operator-=(vec3& a, vec3 b) { a = a - b; return a; }

inline double dot(vec3 a, vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline vec3 cross(vec3 a, vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm2(vec3 a) { return dot(a, a); }
inline double norm(vec3 a) { return std::sqrt(norm2(a)); }

inline bool finite(vec3 a) {
    return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

/// Two species labels; "plus" and "minus" follow the sign of the charge.
enum class species : int { plus = 0, minus = 1 };

constexpr double pi = 3.14159265358979323846;

} // namespace rvmb
