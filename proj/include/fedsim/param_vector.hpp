#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

/// Flat vector of model parameters; the unit exchanged between agents and the
/// coordinator. All arithmetic is in double precision.
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
    explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}

    std::size_t dim() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    bool operator==(const ParamVector& other) const = default;

    bool all_finite() const {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// *this += alpha * other
    void add_scaled(const ParamVector& other, double alpha) {
        require_same_dim(other, "add_scaled");
        for (std::size_t i = 0; i < values_.size(); ++i)
            values_[i] += alpha * other.values_[i];
    }

    void scale(double alpha) {
        for (double& v : values_) v *= alpha;
    }

private:
    void require_same_dim(const ParamVector& other, const char* op) const {
        if (other.dim() != dim())
            throw InputError(std::string(op) + ": dimension mismatch (" +
                             std::to_string(dim()) + " vs " + std::to_string(other.dim()) + ")");
    }

    std::vector<double> values_;
};

/// Coordinatewise w*a + (1-w)*b.
inline ParamVector blend(double w, const ParamVector& a, const ParamVector& b) {
    if (a.dim() != b.dim())
        throw InputError("blend: dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()) + ")");
    ParamVector out(a.dim());
    for (std::size_t i = 0; i < a.dim(); ++i) out[i] = w * a[i] + (1.0 - w) * b[i];
    return out;
}

inline ParamVector operator-(const ParamVector& a, const ParamVector& b) {
    if (a.dim() != b.dim())
        throw InputError("operator-: dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()) + ")");
    ParamVector out(a.dim());
    for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline double linf_norm(const ParamVector& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) m = std::max(m, std::fabs(a[i]));
    return m;
}

inline double linf_distance(const ParamVector& a, const ParamVector& b) {
    if (a.dim() != b.dim())
        throw InputError("linf_distance: dimension mismatch (" + std::to_string(a.dim()) +
                         " vs " + std::to_string(b.dim()) + ")");
    double m = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace fedsim
