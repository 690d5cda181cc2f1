#pragma once

#include "steer/error.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace steer {

// Dense row-major matrix of doubles. Rows and cols are always >= 1.
class Matrix {
public:
    Matrix(size_t rows, size_t cols);
    Matrix(size_t rows, size_t cols, std::vector<double> data);

    static Matrix from_rows(const std::vector<std::vector<double>> & rows);

    size_t rows() const noexcept { return rows_; }
    size_t cols() const noexcept { return cols_; }

    double & operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
    double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(size_t r) const { return {data_.data() + r * cols_, cols_}; }

    const std::vector<double> & data() const noexcept { return data_; }

    bool all_finite() const;

    bool operator==(const Matrix &) const = default;

private:
    size_t rows_;
    size_t cols_;
    std::vector<double> data_;
};

// L2-normalized direction. Construction normalizes; `from_normalized` validates instead.
class UnitVector {
public:
    explicit UnitVector(std::vector<double> components);

    // Throws InvariantViolation unless |norm - 1| <= 1e-9.
    static UnitVector from_normalized(std::vector<double> components);

    size_t dim() const noexcept { return components_.size(); }
    std::span<const double> components() const noexcept { return components_; }
    double operator[](size_t i) const { return components_[i]; }

    bool operator==(const UnitVector &) const = default;

private:
    struct validated_tag {};
    UnitVector(std::vector<double> components, validated_tag) : components_(std::move(components)) {}

    std::vector<double> components_;
};

struct LogRegModel {
    std::vector<double> weights;
    double bias = 0.0;
};

struct PowerIterationOptions {
    double tol      = 1e-15;
    size_t max_iter = 10000;
};

// Thrown by first_principal_component when the iteration budget runs out.
class DidNotConvergeError : public Error {
public:
    DidNotConvergeError(std::vector<double> last_iterate, double residual, size_t iterations);

    const std::vector<double> & last_iterate() const noexcept { return last_iterate_; }
    double residual() const noexcept { return residual_; }

private:
    std::vector<double> last_iterate_;
    double residual_;
};

// Unit w maximizing ||m w||^2 (uncentered). Sign: dot(w, column mean) >= 0,
// ties resolved by making the first nonzero component positive.
UnitVector first_principal_component(const Matrix & m, PowerIterationOptions opts = {});

// Column mean of m, L2-normalized.
UnitVector mean_difference_vector(const Matrix & m);

struct Projection2d {
    Matrix points;          // rows x 2
    bool degenerate = false; // centered rank < 2; missing columns are zero
    double variance[2] = {0.0, 0.0};
};

// Mean-centered PCA onto the top two components, ordered by descending singular value.
Projection2d pca_project_2d(const Matrix & m);

struct SymmetricEigen {
    std::vector<double> values;  // descending
    Matrix vectors;              // column j is the eigenvector for values[j]
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
SymmetricEigen symmetric_eigen(const Matrix & a, double tol = 1e-14, size_t max_sweeps = 100);

struct LogRegOptions {
    double l2      = 1e-4;
    size_t epochs  = 500;
    double lr      = 0.1;
    bool standardize = true;
};

struct LogRegTrace {
    LogRegModel model;
    std::vector<double> loss_per_epoch; // loss in the (standardized) training space, before each update
};

LogRegTrace train_logreg_traced(const Matrix & features, std::span<const int> labels, LogRegOptions opts = {});

inline LogRegModel train_logreg(const Matrix & features, std::span<const int> labels, LogRegOptions opts = {}) {
    return train_logreg_traced(features, labels, opts).model;
}

// Fraction of rows where sigmoid(w.x + b) >= 0.5 agrees with the label.
double logreg_accuracy(const LogRegModel & model, const Matrix & features, std::span<const int> labels);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

} // namespace steer
