#include "steer/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace steer {

namespace {

constexpr double k_zero_norm = 1e-12;

void normalize_in_place(std::vector<double> & v) {
    const double n = norm2(v);
    for (auto & x : v) {
        x /= n;
    }
}

// m^T (m v)
std::vector<double> gram_apply(const Matrix & m, std::span<const double> v) {
    std::vector<double> out(m.cols(), 0.0);
    for (size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        const double s = dot(row, v);
        for (size_t c = 0; c < m.cols(); ++c) {
            out[c] += s * row[c];
        }
    }
    return out;
}

std::vector<double> column_mean(const Matrix & m) {
    std::vector<double> mean(m.cols(), 0.0);
    for (size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        for (size_t c = 0; c < m.cols(); ++c) {
            mean[c] += row[c];
        }
    }
    for (auto & x : mean) {
        x /= static_cast<double>(m.rows());
    }
    return mean;
}

void fix_sign_first_nonzero(std::span<double> v) {
    for (double x : v) {
        if (std::abs(x) > k_zero_norm) {
            if (x < 0) {
                for (auto & y : v) {
                    y = -y;
                }
            }
            return;
        }
    }
}

double sigmoid(double z) {
    if (z >= 0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z))
double softplus(double z) {
    return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

} // namespace

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimMismatch, "dot: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double norm2(std::span<const double> a) {
    return std::sqrt(dot(a, a));
}

// ---------------------------------------------------------------------------
// Matrix / UnitVector

Matrix::Matrix(size_t rows, size_t cols) : Matrix(rows, cols, std::vector<double>(rows * cols, 0.0)) {}

Matrix::Matrix(size_t rows, size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows_ == 0 || cols_ == 0) {
        throw Error(ErrorCode::InvalidArgument, "matrix must have at least one row and one column");
    }
    if (data_.size() != rows_ * cols_) {
        throw Error(ErrorCode::DimMismatch, "matrix data length " + std::to_string(data_.size()) +
                                                " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    if (!all_finite()) {
        throw Error(ErrorCode::InvalidArgument, "matrix contains non-finite entries");
    }
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>> & rows) {
    if (rows.empty()) {
        throw Error(ErrorCode::InvalidArgument, "matrix must have at least one row");
    }
    const size_t cols = rows.front().size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto & r : rows) {
        if (r.size() != cols) {
            throw Error(ErrorCode::DimMismatch, "ragged rows");
        }
        data.insert(data.end(), r.begin(), r.end());
    }
    return Matrix(rows.size(), cols, std::move(data));
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

UnitVector::UnitVector(std::vector<double> components) : components_(std::move(components)) {
    const double n = norm2(components_);
    if (!(n >= k_zero_norm) || !std::isfinite(n)) {
        throw Error(ErrorCode::AllZeroMatrix, "cannot normalize a zero or non-finite vector");
    }
    normalize_in_place(components_);
}

UnitVector UnitVector::from_normalized(std::vector<double> components) {
    const double n = norm2(components);
    if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-9) {
        throw Error(ErrorCode::InvariantViolation, "direction norm " + std::to_string(n) + " is not 1");
    }
    return UnitVector(std::move(components), validated_tag{});
}

DidNotConvergeError::DidNotConvergeError(std::vector<double> last_iterate, double residual, size_t iterations)
    : Error(ErrorCode::DidNotConverge, "power iteration stopped after " + std::to_string(iterations) +
                                           " iterations, residual " + std::to_string(residual)),
      last_iterate_(std::move(last_iterate)), residual_(residual) {}

// ---------------------------------------------------------------------------
// Principal component / mean difference

UnitVector first_principal_component(const Matrix & m, PowerIterationOptions opts) {
    if (!(opts.tol > 0)) {
        throw Error(ErrorCode::InvalidArgument, "tol must be positive");
    }
    bool any_nonzero = false;
    for (size_t r = 0; r < m.rows() && !any_nonzero; ++r) {
        any_nonzero = norm2(m.row(r)) >= k_zero_norm;
    }
    if (!any_nonzero) {
        throw Error(ErrorCode::AllZeroMatrix, "every row has norm below 1e-12");
    }

    // Fixed start so the result never depends on global state. A dense
    // pseudo-random start is almost surely not orthogonal to the top PC.
    std::mt19937_64 rng(0x5eedULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> w(m.cols());
    for (auto & x : w) {
        x = normal(rng);
    }
    normalize_in_place(w);

    bool converged = false;
    size_t iter = 0;
    for (; iter < opts.max_iter; ++iter) {
        auto next = gram_apply(m, w);
        const double n = norm2(next);
        if (n < k_zero_norm) {
            // start vector fell in the null space; restart from the first nonzero row
            for (size_t r = 0; r < m.rows(); ++r) {
                if (norm2(m.row(r)) >= k_zero_norm) {
                    next.assign(m.row(r).begin(), m.row(r).end());
                    break;
                }
            }
        }
        normalize_in_place(next);
        const double cosine = dot(next, w);
        w = std::move(next);
        if (cosine >= 1.0 - opts.tol) {
            converged = true;
            break;
        }
    }

    if (!converged) {
        const auto aw = gram_apply(m, w);
        const double rayleigh = dot(w, aw);
        double res = 0.0;
        for (size_t i = 0; i < w.size(); ++i) {
            res += (aw[i] - rayleigh * w[i]) * (aw[i] - rayleigh * w[i]);
        }
        throw DidNotConvergeError(w, std::sqrt(res), iter);
    }

    const auto mean = column_mean(m);
    const double d = dot(w, mean);
    if (std::abs(d) > k_zero_norm) {
        if (d < 0) {
            for (auto & x : w) {
                x = -x;
            }
        }
    } else {
        fix_sign_first_nonzero(w);
    }
    return UnitVector(std::move(w));
}

UnitVector mean_difference_vector(const Matrix & m) {
    auto mean = column_mean(m);
    if (norm2(mean) < k_zero_norm) {
        throw Error(ErrorCode::AllZeroMatrix, "column mean has norm below 1e-12");
    }
    return UnitVector(std::move(mean));
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)

SymmetricEigen symmetric_eigen(const Matrix & a_in, double tol, size_t max_sweeps) {
    const size_t n = a_in.rows();
    if (a_in.cols() != n) {
        throw Error(ErrorCode::DimMismatch, "symmetric_eigen needs a square matrix");
    }
    Matrix a = a_in;
    Matrix v(n, n);
    for (size_t i = 0; i < n; ++i) {
        v(i, i) = 1.0;
    }

    double scale = 0.0;
    for (double x : a.data()) {
        scale = std::max(scale, std::abs(x));
    }

    for (size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                off += a(p, q) * a(p, q);
            }
        }
        if (std::sqrt(off) <= tol * std::max(scale, 1e-300)) {
            break;
        }
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) {
                    continue;
                }
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) { return a(i, i) > a(j, j); });

    SymmetricEigen out{std::vector<double>(n), Matrix(n, n)};
    for (size_t j = 0; j < n; ++j) {
        out.values[j] = a(order[j], order[j]);
        for (size_t k = 0; k < n; ++k) {
            out.vectors(k, j) = v(k, order[j]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// 2-D PCA projection

Projection2d pca_project_2d(const Matrix & m) {
    if (m.rows() < 3 || m.cols() < 2) {
        throw Error(ErrorCode::InvalidArgument, "pca_project_2d needs >= 3 rows and >= 2 columns");
    }
    const size_t n = m.rows();
    const size_t d = m.cols();
    const auto mean = column_mean(m);
    Matrix xc(n, d);
    for (size_t r = 0; r < n; ++r) {
        for (size_t c = 0; c < d; ++c) {
            xc(r, c) = m(r, c) - mean[c];
        }
    }

    // principal axes as columns of a d x 2 basis, with their eigenvalues of Xc^T Xc
    std::vector<std::vector<double>> axes;
    std::vector<double> eig;

    if (d <= n) {
        Matrix cov(d, d);
        for (size_t r = 0; r < n; ++r) {
            for (size_t i = 0; i < d; ++i) {
                for (size_t j = i; j < d; ++j) {
                    cov(i, j) += xc(r, i) * xc(r, j);
                }
            }
        }
        for (size_t i = 0; i < d; ++i) {
            for (size_t j = 0; j < i; ++j) {
                cov(i, j) = cov(j, i);
            }
        }
        const auto es = symmetric_eigen(cov);
        for (size_t k = 0; k < 2; ++k) {
            std::vector<double> axis(d);
            for (size_t i = 0; i < d; ++i) {
                axis[i] = es.vectors(i, k);
            }
            axes.push_back(std::move(axis));
            eig.push_back(std::max(0.0, es.values[k]));
        }
    } else {
        // n < d: decompose the n x n Gram matrix and map back, v = Xc^T u / s
        Matrix gram(n, n);
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = i; j < n; ++j) {
                gram(i, j) = gram(j, i) = dot(xc.row(i), xc.row(j));
            }
        }
        const auto es = symmetric_eigen(gram);
        for (size_t k = 0; k < 2; ++k) {
            const double ev = std::max(0.0, es.values[k]);
            std::vector<double> axis(d, 0.0);
            if (ev > 0) {
                const double s = std::sqrt(ev);
                for (size_t r = 0; r < n; ++r) {
                    for (size_t c = 0; c < d; ++c) {
                        axis[c] += es.vectors(r, k) * xc(r, c) / s;
                    }
                }
            }
            axes.push_back(std::move(axis));
            eig.push_back(ev);
        }
    }

    Projection2d out{Matrix(n, 2)};
    const double top = eig[0];
    const bool rank0 = top <= 1e-300;
    const bool rank1 = rank0 || eig[1] <= 1e-12 * top;
    out.degenerate = rank1;
    for (size_t k = 0; k < 2; ++k) {
        if ((k == 0 && rank0) || (k == 1 && rank1)) {
            continue;
        }
        fix_sign_first_nonzero(axes[k]);
        for (size_t r = 0; r < n; ++r) {
            out.points(r, k) = dot(xc.row(r), axes[k]);
        }
        out.variance[k] = eig[k] / static_cast<double>(n - 1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Logistic regression

LogRegTrace train_logreg_traced(const Matrix & features, std::span<const int> labels, LogRegOptions opts) {
    const size_t n = features.rows();
    const size_t d = features.cols();
    if (labels.size() != n) {
        throw Error(ErrorCode::DimMismatch, "labels length " + std::to_string(labels.size()) + " != rows " +
                                                std::to_string(n));
    }
    if (opts.l2 < 0 || !(opts.lr > 0)) {
        throw Error(ErrorCode::InvalidArgument, "l2 must be >= 0 and lr > 0");
    }
    size_t positives = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) {
            throw Error(ErrorCode::InvalidArgument, "labels must be 0 or 1");
        }
        positives += static_cast<size_t>(y);
    }
    if (positives == 0 || positives == n) {
        throw Error(ErrorCode::SingleClass, "labels are constant");
    }
    if (positives < 2 || n - positives < 2) {
        throw Error(ErrorCode::InvalidArgument, "need at least two examples of each class");
    }

    std::vector<double> mu(d, 0.0);
    std::vector<double> sd(d, 1.0);
    if (opts.standardize) {
        mu = column_mean(features);
        for (size_t c = 0; c < d; ++c) {
            double var = 0.0;
            for (size_t r = 0; r < n; ++r) {
                const double z = features(r, c) - mu[c];
                var += z * z;
            }
            var /= static_cast<double>(n);
            sd[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
    }
    Matrix x(n, d);
    for (size_t r = 0; r < n; ++r) {
        for (size_t c = 0; c < d; ++c) {
            x(r, c) = (features(r, c) - mu[c]) / sd[c];
        }
    }

    std::vector<double> w(d, 0.0);
    double b = 0.0;
    LogRegTrace trace;
    trace.loss_per_epoch.reserve(opts.epochs + 1);
    const double inv_n = 1.0 / static_cast<double>(n);

    auto loss_and_grad = [&](std::vector<double> * gw, double * gb) {
        double loss = 0.0;
        if (gw) {
            std::fill(gw->begin(), gw->end(), 0.0);
            *gb = 0.0;
        }
        for (size_t r = 0; r < n; ++r) {
            const double z = dot(x.row(r), w) + b;
            // -[y log p + (1-y) log(1-p)] = softplus(z) - y z
            loss += softplus(z) - labels[r] * z;
            if (gw) {
                const double g = sigmoid(z) - labels[r];
                const auto row = x.row(r);
                for (size_t c = 0; c < d; ++c) {
                    (*gw)[c] += g * row[c];
                }
                *gb += g;
            }
        }
        loss *= inv_n;
        loss += 0.5 * opts.l2 * dot(w, w);
        return loss;
    };

    std::vector<double> gw(d);
    double gb = 0.0;
    for (size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        trace.loss_per_epoch.push_back(loss_and_grad(&gw, &gb));
        for (size_t c = 0; c < d; ++c) {
            w[c] -= opts.lr * (gw[c] * inv_n + opts.l2 * w[c]);
        }
        b -= opts.lr * gb * inv_n;
    }
    trace.loss_per_epoch.push_back(loss_and_grad(nullptr, nullptr));

    // fold the standardization back into raw-feature weights
    trace.model.weights.resize(d);
    trace.model.bias = b;
    for (size_t c = 0; c < d; ++c) {
        trace.model.weights[c] = w[c] / sd[c];
        trace.model.bias -= w[c] * mu[c] / sd[c];
    }
    return trace;
}

double logreg_accuracy(const LogRegModel & model, const Matrix & features, std::span<const int> labels) {
    if (model.weights.size() != features.cols() || labels.size() != features.rows()) {
        throw Error(ErrorCode::DimMismatch, "logreg_accuracy: model/features/labels disagree");
    }
    size_t correct = 0;
    for (size_t r = 0; r < features.rows(); ++r) {
        const double p = sigmoid(dot(features.row(r), model.weights) + model.bias);
        const int predicted = p >= 0.5 ? 1 : 0;
        correct += predicted == labels[r] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(features.rows());
}

} // namespace steer
