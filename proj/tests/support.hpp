#pragma once

#include "steer/model.hpp"
#include "steer/numerics.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace testsupport {

inline steer::Matrix gaussian_matrix(size_t rows, size_t cols, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> data(rows * cols);
    for (auto & x : data) {
        x = normal(rng);
    }
    return steer::Matrix(rows, cols, std::move(data));
}

inline Eigen::MatrixXd to_eigen(const steer::Matrix & m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (size_t r = 0; r < m.rows(); ++r) {
        for (size_t c = 0; c < m.cols(); ++c) {
            e(r, c) = m(r, c);
        }
    }
    return e;
}

// Top eigenpair of M^T M from a dense self-adjoint solver.
struct TopEigen {
    Eigen::VectorXd vector;
    double value;
};

inline TopEigen top_gram_eigen(const steer::Matrix & m) {
    const Eigen::MatrixXd e = to_eigen(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(e.transpose() * e);
    const auto n = solver.eigenvalues().size();
    return {solver.eigenvectors().col(n - 1), solver.eigenvalues()(n - 1)};
}

inline double rayleigh(const steer::Matrix & m, std::span<const double> w) {
    const Eigen::MatrixXd e = to_eigen(m);
    const Eigen::Map<const Eigen::VectorXd> v(w.data(), static_cast<Eigen::Index>(w.size()));
    return (e * v).squaredNorm() / v.squaredNorm();
}

inline double abs_cosine(std::span<const double> a, const Eigen::VectorXd & b) {
    const Eigen::Map<const Eigen::VectorXd> v(a.data(), static_cast<Eigen::Index>(a.size()));
    return std::abs(v.dot(b)) / (v.norm() * b.norm());
}

inline std::filesystem::path temp_dir(const std::string & name) {
    auto dir = std::filesystem::temp_directory_path() / ("steerlab_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_text(const std::filesystem::path & path, const std::string & text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::string read_text(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

inline steer::ModelConfig small_config(size_t vocab = steer::k_byte_vocab) {
    steer::ModelConfig c;
    c.n_layers = 2;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 32;
    c.vocab_size = vocab;
    c.max_seq = 64;
    return c;
}

} // namespace testsupport
