// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#include "evomerge/matrix.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace evomerge {

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
    if (rows == 0 || cols == 0) {
        throw std::invalid_argument("Matrix: dimensions must be positive");
    }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0) {
        throw std::invalid_argument("Matrix: dimensions must be positive");
    }
    if (data_.size() != rows * cols) {
        throw std::invalid_argument("Matrix: data length does not match rows*cols");
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

void Matrix::ensure_finite(const std::string& what) const {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument(what + ": non-finite entry");
        }
    }
}

Matrix& Matrix::operator+=(const Matrix& rhs) {
    if (rows_ != rhs.rows_ || cols_ != rhs.cols_) {
        throw std::invalid_argument("Matrix+=: shape mismatch");
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += rhs.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& rhs) {
    if (rows_ != rhs.rows_ || cols_ != rhs.cols_) {
        throw std::invalid_argument("Matrix-=: shape mismatch");
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= rhs.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Matrix operator+(Matrix lhs, const Matrix& rhs) { return lhs += rhs; }
Matrix operator-(Matrix lhs, const Matrix& rhs) { return lhs -= rhs; }
Matrix operator*(Matrix m, double s) { return m *= s; }
Matrix operator*(double s, Matrix m) { return m *= s; }

Matrix matmul(const Matrix& lhs, const Matrix& rhs) {
    if (lhs.cols() != rhs.rows()) {
        throw std::invalid_argument("matmul: inner dimension mismatch");
    }
    Matrix out(lhs.rows(), rhs.cols());
    for (std::size_t i = 0; i < lhs.rows(); ++i) {
        for (std::size_t p = 0; p < lhs.cols(); ++p) {
            const double l = lhs(i, p);
            if (l == 0.0) continue;
            for (std::size_t j = 0; j < rhs.cols(); ++j) {
                out(i, j) += l * rhs(p, j);
            }
        }
    }
    return out;
}

double frobenius_norm(const Matrix& m) {
    double acc = 0.0;
    for (double v : m.data()) acc += v * v;
    return std::sqrt(acc);
}

}  // namespace evomerge
