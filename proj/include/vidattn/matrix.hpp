#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace vidattn {

// Dense row-major matrix. Deliberately minimal: the kernels in this project
// need explicit loops with a fixed summation order, not a BLAS facade.
template <typename T>
struct Matrix {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::int64_t r, std::int64_t c)
        : rows(r), cols(c), data(static_cast<std::size_t>(r * c), T(0)) {
        if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dims");
    }

    T* row(std::int64_t r) { return data.data() + r * cols; }
    const T* row(std::int64_t r) const { return data.data() + r * cols; }

    T& operator()(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols + c)]; }
    const T& operator()(std::int64_t r, std::int64_t c) const {
        return data[static_cast<std::size_t>(r * cols + c)];
    }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    void fill(T v) {
        for (auto& x : data) x = v;
    }
};

using Mat = Matrix<double>;

}  // namespace vidattn
