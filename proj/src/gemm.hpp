#pragma once

// Row-major single-precision kernels shared by matmul and conv2d. Loop order
// is fixed, so results are reproducible bit for bit on a given build.

#include <cstddef>
#include <vector>

namespace sdsc::detail {

// c[m×n] += a[m×k] · b[k×n]
inline void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                     float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    const float* arow = a + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const float av = arow[t];
      if (av == 0.0f) continue;
      const float* brow = b + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// out[cols×rows] = in[rows×cols]ᵀ
inline void transpose(std::size_t rows, std::size_t cols, const float* in, float* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = in[i * cols + j];
  }
}

inline std::vector<float> transposed(std::size_t rows, std::size_t cols, const float* in) {
  std::vector<float> out(rows * cols);
  transpose(rows, cols, in, out.data());
  return out;
}

}  // namespace sdsc::detail
