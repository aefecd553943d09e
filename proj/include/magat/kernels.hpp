#pragma once

#include <cstddef>

namespace magat::kernels {

/// Reference: straightforward serial loops, kept for testing.
/// Parallel: packed, register-blocked, OpenMP over row blocks.
/// Both are deterministic; every output element is summed in the same k order
/// whatever the thread count.
enum class Backend { Reference, Parallel };

void set_backend(Backend b);
Backend backend();

/// RAII switch of the process-wide backend.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : saved_(backend()) { set_backend(b); }
  ~ScopedBackend() { set_backend(saved_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend saved_;
};

/// Row-major C[M,N] = op(A) op(B) + beta C, op = transpose when the flag is set.
/// op(A) is M x K, op(B) is K x N.
void gemm_reference(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
                    const double* b, int ldb, double beta, double* c, int ldc);
void gemm_parallel(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
                   const double* b, int ldb, double beta, double* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

/// Geometry of a 2-D convolution on NHWC tensors.
struct ConvShape {
  int batch = 0, height = 0, width = 0, channels = 0;
  int kernel = 3, stride = 1, pad = 1;
  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  /// Rows of the patch matrix: batch * out_h * out_w.
  std::size_t patch_rows() const {
    return static_cast<std::size_t>(batch) * out_height() * out_width();
  }
  /// Columns of the patch matrix: kernel * kernel * channels, ordered (ky, kx, c).
  int patch_cols() const { return kernel * kernel * channels; }
};

/// Patch matrix of `x` (NHWC); zero padding.
void im2col_reference(const ConvShape& s, const double* x, double* cols);
void im2col_parallel(const ConvShape& s, const double* x, double* cols);
void im2col(const ConvShape& s, const double* x, double* cols);

/// Adjoint of im2col: accumulates patch gradients into `dx` (NHWC).
void col2im_reference(const ConvShape& s, const double* cols, double* dx);
void col2im_parallel(const ConvShape& s, const double* cols, double* dx);
void col2im(const ConvShape& s, const double* cols, double* dx);

}  // namespace magat::kernels
