#include "magat/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <vector>

namespace magat::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::Parallel};

constexpr int kMR = 8;
constexpr int kNR = 16;
constexpr int kMC = 64;
constexpr int kKC = 256;
constexpr int kNC = 512;

inline double elem(const double* p, int ld, bool trans, int i, int j) {
  return trans ? p[static_cast<std::size_t>(j) * ld + i] : p[static_cast<std::size_t>(i) * ld + j];
}

void scale_c(int m, int n, double beta, double* c, int ldc) {
  if (beta == 1.0) return;
  for (int i = 0; i < m; ++i) {
    double* row = c + static_cast<std::size_t>(i) * ldc;
    if (beta == 0.0) std::fill_n(row, n, 0.0);
    else for (int j = 0; j < n; ++j) row[j] *= beta;
  }
}

// A block (mc x kc) into row panels of kMR: panel[p][k][r], zero padded.
void pack_a(bool trans, const double* a, int lda, int i0, int mc, int p0, int kc, double* out) {
  for (int ip = 0; ip < mc; ip += kMR) {
    const int rows = std::min(kMR, mc - ip);
    for (int k = 0; k < kc; ++k) {
      for (int r = 0; r < rows; ++r) out[k * kMR + r] = elem(a, lda, trans, i0 + ip + r, p0 + k);
      for (int r = rows; r < kMR; ++r) out[k * kMR + r] = 0.0;
    }
    out += static_cast<std::size_t>(kc) * kMR;
  }
}

// B block (kc x nc) into column panels of kNR: panel[q][k][c], zero padded.
void pack_b(bool trans, const double* b, int ldb, int p0, int kc, int j0, int nc, double* out) {
  for (int jp = 0; jp < nc; jp += kNR) {
    const int cols = std::min(kNR, nc - jp);
    for (int k = 0; k < kc; ++k) {
      double* dst = out + k * kNR;
      if (!trans && cols == kNR) {
        std::memcpy(dst, b + static_cast<std::size_t>(p0 + k) * ldb + j0 + jp, kNR * sizeof(double));
        continue;
      }
      for (int c = 0; c < cols; ++c) dst[c] = elem(b, ldb, trans, p0 + k, j0 + jp + c);
      for (int c = cols; c < kNR; ++c) dst[c] = 0.0;
    }
    out += static_cast<std::size_t>(kc) * kNR;
  }
}

// Eight rows by sixteen columns: sixteen 8-wide accumulators.
typedef double v8d __attribute__((vector_size(64)));

inline v8d load8(const double* p) {
  v8d v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void micro_kernel(int kc, const double* __restrict a, const double* __restrict b,
                         double* __restrict c, int ldc, int rows, int cols) {
  v8d acc[kMR][2] = {};
  for (int k = 0; k < kc; ++k) {
    const double* bk = b + k * kNR;
    const v8d b0 = load8(bk), b1 = load8(bk + 8);
    for (int r = 0; r < kMR; ++r) {
      const double x = a[k * kMR + r];
      const v8d av = {x, x, x, x, x, x, x, x};
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  double out[kMR][kNR];
  std::memcpy(out, acc, sizeof out);
  for (int r = 0; r < rows; ++r) {
    double* crow = c + static_cast<std::size_t>(r) * ldc;
    for (int j = 0; j < cols; ++j) crow[j] += out[r][j];
  }
}

}  // namespace

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

void gemm_reference(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
                    const double* b, int ldb, double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += elem(a, lda, trans_a, i, p) * elem(b, ldb, trans_b, p, j);
      double& cij = c[static_cast<std::size_t>(i) * ldc + j];
      cij = (beta == 0.0 ? 0.0 : beta * cij) + s;
    }
}

void gemm_parallel(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
                   const double* b, int ldb, double beta, double* c, int ldc) {
  scale_c(m, n, beta, c, ldc);
  if (m == 0 || n == 0 || k == 0) return;
  std::vector<double> bpack(static_cast<std::size_t>(kKC) * ((kNC + kNR - 1) / kNR) * kNR);
  for (int jc = 0; jc < n; jc += kNC) {
    const int nc = std::min(kNC, n - jc);
    for (int pc = 0; pc < k; pc += kKC) {
      const int kc = std::min(kKC, k - pc);
      pack_b(trans_b, b, ldb, pc, kc, jc, nc, bpack.data());
      const int blocks = (m + kMC - 1) / kMC;
#pragma omp parallel if (blocks > 1)
      {
        std::vector<double> apack(static_cast<std::size_t>(kMC) * kc);
#pragma omp for schedule(static)
        for (int blk = 0; blk < blocks; ++blk) {
          const int ic = blk * kMC;
          const int mc = std::min(kMC, m - ic);
          pack_a(trans_a, a, lda, ic, mc, pc, kc, apack.data());
          for (int jr = 0; jr < nc; jr += kNR)
            for (int ir = 0; ir < mc; ir += kMR)
              micro_kernel(kc, apack.data() + static_cast<std::size_t>(ir) * kc,
                           bpack.data() + static_cast<std::size_t>(jr) * kc,
                           c + static_cast<std::size_t>(ic + ir) * ldc + jc + jr, ldc,
                           std::min(kMR, mc - ir), std::min(kNR, nc - jr));
        }
      }
    }
  }
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  if (backend() == Backend::Reference)
    gemm_reference(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, ldc);
  else
    gemm_parallel(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, ldc);
}

namespace {

// Offset of input pixel (y, x) of image b, or -1 when it lies in the padding.
inline std::ptrdiff_t pixel(const ConvShape& s, int b, int y, int x) {
  if (y < 0 || y >= s.height || x < 0 || x >= s.width) return -1;
  return ((static_cast<std::ptrdiff_t>(b) * s.height + y) * s.width + x) * s.channels;
}

// Patch row of output pixel (oy, ox), ordered (ky, kx, c).
inline void gather(const ConvShape& s, int b, int oy, int ox, const double* x, double* row) {
  for (int ky = 0; ky < s.kernel; ++ky)
    for (int kx = 0; kx < s.kernel; ++kx, row += s.channels) {
      const auto off = pixel(s, b, oy * s.stride - s.pad + ky, ox * s.stride - s.pad + kx);
      if (off < 0) std::fill_n(row, s.channels, 0.0);
      else std::copy_n(x + off, s.channels, row);
    }
}

inline void scatter(const ConvShape& s, int b, int oy, int ox, const double* row, double* dx) {
  for (int ky = 0; ky < s.kernel; ++ky)
    for (int kx = 0; kx < s.kernel; ++kx, row += s.channels) {
      const auto off = pixel(s, b, oy * s.stride - s.pad + ky, ox * s.stride - s.pad + kx);
      if (off < 0) continue;
      for (int ch = 0; ch < s.channels; ++ch) dx[off + ch] += row[ch];
    }
}

template <class F>
void for_pixels(const ConvShape& s, int b, F&& f) {
  const int oh = s.out_height(), ow = s.out_width();
  const std::size_t pc = s.patch_cols();
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) f(oy, ox, ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * pc);
}

}  // namespace

void im2col_reference(const ConvShape& s, const double* x, double* cols) {
  for (int b = 0; b < s.batch; ++b)
    for_pixels(s, b, [&](int oy, int ox, std::size_t r) { gather(s, b, oy, ox, x, cols + r); });
}

void im2col_parallel(const ConvShape& s, const double* x, double* cols) {
#pragma omp parallel for schedule(static) if (s.batch > 1)
  for (int b = 0; b < s.batch; ++b)
    for_pixels(s, b, [&](int oy, int ox, std::size_t r) { gather(s, b, oy, ox, x, cols + r); });
}

void im2col(const ConvShape& s, const double* x, double* cols) {
  if (backend() == Backend::Reference) im2col_reference(s, x, cols);
  else im2col_parallel(s, x, cols);
}

void col2im_reference(const ConvShape& s, const double* cols, double* dx) {
  for (int b = 0; b < s.batch; ++b)
    for_pixels(s, b, [&](int oy, int ox, std::size_t r) { scatter(s, b, oy, ox, cols + r, dx); });
}

void col2im_parallel(const ConvShape& s, const double* cols, double* dx) {
  // Images are disjoint, so batches scatter independently.
#pragma omp parallel for schedule(static) if (s.batch > 1)
  for (int b = 0; b < s.batch; ++b)
    for_pixels(s, b, [&](int oy, int ox, std::size_t r) { scatter(s, b, oy, ox, cols + r, dx); });
}

void col2im(const ConvShape& s, const double* cols, double* dx) {
  if (backend() == Backend::Reference) col2im_reference(s, cols, dx);
  else col2im_parallel(s, cols, dx);
}

}  // namespace magat::kernels
