#pragma once

#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace crm {

/// Execution policy for the row-level kernels. Both paths use the same
/// fixed block decomposition and combine partials in index order, so the
/// result is bit-identical regardless of policy or thread count.
enum class Exec { serial, par };

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace detail {
constexpr std::ptrdiff_t kBlock = 2048;

inline std::ptrdiff_t num_blocks(std::ptrdiff_t n) { return (n + kBlock - 1) / kBlock; }

/// Pairwise combine of per-block partial sums, in block-index order.
inline double combine(std::vector<double>& partial, std::ptrdiff_t lo, std::ptrdiff_t hi) {
  if (hi - lo == 1) return partial[lo];
  const std::ptrdiff_t mid = lo + (hi - lo) / 2;
  return combine(partial, lo, mid) + combine(partial, mid, hi);
}
}  // namespace detail

/// Deterministic map-reduce: sum of f(i) for i in [0, n).
template <class F>
double blocked_sum(std::ptrdiff_t n, F&& f, Exec exec) {
  if (n <= 0) return 0.0;
  const std::ptrdiff_t nb = detail::num_blocks(n);
  std::vector<double> partial(nb, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (exec == Exec::par)
#endif
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const std::ptrdiff_t lo = b * detail::kBlock;
    const std::ptrdiff_t hi = std::min(n, lo + detail::kBlock);
    double acc = 0.0;
    for (std::ptrdiff_t i = lo; i < hi; ++i) acc += f(i);
    partial[b] = acc;
  }
  (void)exec;
  return detail::combine(partial, 0, nb);
}

/// Deterministic vector-valued reduction: out[d] = sum_i contribution.
/// f(i, acc) must add row i's contribution into acc (length dim).
template <class F>
void blocked_vec_sum(std::ptrdiff_t n, std::ptrdiff_t dim, double* out, F&& f, Exec exec) {
  const std::ptrdiff_t nb = detail::num_blocks(n);
  std::vector<double> partial(static_cast<std::size_t>(std::max<std::ptrdiff_t>(nb, 1)) * dim, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (exec == Exec::par)
#endif
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const std::ptrdiff_t lo = b * detail::kBlock;
    const std::ptrdiff_t hi = std::min(n, lo + detail::kBlock);
    double* acc = partial.data() + b * dim;
    for (std::ptrdiff_t i = lo; i < hi; ++i) f(i, acc);
  }
  (void)exec;
  for (std::ptrdiff_t d = 0; d < dim; ++d) out[d] = 0.0;
  // pairwise over blocks, per coordinate, in index order
  struct Rec {
    static void combine(const double* partial, std::ptrdiff_t dim, std::ptrdiff_t lo, std::ptrdiff_t hi, double* out) {
      if (hi - lo == 1) {
        const double* p = partial + lo * dim;
        for (std::ptrdiff_t d = 0; d < dim; ++d) out[d] += p[d];
        return;
      }
      const std::ptrdiff_t mid = lo + (hi - lo) / 2;
      std::vector<double> left(dim, 0.0), right(dim, 0.0);
      combine(partial, dim, lo, mid, left.data());
      combine(partial, dim, mid, hi, right.data());
      for (std::ptrdiff_t d = 0; d < dim; ++d) out[d] += left[d] + right[d];
    }
  };
  if (nb > 0) Rec::combine(partial.data(), dim, 0, nb, out);
}

/// Independent per-row work (no reduction).
template <class F>
void parallel_for(std::ptrdiff_t n, F&& f, Exec exec) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (exec == Exec::par)
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) f(i);
  (void)exec;
}

}  // namespace crm
