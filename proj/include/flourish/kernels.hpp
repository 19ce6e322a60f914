#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace flourish::kernels {

/// Vector arithmetic primitives behind the dense-matrix, moment, correlation
/// and scoring loops. Every variant uses a fixed accumulation order, so a
/// given build produces identical bits run to run. Variants may differ from
/// each other by floating-point reassociation only; for inputs whose values
/// and pairwise products are exactly representable (label scores are
/// multiples of 0.5 with bounded magnitude) all variants agree bitwise.
struct Ops {
    const char* name;
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* a, std::size_t n);
    double (*sumsq)(const double* a, std::size_t n);
    // y[i] += alpha * x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // x[i] *= alpha
    void (*scale)(double* x, double alpha, std::size_t n);
};

/// Portable reference implementation; the baseline for equivalence tests.
const Ops& scalar_ops();

/// Best variant for this process: picked once from CPU features, overridable
/// with FLOURISH_KERNELS=scalar|avx2|neon (unknown or unavailable names fall
/// back to scalar).
const Ops& active();

/// Variant lookup by name; nullptr when the variant is not compiled in or the
/// CPU cannot run it.
const Ops* find(std::string_view name);

/// All variants runnable on this machine.
std::vector<const Ops*> available();

}  // namespace flourish::kernels
