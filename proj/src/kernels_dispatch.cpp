#include <cstdlib>
#include <string_view>

#include "flourish/kernels.hpp"

namespace flourish::kernels {

#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops();
#endif
#if defined(__aarch64__)
const Ops& neon_ops();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Ops* lookup(std::string_view name) {
    if (name == "scalar") return &scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
    if (name == "avx2" && cpu_has_avx2()) return &avx2_ops();
#endif
#if defined(__aarch64__)
    if (name == "neon") return &neon_ops();
#endif
    return nullptr;
}

const Ops* resolve() {
    if (const char* env = std::getenv("FLOURISH_KERNELS")) {
        if (const Ops* forced = lookup(env)) return forced;
        return &scalar_ops();
    }
#if defined(__aarch64__)
    return &neon_ops();
#else
    if (cpu_has_avx2()) return &avx2_ops();
    return &scalar_ops();
#endif
}

}  // namespace

const Ops& active() {
    static const Ops* chosen = resolve();
    return *chosen;
}

const Ops* find(std::string_view name) { return lookup(name); }

std::vector<const Ops*> available() {
    std::vector<const Ops*> out{&scalar_ops()};
#if defined(__x86_64__) || defined(_M_X64)
    if (cpu_has_avx2()) out.push_back(&avx2_ops());
#endif
#if defined(__aarch64__)
    out.push_back(&neon_ops());
#endif
    return out;
}

}  // namespace flourish::kernels
