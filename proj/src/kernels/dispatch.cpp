#include "kernels_internal.hpp"

#include <cstdlib>
#include <cstring>

namespace stamp::kernels {

std::string_view to_string(Isa isa)
{
    switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    }
    return "unknown";
}

const KernelTable* avx2_table()
{
#if defined(STAMP_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    static const bool supported = [] {
        __builtin_cpu_init();
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    }();
    return supported ? &avx2_table_unchecked() : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable& active()
{
    static const KernelTable* table = [] {
        const char* env = std::getenv("STAMP_SIMD");
        if (env != nullptr && std::strcmp(env, "scalar") == 0) return &scalar_table();
        const KernelTable* simd = avx2_table();
        return simd != nullptr ? simd : &scalar_table();
    }();
    return *table;
}

} // namespace stamp::kernels
