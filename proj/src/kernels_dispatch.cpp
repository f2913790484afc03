#include "glyrl/kernels.hpp"

#include <cstdlib>
#include <string_view>

namespace glyrl::kernels {

namespace {

Backend detect() {
#if defined(GLYRL_HAVE_AVX2)
    bool cpu_ok = __builtin_cpu_supports("avx2");
    if (const char* e = std::getenv("GLYRL_KERNELS")) {
        const std::string_view v(e);
        if (v == "scalar") return Backend::scalar;
        if (v == "avx2") return cpu_ok ? Backend::avx2 : Backend::scalar;
        // anything else ("auto", typos) falls back to detection
    }
    return cpu_ok ? Backend::avx2 : Backend::scalar;
#else
    return Backend::scalar;
#endif
}

Backend& state() {
    static Backend b = detect();
    return b;
}

}  // namespace

Backend active() { return state(); }

void force_backend(Backend b) {
#if !defined(GLYRL_HAVE_AVX2)
    b = Backend::scalar;
#endif
    state() = b;
}

const char* backend_name(Backend b) {
    return b == Backend::avx2 ? "avx2" : "scalar";
}

}  // namespace glyrl::kernels
