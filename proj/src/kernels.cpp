#include "sew/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace sew::kern {

#ifdef SEW_HAVE_AVX2_TU
const Ops* avx2_ops_build();  // kernels_avx2.cpp
#endif

const Ops* avx2_ops() {
#ifdef SEW_HAVE_AVX2_TU
  static const Ops* ops = [] {
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
      return avx2_ops_build();
    return static_cast<const Ops*>(nullptr);
  }();
  return ops;
#else
  return nullptr;
#endif
}

namespace {

const Ops* g_active = nullptr;

const Ops* detect() {
  if (const char* env = std::getenv("SEW_KERNELS")) {
    if (!std::strcmp(env, "scalar")) return &scalar_ops();
    if (!std::strcmp(env, "avx2") && avx2_ops()) return avx2_ops();
  }
  if (const Ops* v = avx2_ops()) return v;
  return &scalar_ops();
}

}  // namespace

const Ops& active() {
  if (!g_active) g_active = detect();
  return *g_active;
}

void set_active(const Ops& ops) { g_active = &ops; }
void reset_active() { g_active = nullptr; }

}  // namespace sew::kern
