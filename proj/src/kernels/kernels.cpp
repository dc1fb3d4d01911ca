#include "bat/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace bat::kernels {

#ifdef BAT_HAVE_AVX2
const KernelTable* avx2_table_impl();  // defined in kernels_avx2.cpp
#endif

const KernelTable* avx2_table() {
#ifdef BAT_HAVE_AVX2
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return avx2_table_impl();
#endif
  return nullptr;
}

namespace {

const KernelTable* pick_default() {
  if (const char* env = std::getenv("BAT_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return &scalar_table();
    if (std::strcmp(env, "avx2") == 0 && avx2_table()) return avx2_table();
    // "auto" or anything unrecognized falls through to the best available
  }
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

const KernelTable* g_active = nullptr;

}  // namespace

const KernelTable& active() {
  if (!g_active) g_active = pick_default();
  return *g_active;
}

void set_active(const KernelTable& t) { g_active = &t; }

}  // namespace bat::kernels
