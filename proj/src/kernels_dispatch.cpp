#include <atomic>
#include <cstdlib>
#include <string>

#include "dmwm/error.hpp"
#include "dmwm/kernels.hpp"

namespace dmwm::kernels {

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::kScalar:
      return "scalar";
    case Backend::kAvx2:
      return "avx2";
  }
  return "unknown";
}

bool avx2_supported() {
#if defined(__x86_64__) || defined(__i386__)
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
#else
  return false;
#endif
}

Backend detect_backend() {
  if (const char* env = std::getenv("DMWM_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Backend::kScalar;
    if (v == "avx2" && avx2_supported()) return Backend::kAvx2;
  }
  return avx2_supported() ? Backend::kAvx2 : Backend::kScalar;
}

namespace {

const KernelTable& table_for(Backend b) {
#if defined(__x86_64__) || defined(__i386__)
  if (b == Backend::kAvx2) return avx2_table();
#endif
  return scalar_table();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{&table_for(detect_backend())};
  return slot;
}

}  // namespace

const KernelTable& active() { return *active_slot().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (b == Backend::kAvx2 && !avx2_supported()) {
    throw ConfigError("AVX2/FMA kernels requested but not supported by this CPU");
  }
  active_slot().store(&table_for(b), std::memory_order_relaxed);
}

Backend active_backend() { return active().backend; }

}  // namespace dmwm::kernels
