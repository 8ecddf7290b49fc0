#include <atomic>
#include <cstdlib>
#include <string>

#include "mtm/kernels.hpp"

namespace mtm::kernels {

#ifdef MTM_HAVE_AVX2
const KernelTable& avx2_table_impl();
#endif

const KernelTable* avx2_table() {
#ifdef MTM_HAVE_AVX2
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return supported ? &avx2_table_impl() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* best_available() {
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

const KernelTable* initial_table() {
  const char* env = std::getenv("MULTITOPIC_SIMD");
  if (env != nullptr && std::string(env) == "scalar") return &scalar_table();
  return best_available();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

bool select(std::string_view name) {
  if (name == "scalar") {
    current().store(&scalar_table(), std::memory_order_release);
    return true;
  }
  if (name == "avx2") {
    const KernelTable* t = avx2_table();
    if (t == nullptr) return false;
    current().store(t, std::memory_order_release);
    return true;
  }
  if (name == "auto") {
    current().store(best_available(), std::memory_order_release);
    return true;
  }
  return false;
}

}  // namespace mtm::kernels
