#include <cstdlib>
#include <string_view>

#include "chartnet/simd/kernels.hpp"

namespace chartnet::simd {

namespace detail {
template <class T>
const KernelTable<T>* avx2_table_if_compiled();
}

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

template <class T>
const KernelTable<T>* avx2_kernels() {
  if (!cpu_has_avx2_fma()) return nullptr;
  return detail::avx2_table_if_compiled<T>();
}

template <class T>
const KernelTable<T>& kernels() {
  static const KernelTable<T>* selected = [] {
    const char* forced = std::getenv("CHARTNET_SIMD");
    if (forced != nullptr && std::string_view(forced) == "scalar") return &scalar_kernels<T>();
    if (const auto* t = avx2_kernels<T>()) return t;
    return &scalar_kernels<T>();
  }();
  return *selected;
}

template const KernelTable<float>* avx2_kernels<float>();
template const KernelTable<double>* avx2_kernels<double>();
template const KernelTable<float>& kernels<float>();
template const KernelTable<double>& kernels<double>();

}  // namespace chartnet::simd
