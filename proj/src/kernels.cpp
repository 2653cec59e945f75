#include "tpm/kernels.hpp"

#include <cassert>
#include <stdexcept>

#if defined(TPM_HAVE_AVX2)
#include "kernels_avx2.hpp"
#endif

namespace tpm::kernels {

namespace {

struct Table {
  Isa isa;
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*add_inplace)(double*, const double*, std::size_t);
  std::uint64_t (*popcount)(const std::uint64_t*, std::size_t);
  std::uint64_t (*and_popcount)(const std::uint64_t*, const std::uint64_t*, std::size_t);
};

constexpr Table kScalarTable{Isa::kScalar, scalar::dot, scalar::axpy, scalar::add_inplace,
                             scalar::popcount, scalar::and_popcount};
#if defined(TPM_HAVE_AVX2)
constexpr Table kAvx2Table{Isa::kAvx2, avx2::dot, avx2::axpy, avx2::add_inplace, avx2::popcount,
                           avx2::and_popcount};
#endif

Isa probe_cpu() {
#if defined(TPM_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma") &&
      __builtin_cpu_supports("popcnt")) {
    return Isa::kAvx2;
  }
#endif
  return Isa::kScalar;
}

const Table* table_for(Isa isa) {
#if defined(TPM_HAVE_AVX2)
  if (isa == Isa::kAvx2) return &kAvx2Table;
#endif
  return &kScalarTable;
}

const Table*& active_table() {
  static const Table* table = table_for(detected_isa());
  return table;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

Isa detected_isa() {
  static const Isa isa = probe_cpu();
  return isa;
}

Isa active_isa() { return active_table()->isa; }

void set_active_isa(Isa isa) {
  if (isa == Isa::kAvx2 && detected_isa() != Isa::kAvx2) {
    throw std::invalid_argument("AVX2 kernels are not available on this CPU/build");
  }
  active_table() = table_for(isa);
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return active_table()->dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  active_table()->axpy(alpha, x.data(), y.data(), x.size());
}

void add_inplace(std::span<double> y, std::span<const double> x) {
  assert(x.size() == y.size());
  active_table()->add_inplace(y.data(), x.data(), x.size());
}

std::uint64_t popcount(std::span<const std::uint64_t> words) {
  return active_table()->popcount(words.data(), words.size());
}

std::uint64_t and_popcount(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  assert(a.size() == b.size());
  return active_table()->and_popcount(a.data(), b.data(), a.size());
}

}  // namespace tpm::kernels
