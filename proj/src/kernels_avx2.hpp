#pragma once

#include <cstddef>
#include <cstdint>

namespace tpm::kernels::avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void add_inplace(double* y, const double* x, std::size_t n);
std::uint64_t popcount(const std::uint64_t* w, std::size_t n);
std::uint64_t and_popcount(const std::uint64_t* a, const std::uint64_t* b, std::size_t n);
}  // namespace tpm::kernels::avx2
