#pragma once
// Data-parallel inner loops shared by the learners and the classifier.
//
// Every kernel has a portable scalar reference in `tpm::kernels::scalar`.
// On x86-64 an AVX2 variant is compiled into its own translation unit and
// selected at startup when the CPU reports AVX2 + FMA + POPCNT. The public
// entry points below forward to whichever table is active.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace tpm::kernels {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

// Best instruction set supported by this binary on this CPU.
Isa detected_isa();
Isa active_isa();
// Switch the dispatch table. Requesting an unsupported ISA throws
// std::invalid_argument. Not thread-safe with respect to running kernels.
void set_active_isa(Isa isa);

// sum_i a[i] * b[i]. The AVX2 variant reassociates, so results may differ from
// the scalar reference in the last few ulps.
double dot(std::span<const double> a, std::span<const double> b);

// y += alpha * x, elementwise (no FMA contraction: bitwise equal across ISAs).
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// y += x, elementwise. Bitwise equal across ISAs.
void add_inplace(std::span<double> y, std::span<const double> x);

// Number of set bits in words.
std::uint64_t popcount(std::span<const std::uint64_t> words);

// Number of set bits in (a & b).
std::uint64_t and_popcount(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void add_inplace(double* y, const double* x, std::size_t n);
std::uint64_t popcount(const std::uint64_t* w, std::size_t n);
std::uint64_t and_popcount(const std::uint64_t* a, const std::uint64_t* b, std::size_t n);
}  // namespace scalar

}  // namespace tpm::kernels
