#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <random>

namespace forler {

// All arithmetic is 64-bit floating point.
using Scalar = double;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// SplitMix64 finalizer; decorrelates nearby integer seeds.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent seed from a base seed and up to two stream labels.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                          std::uint64_t substream = 0);

inline Rng make_rng(std::uint64_t base, std::uint64_t stream,
                    std::uint64_t substream = 0) {
  return Rng(derive_seed(base, stream, substream));
}

/// CRC-32 (IEEE 802.3 polynomial, reflected).
std::uint32_t crc32(const void* data, std::size_t len);

}  // namespace forler
