#pragma once

#include <cstdint>

namespace cgl {

/// Splitmix64-style mixing of two values into an independent 64-bit seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace cgl
