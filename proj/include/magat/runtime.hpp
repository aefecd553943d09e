#pragma once

#include <cstdint>

namespace magat {

/// Keeps large tensor buffers on the heap instead of fresh mmaps; training
/// allocates and frees the same big blocks every batch. No-op off glibc.
void tune_allocator();

/// OpenMP worker count; `n <= 0` means all available cores.
void set_workers(int n);
int workers();

/// splitmix64 finaliser, used to derive independent seeds from (seed, index) pairs.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace magat
