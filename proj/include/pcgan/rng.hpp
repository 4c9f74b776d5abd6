#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

namespace pcgan {

using Rng = std::mt19937_64;

/// Mixes a base seed with stream tags into an independent 64-bit seed.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

}  // namespace pcgan
