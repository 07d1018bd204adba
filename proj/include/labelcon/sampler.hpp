// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "labelcon/data.hpp"

namespace labelcon {

enum class SamplerStrategy { random, contrast };

std::string to_string(SamplerStrategy s);
SamplerStrategy parse_sampler(const std::string& text);

inline constexpr std::size_t kDefaultBatchSize = 26;

// One epoch worth of batches. Entries are dataset row indices.
struct BatchPlan {
  std::vector<std::vector<std::size_t>> batches;
  std::size_t batch_size = kDefaultBatchSize;
  std::uint64_t seed = 0;
  SamplerStrategy strategy = SamplerStrategy::random;
  // Classes without any positive in the pool; exempt from the coverage
  // guarantee.
  std::vector<std::size_t> exempt_classes;
  std::vector<std::string> warnings;

  /// Batches with at least two rows (the contrastive loss needs pairs).
  std::vector<std::vector<std::size_t>> pairable() const;
};

/// Seeded permutation of `pool` cut into batches of `batch_size`; the last
/// batch may be short.
BatchPlan random_batches(std::span<const std::size_t> pool, std::size_t batch_size, std::uint64_t seed);
BatchPlan random_batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed);

/// Batches in which every class with a positive in `pool` has at least one
/// positive. Per batch, classes are visited in a seeded order and one
/// positive is placed for each class not yet covered, preferring samples not
/// yet used this epoch; remaining slots are filled from the unused pool.
/// Batches are emitted until every pool sample has appeared once.
BatchPlan contrast_batches(const Dataset& dataset, std::span<const std::size_t> pool, std::size_t batch_size,
                           std::uint64_t seed);
BatchPlan contrast_batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed);

}  // namespace labelcon
