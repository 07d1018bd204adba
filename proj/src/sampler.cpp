// SPDX-License-Identifier: Apache-2.0
#include "labelcon/sampler.hpp"

#include <algorithm>
#include <random>

namespace labelcon {

std::string to_string(SamplerStrategy s) { return s == SamplerStrategy::random ? "random" : "contrast"; }

SamplerStrategy parse_sampler(const std::string& text) {
  if (text == "random") return SamplerStrategy::random;
  if (text == "contrast") return SamplerStrategy::contrast;
  throw ConfigError("unknown sampler '" + text + "' (expected random or contrast)");
}

std::vector<std::vector<std::size_t>> BatchPlan::pairable() const {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& b : batches) {
    if (b.size() >= 2) out.push_back(b);
  }
  return out;
}

BatchPlan random_batches(std::span<const std::size_t> pool, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2, got " + std::to_string(batch_size));
  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.seed = seed;
  plan.strategy = SamplerStrategy::random;
  std::vector<std::size_t> order(pool.begin(), pool.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto end = std::min(order.size(), start + batch_size);
    plan.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                              order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

BatchPlan random_batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed) {
  const auto pool = dataset.select(Split::train);
  return random_batches(pool, batch_size, seed);
}

BatchPlan contrast_batches(const Dataset& dataset, std::span<const std::size_t> pool, std::size_t batch_size,
                           std::uint64_t seed) {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2, got " + std::to_string(batch_size));
  const std::size_t num_c = dataset.num_classes();

  // positives[c] holds positions into `pool`.
  std::vector<std::vector<std::size_t>> positives(num_c);
  for (std::size_t p = 0; p < pool.size(); ++p) {
    const auto& y = dataset[pool[p]].labels;
    for (std::size_t c = 0; c < num_c; ++c) {
      if (y.test(c)) positives[c].push_back(p);
    }
  }

  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.seed = seed;
  plan.strategy = SamplerStrategy::contrast;
  std::vector<std::size_t> occupied;
  for (std::size_t c = 0; c < num_c; ++c) {
    if (positives[c].empty()) plan.exempt_classes.push_back(c);
    else occupied.push_back(c);
  }
  if (!plan.exempt_classes.empty()) {
    std::string msg = "classes without positives are exempt from coverage:";
    for (auto c : plan.exempt_classes) msg += " " + dataset.class_names()[c];
    plan.warnings.push_back(msg);
  }
  if (batch_size < occupied.size()) {
    throw ConfigError("batch_size " + std::to_string(batch_size) + " cannot cover " +
                      std::to_string(occupied.size()) + " occupied classes");
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(pool.size());
  for (std::size_t p = 0; p < order.size(); ++p) order[p] = p;
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<bool> used(pool.size(), false);
  std::size_t remaining = pool.size();
  std::size_t cursor = 0;

  auto pick = [&](const std::vector<std::size_t>& candidates) {
    std::uniform_int_distribution<std::size_t> dist(0, candidates.size() - 1);
    return candidates[dist(rng)];
  };

  while (remaining > 0) {
    const std::size_t at_start = remaining;
    std::vector<std::size_t> batch;  // positions into pool
    std::vector<bool> in_batch(pool.size(), false);
    std::vector<bool> covered(num_c, false);
    auto place = [&](std::size_t p) {
      batch.push_back(p);
      in_batch[p] = true;
      if (!used[p]) {
        used[p] = true;
        --remaining;
      }
      const auto& y = dataset[pool[p]].labels;
      for (std::size_t c = 0; c < num_c; ++c) {
        if (y.test(c)) covered[c] = true;
      }
    };

    std::vector<std::size_t> class_order = occupied;
    std::shuffle(class_order.begin(), class_order.end(), rng);
    for (std::size_t c : class_order) {
      if (covered[c]) continue;
      std::vector<std::size_t> fresh;
      std::vector<std::size_t> any;
      for (std::size_t p : positives[c]) {
        if (in_batch[p]) continue;
        any.push_back(p);
        if (!used[p]) fresh.push_back(p);
      }
      // Reuse within the epoch only once a class has no unused positives.
      place(pick(fresh.empty() ? any : fresh));
    }

    auto place_next_unused = [&] {
      while (used[order[cursor]]) ++cursor;
      place(order[cursor]);
    };
    while (batch.size() < batch_size && remaining > 0) place_next_unused();
    // Coverage alone filled the batch with reused samples. Only reachable when
    // batch_size equals the occupied class count; take one extra row so the
    // epoch still terminates.
    if (remaining == at_start && remaining > 0) place_next_unused();

    std::vector<std::size_t> rows;
    rows.reserve(batch.size());
    for (std::size_t p : batch) rows.push_back(pool[p]);
    plan.batches.push_back(std::move(rows));
  }
  return plan;
}

BatchPlan contrast_batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed) {
  const auto pool = dataset.select(Split::train);
  return contrast_batches(dataset, pool, batch_size, seed);
}

}  // namespace labelcon
