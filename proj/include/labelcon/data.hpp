// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "labelcon/matrix.hpp"

namespace labelcon {

/// The 14 media-frame classes used as the default label taxonomy.
const std::vector<std::string>& default_frame_names();

inline constexpr std::size_t kDefaultNumClasses = 14;

/// Dense multi-hot label vector. Each entry is exactly 0 or 1.
class LabelVector {
 public:
  LabelVector() = default;
  explicit LabelVector(std::size_t num_classes) : bits_(num_classes, 0) {}
  explicit LabelVector(std::vector<std::uint8_t> bits);

  static LabelVector from_ints(std::initializer_list<int> bits);

  std::size_t size() const { return bits_.size(); }
  bool test(std::size_t c) const { return bits_[c] != 0; }
  void set(std::size_t c, bool on = true) { bits_[c] = on ? 1 : 0; }
  std::size_t count() const;
  bool any() const { return count() > 0; }

  std::span<const std::uint8_t> bits() const { return bits_; }
  std::string to_string() const;

  friend bool operator==(const LabelVector&, const LabelVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

enum class Split { train, dev, test };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct Sample {
  std::string id;
  std::string lang;
  Split split = Split::train;
  std::vector<double> embedding;
  LabelVector labels;
  std::optional<std::string> text;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Immutable collection of samples sharing one embedding width and one label
/// taxonomy. Construction validates every invariant.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<Sample> samples, std::size_t num_classes, std::size_t embed_dim,
          std::vector<std::string> class_names);

  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const { return samples_.size(); }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t embed_dim() const { return embed_dim_; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  /// Indices of samples in `split`, optionally restricted to `languages`
  /// (empty means every language). File order is preserved.
  std::vector<std::size_t> select(Split split,
                                  std::span<const std::string> languages = {}) const;

  /// Sorted distinct language tags among samples of `split`.
  std::vector<std::string> languages(Split split) const;

  /// Gathers embeddings / labels of the given rows into batch matrices.
  Matrix embeddings(std::span<const std::size_t> rows) const;
  Matrix labels(std::span<const std::size_t> rows) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::vector<Sample> samples_;
  std::size_t num_classes_ = 0;
  std::size_t embed_dim_ = 0;
  std::vector<std::string> class_names_;
};

std::size_t hamming_distance(const LabelVector& a, const LabelVector& b);
std::size_t hamming_distance(std::span<const double> a, std::span<const double> b);

/// sigma = 1 - d/|C|: attraction weight between two positives.
double sigma_weight(const LabelVector& a, const LabelVector& b, std::size_t num_classes);

/// gamma = d (unnormalized): repulsion weight toward a negative.
double gamma_weight(const LabelVector& a, const LabelVector& b);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

/// Parses / renders the line format from an in-memory buffer.
Dataset parse_dataset(const std::string& content);
std::string render_dataset(const Dataset& dataset);

struct SynthConfig {
  std::size_t num_samples = 280;
  std::size_t num_classes = kDefaultNumClasses;
  std::size_t embed_dim = 32;
  std::vector<std::string> languages{"en"};
  double label_correlation = 0.3;
  std::uint64_t seed = 0;
  // Fractions of samples assigned to dev and test; the rest is train.
  double dev_fraction = 0.15;
  double test_fraction = 0.15;
};

/// Synthetic multi-label dataset with class-prototype structure in embedding
/// space. Class prevalence is skewed so the contrast sampler has work to do.
Dataset synth_generate(const SynthConfig& config);

}  // namespace labelcon
