// SPDX-License-Identifier: Apache-2.0
#include "labelcon/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace labelcon {

using nlohmann::json;

const std::vector<std::string>& default_frame_names() {
  static const std::vector<std::string> names{
      "Economic",
      "Capacity_and_resources",
      "Morality",
      "Fairness_and_equality",
      "Legality_Constitutionality_and_jurisprudence",
      "Policy_prescription_and_evaluation",
      "Crime_and_punishment",
      "Security_and_defense",
      "Health_and_safety",
      "Quality_of_life",
      "Cultural_identity",
      "Public_opinion",
      "Political",
      "External_regulation_and_reputation",
  };
  return names;
}

LabelVector::LabelVector(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto b : bits_) {
    if (b > 1) throw ArgumentError("label bit must be 0 or 1, got " + std::to_string(b));
  }
}

LabelVector LabelVector::from_ints(std::initializer_list<int> bits) {
  std::vector<std::uint8_t> out;
  out.reserve(bits.size());
  for (int b : bits) {
    if (b != 0 && b != 1) throw ArgumentError("label bit must be 0 or 1");
    out.push_back(static_cast<std::uint8_t>(b));
  }
  return LabelVector(std::move(out));
}

std::size_t LabelVector::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::string LabelVector::to_string() const {
  std::string s;
  s.reserve(bits_.size());
  for (auto b : bits_) s.push_back(b ? '1' : '0');
  return s;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "dev") return Split::dev;
  if (text == "test") return Split::test;
  throw ArgumentError("unknown split '" + text + "'");
}

Dataset::Dataset(std::vector<Sample> samples, std::size_t num_classes, std::size_t embed_dim,
                 std::vector<std::string> class_names)
    : samples_(std::move(samples)),
      num_classes_(num_classes),
      embed_dim_(embed_dim),
      class_names_(std::move(class_names)) {
  if (num_classes_ == 0) throw LoadError("num_classes must be >= 1");
  if (embed_dim_ == 0) throw LoadError("embed_dim must be >= 1");
  if (class_names_.size() != num_classes_) {
    throw LoadError("class_names has " + std::to_string(class_names_.size()) +
                    " entries, expected " + std::to_string(num_classes_));
  }
  std::unordered_set<std::string> ids;
  for (const auto& s : samples_) {
    if (s.labels.size() != num_classes_) {
      throw LoadError("label length mismatch for sample '" + s.id + "'");
    }
    if (s.embedding.size() != embed_dim_) {
      throw LoadError("embedding length mismatch for sample '" + s.id + "'");
    }
    for (double v : s.embedding) {
      if (!std::isfinite(v)) throw LoadError("non-finite embedding value in sample '" + s.id + "'");
    }
    if (!ids.insert(s.id).second) throw LoadError("duplicate sample id '" + s.id + "'");
  }
}

std::vector<std::size_t> Dataset::select(Split split,
                                         std::span<const std::string> languages) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (s.split != split) continue;
    if (!languages.empty() &&
        std::find(languages.begin(), languages.end(), s.lang) == languages.end()) {
      continue;
    }
    out.push_back(i);
  }
  return out;
}

std::vector<std::string> Dataset::languages(Split split) const {
  std::set<std::string> langs;
  for (const auto& s : samples_) {
    if (s.split == split) langs.insert(s.lang);
  }
  return {langs.begin(), langs.end()};
}

Matrix Dataset::embeddings(std::span<const std::size_t> rows) const {
  Matrix m(rows.size(), embed_dim_);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& e = samples_.at(rows[r]).embedding;
    std::copy(e.begin(), e.end(), m.row(r).begin());
  }
  return m;
}

Matrix Dataset::labels(std::span<const std::size_t> rows) const {
  Matrix m(rows.size(), num_classes_);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& y = samples_.at(rows[r]).labels;
    for (std::size_t c = 0; c < num_classes_; ++c) m(r, c) = y.test(c) ? 1.0 : 0.0;
  }
  return m;
}

std::size_t hamming_distance(const LabelVector& a, const LabelVector& b) {
  if (a.size() != b.size()) {
    throw DimensionError("hamming_distance: label lengths " + std::to_string(a.size()) +
                         " and " + std::to_string(b.size()) + " differ");
  }
  auto x = a.bits();
  auto y = b.bits();
  std::size_t d = 0;
  for (std::size_t k = 0; k < x.size(); ++k) d += static_cast<std::size_t>(x[k] ^ y[k]);
  return d;
}

std::size_t hamming_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("hamming_distance: label lengths differ");
  std::size_t d = 0;
  for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] != b[k]) ? 1 : 0;
  return d;
}

double sigma_weight(const LabelVector& a, const LabelVector& b, std::size_t num_classes) {
  const auto d = hamming_distance(a, b);
  if (num_classes != a.size()) {
    throw DimensionError("sigma_weight: num_classes " + std::to_string(num_classes) +
                         " does not match label length " + std::to_string(a.size()));
  }
  return 1.0 - static_cast<double>(d) / static_cast<double>(num_classes);
}

double gamma_weight(const LabelVector& a, const LabelVector& b) {
  return static_cast<double>(hamming_distance(a, b));
}

namespace {

std::string at_line(std::size_t line) { return " at line " + std::to_string(line); }

template <typename T>
T required(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw LoadError(std::string("missing field '") + key + "'" + at_line(line));
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw LoadError(std::string("bad type for field '") + key + "'" + at_line(line));
  }
}

Sample parse_sample(const json& obj, std::size_t line, std::size_t num_classes,
                    std::size_t embed_dim) {
  if (!obj.is_object()) throw LoadError("expected a JSON object" + at_line(line));
  Sample s;
  s.id = required<std::string>(obj, "id", line);
  s.lang = required<std::string>(obj, "lang", line);
  try {
    s.split = parse_split(required<std::string>(obj, "split", line));
  } catch (const ArgumentError& e) {
    throw LoadError(std::string(e.what()) + at_line(line));
  }

  auto labels = obj.find("labels");
  if (labels == obj.end() || !labels->is_array()) {
    throw LoadError("missing field 'labels'" + at_line(line));
  }
  if (labels->size() != num_classes) throw LoadError("label length mismatch" + at_line(line));
  std::vector<std::uint8_t> bits;
  bits.reserve(num_classes);
  for (const auto& b : *labels) {
    if (!b.is_number_integer() || (b.get<int>() != 0 && b.get<int>() != 1)) {
      throw LoadError("label entries must be 0 or 1" + at_line(line));
    }
    bits.push_back(static_cast<std::uint8_t>(b.get<int>()));
  }
  s.labels = LabelVector(std::move(bits));

  auto emb = obj.find("embedding");
  if (emb == obj.end() || !emb->is_array()) {
    throw LoadError("missing field 'embedding'" + at_line(line));
  }
  if (emb->size() != embed_dim) throw LoadError("embedding length mismatch" + at_line(line));
  s.embedding.reserve(embed_dim);
  for (const auto& v : *emb) {
    // NaN/Inf are not valid JSON numbers; nlohmann reads them back as null.
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      throw LoadError("non-finite embedding value in sample '" + s.id + "'" + at_line(line));
    }
    s.embedding.push_back(v.get<double>());
  }

  if (auto text = obj.find("text"); text != obj.end() && !text->is_null()) {
    s.text = text->get<std::string>();
  }
  return s;
}

std::string replace_nonfinite_tokens(const std::string& raw) {
  static const std::regex token(R"((-?Infinity|NaN)(?=\s*[,\]]))");
  return std::regex_replace(raw, token, "null");
}

}  // namespace

Dataset parse_dataset(const std::string& content) {
  std::istringstream in(content);
  std::string raw;
  std::size_t line = 0;
  std::size_t num_classes = 0;
  std::size_t embed_dim = 0;
  std::vector<std::string> class_names;
  bool have_header = false;
  std::vector<Sample> samples;
  std::unordered_set<std::string> ids;

  while (std::getline(in, raw)) {
    ++line;
    if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(raw);
    } catch (const json::parse_error& e) {
      // Python's json module emits bare NaN/Infinity; read them as null so the
      // sample-level check can name the offending id.
      obj = json::parse(replace_nonfinite_tokens(raw), nullptr, false);
      if (obj.is_discarded()) {
        throw LoadError(std::string("malformed JSON") + at_line(line) + ": " + e.what());
      }
    }
    if (!have_header) {
      num_classes = required<std::size_t>(obj, "num_classes", line);
      embed_dim = required<std::size_t>(obj, "embed_dim", line);
      if (obj.contains("class_names")) {
        class_names = required<std::vector<std::string>>(obj, "class_names", line);
      } else if (num_classes == kDefaultNumClasses) {
        class_names = default_frame_names();
      } else {
        for (std::size_t c = 0; c < num_classes; ++c) class_names.push_back("class_" + std::to_string(c));
      }
      if (class_names.size() != num_classes) {
        throw LoadError("class_names length does not match num_classes" + at_line(line));
      }
      have_header = true;
      continue;
    }
    Sample s = parse_sample(obj, line, num_classes, embed_dim);
    if (!ids.insert(s.id).second) throw LoadError("duplicate id '" + s.id + "'" + at_line(line));
    samples.push_back(std::move(s));
  }
  if (!have_header) throw LoadError("dataset has no header line");
  return Dataset(std::move(samples), num_classes, embed_dim, std::move(class_names));
}

std::string render_dataset(const Dataset& dataset) {
  std::string out;
  json header{{"num_classes", dataset.num_classes()},
              {"embed_dim", dataset.embed_dim()},
              {"class_names", dataset.class_names()}};
  out += header.dump();
  out += '\n';
  for (const auto& s : dataset.samples()) {
    json obj;
    obj["id"] = s.id;
    obj["lang"] = s.lang;
    obj["split"] = to_string(s.split);
    std::vector<int> bits(s.labels.bits().begin(), s.labels.bits().end());
    obj["labels"] = bits;
    obj["embedding"] = s.embedding;
    if (s.text) obj["text"] = *s.text;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open dataset file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset file '" + path.string() + "'");
  out << render_dataset(dataset);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Dataset synth_generate(const SynthConfig& cfg) {
  if (cfg.num_samples < 1) throw ArgumentError("synth: num_samples must be >= 1");
  if (cfg.num_classes < 1) throw ArgumentError("synth: num_classes must be >= 1");
  if (cfg.embed_dim < 2) throw ArgumentError("synth: embed_dim must be >= 2");
  if (cfg.languages.empty()) throw ArgumentError("synth: at least one language required");
  if (!(cfg.label_correlation >= 0.0 && cfg.label_correlation <= 1.0)) {
    throw ArgumentError("synth: label_correlation must lie in [0, 1]");
  }
  if (cfg.dev_fraction < 0.0 || cfg.test_fraction < 0.0 ||
      cfg.dev_fraction + cfg.test_fraction >= 1.0) {
    throw ArgumentError("synth: dev/test fractions must be non-negative and sum below 1");
  }

  const std::size_t n = cfg.num_samples;
  const std::size_t num_c = cfg.num_classes;
  const std::size_t dim = cfg.embed_dim;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  auto unit_vector = [&] {
    std::vector<double> v(dim);
    for (auto& x : v) x = gauss(rng);
    const double len = norm(v);
    for (auto& x : v) x /= len;
    return v;
  };

  // Shared direction: every embedding leans toward it, so untrained pairwise
  // cosines are high regardless of label distance.
  const auto common = unit_vector();
  std::vector<std::vector<double>> prototypes;
  for (std::size_t c = 0; c < num_c; ++c) prototypes.push_back(unit_vector());
  std::vector<std::vector<double>> lang_offsets;
  for (std::size_t l = 0; l < cfg.languages.size(); ++l) lang_offsets.push_back(unit_vector());

  // Skewed class prevalence: the first class is frequent, the tail is rare.
  std::vector<double> prevalence(num_c);
  for (std::size_t c = 0; c < num_c; ++c) prevalence[c] = 0.45 * std::pow(0.8, static_cast<double>(c));

  const double signal = cfg.label_correlation;
  const double noise = 1.0 - 0.5 * cfg.label_correlation;
  const auto& names = num_c == kDefaultNumClasses ? default_frame_names() : std::vector<std::string>{};

  std::vector<Sample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "s%06zu", i);
    s.id = id;
    const std::size_t lang_idx = i % cfg.languages.size();
    s.lang = cfg.languages[lang_idx];

    LabelVector y(num_c);
    for (std::size_t c = 0; c < num_c; ++c) {
      if (unif(rng) < prevalence[c]) y.set(c);
    }
    if (!y.any()) y.set(std::min(num_c - 1, static_cast<std::size_t>(unif(rng) * 3.0)));
    // The first |C| samples each carry their own class so none is empty.
    if (n >= num_c && i < num_c) y.set(i);
    s.labels = y;

    const double u = unif(rng);
    if (i < num_c) {
      s.split = Split::train;
    } else if (u < cfg.dev_fraction) {
      s.split = Split::dev;
    } else if (u < cfg.dev_fraction + cfg.test_fraction) {
      s.split = Split::test;
    } else {
      s.split = Split::train;
    }

    std::vector<double> e(dim, 0.0);
    const double inv_count = 1.0 / std::sqrt(static_cast<double>(y.count()));
    for (std::size_t c = 0; c < num_c; ++c) {
      if (!y.test(c)) continue;
      for (std::size_t k = 0; k < dim; ++k) e[k] += signal * inv_count * prototypes[c][k];
    }
    const double noise_scale = noise / std::sqrt(static_cast<double>(dim));
    for (std::size_t k = 0; k < dim; ++k) {
      e[k] += common[k] + 0.3 * lang_offsets[lang_idx][k] + noise_scale * gauss(rng);
    }
    s.embedding = std::move(e);
    samples.push_back(std::move(s));
  }

  std::vector<std::string> class_names = names;
  if (class_names.empty()) {
    for (std::size_t c = 0; c < num_c; ++c) class_names.push_back("class_" + std::to_string(c));
  }
  return Dataset(std::move(samples), num_c, dim, std::move(class_names));
}

}  // namespace labelcon
