#pragma once

// Labeled samples, synthetic Gaussian-mixture generation, label-noise
// injection, seeded splits and the JSON-lines dataset format.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "iflab/errors.hpp"
#include "iflab/numerics.hpp"

namespace iflab {

inline constexpr std::string_view kDatasetVersion = "iflab-ds-1";

struct Sample {
  std::uint64_t id = 0;
  Vector x;
  int label = 0;
  std::optional<int> true_label;
  std::optional<bool> is_noisy;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 2;
  std::size_t dim = 0;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  bool operator==(const Dataset&) const = default;

  /// Throws on label range, dimension or duplicate-id violations.
  void validate() const {
    if (num_classes < 2) throw UsageError("dataset: K must be >= 2");
    std::set<std::uint64_t> ids;
    for (const auto& s : samples) {
      if (s.x.size() != dim) {
        throw DimensionError("dataset: sample " + std::to_string(s.id) + " has dim " +
                             std::to_string(s.x.size()) + ", expected " + std::to_string(dim));
      }
      if (s.label < 0 || s.label >= num_classes) {
        throw LabelError("dataset: sample " + std::to_string(s.id) + " label out of range");
      }
      if (!ids.insert(s.id).second) {
        throw UsageError("dataset: duplicate id " + std::to_string(s.id));
      }
    }
  }

  /// Copy without the sample carrying `id`.
  Dataset without(std::uint64_t id) const {
    Dataset out{{}, num_classes, dim};
    out.samples.reserve(samples.size());
    for (const auto& s : samples)
      if (s.id != id) out.samples.push_back(s);
    return out;
  }

  std::vector<bool> noisy_flags() const {
    std::vector<bool> flags;
    flags.reserve(samples.size());
    for (const auto& s : samples) flags.push_back(s.is_noisy.value_or(false));
    return flags;
  }
};

enum class NoiseKind { symmetric, asymmetric_pairflip };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::symmetric;
  double rate = 0.0;
};

/// Named desk-scale presets. These are analogues of the CIFAR-10N noise
/// levels, not reproductions of its instance-dependent noise.
inline NoiseSpec noise_preset(std::string_view name) {
  if (name == "none" || name == "clean") return {NoiseKind::symmetric, 0.0};
  if (name == "aggre-like") return {NoiseKind::symmetric, 0.10};
  if (name == "random-like") return {NoiseKind::symmetric, 0.18};
  if (name == "worst-like") return {NoiseKind::symmetric, 0.40};
  throw UsageError("unknown noise preset '" + std::string(name) + "'");
}

/// K isotropic unit-variance Gaussian blobs. Class means are class_sep times
/// random unit directions, Gram-Schmidt orthogonalized when dim >= K.
inline Dataset gen_gaussian_mixture(int num_classes, std::size_t per_class_n, std::size_t dim,
                                    double class_sep, RngState& rng) {
  if (dim < 1) throw DimensionError("gen_gaussian_mixture: dim must be >= 1");
  if (num_classes < 2) throw UsageError("gen_gaussian_mixture: K must be >= 2");
  if (per_class_n < 1) throw UsageError("gen_gaussian_mixture: per_class_n must be >= 1");
  if (!(class_sep > 0.0)) throw UsageError("gen_gaussian_mixture: class_sep must be > 0");

  const auto k = static_cast<std::size_t>(num_classes);
  std::vector<Vector> means;
  for (std::size_t c = 0; c < k; ++c) {
    Vector m = rand_gaussian(rng, dim);
    if (dim >= k) {
      for (const auto& prev : means) axpy(-dot(m, prev), prev, m);
    }
    const double n = norm2(m);
    for (double& v : m) v /= n;
    means.push_back(std::move(m));
  }
  for (auto& m : means)
    for (double& v : m) v *= class_sep;

  Dataset ds{{}, num_classes, dim};
  ds.samples.reserve(k * per_class_n);
  std::uint64_t id = 0;
  for (std::size_t i = 0; i < per_class_n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      Vector x = rand_gaussian(rng, dim);
      axpy(1.0, means[c], x);
      const int y = static_cast<int>(c);
      ds.samples.push_back(Sample{id++, std::move(x), y, y, false});
    }
  }
  return ds;
}

struct NoiseResult {
  Dataset dataset;
  std::size_t flipped = 0;
  bool warning = false;  // rate * N < 1: nothing was changed
};

inline NoiseResult inject_label_noise(const Dataset& dataset, const NoiseSpec& spec, RngState& rng) {
  if (!(spec.rate >= 0.0 && spec.rate < 1.0)) throw UsageError("noise rate must be in [0, 1)");
  NoiseResult result{dataset, 0, false};
  const std::size_t n = dataset.size();
  for (const auto& s : dataset.samples) {
    if (!s.true_label) throw UsageError("inject_label_noise: sample without true label");
  }
  if (spec.rate * static_cast<double>(n) < 1.0) {
    result.warning = true;
    return result;
  }
  const auto flips = static_cast<std::size_t>(std::llround(spec.rate * static_cast<double>(n)));
  const auto order = permutation(rng, n);
  const int k = dataset.num_classes;
  for (std::size_t i = 0; i < flips; ++i) {
    Sample& s = result.dataset.samples[order[i]];
    const int truth = *s.true_label;
    int noisy = 0;
    if (spec.kind == NoiseKind::symmetric) {
      const int draw = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(k - 1)));
      noisy = draw >= truth ? draw + 1 : draw;
    } else {
      noisy = (truth + 1) % k;
    }
    s.label = noisy;
    s.is_noisy = true;
  }
  for (auto& s : result.dataset.samples) {
    if (!s.is_noisy.value_or(false)) {
      s.label = *s.true_label;
      s.is_noisy = false;
    }
  }
  result.flipped = flips;
  return result;
}

/// Shuffled disjoint partition. Part sizes use largest-remainder rounding:
/// floor(f_i * N) each, then the leftover samples go to the parts with the
/// largest fractional remainders (ties to the earlier part).
inline std::vector<Dataset> split(const Dataset& dataset, const std::vector<double>& fractions,
                                  RngState& rng) {
  if (fractions.empty()) throw UsageError("split: no fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw UsageError("split: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw UsageError("split: fractions must sum to 1");

  const std::size_t n = dataset.size();
  std::vector<std::size_t> sizes(fractions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double exact = fractions[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += sizes[i];
    remainders.emplace_back(exact - static_cast<double>(sizes[i]), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++sizes[remainders[r % remainders.size()].second];

  const auto order = permutation(rng, n);
  std::vector<Dataset> parts;
  std::size_t cursor = 0;
  for (std::size_t size : sizes) {
    Dataset part{{}, dataset.num_classes, dataset.dim};
    part.samples.reserve(size);
    for (std::size_t i = 0; i < size; ++i) part.samples.push_back(dataset.samples[order[cursor++]]);
    parts.push_back(std::move(part));
  }
  return parts;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  nlohmann::json header = {{"version", kDatasetVersion}, {"K", ds.num_classes}, {"dim", ds.dim}};
  out << header.dump() << '\n';
  for (const auto& s : ds.samples) {
    nlohmann::json line = {{"id", s.id}, {"x", s.x}, {"y", s.label}};
    if (s.true_label) line["true_y"] = *s.true_label;
    if (s.is_noisy) line["noisy"] = *s.is_noisy;
    out << line.dump() << '\n';
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

inline Dataset parse_dataset(std::istream& in) {
  std::string text;
  std::size_t line_no = 0;
  Dataset ds;
  bool have_header = false;
  std::set<std::uint64_t> ids;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    try {
      if (!have_header) {
        if (j.value("version", std::string{}) != kDatasetVersion)
          throw ParseError("field 'version': expected " + std::string(kDatasetVersion), line_no);
        ds.num_classes = j.at("K").get<int>();
        ds.dim = j.at("dim").get<std::size_t>();
        if (ds.num_classes < 2) throw ParseError("field 'K': must be >= 2", line_no);
        have_header = true;
        continue;
      }
      Sample s;
      s.id = j.at("id").get<std::uint64_t>();
      s.x = j.at("x").get<Vector>();
      s.label = j.at("y").get<int>();
      if (j.contains("true_y")) s.true_label = j["true_y"].get<int>();
      if (j.contains("noisy")) s.is_noisy = j["noisy"].get<bool>();
      if (s.x.size() != ds.dim)
        throw ParseError("field 'x': length " + std::to_string(s.x.size()) + " != declared dim " +
                             std::to_string(ds.dim),
                         line_no);
      if (s.label < 0 || s.label >= ds.num_classes)
        throw ParseError("field 'y': label " + std::to_string(s.label) + " outside [0, K)", line_no);
      if (s.true_label && (*s.true_label < 0 || *s.true_label >= ds.num_classes))
        throw ParseError("field 'true_y': label outside [0, K)", line_no);
      if (!all_finite(s.x)) throw ParseError("field 'x': non-finite value", line_no);
      if (!ids.insert(s.id).second) throw ParseError("field 'id': duplicate", line_no);
      ds.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad field: ") + e.what(), line_no);
    }
  }
  if (!have_header) throw ParseError("missing header", line_no);
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return parse_dataset(in);
}

}  // namespace iflab
