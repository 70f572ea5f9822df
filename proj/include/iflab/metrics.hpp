#pragma once

// Ranking metrics and label rules used by the evaluation protocols.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "iflab/errors.hpp"
#include "iflab/influence.hpp"

namespace iflab {

namespace detail {

/// Scores oriented so that larger means "more likely in the positive class".
inline std::vector<double> oriented(std::span<const double> scores, Direction d) {
  std::vector<double> out(scores.begin(), scores.end());
  if (d == Direction::lower_is_noisier)
    for (double& s : out) s = -s;
  return out;
}

inline void check_binary(std::span<const double> scores, const std::vector<bool>& flags, const char* op) {
  require_same_size(scores.size(), flags.size(), op);
  const auto pos = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
  if (pos == 0 || pos == flags.size())
    throw UsageError(std::string(op) + ": needs at least one positive and one negative");
}

}  // namespace detail

/// P(random positive outranks random negative), ties counted 1/2, computed
/// from average ranks.
inline double roc_auc(std::span<const double> scores, const std::vector<bool>& positive,
                      Direction direction = Direction::higher_is_noisier) {
  detail::check_binary(scores, positive, "roc_auc");
  const auto s = detail::oriented(scores, direction);
  const std::size_t n = s.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && s[order[j + 1]] == s[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos_rank_sum = 0.0;
  double npos = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (positive[i]) {
      pos_rank_sum += rank[i];
      npos += 1.0;
    }
  const double nneg = static_cast<double>(n) - npos;
  return (pos_rank_sum - npos * (npos + 1.0) / 2.0) / (npos * nneg);
}

/// Non-interpolated average precision: mean over positives of the precision
/// at that positive's rank. Equal scores keep input order.
inline double average_precision(std::span<const double> scores, const std::vector<bool>& positive,
                                Direction direction = Direction::higher_is_noisier) {
  detail::check_binary(scores, positive, "average_precision");
  const auto s = detail::oriented(scores, direction);
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (positive[order[r]]) {
      hits += 1.0;
      sum += hits / static_cast<double>(r + 1);
    }
  }
  return sum / hits;
}

struct RelabelResult {
  int label = 0;
  bool tie = false;
};

/// Class whose candidate-labeled copy of the sample is most helpful to the
/// validation set. Signed estimators (lower_is_noisier) take the largest
/// score; quadratic-form estimators (higher_is_noisier) the smallest. Exact
/// ties go to the smallest class index.
inline RelabelResult relabel(int num_classes, const std::function<double(int)>& candidate_score, Direction direction) {
  if (num_classes < 2) throw UsageError("relabel: K must be >= 2");
  RelabelResult best{0, false};
  double best_value = 0.0;
  for (int k = 0; k < num_classes; ++k) {
    double s = 0.0;
    try {
      s = candidate_score(k);
    } catch (const Error& e) {
      throw Error("relabel: scoring class " + std::to_string(k) + " failed: " + e.what());
    }
    const double helpful = direction == Direction::lower_is_noisier ? s : -s;
    if (k == 0 || helpful > best_value) {
      best = {k, false};
      best_value = helpful;
    } else if (helpful == best_value) {
      best.tie = true;
    }
  }
  return best;
}

inline std::vector<bool> pseudo_label(std::span<const int> train_labels, int val_label) {
  std::vector<bool> flags;
  flags.reserve(train_labels.size());
  for (int y : train_labels) flags.push_back(y == val_label);
  return flags;
}

enum class Extreme { largest, smallest };

/// The helpful extreme of a score convention.
inline Extreme helpful_extreme(Direction d) {
  return d == Direction::lower_is_noisier ? Extreme::largest : Extreme::smallest;
}

/// Fraction of the s training points at the chosen extreme that share the
/// validation label. Equal scores keep input order.
inline double recall_at_s(std::span<const double> scores, std::span<const int> train_labels, int val_label,
                          std::size_t s, Extreme extreme) {
  detail::require_same_size(scores.size(), train_labels.size(), "recall_at_s");
  if (s < 1) throw UsageError("recall_at_s: s must be >= 1");
  if (s > scores.size()) throw UsageError("recall_at_s: s exceeds the number of training points");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  if (extreme == Extreme::largest)
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  else
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::size_t hits = 0;
  for (std::size_t r = 0; r < s; ++r) hits += train_labels[order[r]] == val_label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(s);
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation (0 for fewer than two values).
inline double std_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  detail::require_same_size(a.size(), b.size(), "pearson");
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Average ranks (1-based), ties sharing the mean rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j + 1 < v.size() && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return rank;
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

}  // namespace iflab
