#pragma once

// Shared test utilities: finite-difference checking and independent oracles.
// Oracles here are deliberately literal re-derivations, kept apart from the
// library implementations they check.

#include "creid/autodiff.hpp"
#include "creid/common.hpp"
#include "creid/data.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

namespace creid::testing {

inline double rel_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

// Central finite difference of a scalar-valued function w.r.t. one entry of a
// parameter. `f` must recompute the scalar from scratch on every call.
inline double fd_wrt(const std::function<double()>& f, double& entry,
                     double h = 1e-6) {
  const double saved = entry;
  const double step = h * std::max(1.0, std::abs(saved));
  entry = saved + step;
  const double up = f();
  entry = saved - step;
  const double down = f();
  entry = saved;
  return (up - down) / (2.0 * step);
}

// True when autodiff and finite differences agree within `tol` relative
// error (with an absolute floor for near-zero gradients).
inline bool grads_agree(double autodiff, double numeric, double tol = 1e-3) {
  if (std::abs(autodiff) < 1e-9 && std::abs(numeric) < 1e-7) return true;
  return rel_error(autodiff, numeric) < tol;
}

// Exhaustive hardest-mining triplet oracle: for every anchor, walk all
// (positive, negative) pairs, keep the hardest combination, hinge, average.
inline double triplet_brute_force(const Mat& features,
                                  const std::vector<int>& labels,
                                  double margin) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  double total = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    double hardest = -std::numeric_limits<double>::infinity();
    for (Eigen::Index p = 0; p < n; ++p) {
      if (p == a || labels[(size_t)p] != labels[(size_t)a]) continue;
      for (Eigen::Index q = 0; q < n; ++q) {
        if (labels[(size_t)q] == labels[(size_t)a]) continue;
        const double d_ap = (features.row(a) - features.row(p)).norm();
        const double d_an = (features.row(a) - features.row(q)).norm();
        hardest = std::max(hardest, d_ap + margin - d_an);
      }
    }
    total += std::max(0.0, hardest);
  }
  return total / static_cast<double>(n);
}

struct OracleRetrieval {
  double rank1 = 0.0;
  double mAP = 0.0;
  int excluded = 0;
};

// Literal re-derivation of the retrieval protocol: cosine distance, drop
// same-camera gallery entries, distractors are permanent non-matches, AP is
// the mean of precision at each true-match rank.
inline OracleRetrieval retrieval_brute_force(
    const Mat& qf, const std::vector<int>& q_ids, const std::vector<int>& q_cams,
    const Mat& gf, const std::vector<std::optional<int>>& g_ids,
    const std::vector<int>& g_cams, const std::vector<bool>& g_distractor) {
  OracleRetrieval out;
  std::vector<double> aps;
  int r1 = 0;
  for (Eigen::Index q = 0; q < qf.rows(); ++q) {
    std::vector<std::pair<double, Eigen::Index>> order;
    for (Eigen::Index g = 0; g < gf.rows(); ++g) {
      if (g_cams[(size_t)g] == q_cams[(size_t)q]) continue;
      const double na = qf.row(q).norm();
      const double nb = gf.row(g).norm();
      const double cosd = (na <= 0.0 || nb <= 0.0)
                              ? 1.0
                              : 1.0 - qf.row(q).dot(gf.row(g)) / (na * nb);
      order.emplace_back(cosd, g);
    }
    std::sort(order.begin(), order.end());
    auto is_match = [&](Eigen::Index g) {
      return !g_distractor[(size_t)g] && g_ids[(size_t)g].has_value() &&
             *g_ids[(size_t)g] == q_ids[(size_t)q];
    };
    int total_matches = 0;
    for (const auto& [d, g] : order) total_matches += is_match(g) ? 1 : 0;
    if (total_matches == 0) {
      ++out.excluded;
      continue;
    }
    if (is_match(order.front().second)) ++r1;
    double ap = 0.0;
    int seen = 0;
    for (size_t rank = 0; rank < order.size(); ++rank) {
      if (!is_match(order[rank].second)) continue;
      ++seen;
      ap += static_cast<double>(seen) / static_cast<double>(rank + 1);
    }
    aps.push_back(ap / total_matches);
  }
  if (!aps.empty()) {
    out.rank1 = static_cast<double>(r1) / static_cast<double>(aps.size());
    out.mAP = std::accumulate(aps.begin(), aps.end(), 0.0) /
              static_cast<double>(aps.size());
  }
  return out;
}

inline Mat random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                         double sd = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, sd);
  return m;
}

// Random stochastic rows (softmax of gaussian logits).
inline Mat random_simplex_rows(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Mat m = random_matrix(rng, rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    Eigen::ArrayXd e = (m.row(i).array() - m.row(i).maxCoeff()).exp();
    m.row(i) = e / e.sum();
  }
  return m;
}

// A labels vector where every label has >= 2 members and >= 2 labels exist.
inline std::vector<int> random_pk_labels(Rng& rng, int num_classes,
                                         int min_per_class, int extra) {
  std::vector<int> labels;
  for (int c = 0; c < num_classes; ++c)
    for (int k = 0; k < min_per_class; ++k) labels.push_back(c);
  for (int i = 0; i < extra; ++i)
    labels.push_back(static_cast<int>(rng.uniform_int(0, num_classes - 1)));
  rng.shuffle(labels);
  return labels;
}

}  // namespace creid::testing
