#include "creid/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <set>

#include <fmt/format.h>

namespace creid::clustering {

std::string to_string(Algorithm a) {
  return a == Algorithm::dbscan ? "dbscan" : "kmeans";
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "dbscan") return Algorithm::dbscan;
  if (s == "kmeans") return Algorithm::kmeans;
  throw Error(fmt::format("unknown clustering algorithm '{}'", s));
}

int PseudoLabeling::outlier_count() const {
  int n = 0;
  for (const auto& a : assignments)
    if (!a) ++n;
  return n;
}

std::vector<int> PseudoLabeling::assigned_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i]) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> PseudoLabeling::labels_for(const std::vector<int>& indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) {
    if (i < 0 || static_cast<size_t>(i) >= assignments.size())
      throw Error(fmt::format("labels_for: index {} out of range", i));
    if (!assignments[static_cast<size_t>(i)])
      throw Error(fmt::format("labels_for: sample {} is an outlier", i));
    out.push_back(*assignments[static_cast<size_t>(i)]);
  }
  return out;
}

Mat normalize_rows(const Mat& m, double eps) {
  Mat out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > eps) out.row(i) /= n;
  }
  return out;
}

namespace {

Mat pairwise_distances(const Mat& x) {
  const Eigen::Index n = x.rows();
  Mat d = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (x.row(i) - x.row(j)).norm();
      d(i, j) = v;
      d(j, i) = v;
    }
  return d;
}

double percentile_eps(const Mat& features, double percentile, int subsample) {
  const Eigen::Index n = features.rows();
  std::vector<Eigen::Index> pick;
  if (n <= subsample) {
    pick.resize(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) pick[static_cast<size_t>(i)] = i;
  } else {
    // Deterministic strided subsample.
    pick.reserve(static_cast<size_t>(subsample));
    for (int i = 0; i < subsample; ++i)
      pick.push_back(static_cast<Eigen::Index>(
          (static_cast<int64_t>(i) * n) / subsample));
  }
  std::vector<double> dists;
  dists.reserve(pick.size() * (pick.size() - 1) / 2);
  for (size_t i = 0; i < pick.size(); ++i)
    for (size_t j = i + 1; j < pick.size(); ++j)
      dists.push_back((features.row(pick[i]) - features.row(pick[j])).norm());
  if (dists.empty()) throw Error("percentile_eps: need >= 2 samples");
  std::sort(dists.begin(), dists.end());
  const auto idx = static_cast<size_t>(
      std::clamp(percentile * static_cast<double>(dists.size() - 1), 0.0,
                 static_cast<double>(dists.size() - 1)));
  double eps = dists[idx];
  if (eps <= 0.0) {
    // Degenerate snapshot (duplicate points); fall back to the smallest
    // positive distance or a tiny constant.
    for (double d : dists)
      if (d > 0.0) { eps = d; break; }
    if (eps <= 0.0) eps = 1e-6;
  }
  return eps;
}

// Classic DBSCAN on a precomputed distance matrix. Deterministic given the
// input ordering.
std::vector<std::optional<int>> dbscan(const Mat& dist, double eps, int min_pts) {
  const Eigen::Index n = dist.rows();
  std::vector<std::vector<int>> neighbors(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (dist(i, j) <= eps) neighbors[static_cast<size_t>(i)].push_back(static_cast<int>(j));

  constexpr int kUnvisited = -2;
  constexpr int kNoise = -1;
  std::vector<int> label(static_cast<size_t>(n), kUnvisited);
  int cluster = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (label[static_cast<size_t>(i)] != kUnvisited) continue;
    if (static_cast<int>(neighbors[static_cast<size_t>(i)].size()) < min_pts) {
      label[static_cast<size_t>(i)] = kNoise;
      continue;
    }
    label[static_cast<size_t>(i)] = cluster;
    std::deque<int> frontier(neighbors[static_cast<size_t>(i)].begin(),
                             neighbors[static_cast<size_t>(i)].end());
    while (!frontier.empty()) {
      const int q = frontier.front();
      frontier.pop_front();
      if (label[static_cast<size_t>(q)] == kNoise)
        label[static_cast<size_t>(q)] = cluster;  // border point
      if (label[static_cast<size_t>(q)] != kUnvisited) continue;
      label[static_cast<size_t>(q)] = cluster;
      if (static_cast<int>(neighbors[static_cast<size_t>(q)].size()) >= min_pts)
        for (int r : neighbors[static_cast<size_t>(q)])
          frontier.push_back(r);
    }
    ++cluster;
  }
  std::vector<std::optional<int>> out(static_cast<size_t>(n));
  for (size_t i = 0; i < out.size(); ++i)
    if (label[i] >= 0) out[i] = label[i];
  return out;
}

// Lloyd's algorithm with k-means++ seeding; deterministic given the seed.
std::vector<std::optional<int>> kmeans(const Mat& x, int k, int max_iter,
                                       uint64_t seed) {
  const Eigen::Index n = x.rows();
  if (k < 1 || k > n)
    throw Error(fmt::format("kmeans: k={} outside [1, {}]", k, n));
  Rng rng(seed, "kmeans/init");
  std::vector<Eigen::Index> centers;
  centers.push_back(static_cast<Eigen::Index>(rng.uniform_int(0, n - 1)));
  Vec d2 = Vec::Constant(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    for (Eigen::Index i = 0; i < n; ++i)
      d2(i) = std::min(d2(i), (x.row(i) - x.row(centers.back())).squaredNorm());
    const double total = d2.sum();
    Eigen::Index next = 0;
    if (total <= 0.0) {
      // All remaining points coincide with a center; walk to the first
      // index not already chosen.
      std::set<Eigen::Index> used(centers.begin(), centers.end());
      while (used.count(next)) ++next;
    } else {
      double r = rng.uniform() * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= d2(i);
        if (r <= 0.0) { next = i; break; }
        next = i;
      }
    }
    centers.push_back(next);
    d2(next) = 0.0;
  }

  Mat c(k, x.cols());
  for (int j = 0; j < k; ++j) c.row(j) = x.row(centers[static_cast<size_t>(j)]);
  std::vector<int> assign(static_cast<size_t>(n), 0);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = (x.row(i) - c.row(0)).squaredNorm();
      for (int j = 1; j < k; ++j) {
        const double d = (x.row(i) - c.row(j)).squaredNorm();
        if (d < bd) { bd = d; best = j; }
      }
      if (assign[static_cast<size_t>(i)] != best) {
        assign[static_cast<size_t>(i)] = best;
        changed = true;
      }
    }
    Mat sums = Mat::Zero(k, x.cols());
    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<size_t>(i)]) += x.row(i);
      ++counts[static_cast<size_t>(assign[static_cast<size_t>(i)])];
    }
    for (int j = 0; j < k; ++j)
      if (counts[static_cast<size_t>(j)] > 0)
        c.row(j) = sums.row(j) / counts[static_cast<size_t>(j)];
    if (!changed && it > 0) break;
  }
  std::vector<std::optional<int>> out(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<size_t>(i)] = assign[static_cast<size_t>(i)];
  return out;
}

// Drops empty clusters and computes centroids as means over members.
PseudoLabeling finalize(const Mat& space,
                        std::vector<std::optional<int>> raw_assignments,
                        int epoch, const std::string& branch, bool normalized) {
  std::map<int, int> remap;
  for (const auto& a : raw_assignments)
    if (a && !remap.count(*a)) remap[*a] = 0;
  int next = 0;
  for (auto& [k, v] : remap) v = next++;

  PseudoLabeling out;
  out.epoch = epoch;
  out.branch = branch;
  out.feature_snapshot_norm = normalized;
  out.assignments.resize(raw_assignments.size());
  Mat sums = Mat::Zero(next, space.cols());
  std::vector<int> counts(static_cast<size_t>(next), 0);
  for (size_t i = 0; i < raw_assignments.size(); ++i) {
    if (!raw_assignments[i]) continue;
    const int c = remap.at(*raw_assignments[i]);
    out.assignments[i] = c;
    sums.row(c) += space.row(static_cast<Eigen::Index>(i));
    ++counts[static_cast<size_t>(c)];
  }
  out.centroids = Mat::Zero(next, space.cols());
  for (int c = 0; c < next; ++c)
    out.centroids.row(c) = sums.row(c) / counts[static_cast<size_t>(c)];
  return out;
}

}  // namespace

ClusterOutcome cluster_epoch(const Mat& features, const ClusterParams& params,
                             int epoch, const std::string& branch) {
  if (features.rows() < 2) throw Error("cluster_epoch: need >= 2 samples");
  const Mat space = params.normalize ? normalize_rows(features) : features;

  ClusterOutcome outcome;
  if (params.algorithm == Algorithm::kmeans) {
    if (features.rows() < params.kmeans_k)
      throw Error(fmt::format("cluster_epoch: kmeans k={} exceeds {} samples",
                              params.kmeans_k, features.rows()));
    auto assign = kmeans(space, params.kmeans_k, params.kmeans_max_iter,
                         params.kmeans_seed);
    outcome.labeling = finalize(space, std::move(assign), epoch, branch,
                                params.normalize);
    return outcome;
  }

  if (features.rows() < params.min_pts)
    throw Error(fmt::format("cluster_epoch: dbscan needs >= min_pts={} samples",
                            params.min_pts));
  const Mat dist = pairwise_distances(space);
  double eps = params.eps > 0.0
                   ? params.eps
                   : percentile_eps(space, params.eps_percentile,
                                    params.pairwise_subsample);
  for (int attempt = 0; attempt <= params.max_retries; ++attempt) {
    auto assign = dbscan(dist, eps, params.min_pts);
    const bool any = std::any_of(assign.begin(), assign.end(),
                                 [](const auto& a) { return a.has_value(); });
    outcome.eps_used = eps;
    outcome.retries = attempt;
    if (any) {
      outcome.labeling = finalize(space, std::move(assign), epoch, branch,
                                  params.normalize);
      return outcome;
    }
    eps *= 1.5;
  }
  // Zero clusters after all retries: recoverable, the epoch's fine-tuning is
  // skipped by the caller.
  return outcome;
}

std::optional<Vec> centroid_of(const PseudoLabeling& labeling, int sample_index) {
  if (sample_index < 0 ||
      static_cast<size_t>(sample_index) >= labeling.assignments.size())
    throw Error(fmt::format("centroid_of: index {} out of range [0, {})",
                            sample_index, labeling.assignments.size()));
  const auto& a = labeling.assignments[static_cast<size_t>(sample_index)];
  if (!a) return std::nullopt;
  return Vec(labeling.centroids.row(*a));
}

Mat centroids_for(const PseudoLabeling& labeling, const std::vector<int>& indices) {
  Mat out(static_cast<Eigen::Index>(indices.size()), labeling.centroids.cols());
  for (size_t i = 0; i < indices.size(); ++i) {
    auto c = centroid_of(labeling, indices[i]);
    if (!c)
      throw Error(fmt::format("centroids_for: sample {} is an outlier",
                              indices[i]));
    out.row(static_cast<Eigen::Index>(i)) = c->transpose();
  }
  return out;
}

int lost_ids(const PseudoLabeling& labeling,
             const std::vector<std::optional<int>>& true_ids) {
  if (true_ids.size() != labeling.assignments.size())
    throw Error("lost_ids: diagnostic channel length mismatch");
  std::map<int, bool> id_present;  // id -> has any non-outlier sample
  for (size_t i = 0; i < true_ids.size(); ++i) {
    if (!true_ids[i]) continue;
    auto [it, inserted] = id_present.try_emplace(*true_ids[i], false);
    if (labeling.assignments[i]) it->second = true;
  }
  int lost = 0;
  for (const auto& [id, present] : id_present)
    if (!present) ++lost;
  return lost;
}

PseudoLabeling canonicalize(const PseudoLabeling& labeling) {
  const int k = labeling.cluster_count();
  std::vector<int> order(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) order[static_cast<size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto ra = labeling.centroids.row(a);
    const auto rb = labeling.centroids.row(b);
    for (Eigen::Index j = 0; j < ra.size(); ++j) {
      if (ra(j) < rb(j)) return true;
      if (ra(j) > rb(j)) return false;
    }
    return a < b;
  });
  std::vector<int> inverse(static_cast<size_t>(k));
  for (int pos = 0; pos < k; ++pos)
    inverse[static_cast<size_t>(order[static_cast<size_t>(pos)])] = pos;

  PseudoLabeling out = labeling;
  for (auto& a : out.assignments)
    if (a) a = inverse[static_cast<size_t>(*a)];
  for (int pos = 0; pos < k; ++pos)
    out.centroids.row(pos) = labeling.centroids.row(order[static_cast<size_t>(pos)]);
  return out;
}

bool canonical_equal(const PseudoLabeling& a, const PseudoLabeling& b,
                     double tol) {
  const PseudoLabeling ca = canonicalize(a);
  const PseudoLabeling cb = canonicalize(b);
  if (ca.assignments != cb.assignments) return false;
  if (ca.centroids.rows() != cb.centroids.rows() ||
      ca.centroids.cols() != cb.centroids.cols())
    return false;
  if (tol == 0.0) return ca.centroids == cb.centroids;
  return (ca.centroids - cb.centroids).cwiseAbs().maxCoeff() <= tol;
}

}  // namespace creid::clustering
