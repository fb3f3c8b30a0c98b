#pragma once

#include "creid/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace creid::clustering {

enum class Algorithm { dbscan, kmeans };
std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

// Per-sample cluster assignments (absent = outlier) with per-cluster
// centroids. Cluster indices are arbitrary; canonicalize() provides the
// centroid-ordered normal form.
struct PseudoLabeling {
  std::vector<std::optional<int>> assignments;
  Mat centroids;  // cluster_count x d
  int epoch = 0;
  std::string branch = "F";
  bool feature_snapshot_norm = true;

  int cluster_count() const { return static_cast<int>(centroids.rows()); }
  int outlier_count() const;
  // Indices of samples that carry an assignment.
  std::vector<int> assigned_indices() const;
  // Dense labels for the given sample indices (all must be non-outliers).
  std::vector<int> labels_for(const std::vector<int>& indices) const;
};

struct ClusterParams {
  Algorithm algorithm = Algorithm::dbscan;
  // DBSCAN: eps > 0 is used as-is; eps <= 0 derives eps from the
  // eps_percentile quantile of the pairwise-distance distribution over a
  // subsample, recomputed each call.
  double eps = 0.0;
  double eps_percentile = 0.0016;
  int min_pts = 4;
  int pairwise_subsample = 1000;
  // Zero-cluster recovery: multiply eps by 1.5 up to `max_retries` times.
  int max_retries = 3;
  // k-means.
  int kmeans_k = 8;
  int kmeans_max_iter = 50;
  uint64_t kmeans_seed = 1;
  // L2-normalize features before clustering.
  bool normalize = true;
};

struct ClusterOutcome {
  // Absent when clustering found no clusters after all retries; the caller
  // skips that epoch's fine-tuning.
  std::optional<PseudoLabeling> labeling;
  double eps_used = 0.0;
  int retries = 0;
};

// Clusters a feature snapshot into pseudo-IDs. DBSCAN runs on L2-normalized
// features with Euclidean distances; outliers carry no assignment; centroids
// are means in the (normalized) clustering space.
ClusterOutcome cluster_epoch(const Mat& features, const ClusterParams& params,
                             int epoch = 0, const std::string& branch = "F");

// Centroid of the sample's cluster; absent for outliers.
std::optional<Vec> centroid_of(const PseudoLabeling& labeling, int sample_index);

// Row-aligned centroid matrix for the given (non-outlier) sample indices.
Mat centroids_for(const PseudoLabeling& labeling, const std::vector<int>& indices);

// Number of ground-truth identities whose every sample is an outlier.
int lost_ids(const PseudoLabeling& labeling,
             const std::vector<std::optional<int>>& true_ids);

// Reindexes clusters by lexicographic centroid order. The per-sample centroid
// map is unchanged; equal labelings have equal canonical forms.
PseudoLabeling canonicalize(const PseudoLabeling& labeling);

bool canonical_equal(const PseudoLabeling& a, const PseudoLabeling& b,
                     double tol = 0.0);

Mat normalize_rows(const Mat& m, double eps = 1e-12);

}  // namespace creid::clustering
