#pragma once

#include "creid/clustering.hpp"
#include "creid/data.hpp"

#include <optional>
#include <vector>

namespace creid::eval {

// The sealed diagnostic channel: the only reader of person IDs hidden by
// data::hide_labels.
class Diagnostics {
 public:
  // Ground-truth IDs for a split: the sealed ones when labels were hidden,
  // else the visible ones.
  static std::vector<std::optional<int>> true_ids(const data::DatasetSplit& split);
};

struct RetrievalResult {
  double rank1 = 0.0;
  double mAP = 0.0;
  std::vector<double> per_query_ap;  // included queries only, query order
  // Queries with no true match left after same-camera filtering are excluded
  // from the averages and reported here.
  int excluded_queries = 0;
  std::vector<int> excluded_query_indices;
  int included_queries() const { return static_cast<int>(per_query_ap.size()); }
};

// Ranks gallery entries by cosine distance per query, excluding gallery
// entries that share the query's camera. Rank-1 counts queries whose nearest
// remaining entry shares the ID; AP averages precision at each true-match
// rank. Distractor-flagged gallery entries rank but never match.
RetrievalResult retrieve_and_score(const data::DatasetSplit& query,
                                   const data::DatasetSplit& gallery,
                                   const Mat& query_features,
                                   const Mat& gallery_features);

// Plug-in mutual information (natural log) between two label sequences.
double mutual_information(const std::vector<int>& labels_a,
                          const std::vector<int>& labels_b);
// Pairs where either label is absent are dropped pairwise.
double mutual_information(const std::vector<std::optional<int>>& labels_a,
                          const std::vector<std::optional<int>>& labels_b);

double entropy(const std::vector<int>& labels);

// Multi-distribution Jensen-Shannon divergence: H(mean) - mean(H), nats.
// All distributions share one support and must be normalized.
double jsd_multi(const std::vector<Vec>& distributions);

struct ClusterQuality {
  double purity = 0.0;
  double nmi = 0.0;
};

// Purity and NMI of pseudo-labels against ground-truth IDs, outliers excluded.
ClusterQuality cluster_quality(const clustering::PseudoLabeling& pseudo,
                               const std::vector<std::optional<int>>& true_ids);

struct PcaProjection {
  Mat points;              // N x dims
  Vec explained_variance;  // fraction per component
};

// Mean-centered PCA onto the first `dims` components with a deterministic
// sign convention (largest-magnitude loading positive).
PcaProjection pca_projection(const Mat& features, int dims = 2);

// One epoch of clustering/adversary diagnostics.
struct DiagnosticRecord {
  int epoch = 0;
  double mutual_information_nats = 0.0;
  int lost_ids = 0;
  int cluster_count = 0;
  std::optional<double> camera_accuracy_probe;
};

struct DiagnosticSeries {
  std::vector<DiagnosticRecord> entries;
};

}  // namespace creid::eval
