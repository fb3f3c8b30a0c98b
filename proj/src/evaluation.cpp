#include "creid/evaluation.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <fmt/format.h>

namespace creid::eval {

std::vector<std::optional<int>> Diagnostics::true_ids(
    const data::DatasetSplit& split) {
  if (split.labels_hidden_) return split.sealed_ids_;
  return split.visible_ids();
}

namespace {

double cosine_distance(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na <= 0.0 || nb <= 0.0) return 1.0;  // degenerate vector: maximally far
  return 1.0 - a.dot(b) / (na * nb);
}

}  // namespace

RetrievalResult retrieve_and_score(const data::DatasetSplit& query,
                                   const data::DatasetSplit& gallery,
                                   const Mat& query_features,
                                   const Mat& gallery_features) {
  const auto nq = static_cast<Eigen::Index>(query.size());
  const auto ng = static_cast<Eigen::Index>(gallery.size());
  if (query_features.rows() != nq || gallery_features.rows() != ng)
    throw Error("retrieve_and_score: feature rows do not match split sizes");
  if (query_features.cols() != gallery_features.cols())
    throw Error("retrieve_and_score: feature dimensions differ");

  RetrievalResult result;
  double rank1_hits = 0.0;
  for (Eigen::Index qi = 0; qi < nq; ++qi) {
    const data::Sample& q = query.samples()[static_cast<size_t>(qi)];
    if (!q.person_id)
      throw Error(fmt::format("retrieve_and_score: query {} has no ID", qi));

    // Gallery candidates: every entry not sharing the query's camera.
    struct Cand {
      double dist;
      int index;
      bool match;
    };
    std::vector<Cand> cands;
    cands.reserve(static_cast<size_t>(ng));
    bool any_match = false;
    for (Eigen::Index gi = 0; gi < ng; ++gi) {
      const data::Sample& g = gallery.samples()[static_cast<size_t>(gi)];
      if (g.camera == q.camera) continue;
      const bool match =
          !g.distractor && g.person_id && *g.person_id == *q.person_id;
      any_match = any_match || match;
      cands.push_back({cosine_distance(query_features.row(qi),
                                       gallery_features.row(gi)),
                       static_cast<int>(gi), match});
    }
    if (!any_match) {
      ++result.excluded_queries;
      result.excluded_query_indices.push_back(static_cast<int>(qi));
      continue;
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) {
                       if (a.dist != b.dist) return a.dist < b.dist;
                       return a.index < b.index;
                     });
    if (cands.front().match) rank1_hits += 1.0;
    double ap = 0.0;
    int matches_seen = 0;
    for (size_t rank = 0; rank < cands.size(); ++rank) {
      if (!cands[rank].match) continue;
      ++matches_seen;
      ap += static_cast<double>(matches_seen) / static_cast<double>(rank + 1);
    }
    ap /= static_cast<double>(matches_seen);
    result.per_query_ap.push_back(ap);
  }

  const auto included = static_cast<double>(result.per_query_ap.size());
  if (included > 0.0) {
    result.rank1 = rank1_hits / included;
    result.mAP = std::accumulate(result.per_query_ap.begin(),
                                 result.per_query_ap.end(), 0.0) /
                 included;
  }
  return result;
}

double entropy(const std::vector<int>& labels) {
  if (labels.empty()) throw Error("entropy: empty input");
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  const double n = static_cast<double>(labels.size());
  double h = 0.0;
  for (const auto& [l, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

double mutual_information(const std::vector<int>& labels_a,
                          const std::vector<int>& labels_b) {
  if (labels_a.size() != labels_b.size())
    throw Error("mutual_information: length mismatch");
  if (labels_a.empty()) throw Error("mutual_information: empty input");
  std::map<std::pair<int, int>, int> joint;
  std::map<int, int> ca, cb;
  for (size_t i = 0; i < labels_a.size(); ++i) {
    ++joint[{labels_a[i], labels_b[i]}];
    ++ca[labels_a[i]];
    ++cb[labels_b[i]];
  }
  const double n = static_cast<double>(labels_a.size());
  double mi = 0.0;
  for (const auto& [ab, c] : joint) {
    const double pab = static_cast<double>(c) / n;
    const double pa = static_cast<double>(ca.at(ab.first)) / n;
    const double pb = static_cast<double>(cb.at(ab.second)) / n;
    mi += pab * std::log(pab / (pa * pb));
  }
  return std::max(mi, 0.0);
}

double mutual_information(const std::vector<std::optional<int>>& labels_a,
                          const std::vector<std::optional<int>>& labels_b) {
  if (labels_a.size() != labels_b.size())
    throw Error("mutual_information: length mismatch");
  std::vector<int> a, b;
  for (size_t i = 0; i < labels_a.size(); ++i) {
    if (!labels_a[i] || !labels_b[i]) continue;
    a.push_back(*labels_a[i]);
    b.push_back(*labels_b[i]);
  }
  return mutual_information(a, b);
}

double jsd_multi(const std::vector<Vec>& distributions) {
  if (distributions.empty()) throw Error("jsd_multi: no distributions");
  const Eigen::Index support = distributions.front().size();
  for (const Vec& d : distributions) {
    if (d.size() != support)
      throw Error("jsd_multi: distributions must share one support");
    if (d.minCoeff() < -1e-12 || std::abs(d.sum() - 1.0) > 1e-9)
      throw Error("jsd_multi: distributions must be normalized");
  }
  auto h = [](const Vec& p) {
    double out = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (p(i) > 0.0) out -= p(i) * std::log(p(i));
    return out;
  };
  Vec mean = Vec::Zero(support);
  double mean_h = 0.0;
  for (const Vec& d : distributions) {
    mean += d;
    mean_h += h(d);
  }
  mean /= static_cast<double>(distributions.size());
  mean_h /= static_cast<double>(distributions.size());
  return std::max(h(mean) - mean_h, 0.0);
}

ClusterQuality cluster_quality(const clustering::PseudoLabeling& pseudo,
                               const std::vector<std::optional<int>>& true_ids) {
  if (true_ids.size() != pseudo.assignments.size())
    throw Error("cluster_quality: diagnostic channel length mismatch");
  std::vector<int> clusters, ids;
  for (size_t i = 0; i < true_ids.size(); ++i) {
    if (!pseudo.assignments[i] || !true_ids[i]) continue;
    clusters.push_back(*pseudo.assignments[i]);
    ids.push_back(*true_ids[i]);
  }
  if (clusters.empty())
    throw Error("cluster_quality: labeling has no assigned samples");

  // Purity: dominant true ID per cluster.
  std::map<int, std::map<int, int>> per_cluster;
  for (size_t i = 0; i < clusters.size(); ++i)
    ++per_cluster[clusters[i]][ids[i]];
  double dominant = 0.0;
  for (const auto& [c, hist] : per_cluster) {
    int best = 0;
    for (const auto& [id, n] : hist) best = std::max(best, n);
    dominant += static_cast<double>(best);
  }

  ClusterQuality q;
  q.purity = dominant / static_cast<double>(clusters.size());
  const double mi = mutual_information(clusters, ids);
  const double ha = entropy(clusters);
  const double hb = entropy(ids);
  if (ha <= 0.0 && hb <= 0.0) {
    q.nmi = 1.0;  // both trivial and identical up to relabeling
  } else if (ha <= 0.0 || hb <= 0.0) {
    q.nmi = 0.0;
  } else {
    q.nmi = mi / (0.5 * (ha + hb));
  }
  return q;
}

PcaProjection pca_projection(const Mat& features, int dims) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (dims < 1) throw Error("pca_projection: dims must be >= 1");
  if (n <= dims)
    throw Error(fmt::format("pca_projection: need more than {} samples", dims));

  const Eigen::RowVectorXd mean = features.colwise().mean();
  Mat centered = features.rowwise() - mean;
  Mat cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
  if (solver.info() != Eigen::Success)
    throw Error("pca_projection: eigendecomposition failed");
  const Vec evals = solver.eigenvalues();   // ascending
  const Mat evecs = solver.eigenvectors();

  const double total = std::max(evals.cwiseMax(0.0).sum(), 0.0);
  PcaProjection out;
  out.points = Mat::Zero(n, dims);
  out.explained_variance = Vec::Zero(dims);
  for (int k = 0; k < dims; ++k) {
    const Eigen::Index col = d - 1 - k;
    if (col < 0) break;
    Vec axis = evecs.col(col);
    // Deterministic sign: the largest-magnitude loading is positive.
    Eigen::Index arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0.0) axis = -axis;
    const double lambda = std::max(evals(col), 0.0);
    if (total > 0.0) {
      out.points.col(k) = centered * axis;
      out.explained_variance(k) = lambda / total;
    }
    // Zero total variance leaves a zero projection.
  }
  return out;
}

}  // namespace creid::eval
