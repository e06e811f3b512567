#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "sedi/similarity.hpp"
#include "sedi/types.hpp"
#include "sedi/util.hpp"

namespace sedi {

// Local-diversity machinery: kept instructions are vectorized, projected to
// log2(batch_size) dimensions, and assigned to one of batch_size orthant
// clusters. Batches pop one record per cluster.

inline constexpr int kVectorDim = 1024;
inline constexpr std::uint64_t kHashKey = 0x5ed1u;  // fixed feature-hash key

// Hashed term-frequency vector of the instruction text, L2-normalized.
// Empty text maps to the zero vector.
inline std::vector<double> vectorize(std::string_view instruction_text) {
  std::vector<double> v(kVectorDim, 0.0);
  double norm_sq = 0.0;
  for (const std::string& token : tokenize(instruction_text)) {
    const std::size_t bucket = static_cast<std::size_t>(
        hash_combine(kHashKey, fnv1a64(token)) % kVectorDim);
    v[bucket] += 1.0;
  }
  for (double x : v) norm_sq += x * x;
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& x : v) x *= inv;
  }
  return v;
}

inline std::vector<double> vectorize(const InstructionRecord& record) {
  return vectorize(record.instruction);
}

struct Projection {
  std::vector<double> mean;                    // V dims
  std::vector<std::vector<double>> components; // d rows, each V dims, orthonormal
  int fitted_on = 0;

  int dims() const { return static_cast<int>(components.size()); }

  std::vector<double> project(std::span<const double> v) const {
    std::vector<double> out(components.size(), 0.0);
    for (std::size_t k = 0; k < components.size(); ++k) {
      double acc = 0.0;
      const auto& row = components[k];
      for (std::size_t i = 0; i < row.size(); ++i)
        acc += row[i] * (v[i] - mean[i]);
      out[k] = acc;
    }
    return out;
  }
};

// Mean-centered PCA of the samples; components are the top-d principal axes
// by descending variance. Sign convention: the largest-magnitude coordinate
// of each component is positive, so the fit is fully deterministic.
inline Projection fit_projection(const std::vector<std::vector<double>>& samples,
                                 int d) {
  if (d < 1) throw StateError("fit_projection: d must be >= 1");
  const auto n = static_cast<Eigen::Index>(samples.size());
  if (n < d)
    throw StateError("fit_projection: need at least " + std::to_string(d) +
                     " samples, got " + std::to_string(samples.size()));
  const auto dim = static_cast<Eigen::Index>(samples.front().size());
  Eigen::MatrixXd x(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(samples[static_cast<std::size_t>(i)].size()) != dim)
      throw StateError("fit_projection: inconsistent sample dimensions");
    for (Eigen::Index j = 0; j < dim; ++j)
      x(i, j) = samples[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double tol = std::max(1e-12, 1e-9 * sv(0));
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > tol) ++rank;
  if (rank < d)
    throw StateError("fit_projection: sample rank " + std::to_string(rank) +
                     " is below the required " + std::to_string(d) +
                     " dimensions");

  Projection p;
  p.fitted_on = static_cast<int>(n);
  p.mean.assign(mean.data(), mean.data() + dim);
  p.components.resize(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k) {
    Eigen::VectorXd comp = svd.matrixV().col(k);
    Eigen::Index at = 0;
    comp.cwiseAbs().maxCoeff(&at);
    if (comp(at) < 0.0) comp = -comp;
    p.components[static_cast<std::size_t>(k)].assign(comp.data(),
                                                     comp.data() + dim);
  }
  return p;
}

// Orthant code of the projected, centered vector: bit k set when coordinate
// k is >= 0. Total function onto [0, 2^d).
inline int assign_cluster(std::span<const double> vec, const Projection& proj) {
  const std::vector<double> coords = proj.project(vec);
  int cluster = 0;
  for (std::size_t k = 0; k < coords.size(); ++k)
    if (coords[k] >= 0.0) cluster |= 1 << k;
  return cluster;
}

inline int assign_cluster(const InstructionRecord& record, const Projection& proj) {
  const std::vector<double> v = vectorize(record);
  return assign_cluster(std::span<const double>(v), proj);
}

// Pops the front of each non-empty queue once, in cluster-id order; any
// deficit is taken from the longest remaining queues so the batch always
// holds batch_size records. Returns nullopt (not ready) when fewer than
// batch_size records are queued in total.
inline std::optional<Batch> next_batch(ClusterStore& store, int batch_size,
                                       std::int64_t batch_id) {
  if (store.total_queued() < static_cast<std::size_t>(batch_size))
    return std::nullopt;
  Batch batch;
  batch.batch_id = batch_id;
  int coverage = 0;
  for (auto& q : store.queues) {
    if (q.empty()) continue;
    batch.record_ids.push_back(q.front());
    q.pop_front();
    ++coverage;
    if (static_cast<int>(batch.record_ids.size()) == batch_size) break;
  }
  while (static_cast<int>(batch.record_ids.size()) < batch_size) {
    std::size_t longest = 0;
    for (std::size_t i = 1; i < store.queues.size(); ++i)
      if (store.queues[i].size() > store.queues[longest].size()) longest = i;
    auto& q = store.queues[longest];
    batch.record_ids.push_back(q.front());
    q.pop_front();
  }
  batch.cluster_coverage = coverage;
  return batch;
}

// Staging-and-assignment layer between the filter and the cluster store.
// Accepted records buffer in a staging queue until pca_warmup of them exist;
// the projection is then fitted and every staged record is assigned. With
// refit enabled the projection is re-fitted on all kept vectors at every
// further multiple of pca_warmup and the queued (not yet consumed) records
// are re-assigned.
class BatchComposer {
 public:
  BatchComposer(int batch_size, int pca_warmup, bool refit = false)
      : batch_size_(batch_size), pca_warmup_(pca_warmup), refit_(refit) {}

  // Classifies one accepted record, mutating record.cluster_id when the
  // projection is available. Returns ids of OTHER records whose cluster
  // assignment was made or changed by this call (the warmup flush, or a
  // refit); the caller owns syncing their cluster_id fields via
  // cluster_for().
  std::vector<std::int64_t> on_accept(InstructionRecord& record,
                                      ClusterStore& store) {
    all_vectors_.push_back(vectorize(record));
    accepted_ids_.push_back(record.id);
    if (!projection_) {
      staged_.push_back(record.id);
      if (static_cast<int>(all_vectors_.size()) >= pca_warmup_) {
        projection_ = fit_projection(all_vectors_, dims());
        std::vector<std::int64_t> flushed = std::move(staged_);
        staged_.clear();
        for (std::int64_t id : flushed) assign_staged(id, store);
        record.cluster_id = cluster_for(record.id);
        return flushed;
      }
      return {};
    }
    const int cluster =
        assign_cluster(std::span<const double>(all_vectors_.back()), *projection_);
    record.cluster_id = cluster;
    store.put(cluster, record.id);
    return maybe_refit(store);
  }

  bool fitted() const { return projection_.has_value(); }
  const std::optional<Projection>& projection() const { return projection_; }
  int dims() const {
    int d = 0, b = batch_size_;
    while (b > 1) {
      b >>= 1;
      ++d;
    }
    return d;
  }
  const std::vector<std::int64_t>& staged() const { return staged_; }

  int cluster_for(std::int64_t record_id) const {
    const auto it = std::find(accepted_ids_.begin(), accepted_ids_.end(), record_id);
    if (it == accepted_ids_.end() || !projection_)
      throw StateError("cluster_for: unknown record or unfitted projection");
    const std::size_t idx =
        static_cast<std::size_t>(it - accepted_ids_.begin());
    return assign_cluster(std::span<const double>(all_vectors_[idx]), *projection_);
  }

  // Restores composer state from persisted records (resume path). Kept
  // records arrive in acceptance order; those with cluster ids feed the
  // store reconstruction done by the caller.
  void restore(const std::vector<InstructionRecord>& kept,
               std::optional<Projection> projection,
               std::vector<std::int64_t> staged) {
    projection_ = std::move(projection);
    staged_ = std::move(staged);
    all_vectors_.clear();
    accepted_ids_.clear();
    for (const auto& r : kept) {
      all_vectors_.push_back(vectorize(r));
      accepted_ids_.push_back(r.id);
    }
  }

 private:
  void assign_staged(std::int64_t id, ClusterStore& store) {
    const auto it = std::find(accepted_ids_.begin(), accepted_ids_.end(), id);
    const std::size_t idx =
        static_cast<std::size_t>(it - accepted_ids_.begin());
    const int cluster =
        assign_cluster(std::span<const double>(all_vectors_[idx]), *projection_);
    store.put(cluster, id);
  }

  std::vector<std::int64_t> maybe_refit(ClusterStore& store) {
    if (!refit_) return {};
    if (static_cast<int>(all_vectors_.size()) % pca_warmup_ != 0) return {};
    projection_ = fit_projection(all_vectors_, dims());
    // Re-assign everything still queued under the new axes.
    std::vector<std::int64_t> queued;
    for (auto& q : store.queues) {
      for (std::int64_t id : q) queued.push_back(id);
      q.clear();
    }
    std::sort(queued.begin(), queued.end());
    for (std::int64_t id : queued) assign_staged(id, store);
    return queued;
  }

  int batch_size_;
  int pca_warmup_;
  bool refit_;
  std::optional<Projection> projection_;
  std::vector<std::int64_t> staged_;
  std::vector<std::vector<double>> all_vectors_;  // one per accepted record
  std::vector<std::int64_t> accepted_ids_;
};

}  // namespace sedi
