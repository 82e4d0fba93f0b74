#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hta {

using Shape = std::vector<std::size_t>;

// Entries with absolute value at or below this are counted as zero by l0
// metrics. The prox operators emit exact zeros; the tolerance only guards
// against accumulated float dust elsewhere.
inline constexpr double kZeroTol = 1e-12;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

inline std::string shape_to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

/// Dense row-major tensor of doubles. The flat layout is the contract:
/// everything in this library addresses entries by linear index.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size())
      throw std::invalid_argument("Tensor: shape " + shape_to_string(shape_) +
                                  " does not match data length " +
                                  std::to_string(data_.size()));
  }

  static Tensor vector(std::vector<double> data) {
    Shape s{data.size()};
    return Tensor(std::move(s), std::move(data));
  }

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  const Shape& shape() const { return shape_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_size(const Shape& shape) {
    if (shape.empty()) throw std::invalid_argument("Tensor: empty shape");
    for (std::size_t e : shape)
      if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape");
    return shape_size(shape);
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor scaled(const Tensor& a, double s) {
  Tensor out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double linf_dist(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "linf_dist");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double sum_sq_dist(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sum_sq_dist");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

inline bool is_zero(const Tensor& t) {
  for (double v : t.data())
    if (v != 0.0) return false;
  return true;
}

/// Per-entry feasible interval [lower, upper] for a perturbation.
/// Construction enforces lower <= 0 <= upper, so the zero perturbation is
/// always feasible and the l0/l2,0 prox operators stay well defined.
class BoxBounds {
 public:
  BoxBounds(Tensor lower, Tensor upper)
      : lower_(std::move(lower)), upper_(std::move(upper)) {
    check_same_shape(lower_, upper_, "BoxBounds");
    for (std::size_t i = 0; i < lower_.size(); ++i) {
      if (!(lower_[i] <= 0.0) || !(0.0 <= upper_[i]))
        throw std::invalid_argument(
            "BoxBounds: 0 must lie in [lower, upper] at index " +
            std::to_string(i));
    }
  }

  const Tensor& lower() const { return lower_; }
  const Tensor& upper() const { return upper_; }
  std::size_t size() const { return lower_.size(); }

  double clamp(std::size_t i, double v) const {
    return std::min(std::max(v, lower_[i]), upper_[i]);
  }

  bool contains(const Tensor& v) const {
    if (!v.same_shape(lower_)) return false;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] < lower_[i] || v[i] > upper_[i]) return false;
    return true;
  }

 private:
  Tensor lower_;
  Tensor upper_;
};

/// Merge the l_inf ball of radius epsilon with image validity
/// 0 <= x0 + delta <= 1 into one box: l_i = max(-eps, -x0_i),
/// u_i = min(eps, 1 - x0_i).
inline BoxBounds compute_box_bounds(const Tensor& x0, double epsilon) {
  if (!(epsilon > 0.0))
    throw std::invalid_argument("compute_box_bounds: epsilon must be > 0");
  for (std::size_t i = 0; i < x0.size(); ++i)
    if (!(x0[i] >= 0.0 && x0[i] <= 1.0))
      throw std::invalid_argument(
          "compute_box_bounds: image entry outside [0,1] at index " +
          std::to_string(i));
  Tensor lo(x0.shape()), hi(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    lo[i] = std::max(-epsilon, -x0[i]);
    hi[i] = std::min(epsilon, 1.0 - x0[i]);
  }
  return BoxBounds(std::move(lo), std::move(hi));
}

/// Euclidean projection onto the box; elementwise clamp, idempotent.
inline Tensor project_box(const Tensor& v, const BoxBounds& b) {
  check_same_shape(v, b.lower(), "project_box");
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = b.clamp(i, v[i]);
  return out;
}

struct NormReport {
  std::size_t l0 = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  double linf = 0.0;
};

inline std::size_t l0_count(const Tensor& t, double zero_tol = kZeroTol) {
  if (!(zero_tol >= 0.0))
    throw std::invalid_argument("l0_count: zero_tol must be >= 0");
  std::size_t n = 0;
  for (double v : t.data())
    if (std::abs(v) > zero_tol) ++n;
  return n;
}

inline NormReport lp_norms(const Tensor& delta, double zero_tol = kZeroTol) {
  if (!(zero_tol >= 0.0))
    throw std::invalid_argument("lp_norms: zero_tol must be >= 0");
  NormReport r;
  double sq = 0.0;
  for (double v : delta.data()) {
    const double a = std::abs(v);
    if (a > zero_tol) ++r.l0;
    r.l1 += a;
    sq += v * v;
    r.linf = std::max(r.linf, a);
  }
  r.l2 = std::sqrt(sq);
  return r;
}

/// Keep the k entries of largest absolute value, zero the rest. Ties in
/// magnitude are broken toward the lowest index so traces are reproducible.
inline Tensor truncate_top_k(const Tensor& delta, std::size_t k) {
  const std::size_t n = delta.size();
  if (k >= n) return delta;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double da = std::abs(delta[a]), db = std::abs(delta[b]);
    if (da != db) return da > db;
    return a < b;
  });
  Tensor out(delta.shape());
  for (std::size_t i = 0; i < k; ++i) out[idx[i]] = delta[idx[i]];
  return out;
}

/// Disjoint index groups G_1..G_m covering {0..n-1}; construction validates
/// the exact cover.
class GroupPartition {
 public:
  GroupPartition(std::vector<std::vector<std::size_t>> groups,
                 std::size_t total_size)
      : groups_(std::move(groups)), total_size_(total_size) {
    std::vector<char> seen(total_size_, 0);
    std::size_t covered = 0;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      if (groups_[g].empty())
        throw std::invalid_argument("GroupPartition: empty group " +
                                    std::to_string(g));
      for (std::size_t i : groups_[g]) {
        if (i >= total_size_)
          throw std::invalid_argument("GroupPartition: index out of range");
        if (seen[i])
          throw std::invalid_argument(
              "GroupPartition: duplicate index " + std::to_string(i));
        seen[i] = 1;
        ++covered;
      }
    }
    if (covered != total_size_)
      throw std::invalid_argument("GroupPartition: groups do not cover all " +
                                  std::to_string(total_size_) + " indices");
  }

  static GroupPartition singletons(std::size_t n) {
    std::vector<std::vector<std::size_t>> gs(n);
    for (std::size_t i = 0; i < n; ++i) gs[i] = {i};
    return GroupPartition(std::move(gs), n);
  }

  const std::vector<std::vector<std::size_t>>& groups() const {
    return groups_;
  }
  std::size_t group_count() const { return groups_.size(); }
  std::size_t total_size() const { return total_size_; }

 private:
  std::vector<std::vector<std::size_t>> groups_;
  std::size_t total_size_;
};

inline void check_partition(const GroupPartition& p, const Tensor& t,
                            const char* op) {
  if (p.total_size() != t.size())
    throw std::invalid_argument(std::string(op) +
                                ": partition covers " +
                                std::to_string(p.total_size()) +
                                " indices, tensor has " +
                                std::to_string(t.size()));
}

inline double group_sq_norm(const Tensor& t, const std::vector<std::size_t>& g) {
  double acc = 0.0;
  for (std::size_t i : g) acc += t[i] * t[i];
  return acc;
}

/// Number of groups with nonzero l2 norm (the group sparsity measure).
inline std::size_t group_l20_count(const Tensor& t, const GroupPartition& p,
                                   double zero_tol = kZeroTol) {
  check_partition(p, t, "group_l20_count");
  std::size_t n = 0;
  for (const auto& g : p.groups()) {
    bool nonzero = false;
    for (std::size_t i : g)
      if (std::abs(t[i]) > zero_tol) {
        nonzero = true;
        break;
      }
    if (nonzero) ++n;
  }
  return n;
}

/// Group analogue of truncate_top_k: keep the k groups of largest l2 norm
/// verbatim, zero every other group. Ties break toward the lowest group index.
inline Tensor truncate_top_k_groups(const Tensor& delta,
                                    const GroupPartition& partition,
                                    std::size_t k) {
  check_partition(partition, delta, "truncate_top_k_groups");
  const std::size_t m = partition.group_count();
  if (k >= m) return delta;
  std::vector<double> sq(m);
  for (std::size_t g = 0; g < m; ++g)
    sq[g] = group_sq_norm(delta, partition.groups()[g]);
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (sq[a] != sq[b]) return sq[a] > sq[b];
    return a < b;
  });
  Tensor out(delta.shape());
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t i : partition.groups()[idx[r]]) out[i] = delta[i];
  return out;
}

}  // namespace hta
