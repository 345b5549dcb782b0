#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "imf/error.hpp"

namespace imf {

// Exact nearest-neighbor search over n points of arbitrary dimension.
// Median split on the widest-spread axis, full backtracking, deterministic
// tie-break to the lowest index. Queries are const and thread-safe.
class KdTree {
 public:
  KdTree() = default;

  KdTree(const double* data, int64_t n, int64_t dim) { build(data, n, dim); }

  struct Result {
    int64_t index = -1;
    double dist = 0.0;
  };

  int64_t size() const { return n_; }

  Result nearest(const double* query) const {
    require(n_ > 0, ErrorCategory::contract, "nearest() on empty kd-tree");
    Best best;
    search(0, query, best);
    return Result{best.index, std::sqrt(best.d2)};
  }

  // Indices of all points within radius r (inclusive), ascending.
  std::vector<int64_t> radius(const double* query, double r) const {
    std::vector<int64_t> out;
    if (n_ == 0) return out;
    radius_search(0, query, r * r, out);
    std::sort(out.begin(), out.end());
    return out;
  }

  // k nearest indices ordered by (distance, index).
  std::vector<Result> knn(const double* query, int64_t k) const {
    std::vector<Result> heap;  // max-heap by (d2 desc, index desc)
    if (n_ == 0 || k <= 0) return heap;
    knn_search(0, query, k, heap);
    std::sort(heap.begin(), heap.end(), [](const Result& a, const Result& b) {
      if (a.dist != b.dist) return a.dist < b.dist;
      return a.index < b.index;
    });
    for (auto& r : heap) r.dist = std::sqrt(r.dist);
    return heap;
  }

 private:
  struct Node {
    int32_t left = -1, right = -1;
    int32_t begin = 0, end = 0;  // leaf payload range in order_
    int8_t axis = -1;
    double split = 0.0;
  };
  struct Best {
    int64_t index = -1;
    double d2 = std::numeric_limits<double>::infinity();
  };
  static constexpr int kLeafSize = 16;

  void build(const double* data, int64_t n, int64_t dim) {
    dim_ = dim;
    n_ = n;
    pts_.assign(data, data + n * dim);
    order_.resize(n);
    for (int64_t i = 0; i < n; ++i) order_[i] = i;
    nodes_.clear();
    if (n > 0) build_node(0, n);
  }

  int32_t build_node(int64_t begin, int64_t end) {
    int32_t id = static_cast<int32_t>(nodes_.size());
    nodes_.push_back({});
    if (end - begin <= kLeafSize) {
      nodes_[id].begin = static_cast<int32_t>(begin);
      nodes_[id].end = static_cast<int32_t>(end);
      return id;
    }
    // widest spread axis
    int best_axis = 0;
    double best_spread = -1.0;
    for (int64_t a = 0; a < dim_; ++a) {
      double lo = pt(order_[begin])[a], hi = lo;
      for (int64_t i = begin + 1; i < end; ++i) {
        double v = pt(order_[i])[a];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        best_axis = static_cast<int>(a);
      }
    }
    int64_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](int64_t p, int64_t q) {
                       double vp = pt(p)[best_axis], vq = pt(q)[best_axis];
                       if (vp != vq) return vp < vq;
                       return p < q;
                     });
    double split = pt(order_[mid])[best_axis];
    Node n;
    n.axis = static_cast<int8_t>(best_axis);
    n.split = split;
    nodes_[id] = n;
    int32_t l = build_node(begin, mid);
    int32_t r = build_node(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  const double* pt(int64_t i) const { return pts_.data() + i * dim_; }

  double dist2(const double* q, int64_t i) const {
    const double* p = pt(i);
    double s = 0.0;
    for (int64_t a = 0; a < dim_; ++a) {
      double d = q[a] - p[a];
      s += d * d;
    }
    return s;
  }

  void scan_leaf(const Node& n, const double* q, Best& best) const {
    for (int32_t i = n.begin; i < n.end; ++i) {
      int64_t idx = order_[i];
      double d2 = dist2(q, idx);
      if (d2 < best.d2 || (d2 == best.d2 && idx < best.index)) {
        best.d2 = d2;
        best.index = idx;
      }
    }
  }

  void search(int32_t id, const double* q, Best& best) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      scan_leaf(n, q, best);
      return;
    }
    double delta = q[n.axis] - n.split;
    int32_t near = delta < 0 ? n.left : n.right;
    int32_t far = delta < 0 ? n.right : n.left;
    search(near, q, best);
    // The far side may still hold an equal-distance lower index.
    if (delta * delta <= best.d2) search(far, q, best);
  }

  void radius_search(int32_t id, const double* q, double r2,
                     std::vector<int64_t>& out) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (int32_t i = n.begin; i < n.end; ++i)
        if (dist2(q, order_[i]) <= r2) out.push_back(order_[i]);
      return;
    }
    double delta = q[n.axis] - n.split;
    int32_t near = delta < 0 ? n.left : n.right;
    int32_t far = delta < 0 ? n.right : n.left;
    radius_search(near, q, r2, out);
    if (delta * delta <= r2) radius_search(far, q, r2, out);
  }

  void knn_search(int32_t id, const double* q, int64_t k,
                  std::vector<Result>& heap) const {
    auto worse = [](const Result& a, const Result& b) {
      if (a.dist != b.dist) return a.dist < b.dist;  // max-heap on (d2, idx)
      return a.index < b.index;
    };
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (int32_t i = n.begin; i < n.end; ++i) {
        int64_t idx = order_[i];
        Result cand{idx, dist2(q, idx)};
        if (static_cast<int64_t>(heap.size()) < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end(), worse);
        } else if (worse(cand, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), worse);
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end(), worse);
        }
      }
      return;
    }
    double delta = q[n.axis] - n.split;
    int32_t near = delta < 0 ? n.left : n.right;
    int32_t far = delta < 0 ? n.right : n.left;
    knn_search(near, q, k, heap);
    double bound = static_cast<int64_t>(heap.size()) < k
                       ? std::numeric_limits<double>::infinity()
                       : heap.front().dist;
    if (delta * delta <= bound) knn_search(far, q, k, heap);
  }

  int64_t dim_ = 0;
  int64_t n_ = 0;
  std::vector<double> pts_;
  std::vector<int64_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace imf
