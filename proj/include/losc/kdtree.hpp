#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace losc {

struct Neighbor {
  std::size_t index = 0;
  double dist2 = 0.0;
};

// Neighbor order: nearer first, lowest index on exact distance ties. Every
// k-nearest query resolves ties this way, so results are reproducible.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
  return a.index < b.index;
}

// Static median-split tree with bucketed leaves over 2D or 3D points.
template <int Dim>
class KdTree {
  static_assert(Dim == 2 || Dim == 3, "tree supports 2D and 3D points");

 public:
  using Point = std::array<double, Dim>;
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  KdTree() = default;

  explicit KdTree(std::vector<Point> points) : points_(std::move(points)) {
    for (const Point& p : points_)
      for (double c : p)
        if (!std::isfinite(c)) throw std::invalid_argument("tree points must be finite");
    order_.resize(points_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::uint32_t>(i);
    if (!points_.empty()) root_ = build(0, points_.size());
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Point& point(std::size_t i) const { return points_[i]; }

  // Fills `out` with up to k nearest points in neighbor_less order. Pass the
  // query's own index as `exclude` to drop it from its neighborhood.
  void knn(const Point& query, std::size_t k, std::vector<Neighbor>& out,
           std::size_t exclude = npos) const {
    if (k == 0) throw std::invalid_argument("neighbor count must be at least 1");
    out.clear();
    if (points_.empty()) return;
    search(root_, query, k, exclude, out);
    std::sort(out.begin(), out.end(), neighbor_less);
  }

  std::vector<Neighbor> knn(const Point& query, std::size_t k, std::size_t exclude = npos) const {
    std::vector<Neighbor> out;
    knn(query, k, out, exclude);
    return out;
  }

 private:
  static constexpr std::size_t kLeafSize = 16;

  struct Node {
    double split = 0.0;
    std::uint32_t left = 0;   // child node, or first point of a leaf
    std::uint32_t right = 0;  // child node, or one past the last point of a leaf
    std::int8_t axis = -1;    // -1 marks a leaf
  };

  std::uint32_t build(std::size_t lo, std::size_t hi) {
    Node node;
    if (hi - lo <= kLeafSize) {
      node.left = static_cast<std::uint32_t>(lo);
      node.right = static_cast<std::uint32_t>(hi);
    } else {
      Point min = points_[order_[lo]], max = min;
      for (std::size_t i = lo + 1; i < hi; ++i)
        for (int d = 0; d < Dim; ++d) {
          min[d] = std::min(min[d], points_[order_[i]][d]);
          max[d] = std::max(max[d], points_[order_[i]][d]);
        }
      int axis = 0;
      for (int d = 1; d < Dim; ++d)
        if (max[d] - min[d] > max[axis] - min[axis]) axis = d;

      std::size_t mid = lo + (hi - lo) / 2;
      std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                       [&](std::uint32_t a, std::uint32_t b) {
                         if (points_[a][axis] != points_[b][axis])
                           return points_[a][axis] < points_[b][axis];
                         return a < b;
                       });
      node.axis = static_cast<std::int8_t>(axis);
      node.split = points_[order_[mid]][axis];
      node.left = build(lo, mid);
      node.right = build(mid, hi);
    }
    nodes_.push_back(node);
    return static_cast<std::uint32_t>(nodes_.size() - 1);
  }

  void consider(const Point& query, std::size_t k, std::size_t exclude, std::size_t index,
                std::vector<Neighbor>& heap) const {
    if (index == exclude) return;
    const Point& p = points_[index];
    double d2 = 0.0;
    for (int d = 0; d < Dim; ++d) {
      double diff = query[d] - p[d];
      d2 += diff * diff;
    }
    Neighbor cand{index, d2};
    if (heap.size() < k) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end(), neighbor_less);
    } else if (neighbor_less(cand, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), neighbor_less);
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end(), neighbor_less);
    }
  }

  void search(std::uint32_t node_id, const Point& query, std::size_t k, std::size_t exclude,
              std::vector<Neighbor>& heap) const {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
      for (std::uint32_t i = node.left; i < node.right; ++i)
        consider(query, k, exclude, order_[i], heap);
      return;
    }
    double diff = query[node.axis] - node.split;
    std::uint32_t near = diff < 0 ? node.left : node.right;
    std::uint32_t far = diff < 0 ? node.right : node.left;
    search(near, query, k, exclude, heap);
    // <= keeps the far side reachable when the worst kept neighbor ties the
    // plane distance exactly, so index tie-breaking stays consistent.
    if (heap.size() < k || diff * diff <= heap.front().dist2) search(far, query, k, exclude, heap);
  }

  std::vector<Point> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::uint32_t root_ = 0;
};

}  // namespace losc
