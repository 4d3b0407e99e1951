#pragma once

#include <numeric>
#include <span>

#include "losc/core.hpp"
#include "losc/kdtree.hpp"

namespace losc {

using InstanceId = std::uint16_t;

// Per-point semantic class plus instance id; instance 0 means stuff or no
// instance. In label files the pair packs into one 32-bit word (low half
// semantic, high half instance).
struct PanopticLabeling {
  std::vector<LabelId> semantic;
  std::vector<InstanceId> instance;

  std::size_t size() const { return semantic.size(); }

  void validate(const ClassSet& classes) const {
    if (semantic.size() != instance.size())
      throw std::invalid_argument("semantic and instance channels disagree on point count");
    std::vector<LabelId> instance_class;
    for (std::size_t i = 0; i < semantic.size(); ++i) {
      LabelId sem = semantic[i];
      if (!classes.valid_label(sem))
        throw std::invalid_argument("unknown class id " + std::to_string(sem));
      bool thing = sem != kIgnoreLabel && classes.is_thing(sem);
      if (!thing && instance[i] != 0)
        throw std::invalid_argument("non-thing point carries instance id " +
                                    std::to_string(instance[i]));
      if (thing && instance[i] == 0)
        throw std::invalid_argument("thing point lacks an instance id");
      if (instance[i] != 0) {
        if (instance_class.size() < static_cast<std::size_t>(instance[i]) + 1)
          instance_class.resize(instance[i] + 1, kIgnoreLabel);
        LabelId& owner = instance_class[instance[i]];
        if (owner == kIgnoreLabel) owner = sem;
        if (owner != sem)
          throw std::invalid_argument("instance " + std::to_string(instance[i]) +
                                      " spans two classes");
      }
    }
    for (std::size_t id = 1; id < instance_class.size(); ++id)
      if (instance_class[id] == kIgnoreLabel)
        throw std::invalid_argument("instance ids are not dense: " + std::to_string(id) +
                                    " is unused");
  }
};

// Bird's-eye view: drop z, keep point order.
inline std::vector<std::array<double, 2>> bev(const PointCloud& cloud) {
  std::vector<std::array<double, 2>> out(cloud.points.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = {static_cast<double>(cloud.points[i].x), static_cast<double>(cloud.points[i].y)};
  return out;
}

namespace detail {

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

}  // namespace detail

// Instance ids per point for one scan. Each thing class independently gets a
// graph with an edge from p to each of its k nearest same-class neighbors
// within radius r (undirected closure); connected components become
// instances. Components are numbered from 1 in order of their lowest point
// index; stuff, ignore, and non-thing points get 0.
inline std::vector<InstanceId> cluster(std::span<const std::array<double, 2>> points,
                                       std::span<const LabelId> semantic, const ClassSet& classes,
                                       std::size_t k = 16, double r = 1.5) {
  if (points.size() != semantic.size())
    throw std::invalid_argument("points and labels disagree on count");
  if (k == 0) throw std::invalid_argument("neighbor count must be at least 1");
  if (!(r > 0)) throw std::invalid_argument("clustering radius must be positive");

  std::vector<std::vector<std::size_t>> members(classes.size());
  for (std::size_t i = 0; i < semantic.size(); ++i) {
    LabelId sem = semantic[i];
    if (!classes.valid_label(sem))
      throw std::invalid_argument("unknown class id " + std::to_string(sem));
    if (sem != kIgnoreLabel && classes.is_thing(sem)) members[sem].push_back(i);
  }

  // Components across all classes, keyed by their lowest point index.
  std::vector<std::vector<std::size_t>> components;
  const double r2 = r * r;
  std::vector<Neighbor> neighbors;
  for (std::size_t c = 0; c < members.size(); ++c) {
    const std::vector<std::size_t>& idx = members[c];
    if (idx.empty()) continue;
    std::vector<std::array<double, 2>> local(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) local[i] = points[idx[i]];
    KdTree<2> tree(local);
    detail::UnionFind uf(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      tree.knn(local[i], k, neighbors, i);
      for (const Neighbor& nb : neighbors)
        if (nb.dist2 <= r2) uf.unite(i, nb.index);
    }
    std::vector<std::size_t> component_of(idx.size(), SIZE_MAX);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::size_t root = uf.find(i);
      if (component_of[root] == SIZE_MAX) {
        component_of[root] = components.size();
        components.emplace_back();
      }
      components[component_of[root]].push_back(idx[i]);
    }
  }

  // Local index order preserves global order inside each component, so the
  // front element is the component's lowest point index.
  std::vector<std::size_t> order(components.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return components[a][0] < components[b][0]; });

  if (components.size() > 65535)
    throw std::runtime_error("more than 65535 instances in one scan");
  std::vector<InstanceId> instance(points.size(), 0);
  for (std::size_t rank = 0; rank < order.size(); ++rank)
    for (std::size_t point : components[order[rank]])
      instance[point] = static_cast<InstanceId>(rank + 1);
  return instance;
}

inline PanopticLabeling panoptic_labeling(const PointCloud& cloud, const Labeling& semantic,
                                          const ClassSet& classes, std::size_t k = 16,
                                          double r = 1.5) {
  if (cloud.points.size() != semantic.labels.size())
    throw std::invalid_argument("cloud and labeling disagree on point count");
  PanopticLabeling out;
  out.semantic = semantic.labels;
  out.instance = cluster(bev(cloud), semantic.labels, classes, k, r);
  return out;
}

}  // namespace losc
