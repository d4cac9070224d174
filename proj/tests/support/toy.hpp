#pragma once

// Hand-assembled forests for oracle tests: trees are spelled out node by node
// so expected leaf assignments can be traced by hand.

#include <cstdint>
#include <vector>

#include "forestfuse/dataset.hpp"
#include "forestfuse/forest.hpp"

namespace toy {

using forestfuse::Node;
using forestfuse::Tree;

// Single split on `feature` at `threshold`; leaf 0 left, leaf 1 right.
inline Tree stump(int feature, double threshold, std::vector<double> left_value, std::vector<double> right_value) {
  Tree t;
  t.width = left_value.size();
  t.nodes = {Node{feature, threshold, 1, 2, -1, 1.0}, Node{-1, 0.0, -1, -1, 0, 0.0}, Node{-1, 0.0, -1, -1, 1, 0.0}};
  t.leaf_values = left_value;
  t.leaf_values.insert(t.leaf_values.end(), right_value.begin(), right_value.end());
  t.leaf_sizes = {1, 1};
  return t;
}

// Root on f0 at t0; its right child splits on f1 at t1. Leaves: 0 (left of
// root), 1 (right, f1 <= t1), 2 (right, f1 > t1).
inline Tree two_level(int f0, double t0, int f1, double t1, std::vector<std::vector<double>> leaf_values) {
  Tree t;
  t.width = leaf_values[0].size();
  t.nodes = {Node{f0, t0, 1, 2, -1, 1.0}, Node{-1, 0.0, -1, -1, 0, 0.0}, Node{f1, t1, 3, 4, -1, 0.5},
             Node{-1, 0.0, -1, -1, 1, 0.0}, Node{-1, 0.0, -1, -1, 2, 0.0}};
  for (const auto& v : leaf_values) t.leaf_values.insert(t.leaf_values.end(), v.begin(), v.end());
  t.leaf_sizes.assign(leaf_values.size(), 1);
  return t;
}

inline Tree root_leaf(std::vector<double> value) {
  Tree t;
  t.width = value.size();
  t.nodes = {Node{-1, 0.0, -1, -1, 0, 0.0}};
  t.leaf_values = std::move(value);
  t.leaf_sizes = {1};
  return t;
}

// Wraps trees and explicit in-bag counts around a supervised dataset.
inline forestfuse::Forest assemble(const forestfuse::Dataset& ds, std::vector<Tree> trees,
                                   std::vector<std::vector<std::uint32_t>> inbag,
                                   forestfuse::Mode mode = forestfuse::Mode::classification) {
  forestfuse::Forest f;
  f.config.mode = mode;
  f.config.n_trees = trees.size();
  f.config = f.config.resolved(ds.n_features());
  f.trees = std::move(trees);
  f.n_features = ds.n_features();
  f.n_train = ds.n_rows();
  f.synthetic_offset = ds.n_rows();
  f.n_classes = ds.has_target() ? ds.target()->n_classes : 0;
  f.inbag = std::move(inbag);
  f.schema = ds.schema();
  f.data_fingerprint = forestfuse::fingerprint(ds);
  f.leaf_of_train.resize(ds.n_rows() * f.trees.size());
  for (std::size_t r = 0; r < ds.n_rows(); ++r)
    for (std::size_t t = 0; t < f.trees.size(); ++t) f.leaf_of_train[r * f.trees.size() + t] = f.trees[t].leaf_of_row(ds, r);
  return f;
}

}  // namespace toy
