#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "flagrank/dataio.hpp"
#include "flagrank/error.hpp"
#include "flagrank/log.hpp"
#include "flagrank/rng.hpp"

// Reference detectors: Attribute Value Frequency and Isolation Forest.
namespace flagrank::baselines {

// 1 - AVF(x), where AVF(x) is the mean over attributes of the empirical
// frequency of x's value in that column.
inline std::vector<ScoredProcess> avf_scores(const BooleanDataset& ds) {
  require(!ds.empty(), ErrorKind::precondition, "avf: empty dataset");
  require(ds.num_attrs() >= 1, ErrorKind::precondition, "avf: dataset has no attributes");
  const double n = static_cast<double>(ds.size());
  const double m = static_cast<double>(ds.num_attrs());
  std::vector<double> count(ds.num_attrs(), 0.0);
  for (const auto& r : ds.rows())
    for (auto a : r.attrs) count[a] += 1.0;
  // Sum over columns assuming every value is 0, then correct active columns.
  double all_absent = 0.0;
  for (double c : count) all_absent += (n - c) / n;

  std::vector<ScoredProcess> out;
  out.reserve(ds.size());
  for (const auto& r : ds.rows()) {
    double sum = all_absent;
    for (auto a : r.attrs) sum += count[a] / n - (n - count[a]) / n;
    out.push_back(ScoredProcess{r.id, 1.0 - sum / m});
  }
  return out;
}

struct IsoNode {
  std::int32_t attr = -1;  // -1 for leaves
  std::int32_t absent = -1;
  std::int32_t present = -1;
  std::size_t size = 0;
};

struct IsoTree {
  std::vector<IsoNode> nodes;  // nodes[0] is the root
};

struct IForestModel {
  std::vector<IsoTree> trees;
  std::size_t subsample = 256;
  std::size_t num_trees = 100;
  std::uint64_t seed = 0;
  std::size_t num_attrs = 0;
  std::size_t depth_limit = 0;
  std::vector<std::string> notes;
};

// Average unsuccessful-search path length in a BST of n points.
inline double average_path_length(std::size_t n) {
  if (n <= 1) return 0.0;
  if (n == 2) return 1.0;
  const double m = static_cast<double>(n - 1);
  const double harmonic = std::log(m) + std::numbers::egamma;
  return 2.0 * harmonic - 2.0 * m / static_cast<double>(n);
}

namespace detail {

inline bool has_attr(const ProcessRow& r, std::uint32_t a) { return std::binary_search(r.attrs.begin(), r.attrs.end(), a); }

inline std::int32_t grow(IsoTree& tree, const BooleanDataset& ds, std::vector<std::size_t> rows, std::size_t depth,
                         std::size_t limit, Rng& rng, std::vector<std::size_t>& counts) {
  const auto id = static_cast<std::int32_t>(tree.nodes.size());
  tree.nodes.push_back(IsoNode{-1, -1, -1, rows.size()});
  if (depth >= limit || rows.size() <= 1) return id;

  std::fill(counts.begin(), counts.end(), 0);
  for (auto r : rows)
    for (auto a : ds.row(r).attrs) ++counts[a];
  std::vector<std::uint32_t> candidates;
  for (std::size_t a = 0; a < counts.size(); ++a)
    if (counts[a] > 0 && counts[a] < rows.size()) candidates.push_back(static_cast<std::uint32_t>(a));
  if (candidates.empty()) return id;

  const std::uint32_t attr = candidates[rng.below(candidates.size())];
  std::vector<std::size_t> absent, present;
  for (auto r : rows) (has_attr(ds.row(r), attr) ? present : absent).push_back(r);
  rows.clear();
  rows.shrink_to_fit();
  const auto left = grow(tree, ds, std::move(absent), depth + 1, limit, rng, counts);
  const auto right = grow(tree, ds, std::move(present), depth + 1, limit, rng, counts);
  tree.nodes[static_cast<std::size_t>(id)].attr = static_cast<std::int32_t>(attr);
  tree.nodes[static_cast<std::size_t>(id)].absent = left;
  tree.nodes[static_cast<std::size_t>(id)].present = right;
  return id;
}

inline double path_length(const IsoTree& tree, const ProcessRow& row) {
  std::size_t node = 0;
  double depth = 0.0;
  while (tree.nodes[node].attr >= 0) {
    const auto& n = tree.nodes[node];
    node = static_cast<std::size_t>(has_attr(row, static_cast<std::uint32_t>(n.attr)) ? n.present : n.absent);
    depth += 1.0;
  }
  return depth + average_path_length(tree.nodes[node].size);
}

}  // namespace detail

// Each tree gets its own seed derived from (seed, tree index).
inline IForestModel iforest_fit(const BooleanDataset& ds, std::size_t num_trees = 100, std::size_t subsample = 256,
                                std::uint64_t seed = 0) {
  require(!ds.empty(), ErrorKind::precondition, "iforest: empty dataset");
  require(subsample >= 2, ErrorKind::precondition, "iforest: subsample must be >= 2");
  require(num_trees >= 1, ErrorKind::precondition, "iforest: need at least one tree");
  IForestModel model;
  model.num_trees = num_trees;
  model.seed = seed;
  model.num_attrs = ds.num_attrs();
  model.subsample = subsample;
  if (subsample > ds.size()) {
    model.subsample = ds.size();
    model.notes.push_back("subsample " + std::to_string(subsample) + " exceeds " + std::to_string(ds.size()) +
                          " rows; clamped to " + std::to_string(ds.size()));
    logger().info("iforest: {}", model.notes.back());
  }
  model.depth_limit =
      model.subsample <= 1 ? 0 : static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(model.subsample))));

  // Sampling walks rows in process-id order so the forest ignores row order.
  std::vector<std::size_t> by_id(ds.size());
  for (std::size_t i = 0; i < by_id.size(); ++i) by_id[i] = i;
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) { return ds.row(a).id < ds.row(b).id; });

  std::vector<std::size_t> counts(ds.num_attrs());
  std::vector<std::size_t> all(ds.size());
  for (std::size_t t = 0; t < num_trees; ++t) {
    Rng rng(derive_seed(seed, "iforest.tree", t));
    all = by_id;
    // Partial Fisher-Yates: the first `subsample` slots are a uniform sample.
    for (std::size_t i = 0; i < model.subsample; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(all.size() - i));
      std::swap(all[i], all[j]);
    }
    std::vector<std::size_t> sample(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(model.subsample));
    IsoTree tree;
    detail::grow(tree, ds, std::move(sample), 0, model.depth_limit, rng, counts);
    model.trees.push_back(std::move(tree));
  }
  return model;
}

// s(x) = 2^(-E[h(x)] / c(subsample)); higher is more isolated.
inline std::vector<ScoredProcess> iforest_scores(const IForestModel& model, const BooleanDataset& ds) {
  require(ds.num_attrs() == model.num_attrs, ErrorKind::invalid_shape, "iforest: attribute count mismatch");
  double norm = average_path_length(model.subsample);
  if (norm <= 0.0) norm = 1.0;
  std::vector<ScoredProcess> out;
  out.reserve(ds.size());
  for (const auto& r : ds.rows()) {
    double total = 0.0;
    for (const auto& tree : model.trees) total += detail::path_length(tree, r);
    const double mean = total / static_cast<double>(model.trees.size());
    out.push_back(ScoredProcess{r.id, std::exp2(-mean / norm)});
  }
  return out;
}

}  // namespace flagrank::baselines
