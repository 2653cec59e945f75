#pragma once
// Test-only oracles and generators. The oracles work in linear space over
// full assignments and share no code with the library's evaluators.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "tpm/cltree.hpp"
#include "tpm/dataset.hpp"
#include "tpm/spn.hpp"

namespace tpm::testing {

using Joint = std::function<double(const std::vector<std::uint8_t>&)>;

// P(x) for a full assignment, by a forward pass over the node list.
inline double oracle_spn_joint(const Spn& spn, const std::vector<std::uint8_t>& x) {
  std::vector<double> value(spn.num_nodes());
  for (std::uint32_t id = 0; id < spn.num_nodes(); ++id) {
    const SpnNode& node = spn.node(id);
    switch (node.kind) {
      case SpnNodeKind::kLeaf:
        value[id] = x[node.var] ? node.p1 : 1.0 - node.p1;
        break;
      case SpnNodeKind::kProduct: {
        double p = 1.0;
        for (auto c : node.children) p *= value[c];
        value[id] = p;
        break;
      }
      case SpnNodeKind::kSum: {
        double p = 0.0;
        for (std::size_t i = 0; i < node.children.size(); ++i) p += node.weights[i] * value[node.children[i]];
        value[id] = p;
        break;
      }
    }
  }
  return value.back();
}

inline double oracle_tree_joint(const ChowLiuTree& tree, const std::vector<std::uint8_t>& x) {
  double p = 1.0;
  for (std::size_t v = 0; v < tree.num_vars(); ++v) {
    const int pa = tree.parent()[v];
    const double p1 = tree.p1_given_parent(v)[pa < 0 ? 0 : x[static_cast<std::size_t>(pa)]];
    p *= x[v] ? p1 : 1.0 - p1;
  }
  return p;
}

inline double oracle_mt_joint(const MixtureOfTrees& mt, const std::vector<std::uint8_t>& x) {
  double p = 0.0;
  for (std::size_t c = 0; c < mt.num_components(); ++c) p += mt.weight(c) * oracle_tree_joint(mt.component(c), x);
  return p;
}

// log of the sum of joint(x) over every completion of the evidence.
inline double oracle_log_marginal(std::size_t n, const Joint& joint, const PartialEvidence& ev) {
  std::vector<std::uint32_t> free;
  std::vector<std::uint8_t> x(n, 0);
  std::vector<char> fixed(n, 0);
  for (std::size_t i = 0; i < ev.size(); ++i) {
    x[ev.scope()[i]] = ev.values()[i];
    fixed[ev.scope()[i]] = 1;
  }
  for (std::uint32_t v = 0; v < n; ++v) {
    if (!fixed[v]) free.push_back(v);
  }
  double total = 0.0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << free.size()); ++mask) {
    for (std::size_t i = 0; i < free.size(); ++i) x[free[i]] = (mask >> i) & 1U;
    total += joint(x);
  }
  return std::log(total);
}

inline double oracle_total_mass(std::size_t n, const Joint& joint) {
  double total = 0.0;
  std::vector<std::uint8_t> x(n);
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    for (std::size_t v = 0; v < n; ++v) x[v] = (mask >> v) & 1U;
    total += joint(x);
  }
  return total;
}

inline PartialEvidence random_evidence(std::size_t n, std::mt19937_64& rng, std::size_t min_size = 0) {
  std::uniform_int_distribution<std::size_t> size_dist(min_size, n);
  const std::size_t size = size_dist(rng);
  std::vector<std::uint32_t> vars(n);
  for (std::uint32_t v = 0; v < n; ++v) vars[v] = v;
  std::shuffle(vars.begin(), vars.end(), rng);
  vars.resize(size);
  std::sort(vars.begin(), vars.end());
  std::vector<std::uint8_t> values(size);
  std::bernoulli_distribution coin(0.5);
  for (auto& b : values) b = coin(rng);
  return {vars, values};
}

namespace detail {

inline std::uint32_t build_random_spn(std::vector<std::uint32_t> scope, std::mt19937_64& rng,
                                      std::vector<SpnNode>& nodes, int depth) {
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  std::uniform_int_distribution<int> pick(0, 2);
  auto push = [&nodes](SpnNode n) {
    nodes.push_back(std::move(n));
    return static_cast<std::uint32_t>(nodes.size() - 1);
  };
  if (scope.size() == 1) {
    if (pick(rng) == 0) {
      const auto a = push(SpnNode::leaf(scope[0], unit(rng)));
      const auto b = push(SpnNode::leaf(scope[0], unit(rng)));
      const double w = unit(rng);
      return push(SpnNode::sum({a, b}, {w, 1.0 - w}));
    }
    return push(SpnNode::leaf(scope[0], unit(rng)));
  }
  const bool make_sum = depth < 4 && pick(rng) != 0;
  if (make_sum) {
    const std::size_t k = 2 + static_cast<std::size_t>(pick(rng) == 0);
    std::vector<std::uint32_t> children;
    std::vector<double> weights;
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      children.push_back(build_random_spn(scope, rng, nodes, depth + 1));
      weights.push_back(unit(rng));
      total += weights.back();
    }
    for (double& w : weights) w /= total;
    return push(SpnNode::sum(children, weights));
  }
  std::shuffle(scope.begin(), scope.end(), rng);
  std::uniform_int_distribution<std::size_t> cut(1, scope.size() - 1);
  const std::size_t at = cut(rng);
  std::vector<std::uint32_t> left(scope.begin(), scope.begin() + static_cast<std::ptrdiff_t>(at));
  std::vector<std::uint32_t> right(scope.begin() + static_cast<std::ptrdiff_t>(at), scope.end());
  const auto a = build_random_spn(left, rng, nodes, depth + 1);
  const auto b = build_random_spn(right, rng, nodes, depth + 1);
  return push(SpnNode::product({a, b}));
}

}  // namespace detail

// Random valid SPN over n variables.
inline Spn random_spn(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::uint32_t> scope(n);
  for (std::uint32_t v = 0; v < n; ++v) scope[v] = v;
  std::vector<SpnNode> nodes;
  detail::build_random_spn(scope, rng, nodes, 0);
  return Spn(std::move(nodes), n);
}

// Random tree with random CPTs.
inline ChowLiuTree random_tree(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  std::vector<std::int32_t> parent(n, ChowLiuTree::kNoParent);
  std::vector<std::array<double, 2>> p1(n);
  for (std::size_t v = 1; v < n; ++v) {
    std::uniform_int_distribution<std::size_t> pick(0, v - 1);
    parent[v] = static_cast<std::int32_t>(pick(rng));
  }
  for (std::size_t v = 0; v < n; ++v) {
    p1[v] = {unit(rng), unit(rng)};
    if (v == 0) p1[v][1] = p1[v][0];
  }
  return ChowLiuTree(parent, p1);
}

// m samples from a c-component mixture of random product distributions
// with sharply peaked parameters, so the data has learnable structure.
inline BinaryDataset mixture_dataset(std::size_t m, std::size_t n, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> centers(c, std::vector<double>(n));
  for (auto& center : centers) {
    for (double& p : center) p = unit(rng) < 0.5 ? 0.1 + 0.1 * unit(rng) : 0.8 + 0.1 * unit(rng);
  }
  std::uniform_int_distribution<std::size_t> comp(0, c - 1);
  std::vector<std::uint8_t> samples(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& center = centers[comp(rng)];
    for (std::size_t v = 0; v < n; ++v) samples[i * n + v] = unit(rng) < center[v];
  }
  return BinaryDataset(n, std::move(samples));
}

// Every labeled tree on n >= 2 vertices, as sorted edge lists, by decoding
// all n^(n-2) Pruefer sequences.
inline std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> all_spanning_trees(std::size_t n) {
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> out;
  const std::size_t len = n - 2;
  std::size_t total = 1;
  for (std::size_t i = 0; i < len; ++i) total *= n;
  std::vector<std::uint32_t> seq(len);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (auto& s : seq) {
      s = static_cast<std::uint32_t>(c % n);
      c /= n;
    }
    std::vector<int> degree(n, 1);
    for (auto s : seq) ++degree[s];
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    for (auto s : seq) {
      for (std::uint32_t leaf = 0; leaf < n; ++leaf) {
        if (degree[leaf] == 1) {
          edges.emplace_back(std::min(leaf, s), std::max(leaf, s));
          --degree[leaf];
          --degree[s];
          break;
        }
      }
    }
    std::vector<std::uint32_t> last;
    for (std::uint32_t v = 0; v < n; ++v) {
      if (degree[v] == 1) last.push_back(v);
    }
    edges.emplace_back(last[0], last[1]);
    std::sort(edges.begin(), edges.end());
    out.push_back(std::move(edges));
  }
  return out;
}

inline BinaryDataset uniform_dataset(std::size_t m, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<std::uint8_t> samples(m * n);
  for (auto& b : samples) b = coin(rng);
  return BinaryDataset(n, std::move(samples));
}

}  // namespace tpm::testing
