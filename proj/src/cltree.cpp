#include "tpm/cltree.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "tpm/kernels.hpp"

namespace tpm {

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Column-major copy of a dataset as doubles, reused across M-steps.
class ColumnStore {
 public:
  explicit ColumnStore(const BinaryDataset& ds) : rows_(ds.num_samples()), cols_(ds.num_vars()) {
    data_.resize(rows_ * cols_);
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t v = 0; v < cols_; ++v) data_[v * rows_ + r] = ds.at(r, v);
    }
  }

  WeightedCounts counts(std::span<const double> weights) const {
    if (weights.size() != rows_) throw ArgumentError("weight vector length differs from sample count");
    WeightedCounts out;
    out.num_vars = cols_;
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw ArgumentError("weights must be nonnegative");
      total += w;
    }
    if (!(total > 0.0)) throw ArgumentError("weights sum to zero");
    out.total = total;
    out.ones.resize(cols_);
    out.both = Matrix(cols_, cols_);
    std::vector<double> weighted(rows_);
    for (std::size_t i = 0; i < cols_; ++i) {
      const auto xi = column(i);
      out.ones[i] = kernels::dot(weights, xi);
      out.both(i, i) = out.ones[i];
      for (std::size_t r = 0; r < rows_; ++r) weighted[r] = weights[r] * xi[r];
      for (std::size_t j = i + 1; j < cols_; ++j) {
        const double both = kernels::dot(weighted, column(j));
        out.both(i, j) = both;
        out.both(j, i) = both;
      }
    }
    return out;
  }

 private:
  std::span<const double> column(std::size_t v) const { return {data_.data() + v * rows_, rows_}; }

  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

// Smoothed joint table P(X_i = a, X_j = b).
std::array<std::array<double, 2>, 2> smoothed_joint(const WeightedCounts& c, std::size_t i, std::size_t j,
                                                    double alpha) {
  const double n11 = c.both(i, j);
  const double n10 = std::max(0.0, c.ones[i] - n11);
  const double n01 = std::max(0.0, c.ones[j] - n11);
  const double n00 = std::max(0.0, c.total - c.ones[i] - c.ones[j] + n11);
  const double denom = c.total + 4.0 * alpha;
  return {{{(n00 + alpha) / denom, (n01 + alpha) / denom}, {(n10 + alpha) / denom, (n11 + alpha) / denom}}};
}

double smoothed_marginal1(const WeightedCounts& c, std::size_t i, double alpha) {
  return (c.ones[i] + 2.0 * alpha) / (c.total + 4.0 * alpha);
}

Matrix mutual_information(const WeightedCounts& c, double alpha) {
  const std::size_t n = c.num_vars;
  Matrix mi(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pi1 = smoothed_marginal1(c, i, alpha);
    const std::array<double, 2> pi{1.0 - pi1, pi1};
    for (std::size_t j = i + 1; j < n; ++j) {
      const double pj1 = smoothed_marginal1(c, j, alpha);
      const std::array<double, 2> pj{1.0 - pj1, pj1};
      const auto joint = smoothed_joint(c, i, j, alpha);
      double value = 0.0;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          const double p = joint[a][b];
          if (p > 0.0) value += p * std::log(p / (pi[a] * pj[b]));
        }
      }
      mi(i, j) = value;
      mi(j, i) = value;
    }
  }
  return mi;
}

ChowLiuTree chow_liu_from_counts(const WeightedCounts& c, double alpha) {
  const std::size_t n = c.num_vars;
  if (n == 0) throw ArgumentError("Chow-Liu needs at least one variable");
  const Matrix mi = mutual_information(c, alpha);

  struct Edge {
    double weight;
    std::uint32_t i, j;
  };
  std::vector<Edge> edges;
  edges.reserve(n * (n - 1) / 2);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = i + 1; j < n; ++j) edges.push_back({mi(i, j), i, j});
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  std::vector<std::size_t> set(n);
  std::iota(set.begin(), set.end(), 0);
  auto find = [&set](std::size_t x) {
    while (set[x] != x) x = set[x] = set[set[x]];
    return x;
  };
  std::vector<std::vector<std::uint32_t>> adjacent(n);
  std::size_t added = 0;
  for (const Edge& e : edges) {
    if (added + 1 == n) break;
    const std::size_t a = find(e.i), b = find(e.j);
    if (a == b) continue;
    set[std::max(a, b)] = std::min(a, b);
    adjacent[e.i].push_back(e.j);
    adjacent[e.j].push_back(e.i);
    ++added;
  }

  // Orient away from variable 0.
  std::vector<std::int32_t> parent(n, ChowLiuTree::kNoParent);
  std::vector<char> seen(n, 0);
  std::vector<std::uint32_t> queue{0};
  seen[0] = 1;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const std::uint32_t u = queue[head];
    auto next = adjacent[u];
    std::sort(next.begin(), next.end());
    for (std::uint32_t v : next) {
      if (seen[v]) continue;
      seen[v] = 1;
      parent[v] = static_cast<std::int32_t>(u);
      queue.push_back(v);
    }
  }

  std::vector<std::array<double, 2>> p1(n);
  const double root_p1 = smoothed_marginal1(c, 0, alpha);
  p1[0] = {root_p1, root_p1};
  for (std::size_t v = 1; v < n; ++v) {
    const auto u = static_cast<std::size_t>(parent[v]);
    // joint indexed [x_v][x_u]
    const auto joint = smoothed_joint(c, v, u, alpha);
    for (int b = 0; b < 2; ++b) {
      const double parent_mass = joint[0][b] + joint[1][b];
      p1[v][b] = parent_mass > 0.0 ? joint[1][b] / parent_mass : smoothed_marginal1(c, v, alpha);
    }
  }
  return ChowLiuTree(std::move(parent), std::move(p1));
}

double log_prob(double p1, int a) { return a ? std::log(p1) : std::log1p(-p1); }

}  // namespace

ChowLiuTree::ChowLiuTree(std::vector<std::int32_t> parent, std::vector<std::array<double, 2>> p1_given_parent)
    : parent_(std::move(parent)), p1_(std::move(p1_given_parent)) {
  const std::size_t n = parent_.size();
  if (n == 0) throw StructureError("a tree needs at least one node");
  if (p1_.size() != n) throw StructureError("probability table size differs from node count");
  std::vector<std::vector<std::uint32_t>> children(n);
  std::int32_t root = kNoParent;
  for (std::size_t v = 0; v < n; ++v) {
    if (parent_[v] == kNoParent) {
      if (root != kNoParent) throw StructureError("tree has more than one root");
      root = static_cast<std::int32_t>(v);
    } else if (parent_[v] < 0 || static_cast<std::size_t>(parent_[v]) >= n ||
               static_cast<std::size_t>(parent_[v]) == v) {
      throw StructureError("invalid parent for node " + std::to_string(v));
    } else {
      children[static_cast<std::size_t>(parent_[v])].push_back(static_cast<std::uint32_t>(v));
    }
    for (double p : p1_[v]) {
      if (!(p >= 0.0 && p <= 1.0)) throw StructureError("probability outside [0, 1] at node " + std::to_string(v));
    }
  }
  if (root == kNoParent) throw StructureError("tree has no root");
  order_.push_back(static_cast<std::uint32_t>(root));
  for (std::size_t head = 0; head < order_.size(); ++head) {
    for (std::uint32_t c : children[order_[head]]) order_.push_back(c);
  }
  if (order_.size() != n) throw StructureError("parent array contains a cycle");
  log_cpt_.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    for (int b = 0; b < 2; ++b) {
      log_cpt_[v][0][b] = log_prob(p1_[v][b], 0);
      log_cpt_[v][1][b] = log_prob(p1_[v][b], 1);
    }
  }
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> ChowLiuTree::edges() const {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (std::size_t v = 0; v < parent_.size(); ++v) {
    if (parent_[v] == kNoParent) continue;
    const auto u = static_cast<std::uint32_t>(parent_[v]);
    out.emplace_back(std::min<std::uint32_t>(u, static_cast<std::uint32_t>(v)),
                     std::max<std::uint32_t>(u, static_cast<std::uint32_t>(v)));
  }
  std::sort(out.begin(), out.end());
  return out;
}

double ChowLiuTree::log_likelihood(std::span<const std::uint8_t> sample) const {
  if (sample.size() != parent_.size()) throw DimensionError("sample length differs from tree size");
  double total = 0.0;
  for (std::size_t v = 0; v < parent_.size(); ++v) {
    const int b = parent_[v] == kNoParent ? 0 : sample[static_cast<std::size_t>(parent_[v])];
    total += log_cpt_[v][sample[v]][b];
  }
  return total;
}

double ChowLiuTree::evaluate(std::span<const std::int8_t> state, std::vector<char>& has_evidence,
                             std::vector<std::array<double, 2>>& incoming) const {
  const std::size_t n = parent_.size();
  has_evidence.assign(n, 0);
  for (std::size_t v = 0; v < n; ++v) has_evidence[v] = state[v] >= 0;
  for (std::size_t k = n; k-- > 1;) {
    const std::uint32_t v = order_[k];
    if (has_evidence[v]) has_evidence[static_cast<std::size_t>(parent_[v])] = 1;
  }
  const std::uint32_t r = order_.front();
  // Subtrees without evidence sum to exactly one.
  if (!has_evidence[r]) return 0.0;
  incoming.assign(n, {0.0, 0.0});
  auto local = [&](std::uint32_t v, int b) {
    const auto& in = incoming[v];
    if (state[v] >= 0) return log_cpt_[v][state[v]][b] + in[static_cast<std::size_t>(state[v])];
    return log_add_exp(log_cpt_[v][0][b] + in[0], log_cpt_[v][1][b] + in[1]);
  };
  for (std::size_t k = n; k-- > 1;) {
    const std::uint32_t v = order_[k];
    if (!has_evidence[v]) continue;
    auto& up = incoming[static_cast<std::size_t>(parent_[v])];
    up[0] += local(v, 0);
    up[1] += local(v, 1);
  }
  return local(r, 0);
}

double ChowLiuTree::log_marginal(const PartialEvidence& ev) const {
  std::vector<std::int8_t> state(parent_.size(), -1);
  for (std::size_t i = 0; i < ev.size(); ++i) {
    if (ev.scope()[i] >= parent_.size()) throw ScopeError("variable " + std::to_string(ev.scope()[i]) + " outside tree");
    state[ev.scope()[i]] = static_cast<std::int8_t>(ev.values()[i]);
  }
  std::vector<char> has;
  std::vector<std::array<double, 2>> incoming;
  return evaluate(state, has, incoming);
}

void ChowLiuTree::log_marginal_batch(std::span<const std::uint32_t> scope, std::span<const std::uint8_t> configs,
                                     std::span<double> out) const {
  const std::size_t q = scope.size();
  if (configs.size() != out.size() * q) throw ArgumentError("config buffer does not match batch size");
  for (std::size_t i = 0; i < q; ++i) {
    if (scope[i] >= parent_.size()) throw ScopeError("variable " + std::to_string(scope[i]) + " outside tree");
    if (i > 0 && scope[i - 1] >= scope[i]) throw ArgumentError("query scope must be strictly increasing");
  }
  std::vector<std::int8_t> state(parent_.size(), -1);
  std::vector<char> has;
  std::vector<std::array<double, 2>> incoming;
  for (std::size_t b = 0; b < out.size(); ++b) {
    for (std::size_t i = 0; i < q; ++i) state[scope[i]] = static_cast<std::int8_t>(configs[b * q + i]);
    out[b] = evaluate(state, has, incoming);
  }
}

MixtureOfTrees::MixtureOfTrees(std::vector<ChowLiuTree> components, std::vector<double> weights)
    : components_(std::move(components)), weights_(std::move(weights)) {
  if (components_.empty()) throw StructureError("a mixture needs at least one component");
  if (weights_.size() != components_.size()) throw StructureError("weight count differs from component count");
  for (const auto& c : components_) {
    if (c.num_vars() != components_.front().num_vars()) throw StructureError("components differ in size");
  }
  for (double w : weights_) {
    if (!(w >= 0.0)) throw StructureError("mixture weights must be nonnegative");
    log_weights_.push_back(std::log(w));
  }
  if (std::abs(log_sum_exp(log_weights_)) > 1e-9) throw StructureError("mixture weights do not sum to 1");
}

double MixtureOfTrees::log_marginal(const PartialEvidence& ev) const {
  if (ev.empty()) return 0.0;
  std::vector<double> terms(components_.size());
  for (std::size_t c = 0; c < components_.size(); ++c) {
    terms[c] = log_weights_[c] + components_[c].log_marginal(ev);
  }
  return log_sum_exp(terms);
}

double MixtureOfTrees::log_likelihood(std::span<const std::uint8_t> sample) const {
  std::vector<double> terms(components_.size());
  for (std::size_t c = 0; c < components_.size(); ++c) {
    terms[c] = log_weights_[c] + components_[c].log_likelihood(sample);
  }
  return log_sum_exp(terms);
}

WeightedCounts weighted_counts(const BinaryDataset& ds, std::span<const double> weights) {
  return ColumnStore(ds).counts(weights);
}

Matrix weighted_mutual_information(const BinaryDataset& ds, std::span<const double> weights, double alpha) {
  if (!(alpha >= 0.0)) throw ArgumentError("alpha must be >= 0");
  return mutual_information(weighted_counts(ds, weights), alpha);
}

ChowLiuTree learn_chow_liu(const BinaryDataset& ds, std::span<const double> weights, double alpha) {
  if (!(alpha >= 0.0)) throw ArgumentError("alpha must be >= 0");
  return chow_liu_from_counts(weighted_counts(ds, weights), alpha);
}

double tree_log_marginal(const ChowLiuTree& tree, const PartialEvidence& ev) { return tree.log_marginal(ev); }

double mt_log_marginal(const MixtureOfTrees& mt, const PartialEvidence& ev) { return mt.log_marginal(ev); }

MixtureEmResult fit_mixture_em(const BinaryDataset& ds, const MixtureEmOptions& options, std::ostream* log) {
  const std::size_t m = ds.num_samples();
  const std::size_t n = ds.num_vars();
  const std::size_t k = options.components;
  if (k < 1) throw ArgumentError("mixture needs at least one component");
  if (m == 0 || n == 0) throw EmptyDatasetError("cannot fit a mixture to an empty dataset");
  if (k > m) throw ArgumentError("more mixture components than samples");
  if (!(options.alpha >= 0.0)) throw ArgumentError("alpha must be >= 0");
  if (options.max_iters < 1) throw ArgumentError("max_iters must be >= 1");

  const ColumnStore store(ds);
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // resp stored component-major: resp[c * m + i].
  std::vector<double> resp(k * m);
  for (std::size_t i = 0; i < m; ++i) {
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) total += resp[c * m + i] = unit(rng);
    for (std::size_t c = 0; c < k; ++c) resp[c * m + i] /= total;
  }

  MixtureEmResult result;
  std::optional<MixtureOfTrees> previous;
  std::vector<ChowLiuTree> trees(k);
  std::vector<double> mass(k);
  std::vector<double> terms(k);
  for (std::size_t iter = 0; iter < options.max_iters; ++iter) {
    // M-step.
    for (std::size_t c = 0; c < k; ++c) {
      std::span<double> weights(resp.data() + c * m, m);
      mass[c] = std::accumulate(weights.begin(), weights.end(), 0.0);
      if (mass[c] < 1e-12) {
        // Re-seed around a random row: weight decays with Hamming distance.
        const std::size_t anchor = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
        const auto centre = ds.sample(anchor);
        for (std::size_t i = 0; i < m; ++i) {
          std::size_t dist = 0;
          const auto s = ds.sample(i);
          for (std::size_t v = 0; v < n; ++v) dist += s[v] != centre[v];
          weights[i] = std::exp(-static_cast<double>(dist));
        }
        mass[c] = 1.0;
        ++result.reseeded_components;
        if (log) *log << "EM iter " << iter + 1 << ": component " << c << " re-seeded at row " << anchor << '\n';
      }
    }
    parallel_for(k, options.workers, [&](std::size_t c) {
      trees[c] = chow_liu_from_counts(store.counts({resp.data() + c * m, m}), options.alpha);
    });
    const double total_mass = std::accumulate(mass.begin(), mass.end(), 0.0);
    std::vector<double> lambda(k);
    for (std::size_t c = 0; c < k; ++c) lambda[c] = mass[c] / total_mass;
    MixtureOfTrees model(trees, lambda);

    // E-step.
    double ll = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto s = ds.sample(i);
      for (std::size_t c = 0; c < k; ++c) terms[c] = model.log_weight(c) + trees[c].log_likelihood(s);
      const double row_ll = log_sum_exp(terms);
      for (std::size_t c = 0; c < k; ++c) resp[c * m + i] = std::exp(terms[c] - row_ll);
      ll += row_ll;
    }
    if (log) *log << "EM iter " << iter + 1 << ": train LL " << format_double(ll) << '\n';

    if (previous && ll < result.log_likelihoods.back() - 1e-8) {
      result.stopped_on_decrease = true;
      if (log) *log << "EM stopped: smoothed M-step lowered the likelihood; keeping previous model\n";
      break;
    }
    const bool converged =
        previous && (ll - result.log_likelihoods.back()) < options.tol * std::abs(result.log_likelihoods.back());
    result.log_likelihoods.push_back(ll);
    previous = std::move(model);
    if (converged) break;
  }
  result.model = std::move(*previous);
  return result;
}

std::string format_mixture(const MixtureOfTrees& mt) {
  std::string out = "MT " + std::to_string(mt.num_components()) + "\n";
  for (std::size_t c = 0; c < mt.num_components(); ++c) {
    out += "LAMBDA " + format_double(mt.weight(c)) + "\n";
    const ChowLiuTree& t = mt.component(c);
    for (std::size_t v = 0; v < t.num_vars(); ++v) {
      const auto& p = t.p1_given_parent(v);
      out += "NODE " + std::to_string(v) + " " + std::to_string(t.parent()[v]) + " " + format_double(p[0]) + " " +
             format_double(p[1]) + "\n";
    }
  }
  return out;
}

namespace {

template <typename T>
T parse_token(std::string_view token, std::size_t line, const char* what) {
  T value{};
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (token.empty() || ec != std::errc() || ptr != token.data() + token.size()) {
    throw ParseError(line, std::string("bad ") + what + " '" + std::string(token) + "'");
  }
  return value;
}

}  // namespace

MixtureOfTrees parse_mixture(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::size_t declared = 0;
  bool header = false;
  std::vector<double> weights;
  std::vector<std::vector<std::int32_t>> parents;
  std::vector<std::vector<std::array<double, 2>>> tables;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (!header) {
      if (tok.size() != 2 || tok[0] != "MT") throw ParseError(line_no, "expected header 'MT <C>'");
      declared = parse_token<std::size_t>(tok[1], line_no, "component count");
      header = true;
    } else if (tok[0] == "LAMBDA") {
      if (tok.size() != 2) throw ParseError(line_no, "expected 'LAMBDA <w>'");
      weights.push_back(parse_token<double>(tok[1], line_no, "weight"));
      parents.emplace_back();
      tables.emplace_back();
    } else if (tok[0] == "NODE") {
      if (weights.empty()) throw ParseError(line_no, "NODE before LAMBDA");
      if (tok.size() != 5) throw ParseError(line_no, "expected 'NODE <v> <parent> <p1|0> <p1|1>'");
      const auto v = parse_token<std::size_t>(tok[1], line_no, "node");
      if (v != parents.back().size()) throw ParseError(line_no, "NODE lines must list variables 0..n-1 in order");
      parents.back().push_back(parse_token<std::int32_t>(tok[2], line_no, "parent"));
      tables.back().push_back({parse_token<double>(tok[3], line_no, "probability"),
                               parse_token<double>(tok[4], line_no, "probability")});
    } else {
      throw ParseError(line_no, "unknown record '" + tok[0] + "'");
    }
  }
  if (!header) throw ParseError(line_no, "missing 'MT <C>' header");
  if (weights.size() != declared) {
    throw ParseError(line_no, "header declares " + std::to_string(declared) + " components, found " +
                                  std::to_string(weights.size()));
  }
  std::vector<ChowLiuTree> components;
  for (std::size_t c = 0; c < weights.size(); ++c) components.emplace_back(parents[c], tables[c]);
  return MixtureOfTrees(std::move(components), std::move(weights));
}

MixtureOfTrees load_mixture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open mixture file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_mixture(buffer.str());
}

void save_mixture(const MixtureOfTrees& mt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write mixture file " + path.string());
  out << format_mixture(mt);
}

}  // namespace tpm
