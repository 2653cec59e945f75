#include "tpm/learnspn.hpp"

#include <numeric>
#include <random>

#include "tpm/kernels.hpp"

namespace tpm {

void LearnSpnParams::check() const {
  if (m_min_instances < 1) throw ArgumentError("m_min_instances must be >= 1");
  if (!(rho > 0.0)) throw ArgumentError("rho must be > 0");
  if (!(alpha >= 0.0)) throw ArgumentError("alpha must be >= 0");
  if (cluster_max_iters < 1) throw ArgumentError("cluster_max_iters must be >= 1");
  if (cluster_restarts < 1) throw ArgumentError("cluster_restarts must be >= 1");
}

PackedSlice::PackedSlice(const BinaryDataset& ds, std::span<const std::uint32_t> rows,
                         std::span<const std::uint32_t> vars)
    : num_rows_(rows.size()), words_((rows.size() + 63) / 64), vars_(vars.begin(), vars.end()) {
  for (std::uint32_t v : vars_) {
    if (v >= ds.num_vars()) throw ArgumentError("slice variable out of range");
  }
  bits_.assign(words_ * vars_.size(), 0);
  ones_.assign(vars_.size(), 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= ds.num_samples()) throw ArgumentError("slice row out of range");
    const auto sample = ds.sample(rows[r]);
    const std::uint64_t bit = std::uint64_t{1} << (r % 64);
    for (std::size_t j = 0; j < vars_.size(); ++j) {
      if (sample[vars_[j]]) bits_[j * words_ + r / 64] |= bit;
    }
  }
  for (std::size_t j = 0; j < vars_.size(); ++j) ones_[j] = kernels::popcount(column(j));
}

double g_statistic(const ContingencyTable& counts) {
  double n = 0.0;
  std::array<double, 2> row{}, col{};
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      n += counts[a][b];
      row[a] += counts[a][b];
      col[b] += counts[a][b];
    }
  }
  double g = 0.0;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const double c = counts[a][b];
      if (c > 0.0) g += c * std::log(c * n / (row[a] * col[b]));
    }
  }
  return std::max(0.0, 2.0 * g);
}

double g_test(const PackedSlice& slice, std::size_t i, std::size_t j) {
  if (i == j) throw ArgumentError("g_test needs two distinct variables");
  if (i >= slice.num_vars() || j >= slice.num_vars()) throw ArgumentError("g_test variable out of range");
  if (slice.num_rows() == 0) throw ArgumentError("g_test needs at least one row");
  const double n = static_cast<double>(slice.num_rows());
  const double c11 = static_cast<double>(kernels::and_popcount(slice.column(i), slice.column(j)));
  const double ci = static_cast<double>(slice.ones(i));
  const double cj = static_cast<double>(slice.ones(j));
  const ContingencyTable counts{{{n - ci - cj + c11, cj - c11}, {ci - c11, c11}}};
  return g_statistic(counts);
}

namespace {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (b < a) std::swap(a, b);
    parent[b] = a;
    return true;
  }
};

}  // namespace

std::vector<std::vector<std::uint32_t>> dependency_components(const PackedSlice& slice, double rho) {
  const std::size_t d = slice.num_vars();
  DisjointSets sets(d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      // Already connected pairs cannot change the partition.
      if (sets.find(i) == sets.find(j)) continue;
      if (g_test(slice, i, j) > rho) sets.unite(i, j);
    }
  }
  std::vector<std::vector<std::uint32_t>> components;
  std::vector<std::size_t> slot(d, SIZE_MAX);
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t r = sets.find(i);
    if (slot[r] == SIZE_MAX) {
      slot[r] = components.size();
      components.emplace_back();
    }
    components[slot[r]].push_back(slice.vars()[i]);
  }
  for (auto& c : components) std::sort(c.begin(), c.end());
  std::sort(components.begin(), components.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return components;
}

std::optional<RowClustering> cluster_rows(const BinaryDataset& ds, std::span<const std::uint32_t> rows,
                                          std::span<const std::uint32_t> vars,
                                          const LearnSpnParams& params) {
  const std::size_t n_rows = rows.size();
  const std::size_t d = vars.size();
  if (n_rows < 2) throw ArgumentError("cluster_rows needs at least 2 rows");
  Matrix x(n_rows, d);
  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto sample = ds.sample(rows[r]);
    for (std::size_t j = 0; j < d; ++j) x(r, j) = sample[vars[j]];
  }

  constexpr double kProbFloor = 1e-9;
  const double smoothing = params.alpha;
  std::optional<RowClustering> best;

  std::array<std::vector<double>, 2> resp{std::vector<double>(n_rows), std::vector<double>(n_rows)};
  std::array<std::vector<double>, 2> weighted_sum{std::vector<double>(d), std::vector<double>(d)};
  std::array<std::vector<double>, 2> slope{std::vector<double>(d), std::vector<double>(d)};
  std::array<double, 2> offset{};
  std::array<double, 2> log_prior{};
  std::vector<double> score0(n_rows), score1(n_rows);

  for (std::size_t restart = 0; restart < params.cluster_restarts; ++restart) {
    std::mt19937_64 rng(mix_seed(params.seed, restart));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t r = 0; r < n_rows; ++r) {
      resp[0][r] = unit(rng);
      resp[1][r] = 1.0 - resp[0][r];
    }
    double prev_ll = kNegInf;
    double ll = kNegInf;
    std::size_t iter = 0;
    while (iter < params.cluster_max_iters) {
      ++iter;
      // M-step.
      for (int c = 0; c < 2; ++c) {
        std::fill(weighted_sum[c].begin(), weighted_sum[c].end(), 0.0);
        double mass = 0.0;
        for (std::size_t r = 0; r < n_rows; ++r) {
          mass += resp[c][r];
          kernels::axpy(resp[c][r], x.row(r), weighted_sum[c]);
        }
        log_prior[c] = std::log(mass / static_cast<double>(n_rows));
        offset[c] = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          double p = (weighted_sum[c][j] + smoothing) / (mass + 2.0 * smoothing);
          p = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
          const double log_one = std::log(p);
          const double log_zero = std::log1p(-p);
          offset[c] += log_zero;
          slope[c][j] = log_one - log_zero;
        }
      }
      // E-step.
      ll = 0.0;
      for (std::size_t r = 0; r < n_rows; ++r) {
        score0[r] = log_prior[0] + offset[0] + kernels::dot(x.row(r), slope[0]);
        score1[r] = log_prior[1] + offset[1] + kernels::dot(x.row(r), slope[1]);
        const double row_ll = log_add_exp(score0[r], score1[r]);
        resp[0][r] = std::exp(score0[r] - row_ll);
        resp[1][r] = std::exp(score1[r] - row_ll);
        ll += row_ll;
      }
      if (prev_ll != kNegInf && std::abs(ll - prev_ll) < 1e-4 * std::abs(prev_ll)) break;
      prev_ll = ll;
    }
    if (!best || ll > best->log_likelihood) {
      RowClustering result;
      result.log_likelihood = ll;
      result.iterations = iter;
      result.assignment.resize(n_rows);
      std::size_t in_one = 0;
      for (std::size_t r = 0; r < n_rows; ++r) {
        result.assignment[r] = score1[r] > score0[r] ? 1 : 0;
        in_one += result.assignment[r];
      }
      result.weights = {static_cast<double>(n_rows - in_one) / static_cast<double>(n_rows),
                        static_cast<double>(in_one) / static_cast<double>(n_rows)};
      best = std::move(result);
    }
  }
  if (best->weights[0] == 0.0 || best->weights[1] == 0.0) return std::nullopt;
  return best;
}

namespace {

class SpnBuilder {
 public:
  SpnBuilder(const BinaryDataset& ds, const LearnSpnParams& params, std::ostream* log)
      : ds_(ds), params_(params), log_(log) {}

  std::uint32_t build(const std::vector<std::uint32_t>& rows, const std::vector<std::uint32_t>& vars,
                      std::uint64_t seed) {
    if (vars.size() == 1) return leaf(rows, vars[0]);
    if (rows.size() < params_.m_min_instances || rows.size() < 2) {
      note("FACTORIZE", rows, vars, "reason=early-stop");
      return factorize(rows, vars);
    }
    const PackedSlice slice(ds_, rows, vars);
    const auto components = dependency_components(slice, params_.rho);
    if (components.size() > 1) {
      note("PRD", rows, vars, "components=" + std::to_string(components.size()));
      std::vector<std::uint32_t> children;
      for (std::size_t k = 0; k < components.size(); ++k) {
        children.push_back(build(rows, components[k], mix_seed(seed, k)));
      }
      return add(SpnNode::product(std::move(children)));
    }

    LearnSpnParams local = params_;
    local.seed = seed;
    const auto clustering = cluster_rows(ds_, rows, vars, local);
    if (!clustering) {
      note("FACTORIZE", rows, vars, "reason=degenerate-split");
      return factorize(rows, vars);
    }
    std::array<std::vector<std::uint32_t>, 2> parts;
    for (std::size_t r = 0; r < rows.size(); ++r) parts[clustering->assignment[r]].push_back(rows[r]);
    note("SUM", rows, vars,
         "em_ll=" + std::to_string(clustering->log_likelihood) + " em_iters=" +
             std::to_string(clustering->iterations) + " split=" + std::to_string(parts[0].size()) + "/" +
             std::to_string(parts[1].size()));
    const std::uint32_t left = build(parts[0], vars, mix_seed(seed, 0x5eed0));
    const std::uint32_t right = build(parts[1], vars, mix_seed(seed, 0x5eed1));
    return add(SpnNode::sum({left, right}, {clustering->weights[0], clustering->weights[1]}));
  }

  std::vector<SpnNode> take() { return std::move(nodes_); }

 private:
  std::uint32_t add(SpnNode node) {
    nodes_.push_back(std::move(node));
    return static_cast<std::uint32_t>(nodes_.size() - 1);
  }

  std::uint32_t leaf(const std::vector<std::uint32_t>& rows, std::uint32_t var) {
    std::size_t ones = 0;
    for (std::uint32_t r : rows) ones += ds_.at(r, var);
    const double p1 = (static_cast<double>(ones) + params_.alpha) /
                      (static_cast<double>(rows.size()) + 2.0 * params_.alpha);
    return add(SpnNode::leaf(var, p1));
  }

  std::uint32_t factorize(const std::vector<std::uint32_t>& rows, const std::vector<std::uint32_t>& vars) {
    std::vector<std::uint32_t> children;
    children.reserve(vars.size());
    for (std::uint32_t v : vars) children.push_back(leaf(rows, v));
    return add(SpnNode::product(std::move(children)));
  }

  void note(const char* kind, const std::vector<std::uint32_t>& rows, const std::vector<std::uint32_t>& vars,
            const std::string& extra) {
    if (!log_) return;
    *log_ << kind << " rows=" << rows.size() << " scope=" << vars.size() << " " << extra << '\n';
  }

  const BinaryDataset& ds_;
  const LearnSpnParams& params_;
  std::ostream* log_;
  std::vector<SpnNode> nodes_;
};

}  // namespace

Spn learn_spn_b(const BinaryDataset& ds, const LearnSpnParams& params, std::ostream* log) {
  params.check();
  if (ds.num_samples() == 0 || ds.num_vars() == 0) throw EmptyDatasetError("cannot learn an SPN from an empty dataset");
  std::vector<std::uint32_t> rows(ds.num_samples());
  std::iota(rows.begin(), rows.end(), 0);
  std::vector<std::uint32_t> vars(ds.num_vars());
  std::iota(vars.begin(), vars.end(), 0);
  SpnBuilder builder(ds, params, log);
  builder.build(rows, vars, params.seed);
  Spn spn(builder.take(), ds.num_vars());
  if (!spn.valid()) throw StructureError("learner produced an invalid SPN:\n" + spn.validate().summary());
  return spn;
}

}  // namespace tpm
