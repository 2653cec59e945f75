#include "tpm/spn.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "tpm/kernels.hpp"

namespace tpm {

namespace {

constexpr double kNormTolerance = 1e-9;
constexpr std::size_t kBatchChunk = 256;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void MarginalEvaluator::log_marginal_batch(std::span<const std::uint32_t> scope,
                                           std::span<const std::uint8_t> configs,
                                           std::span<double> out) const {
  const std::size_t q = scope.size();
  if (configs.size() != out.size() * q) throw ArgumentError("config buffer does not match batch size");
  std::vector<std::uint32_t> vars(scope.begin(), scope.end());
  for (std::size_t b = 0; b < out.size(); ++b) {
    std::vector<std::uint8_t> values(configs.begin() + static_cast<std::ptrdiff_t>(b * q),
                                     configs.begin() + static_cast<std::ptrdiff_t>((b + 1) * q));
    out[b] = log_marginal(PartialEvidence(vars, std::move(values)));
  }
}

SpnNode SpnNode::leaf(std::uint32_t var, double p1) {
  SpnNode n;
  n.kind = SpnNodeKind::kLeaf;
  n.var = var;
  n.p1 = p1;
  n.log_p = {std::log1p(-p1), std::log(p1)};
  return n;
}

SpnNode SpnNode::product(std::vector<std::uint32_t> children) {
  SpnNode n;
  n.kind = SpnNodeKind::kProduct;
  n.children = std::move(children);
  return n;
}

SpnNode SpnNode::sum(std::vector<std::uint32_t> children, std::vector<double> weights) {
  SpnNode n;
  n.kind = SpnNodeKind::kSum;
  n.children = std::move(children);
  n.weights = std::move(weights);
  n.log_weights.reserve(n.weights.size());
  for (double w : n.weights) n.log_weights.push_back(std::log(w));
  return n;
}

std::string SpnValidationReport::summary() const {
  if (ok()) return "ok";
  std::string out;
  for (const auto& v : violations) {
    out += "node " + std::to_string(v.node) + ": " + v.property + " (" + v.detail + ")\n";
  }
  return out;
}

Spn::Spn(std::vector<SpnNode> nodes, std::size_t num_vars) : nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw ArgumentError("an SPN needs at least one node");
  std::size_t inferred = 0;
  for (const auto& n : nodes_) {
    if (n.kind == SpnNodeKind::kLeaf) inferred = std::max<std::size_t>(inferred, n.var + 1);
    for (std::uint32_t c : n.children) {
      if (c >= nodes_.size()) throw ArgumentError("child id " + std::to_string(c) + " out of range");
    }
  }
  num_vars_ = num_vars == 0 ? inferred : num_vars;

  auto violate = [this](std::uint32_t id, std::string property, std::string detail) {
    report_.violations.push_back({id, std::move(property), std::move(detail)});
  };

  scopes_.resize(nodes_.size());
  for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
    const SpnNode& n = nodes_[id];
    auto& scope = scopes_[id];
    if (n.kind == SpnNodeKind::kLeaf) {
      if (n.var >= num_vars_) violate(id, "scope", "leaf variable outside [0, n)");
      if (!(n.p1 >= 0.0 && n.p1 <= 1.0)) {
        violate(id, "normalization", "leaf probability outside [0, 1]");
      } else if (std::abs(log_add_exp(n.log_p[0], n.log_p[1])) > kNormTolerance) {
        violate(id, "normalization", "leaf distribution does not sum to 1");
      }
      scope = {n.var};
      continue;
    }
    if (n.children.empty()) {
      violate(id, "topology", "internal node without children");
      continue;
    }
    bool ordered = true;
    std::size_t child_scope_total = 0;
    for (std::uint32_t c : n.children) {
      if (c >= id) {
        ordered = false;
        continue;
      }
      child_scope_total += scopes_[c].size();
      std::vector<std::uint32_t> merged;
      std::set_union(scope.begin(), scope.end(), scopes_[c].begin(), scopes_[c].end(),
                     std::back_inserter(merged));
      scope = std::move(merged);
    }
    if (!ordered) {
      violate(id, "topology", "child does not precede its parent (cycle or bad order)");
      continue;
    }
    if (n.kind == SpnNodeKind::kSum) {
      if (n.weights.size() != n.children.size() || n.log_weights.size() != n.children.size()) {
        violate(id, "normalization", "weight count differs from child count");
      } else if (std::any_of(n.weights.begin(), n.weights.end(), [](double w) { return !(w >= 0.0); }) ||
                 std::abs(log_sum_exp(n.log_weights)) > kNormTolerance) {
        violate(id, "normalization", "sum weights do not form a distribution");
      }
      for (std::uint32_t c : n.children) {
        if (scopes_[c] != scope) {
          violate(id, "completeness", "child " + std::to_string(c) + " scope differs from node scope");
          break;
        }
      }
    } else if (child_scope_total != scope.size()) {
      violate(id, "decomposability", "product children have overlapping scopes");
    }
  }
  const auto& root_scope = scopes_.back();
  bool full = root_scope.size() == num_vars_;
  for (std::size_t i = 0; full && i < root_scope.size(); ++i) full = root_scope[i] == i;
  if (!full) violate(root(), "root-scope", "root scope is not {0..n-1}");
}

std::size_t Spn::count(SpnNodeKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [kind](const SpnNode& n) { return n.kind == kind; }));
}

void Spn::evaluate(std::span<const std::uint32_t> scope, std::span<const std::uint8_t> configs,
                   std::span<double> out, std::size_t* node_visits) const {
  if (!valid()) throw StructureError("cannot evaluate an invalid SPN:\n" + report_.summary());
  const std::size_t q = scope.size();
  if (configs.size() != out.size() * q) throw ArgumentError("config buffer does not match batch size");

  std::vector<std::int32_t> position(num_vars_, -1);
  for (std::size_t i = 0; i < q; ++i) {
    if (scope[i] >= num_vars_) {
      throw ScopeError("variable " + std::to_string(scope[i]) + " outside model with " +
                       std::to_string(num_vars_) + " variables");
    }
    if (i > 0 && scope[i - 1] >= scope[i]) throw ArgumentError("query scope must be strictly increasing");
    position[scope[i]] = static_cast<std::int32_t>(i);
  }

  // Nodes whose scope misses the query marginalize to exactly log 1.
  std::vector<char> touched(nodes_.size(), 0);
  std::size_t visits = 0;
  for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
    const SpnNode& n = nodes_[id];
    if (n.kind == SpnNodeKind::kLeaf) {
      touched[id] = position[n.var] >= 0;
    } else {
      touched[id] = std::any_of(n.children.begin(), n.children.end(),
                                [&](std::uint32_t c) { return touched[c] != 0; });
    }
    visits += touched[id] ? 1 : 0;
  }
  if (node_visits) *node_visits = visits;
  if (!touched[root()]) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }

  const std::size_t chunk = std::min(kBatchChunk, std::max<std::size_t>(out.size(), 1));
  std::vector<double> values(nodes_.size() * chunk);
  std::vector<double> peak(chunk);
  std::vector<double> acc(chunk);
  for (std::size_t begin = 0; begin < out.size(); begin += chunk) {
    const std::size_t width = std::min(chunk, out.size() - begin);
    const std::uint8_t* block = configs.data() + begin * q;
    for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
      if (!touched[id]) continue;
      const SpnNode& n = nodes_[id];
      std::span<double> v(values.data() + static_cast<std::size_t>(id) * chunk, width);
      switch (n.kind) {
        case SpnNodeKind::kLeaf: {
          const std::size_t p = static_cast<std::size_t>(position[n.var]);
          for (std::size_t b = 0; b < width; ++b) v[b] = n.log_p[block[b * q + p]];
          break;
        }
        case SpnNodeKind::kProduct: {
          bool first = true;
          for (std::uint32_t c : n.children) {
            if (!touched[c]) continue;
            std::span<const double> cv(values.data() + static_cast<std::size_t>(c) * chunk, width);
            if (first) {
              std::copy(cv.begin(), cv.end(), v.begin());
              first = false;
            } else {
              kernels::add_inplace(v, cv);
            }
          }
          break;
        }
        case SpnNodeKind::kSum: {
          std::fill_n(peak.begin(), width, kNegInf);
          for (std::size_t k = 0; k < n.children.size(); ++k) {
            const double* cv = values.data() + static_cast<std::size_t>(n.children[k]) * chunk;
            const double lw = n.log_weights[k];
            for (std::size_t b = 0; b < width; ++b) peak[b] = std::max(peak[b], lw + cv[b]);
          }
          std::fill_n(acc.begin(), width, 0.0);
          for (std::size_t k = 0; k < n.children.size(); ++k) {
            const double* cv = values.data() + static_cast<std::size_t>(n.children[k]) * chunk;
            const double lw = n.log_weights[k];
            for (std::size_t b = 0; b < width; ++b) {
              if (peak[b] != kNegInf) acc[b] += std::exp(lw + cv[b] - peak[b]);
            }
          }
          for (std::size_t b = 0; b < width; ++b) {
            v[b] = peak[b] == kNegInf ? kNegInf : peak[b] + std::log(acc[b]);
          }
          break;
        }
      }
    }
    const double* root_values = values.data() + static_cast<std::size_t>(root()) * chunk;
    std::copy_n(root_values, width, out.begin() + static_cast<std::ptrdiff_t>(begin));
  }
}

void Spn::log_marginal_batch(std::span<const std::uint32_t> scope, std::span<const std::uint8_t> configs,
                             std::span<double> out) const {
  evaluate(scope, configs, out, nullptr);
}

double Spn::log_marginal(const PartialEvidence& ev) const {
  double result = 0.0;
  evaluate(ev.scope(), ev.values(), {&result, 1}, nullptr);
  return result;
}

double Spn::log_likelihood(std::span<const std::uint8_t> sample) const {
  if (sample.size() != num_vars_) throw DimensionError("sample length differs from SPN variable count");
  std::vector<std::uint32_t> all(num_vars_);
  for (std::uint32_t v = 0; v < num_vars_; ++v) all[v] = v;
  double result = 0.0;
  evaluate(all, sample, {&result, 1}, nullptr);
  return result;
}

SpnValidationReport validate_spn(const Spn& spn) { return spn.validate(); }

double spn_log_marginal(const Spn& spn, const PartialEvidence& ev) { return spn.log_marginal(ev); }

std::vector<double> spn_log_eval_batch(const Spn& spn, const BinaryDataset& ds,
                                       std::span<const std::uint32_t> scope) {
  const std::size_t m = ds.num_samples();
  const std::size_t q = scope.size();
  for (std::uint32_t v : scope) {
    if (v >= ds.num_vars()) throw ScopeError("scope variable outside dataset");
  }
  std::vector<std::uint8_t> configs(m * q);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < q; ++j) configs[i * q + j] = ds.at(i, scope[j]);
  }
  std::vector<double> out(m);
  spn.log_marginal_batch(scope, configs, out);
  return out;
}

std::string format_spn(const Spn& spn) {
  std::string out;
  for (std::uint32_t id = 0; id < spn.num_nodes(); ++id) {
    const SpnNode& n = spn.node(id);
    switch (n.kind) {
      case SpnNodeKind::kLeaf:
        out += "LEAF " + std::to_string(id) + " " + std::to_string(n.var) + " " + format_double(n.p1);
        break;
      case SpnNodeKind::kProduct:
        out += "PRD " + std::to_string(id);
        for (std::uint32_t c : n.children) out += " " + std::to_string(c);
        break;
      case SpnNodeKind::kSum:
        out += "SUM " + std::to_string(id);
        for (std::size_t k = 0; k < n.children.size(); ++k) {
          out += " " + std::to_string(n.children[k]) + ":" + format_double(n.weights[k]);
        }
        break;
    }
    out += '\n';
  }
  return out;
}

namespace {

template <typename T>
T parse_number(std::string_view token, std::size_t line, const char* what) {
  T value{};
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size() || token.empty()) {
    throw ParseError(line, std::string("bad ") + what + " '" + std::string(token) + "'");
  }
  return value;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

}  // namespace

Spn parse_spn(std::string_view text) {
  std::vector<SpnNode> nodes;
  std::unordered_map<std::uint64_t, std::uint32_t> index_of;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty() || tokens[0].front() == '#') continue;
    if (tokens.size() < 2) throw ParseError(line_no, "node line needs a type and an id");
    const auto id = parse_number<std::uint64_t>(tokens[1], line_no, "node id");
    if (index_of.contains(id)) throw ParseError(line_no, "duplicate node id " + std::to_string(id));
    auto child_index = [&](std::string_view tok) {
      const auto cid = parse_number<std::uint64_t>(tok, line_no, "child id");
      const auto it = index_of.find(cid);
      if (it == index_of.end()) {
        throw ParseError(line_no, "child " + std::to_string(cid) + " is not defined before use");
      }
      return it->second;
    };
    if (tokens[0] == "LEAF") {
      if (tokens.size() != 4) throw ParseError(line_no, "LEAF expects: LEAF <id> <var> <p1>");
      const auto var = parse_number<std::uint32_t>(tokens[2], line_no, "variable");
      const auto p1 = parse_number<double>(tokens[3], line_no, "probability");
      nodes.push_back(SpnNode::leaf(var, p1));
    } else if (tokens[0] == "PRD") {
      std::vector<std::uint32_t> children;
      for (std::size_t t = 2; t < tokens.size(); ++t) children.push_back(child_index(tokens[t]));
      if (children.empty()) throw ParseError(line_no, "PRD without children");
      nodes.push_back(SpnNode::product(std::move(children)));
    } else if (tokens[0] == "SUM") {
      std::vector<std::uint32_t> children;
      std::vector<double> weights;
      for (std::size_t t = 2; t < tokens.size(); ++t) {
        std::string_view tok = tokens[t];
        if (tok.size() >= 2 && tok.front() == '(' && tok.back() == ')') tok = tok.substr(1, tok.size() - 2);
        const std::size_t colon = tok.find(':');
        if (colon == std::string_view::npos) throw ParseError(line_no, "SUM entries are <child>:<weight>");
        std::string_view w = tok.substr(colon + 1);
        if (w.size() >= 2 && w.front() == '(' && w.back() == ')') w = w.substr(1, w.size() - 2);
        children.push_back(child_index(tok.substr(0, colon)));
        weights.push_back(parse_number<double>(w, line_no, "weight"));
      }
      if (children.empty()) throw ParseError(line_no, "SUM without children");
      nodes.push_back(SpnNode::sum(std::move(children), std::move(weights)));
    } else {
      throw ParseError(line_no, "unknown node type '" + std::string(tokens[0]) + "'");
    }
    index_of.emplace(id, static_cast<std::uint32_t>(nodes.size() - 1));
  }
  if (nodes.empty()) throw ParseError(line_no, "model file has no nodes");
  Spn spn(std::move(nodes));
  if (!spn.valid()) throw StructureError("SPN failed validation:\n" + spn.validate().summary());
  return spn;
}

Spn load_spn(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open SPN file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_spn(buffer.str());
}

void save_spn(const Spn& spn, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write SPN file " + path.string());
  out << format_spn(spn);
}

}  // namespace tpm
