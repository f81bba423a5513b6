#include "birdnet/mining.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include "birdnet/text_io.hpp"

namespace birdnet {

std::string_view to_string(BirType type) {
  static constexpr std::array<std::string_view, kNumBirTypes> names{"T0", "T1", "T2",
                                                                     "T3", "T4", "T5"};
  return names[static_cast<std::size_t>(type)];
}

BirType parse_bir_type(std::string_view text) {
  for (std::size_t t = 0; t < kNumBirTypes; ++t)
    if (to_string(static_cast<BirType>(t)) == text) return static_cast<BirType>(t);
  throw std::invalid_argument("unknown implication type '" + std::string(text) + "'");
}

bool is_directional(BirType type) { return type != BirType::T4 && type != BirType::T5; }

void MiningConfig::validate() const {
  if (!(p_star > 0.0 && p_star < 1.0)) throw std::invalid_argument("p_star must lie in (0, 1)");
  if (!(pi >= 0.0 && pi < 0.5)) throw std::invalid_argument("pi must lie in [0, 0.5)");
  if (h_max == 0) throw std::invalid_argument("h_max must be positive");
}

void ImplicationGraph::recount() {
  type_counts.fill(0);
  for (const auto& e : edges) ++type_counts[static_cast<std::size_t>(e.type)];
}

Contingency contingency(std::span<const std::uint64_t> col_a, std::span<const std::uint64_t> col_b,
                        std::size_t n) {
  std::size_t a1 = 0, b1 = 0, both = 0;
  for (std::size_t w = 0; w < col_a.size(); ++w) {
    a1 += static_cast<std::size_t>(std::popcount(col_a[w]));
    b1 += static_cast<std::size_t>(std::popcount(col_b[w]));
    both += static_cast<std::size_t>(std::popcount(col_a[w] & col_b[w]));
  }
  Contingency t;
  t.n = n;
  t.cell[1][1] = both;
  t.cell[1][0] = a1 - both;
  t.cell[0][1] = b1 - both;
  t.cell[0][0] = n - a1 - b1 + both;
  return t;
}

namespace {

double log_pmf(std::size_t k, std::size_t n, double p) {
  const double kd = static_cast<double>(k);
  const double nd = static_cast<double>(n);
  return std::lgamma(nd + 1.0) - std::lgamma(kd + 1.0) - std::lgamma(nd - kd + 1.0) +
         kd * std::log(p) + (nd - kd) * std::log1p(-p);
}

}  // namespace

double log_binom_lower_tail(std::size_t k, std::size_t n, double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("binomial p must lie in (0, 1)");
  if (k > n) throw std::invalid_argument("binomial k must not exceed n");
  if (k == n) return 0.0;

  // Sum from the anchor term away from the mode so every ratio is < 1; the
  // side that does not contain the mode is the small one and is summed directly.
  const double q = 1.0 - p;
  if (static_cast<double>(k) < static_cast<double>(n) * p) {
    double sum = 1.0;
    double term = 1.0;
    for (std::size_t i = k; i >= 1; --i) {
      term *= static_cast<double>(i) * q / (static_cast<double>(n - i + 1) * p);
      sum += term;
      if (term < 1e-20 * sum) break;
    }
    return log_pmf(k, n, p) + std::log(sum);
  }
  double sum = 1.0;
  double term = 1.0;
  for (std::size_t i = k + 1; i < n; ++i) {
    term *= static_cast<double>(n - i) * p / (static_cast<double>(i + 1) * q);
    sum += term;
    if (term < 1e-20 * sum) break;
  }
  const double log_upper = log_pmf(k + 1, n, p) + std::log(sum);
  return std::log1p(-std::exp(log_upper));
}

std::vector<Implication> test_pair(std::span<const std::uint64_t> col_a,
                                   std::span<const std::uint64_t> col_b, std::size_t n,
                                   const MiningConfig& cfg, std::size_t a_index,
                                   std::size_t b_index) {
  std::vector<Implication> out;
  const auto table = contingency(col_a, col_b, n);
  const auto a1 = table.a_ones();
  const auto b1 = table.b_ones();
  if (a1 == 0 || a1 == n || b1 == 0 || b1 == n) return out;

  const double nd = static_cast<double>(n);
  const double lo = 1.0 / (2.0 * nd);
  const auto marginal = [&](std::size_t ones, int bit) {
    const double p1 = std::clamp(static_cast<double>(ones) / nd, lo, 1.0 - lo);
    return bit == 1 ? p1 : 1.0 - p1;
  };
  const double log_p_star = std::log(cfg.p_star);

  // (antecedent bit of a, violating bit of b) per type T0..T3.
  static constexpr std::array<std::array<int, 2>, 4> kQuadrant{{{1, 0}, {0, 1}, {1, 1}, {0, 0}}};
  for (std::size_t t = 0; t < 4; ++t) {
    const int a_bit = kQuadrant[t][0];
    const int b_bit = kQuadrant[t][1];
    const std::size_t support = a_bit == 1 ? a1 : n - a1;
    const std::size_t exceptions = table.cell[static_cast<std::size_t>(a_bit)][static_cast<std::size_t>(b_bit)];
    if (support < cfg.min_support) continue;
    const double fraction = static_cast<double>(exceptions) / static_cast<double>(support);
    if (fraction > cfg.pi) continue;
    const double p0 = marginal(a1, a_bit) * marginal(b1, b_bit);
    // At or above the mean the lower tail is at least one half.
    if (cfg.p_star < 0.5 && static_cast<double>(exceptions) >= nd * p0) continue;
    const double log_p = log_binom_lower_tail(exceptions, n, p0);
    if (log_p > log_p_star) continue;
    out.push_back({a_index, b_index, static_cast<BirType>(t), log_p, exceptions, fraction, support});
  }
  return out;
}

namespace {

// Violated quadrant of a directional clause, expressed as (bit of lo, bit of hi)
// for the unordered pair lo < hi.
std::pair<int, int> violated_quadrant(const Implication& imp) {
  static constexpr std::array<std::array<int, 2>, 4> kQuadrant{{{1, 0}, {0, 1}, {1, 1}, {0, 0}}};
  const auto& q = kQuadrant[static_cast<std::size_t>(imp.type)];
  return imp.source < imp.target ? std::pair{q[0], q[1]} : std::pair{q[1], q[0]};
}

}  // namespace

std::vector<Implication> mine_pair(const BinaryMatrix& bits, std::size_t i, std::size_t j,
                                   const MiningConfig& cfg) {
  const auto n = bits.rows();
  auto edges = test_pair(bits.column(i), bits.column(j), n, cfg, i, j);
  auto reverse = test_pair(bits.column(j), bits.column(i), n, cfg, j, i);
  edges.insert(edges.end(), reverse.begin(), reverse.end());
  if (edges.empty()) return edges;

  // Best constituent per violated quadrant: lowest exception fraction, then
  // the i -> j orientation (which comes first in `edges`).
  std::map<std::pair<int, int>, const Implication*> best;
  for (const auto& e : edges) {
    auto& slot = best[violated_quadrant(e)];
    if (slot == nullptr || e.exception_fraction < slot->exception_fraction) slot = &e;
  }
  const auto merge = [&](std::pair<int, int> qa, std::pair<int, int> qb,
                         BirType merged) -> std::optional<Implication> {
    const auto ia = best.find(qa);
    const auto ib = best.find(qb);
    if (ia == best.end() || ib == best.end()) return std::nullopt;
    const auto& x = *ia->second;
    const auto& y = *ib->second;
    return Implication{i,
                       j,
                       merged,
                       std::max(x.log_p, y.log_p),
                       x.exceptions + y.exceptions,
                       std::max(x.exception_fraction, y.exception_fraction),
                       std::min(x.antecedent_support, y.antecedent_support)};
  };
  const auto equivalent = merge({1, 0}, {0, 1}, BirType::T4);
  const auto opposite = merge({1, 1}, {0, 0}, BirType::T5);

  std::vector<Implication> out;
  for (const auto& e : edges) {
    const bool off_diagonal = e.type == BirType::T0 || e.type == BirType::T1;
    if (off_diagonal && equivalent) continue;
    if (!off_diagonal && opposite) continue;
    out.push_back(e);
  }
  if (equivalent) out.push_back(*equivalent);
  if (opposite) out.push_back(*opposite);
  std::sort(out.begin(), out.end(), [](const Implication& a, const Implication& b) {
    return std::tie(a.type, a.source, a.target) < std::tie(b.type, b.source, b.target);
  });
  return out;
}

ImplicationGraph mine_birs(const BinaryMatrix& bits, const MiningConfig& cfg,
                           std::span<const std::string> feature_names) {
  cfg.validate();
  const auto d = bits.cols();
  ImplicationGraph graph;
  if (feature_names.empty()) {
    for (std::size_t j = 0; j < d; ++j) graph.vertices.push_back(std::to_string(j));
  } else {
    if (feature_names.size() != d) throw std::invalid_argument("mine_birs: feature name count mismatch");
    graph.vertices.assign(feature_names.begin(), feature_names.end());
  }

  std::vector<bool> usable(d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto ones = bits.count_ones(j);
    usable[j] = ones > 0 && ones < bits.rows();
  }

  // Results are kept per outer index and concatenated in index order, so the
  // edge order does not depend on the thread count.
  std::vector<std::vector<Implication>> per_row(d);
  const auto work = [&](std::size_t i) {
    if (!usable[i]) return;
    for (std::size_t j = i + 1; j < d; ++j) {
      if (!usable[j]) continue;
      auto found = mine_pair(bits, i, j, cfg);
      per_row[i].insert(per_row[i].end(), found.begin(), found.end());
    }
  };

  const unsigned threads = std::max(1U, cfg.threads);
  if (threads == 1 || d < 64) {
    for (std::size_t i = 0; i < d; ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < d; i += threads) work(i);
      });
    }
  }

  for (auto& row : per_row) graph.edges.insert(graph.edges.end(), row.begin(), row.end());
  graph.recount();
  return graph;
}

std::vector<Implication> deduplicate_and_cap(const ImplicationGraph& graph, std::size_t h_max) {
  using Key = std::tuple<std::size_t, std::size_t, int, int, int>;
  std::map<Key, Implication> kept;
  for (const auto& e : graph.edges) {
    const auto lo = std::min(e.source, e.target);
    const auto hi = std::max(e.source, e.target);
    Key key = is_directional(e.type)
                  ? Key{lo, hi, violated_quadrant(e).first, violated_quadrant(e).second, -1}
                  : Key{lo, hi, -1, -1, static_cast<int>(e.type)};
    auto [it, inserted] = kept.try_emplace(key, e);
    if (inserted) continue;
    auto& current = it->second;
    if (e.log_p < current.log_p ||
        (e.log_p == current.log_p && e.source < e.target && current.source > current.target)) {
      current = e;
    }
  }

  std::vector<Implication> out;
  out.reserve(kept.size());
  for (auto& [key, e] : kept) out.push_back(e);
  std::sort(out.begin(), out.end(), [](const Implication& a, const Implication& b) {
    return std::tie(a.log_p, a.source, a.target, a.type) <
           std::tie(b.log_p, b.source, b.target, b.type);
  });
  if (out.size() > h_max) out.resize(h_max);
  return out;
}

std::string rule_text(const Implication& imp, std::string_view source_name,
                      std::string_view target_name) {
  const std::string a(source_name);
  const std::string b(target_name);
  switch (imp.type) {
    case BirType::T0: return a + "→" + b;
    case BirType::T1: return "¬" + a + "→¬" + b;
    case BirType::T2: return a + "→¬" + b;
    case BirType::T3: return "¬" + a + "→" + b;
    case BirType::T4: return a + "↔" + b;
    case BirType::T5: return a + "↔¬" + b;
  }
  return {};
}

namespace {

std::string dot_quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::string graph_to_dot(const ImplicationGraph& graph) {
  std::ostringstream out;
  out << "digraph implications {\n";
  for (const auto& v : graph.vertices) out << "  " << dot_quote(v) << ";\n";
  for (const auto& e : graph.edges) {
    const double neg_log10_p = -e.log_p / std::log(10.0);
    out << "  " << dot_quote(graph.vertices.at(e.source)) << " -> "
        << dot_quote(graph.vertices.at(e.target)) << " [label="
        << dot_quote(std::string(to_string(e.type)) + " " + format_fixed(neg_log10_p, 2))
        << ", type=" << to_string(e.type);
    if (!is_directional(e.type)) out << ", dir=none";
    out << "];\n";
  }
  out << "}\n";
  return out.str();
}

void export_graph(const ImplicationGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << graph_to_dot(graph);
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

void write_edge_list(const ImplicationGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "source\ttarget\ttype\tlog_p\texceptions\texception_fraction\tantecedent_support\n";
  for (const auto& e : graph.edges) {
    out << graph.vertices.at(e.source) << '\t' << graph.vertices.at(e.target) << '\t'
        << to_string(e.type) << '\t' << format_double(e.log_p) << '\t' << e.exceptions << '\t'
        << format_double(e.exception_fraction) << '\t' << e.antecedent_support << '\n';
  }
}

ImplicationGraph read_edge_list(const std::filesystem::path& path,
                                std::span<const std::string> vertices) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  ImplicationGraph graph;
  graph.vertices.assign(vertices.begin(), vertices.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < vertices.size(); ++i) index[vertices[i]] = i;

  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string src, tgt, type, log_p, exc, frac, sup;
    std::getline(row, src, '\t');
    std::getline(row, tgt, '\t');
    std::getline(row, type, '\t');
    std::getline(row, log_p, '\t');
    std::getline(row, exc, '\t');
    std::getline(row, frac, '\t');
    std::getline(row, sup, '\t');
    const auto s = index.find(src);
    const auto t = index.find(tgt);
    if (s == index.end() || t == index.end())
      throw std::runtime_error("edge list references unknown vertex in line: " + line);
    graph.edges.push_back({s->second, t->second, parse_bir_type(type), std::stod(log_p),
                           std::stoul(exc), std::stod(frac), std::stoul(sup)});
  }
  graph.recount();
  return graph;
}

}  // namespace birdnet
