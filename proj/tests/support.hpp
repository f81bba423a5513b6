#pragma once
// Shared helpers for the unit and acceptance suites: independent reference
// implementations (oracles), synthetic data generators and random networks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "birdnet/binarize.hpp"
#include "birdnet/dataset.hpp"
#include "birdnet/mining.hpp"
#include "birdnet/network.hpp"
#include "birdnet/rng.hpp"
#include "birdnet/trainer.hpp"

namespace testing_support {

using namespace birdnet;

// ---------------------------------------------------------------------------
// Binomial lower tail by direct pmf summation in long double.
//
// Returns ln P(K <= k) for every k in [0, n]. The lower cumulative sum is used
// while it is below one half; above that, ln(1 - P(K >= k + 1)) from the upper
// cumulative sum avoids cancellation.
inline std::vector<long double> binomial_log_cdf_oracle(std::size_t n, long double p) {
  std::vector<long double> lpmf(n + 1);
  const long double ln_p = std::log(p);
  const long double ln_q = std::log1p(-p);
  const long double nn = static_cast<long double>(n);
  for (std::size_t i = 0; i <= n; ++i) {
    const long double ii = static_cast<long double>(i);
    lpmf[i] = std::lgamma(nn + 1) - std::lgamma(ii + 1) - std::lgamma(nn - ii + 1) + ii * ln_p +
              (nn - ii) * ln_q;
  }
  auto log_add = [](long double a, long double b) {
    if (a == -std::numeric_limits<long double>::infinity()) return b;
    const long double hi = std::max(a, b);
    const long double lo = std::min(a, b);
    return hi + std::log1p(std::exp(lo - hi));
  };
  std::vector<long double> lower(n + 1), upper(n + 2, -std::numeric_limits<long double>::infinity());
  long double acc = -std::numeric_limits<long double>::infinity();
  for (std::size_t i = 0; i <= n; ++i) lower[i] = acc = log_add(acc, lpmf[i]);
  acc = -std::numeric_limits<long double>::infinity();
  for (std::size_t i = n + 1; i-- > 0;) upper[i] = acc = log_add(acc, lpmf[i]);

  std::vector<long double> out(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    if (k == n) {
      out[k] = 0.0L;
    } else if (lower[k] < std::log(0.5L)) {
      out[k] = lower[k];
    } else {
      out[k] = std::log1p(-std::exp(upper[k + 1]));
    }
  }
  return out;
}

inline double binomial_log_cdf_single(std::size_t k, std::size_t n, double p) {
  return static_cast<double>(binomial_log_cdf_oracle(n, p)[k]);
}

// ---------------------------------------------------------------------------
// Naive miner over a dense 0/1 table, written from the definitions.

using BitTable = std::vector<std::vector<int>>;  // [row][col]

inline BinaryMatrix to_bits(const BitTable& table, std::size_t d) {
  BinaryMatrix bits(table.size(), d);
  for (std::size_t r = 0; r < table.size(); ++r)
    for (std::size_t c = 0; c < d; ++c)
      if (table[r][c]) bits.set(r, c, true);
  return bits;
}

struct NaiveClause {
  std::size_t source, target;
  int type;            // 0..3
  int forbid_i, forbid_j;  // violated cell for the unordered pair (i, j), i < j
  double log_p;
  std::size_t exceptions, support;
  double fraction;
};

inline std::vector<Implication> naive_mine(const BitTable& table, std::size_t d, const MiningConfig& cfg) {
  const std::size_t n = table.size();
  const double nd = static_cast<double>(n);
  std::vector<std::size_t> ones(d, 0);
  for (const auto& row : table)
    for (std::size_t c = 0; c < d; ++c) ones[c] += row[c] ? 1 : 0;

  // antecedent value of the source, forbidden value of the target
  const int antecedent[4] = {1, 0, 1, 0};
  const int forbidden[4] = {0, 1, 1, 0};

  std::vector<Implication> out;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      if (ones[i] == 0 || ones[i] == n || ones[j] == 0 || ones[j] == n) continue;
      std::vector<NaiveClause> clauses;
      for (int orient = 0; orient < 2; ++orient) {
        const std::size_t a = orient == 0 ? i : j;
        const std::size_t b = orient == 0 ? j : i;
        for (int t = 0; t < 4; ++t) {
          std::size_t support = 0, exceptions = 0;
          for (const auto& row : table) {
            if (row[a] != antecedent[t]) continue;
            ++support;
            if (row[b] == forbidden[t]) ++exceptions;
          }
          if (support < cfg.min_support) continue;
          const double fraction = static_cast<double>(exceptions) / static_cast<double>(support);
          if (fraction > cfg.pi) continue;
          auto marginal = [&](std::size_t col, int value) {
            double p1 = static_cast<double>(ones[col]) / nd;
            p1 = std::min(std::max(p1, 1.0 / (2.0 * nd)), 1.0 - 1.0 / (2.0 * nd));
            return value == 1 ? p1 : 1.0 - p1;
          };
          const double p0 = marginal(a, antecedent[t]) * marginal(b, forbidden[t]);
          const double log_p = binomial_log_cdf_single(exceptions, n, p0);
          if (log_p > std::log(cfg.p_star)) continue;
          const int fi = orient == 0 ? antecedent[t] : forbidden[t];
          const int fj = orient == 0 ? forbidden[t] : antecedent[t];
          clauses.push_back({a, b, t, fi, fj, log_p, exceptions, support, fraction});
        }
      }
      if (clauses.empty()) continue;

      auto best_for = [&](int fi, int fj) -> const NaiveClause* {
        const NaiveClause* best = nullptr;
        for (const auto& c : clauses) {
          if (c.forbid_i != fi || c.forbid_j != fj) continue;
          if (best == nullptr || c.fraction < best->fraction) best = &c;
        }
        return best;
      };
      auto merged = [&](const NaiveClause* x, const NaiveClause* y, BirType type) {
        return Implication{i, j, type, std::max(x->log_p, y->log_p), x->exceptions + y->exceptions,
                           std::max(x->fraction, y->fraction), std::min(x->support, y->support)};
      };
      const auto* q10 = best_for(1, 0);
      const auto* q01 = best_for(0, 1);
      const auto* q11 = best_for(1, 1);
      const auto* q00 = best_for(0, 0);
      const bool equivalence = q10 && q01;
      const bool opposition = q11 && q00;
      for (const auto& c : clauses) {
        const bool off_diagonal = c.forbid_i != c.forbid_j;
        if ((off_diagonal && equivalence) || (!off_diagonal && opposition)) continue;
        out.push_back({c.source, c.target, static_cast<BirType>(c.type), c.log_p, c.exceptions, c.fraction,
                       c.support});
      }
      if (equivalence) out.push_back(merged(q10, q01, BirType::T4));
      if (opposition) out.push_back(merged(q11, q00, BirType::T5));
    }
  }
  return out;
}

inline auto edge_key(const Implication& e) {
  return std::make_tuple(std::min(e.source, e.target), std::max(e.source, e.target), static_cast<int>(e.type),
                         e.source, e.target);
}

inline void sort_edges(std::vector<Implication>& edges) {
  std::sort(edges.begin(), edges.end(),
            [](const Implication& a, const Implication& b) { return edge_key(a) < edge_key(b); });
}

// ---------------------------------------------------------------------------
// Synthetic data.

// Random table with planted structure so every implication type shows up.
inline BitTable structured_table(Rng& rng, std::size_t n, std::size_t d) {
  BitTable t(n, std::vector<int>(d));
  for (std::size_t c = 0; c < d; ++c) {
    const auto kind = rng.below(5);
    const std::size_t parent = c == 0 ? 0 : rng.below(c);
    const double noise = 0.02 * static_cast<double>(rng.below(4));
    const double density = 0.2 + 0.6 * rng.uniform();
    for (std::size_t r = 0; r < n; ++r) {
      int v = rng.uniform() < density;
      if (c > 0) {
        const int p = t[r][parent];
        switch (kind) {
          case 0: v = p; break;                          // copy
          case 1: v = 1 - p; break;                      // complement
          case 2: v = p ? 1 : v; break;                  // parent -> child
          case 3: v = p ? 0 : v; break;                  // parent -> not child
          default: break;                                // independent
        }
        if (rng.uniform() < noise) v = 1 - v;
      }
      t[r][c] = v;
    }
  }
  return t;
}


inline double noisy_level(Rng& rng, bool on, double spread = 0.5) {
  return (on ? 2.0 : -2.0) + spread * rng.normal();
}

struct PlantedData {
  Matrix values;
  std::vector<std::string> names;
  // (antecedent, consequent) column pairs of the planted A -> B clauses.
  std::vector<std::pair<std::size_t, std::size_t>> planted;
};

// `independent` Bernoulli(1/2) features followed by `planted` consequents; each
// consequent follows a distinct independent feature through A -> B with the
// given exception rate among rows where A holds, and is a fair coin elsewhere.
inline PlantedData planted_implications(std::size_t n, std::size_t independent, std::size_t planted,
                                        double exception_rate, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = independent + planted;
  std::vector<std::vector<int>> bits(n, std::vector<int>(d));
  for (auto& row : bits)
    for (std::size_t c = 0; c < independent; ++c) row[c] = rng.uniform() < 0.5;
  PlantedData out;
  for (std::size_t p = 0; p < planted; ++p) {
    const std::size_t a = p * (independent / std::max<std::size_t>(planted, 1));
    const std::size_t b = independent + p;
    out.planted.emplace_back(a, b);
    for (auto& row : bits) row[b] = row[a] ? (rng.uniform() >= exception_rate) : (rng.uniform() < 0.5);
  }
  out.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c)
      out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = noisy_level(rng, bits[r][c]);
  for (std::size_t c = 0; c < d; ++c) out.names.push_back("f" + std::to_string(c));
  return out;
}

// Classification data with latent binary programs: every class switches a set
// of latent bits on or off and each feature is a noisy copy of one latent bit.
inline LabeledDataset latent_program_dataset(std::size_t n, std::size_t d, std::size_t classes,
                                             std::size_t latent, double flip, std::uint64_t seed,
                                             double spread = 0.7) {
  Rng rng(seed);
  std::vector<std::vector<int>> program(classes, std::vector<int>(latent));
  for (auto& p : program)
    for (auto& v : p) v = rng.uniform() < 0.5;
  LabeledDataset data;
  data.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t c = 0; c < classes; ++c) data.class_names.push_back("C" + std::to_string(c));
  for (std::size_t j = 0; j < d; ++j) data.feature_names.push_back("g" + std::to_string(j));
  for (std::size_t r = 0; r < n; ++r) {
    const auto y = static_cast<int>(r % classes);
    data.labels.push_back(y);
    data.sample_ids.push_back("s" + std::to_string(r));
    std::vector<int> state = program[static_cast<std::size_t>(y)];
    for (auto& v : state)
      if (rng.uniform() < flip) v = 1 - v;
    for (std::size_t j = 0; j < d; ++j)
      data.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          noisy_level(rng, state[j % latent], spread);
  }
  return data;
}

// ---------------------------------------------------------------------------
// Random networks with real bindings and randomised parameters.

struct RandomNetOptions {
  std::size_t input_dim = 6;
  std::vector<std::size_t> widths{4};
  std::vector<std::size_t> head_hidden{3};
  std::size_t classes = 3;
  bool randomize_bn = true;     // gamma, beta, running statistics
  bool randomize_bias = true;   // BIR and head biases
  double dropout = 0.0;
};

inline std::vector<Implication> random_bindings(Rng& rng, std::size_t h, std::size_t d) {
  std::vector<Implication> spec;
  for (std::size_t k = 0; k < h; ++k) {
    Implication e;
    e.source = rng.below(d);
    do {
      e.target = rng.below(d);
    } while (e.target == e.source);
    e.type = static_cast<BirType>(rng.below(kNumBirTypes));
    e.log_p = -10.0 - static_cast<double>(k);
    spec.push_back(e);
  }
  return spec;
}

inline BirNetwork random_network(Rng& rng, const RandomNetOptions& o) {
  BirNetwork net;
  net.input_dim = o.input_dim;
  net.num_classes = o.classes;
  std::size_t dim = o.input_dim;
  for (auto h : o.widths) {
    auto layer = build_bir_layer(random_bindings(rng, h, dim), dim, rng, 0.5, o.dropout);
    for (Eigen::Index k = 0; k < layer.bias.size(); ++k) {
      if (o.randomize_bias) layer.bias(k) = 0.3 * rng.normal();
      if (o.randomize_bn) {
        layer.bn_gamma(k) = 0.5 + rng.uniform();
        layer.bn_beta(k) = 0.3 * rng.normal();
        layer.running_mean(k) = 0.3 * rng.normal();
        layer.running_var(k) = 0.5 + rng.uniform();
      }
    }
    net.layers.push_back(std::move(layer));
    dim = h;
  }
  net.head = make_dense_head(dim, o.head_hidden, o.classes, rng);
  if (o.randomize_bias)
    for (auto& b : net.head.biases)
      for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = 0.2 * rng.normal();
  net.check_invariants();
  return net;
}

inline Matrix random_rows(Rng& rng, std::size_t m, std::size_t d) {
  Matrix x(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  return x;
}

inline std::vector<int> random_labels(Rng& rng, std::size_t m, std::size_t classes) {
  std::vector<int> y(m);
  for (auto& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("birdnet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// Gradient checking.

inline double loss_of(const BirNetwork& net, const Matrix& x, const std::vector<int>& y, ForwardOptions mode) {
  return cross_entropy(forward(net, x, mode).logits, y);
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t kinks = 0;
  double worst = 0.0;
};

// Central differences over every parameter; entries where a ReLU changes state
// inside the +-h window are counted as kinks and left out.
inline GradCheck finite_difference_check(BirNetwork net, const Matrix& x, const std::vector<int>& y, ForwardOptions mode,
                                  double h = 1e-4) {
  const auto cache = forward(net, x, mode);
  auto grads = backward(net, cache, cross_entropy_gradient(cache.logits, y));
  auto params = parameter_views(net);
  auto views = gradient_views(grads);
  const auto pattern = [&](const BirNetwork& n) {
    const auto c = forward(n, x, mode);
    std::vector<bool> on;
    for (const auto& l : c.layers)
      for (Eigen::Index i = 0; i < l.post_bn.size(); ++i) on.push_back(l.post_bn.data()[i] > 0.0);
    for (std::size_t l = 0; l + 1 < c.head_pre.size(); ++l)
      for (Eigen::Index i = 0; i < c.head_pre[l].size(); ++i) on.push_back(c.head_pre[l].data()[i] > 0.0);
    return on;
  };
  const auto base = pattern(net);
  GradCheck out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double keep = params[p][i];
      params[p][i] = keep + h;
      const double up = loss_of(net, x, y, mode);
      const bool same_up = pattern(net) == base;
      params[p][i] = keep - h;
      const double down = loss_of(net, x, y, mode);
      const bool same_down = pattern(net) == base;
      params[p][i] = keep;
      if (!same_up || !same_down) {
        ++out.kinks;
        continue;
      }
      const double numeric = (up - down) / (2 * h);
      const double analytic = views[p][i];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      out.worst = std::max(out.worst, std::abs(numeric - analytic) / scale);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace testing_support
