#pragma once
// Boolean implication mining over packed binary columns.
//
// For an ordered feature pair (a, b) four directional clauses are tested:
//   T0  a_high -> b_high   violated by (a=1, b=0)
//   T1  a_low  -> b_low    violated by (a=0, b=1)
//   T2  a_high -> b_low    violated by (a=1, b=1)
//   T3  a_low  -> b_high   violated by (a=0, b=0)
// A clause holds when its exception count is improbably small under
// independence (binomial lower tail <= p*) and the exceptions make up at most
// pi of the samples satisfying the antecedent. When both off-diagonal
// quadrants of a pair are sparse the pair is equivalent (T4); when both
// diagonal quadrants are sparse it is opposite (T5).

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "birdnet/binarize.hpp"

namespace birdnet {

enum class BirType : std::uint8_t { T0 = 0, T1, T2, T3, T4, T5 };

inline constexpr std::size_t kNumBirTypes = 6;

std::string_view to_string(BirType type);
BirType parse_bir_type(std::string_view text);
bool is_directional(BirType type);

struct Implication {
  std::size_t source = 0;
  std::size_t target = 0;
  BirType type = BirType::T0;
  double log_p = 0.0;  // natural log
  std::size_t exceptions = 0;
  double exception_fraction = 0.0;
  std::size_t antecedent_support = 0;

  bool operator==(const Implication&) const = default;
};

struct MiningConfig {
  double p_star = 1e-6;
  double pi = 0.05;
  std::size_t h_max = 5000;
  std::size_t mu = 10;
  // Antecedent literal must hold on at least this many samples.
  std::size_t min_support = 5;
  // Worker threads for pair testing; output does not depend on it.
  unsigned threads = 1;

  void validate() const;
};

struct ImplicationGraph {
  std::vector<std::string> vertices;
  std::vector<Implication> edges;
  std::array<std::size_t, kNumBirTypes> type_counts{};

  void recount();
};

// 2x2 table of two packed columns, cells indexed [a][b].
struct Contingency {
  std::size_t n = 0;
  std::array<std::array<std::size_t, 2>, 2> cell{};

  std::size_t a_ones() const { return cell[1][0] + cell[1][1]; }
  std::size_t b_ones() const { return cell[0][1] + cell[1][1]; }
};

Contingency contingency(std::span<const std::uint64_t> col_a, std::span<const std::uint64_t> col_b,
                        std::size_t n);

// ln P(K <= k) for K ~ Binomial(n, p).
double log_binom_lower_tail(std::size_t k, std::size_t n, double p);

// Directional clauses (T0..T3) asserted for a -> b. Source/target indices of the
// returned implications are `a_index` / `b_index`.
std::vector<Implication> test_pair(std::span<const std::uint64_t> col_a,
                                   std::span<const std::uint64_t> col_b, std::size_t n,
                                   const MiningConfig& cfg, std::size_t a_index = 0,
                                   std::size_t b_index = 1);

// Both orientations of a single unordered pair (i < j), merged into T4/T5 where
// applicable.
std::vector<Implication> mine_pair(const BinaryMatrix& bits, std::size_t i, std::size_t j,
                                   const MiningConfig& cfg);

ImplicationGraph mine_birs(const BinaryMatrix& bits, const MiningConfig& cfg,
                           std::span<const std::string> feature_names = {});

// Collapses contrapositive duplicates (same pair and violated quadrant), orders
// by significance and keeps the first h_max.
std::vector<Implication> deduplicate_and_cap(const ImplicationGraph& graph, std::size_t h_max);

// Human-readable clause, e.g. "¬A→¬B".
std::string rule_text(const Implication& imp, std::string_view source_name,
                      std::string_view target_name);

void export_graph(const ImplicationGraph& graph, const std::filesystem::path& path);
std::string graph_to_dot(const ImplicationGraph& graph);

void write_edge_list(const ImplicationGraph& graph, const std::filesystem::path& path);
ImplicationGraph read_edge_list(const std::filesystem::path& path,
                                std::span<const std::string> vertices);

}  // namespace birdnet
