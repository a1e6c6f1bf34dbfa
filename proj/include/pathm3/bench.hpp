#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pathm3 {

struct BenchRow {
  std::size_t M = 0;
  std::size_t m = 0;
  std::string method;  // "exact" or "nystrom"
  double wall_ms = 0.0;
  std::optional<double> mean_rel_err;  // Nyström only
};

struct BenchConfig {
  std::vector<std::size_t> lengths{256, 512, 1024, 2048};
  std::size_t landmarks = 64;
  std::size_t repeats = 3;
  std::size_t head_dim = 32;
  std::size_t pinv_iterations = 6;
  std::uint64_t seed = 0;
};

// Median single-head wall time of exact and Nyström attention on seeded
// Gaussian q, k, v of shape M×head_dim, plus the Nyström mean row-relative
// error against the exact result.
std::vector<BenchRow> bench_attention(const BenchConfig& cfg);

void write_bench_csv(const std::vector<BenchRow>& rows, const std::filesystem::path& path);
std::string bench_csv(const std::vector<BenchRow>& rows);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace pathm3
