#include "pathm3/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pathm3/attention.hpp"

namespace pathm3 {

namespace {

double mean_row_rel_error(const Tensor<float>& approx, const Tensor<float>& exact) {
  double total = 0.0;
  for (std::size_t i = 0; i < exact.rows(); ++i) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < exact.cols(); ++j) {
      const double d = static_cast<double>(approx(i, j)) - exact(i, j);
      num += d * d;
      den += static_cast<double>(exact(i, j)) * exact(i, j);
    }
    total += std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
  }
  return total / static_cast<double>(exact.rows());
}

template <typename F>
double median_ms(std::size_t repeats, F&& f) {
  std::vector<double> times;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  return n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

}  // namespace

std::vector<BenchRow> bench_attention(const BenchConfig& cfg) {
  if (cfg.repeats == 0) fail(ErrorKind::RangeError, "bench: repeats must be positive");
  if (cfg.lengths.empty()) fail(ErrorKind::RangeError, "bench: no sequence lengths given");
  for (std::size_t M : cfg.lengths) {
    if (cfg.landmarks < 1 || cfg.landmarks > M) {
      fail(ErrorKind::InvalidLandmarkCount, "bench: landmark count " + std::to_string(cfg.landmarks) +
                                                " outside [1, " + std::to_string(M) + "]");
    }
  }
  AttentionConfig attn;
  attn.model_dim = cfg.head_dim;
  attn.num_heads = 1;
  attn.landmark_count = cfg.landmarks;
  attn.pinv_iterations = cfg.pinv_iterations;

  std::vector<BenchRow> rows;
  for (std::size_t M : cfg.lengths) {
    Rng rng(cfg.seed + M);
    const auto q = normal_tensor<float>({M, cfg.head_dim}, 1.0, rng);
    const auto k = normal_tensor<float>({M, cfg.head_dim}, 1.0, rng);
    const auto v = normal_tensor<float>({M, cfg.head_dim}, 1.0, rng);
    Tensor<float> exact, approx;
    const double t_exact = median_ms(cfg.repeats, [&] { exact = exact_attention(q, k, v); });
    const double t_nys = median_ms(cfg.repeats, [&] { approx = nystrom_attention(q, k, v, attn); });
    rows.push_back({M, cfg.landmarks, "exact", t_exact, std::nullopt});
    rows.push_back({M, cfg.landmarks, "nystrom", t_nys, mean_row_rel_error(approx, exact)});
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out.precision(9);
  out << "M,m,method,wall_ms,mean_rel_err\n";
  for (const auto& r : rows) {
    out << r.M << ',' << r.m << ',' << r.method << ',' << r.wall_ms << ',';
    if (r.mean_rel_err) out << *r.mean_rel_err;
    out << '\n';
  }
  return out.str();
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write '" + path.string() + "'");
  out << bench_csv(rows);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorKind::ShapeMismatch, "loglog_slope: need at least two paired points");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

}  // namespace pathm3
