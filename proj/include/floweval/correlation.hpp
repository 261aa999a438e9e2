#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "floweval/errors.hpp"

namespace floweval {

// One metric paired with human judgments over the same dialogue ids.
struct PairedSeries {
  std::vector<std::string> ids;
  std::vector<double> metric;
  std::vector<double> human;

  std::size_t size() const { return metric.size(); }
  void validate() const {
    if (metric.size() != human.size() || (!ids.empty() && ids.size() != metric.size())) {
      throw ValidationError("paired series length mismatch");
    }
    if (metric.size() < 3) throw ValidationError("paired series needs n >= 3");
    for (double v : metric) {
      if (!std::isfinite(v)) throw ValidationError("non-finite metric value");
    }
    for (double v : human) {
      if (!std::isfinite(v)) throw ValidationError("non-finite human value");
    }
  }
};

struct CorrStat {
  double coefficient = 0;
  double p_value = 1;
};

// true iff p < alpha, strictly
inline bool p_value_significance(double p, double alpha = 0.05) { return p < alpha; }

namespace stats {

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 400;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

inline double betainc(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double bt =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
               b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

// Two-sided p of a t statistic with df degrees of freedom.
inline double student_t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  return betainc(0.5 * df, 0.5, df / (df + t * t));
}

// Two-sided tail of the standard normal.
inline double normal_two_sided_p(double z) { return std::erfc(std::fabs(z) / std::sqrt(2.0)); }

// Average ranks (1-based); tied values share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace stats

inline CorrStat pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ValidationError("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 3) throw ValidationError("pearson: needs n >= 3");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw ValidationError("pearson: correlation undefined for a constant series");
  }
  CorrStat s;
  s.coefficient = sxy / std::sqrt(sxx * syy);
  const double df = static_cast<double>(n - 2);
  const double r2 = s.coefficient * s.coefficient;
  if (r2 >= 1.0) {
    s.p_value = 0.0;
  } else {
    const double t = s.coefficient * std::sqrt(df / (1.0 - r2));
    s.p_value = stats::student_t_two_sided_p(t, df);
  }
  return s;
}

inline CorrStat pearson(const PairedSeries& s) {
  s.validate();
  return pearson(s.metric, s.human);
}

// Pearson on average-ranked data; p via the same t approximation.
inline CorrStat spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ValidationError("spearman: length mismatch");
  if (x.size() < 3) throw ValidationError("spearman: needs n >= 3");
  return pearson(stats::average_ranks(x), stats::average_ranks(y));
}

inline CorrStat spearman(const PairedSeries& s) {
  s.validate();
  return spearman(s.metric, s.human);
}

// Seeded Monte-Carlo permutation p for Spearman's rho, for small-n use.
inline double spearman_permutation_p(const std::vector<double>& x, const std::vector<double>& y,
                                     int n_permutations, std::uint64_t seed) {
  const double observed = std::fabs(spearman(x, y).coefficient);
  std::mt19937_64 rng(seed);
  std::vector<double> shuffled = y;
  int at_least_as_extreme = 0;
  for (int i = 0; i < n_permutations; ++i) {
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    double rho;
    try {
      rho = spearman(x, shuffled).coefficient;
    } catch (const ValidationError&) {
      continue;  // degenerate shuffle of a near-constant series
    }
    if (std::fabs(rho) >= observed - 1e-12) ++at_least_as_extreme;
  }
  return (at_least_as_extreme + 1.0) / (n_permutations + 1.0);
}

namespace stats {

// Counts pairs i < j with y[i] > y[j] by merge sort.
inline long long count_inversions(std::vector<double>& v, std::vector<double>& scratch,
                                  std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  long long inv = count_inversions(v, scratch, lo, mid) + count_inversions(v, scratch, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += static_cast<long long>(mid - i);
      scratch[k++] = v[j++];
    } else {
      scratch[k++] = v[i++];
    }
  }
  while (i < mid) scratch[k++] = v[i++];
  while (j < hi) scratch[k++] = v[j++];
  std::copy(scratch.begin() + lo, scratch.begin() + hi, v.begin() + lo);
  return inv;
}

struct TieSums {
  long long pairs = 0;          // sum t(t-1)/2
  double v_term = 0;            // sum t(t-1)(2t+5)
  double prod1 = 0;             // sum t(t-1)
  double prod2 = 0;             // sum t(t-1)(t-2)
};

template <typename Iter>
inline void accumulate_tie_run(TieSums& s, Iter run_begin, Iter run_end) {
  const double t = static_cast<double>(std::distance(run_begin, run_end));
  if (t < 2) return;
  s.pairs += static_cast<long long>(t * (t - 1) / 2);
  s.v_term += t * (t - 1) * (2 * t + 5);
  s.prod1 += t * (t - 1);
  s.prod2 += t * (t - 1) * (t - 2);
}

}  // namespace stats

// Kendall's tau-b with tie corrections, O(n log n) via inversion counting.
// p-value from the normal approximation on the concordance statistic S,
// with the standard tie-corrected variance.
inline CorrStat kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ValidationError("kendall: length mismatch");
  const std::size_t n = x.size();
  if (n < 3) throw ValidationError("kendall: needs n >= 3");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });

  stats::TieSums xt, yt;
  long long joint_tie_pairs = 0;
  {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
      stats::accumulate_tie_run(xt, order.begin() + i, order.begin() + j + 1);
      // joint (x, y) tie runs nest inside the x runs
      std::size_t a = i;
      while (a <= j) {
        std::size_t b = a;
        while (b + 1 <= j && y[order[b + 1]] == y[order[a]]) ++b;
        const long long u = static_cast<long long>(b - a + 1);
        joint_tie_pairs += u * (u - 1) / 2;
        a = b + 1;
      }
      i = j + 1;
    }
  }
  {
    std::vector<double> ys = y;
    std::sort(ys.begin(), ys.end());
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && ys[j + 1] == ys[i]) ++j;
      stats::accumulate_tie_run(yt, ys.begin() + i, ys.begin() + j + 1);
      i = j + 1;
    }
  }

  std::vector<double> y_in_x_order(n), scratch(n);
  for (std::size_t i = 0; i < n; ++i) y_in_x_order[i] = y[order[i]];
  const long long discordant = stats::count_inversions(y_in_x_order, scratch, 0, n);

  const long long n0 = static_cast<long long>(n) * (static_cast<long long>(n) - 1) / 2;
  const long long s_stat = n0 - xt.pairs - yt.pairs + joint_tie_pairs - 2 * discordant;
  const double denom2 =
      static_cast<double>(n0 - xt.pairs) * static_cast<double>(n0 - yt.pairs);
  if (denom2 <= 0.0) {
    throw ValidationError("kendall: tau-b undefined for an all-tied series");
  }
  CorrStat result;
  result.coefficient = static_cast<double>(s_stat) / std::sqrt(denom2);

  const double dn = static_cast<double>(n);
  const double v0 = dn * (dn - 1) * (2 * dn + 5);
  double var_s = (v0 - xt.v_term - yt.v_term) / 18.0;
  var_s += xt.prod1 * yt.prod1 / (2.0 * dn * (dn - 1));
  var_s += xt.prod2 * yt.prod2 / (9.0 * dn * (dn - 1) * (dn - 2));
  if (var_s <= 0.0) {
    result.p_value = 1.0;
  } else {
    result.p_value = stats::normal_two_sided_p(static_cast<double>(s_stat) / std::sqrt(var_s));
  }
  return result;
}

inline CorrStat kendall_tau_b(const PairedSeries& s) {
  s.validate();
  return kendall_tau_b(s.metric, s.human);
}

// ---------------------------------------------------------------------------
// Benchmark report

struct CorrelationRow {
  std::string metric;
  std::size_t n = 0;
  CorrStat pearson_stat;
  CorrStat spearman_stat;
  CorrStat kendall_stat;
};

struct CorrelationReport {
  double alpha = 0.05;
  std::vector<CorrelationRow> rows;
};

// Correlates every metric against the human ratings. Each metric must cover
// every rated id; extra metric ids are ignored.
inline CorrelationReport run_benchmark(
    const std::map<std::string, std::map<std::string, double>>& scores,
    const std::map<std::string, double>& human, double alpha = 0.05) {
  if (human.size() < 3) throw ValidationError("benchmark: needs at least 3 rated dialogues");
  CorrelationReport report;
  report.alpha = alpha;
  for (const auto& [metric_name, metric_scores] : scores) {
    std::vector<std::string> missing;
    PairedSeries series;
    for (const auto& [id, rating] : human) {
      auto it = metric_scores.find(id);
      if (it == metric_scores.end()) {
        missing.push_back(id);
        continue;
      }
      series.ids.push_back(id);
      series.metric.push_back(it->second);
      series.human.push_back(rating);
    }
    if (!missing.empty()) {
      std::string msg = "benchmark: metric \"" + metric_name + "\" missing ids:";
      for (const auto& id : missing) msg += " " + id;
      throw ValidationError(msg);
    }
    CorrelationRow row;
    row.metric = metric_name;
    row.n = series.size();
    row.pearson_stat = pearson(series);
    row.spearman_stat = spearman(series);
    row.kendall_stat = kendall_tau_b(series);
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace detail {

inline std::string fmt_coeff(const CorrStat& s, double alpha) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << s.coefficient;
  if (!p_value_significance(s.p_value, alpha)) os << "*";
  return os.str();
}

}  // namespace detail

inline std::string report_to_csv(const CorrelationReport& r) {
  std::ostringstream os;
  os << "metric,n,pearson_r,pearson_p,pearson_significant,spearman_rho,spearman_p,"
        "spearman_significant,kendall_taub,kendall_p,kendall_significant\n";
  os << std::setprecision(17);
  for (const auto& row : r.rows) {
    os << row.metric << "," << row.n << "," << row.pearson_stat.coefficient << ","
       << row.pearson_stat.p_value << ","
       << (p_value_significance(row.pearson_stat.p_value, r.alpha) ? 1 : 0) << ","
       << row.spearman_stat.coefficient << "," << row.spearman_stat.p_value << ","
       << (p_value_significance(row.spearman_stat.p_value, r.alpha) ? 1 : 0) << ","
       << row.kendall_stat.coefficient << "," << row.kendall_stat.p_value << ","
       << (p_value_significance(row.kendall_stat.p_value, r.alpha) ? 1 : 0) << "\n";
  }
  return os.str();
}

// Plain-text table, one row per metric, asterisk on values that are not
// significant at the report's alpha.
inline std::string report_to_table(const CorrelationReport& r) {
  std::size_t name_width = 6;
  for (const auto& row : r.rows) name_width = std::max(name_width, row.metric.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_width) + 2) << "Metric" << std::right
     << std::setw(10) << "Pearson" << std::setw(10) << "Spearman" << std::setw(10) << "Kendall"
     << std::setw(8) << "n" << "\n";
  for (const auto& row : r.rows) {
    os << std::left << std::setw(static_cast<int>(name_width) + 2) << row.metric << std::right
       << std::setw(10) << detail::fmt_coeff(row.pearson_stat, r.alpha) << std::setw(10)
       << detail::fmt_coeff(row.spearman_stat, r.alpha) << std::setw(10)
       << detail::fmt_coeff(row.kendall_stat, r.alpha) << std::setw(8) << row.n << "\n";
  }
  os << "(* not significant at p < " << r.alpha << ")\n";
  return os.str();
}

}  // namespace floweval
