#pragma once

// Least-squares natural cubic spline trend.
//
// The basis is the truncated-power form of the natural cubic spline with K
// knots: 1, t, and K-2 differenced cubic terms
//
//   N_{k+2}(t) = d_k(t) - d_{K-1}(t),
//   d_k(t)     = ((t - tau_k)^3_+ - (t - tau_K)^3_+) / (tau_K - tau_k),
//
// where t is x rescaled so the boundary knots sit at 0 and 1. Every basis
// function is linear outside the boundary knots.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hitl {

class RankDeficientDesign : public std::invalid_argument {
 public:
  RankDeficientDesign(const std::string& what, std::vector<std::string> columns)
      : std::invalid_argument(what), columns_(std::move(columns)) {}
  const std::vector<std::string>& columns() const { return columns_; }

 private:
  std::vector<std::string> columns_;
};

inline std::string spline_column_name(std::size_t j) {
  if (j == 0) return "intercept";
  if (j == 1) return "linear";
  return "cubic_" + std::to_string(j - 1);
}

// Knots at equally spaced quantiles (linear interpolation) of the distinct x
// values; the first and last knots are the extremes.
inline std::vector<double> quantile_knots(std::span<const double> x, std::size_t count) {
  std::vector<double> u(x.begin(), x.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  if (count < 2 || u.size() < count) throw std::invalid_argument("not enough distinct x values for the knots");
  std::vector<double> knots(count);
  const double span = static_cast<double>(u.size() - 1);
  for (std::size_t j = 0; j < count; ++j) {
    double pos = span * static_cast<double>(j) / static_cast<double>(count - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, u.size() - 1);
    double w = pos - static_cast<double>(lo);
    knots[j] = u[lo] + w * (u[hi] - u[lo]);
  }
  knots.front() = u.front();
  knots.back() = u.back();
  return knots;
}

// Basis values at x for the given (strictly increasing) knots.
inline std::vector<double> natural_spline_basis(double x, std::span<const double> knots) {
  const std::size_t k = knots.size();
  const double lo = knots.front();
  const double width = knots.back() - lo;
  auto scaled = [&](double v) { return (v - lo) / width; };
  const double t = scaled(x);
  auto cube_plus = [](double v) { return v > 0 ? v * v * v : 0.0; };
  const double tau_last = 1.0;
  auto d = [&](std::size_t i) {
    const double tau = scaled(knots[i]);
    return (cube_plus(t - tau) - cube_plus(t - tau_last)) / (tau_last - tau);
  };
  std::vector<double> row(k);
  row[0] = 1.0;
  if (k >= 2) row[1] = t;
  if (k > 2) {
    const double d_pen = d(k - 2);
    for (std::size_t i = 0; i + 2 < k; ++i) row[i + 2] = d(i) - d_pen;
  }
  return row;
}

struct SplineFit {
  std::vector<double> knots;
  std::vector<double> coefficients;
  std::vector<double> fitted;  // at the input points, input order
  double residual_norm = 0.0;

  double predict(double x) const {
    auto row = natural_spline_basis(x, knots);
    double y = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) y += row[j] * coefficients[j];
    return y;
  }
};

// Ordinary least squares via Householder QR. `design` is row-major n x p.
inline std::vector<double> least_squares_qr(std::vector<double> design, std::vector<double> rhs, std::size_t rows,
                                            std::size_t cols) {
  auto a = [&](std::size_t i, std::size_t j) -> double& { return design[i * cols + j]; };
  std::vector<double> diag(cols);
  double max_diag = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    double norm = 0.0;
    for (std::size_t i = j; i < rows; ++i) norm += a(i, j) * a(i, j);
    norm = std::sqrt(norm);
    double alpha = a(j, j) > 0 ? -norm : norm;
    diag[j] = alpha;
    max_diag = std::max(max_diag, std::abs(alpha));
    if (norm == 0.0) continue;
    // v = x - alpha e1, stored in place of column j.
    a(j, j) -= alpha;
    double vnorm2 = 0.0;
    for (std::size_t i = j; i < rows; ++i) vnorm2 += a(i, j) * a(i, j);
    if (vnorm2 == 0.0) continue;
    for (std::size_t c = j + 1; c < cols; ++c) {
      double dot = 0.0;
      for (std::size_t i = j; i < rows; ++i) dot += a(i, j) * a(i, c);
      double f = 2.0 * dot / vnorm2;
      for (std::size_t i = j; i < rows; ++i) a(i, c) -= f * a(i, j);
    }
    double dot = 0.0;
    for (std::size_t i = j; i < rows; ++i) dot += a(i, j) * rhs[i];
    double f = 2.0 * dot / vnorm2;
    for (std::size_t i = j; i < rows; ++i) rhs[i] -= f * a(i, j);
  }

  std::vector<std::string> collinear;
  const double tol = 1e-10 * std::max(max_diag, 1e-300);
  for (std::size_t j = 0; j < cols; ++j)
    if (std::abs(diag[j]) <= tol) collinear.push_back(spline_column_name(j));
  if (!collinear.empty()) {
    std::string names;
    for (const auto& c : collinear) names += (names.empty() ? "" : ", ") + c;
    throw RankDeficientDesign("rank-deficient design; collinear column(s): " + names, collinear);
  }

  std::vector<double> beta(cols);
  for (std::size_t j = cols; j-- > 0;) {
    double s = rhs[j];
    for (std::size_t c = j + 1; c < cols; ++c) s -= a(j, c) * beta[c];
    beta[j] = s / diag[j];
  }
  return beta;
}

inline SplineFit spline_trend(std::span<const std::pair<double, double>> points, std::size_t knots = 6) {
  if (knots < 2) throw std::invalid_argument("spline needs at least two knots");
  std::vector<double> xs;
  xs.reserve(points.size());
  for (const auto& [x, y] : points) {
    if (!std::isfinite(x) || !std::isfinite(y)) throw std::invalid_argument("non-finite point");
    xs.push_back(x);
  }
  {
    std::vector<double> u = xs;
    std::sort(u.begin(), u.end());
    if (static_cast<std::size_t>(std::unique(u.begin(), u.end()) - u.begin()) < knots + 2)
      throw std::invalid_argument("spline needs at least knots + 2 distinct x values");
  }

  SplineFit fit;
  fit.knots = quantile_knots(xs, knots);
  const std::size_t n = points.size();
  std::vector<double> design;
  design.reserve(n * knots);
  std::vector<double> y;
  y.reserve(n);
  for (const auto& [x, v] : points) {
    auto row = natural_spline_basis(x, fit.knots);
    design.insert(design.end(), row.begin(), row.end());
    y.push_back(v);
  }
  fit.coefficients = least_squares_qr(std::move(design), y, n, knots);
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    fit.fitted.push_back(fit.predict(points[i].first));
    double r = y[i] - fit.fitted.back();
    rss += r * r;
  }
  fit.residual_norm = std::sqrt(rss);
  return fit;
}

}  // namespace hitl
