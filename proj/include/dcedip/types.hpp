#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dcedip {

using cplx = std::complex<double>;

/// Complex n x n image, row = y, column = x.
using Image = Eigen::Array<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RealImage = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using LabelImage = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// T complex frames of equal size.
using ImageSeq = std::vector<Image>;

inline constexpr double kPi = 3.14159265358979323846;

/// Raised for malformed configuration input (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for missing, corrupt or inconsistent data artifacts (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an iterative method produces non-finite values (CLI exit code 4).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

inline double squared_norm(const ImageSeq& x) {
  double s = 0.0;
  for (const auto& f : x) s += f.abs2().sum();
  return s;
}

/// Re<a, b> summed over all frames.
inline double real_dot(const ImageSeq& a, const ImageSeq& b) {
  double s = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) s += (a[t].conjugate() * b[t]).real().sum();
  return s;
}

/// ||a - b|| / ||b|| over a whole sequence.
inline double nrmse(const ImageSeq& a, const ImageSeq& truth) {
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    num += (a[t] - truth[t]).abs2().sum();
    den += truth[t].abs2().sum();
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline double nrmse(const Image& a, const Image& truth) {
  const double den = truth.abs2().sum();
  const double num = (a - truth).abs2().sum();
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace dcedip
