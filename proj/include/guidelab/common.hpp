#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace guidelab {

using Action = int;
using Rng = std::mt19937_64;

/// Raised when a numeric quantity that must stay finite does not.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major table indexed [step][action]. Used for logits,
/// per-step action distributions and gradients alike.
class Table {
 public:
  Table() = default;
  Table(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  double& operator()(int r, int c) { return data_[index(r, c)]; }
  double operator()(int r, int c) const { return data_[index(r, c)]; }

  std::span<double> row(int r) { return {data_.data() + index(r, 0), static_cast<std::size_t>(cols_)}; }
  std::span<const double> row(int r) const {
    return {data_.data() + index(r, 0), static_cast<std::size_t>(cols_)};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Table& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
  bool operator==(const Table&) const = default;

 private:
  static std::size_t checked_size(int rows, int cols) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Table: negative shape");
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }
  std::size_t index(int r, int c) const { return static_cast<std::size_t>(r) * cols_ + c; }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent stream seed from a base seed and a list of ids
/// (task id, trajectory index, ...). Order of ids matters.
std::uint64_t derive_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> ids);

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n).
int uniform_index(Rng& rng, int n);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);
/// Shortest text that parses back to the same double.
std::string format_double(double value);

/// Numerically stable softmax / log-softmax over one logit row.
void softmax(std::span<const double> logits, std::span<double> out);
void log_softmax(std::span<const double> logits, std::span<double> out);

double l2_norm(std::span<const double> v);
bool all_finite(std::span<const double> v);

}  // namespace guidelab
