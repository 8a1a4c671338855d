#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "biascope/error.hpp"

namespace biascope {

/// Dense class x attribute table of non-negative integer counts.
class CountTable {
 public:
  CountTable() = default;
  CountTable(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), cells_(rows * cols, 0) {}

  CountTable(std::initializer_list<std::initializer_list<std::int64_t>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    for (const auto& row : init) {
      if (row.size() != cols_) throw Error(ErrorCode::SchemaError, "ragged count table");
      cells_.insert(cells_.end(), row.begin(), row.end());
    }
    for (auto v : cells_) {
      if (v < 0) throw Error(ErrorCode::SchemaError, "negative count");
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  std::int64_t& at(std::size_t r, std::size_t c) { return cells_[r * cols_ + c]; }
  std::int64_t at(std::size_t r, std::size_t c) const { return cells_[r * cols_ + c]; }

  std::int64_t row_total(std::size_t r) const {
    std::int64_t s = 0;
    for (std::size_t c = 0; c < cols_; ++c) s += at(r, c);
    return s;
  }
  std::int64_t col_total(std::size_t c) const {
    std::int64_t s = 0;
    for (std::size_t r = 0; r < rows_; ++r) s += at(r, c);
    return s;
  }
  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto v : cells_) s += v;
    return s;
  }

  std::vector<std::vector<std::int64_t>> to_rows() const {
    std::vector<std::vector<std::int64_t>> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
      out[r].assign(cells_.begin() + static_cast<std::ptrdiff_t>(r * cols_),
                    cells_.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols_));
    }
    return out;
  }

  bool operator==(const CountTable&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::int64_t> cells_;
};

/// Empirical H(class | attribute) in bits from a joint count table whose rows
/// are classes and columns attributes. Zero iff the attribute determines the
/// class; 0 log 0 is taken as 0.
inline double conditional_entropy(const CountTable& counts) {
  const std::int64_t total = counts.total();
  if (total <= 0) throw Error(ErrorCode::EmptyTable, "conditional entropy of an empty table");
  const double n = static_cast<double>(total);
  double h = 0.0;
  for (std::size_t b = 0; b < counts.cols(); ++b) {
    const std::int64_t col = counts.col_total(b);
    if (col == 0) continue;
    for (std::size_t c = 0; c < counts.rows(); ++c) {
      const std::int64_t joint = counts.at(c, b);
      if (joint == 0) continue;
      h -= (static_cast<double>(joint) / n) *
           std::log2(static_cast<double>(joint) / static_cast<double>(col));
    }
  }
  return h > 0.0 ? h : 0.0;
}

/// max over cells of |P(b | c) - P(b)|; zero iff every row is proportional to
/// the column marginal.
inline double independence_gap(const CountTable& counts) {
  const std::int64_t total = counts.total();
  if (total <= 0) throw Error(ErrorCode::EmptyTable, "independence gap of an empty table");
  double gap = 0.0;
  for (std::size_t c = 0; c < counts.rows(); ++c) {
    const std::int64_t row = counts.row_total(c);
    if (row == 0) continue;
    for (std::size_t b = 0; b < counts.cols(); ++b) {
      const double cond = static_cast<double>(counts.at(c, b)) / static_cast<double>(row);
      const double marg = static_cast<double>(counts.col_total(b)) / static_cast<double>(total);
      gap = std::max(gap, std::abs(cond - marg));
    }
  }
  return gap;
}

}  // namespace biascope
