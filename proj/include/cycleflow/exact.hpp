#pragma once

#include <bit>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_int.hpp>

namespace cycleflow::exact {

using BigInt = boost::multiprecision::cpp_int;

/// A row of bits packed into 64-bit words.
using BitRow = std::vector<std::uint64_t>;

inline BitRow make_bit_row(const Eigen::VectorXi& v) {
  BitRow row((static_cast<std::size_t>(v.size()) + 63) / 64, 0);
  for (Eigen::Index j = 0; j < v.size(); ++j)
    if (v(j) != 0) row[static_cast<std::size_t>(j) / 64] |=
        std::uint64_t{1} << (static_cast<std::size_t>(j) % 64);
  return row;
}

inline bool bit_row_empty(const BitRow& r) {
  for (std::uint64_t w : r)
    if (w) return false;
  return true;
}

inline int lowest_set_bit(const BitRow& r) {
  for (std::size_t w = 0; w < r.size(); ++w)
    if (r[w]) return static_cast<int>(w * 64) + std::countr_zero(r[w]);
  return -1;
}

inline void bit_row_xor(BitRow& a, const BitRow& b) {
  for (std::size_t w = 0; w < a.size(); ++w) a[w] ^= b[w];
}

inline bool bit_row_test(const BitRow& r, int bit) {
  return (r[static_cast<std::size_t>(bit) / 64] >>
          (static_cast<std::size_t>(bit) % 64)) &
         1u;
}

/// Incremental GF(2) eliminator: feed candidate rows, keeps an independent
/// echelon set.
class Gf2Eliminator {
 public:
  /// Reduces the row against the current set; if nonzero remains, stores it
  /// and returns true (the row was independent).
  bool add(BitRow row) {
    for (const auto& [pivot, r] : rows_)
      if (bit_row_test(row, pivot)) bit_row_xor(row, r);
    int pivot = lowest_set_bit(row);
    if (pivot < 0) return false;
    rows_.emplace_back(pivot, std::move(row));
    return true;
  }

  int rank() const { return static_cast<int>(rows_.size()); }

 private:
  std::vector<std::pair<int, BitRow>> rows_;
};

inline int gf2_rank(const Eigen::MatrixXi& m) {
  Gf2Eliminator elim;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    elim.add(make_bit_row(m.row(i).transpose()));
  return elim.rank();
}

/// Exact rank over the integers (equivalently the rationals) by fraction-free
/// Bareiss elimination on arbitrary-precision entries.
inline int integer_rank(const Eigen::MatrixXi& m) {
  const int rows = static_cast<int>(m.rows());
  const int cols = static_cast<int>(m.cols());
  std::vector<std::vector<BigInt>> a(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    a[i].resize(static_cast<std::size_t>(cols));
    for (int j = 0; j < cols; ++j) a[i][j] = m(i, j);
  }
  BigInt prev = 1;
  int rank = 0;
  for (int col = 0; col < cols && rank < rows; ++col) {
    int pivot = -1;
    for (int i = rank; i < rows; ++i)
      if (a[i][col] != 0) {
        pivot = i;
        break;
      }
    if (pivot < 0) continue;
    std::swap(a[rank], a[pivot]);
    for (int i = rank + 1; i < rows; ++i) {
      for (int j = col + 1; j < cols; ++j)
        a[i][j] = (a[rank][col] * a[i][j] - a[i][col] * a[rank][j]) / prev;
      a[i][col] = 0;
    }
    prev = a[rank][col];
    ++rank;
  }
  return rank;
}

/// Whether a * b == 0 with exact integer arithmetic.
inline bool product_is_zero(const Eigen::MatrixXi& a,
                            const Eigen::MatrixXi& b) {
  if (a.cols() != b.rows()) return false;
  using Wide = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;
  Wide p = a.cast<long long>() * b.cast<long long>();
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      if (p(i, j) != 0) return false;
  return true;
}

}  // namespace cycleflow::exact
