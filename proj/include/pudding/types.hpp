#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace pudding {

// Dense storage is row-major throughout so tensor serialization is a flat
// memcpy and row views are contiguous.
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matf = Mat<float>;
using Vecf = Vec<float>;
using RowVecf = RowVec<float>;
using Matd = Mat<double>;
using Vecd = Vec<double>;
using RowVecd = RowVec<double>;

using TokenId = std::int32_t;

// Transformer block indices are 1-based in every public surface (domain
// types, pool files, reports); only storage offsets are 0-based.
using BlockIndex = int;

struct TokenSequence {
  std::vector<TokenId> tokens;

  int length() const { return static_cast<int>(tokens.size()); }
  bool empty() const { return tokens.empty(); }
};

// Sorted, duplicate-free 1-based block indices to drop from a model.
struct OmissionSet {
  std::vector<BlockIndex> indices;

  int size() const { return static_cast<int>(indices.size()); }
  bool contains(BlockIndex b) const;
  bool operator==(const OmissionSet& other) const { return indices == other.indices; }
  bool operator!=(const OmissionSet& other) const { return !(*this == other); }
};

// Canonicalize: sort and drop duplicates.
OmissionSet make_omission_set(std::vector<BlockIndex> indices);

}  // namespace pudding
