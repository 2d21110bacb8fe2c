#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace bforge {

using Index = Eigen::Index;

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// RGB image stored channel-major: 3 rows, one column per pixel (column = y * width + x).
template <typename Scalar>
using ImageT = MatX<Scalar>;

using Image = ImageT<float>;

inline constexpr int kImageSize = 64;
inline constexpr int kChannels = 3;
inline constexpr int kGrid = 8;
inline constexpr int kStride = kImageSize / kGrid;
inline constexpr int kNumCells = kGrid * kGrid;
inline constexpr int kDefaultClasses = 4;

inline constexpr Index pixel_index(int x, int y) { return static_cast<Index>(y) * kImageSize + x; }

}  // namespace bforge
