#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lspd/common.hpp"
#include "lspd/kernels.hpp"

namespace lspd {

enum class BeamMode
{
  parallel,
  fan
};

/// 2-D scan geometry on a square pixel grid centred at the origin.
///
/// Pixel (row i, col j) covers x in [j - N/2, j + 1 - N/2] and
/// y in [i - N/2, i + 1 - N/2]; lengths are in pixel widths. Angles are
/// `a * angle_range / n_angles`. Parallel rays at angle t are the lines
/// {s n + l d} with n = (cos t, sin t), d = (-sin t, cos t). Fan rays start at
/// the source D n and pass through u d on a virtual detector through the
/// rotation centre.
struct ScanGeometry
{
  BeamMode mode = BeamMode::parallel;
  int image_size = 64;
  int n_angles = 60;
  int n_rays = 64;
  double angle_range = kPi;
  double source_distance = 2.0; ///< in image widths (fan only)
  double detector_spacing = 0.0; ///< pixels; <= 0 selects a spacing that covers the image

  void validate() const;
  double angle(int a) const { return a * angle_range / n_angles; }
  double spacing() const;
  double ray_offset(int r) const { return (r - 0.5 * (n_rays - 1)) * spacing(); }
  double source_distance_px() const { return source_distance * image_size; }
  int rows() const { return n_angles * n_rays; }
  int cols() const { return image_size * image_size; }

  bool operator==(ScanGeometry const &) const = default;
};

std::string to_string(BeamMode mode);
BeamMode beam_mode_from_string(std::string const &s);

enum class PartitionScheme
{
  contiguous,
  interleaved
};

std::string to_string(PartitionScheme s);
PartitionScheme partition_scheme_from_string(std::string const &s);

/// Angle-block partition of the measurement rows.
struct SubsetPartition
{
  int m = 1;
  PartitionScheme scheme = PartitionScheme::contiguous;
  std::vector<int> assignment;           ///< angle -> subset id
  std::vector<std::vector<int>> angles;  ///< subset -> ascending angle list
  std::vector<std::vector<int>> rows;    ///< subset -> measurement rows, angle-major
  int q = 0;                             ///< rows per subset

  int size() const { return m; }
};

/// Sparse forward operator with an exact stored transpose. Immutable after
/// construction; copies share storage.
class LinearOperator
{
public:
  LinearOperator() = default;
  /// `range_height` x `range_width` gives the 2-D shape of a measurement
  /// (angles x rays for CT); `domain_height` x `domain_width` the image shape.
  LinearOperator(SparseMatrix matrix, int range_height, int range_width, int domain_height, int domain_width);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int range_height() const { return range_h_; }
  int range_width() const { return range_w_; }
  int domain_height() const { return domain_h_; }
  int domain_width() const { return domain_w_; }

  SparseMatrix const &matrix() const { return *fwd_; }
  SparseMatrix const &matrix_transposed() const { return *adj_; }

  bool has_partition() const { return partition_ != nullptr; }
  SubsetPartition const &partition() const;
  int subset_count() const { return partition_ ? partition_->m : 1; }
  /// Rows in subset `i` (or all rows when no subset is given).
  int subset_rows(std::optional<int> subset) const;
  SparseMatrix const &block(int subset) const;

  /// Copy of this operator carrying the given partition and its row blocks.
  LinearOperator with_partition(SubsetPartition p) const;

  template <typename T>
  std::vector<T> apply(std::span<const T> x, std::optional<int> subset = {}, CallCounter *counter = nullptr) const;
  template <typename T>
  std::vector<T> adjoint(std::span<const T> y, std::optional<int> subset = {}, CallCounter *counter = nullptr) const;

  template <typename T>
  std::vector<T> apply(std::vector<T> const &x, std::optional<int> subset = {}, CallCounter *counter = nullptr) const
  {
    return apply(std::span<const T>(x), subset, counter);
  }
  template <typename T>
  std::vector<T> adjoint(std::vector<T> const &y, std::optional<int> subset = {}, CallCounter *counter = nullptr) const
  {
    return adjoint(std::span<const T>(y), subset, counter);
  }

  /// Rows of `y` (full measurement) that belong to subset i, in subset order.
  template <typename T>
  std::vector<T> restrict_rows(std::span<const T> y, int subset) const;
  /// Inverse of restrict_rows: scatters a subset measurement into a full one.
  template <typename T>
  void scatter_rows(std::span<const T> yi, int subset, std::span<T> y) const;

private:
  struct Block
  {
    std::shared_ptr<const SparseMatrix> fwd;
    std::shared_ptr<const SparseMatrix> adj;
  };

  void check_subset(std::optional<int> subset) const;

  std::shared_ptr<const SparseMatrix> fwd_;
  std::shared_ptr<const SparseMatrix> adj_;
  int rows_ = 0;
  int cols_ = 0;
  int range_h_ = 0;
  int range_w_ = 0;
  int domain_h_ = 0;
  int domain_w_ = 0;
  std::shared_ptr<const SubsetPartition> partition_;
  std::vector<Block> blocks_;
};

/// Exact ray/pixel intersection lengths (Siddon traversal).
LinearOperator assemble_projector(ScanGeometry const &geom);

/// Intersection lengths of one ray with the pixel grid, as (pixel, length).
/// Exposed for tests and for row-level inspection.
std::vector<std::pair<int, double>> trace_ray(ScanGeometry const &geom, int angle, int ray);

SubsetPartition partition(LinearOperator const &op, int m, PartitionScheme scheme = PartitionScheme::contiguous);

/// G B with G_ij ~ N(0, 1/n) (or N(0, entry_std^2) when entry_std > 0); B
/// (d x d) optional. Fixed seed gives the same operator bit for bit. Range
/// shape is (n, 1) so any m | n can partition it.
LinearOperator gaussian_operator(int n, int d, LinearOperator const *B, std::uint64_t seed, double entry_std = 0.0);

/// Dense copy of the operator (or of one subset's rows).
Eigen::MatrixXd dense_matrix(LinearOperator const &op, std::optional<int> subset = {});

/// Operator from a dense row-major matrix (zeros dropped).
LinearOperator dense_operator(std::span<const double> values, int n, int d);

/// Power-method estimate of the largest singular value. Restricting to a
/// subset estimates ||S_i A||.
double operator_norm(LinearOperator const &op, int iters = 100, std::optional<int> subset = {});

} // namespace lspd
