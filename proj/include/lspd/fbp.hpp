#pragma once

#include <span>
#include <string>
#include <vector>

#include "lspd/linops.hpp"

namespace lspd {

enum class FbpFilter
{
  ramlak,
  hann ///< Ram-Lak apodised by a Hann window
};

std::string to_string(FbpFilter f);
FbpFilter fbp_filter_from_string(std::string const &s);

/// Ramp-filtered backprojection for parallel scans and full-circle fan scans
/// on a flat virtual detector. The map is linear and `adjoint` is its exact
/// transpose, so it can sit inside a differentiated graph.
class FilteredBackprojection
{
public:
  explicit FilteredBackprojection(ScanGeometry geom, FbpFilter filter = FbpFilter::hann);

  ScanGeometry const &geometry() const { return geom_; }
  FbpFilter filter() const { return filter_; }

  template <typename T>
  std::vector<T> apply(std::span<const T> sinogram) const;
  template <typename T>
  std::vector<T> adjoint(std::span<const T> image) const;

private:
  void ramp_filter(std::vector<double> &sino) const;
  void preweight(std::vector<double> &sino) const;
  std::vector<double> backproject(std::vector<double> const &sino) const;
  std::vector<double> backproject_adjoint(std::vector<double> const &image) const;

  ScanGeometry geom_;
  FbpFilter filter_;
  int padded_ = 0;
  std::vector<double> response_; ///< real frequency response, padded_/2 + 1 bins
};

/// One-shot convenience wrapper.
Vec fbp(ScanGeometry const &geom, std::span<const float> b, FbpFilter filter = FbpFilter::hann);

} // namespace lspd
