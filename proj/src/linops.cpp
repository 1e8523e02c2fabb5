#include "lspd/linops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace lspd {

namespace {

// Parametric line p(s) = origin + s * dir clipped to [lo, hi]^2.
bool clip_to_square(double ox, double oy, double dx, double dy, double lo, double hi, double &s0, double &s1)
{
  auto clip_axis = [&](double o, double d) {
    if (d == 0.0) { return o >= lo && o < hi; }
    double a = (lo - o) / d;
    double b = (hi - o) / d;
    if (a > b) { std::swap(a, b); }
    s0 = std::max(s0, a);
    s1 = std::min(s1, b);
    return true;
  };
  if (!clip_axis(ox, dx) || !clip_axis(oy, dy)) { return false; }
  return s1 > s0;
}

} // namespace

void ScanGeometry::validate() const
{
  if (image_size < 1) { throw std::invalid_argument("image_size must be >= 1"); }
  if (n_angles < 1) { throw std::invalid_argument("n_angles must be >= 1"); }
  if (n_rays < 1) { throw std::invalid_argument("n_rays must be >= 1"); }
  if (!(angle_range > 0.0) || !std::isfinite(angle_range)) { throw std::invalid_argument("angle_range must be positive"); }
  if (mode == BeamMode::fan) {
    double const half_diag = image_size * std::sqrt(2.0) / 2.0;
    if (!(source_distance_px() > half_diag)) { throw std::invalid_argument("source inside field of view"); }
  }
}

double ScanGeometry::spacing() const
{
  if (detector_spacing > 0.0) { return detector_spacing; }
  if (mode == BeamMode::parallel) { return double(image_size) / n_rays; }
  double const r = image_size / std::sqrt(2.0);
  double const D = source_distance_px();
  double const umax = D * r / std::sqrt(D * D - r * r);
  return 2.0 * umax / n_rays;
}

std::string to_string(BeamMode mode) { return mode == BeamMode::fan ? "fan" : "parallel"; }

BeamMode beam_mode_from_string(std::string const &s)
{
  if (s == "parallel") { return BeamMode::parallel; }
  if (s == "fan") { return BeamMode::fan; }
  throw std::invalid_argument("unknown beam mode: " + s);
}

std::string to_string(PartitionScheme s) { return s == PartitionScheme::interleaved ? "interleaved" : "contiguous"; }

PartitionScheme partition_scheme_from_string(std::string const &s)
{
  if (s == "contiguous") { return PartitionScheme::contiguous; }
  if (s == "interleaved") { return PartitionScheme::interleaved; }
  throw std::invalid_argument("unknown partition scheme: " + s);
}

SparseMatrix SparseMatrix::transposed() const
{
  SparseMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.row_ptr.assign(std::size_t(cols) + 1, 0);
  for (int c : col_idx) { ++t.row_ptr[c + 1]; }
  for (int c = 0; c < cols; ++c) { t.row_ptr[c + 1] += t.row_ptr[c]; }
  t.col_idx.resize(col_idx.size());
  t.values.resize(values.size());
  std::vector<std::int64_t> next(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (int r = 0; r < rows; ++r) {
    for (std::int64_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      std::int64_t const dst = next[col_idx[k]]++;
      t.col_idx[dst] = r;
      t.values[dst] = values[k];
    }
  }
  return t;
}

SparseMatrix SparseMatrix::select_rows(std::span<const int> keep) const
{
  SparseMatrix s;
  s.rows = int(keep.size());
  s.cols = cols;
  s.row_ptr.reserve(keep.size() + 1);
  for (int r : keep) {
    for (std::int64_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      s.col_idx.push_back(col_idx[k]);
      s.values.push_back(values[k]);
    }
    s.row_ptr.push_back(std::int64_t(s.values.size()));
  }
  return s;
}

LinearOperator::LinearOperator(SparseMatrix matrix, int range_height, int range_width, int domain_height, int domain_width)
  : rows_(matrix.rows)
  , cols_(matrix.cols)
  , range_h_(range_height)
  , range_w_(range_width)
  , domain_h_(domain_height)
  , domain_w_(domain_width)
{
  if (range_height * range_width != matrix.rows || domain_height * domain_width != matrix.cols) {
    throw std::invalid_argument("operator shape does not match matrix dimensions");
  }
  adj_ = std::make_shared<const SparseMatrix>(matrix.transposed());
  fwd_ = std::make_shared<const SparseMatrix>(std::move(matrix));
}

SubsetPartition const &LinearOperator::partition() const
{
  if (!partition_) { throw std::logic_error("operator has no subset partition"); }
  return *partition_;
}

int LinearOperator::subset_rows(std::optional<int> subset) const
{
  if (!subset) { return rows_; }
  check_subset(subset);
  return partition_ ? partition_->q : rows_;
}

SparseMatrix const &LinearOperator::block(int subset) const
{
  check_subset(subset);
  return partition_ ? *blocks_[subset].fwd : *fwd_;
}

void LinearOperator::check_subset(std::optional<int> subset) const
{
  if (!subset) { return; }
  int const m = subset_count();
  if (*subset < 0 || *subset >= m) { throw std::out_of_range("subset id out of range"); }
}

LinearOperator LinearOperator::with_partition(SubsetPartition p) const
{
  if (p.assignment.size() != std::size_t(range_h_)) {
    throw std::invalid_argument("partition does not match operator angles");
  }
  LinearOperator out = *this;
  out.blocks_.clear();
  for (auto const &rows : p.rows) {
    auto f = std::make_shared<const SparseMatrix>(fwd_->select_rows(rows));
    auto a = std::make_shared<const SparseMatrix>(f->transposed());
    out.blocks_.push_back({f, a});
  }
  out.partition_ = std::make_shared<const SubsetPartition>(std::move(p));
  return out;
}

template <typename T>
std::vector<T> LinearOperator::apply(std::span<const T> x, std::optional<int> subset, CallCounter *counter) const
{
  if (x.size() != std::size_t(cols_)) { throw std::invalid_argument("apply: dimension mismatch"); }
  check_subset(subset);
  SparseMatrix const &A = (subset && partition_) ? *blocks_[*subset].fwd : *fwd_;
  std::vector<T> y(static_cast<std::size_t>(A.rows));
  kernels::spmv<T>(A, x, y);
  if (counter) { counter->add_forward(A.rows); }
  return y;
}

template <typename T>
std::vector<T> LinearOperator::adjoint(std::span<const T> y, std::optional<int> subset, CallCounter *counter) const
{
  check_subset(subset);
  SparseMatrix const &At = (subset && partition_) ? *blocks_[*subset].adj : *adj_;
  if (y.size() != std::size_t(At.cols)) { throw std::invalid_argument("adjoint: dimension mismatch"); }
  std::vector<T> x(static_cast<std::size_t>(cols_));
  kernels::spmv<T>(At, y, x);
  if (counter) { counter->add_adjoint(At.cols); }
  return x;
}

template <typename T>
std::vector<T> LinearOperator::restrict_rows(std::span<const T> y, int subset) const
{
  if (y.size() != std::size_t(rows_)) { throw std::invalid_argument("restrict_rows: dimension mismatch"); }
  check_subset(subset);
  if (!partition_) { return std::vector<T>(y.begin(), y.end()); }
  auto const &rows = partition_->rows[subset];
  std::vector<T> out(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) { out[k] = y[rows[k]]; }
  return out;
}

template <typename T>
void LinearOperator::scatter_rows(std::span<const T> yi, int subset, std::span<T> y) const
{
  check_subset(subset);
  if (!partition_) {
    std::copy(yi.begin(), yi.end(), y.begin());
    return;
  }
  auto const &rows = partition_->rows[subset];
  if (yi.size() != rows.size() || y.size() != std::size_t(rows_)) {
    throw std::invalid_argument("scatter_rows: dimension mismatch");
  }
  for (std::size_t k = 0; k < rows.size(); ++k) { y[rows[k]] = yi[k]; }
}

template std::vector<float> LinearOperator::apply(std::span<const float>, std::optional<int>, CallCounter *) const;
template std::vector<double> LinearOperator::apply(std::span<const double>, std::optional<int>, CallCounter *) const;
template std::vector<float> LinearOperator::adjoint(std::span<const float>, std::optional<int>, CallCounter *) const;
template std::vector<double> LinearOperator::adjoint(std::span<const double>, std::optional<int>, CallCounter *) const;
template std::vector<float> LinearOperator::restrict_rows(std::span<const float>, int) const;
template std::vector<double> LinearOperator::restrict_rows(std::span<const double>, int) const;
template void LinearOperator::scatter_rows(std::span<const float>, int, std::span<float>) const;
template void LinearOperator::scatter_rows(std::span<const double>, int, std::span<double>) const;

std::vector<std::pair<int, double>> trace_ray(ScanGeometry const &geom, int angle, int ray)
{
  int const N = geom.image_size;
  double const half = 0.5 * N;
  double const t = geom.angle(angle);
  double const c = std::cos(t);
  double const s = std::sin(t);

  double ox, oy, dx, dy;
  double s0 = -std::numeric_limits<double>::infinity();
  double s1 = std::numeric_limits<double>::infinity();
  if (geom.mode == BeamMode::parallel) {
    double const off = geom.ray_offset(ray);
    ox = off * c;
    oy = off * s;
    dx = -s;
    dy = c;
  } else {
    double const D = geom.source_distance_px();
    double const u = geom.ray_offset(ray);
    ox = D * c;
    oy = D * s;
    double const px = -u * s;
    double const py = u * c;
    double const len = std::hypot(px - ox, py - oy);
    dx = (px - ox) / len;
    dy = (py - oy) / len;
    s0 = 0.0;
  }

  std::vector<std::pair<int, double>> out;
  if (!clip_to_square(ox, oy, dx, dy, -half, half, s0, s1)) { return out; }

  std::vector<double> cuts{s0, s1};
  auto add_planes = [&](double o, double d) {
    if (d == 0.0) { return; }
    for (int k = 0; k <= N; ++k) {
      double const sk = (k - half - o) / d;
      if (sk > s0 && sk < s1) { cuts.push_back(sk); }
    }
  };
  add_planes(ox, dx);
  add_planes(oy, dy);
  std::sort(cuts.begin(), cuts.end());

  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    double const len = cuts[k + 1] - cuts[k];
    if (!(len > 1e-12)) { continue; }
    double const mid = 0.5 * (cuts[k] + cuts[k + 1]);
    int const col = std::clamp(int(std::floor(ox + mid * dx + half)), 0, N - 1);
    int const row = std::clamp(int(std::floor(oy + mid * dy + half)), 0, N - 1);
    int const pix = row * N + col;
    if (!out.empty() && out.back().first == pix) {
      out.back().second += len;
    } else {
      out.emplace_back(pix, len);
    }
  }
  std::sort(out.begin(), out.end());
  // merge duplicates left by degenerate traversals
  std::vector<std::pair<int, double>> merged;
  for (auto const &e : out) {
    if (!merged.empty() && merged.back().first == e.first) {
      merged.back().second += e.second;
    } else {
      merged.push_back(e);
    }
  }
  return merged;
}

LinearOperator assemble_projector(ScanGeometry const &geom)
{
  geom.validate();
  SparseMatrix A;
  A.rows = geom.rows();
  A.cols = geom.cols();
  A.row_ptr.reserve(std::size_t(A.rows) + 1);
  for (int a = 0; a < geom.n_angles; ++a) {
    for (int r = 0; r < geom.n_rays; ++r) {
      for (auto const &[pix, len] : trace_ray(geom, a, r)) {
        A.col_idx.push_back(pix);
        A.values.push_back(float(len));
      }
      A.row_ptr.push_back(std::int64_t(A.values.size()));
    }
  }
  return LinearOperator(std::move(A), geom.n_angles, geom.n_rays, geom.image_size, geom.image_size);
}

SubsetPartition partition(LinearOperator const &op, int m, PartitionScheme scheme)
{
  int const n_angles = op.range_height();
  int const n_rays = op.range_width();
  if (m < 1 || n_angles % m != 0) {
    throw std::invalid_argument("subset count must divide the number of angles");
  }
  SubsetPartition p;
  p.m = m;
  p.scheme = scheme;
  p.assignment.resize(std::size_t(n_angles));
  p.angles.assign(std::size_t(m), {});
  p.rows.assign(std::size_t(m), {});
  int const block = n_angles / m;
  for (int a = 0; a < n_angles; ++a) {
    int const s = scheme == PartitionScheme::contiguous ? a / block : a % m;
    p.assignment[a] = s;
    p.angles[s].push_back(a);
    for (int r = 0; r < n_rays; ++r) { p.rows[s].push_back(a * n_rays + r); }
  }
  p.q = block * n_rays;
  return p;
}

LinearOperator dense_operator(std::span<const double> values, int n, int d)
{
  if (values.size() != std::size_t(n) * d) { throw std::invalid_argument("dense_operator: size mismatch"); }
  SparseMatrix A;
  A.rows = n;
  A.cols = d;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      double const v = values[std::size_t(i) * d + j];
      if (v != 0.0) {
        A.col_idx.push_back(j);
        A.values.push_back(float(v));
      }
    }
    A.row_ptr.push_back(std::int64_t(A.values.size()));
  }
  return LinearOperator(std::move(A), n, 1, d, 1);
}

LinearOperator gaussian_operator(int n, int d, LinearOperator const *B, std::uint64_t seed, double entry_std)
{
  if (n < 1 || d < 1) { throw std::invalid_argument("gaussian_operator: n, d must be >= 1"); }
  if (B && (B->rows() != d || B->cols() != d)) { throw std::invalid_argument("gaussian_operator: B must be d x d"); }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, entry_std > 0.0 ? entry_std : 1.0 / std::sqrt(double(n)));
  std::vector<double> G(std::size_t(n) * d);
  for (auto &g : G) { g = double(float(normal(rng))); }
  if (!B) { return dense_operator(G, n, d); }

  std::vector<double> GB(std::size_t(n) * d, 0.0);
  SparseMatrix const &Bm = B->matrix();
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) {
      double const g = G[std::size_t(i) * d + k];
      for (std::int64_t e = Bm.row_ptr[k]; e < Bm.row_ptr[k + 1]; ++e) {
        GB[std::size_t(i) * d + Bm.col_idx[e]] += g * double(Bm.values[e]);
      }
    }
  }
  return dense_operator(GB, n, d);
}

Eigen::MatrixXd dense_matrix(LinearOperator const &op, std::optional<int> subset)
{
  SparseMatrix const &M = subset ? op.block(*subset) : op.matrix();
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(M.rows, M.cols);
  for (int r = 0; r < M.rows; ++r) {
    for (std::int64_t k = M.row_ptr[r]; k < M.row_ptr[r + 1]; ++k) { D(r, M.col_idx[k]) += double(M.values[k]); }
  }
  return D;
}

double operator_norm(LinearOperator const &op, int iters, std::optional<int> subset)
{
  if (iters < 1) { throw std::invalid_argument("operator_norm: iters must be >= 1"); }
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> uni(0.5, 1.5);
  std::vector<double> v(std::size_t(op.cols()));
  for (auto &e : v) { e = uni(rng); }
  double nv = norm2<double>(v);
  for (auto &e : v) { e /= nv; }

  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    auto w = op.adjoint<double>(op.apply<double>(v, subset), subset);
    double const nw = norm2<double>(w);
    if (nw == 0.0) { return 0.0; }
    lambda = nw;
    for (std::size_t k = 0; k < v.size(); ++k) { v[k] = w[k] / nw; }
  }
  return std::sqrt(lambda);
}

} // namespace lspd
