#include "lspd/binary_io.hpp"

#include <bit>
#include <fstream>
#include <stdexcept>

namespace lspd::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void write_u32(std::ostream &os, std::uint32_t v) { os.write(reinterpret_cast<char const *>(&v), sizeof v); }
void write_u64(std::ostream &os, std::uint64_t v) { os.write(reinterpret_cast<char const *>(&v), sizeof v); }
void write_bytes(std::ostream &os, std::string const &s) { os.write(s.data(), std::streamsize(s.size())); }

void write_f32(std::ostream &os, std::span<const float> v)
{
  os.write(reinterpret_cast<char const *>(v.data()), std::streamsize(v.size_bytes()));
}

namespace {

void read_exact(std::istream &is, char *dst, std::size_t n, char const *what)
{
  is.read(dst, std::streamsize(n));
  if (std::size_t(is.gcount()) != n) { throw std::runtime_error(what); }
}

} // namespace

std::uint32_t read_u32(std::istream &is, char const *what)
{
  std::uint32_t v = 0;
  read_exact(is, reinterpret_cast<char *>(&v), sizeof v, what);
  return v;
}

std::uint64_t read_u64(std::istream &is, char const *what)
{
  std::uint64_t v = 0;
  read_exact(is, reinterpret_cast<char *>(&v), sizeof v, what);
  return v;
}

std::string read_bytes(std::istream &is, std::size_t n, char const *what)
{
  std::string s(n, '\0');
  read_exact(is, s.data(), n, what);
  return s;
}

std::vector<float> read_f32(std::istream &is, std::size_t n, char const *what)
{
  std::vector<float> v(n);
  read_exact(is, reinterpret_cast<char *>(v.data()), n * sizeof(float), what);
  return v;
}

void write_array(std::ostream &os, std::span<const std::uint32_t> dims, std::span<const float> data)
{
  write_u32(os, std::uint32_t(dims.size()));
  for (auto d : dims) { write_u32(os, d); }
  write_f32(os, data);
}

ArrayBlock read_array(std::istream &is, char const *what)
{
  ArrayBlock b;
  std::uint32_t const ndim = read_u32(is, what);
  if (ndim > 8) { throw std::runtime_error(what); }
  std::uint64_t count = 1;
  for (std::uint32_t k = 0; k < ndim; ++k) {
    b.dims.push_back(read_u32(is, what));
    count *= b.dims.back();
  }
  if (count > (std::uint64_t(1) << 34)) { throw std::runtime_error(what); }
  b.data = read_f32(is, std::size_t(count), what);
  return b;
}

void atomic_write(std::filesystem::path const &path, std::function<void(std::ostream &)> const &body)
{
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) { throw std::runtime_error("cannot open " + tmp.string() + " for writing"); }
    body(os);
    os.flush();
    if (!os) {
      std::filesystem::remove(tmp);
      throw std::runtime_error("write failed: " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

} // namespace lspd::io
