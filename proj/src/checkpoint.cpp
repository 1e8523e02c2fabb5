#include "lspd/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include "lspd/binary_io.hpp"

namespace lspd {

namespace {
constexpr char kMagic[8] = {'L', 'S', 'P', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr char const *kBad = "unrecognized checkpoint file";
} // namespace

void save_checkpoint(std::filesystem::path const &path, Checkpoint const &ckpt)
{
  io::atomic_write(path, [&](std::ostream &os) {
    os.write(kMagic, sizeof kMagic);
    io::write_u32(os, kVersion);
    std::string const meta = ckpt.meta.dump();
    io::write_u32(os, std::uint32_t(meta.size()));
    io::write_bytes(os, meta);
    io::write_u32(os, std::uint32_t(ckpt.params.size()));
    for (std::size_t k = 0; k < ckpt.params.size(); ++k) {
      auto const &p = ckpt.params[k];
      io::write_u32(os, std::uint32_t(p.name.size()));
      io::write_bytes(os, p.name);
      auto const s = p.value.shape();
      std::uint32_t const dims[3] = {std::uint32_t(s.channels), std::uint32_t(s.height), std::uint32_t(s.width)};
      io::write_array(os, dims, p.value.values());
    }
  });
}

Checkpoint load_checkpoint(std::filesystem::path const &path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) { throw std::runtime_error("cannot open checkpoint " + path.string()); }
  if (io::read_bytes(is, sizeof kMagic, kBad) != std::string(kMagic, sizeof kMagic)) { throw std::runtime_error(kBad); }
  if (io::read_u32(is, kBad) != kVersion) { throw std::runtime_error(kBad); }
  Checkpoint ck;
  std::uint32_t const meta_len = io::read_u32(is, kBad);
  if (meta_len > (1u << 24)) { throw std::runtime_error(kBad); }
  try {
    ck.meta = nlohmann::json::parse(io::read_bytes(is, meta_len, kBad));
  } catch (nlohmann::json::exception const &) {
    throw std::runtime_error(kBad);
  }
  std::uint32_t const count = io::read_u32(is, kBad);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uint32_t const len = io::read_u32(is, kBad);
    if (len > 4096) { throw std::runtime_error(kBad); }
    std::string name = io::read_bytes(is, len, kBad);
    auto block = io::read_array(is, kBad);
    if (block.dims.size() != 3) { throw std::runtime_error(kBad); }
    ad::Shape const s{int(block.dims[0]), int(block.dims[1]), int(block.dims[2])};
    ck.params.add(std::move(name), ad::Tensor<float>(s, std::move(block.data)));
  }
  return ck;
}

} // namespace lspd
