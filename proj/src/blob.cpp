#include "avger/blob.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace avger {

namespace {

constexpr uint32_t kMagic = 0x42545641;      // "AVTB"
constexpr uint32_t kContainerMagic = 0x43545641;  // "AVTC"
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("blob: truncated header");
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

}  // namespace

void write_blob(std::ostream& os, const Blob& b) {
  put_u32(os, kMagic);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(b.dtype));
  put_u32(os, static_cast<uint32_t>(b.dims.size()));
  for (uint32_t d : b.dims) put_u32(os, d);
  if (b.data.size() != b.element_count()) {
    throw std::runtime_error("blob: dims/data mismatch");
  }
  if (b.dtype == Dtype::F32) {
    std::vector<float> f(b.data.begin(), b.data.end());
    os.write(reinterpret_cast<const char*>(f.data()),
             std::streamsize(f.size() * sizeof(float)));
  } else {
    os.write(reinterpret_cast<const char*>(b.data.data()),
             std::streamsize(b.data.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("blob: write failed");
}

Blob read_blob(std::istream& is) {
  if (get_u32(is) != kMagic) throw std::runtime_error("blob: bad magic");
  if (get_u32(is) != kVersion) throw std::runtime_error("blob: bad version");
  Blob b;
  uint32_t dt = get_u32(is);
  if (dt > 1) throw std::runtime_error("blob: unknown dtype");
  b.dtype = static_cast<Dtype>(dt);
  uint32_t rank = get_u32(is);
  if (rank > 8) throw std::runtime_error("blob: implausible rank");
  b.dims.resize(rank);
  for (uint32_t i = 0; i < rank; ++i) b.dims[i] = get_u32(is);
  size_t n = b.element_count();
  b.data.resize(n);
  if (b.dtype == Dtype::F32) {
    std::vector<float> f(n);
    is.read(reinterpret_cast<char*>(f.data()), std::streamsize(n * sizeof(float)));
    if (!is) throw std::runtime_error("blob: truncated payload");
    for (size_t i = 0; i < n; ++i) b.data[i] = double(f[i]);
  } else {
    is.read(reinterpret_cast<char*>(b.data.data()),
            std::streamsize(n * sizeof(double)));
    if (!is) throw std::runtime_error("blob: truncated payload");
  }
  return b;
}

void save_blob(const std::filesystem::path& path, const Blob& b) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("blob: cannot open " + path.string());
  write_blob(os, b);
}

Blob load_blob(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("blob: cannot open " + path.string());
  return read_blob(is);
}

void write_named_blobs(std::ostream& os,
                       const std::vector<std::pair<std::string, Blob>>& blobs) {
  put_u32(os, kContainerMagic);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(blobs.size()));
  for (const auto& [name, blob] : blobs) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_blob(os, blob);
  }
  if (!os) throw std::runtime_error("blob: container write failed");
}

std::vector<std::pair<std::string, Blob>> read_named_blobs(std::istream& is) {
  if (get_u32(is) != kContainerMagic) throw std::runtime_error("blob: bad container magic");
  if (get_u32(is) != kVersion) throw std::runtime_error("blob: bad container version");
  uint32_t count = get_u32(is);
  std::vector<std::pair<std::string, Blob>> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t len = get_u32(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw std::runtime_error("blob: truncated container entry");
    out.emplace_back(std::move(name), read_blob(is));
  }
  return out;
}

}  // namespace avger
