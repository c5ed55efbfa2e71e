#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace avger {

/// Binary tensor blob: little-endian header {magic, version, dtype, rank,
/// dims...} followed by row-major payload. Corpus audio/video blobs use F32;
/// checkpoints use F64 so that reload is bit-exact.
enum class Dtype : uint32_t { F32 = 0, F64 = 1 };

struct Blob {
  Dtype dtype{Dtype::F32};
  std::vector<uint32_t> dims;
  std::vector<double> data;  // held as double in memory regardless of dtype

  size_t element_count() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }
};

void write_blob(std::ostream& os, const Blob& b);
Blob read_blob(std::istream& is);

void save_blob(const std::filesystem::path& path, const Blob& b);
Blob load_blob(const std::filesystem::path& path);

/// Container of named blobs (used by checkpoints).
void write_named_blobs(std::ostream& os,
                       const std::vector<std::pair<std::string, Blob>>& blobs);
std::vector<std::pair<std::string, Blob>> read_named_blobs(std::istream& is);

}  // namespace avger
