#include "slitflow/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace slitflow {

namespace {

constexpr char kMagic[4] = {'F', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_raw(std::ofstream& out, const void* data, std::size_t bytes) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

void read_raw(std::ifstream& in, void* data, std::size_t bytes, const char* what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (in.gcount() != static_cast<std::streamsize>(bytes)) {
    throw std::runtime_error(std::string("checkpoint: truncated file while reading ") + what);
  }
}

}  // namespace

void checkpoint_save(const ParamStore& params, const nlohmann::json& meta,
                     const std::string& path) {
  nlohmann::json header = meta;
  nlohmann::json manifest = nlohmann::json::array();
  for (Index i = 0; i < params.size(); ++i) {
    const Matrix& p = params.value(i);
    manifest.push_back({{"name", params.name(i)}, {"shape", {p.rows(), p.cols()}}});
  }
  header["params"] = std::move(manifest);

  const std::string header_bytes = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");

  write_raw(out, kMagic, 4);
  const std::uint32_t version = kVersion;
  write_raw(out, &version, 4);
  const std::uint64_t header_len = header_bytes.size();
  write_raw(out, &header_len, 8);
  write_raw(out, header_bytes.data(), header_bytes.size());

  std::vector<double> row_buf;
  for (Index i = 0; i < params.size(); ++i) {
    const Matrix& p = params.value(i);
    row_buf.resize(static_cast<std::size_t>(p.cols()));
    for (Index r = 0; r < p.rows(); ++r) {
      for (Index c = 0; c < p.cols(); ++c) row_buf[static_cast<std::size_t>(c)] = p(r, c);
      write_raw(out, row_buf.data(), row_buf.size() * sizeof(double));
    }
  }
  if (!out) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

LoadedCheckpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");

  char magic[4];
  read_raw(in, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic bytes in '" + path +
                             "' (expected FDCK); not a checkpoint or wrong format version");
  }
  std::uint32_t version = 0;
  read_raw(in, &version, 4, "version");
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                             " (expected " + std::to_string(kVersion) + ")");
  }
  std::uint64_t header_len = 0;
  read_raw(in, &header_len, 8, "header length");
  std::string header_bytes(header_len, '\0');
  read_raw(in, header_bytes.data(), header_len, "header");

  LoadedCheckpoint loaded;
  loaded.header = nlohmann::json::parse(header_bytes, nullptr, /*allow_exceptions=*/true);
  if (!loaded.header.contains("params") || !loaded.header["params"].is_array()) {
    throw std::runtime_error("checkpoint: header has no parameter manifest");
  }

  for (const auto& entry : loaded.header["params"]) {
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<Index>>();
    if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) {
      throw std::runtime_error("checkpoint: malformed shape for parameter '" + name + "'");
    }
    Matrix p(shape[0], shape[1]);
    std::vector<double> row_buf(static_cast<std::size_t>(shape[1]));
    for (Index r = 0; r < shape[0]; ++r) {
      read_raw(in, row_buf.data(), row_buf.size() * sizeof(double),
               ("payload of '" + name + "'").c_str());
      for (Index c = 0; c < shape[1]; ++c) p(r, c) = row_buf[static_cast<std::size_t>(c)];
    }
    loaded.params.add(name, std::move(p));
  }
  // Manifest and payload must agree exactly: any trailing bytes mean the
  // declared shapes do not cover the stored data.
  char extra;
  in.read(&extra, 1);
  if (in.gcount() != 0) {
    throw std::runtime_error("checkpoint: payload longer than the manifest declares");
  }
  return loaded;
}

}  // namespace slitflow
