#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "ttm/error.hpp"
#include "ttm/model.hpp"

namespace ttm {

namespace {

constexpr char kMagic[4] = {'Q', 'S', 'R', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxNameLength = 4096;

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedError(std::string("checkpoint ends inside ") + what + " at byte " + std::to_string(pos_));
    }
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::filesystem::path sidecar(const std::filesystem::path& path) {
  std::filesystem::path s = path;
  s += ".json";
  return s;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

}  // namespace

void checkpoint_save(const ModelParams& params, const std::filesystem::path& path) {
  if (path.empty()) throw EmptyPathError("checkpoint path is empty");
  std::string bytes(kMagic, sizeof kMagic);
  put<std::uint32_t>(bytes, kVersion);
  const auto table = parameter_table(params.cfg);
  put<std::uint32_t>(bytes, static_cast<std::uint32_t>(table.size()));
  params.for_each([&](const ParamInfo& info, const Matrix& m) {
    put<std::uint32_t>(bytes, static_cast<std::uint32_t>(info.name.size()));
    bytes += info.name;
    put<std::uint32_t>(bytes, 2);
    put<std::uint64_t>(bytes, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(bytes, static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) {
        std::uint64_t raw = 0;
        const double v = m(i, j);
        std::memcpy(&raw, &v, sizeof raw);
        put<std::uint64_t>(bytes, raw);
      }
    }
  });
  write_file(path, bytes);
  write_file(sidecar(path), params.cfg.to_json() + "\n");
}

ModelParams checkpoint_load(const std::filesystem::path& path) {
  if (path.empty()) throw EmptyPathError("checkpoint path is empty");
  return checkpoint_load(path, ModelConfig::from_json(slurp(sidecar(path))));
}

ModelParams checkpoint_load(const std::filesystem::path& path, const ModelConfig& expected) {
  if (path.empty()) throw EmptyPathError("checkpoint path is empty");
  const std::string bytes = slurp(path);
  Reader r(bytes);
  if (r.take(4, "magic") != std::string(kMagic, sizeof kMagic)) throw FormatError("bad checkpoint magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("tensor count");

  ModelParams params = ModelParams::init(expected);
  const auto table = parameter_table(expected);
  if (count != table.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(count) + " tensors, config expects " +
                     std::to_string(table.size()));
  }
  params.for_each([&](const ParamInfo& info, Matrix& m) {
    const auto len = r.get<std::uint32_t>("name length");
    if (len > kMaxNameLength) throw FormatError("tensor name length " + std::to_string(len) + " is implausible");
    const std::string name = r.take(len, "tensor name");
    if (name != info.name) throw ShapeError("expected tensor '" + info.name + "', found '" + name + "'");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank != 2) throw ShapeError("tensor '" + name + "' has rank " + std::to_string(rank) + ", expected 2");
    const auto rows = r.get<std::uint64_t>("extent");
    const auto cols = r.get<std::uint64_t>("extent");
    if (rows != static_cast<std::uint64_t>(info.rows) || cols != static_cast<std::uint64_t>(info.cols)) {
      throw ShapeError("tensor '" + name + "' is [" + std::to_string(rows) + "x" + std::to_string(cols) +
                       "], config expects [" + std::to_string(info.rows) + "x" + std::to_string(info.cols) + "]");
    }
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) {
        const auto raw = r.get<std::uint64_t>("tensor values");
        std::memcpy(&m(i, j), &raw, sizeof raw);
      }
    }
  });
  if (!r.done()) throw FormatError("trailing bytes after the last tensor");
  return params;
}

}  // namespace ttm
