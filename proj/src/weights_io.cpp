#include "igmmgan/weights_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "igmmgan/error.hpp"
#include "igmmgan/hash.hpp"

namespace igmmgan {

namespace {

constexpr char kMagic[4] = {'I', 'G', 'G', 'N'};

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("weight file truncated while reading ") + what +
                        " at byte " + std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string tensor_checksum(const NamedTensor& t) {
  return sha256_hex(encode_weights({t}));
}

}  // namespace

std::string encode_weights(const std::vector<NamedTensor>& tensors, std::uint32_t version) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, version);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw ConfigError("tensor name too long: " + t.name);
    if (t.shape.size() > 0xFF) throw ConfigError("tensor rank too large: " + t.name);
    std::uint64_t n = 1;
    for (auto d : t.shape) n *= d;
    if (n != t.values.size()) throw DimensionError("tensor '" + t.name + "' shape/data mismatch");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) put_le<std::uint64_t>(out, d);
    for (double v : t.values) put_le<double>(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode_weights(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != std::string(kMagic, 4)) throw FormatError("bad magic: not an IGGN file");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kWeightFormatVersion) {
    throw VersionError("weight file format version " + std::to_string(version) +
                       " is not supported by this reader (version " +
                       std::to_string(kWeightFormatVersion) + ")");
  }
  const auto count = in.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = in.get<std::uint16_t>("name length");
    t.name = in.take(name_len, "name");
    const auto rank = in.get<std::uint8_t>("rank");
    std::uint64_t n = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      t.shape.push_back(in.get<std::uint64_t>("dimension"));
      n *= t.shape.back();
    }
    if (n > bytes.size() / sizeof(double)) throw FormatError("tensor '" + t.name + "' too large");
    t.values.resize(n);
    for (auto& v : t.values) v = in.get<double>("values");
    out.push_back(std::move(t));
  }
  if (!in.done()) throw FormatError("trailing bytes after last tensor");
  return out;
}

std::filesystem::path manifest_path(const std::filesystem::path& weight_file) {
  return weight_file.string() + ".json";
}

void write_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const std::string bytes = encode_weights(tensors);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  nlohmann::json manifest;
  manifest["format"] = "IGGN";
  manifest["version"] = kWeightFormatVersion;
  manifest["file_sha256"] = sha256_hex(bytes);
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) {
    manifest["tensors"].push_back(
        {{"name", t.name}, {"shape", t.shape}, {"sha256", tensor_checksum(t)}});
  }
  std::ofstream out(manifest_path(path), std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + manifest_path(path).string());
  out << manifest.dump(2) << '\n';
}

std::vector<NamedTensor> read_weights(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto mpath = manifest_path(path);
  std::ifstream min(mpath);
  if (!min) throw FormatError("missing weight manifest " + mpath.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(min);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed weight manifest " + mpath.string() + ": " + e.what());
  }
  if (manifest.value("version", 0u) != kWeightFormatVersion) {
    throw VersionError("weight manifest version " + manifest.value("version", nlohmann::json()).dump() +
                       " is not supported by this reader");
  }
  if (manifest.value("file_sha256", std::string()) != sha256_hex(bytes)) {
    throw ChecksumError("checksum mismatch for " + path.string());
  }
  auto tensors = decode_weights(bytes);
  const auto& entries = manifest.at("tensors");
  if (entries.size() != tensors.size()) throw ChecksumError("manifest tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (entries[i].at("name") != tensors[i].name ||
        entries[i].at("sha256") != tensor_checksum(tensors[i])) {
      throw ChecksumError("checksum mismatch for tensor '" + tensors[i].name + "'");
    }
  }
  return tensors;
}

std::vector<NamedTensor> to_named_tensors(const ParamSet& params) {
  std::vector<NamedTensor> out;
  for (const Param& p : params) {
    NamedTensor t;
    t.name = p.name;
    t.shape = {static_cast<std::uint64_t>(p.value.rows()), static_cast<std::uint64_t>(p.value.cols())};
    t.values.assign(p.value.data(), p.value.data() + p.value.size());
    out.push_back(std::move(t));
  }
  return out;
}

ParamSet params_from_named(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  ParamSet params;
  for (const auto& t : tensors) {
    if (t.name.rfind(prefix, 0) != 0) continue;
    if (t.shape.size() != 2) throw FormatError("parameter '" + t.name + "' is not rank 2");
    Matrix m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
    std::copy(t.values.begin(), t.values.end(), m.data());
    if (!m.allFinite()) throw NumericError("parameter '" + t.name + "' holds non-finite values");
    const bool running = t.name.find("running_") != std::string::npos;
    params.add(t.name, std::move(m), !running);
  }
  return params;
}

}  // namespace igmmgan
