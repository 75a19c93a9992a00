#include "checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "error.hpp"

namespace dssc {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'D', 'S', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeF64 = 2;

void put_u16(std::vector<unsigned char>& buf, std::uint16_t x) {
  buf.push_back(x & 0xff);
  buf.push_back(x >> 8);
}

void put_u32(std::vector<unsigned char>& buf, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) buf.push_back((x >> (8 * i)) & 0xff);
}

void put_str(std::vector<unsigned char>& buf, const std::string& s) {
  put_u32(buf, static_cast<std::uint32_t>(s.size()));
  buf.insert(buf.end(), s.begin(), s.end());
}

// Bounds-checked cursor over a loaded file.
class Reader {
 public:
  Reader(const std::vector<unsigned char>& buf, std::string path)
      : buf_(buf), path_(std::move(path)) {}

  const unsigned char* take(std::size_t n) {
    if (pos_ + n > buf_.size()) {
      throw Error(ErrorCode::format, path_ + ": truncated checkpoint");
    }
    const unsigned char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint16_t u16() {
    const unsigned char* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }

  std::uint32_t u32() {
    const unsigned char* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (std::uint32_t(p[1]) << 8) |
           (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
  }

  std::string str() {
    const std::uint32_t n = u32();
    const unsigned char* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

  bool done() const { return pos_ == buf_.size(); }
  const std::string& path() const { return path_; }

 private:
  const std::vector<unsigned char>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

template <typename T>
void put_tensor(std::vector<unsigned char>& buf, const std::string& name,
                const Tensor<T>& t) {
  put_str(buf, name);
  buf.push_back(kDtypeF64);
  buf.push_back(static_cast<unsigned char>(t.ndim()));
  for (int d = 0; d < t.ndim(); ++d) {
    put_u32(buf, static_cast<std::uint32_t>(t.dim(d)));
  }
  const std::size_t start = buf.size();
  buf.resize(start + t.size() * sizeof(double));
  auto* out = reinterpret_cast<double*>(buf.data() + start);
  for (std::int64_t i = 0; i < t.size(); ++i) {
    out[i] = static_cast<double>(t[i]);
  }
}

Tensor<double> read_tensor(Reader& r) {
  const std::uint8_t dtype = *r.take(1);
  if (dtype != kDtypeF32 && dtype != kDtypeF64) {
    throw Error(ErrorCode::format,
                r.path() + ": unknown tensor dtype " + std::to_string(dtype));
  }
  const std::uint8_t ndim = *r.take(1);
  if (ndim == 0 || ndim > 8) {
    throw Error(ErrorCode::format,
                r.path() + ": bad tensor rank " + std::to_string(ndim));
  }
  std::vector<int> shape(ndim);
  std::int64_t total = 1;
  for (int d = 0; d < ndim; ++d) {
    const std::uint32_t extent = r.u32();
    if (extent == 0 || extent > (1u << 28)) {
      throw Error(ErrorCode::format, r.path() + ": bad tensor extent");
    }
    shape[d] = static_cast<int>(extent);
    total *= extent;
  }
  Tensor<double> t(shape);
  if (dtype == kDtypeF64) {
    const unsigned char* p = r.take(total * sizeof(double));
    std::memcpy(t.data(), p, total * sizeof(double));
  } else {
    const unsigned char* p = r.take(total * sizeof(float));
    const auto* src = reinterpret_cast<const float*>(p);
    for (std::int64_t i = 0; i < total; ++i) t[i] = src[i];
  }
  return t;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const CheckpointData<T>& data) {
  std::map<std::string, const Tensor<T>*> tensors;
  for (const auto& [key, t] : data.model.params) tensors[key] = t.get();
  for (const auto& [key, st] : data.model.bn_state) {
    tensors[key + ".running_mean"] = st.running_mean.get();
    tensors[key + ".running_var"] = st.running_var.get();
  }
  for (const auto& [key, t] : data.extra) {
    if (key.rfind("opt.", 0) != 0) {
      throw Error(ErrorCode::invalid_argument,
                  "extra checkpoint tensor \"" + key +
                      "\" must use the opt. prefix");
    }
    if (!tensors.emplace(key, t.get()).second) {
      throw Error(ErrorCode::invalid_argument,
                  "duplicate checkpoint tensor \"" + key + "\"");
    }
  }

  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u16(buf, kVersion);
  put_u16(buf, 0);
  put_str(buf, arch_to_json(data.model.config));
  put_str(buf, data.corpus_id);
  put_str(buf, data.config_hash);
  put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) put_tensor(buf, name, *t);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f.good()) {
    throw Error(ErrorCode::io, "cannot open " + path + " for writing");
  }
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!f.good()) {
    throw Error(ErrorCode::io, "short write to " + path);
  }
}

template <typename T>
CheckpointData<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) {
    throw Error(ErrorCode::io, "cannot open " + path);
  }
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  Reader r(buf, path);

  const unsigned char* magic = r.take(4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::format, path + ": not a checkpoint file");
  }
  const std::uint16_t version = r.u16();
  if (version != kVersion) {
    throw Error(ErrorCode::unsupported,
                path + ": checkpoint version " + std::to_string(version) +
                    " (expected " + std::to_string(kVersion) + ")");
  }
  r.u16();  // reserved

  const ArchConfig arch = arch_from_json(r.str());
  CheckpointData<T> out;
  out.corpus_id = r.str();
  out.config_hash = r.str();
  out.model = build_model<T>(arch, 0);

  const std::uint32_t n_tensors = r.u32();
  std::map<std::string, Tensor<double>> loaded;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    if (!loaded.emplace(std::move(name), read_tensor(r)).second) {
      throw Error(ErrorCode::format, path + ": duplicate tensor name");
    }
  }
  if (!r.done()) {
    throw Error(ErrorCode::format, path + ": trailing bytes after tensors");
  }

  auto claim = [&](const std::string& name,
                   const std::vector<int>& want) -> Tensor<double> {
    auto it = loaded.find(name);
    if (it == loaded.end()) {
      throw Error(ErrorCode::format, path + ": missing tensor " + name);
    }
    if (it->second.shape() != want) {
      std::string expect = "(";
      for (std::size_t d = 0; d < want.size(); ++d) {
        if (d) expect += ", ";
        expect += std::to_string(want[d]);
      }
      expect += ")";
      throw Error(ErrorCode::format, path + ": tensor " + name +
                                         " has shape " +
                                         it->second.shape_str() +
                                         ", expected " + expect);
    }
    Tensor<double> t = std::move(it->second);
    loaded.erase(it);
    return t;
  };

  for (auto& [key, slot] : out.model.params) {
    slot = make_tensor<T>(claim(key, slot->shape()).template cast<T>());
  }
  for (auto& [key, st] : out.model.bn_state) {
    st.running_mean = make_tensor<T>(
        claim(key + ".running_mean", st.running_mean->shape())
            .template cast<T>());
    st.running_var = make_tensor<T>(
        claim(key + ".running_var", st.running_var->shape())
            .template cast<T>());
  }
  for (auto& [name, t] : loaded) {
    if (name.rfind("opt.", 0) != 0) {
      throw Error(ErrorCode::format,
                  path + ": unexpected tensor \"" + name + "\"");
    }
    out.extra[name] = make_tensor<T>(t.template cast<T>());
  }
  return out;
}

template void save_checkpoint<float>(const std::string&,
                                     const CheckpointData<float>&);
template void save_checkpoint<double>(const std::string&,
                                      const CheckpointData<double>&);
template CheckpointData<float> load_checkpoint<float>(const std::string&);
template CheckpointData<double> load_checkpoint<double>(const std::string&);

}  // namespace dssc
