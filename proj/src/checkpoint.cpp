#include "scolio/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <vector>

namespace scolio {

namespace fs = std::filesystem;
using Kind = CheckpointError::Kind;

namespace {

constexpr std::uint8_t kF32 = 1;
constexpr std::uint8_t kF64 = 2;

template <typename Scalar>
constexpr std::uint8_t dtype_code() {
  return sizeof(Scalar) == 4 ? kF32 : kF64;
}

class Writer {
 public:
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void put_bytes(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
  std::vector<char> bytes;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }
  const std::string& path() const { return path_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CheckpointError(Kind::truncated, path_ + ": truncated checkpoint");
  }
  std::vector<char> data_;
  std::string path_;
  std::size_t pos_ = 0;
};

template <typename Scalar>
void put_value(Writer& w, Scalar v) {
  if constexpr (sizeof(Scalar) == 4) {
    w.put(std::bit_cast<std::uint32_t>(v));
  } else {
    w.put(std::bit_cast<std::uint64_t>(v));
  }
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const ParamList<Scalar>& params, const fs::path& path) {
  std::vector<const NamedTensor<Scalar>*> order;
  for (const auto& p : params) order.push_back(&p);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->name < b->name; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (order[i]->name == order[i - 1]->name) {
      throw CheckpointError(Kind::duplicate_name, "duplicate tensor name '" + order[i]->name + "'");
    }
  }
  Writer w;
  w.put_bytes(std::string(kCheckpointMagic, sizeof kCheckpointMagic - 1));
  w.put(static_cast<std::uint32_t>(order.size()));
  for (const auto* p : order) {
    if (p->name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw std::invalid_argument("tensor name too long: " + p->name);
    }
    w.put(static_cast<std::uint16_t>(p->name.size()));
    w.put_bytes(p->name);
    w.put(dtype_code<Scalar>());
    w.put(static_cast<std::uint8_t>(p->tensor.rank()));
    for (Index d : p->tensor.shape()) w.put(static_cast<std::uint32_t>(d));
    for (Scalar v : p->tensor.data()) put_value(w, v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::io, path.string() + ": cannot open for writing");
  out.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
  if (!out) throw CheckpointError(Kind::io, path.string() + ": write failed");
}

template <typename Scalar>
std::map<std::string, Tensor<Scalar>> load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::io, path.string() + ": cannot open checkpoint");
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());
  const std::size_t magic_len = sizeof kCheckpointMagic - 1;
  std::string magic;
  try {
    magic = r.get_bytes(magic_len);
  } catch (const CheckpointError&) {
    throw CheckpointError(Kind::bad_magic, path.string() + ": not a checkpoint (bad magic)");
  }
  if (magic != std::string(kCheckpointMagic, magic_len)) {
    throw CheckpointError(Kind::bad_magic, path.string() + ": not a checkpoint (bad magic)");
  }
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, Tensor<Scalar>> out;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = r.get<std::uint16_t>();
    std::string name = r.get_bytes(len);
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != kF32 && dtype != kF64) {
      throw CheckpointError(Kind::bad_dtype, path.string() + ": unknown dtype for " + name);
    }
    const auto rank = r.get<std::uint8_t>();
    Shape shape;
    for (int d = 0; d < rank; ++d) shape.push_back(static_cast<Index>(r.get<std::uint32_t>()));
    Tensor<Scalar> tensor(shape);
    for (Scalar& v : tensor.data()) {
      if (dtype == kF32) {
        v = static_cast<Scalar>(std::bit_cast<float>(r.get<std::uint32_t>()));
      } else {
        v = static_cast<Scalar>(std::bit_cast<double>(r.get<std::uint64_t>()));
      }
    }
    if (!out.emplace(name, std::move(tensor)).second) {
      throw CheckpointError(Kind::duplicate_name, path.string() + ": duplicate tensor '" + name + "'");
    }
  }
  if (!r.done()) throw CheckpointError(Kind::mismatch, path.string() + ": trailing bytes");
  return out;
}

template <typename Scalar>
void assign_checkpoint(const std::map<std::string, Tensor<Scalar>>& loaded,
                       const ParamList<Scalar>& params) {
  if (loaded.size() != params.size()) {
    throw CheckpointError(Kind::mismatch, "checkpoint holds " + std::to_string(loaded.size()) +
                                              " tensors, model expects " +
                                              std::to_string(params.size()));
  }
  for (const auto& p : params) {
    auto it = loaded.find(p.name);
    if (it == loaded.end()) throw CheckpointError(Kind::mismatch, "checkpoint lacks " + p.name);
    if (it->second.shape() != p.tensor.shape()) {
      throw CheckpointError(Kind::mismatch, p.name + ": checkpoint shape " +
                                                shape_str(it->second.shape()) + " vs model " +
                                                shape_str(p.tensor.shape()));
    }
  }
  for (const auto& p : params) {
    auto src = loaded.at(p.name).data();
    Tensor<Scalar> target = p.tensor;  // shares storage
    auto dst = target.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

#define SCOLIO_INSTANTIATE_CKPT(S)                                                          \
  template void save_checkpoint(const ParamList<S>&, const fs::path&);                     \
  template std::map<std::string, Tensor<S>> load_checkpoint<S>(const fs::path&);           \
  template void assign_checkpoint(const std::map<std::string, Tensor<S>>&, const ParamList<S>&);

SCOLIO_INSTANTIATE_CKPT(float)
SCOLIO_INSTANTIATE_CKPT(double)

}  // namespace scolio
