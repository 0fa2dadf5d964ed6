#include "tcnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace tcnn {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'T', 'C', 'N', 'N'};

template <typename U>
void put(std::string& buf, U v) {
  char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  buf.append(bytes, sizeof(U));
}

class Reader {
public:
  Reader(std::string bytes, std::filesystem::path path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  bool done() const { return pos_ == bytes_.size(); }

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_floats(float* out, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(out, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }

private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw DataError(DataError::Kind::truncated, "'" + path_.string() + "' is truncated");
  }

  std::string bytes_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

} // namespace

void write_tensor_records(const std::vector<NamedTensor>& records, const std::filesystem::path& path) {
  std::string buf(kMagic, 4);
  put<std::uint16_t>(buf, kCheckpointVersion);
  for (const NamedTensor& r : records) {
    if (r.name.size() > 0xFFFF) throw DomainError("tensor name too long: " + r.name.substr(0, 32));
    if (r.tensor.rank() > 0xFF) throw ShapeError("tensor rank exceeds 255");
    put<std::uint16_t>(buf, static_cast<std::uint16_t>(r.name.size()));
    buf += r.name;
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(r.tensor.rank()));
    for (std::size_t e : r.tensor.shape()) {
      if (e > 0xFFFFFFFFu) throw ShapeError("tensor extent exceeds u32");
      put<std::uint32_t>(buf, static_cast<std::uint32_t>(e));
    }
    buf.append(reinterpret_cast<const char*>(r.tensor.data()), r.tensor.size() * sizeof(float));
  }
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::io, "cannot open '" + path.string() + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError(DataError::Kind::io, "write failed for '" + path.string() + "'");
}

std::vector<NamedTensor> read_tensor_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::io, "cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path);
  if (r.get_string(4) != std::string(kMagic, 4))
    throw DataError(DataError::Kind::bad_magic, "'" + path.string() + "' is not a TCNN container");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion)
    throw DataError(DataError::Kind::format,
                    "'" + path.string() + "' has unsupported version " + std::to_string(version));
  std::vector<NamedTensor> records;
  while (!r.done()) {
    NamedTensor rec;
    rec.name = r.get_string(r.get<std::uint16_t>());
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& e : shape) e = r.get<std::uint32_t>();
    rec.tensor = Tensor<float>(shape);
    r.get_floats(rec.tensor.data(), rec.tensor.size());
    records.push_back(std::move(rec));
  }
  return records;
}

template <typename T>
void save_checkpoint(Network<T>& net, const std::filesystem::path& path) {
  std::vector<NamedTensor> records;
  for (Parameter<T>* p : net.parameters()) records.push_back({p->name, p->value.template cast<float>()});
  write_tensor_records(records, path);
}

template <typename T>
void load_checkpoint(Network<T>& net, const std::filesystem::path& path) {
  const std::vector<NamedTensor> records = read_tensor_records(path);
  const std::vector<Parameter<T>*> params = net.parameters();
  if (records.size() != params.size())
    throw DataError(DataError::Kind::count_mismatch,
                    "'" + path.string() + "' holds " + std::to_string(records.size()) +
                        " tensors, network has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedTensor& rec = records[i];
    Parameter<T>& p = *params[i];
    if (rec.name != p.name)
      throw DataError(DataError::Kind::format,
                      "record " + std::to_string(i) + " is '" + rec.name + "', expected '" + p.name + "'");
    if (rec.tensor.shape() != p.value.shape())
      throw DataError(DataError::Kind::format, "'" + p.name + "' has shape " +
                                                   shape_string(rec.tensor.shape()) + ", expected " +
                                                   shape_string(p.value.shape()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->value = records[i].tensor.template cast<T>();
    params[i]->zero_grad();
    params[i]->enforce_constraints();
  }
}

template void save_checkpoint<float>(Network<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(Network<double>&, const std::filesystem::path&);
template void load_checkpoint<float>(Network<float>&, const std::filesystem::path&);
template void load_checkpoint<double>(Network<double>&, const std::filesystem::path&);

} // namespace tcnn
