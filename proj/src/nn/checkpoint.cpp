#include "nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace advlab::nn {

namespace {

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), n); }
  template <class T>
  void pod(T v) {
    bytes(&v, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void finish(const std::string& path) {
    out_.flush();
    if (!out_) throw IoError("checkpoint: short write to '" + path + "'");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("checkpoint: cannot open '" + path + "'");
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), n);
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw IoError("checkpoint: truncated file '" + path_ + "'");
  }
  template <class T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::string str() {
    const std::uint16_t n = pod<std::uint16_t>();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::string path_;
  std::ifstream in_;
};

}  // namespace

void save_network(const std::string& path, RecordKind kind, const Classifier& net,
                  const CheckpointMeta& meta) {
  Writer w(path);
  w.bytes(kCheckpointMagic, 8);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(kind));

  w.pod<std::uint32_t>(static_cast<std::uint32_t>(net.num_classes));
  for (std::size_t d : net.input_shape) w.pod<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.pod<std::uint32_t>(meta.epochs);
  w.pod<std::uint64_t>(meta.seed);
  w.pod<std::uint8_t>(meta.adversarial ? 1 : 0);
  w.pod<double>(meta.epsilon);

  w.pod<std::uint32_t>(static_cast<std::uint32_t>(net.layers.size()));
  for (const LayerSpec& l : net.layers) {
    w.pod<std::int32_t>(static_cast<std::int32_t>(l.kind));
    w.pod<std::int32_t>(l.a);
    w.pod<std::int32_t>(l.b);
    w.pod<std::int32_t>(l.c);
    w.pod<std::int32_t>(l.d);
    w.pod<std::uint8_t>(l.flag ? 1 : 0);
  }

  w.pod<std::uint32_t>(static_cast<std::uint32_t>(net.params.size()));
  for (const auto& [name, p] : net.params) {
    w.str(name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.rank()));
    for (std::size_t d : p.shape) w.pod<std::uint64_t>(d);
    w.bytes(p.data.data(), p.data.size() * sizeof(double));
  }
  w.finish(path);
}

namespace {

LoadedNetwork load_impl(Reader& r) {
  LoadedNetwork out;
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("checkpoint: bad magic (not an advlab checkpoint)");
  const std::uint32_t version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  out.kind = static_cast<RecordKind>(r.pod<std::uint32_t>());

  out.net.num_classes = static_cast<int>(r.pod<std::uint32_t>());
  out.net.input_shape.resize(3);
  for (std::size_t i = 0; i < 3; ++i) out.net.input_shape[i] = r.pod<std::uint32_t>();
  out.meta.epochs = r.pod<std::uint32_t>();
  out.meta.seed = r.pod<std::uint64_t>();
  out.meta.adversarial = r.pod<std::uint8_t>() != 0;
  out.meta.epsilon = r.pod<double>();

  const std::uint32_t nlayers = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nlayers; ++i) {
    LayerSpec l;
    l.kind = static_cast<LayerKind>(r.pod<std::int32_t>());
    l.a = r.pod<std::int32_t>();
    l.b = r.pod<std::int32_t>();
    l.c = r.pod<std::int32_t>();
    l.d = r.pod<std::int32_t>();
    l.flag = r.pod<std::uint8_t>() != 0;
    out.net.layers.push_back(l);
  }

  const std::uint32_t nparams = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nparams; ++i) {
    const std::string name = r.str();
    const std::uint32_t rank = r.pod<std::uint32_t>();
    Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = r.pod<std::uint64_t>();
    Tensor p = Tensor::zeros(shape);
    r.bytes(p.data.data(), p.data.size() * sizeof(double));
    out.net.params[name] = std::move(p);
  }
  return out;
}

}  // namespace

LoadedNetwork load_network(const std::string& path) {
  Reader r(path);
  return load_impl(r);
}

RecordKind checkpoint_kind(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("checkpoint: bad magic (not an advlab checkpoint)");
  (void)r.pod<std::uint32_t>();
  return static_cast<RecordKind>(r.pod<std::uint32_t>());
}

}  // namespace advlab::nn
