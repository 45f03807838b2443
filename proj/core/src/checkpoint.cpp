#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "obf/error.hpp"
#include "obf/seqmodels.hpp"

namespace obf::models {

namespace {

constexpr std::array<char, 4> kMagic{'O', 'B', 'F', 'B'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (!in_) throw DataError("truncated checkpoint: " + source_);
  }

 private:
  unsigned char byte() {
    int c = in_.get();
    if (c == std::char_traits<char>::eof()) throw DataError("truncated checkpoint: " + source_);
    return static_cast<unsigned char>(c);
  }

  std::istream& in_;
  std::string source_;
};

Architecture read_header(Reader& r) {
  std::array<char, 4> magic{};
  r.read(magic.data(), magic.size());
  if (magic != kMagic) throw DataError("not a checkpoint (bad magic)");
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Architecture a;
  a.kind = static_cast<ModelKind>(r.u32());
  a.src_vocab = r.u32();
  a.tgt_vocab = r.u32();
  a.d_model = r.u32();
  a.layers = r.u32();
  a.heads = r.u32();
  a.ff_dim = r.u32();
  a.max_len = r.u32();
  a.src_fingerprint = r.u64();
  a.tgt_fingerprint = r.u64();
  try {
    a.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("invalid checkpoint header: ") + e.what());
  }
  return a;
}

template <typename Model>
Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  Reader r(in, path.string());
  Architecture arch = read_header(r);
  std::uint32_t count = r.u32();
  std::uint64_t scalars = r.u64();

  // An initialised model supplies names and shapes in declaration order.
  Model shape_model(arch, std::uint64_t{0});
  const ParameterSet& like = shape_model.params();
  if (count != like.count() || scalars != like.scalar_count()) {
    throw DataError("checkpoint parameter table does not match its architecture header");
  }
  ParameterSet params;
  for (std::size_t i = 0; i < like.count(); ++i) {
    TensorF t(like[i].shape());
    for (auto& v : t.data()) v = r.f32();
    params.add(like.name(i), std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in checkpoint: " + path.string());
  if (!params.all_finite()) throw DataError("checkpoint contains non-finite parameters");
  return Model(arch, std::move(params));
}

}  // namespace

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  Writer w(out);
  out.write(kMagic.data(), kMagic.size());
  w.u32(kCheckpointVersion);
  const Architecture& a = model.arch();
  w.u32(static_cast<std::uint32_t>(a.kind));
  w.u32(a.src_vocab);
  w.u32(a.tgt_vocab);
  w.u32(a.d_model);
  w.u32(a.layers);
  w.u32(a.heads);
  w.u32(a.ff_dim);
  w.u32(a.max_len);
  w.u64(a.src_fingerprint);
  w.u64(a.tgt_fingerprint);
  const ParameterSet& p = model.params();
  w.u32(static_cast<std::uint32_t>(p.count()));
  w.u64(p.scalar_count());
  for (std::size_t i = 0; i < p.count(); ++i) {
    for (float v : p[i].data()) w.f32(v);
  }
  out.flush();
  if (!out) throw DataError("write failed: " + path.string());
}

Architecture read_architecture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  Reader r(in, path.string());
  return read_header(r);
}

Seq2SeqModel load_seq2seq(const std::filesystem::path& path) {
  if (read_architecture(path).kind != ModelKind::kSeq2Seq) throw DataError("checkpoint is not a seq2seq model");
  return load_model<Seq2SeqModel>(path);
}

CausalLMModel load_causal_lm(const std::filesystem::path& path) {
  if (read_architecture(path).kind != ModelKind::kCausalLM) throw DataError("checkpoint is not a causal LM");
  return load_model<CausalLMModel>(path);
}

}  // namespace obf::models
