#include "bgpo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace bgpo {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint code assumes little-endian");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_f32(std::string& out, float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t narrow(std::size_t v, const char* what) {
  if (v > 0xffffffffU) throw std::invalid_argument(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  void bytes(void* dst, std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::truncated,
                            std::string("checkpoint truncated while reading ") + what);
    }
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v = 0;
    bytes(&v, 4, what);
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const MaskPredictor& model, const Vocabulary& vocab,
                     const std::filesystem::path& path) {
  const ModelConfig& c = model.config();
  const ParamStore& p = model.params();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, narrow(c.vocab_size, "vocab_size"));
  put_u32(out, narrow(c.embed_dim, "embed_dim"));
  put_u32(out, narrow(c.depth, "depth"));
  put_u32(out, narrow(c.ffn_dim, "ffn_dim"));
  put_u32(out, narrow(c.context_length, "context_length"));
  put_u32(out, vocab.mask_id());
  put_u32(out, vocab.pad_id());
  put_u32(out, narrow(p.num_arrays(), "array count"));
  for (std::size_t i = 0; i < p.num_arrays(); ++i) {
    const auto& a = p.array(i);
    put_u32(out, narrow(a.name.size(), "name length"));
    out += a.name;
    put_u32(out, narrow(a.rows, "rows"));
    put_u32(out, narrow(a.cols, "cols"));
    for (double v : p.values(i)) put_f32(out, static_cast<float>(v));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string() + " for writing");
  }
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "write failed: " + path.string());
}

MaskPredictor load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string());
  const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r(data);
  char magic[sizeof kCheckpointMagic];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw CheckpointError(CheckpointError::Kind::bad_magic, path.string() + ": not a checkpoint file");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::bad_version,
                          path.string() + ": unsupported format version " + std::to_string(version));
  }
  ModelConfig c;
  c.vocab_size = r.u32("vocab_size");
  c.embed_dim = r.u32("embed_dim");
  c.depth = r.u32("depth");
  c.ffn_dim = r.u32("ffn_dim");
  c.context_length = r.u32("context_length");
  const std::uint32_t mask_id = r.u32("mask_id");
  const std::uint32_t pad_id = r.u32("pad_id");
  if (c.vocab_size != vocab.size() || mask_id != vocab.mask_id() || pad_id != vocab.pad_id()) {
    throw CheckpointError(CheckpointError::Kind::mismatch,
                          path.string() + ": vocabulary of size " + std::to_string(c.vocab_size) +
                              " does not match the expected size " + std::to_string(vocab.size()));
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointError::Kind::mismatch, path.string() + ": " + e.what());
  }

  ParamStore store = MaskPredictor::make_layout(c);
  const std::uint32_t count = r.u32("array count");
  if (count != store.num_arrays()) {
    throw CheckpointError(CheckpointError::Kind::mismatch,
                          path.string() + ": unexpected array count " + std::to_string(count));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto& a = store.array(i);
    const std::uint32_t len = r.u32("name length");
    if (len > 4096) throw CheckpointError(CheckpointError::Kind::mismatch, "implausible name length");
    std::string name(len, '\0');
    r.bytes(name.data(), len, "array name");
    const std::uint32_t rows = r.u32("rows");
    const std::uint32_t cols = r.u32("cols");
    if (name != a.name || rows != a.rows || cols != a.cols) {
      throw CheckpointError(CheckpointError::Kind::mismatch,
                            path.string() + ": array '" + name + "' does not match layout entry '" +
                                a.name + "'");
    }
    for (double& v : store.values(i)) {
      float x = 0.0F;
      r.bytes(&x, 4, a.name.c_str());
      v = x;
    }
  }
  if (!r.done()) {
    throw CheckpointError(CheckpointError::Kind::mismatch, path.string() + ": trailing bytes");
  }
  return MaskPredictor(c, std::move(store));
}

}  // namespace bgpo
