#include "keep/nn/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "keep/binary.hpp"

namespace keep {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace keep

namespace keep::nn {

namespace {
constexpr std::string_view kMagic = "KEEPCKPT";
}

const TensorEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(ckpt.format_version);
  w.str(ckpt.kind);
  w.str(ckpt.config);
  w.str(ckpt.version_tag);
  w.i64(ckpt.cursor_day);
  w.u32(ckpt.knowledge_version);
  w.u64(ckpt.adam_step);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.data.size() != t.rows * t.cols) {
      throw ShapeError("checkpoint tensor " + t.name + " has inconsistent size");
    }
    w.str(t.name);
    w.u64(t.rows);
    w.u64(t.cols);
  }
  for (const auto& t : ckpt.tensors) w.f32s(t.data);
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  ByteReader<IoError> r(bytes);
  if (r.bytes(kMagic.size()) != kMagic) throw IoError("not a checkpoint file");
  Checkpoint c;
  c.format_version = r.u32();
  if (c.format_version != kCheckpointFormatVersion) {
    throw VersionError("checkpoint format version " +
                       std::to_string(c.format_version) + ", expected " +
                       std::to_string(kCheckpointFormatVersion));
  }
  c.kind = r.str();
  c.config = r.str();
  c.version_tag = r.str();
  c.cursor_day = r.i64();
  c.knowledge_version = r.u32();
  c.adam_step = r.u64();
  const auto n = r.u32();
  c.tensors.resize(n);
  for (auto& t : c.tensors) {
    t.name = r.str();
    t.rows = r.u64();
    t.cols = r.u64();
    if (t.rows != 0 && t.cols > (std::size_t{1} << 40) / t.rows) {
      throw IoError("checkpoint tensor " + t.name + " has absurd shape");
    }
  }
  for (auto& t : c.tensors) {
    t.data.resize(t.rows * t.cols);
    r.f32s(t.data);
  }
  if (r.remaining() != 0) throw IoError("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

namespace {

TensorEntry to_entry(const std::string& name, const Matrix& m) {
  TensorEntry t{name, m.rows(), m.cols(), {}};
  t.data.assign(m.data().begin(), m.data().end());
  return t;
}

void copy_into(const TensorEntry& t, Matrix& m) {
  m.reset(t.rows, t.cols);
  std::copy(t.data.begin(), t.data.end(), m.data().begin());
}

}  // namespace

void store_params(Checkpoint& ckpt, const std::vector<Param<float>*>& params,
                  const Adam* adam) {
  for (const auto* p : params) ckpt.tensors.push_back(to_entry(p->name, p->value));
  if (adam == nullptr) return;
  ckpt.adam_step = adam->step_count();
  for (const auto* p : params) {
    auto it = adam->moments().find(p->name);
    if (it == adam->moments().end()) continue;
    ckpt.tensors.push_back(to_entry("adam.m:" + p->name, it->second.m));
    ckpt.tensors.push_back(to_entry("adam.v:" + p->name, it->second.v));
  }
}

void restore_params(const Checkpoint& ckpt,
                    const std::vector<Param<float>*>& params, Adam* adam,
                    const std::vector<std::string>& may_be_fresh) {
  auto fresh_ok = [&](const std::string& name) {
    for (const auto& prefix : may_be_fresh) {
      if (name.rfind(prefix, 0) == 0) return true;
    }
    return false;
  };

  std::set<std::string> claimed;
  std::vector<std::string> missing;
  for (const auto* p : params) {
    claimed.insert(p->name);
    claimed.insert("adam.m:" + p->name);
    claimed.insert("adam.v:" + p->name);
    const auto* t = ckpt.find(p->name);
    if (t == nullptr) {
      if (!fresh_ok(p->name)) missing.push_back(p->name);
      continue;
    }
    if (t->rows != p->value.rows() || t->cols != p->value.cols()) {
      throw ManifestError("tensor " + p->name + " has shape " +
                          shape_str(t->rows, t->cols) + ", model expects " +
                          shape_str(p->value.rows(), p->value.cols()));
    }
  }
  std::vector<std::string> extra;
  for (const auto& t : ckpt.tensors) {
    if (!claimed.count(t.name)) extra.push_back(t.name);
  }
  if (!missing.empty() || !extra.empty()) {
    std::ostringstream msg;
    msg << "checkpoint manifest mismatch;";
    if (!missing.empty()) {
      msg << " missing:";
      for (const auto& m : missing) msg << ' ' << m;
    }
    if (!extra.empty()) {
      msg << (missing.empty() ? "" : ";") << " extra:";
      for (const auto& e : extra) msg << ' ' << e;
    }
    throw ManifestError(msg.str());
  }

  std::map<std::string, Adam::Moments> moments;
  for (auto* p : params) {
    if (const auto* t = ckpt.find(p->name)) copy_into(*t, p->value);
    const auto* m = ckpt.find("adam.m:" + p->name);
    const auto* v = ckpt.find("adam.v:" + p->name);
    if (m != nullptr && v != nullptr) {
      auto& mom = moments[p->name];
      copy_into(*m, mom.m);
      copy_into(*v, mom.v);
    }
  }
  if (adam != nullptr) adam->restore(ckpt.adam_step, std::move(moments));
}

}  // namespace keep::nn
