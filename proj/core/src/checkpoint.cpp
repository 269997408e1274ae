#include "pvpl/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "pvpl/bytes.hpp"

namespace pvpl {

namespace {

constexpr char kMagic[4] = {'P', 'V', 'P', 'L'};
constexpr std::uint8_t kF32 = 0;
constexpr std::uint8_t kU8 = 1;

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

const Tensor& Checkpoint::at(const std::string& name) const {
  if (const auto* t = find(name)) return *t;
  throw IoError("checkpoint has no entry '" + name + "'");
}

void Checkpoint::put(const NamedTensors& entries) {
  for (const auto& [name, t] : entries) {
    auto it = std::find_if(tensors.begin(), tensors.end(),
                           [&](const auto& e) { return e.first == name; });
    if (it != tensors.end()) {
      it->second = t.detach();
    } else {
      tensors.emplace_back(name, t.detach());
    }
  }
}

std::size_t Checkpoint::erase_prefix(const std::string& prefix) {
  const auto before = tensors.size();
  std::erase_if(tensors, [&](const auto& e) { return starts_with(e.first, prefix); });
  return before - tensors.size();
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  ByteWriter w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kCheckpointVersion);
  const bool echo = !ck.config_echo.empty();
  w.u32(static_cast<std::uint32_t>(ck.tensors.size() + (echo ? 1 : 0)));
  for (const auto& [name, t] : ck.tensors) {
    if (name == kConfigEchoName) throw InputError("tensor name '" + name + "' is reserved");
    w.str(name);
    w.u8(kF32);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    w.f32s(t.data());
  }
  if (echo) {
    w.str(kConfigEchoName);
    w.u8(kU8);
    w.u8(1);
    w.u64(ck.config_echo.size());
    w.bytes({reinterpret_cast<const std::uint8_t*>(ck.config_echo.data()), ck.config_echo.size()});
  }
  const std::uint32_t crc = crc32(w.buffer());
  w.u32(crc);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 2 + 4 + 4) throw IoError("checkpoint too short");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw IoError("not a checkpoint (bad magic)");
  }
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4));
  const std::uint32_t stored = tail.u32();
  const std::uint32_t actual = crc32(body);
  if (stored != actual) throw IoError("checkpoint CRC mismatch");
  ByteReader r(body);
  r.bytes(4);
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint8_t dtype = r.u8();
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d != 0 && n > r.remaining() / d) throw IoError("entry '" + name + "' larger than file");
      n *= d;
    }
    if (dtype == kF32) {
      if (name == kConfigEchoName) throw IoError("config echo entry must be a byte blob");
      ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), r.f32s(n)));
    } else if (dtype == kU8 && name == kConfigEchoName && rank == 1) {
      const auto b = r.bytes(n);
      ck.config_echo.assign(b.begin(), b.end());
    } else {
      throw IoError("entry '" + name + "' has unsupported dtype " + std::to_string(dtype));
    }
  }
  if (r.remaining() != 0) throw IoError("trailing bytes after checkpoint entries");
  return ck;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

void write_text_file(const std::string& path, const std::string& text) {
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_file_bytes(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(read_file_bytes(path));
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

PvpBank bank_from(const Checkpoint& ck) {
  PvpBank bank;
  for (std::size_t i = 0;; ++i) {
    const auto* t = ck.find("pvp." + std::to_string(i));
    if (!t) break;
    bank.prompts.push_back(*t);
  }
  if (bank.prompts.empty()) throw IoError("checkpoint has no PVP bank");
  return bank;
}

TextPromptSet prompts_from(const Checkpoint& ck) {
  return {ck.at("prompt.global_context"), ck.at("prompt.local_context"),
          ck.at("prompt.class_words")};
}

DualAdapter adapter_from(const Checkpoint& ck) {
  auto branch = [&](const std::string& p) {
    return AdapterBranch{ck.at(p + "w1"), ck.at(p + "b1"), ck.at(p + "w2"), ck.at(p + "b2"),
                         ck.at(p + "alpha")};
  };
  return {branch("adapter.text."), branch("adapter.visual.")};
}

Checkpoint images_to_checkpoint(const std::vector<LabeledImage>& images) {
  Checkpoint ck;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    std::vector<float> lab(im.labels.begin(), im.labels.end());
    const std::size_t n = lab.size();
    ck.tensors.emplace_back("image." + std::to_string(i), im.image.detach());
    ck.tensors.emplace_back("labels." + std::to_string(i), Tensor({n}, std::move(lab)));
  }
  return ck;
}

std::vector<LabeledImage> images_from(const Checkpoint& ck) {
  std::vector<LabeledImage> out;
  for (std::size_t i = 0;; ++i) {
    const auto* img = ck.find("image." + std::to_string(i));
    if (!img) break;
    const auto& lab = ck.at("labels." + std::to_string(i));
    if (img->rank() != 3 || img->dim(2) != 3) {
      throw DimensionError("image." + std::to_string(i) + " has shape " +
                           shape_string(img->shape()) + ", expected H x W x 3");
    }
    std::vector<std::size_t> labels;
    for (float v : lab.data()) {
      if (!(v >= 0.0f) || v != std::floor(v)) {
        throw InputError("labels." + std::to_string(i) + " holds a non-index value");
      }
      labels.push_back(static_cast<std::size_t>(v));
    }
    std::sort(labels.begin(), labels.end());
    out.push_back({*img, std::move(labels)});
  }
  if (out.empty()) throw IoError("image file holds no images");
  return out;
}

}  // namespace pvpl
