#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "core/error.hpp"
#include "json.hpp"

namespace korth {

namespace {

constexpr char kMagic[4] = {'K', 'T', 'S', 'R'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderSize = 24;  // magic + 4 header bytes + 4 dims
// Caps the element count so payload sizes stay well inside size_t.
constexpr std::uint64_t kMaxElements = 1ULL << 31;

std::uint64_t checked_element_count(std::uint32_t o, std::uint32_t i,
                                    std::uint32_t kh, std::uint32_t kw) {
  if (o == 0 || i == 0 || kh == 0 || kw == 0)
    fail(ErrorCode::Validation, "tensor dimensions must be positive");
  std::uint64_t n = o;
  for (std::uint64_t dim : {std::uint64_t(i), std::uint64_t(kh),
                            std::uint64_t(kw)}) {
    n *= dim;
    if (n > kMaxElements)
      fail(ErrorCode::Overflow, "tensor dimension product exceeds " +
                                    std::to_string(kMaxElements) + " elements");
  }
  return n;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int shift = 0; shift < 64; shift += 8)
    out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xff));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int k = 7; k >= 0; --k) v = (v << 8) | p[k];
  return v;
}

}  // namespace

KernelTensor make_tensor(std::string name, std::uint32_t out_channels,
                         std::uint32_t in_channels, std::uint32_t kernel_h,
                         std::uint32_t kernel_w, std::vector<double> data) {
  std::uint64_t expected =
      checked_element_count(out_channels, in_channels, kernel_h, kernel_w);
  if (data.size() != expected)
    fail(ErrorCode::SizeMismatch,
         "tensor data has " + std::to_string(data.size()) +
             " values, dimensions require " + std::to_string(expected));
  for (double v : data)
    if (!std::isfinite(v))
      fail(ErrorCode::Validation, "tensor data contains a non-finite value");
  KernelTensor t;
  t.name = std::move(name);
  t.out_channels = out_channels;
  t.in_channels = in_channels;
  t.kernel_h = kernel_h;
  t.kernel_w = kernel_w;
  t.data = std::move(data);
  return t;
}

KernelMatrix reshape_kernel(const KernelTensor& t) {
  std::uint64_t n = checked_element_count(t.out_channels, t.in_channels,
                                          t.kernel_h, t.kernel_w);
  if (t.data.size() != n)
    fail(ErrorCode::SizeMismatch, "tensor data length does not match dims");
  std::uint64_t d =
      n / t.out_channels;  // exact: d = in_channels * kernel_h * kernel_w
  KernelMatrix m;
  m.source = t.name;
  m.values = Eigen::Map<const RowMatrix>(
      t.data.data(), static_cast<Eigen::Index>(t.out_channels),
      static_cast<Eigen::Index>(d));
  return m;
}

KernelTensor unreshape_kernel(const KernelMatrix& m, std::uint32_t in_channels,
                              std::uint32_t kernel_h, std::uint32_t kernel_w,
                              std::string name) {
  std::uint64_t d = std::uint64_t(in_channels) * kernel_h * kernel_w;
  if (d != static_cast<std::uint64_t>(m.cols()))
    fail(ErrorCode::SizeMismatch,
         "matrix has " + std::to_string(m.cols()) +
             " columns, factors give " + std::to_string(d));
  std::vector<double> data(m.values.data(), m.values.data() + m.values.size());
  return make_tensor(name.empty() ? m.source : std::move(name),
                     static_cast<std::uint32_t>(m.rows()), in_channels,
                     kernel_h, kernel_w, std::move(data));
}

std::vector<std::uint8_t> save_tensor(const KernelTensor& t, Dtype dtype) {
  std::uint64_t n = checked_element_count(t.out_channels, t.in_channels,
                                          t.kernel_h, t.kernel_w);
  if (t.data.size() != n)
    fail(ErrorCode::SizeMismatch, "tensor data length does not match dims");

  std::vector<std::uint8_t> out;
  std::size_t value_size = dtype == Dtype::Float32 ? 4 : 8;
  out.reserve(kHeaderSize + n * value_size);
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(4);  // ndim
  out.push_back(0);  // reserved
  put_u32(out, t.out_channels);
  put_u32(out, t.in_channels);
  put_u32(out, t.kernel_h);
  put_u32(out, t.kernel_w);

  if (dtype == Dtype::Float32) {
    for (double v : t.data) {
      float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  } else {
    for (double v : t.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      put_u64(out, bits);
    }
  }
  return out;
}

KernelTensor load_tensor(std::span<const std::uint8_t> bytes,
                         std::string name) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorCode::BadMagic, "KTNSR: bad magic");
  if (bytes.size() < kHeaderSize)
    fail(ErrorCode::Truncated, "KTNSR: container shorter than header");

  std::uint8_t version = bytes[4];
  std::uint8_t dtype_code = bytes[5];
  std::uint8_t ndim = bytes[6];
  std::uint8_t reserved = bytes[7];
  if (version != kVersion)
    fail(ErrorCode::BadVersion,
         "KTNSR: unsupported version " + std::to_string(version));
  if (dtype_code != 1 && dtype_code != 2)
    fail(ErrorCode::BadDtype,
         "KTNSR: unsupported dtype code " + std::to_string(dtype_code));
  if (ndim != 4)
    fail(ErrorCode::SizeMismatch,
         "KTNSR: expected 4 dimensions, found " + std::to_string(ndim));
  if (reserved != 0)
    fail(ErrorCode::Parse, "KTNSR: reserved header byte must be zero");

  std::uint32_t o = get_u32(bytes.data() + 8);
  std::uint32_t i = get_u32(bytes.data() + 12);
  std::uint32_t kh = get_u32(bytes.data() + 16);
  std::uint32_t kw = get_u32(bytes.data() + 20);
  std::uint64_t n = checked_element_count(o, i, kh, kw);

  std::size_t value_size = dtype_code == 1 ? 4 : 8;
  std::uint64_t payload = n * value_size;
  if (bytes.size() < kHeaderSize + payload)
    fail(ErrorCode::Truncated, "KTNSR: truncated payload, expected " +
                                   std::to_string(payload) + " bytes");
  if (bytes.size() > kHeaderSize + payload)
    fail(ErrorCode::SizeMismatch,
         "KTNSR: payload length does not match dimensions");

  std::vector<double> data(n);
  const std::uint8_t* p = bytes.data() + kHeaderSize;
  if (dtype_code == 1) {
    for (std::uint64_t j = 0; j < n; ++j) {
      std::uint32_t bits = get_u32(p + 4 * j);
      float f;
      std::memcpy(&f, &bits, 4);
      data[j] = static_cast<double>(f);
    }
  } else {
    for (std::uint64_t j = 0; j < n; ++j) {
      std::uint64_t bits = get_u64(p + 8 * j);
      double v;
      std::memcpy(&v, &bits, 8);
      data[j] = v;
    }
  }
  return make_tensor(std::move(name), o, i, kh, kw, std::move(data));
}

void save_tensor_file(const KernelTensor& t, const std::filesystem::path& path,
                      Dtype dtype) {
  auto bytes = save_tensor(t, dtype);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for write");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

KernelTensor load_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return load_tensor(bytes, path.stem().string());
}

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Stem: return "stem";
    case LayerKind::Conv: return "conv";
    case LayerKind::Downsample: return "downsample";
  }
  return "conv";
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "stem") return LayerKind::Stem;
  if (name == "conv") return LayerKind::Conv;
  if (name == "downsample") return LayerKind::Downsample;
  fail(ErrorCode::Validation, "unknown layer kind '" + name + "'");
}

std::vector<LayerDescriptor> load_architecture(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("architecture JSON: ") + e.what());
  }
  if (!doc.is_array())
    fail(ErrorCode::Parse, "architecture JSON must be an array of layers");

  std::vector<LayerDescriptor> layers;
  std::set<std::string> names;
  for (const auto& item : doc) {
    if (!item.is_object())
      fail(ErrorCode::Parse, "architecture entries must be objects");
    LayerDescriptor l;
    try {
      l.name = item.at("name").get<std::string>();
      l.out_channels = item.at("o").get<std::uint32_t>();
      l.in_channels = item.at("i").get<std::uint32_t>();
      l.kernel_h = item.at("kh").get<std::uint32_t>();
      l.kernel_w = item.at("kw").get<std::uint32_t>();
      l.group = item.at("group").get<std::string>();
      l.module_index = item.at("module_index").get<std::uint32_t>();
      l.kind = layer_kind_from_name(item.at("kind").get<std::string>());
    } catch (const Error&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Parse, std::string("architecture JSON: ") + e.what());
    }
    if (l.name.empty())
      fail(ErrorCode::Validation, "layer name must be non-empty");
    checked_element_count(l.out_channels, l.in_channels, l.kernel_h,
                          l.kernel_w);
    if (!names.insert(l.name).second)
      fail(ErrorCode::Validation, "duplicate layer name '" + l.name + "'");
    layers.push_back(std::move(l));
  }

  // module_index values within a group must be unique and contiguous from 0
  std::map<std::string, std::set<std::uint32_t>> groups;
  for (const auto& l : layers) {
    if (!groups[l.group].insert(l.module_index).second)
      fail(ErrorCode::Validation, "group '" + l.group +
                                      "' repeats module_index " +
                                      std::to_string(l.module_index));
  }
  for (const auto& [group, indices] : groups) {
    std::uint32_t expect = 0;
    for (std::uint32_t idx : indices) {
      if (idx != expect)
        fail(ErrorCode::Validation,
             "group '" + group + "' module indices are not contiguous from 0");
      ++expect;
    }
  }
  return layers;
}

std::vector<LayerDescriptor> load_architecture_file(
    const std::filesystem::path& path) {
  return load_architecture(read_text_file(path));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for write");
  out << text;
  if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace korth
