#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace korth {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A convolution layer's weights as a 4-D block in row-major
// (out_channels, in_channels, kernel_h, kernel_w) order.
struct KernelTensor {
  std::string name;
  std::uint32_t out_channels = 0;
  std::uint32_t in_channels = 0;
  std::uint32_t kernel_h = 0;
  std::uint32_t kernel_w = 0;
  std::vector<double> data;

  std::uint64_t element_count() const {
    return static_cast<std::uint64_t>(out_channels) * in_channels * kernel_h *
           kernel_w;
  }
};

// The same weights flattened to one row per filter: o rows by
// d = in_channels * kernel_h * kernel_w columns. Row j is filter j; no
// operation reorders rows.
struct KernelMatrix {
  RowMatrix values;
  std::string source;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

// Validates dimensions, data length, and finiteness.
KernelTensor make_tensor(std::string name, std::uint32_t out_channels,
                         std::uint32_t in_channels, std::uint32_t kernel_h,
                         std::uint32_t kernel_w, std::vector<double> data);

// Row-major flattening with (in_channels, kernel_h, kernel_w) innermost-last.
// reshape followed by unreshape reproduces the tensor bit-exactly.
KernelMatrix reshape_kernel(const KernelTensor& t);
KernelTensor unreshape_kernel(const KernelMatrix& m, std::uint32_t in_channels,
                              std::uint32_t kernel_h, std::uint32_t kernel_w,
                              std::string name = {});

enum class Dtype : std::uint8_t { Float32 = 1, Float64 = 2 };

// KTNSR container, little-endian: magic "KTSR", version u8 = 1, dtype u8,
// ndim u8 = 4, reserved u8 = 0, dims 4 x u32, payload row-major.
// Float32 payloads are widened to double on load.
std::vector<std::uint8_t> save_tensor(const KernelTensor& t,
                                      Dtype dtype = Dtype::Float64);
KernelTensor load_tensor(std::span<const std::uint8_t> bytes,
                         std::string name = {});
void save_tensor_file(const KernelTensor& t, const std::filesystem::path& path,
                      Dtype dtype = Dtype::Float64);
KernelTensor load_tensor_file(const std::filesystem::path& path);

enum class LayerKind { Stem, Conv, Downsample };

const char* layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerDescriptor {
  std::string name;
  std::uint32_t out_channels = 0;
  std::uint32_t in_channels = 0;
  std::uint32_t kernel_h = 1;
  std::uint32_t kernel_w = 1;
  std::string group;
  std::uint32_t module_index = 0;
  LayerKind kind = LayerKind::Conv;

  std::uint32_t background_dim() const {
    return in_channels * kernel_h * kernel_w;
  }
};

// Parses the architecture JSON: an array of
// {name, o, i, kh, kw, group, module_index, kind}. Rejects duplicate names,
// non-positive dimensions, and module indices that are not contiguous from 0
// within their group.
std::vector<LayerDescriptor> load_architecture(const std::string& json_text);
std::vector<LayerDescriptor> load_architecture_file(
    const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path,
                     const std::string& text);

}  // namespace korth
