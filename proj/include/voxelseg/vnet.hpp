#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxelseg/rng.hpp"
#include "voxelseg/tensor.hpp"

namespace voxelseg::vnet {

enum class Nonlinearity { ReLU, PReLU };

struct VNetConfig {
  std::size_t in_channels = 1;
  std::vector<std::size_t> stage_channels{8, 16, 32};
  std::size_t convs_per_stage = 2;
  ad::Triple kernel{3, 3, 3};
  Nonlinearity nonlinearity = Nonlinearity::PReLU;

  // Throws InvalidConfig.
  void validate() const;
  std::size_t stages() const { return stage_channels.size(); }
  // Spatial extents of the input must be multiples of this.
  std::size_t divisor() const { return std::size_t{1} << (stages() - 1); }

  friend bool operator==(const VNetConfig&, const VNetConfig&) = default;
};

struct Conv {
  ad::Tensor weight;
  ad::Tensor bias;
};

struct EncoderStage {
  std::vector<Conv> convs;
  std::vector<ad::Tensor> slopes;  // one per conv; unused for ReLU
  bool has_projection = false;
  Conv projection;                 // 1x1x1, only when input channels differ
  bool has_down = false;
  Conv down;                       // 2x2x2 stride 2 into the next stage
  ad::Tensor down_slope;
};

struct DecoderStage {
  Conv up;  // transposed 2x2x2 stride 2 from the stage below
  ad::Tensor up_slope;
  std::vector<Conv> convs;
  std::vector<ad::Tensor> slopes;
};

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

class Model;
Model load(const std::vector<std::uint8_t>& bytes);

class Model {
 public:
  // Parameters drawn from N(0, 1/fan_in); biases zero, PReLU slopes 0.25.
  static Model build(const VNetConfig& config, RngStream& rng);

  const VNetConfig& config() const { return config_; }

  // x: [N, in_channels, D, H, W] -> [N, 1, D, H, W] probabilities.
  ad::Tensor forward(const ad::Tensor& x) const;
  // Pre-sigmoid output of the same shape.
  ad::Tensor logits(const ad::Tensor& x) const;

  // Fixed order; names are stable and used by the checkpoint format.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  std::vector<EncoderStage>& encoder() { return encoder_; }
  std::vector<DecoderStage>& decoder() { return decoder_; }
  Conv& head() { return head_; }

  // Output of encoder stage s (before downsampling) for input x; used to check
  // the residual structure.
  ad::Tensor encoder_stage_output(std::size_t s, const ad::Tensor& stage_input) const;

 private:
  friend Model load(const std::vector<std::uint8_t>& bytes);

  ad::Tensor act(const ad::Tensor& x, const ad::Tensor& slope) const;
  ad::Tensor run_encoder_stage(const EncoderStage& st, const ad::Tensor& x) const;

  VNetConfig config_;
  std::vector<EncoderStage> encoder_;
  std::vector<DecoderStage> decoder_;  // decoder_[s] produces stage s resolution
  Conv head_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// JSON form of the config, as embedded in checkpoints and pipeline configs.
std::string config_to_json(const VNetConfig& config);
// Throws InvalidConfig on unknown keys or bad values.
VNetConfig config_from_json(const std::string& text);

std::vector<std::uint8_t> save(const Model& model);
// Throws BadMagic, VersionMismatch or ManifestCorrupt.
Model load(const std::vector<std::uint8_t>& bytes);

void save_file(const Model& model, const std::string& path);
Model load_file(const std::string& path);

}  // namespace voxelseg::vnet
