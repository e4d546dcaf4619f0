#include "voxelseg/vnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <map>

#include "json.hpp"
#include "voxelseg/error.hpp"
#include "voxelseg/nifti_io.hpp"

namespace voxelseg::vnet {

using ad::Tensor;
using ad::Triple;
using nlohmann::json;

namespace {

constexpr double kInitialSlope = 0.25;
constexpr char kMagic[4] = {'V', 'N', 'C', 'K'};

// Fills a parameter given its shape and fan-in.
using Init = std::function<std::vector<double>(const ad::Shape&, std::size_t)>;

Tensor param(const ad::Shape& shape, std::size_t fan_in, const Init& init) {
  return Tensor(shape, init(shape, fan_in), true);
}

Conv make_conv(std::size_t out, std::size_t in, const Triple& k, const Init& init) {
  const std::size_t taps = k[0] * k[1] * k[2];
  return {param({out, in, k[0], k[1], k[2]}, in * taps, init), Tensor::zeros({out}, true)};
}

// Transposed conv weights are [in, out, k...]; with stride == kernel each
// output voxel sees exactly one tap per input channel.
Conv make_up(std::size_t in, std::size_t out, const Init& init) {
  return {param({in, out, 2, 2, 2}, in, init), Tensor::zeros({out}, true)};
}

Tensor make_slope() { return Tensor::full({1}, kInitialSlope, true); }

Triple same_padding(const Triple& k) { return {k[0] / 2, k[1] / 2, k[2] / 2}; }

}  // namespace

void VNetConfig::validate() const {
  if (stage_channels.size() < 2) fail(ErrorCode::InvalidConfig, "a VNet needs at least 2 stages");
  if (in_channels == 0) fail(ErrorCode::InvalidConfig, "in_channels must be positive");
  if (convs_per_stage == 0) fail(ErrorCode::InvalidConfig, "convs_per_stage must be positive");
  for (std::size_t c : stage_channels)
    if (c == 0) fail(ErrorCode::InvalidConfig, "stage channel counts must be positive");
  for (std::size_t k : kernel)
    if (k == 0 || k % 2 == 0) fail(ErrorCode::InvalidConfig, "kernel extents must be odd");
  if (stage_channels.size() > 16) fail(ErrorCode::InvalidConfig, "too many stages");
}

namespace {

void build_with(const VNetConfig& config, const Init& init, std::vector<EncoderStage>& enc,
                 std::vector<DecoderStage>& dec, Conv& head) {
  const auto& ch = config.stage_channels;
  const std::size_t S = ch.size();
  const bool prelu = config.nonlinearity == Nonlinearity::PReLU;
  enc.assign(S, {});
  for (std::size_t s = 0; s < S; ++s) {
    EncoderStage& st = enc[s];
    const std::size_t in = s == 0 ? config.in_channels : ch[s];
    for (std::size_t i = 0; i < config.convs_per_stage; ++i) {
      st.convs.push_back(make_conv(ch[s], i == 0 ? in : ch[s], config.kernel, init));
      if (prelu) st.slopes.push_back(make_slope());
    }
    if (in != ch[s]) {
      st.has_projection = true;
      st.projection = make_conv(ch[s], in, {1, 1, 1}, init);
    }
    if (s + 1 < S) {
      st.has_down = true;
      st.down = make_conv(ch[s + 1], ch[s], {2, 2, 2}, init);
      if (prelu) st.down_slope = make_slope();
    }
  }
  dec.assign(S - 1, {});
  for (std::size_t s = S - 1; s-- > 0;) {
    DecoderStage& st = dec[s];
    st.up = make_up(ch[s + 1], ch[s], init);
    if (prelu) st.up_slope = make_slope();
    for (std::size_t i = 0; i < config.convs_per_stage; ++i) {
      st.convs.push_back(make_conv(ch[s], i == 0 ? 2 * ch[s] : ch[s], config.kernel, init));
      if (prelu) st.slopes.push_back(make_slope());
    }
  }
  head = make_conv(1, ch[0], {1, 1, 1}, init);
}

}  // namespace

Model Model::build(const VNetConfig& config, RngStream& rng) {
  config.validate();
  Model m;
  m.config_ = config;
  Init gaussian = [&rng](const ad::Shape& shape, std::size_t fan_in) {
    std::vector<double> w(ad::element_count(shape));
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : w) v = scale * rng.normal();
    return w;
  };
  build_with(config, gaussian, m.encoder_, m.decoder_, m.head_);
  return m;
}

Tensor Model::act(const Tensor& x, const Tensor& slope) const {
  return config_.nonlinearity == Nonlinearity::PReLU ? ad::prelu(x, slope) : ad::relu(x);
}

namespace {
const Tensor& slope_at(const std::vector<Tensor>& slopes, std::size_t i) {
  static const Tensor none;
  return i < slopes.size() ? slopes[i] : none;
}
}  // namespace

Tensor Model::run_encoder_stage(const EncoderStage& st, const Tensor& x) const {
  const Triple one{1, 1, 1};
  const Triple pad = same_padding(config_.kernel);
  Tensor h = x;
  const std::size_t n = st.convs.size();
  for (std::size_t i = 0; i < n; ++i) {
    h = ad::conv3d(h, st.convs[i].weight, st.convs[i].bias, one, pad);
    h = act(h, slope_at(st.slopes, i));
  }
  Tensor skip = st.has_projection ? ad::conv3d(x, st.projection.weight, st.projection.bias, one, {0, 0, 0}) : x;
  return ad::add(skip, h);
}

Tensor Model::encoder_stage_output(std::size_t s, const Tensor& stage_input) const {
  return run_encoder_stage(encoder_.at(s), stage_input);
}

Tensor Model::logits(const Tensor& x) const {
  if (x.shape().size() != 5 || x.dim(1) != config_.in_channels)
    fail(ErrorCode::ShapeMismatch, "model input must be [N, in_channels, D, H, W]");
  const std::size_t div = config_.divisor();
  for (std::size_t a = 2; a < 5; ++a)
    if (x.dim(a) % div != 0)
      fail(ErrorCode::ShapeMismatch, "spatial extents must be multiples of " + std::to_string(div));

  const Triple one{1, 1, 1};
  const Triple pad = same_padding(config_.kernel);
  std::vector<Tensor> skips;
  Tensor h = x;
  for (const EncoderStage& st : encoder_) {
    h = run_encoder_stage(st, h);
    skips.push_back(h);
    if (st.has_down) h = act(ad::conv3d_down(h, st.down.weight, st.down.bias), st.down_slope);
  }
  for (std::size_t s = decoder_.size(); s-- > 0;) {
    const DecoderStage& st = decoder_[s];
    Tensor u = act(ad::conv_transpose3d(h, st.up.weight, st.up.bias), st.up_slope);
    Tensor c = ad::concat_channels(u, skips[s]);
    for (std::size_t i = 0; i < st.convs.size(); ++i) {
      c = ad::conv3d(c, st.convs[i].weight, st.convs[i].bias, one, pad);
      c = act(c, slope_at(st.slopes, i));
    }
    h = ad::add(u, c);
  }
  return ad::conv3d(h, head_.weight, head_.bias, one, {0, 0, 0});
}

Tensor Model::forward(const Tensor& x) const { return ad::sigmoid(logits(x)); }

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out;
  auto conv = [&out](const std::string& prefix, const Conv& c) {
    out.push_back({prefix + ".weight", c.weight});
    out.push_back({prefix + ".bias", c.bias});
  };
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    const EncoderStage& st = encoder_[s];
    const std::string p = "enc" + std::to_string(s);
    for (std::size_t i = 0; i < st.convs.size(); ++i) {
      conv(p + ".conv" + std::to_string(i), st.convs[i]);
      if (i < st.slopes.size()) out.push_back({p + ".act" + std::to_string(i) + ".slope", st.slopes[i]});
    }
    if (st.has_projection) conv(p + ".proj", st.projection);
    if (st.has_down) {
      conv(p + ".down", st.down);
      if (st.down_slope.defined()) out.push_back({p + ".down_act.slope", st.down_slope});
    }
  }
  for (std::size_t s = decoder_.size(); s-- > 0;) {
    const DecoderStage& st = decoder_[s];
    const std::string p = "dec" + std::to_string(s);
    conv(p + ".up", st.up);
    if (st.up_slope.defined()) out.push_back({p + ".up_act.slope", st.up_slope});
    for (std::size_t i = 0; i < st.convs.size(); ++i) {
      conv(p + ".conv" + std::to_string(i), st.convs[i]);
      if (i < st.slopes.size()) out.push_back({p + ".act" + std::to_string(i) + ".slope", st.slopes[i]});
    }
  }
  conv("head", head_);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

// ---- config JSON ----

namespace {

json config_json(const VNetConfig& c) {
  return {{"in_channels", c.in_channels},
          {"stage_channels", c.stage_channels},
          {"convs_per_stage", c.convs_per_stage},
          {"kernel", c.kernel},
          {"nonlinearity", c.nonlinearity == Nonlinearity::PReLU ? "prelu" : "relu"}};
}

VNetConfig config_of(const json& j) {
  if (!j.is_object()) fail(ErrorCode::InvalidConfig, "model config must be a JSON object");
  VNetConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "in_channels") c.in_channels = value.get<std::size_t>();
      else if (key == "stage_channels") c.stage_channels = value.get<std::vector<std::size_t>>();
      else if (key == "convs_per_stage") c.convs_per_stage = value.get<std::size_t>();
      else if (key == "kernel") {
        if (value.is_number_unsigned()) {
          const auto k = value.get<std::size_t>();
          c.kernel = {k, k, k};
        } else {
          c.kernel = value.get<Triple>();
        }
      } else if (key == "nonlinearity") {
        const auto name = value.get<std::string>();
        if (name == "prelu") c.nonlinearity = Nonlinearity::PReLU;
        else if (name == "relu") c.nonlinearity = Nonlinearity::ReLU;
        else fail(ErrorCode::InvalidConfig, "unknown nonlinearity '" + name + "'");
      } else if (key == "output") {
        if (value.get<std::string>() != "sigmoid") fail(ErrorCode::InvalidConfig, "only sigmoid output is supported");
      } else {
        fail(ErrorCode::InvalidConfig, "unknown model key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint64_t get_le(const std::uint8_t* p, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::string config_to_json(const VNetConfig& config) { return config_json(config).dump(); }

VNetConfig config_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::InvalidConfig, "model config is not valid JSON");
  return config_of(j);
}

// ---- checkpoint ----
// "VNCK" | u32 version | u64 manifest bytes | manifest JSON | f64 blobs.
// Tensor offsets in the manifest are relative to the start of the blob region.

std::vector<std::uint8_t> save(const Model& model) {
  const auto params = model.parameters();
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    const std::uint64_t length = p.tensor.size() * sizeof(double);
    tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"dtype", "f64"}, {"offset", offset}, {"length", length}});
    offset += length;
  }
  const std::string manifest = json{{"config", config_json(model.config())}, {"tensors", tensors}}.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, manifest.size());
  out.insert(out.end(), manifest.begin(), manifest.end());
  out.reserve(out.size() + offset);
  for (const auto& p : params)
    for (double v : p.tensor.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Model load(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorCode::BadMagic, "not a VNCK checkpoint");
  if (bytes.size() < 16) fail(ErrorCode::ManifestCorrupt, "truncated checkpoint header");
  const auto version = static_cast<std::uint32_t>(get_le(bytes.data() + 4, 4));
  if (version != kCheckpointVersion)
    fail(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                         std::to_string(kCheckpointVersion));
  const std::uint64_t manifest_len = get_le(bytes.data() + 8, 8);
  if (manifest_len > bytes.size() - 16) fail(ErrorCode::ManifestCorrupt, "manifest runs past end of file");
  const std::size_t blob_start = 16 + manifest_len;
  const std::size_t blob_size = bytes.size() - blob_start;

  json manifest = json::parse(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(blob_start), nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object() || !manifest.contains("config") || !manifest.contains("tensors") ||
      !manifest["tensors"].is_array())
    fail(ErrorCode::ManifestCorrupt, "manifest is not a valid checkpoint description");

  VNetConfig config;
  try {
    config = config_of(manifest["config"]);
  } catch (const Error& e) {
    fail(ErrorCode::ManifestCorrupt, std::string("bad model config: ") + e.what());
  }

  Model m;
  m.config_ = config;
  Init zeros = [](const ad::Shape& shape, std::size_t) { return std::vector<double>(ad::element_count(shape), 0.0); };
  build_with(config, zeros, m.encoder_, m.decoder_, m.head_);

  std::map<std::string, Tensor> by_name;
  for (auto& p : m.parameters()) by_name.emplace(p.name, p.tensor);

  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  try {
    for (const json& t : manifest["tensors"]) {
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<ad::Shape>();
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto length = t.at("length").get<std::uint64_t>();
      if (t.at("dtype").get<std::string>() != "f64") fail(ErrorCode::ManifestCorrupt, name + ": dtype must be f64");
      auto it = by_name.find(name);
      if (it == by_name.end()) fail(ErrorCode::ManifestCorrupt, "unexpected or duplicate tensor '" + name + "'");
      Tensor dst = it->second;
      by_name.erase(it);
      if (shape != dst.shape()) fail(ErrorCode::ManifestCorrupt, name + ": shape does not match config");
      if (length != dst.size() * sizeof(double)) fail(ErrorCode::ManifestCorrupt, name + ": length does not match shape");
      if (offset > blob_size || length > blob_size - offset) fail(ErrorCode::ManifestCorrupt, name + ": blob out of bounds");
      ranges.emplace_back(offset, offset + length);
      auto out = dst.mutable_data();
      const std::uint8_t* src = bytes.data() + blob_start + offset;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<double>(get_le(src + 8 * i, 8));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::ManifestCorrupt, e.what());
  }
  if (!by_name.empty()) fail(ErrorCode::ManifestCorrupt, "missing tensor '" + by_name.begin()->first + "'");
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i)
    if (ranges[i].first < ranges[i - 1].second) fail(ErrorCode::ManifestCorrupt, "overlapping tensor blobs");
  return m;
}

void save_file(const Model& model, const std::string& path) { nifti::write_file(path, save(model)); }

Model load_file(const std::string& path) { return load(nifti::read_file(path)); }

}  // namespace voxelseg::vnet
