#include "pipeline_config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "voxelseg/error.hpp"

namespace voxelseg::cli {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  fail(ErrorCode::ConfigInvalid, where + ": " + what);
}

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) bad(where, "expected an object");
}

template <class T>
T get(const json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    bad(where, "wrong type (" + std::string(j.type_name()) + ")");
  }
}

Extents get_dhw(const json& j, const std::string& where) {
  if (j.is_number_unsigned()) {
    const auto n = j.get<std::size_t>();
    return {n, n, n};
  }
  const auto v = get<std::vector<std::size_t>>(j, where);
  if (v.size() != 3) bad(where, "expected 3 values (d,h,w)");
  return {v[2], v[1], v[0]};
}

void parse_normalization(const json& j, normalize::NormalizationSpec& n) {
  require_object(j, "normalization");
  for (const auto& [key, value] : j.items()) {
    const std::string where = "normalization." + key;
    if (key == "mode") {
      const auto m = get<std::string>(value, where);
      if (m == "zscore") n.mode = normalize::Mode::ZScore;
      else if (m == "clip_rescale") n.mode = normalize::Mode::ClipRescale;
      else bad(where, "expected \"zscore\" or \"clip_rescale\"");
    } else if (key == "clip_lo") n.clip_lo = get<double>(value, where);
    else if (key == "clip_hi") n.clip_hi = get<double>(value, where);
    else if (key == "out_lo") n.out_lo = get<double>(value, where);
    else if (key == "out_hi") n.out_hi = get<double>(value, where);
    else bad(where, "unknown key");
  }
}

void parse_patch(const json& j, trainer::TrainConfig& t) {
  require_object(j, "patch");
  for (const auto& [key, value] : j.items()) {
    const std::string where = "patch." + key;
    if (key == "size") t.patch.size = get_dhw(value, where);
    else if (key == "fg_fraction") t.patch.fg_fraction = get<double>(value, where);
    else if (key == "pad_value_image") t.patch.pad_value_image = get<double>(value, where);
    else if (key == "overlap") t.overlap = get_dhw(value, where);
    else if (key == "window") t.window = parse_window(get<std::string>(value, where));
    else bad(where, "unknown key");
  }
}

void parse_train(const json& j, trainer::TrainConfig& t) {
  require_object(j, "train");
  for (const auto& [key, value] : j.items()) {
    const std::string where = "train." + key;
    if (key == "loss") t.loss = parse_loss(get<std::string>(value, where));
    else if (key == "alpha") {
      const double a = get<double>(value, where);
      t.tversky.alpha = a;
      t.tversky.beta = 1.0 - a;
    } else if (key == "epsilon") t.tversky.epsilon = get<double>(value, where);
    else if (key == "learning_rate") t.learning_rate = get<double>(value, where);
    else if (key == "momentum") t.momentum = get<double>(value, where);
    else if (key == "batch_size") t.batch_size = get<std::size_t>(value, where);
    else if (key == "steps") t.steps = get<std::size_t>(value, where);
    else if (key == "seed") t.seed = get<std::uint64_t>(value, where);
    else if (key == "eval_every") t.eval_every = get<std::size_t>(value, where);
    else bad(where, "unknown key");
  }
}

void parse_phantom(const json& j, phantom::PhantomConfig& p) {
  require_object(j, "phantom");
  for (const auto& [key, value] : j.items()) {
    const std::string where = "phantom." + key;
    if (key == "extents") p.extents = get_dhw(value, where);
    else if (key == "n_blobs") p.n_blobs = get<std::size_t>(value, where);
    else if (key == "radius_range") {
      const auto r = get<std::vector<double>>(value, where);
      if (r.size() != 2) bad(where, "expected [lo, hi]");
      p.radius_lo = r[0];
      p.radius_hi = r[1];
    } else if (key == "fg_intensity") p.fg_intensity = get<double>(value, where);
    else if (key == "bg_intensity") p.bg_intensity = get<double>(value, where);
    else if (key == "noise_sigma") p.noise_sigma = get<double>(value, where);
    else if (key == "seed") p.seed = get<std::uint64_t>(value, where);
    else bad(where, "unknown key");
  }
}

void parse_io(const json& j, IoConfig& io) {
  require_object(j, "io");
  for (const auto& [key, value] : j.items()) {
    const std::string where = "io." + key;
    if (key == "train_images") io.train_images = get<std::vector<std::string>>(value, where);
    else if (key == "train_labels") io.train_labels = get<std::vector<std::string>>(value, where);
    else if (key == "eval_images") io.eval_images = get<std::vector<std::string>>(value, where);
    else if (key == "eval_labels") io.eval_labels = get<std::vector<std::string>>(value, where);
    else if (key == "checkpoint") io.checkpoint = get<std::string>(value, where);
    else if (key == "log") io.log = get<std::string>(value, where);
    else bad(where, "unknown key");
  }
}

}  // namespace

PipelineConfig::PipelineConfig() {
  // Tversky runs default to beta = 0.7, weighting missed foreground.
  train.tversky = overlap::TverskyParams::from_alpha(0.3);
}

PipelineConfig parse_pipeline_config(const std::string& json_text) {
  const json j = json::parse(json_text, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::ConfigInvalid, "config is not valid JSON");
  require_object(j, "config");
  PipelineConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "normalization") parse_normalization(value, c.normalization);
    else if (key == "patch") parse_patch(value, c.train);
    else if (key == "model") {
      try {
        c.model = vnet::config_from_json(value.dump());
      } catch (const Error& e) {
        fail(ErrorCode::ConfigInvalid, std::string("model: ") + e.what());
      }
    } else if (key == "train") parse_train(value, c.train);
    else if (key == "phantom") parse_phantom(value, c.phantom);
    else if (key == "io") parse_io(value, c.io);
    else bad(key, "unknown section");
  }
  // Validate the whole document before any work begins.
  try {
    c.train.validate();
    c.phantom.validate();
  } catch (const Error& e) {
    fail(ErrorCode::ConfigInvalid, e.what());
  }
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::FileNotFound, path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pipeline_config(ss.str());
}

Extents parse_dhw(const std::string& text) {
  std::vector<std::size_t> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long n = 0;
    try {
      n = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size()) fail(ErrorCode::ConfigInvalid, "expected d,h,w integers, got '" + text + "'");
    v.push_back(static_cast<std::size_t>(n));
  }
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() != 3) fail(ErrorCode::ConfigInvalid, "expected d,h,w integers, got '" + text + "'");
  return {v[2], v[1], v[0]};
}

std::string format_dhw(const Extents& e) {
  return std::to_string(e[2]) + "," + std::to_string(e[1]) + "," + std::to_string(e[0]);
}

overlap::LossKind parse_loss(const std::string& name) {
  if (name == "jaccard") return overlap::LossKind::Jaccard;
  if (name == "dice") return overlap::LossKind::Dice;
  if (name == "tversky") return overlap::LossKind::Tversky;
  fail(ErrorCode::ConfigInvalid, "loss must be jaccard, dice or tversky, got '" + name + "'");
}

patching::Window parse_window(const std::string& name) {
  if (name == "uniform") return patching::Window::Uniform;
  if (name == "hann") return patching::Window::Hann;
  fail(ErrorCode::ConfigInvalid, "window must be uniform or hann, got '" + name + "'");
}

}  // namespace voxelseg::cli
