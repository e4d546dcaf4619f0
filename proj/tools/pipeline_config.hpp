#pragma once

#include <string>
#include <vector>

#include "voxelseg/normalize.hpp"
#include "voxelseg/phantom.hpp"
#include "voxelseg/trainer.hpp"
#include "voxelseg/vnet.hpp"

namespace voxelseg::cli {

struct IoConfig {
  std::vector<std::string> train_images;
  std::vector<std::string> train_labels;
  std::vector<std::string> eval_images;
  std::vector<std::string> eval_labels;
  std::string checkpoint;
  std::string log;
};

inline normalize::NormalizationSpec zscore_spec() {
  normalize::NormalizationSpec s;
  s.mode = normalize::Mode::ZScore;
  return s;
}

// One JSON document with a section per pipeline stage. Every section and key
// is optional; unknown keys are rejected with ConfigInvalid.
struct PipelineConfig {
  normalize::NormalizationSpec normalization = zscore_spec();
  phantom::PhantomConfig phantom{};
  vnet::VNetConfig model{};
  trainer::TrainConfig train{};
  IoConfig io{};

  PipelineConfig();
};

PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig parse_pipeline_config(const std::string& json_text);

// "n" or "a,b,c". The CLI and JSON give sizes slowest axis first (d,h,w), the
// tensor order; the result is in volume axis order (fastest axis first).
Extents parse_dhw(const std::string& text);
std::string format_dhw(const Extents& e);

overlap::LossKind parse_loss(const std::string& name);
patching::Window parse_window(const std::string& name);

}  // namespace voxelseg::cli
