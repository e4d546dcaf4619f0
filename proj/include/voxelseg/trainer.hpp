#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "voxelseg/overlap.hpp"
#include "voxelseg/patching.hpp"
#include "voxelseg/tensor.hpp"
#include "voxelseg/vnet.hpp"

namespace voxelseg::trainer {

struct TrainConfig {
  overlap::LossKind loss = overlap::LossKind::Dice;
  overlap::TverskyParams tversky{};
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 2;
  std::size_t steps = 600;
  patching::PatchSpec patch{};
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // 0: evaluate once, after the last step
  // Inference settings used for held-out evaluation.
  Extents overlap{16, 16, 16};
  patching::Window window = patching::Window::Hann;
  std::size_t threads = 1;

  // Throws InvalidParams.
  void validate() const;
};

struct LabeledVolume {
  Volume image;
  Volume label;
};

// v <- momentum * v + g; p <- p - lr * v. Throws ShapeMismatch.
void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
              double momentum);

// Soft overlap loss of a probability tensor against a binary target of the
// same size, as a differentiable scalar.
ad::Tensor overlap_loss(const ad::Tensor& pred, std::span<const double> truth, overlap::LossKind kind,
                        const overlap::TverskyParams& params = {});

// Patch (axis 0 fastest) <-> [1,1,e2,e1,e0] tensor; the memory layouts coincide.
ad::Tensor volume_to_tensor(const Volume& v);

struct TrainLog {
  std::vector<double> losses;                            // one per step
  std::vector<std::pair<std::size_t, double>> evals;     // (step, mean held-out Dice)
  std::vector<std::string> lines;                        // "step <n> loss <x>" / "eval <n> dice <x>"
};

using LogSink = std::function<void(const std::string&)>;

// Trains in place. Every step draws a fresh batch: a volume index then one
// class-balanced patch from it. Throws EmptyDataset or NonFiniteParameter.
TrainLog train(vnet::Model& model, const std::vector<LabeledVolume>& train_set,
               const std::vector<LabeledVolume>& eval_set, const TrainConfig& config, const LogSink& sink = {});

// Mean hard Dice of thresholded predictions over the set; parameters untouched.
double evaluate(const vnet::Model& model, const std::vector<LabeledVolume>& eval_set, const Extents& patch_size,
                const Extents& overlap, patching::Window window, std::size_t threads);

// Tile, run the model on each tile, and stitch into per-voxel probabilities.
// Tiles run on up to `threads` workers; results do not depend on the count.
Grid predict_volume(const vnet::Model& model, const Volume& image, const Extents& patch_size, const Extents& overlap,
                    patching::Window window, std::size_t threads);

Volume threshold(const Grid& probabilities, const Volume& like, double level = 0.5);

// Worker cap from VOXELSEG_THREADS (default 1; invalid values fall back to 1).
std::size_t thread_cap_from_env();

}  // namespace voxelseg::trainer
