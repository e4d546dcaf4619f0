#include "voxelseg/trainer.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <thread>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include "voxelseg/error.hpp"

namespace voxelseg::trainer {

using ad::Tensor;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail(ErrorCode::InvalidParams, "learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorCode::InvalidParams, "momentum must lie in [0, 1)");
  if (batch_size < 1) fail(ErrorCode::InvalidParams, "batch_size must be >= 1");
  if (steps < 1) fail(ErrorCode::InvalidParams, "steps must be >= 1");
  if (threads < 1) fail(ErrorCode::InvalidParams, "threads must be >= 1");
  patch.validate();
  tversky.validate();
  for (int a = 0; a < 3; ++a)
    if (overlap[a] >= patch.size[a]) fail(ErrorCode::InvalidOverlap, "overlap must be smaller than the patch");
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
              double momentum) {
  if (grads.size() != params.size() || velocity.size() != params.size())
    fail(ErrorCode::ShapeMismatch, "sgd_step: parameter, gradient and velocity sizes differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

Tensor overlap_loss(const Tensor& pred, std::span<const double> truth, overlap::LossKind kind,
                    const overlap::TverskyParams& params) {
  if (truth.size() != pred.size()) fail(ErrorCode::ShapeMismatch, "overlap_loss: prediction and target sizes differ");
  auto lg = std::make_shared<overlap::LossAndGrad>(overlap::soft_loss_grad(pred.data(), truth, kind, params));
  return ad::make_result("overlap_loss", {}, {lg->loss}, {pred},
                         [lg](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           for (std::size_t i = 0; i < lg->grad.size(); ++i) (*gi[0])[i] += g[0] * lg->grad[i];
                         });
}

Tensor volume_to_tensor(const Volume& v) {
  return Tensor({1, 1, v.extents[2], v.extents[1], v.extents[0]}, v.data);
}

namespace {

// Weights and activations drift into the subnormal range late in training and
// each subnormal operation costs ~100 cycles on x86. Flushing them to zero
// (FTZ + DAZ) for the duration of a training or inference call keeps step time
// flat; results stay deterministic.
class FlushDenormals {
 public:
  FlushDenormals() {
#if defined(__SSE__)
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | 0x8040u);
#endif
  }
  ~FlushDenormals() {
#if defined(__SSE__)
    _mm_setcsr(saved_);
#endif
  }
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
  unsigned saved_ = 0;
};

std::string format_line(const char* kind, std::size_t step, const char* metric, double value) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s %zu %s %.9f", kind, step, metric, value);
  return buf;
}

}  // namespace

TrainLog train(vnet::Model& model, const std::vector<LabeledVolume>& train_set,
               const std::vector<LabeledVolume>& eval_set, const TrainConfig& config, const LogSink& sink) {
  config.validate();
  const FlushDenormals flush;
  if (train_set.empty()) fail(ErrorCode::EmptyDataset, "no training volumes");
  for (const auto& s : train_set)
    if (s.image.extents != s.label.extents) fail(ErrorCode::ShapeMismatch, "image and label extents differ");

  const auto params = model.parameters();
  std::vector<std::vector<double>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.tensor.size(), 0.0);

  RngStream sampler = RngStream(config.seed).split(1);
  const Extents& P = config.patch.size;
  const std::size_t patch_voxels = voxel_count(P);

  TrainLog log;
  auto emit = [&](std::string line) {
    if (sink) sink(line);
    log.lines.push_back(std::move(line));
  };

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const std::size_t B = config.batch_size;
    std::vector<double> images(B * patch_voxels), labels(B * patch_voxels);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& src = train_set[sampler.uniform_index(train_set.size())];
      auto patch = patching::sample_training_patches(src.image, src.label, config.patch, 1, sampler);
      std::copy(patch[0].image.data.begin(), patch[0].image.data.end(), images.begin() + b * patch_voxels);
      std::copy(patch[0].label.data.begin(), patch[0].label.data.end(), labels.begin() + b * patch_voxels);
    }
    Tensor x({B, 1, P[2], P[1], P[0]}, std::move(images));

    model.zero_grad();
    const Tensor pred = model.forward(x);
    for (double v : pred.data())
      if (!std::isfinite(v)) fail(ErrorCode::NonFiniteParameter, "model output became non-finite at step " + std::to_string(step));
    Tensor loss = overlap_loss(pred, labels, config.loss, config.tversky);
    loss.backward();
    if (!std::isfinite(loss.item())) fail(ErrorCode::NonFiniteParameter, "loss became non-finite at step " + std::to_string(step));

    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor t = params[i].tensor;
      if (!t.has_grad()) continue;
      sgd_step(t.mutable_data(), t.grad(), velocity[i], config.learning_rate, config.momentum);
      for (double v : t.data())
        if (!std::isfinite(v))
          fail(ErrorCode::NonFiniteParameter, params[i].name + " became non-finite at step " + std::to_string(step));
    }
    log.losses.push_back(loss.item());
    emit(format_line("step", step, "loss", loss.item()));

    const bool due = config.eval_every > 0 ? step % config.eval_every == 0 : step == config.steps;
    if (due && !eval_set.empty()) {
      const double d = evaluate(model, eval_set, P, config.overlap, config.window, config.threads);
      log.evals.emplace_back(step, d);
      emit(format_line("eval", step, "dice", d));
    }
  }
  model.zero_grad();
  return log;
}

Grid predict_volume(const vnet::Model& model, const Volume& image, const Extents& patch_size, const Extents& overlap,
                    patching::Window window, std::size_t threads) {
  const patching::TileLayout layout = patching::grid_tiles(image.extents, patch_size, overlap, window);
  const std::size_t n = layout.origins.size();
  std::vector<Grid> tiles(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};

  auto worker = [&] {
    ad::NoGradGuard no_grad;
    const FlushDenormals flush;
    try {
      for (std::size_t t = next++; t < n && !failed; t = next++) {
        const Volume patch = patching::extract_patch(image, layout.origins[t], patch_size, 0.0);
        const Tensor y = model.forward(volume_to_tensor(patch));
        Grid g(patch_size);
        std::copy(y.data().begin(), y.data().end(), g.values.begin());
        tiles[t] = std::move(g);
      }
    } catch (...) {
      if (!failed.exchange(true)) error = std::current_exception();
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return patching::stitch(layout, tiles);
}

Volume threshold(const Grid& probabilities, const Volume& like, double level) {
  if (probabilities.extents != like.extents) fail(ErrorCode::ShapeMismatch, "threshold: extents differ");
  Volume out = like;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = probabilities.values[i] >= level ? 1.0 : 0.0;
  return out;
}

double evaluate(const vnet::Model& model, const std::vector<LabeledVolume>& eval_set, const Extents& patch_size,
                const Extents& overlap, patching::Window window, std::size_t threads) {
  if (eval_set.empty()) fail(ErrorCode::EmptyDataset, "no evaluation volumes");
  double total = 0.0;
  for (const auto& s : eval_set) {
    const Grid prob = predict_volume(model, s.image, patch_size, overlap, window, threads);
    const Volume mask = threshold(prob, s.label);
    total += overlap::dice(overlap::counts(mask.data, s.label.data));
  }
  return total / static_cast<double>(eval_set.size());
}

std::size_t thread_cap_from_env() {
  const char* env = std::getenv("VOXELSEG_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) return 1;
  return static_cast<std::size_t>(std::min<long>(v, 256));
}

}  // namespace voxelseg::trainer
