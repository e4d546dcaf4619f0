#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pipeline_config.hpp"
#include "voxelseg/error.hpp"
#include "voxelseg/geometry.hpp"
#include "voxelseg/nifti_io.hpp"
#include "voxelseg/overlap.hpp"
#include "voxelseg/patching.hpp"
#include "voxelseg/phantom.hpp"
#include "voxelseg/rng.hpp"
#include "voxelseg/trainer.hpp"
#include "voxelseg/vnet.hpp"

namespace fs = std::filesystem;
using namespace voxelseg;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitInternal = 1;

struct Shared {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string patch_size;
  std::string overlap;
  std::string loss;
  std::optional<double> alpha;
  std::string window;
};

// Config file first, then explicit flags on top.
cli::PipelineConfig resolve(const Shared& s) {
  cli::PipelineConfig c = s.config_path.empty() ? cli::PipelineConfig{} : cli::load_pipeline_config(s.config_path);
  if (s.seed) {
    c.train.seed = *s.seed;
    c.phantom.seed = *s.seed;
  }
  if (!s.patch_size.empty()) {
    c.train.patch.size = cli::parse_dhw(s.patch_size);
    if (s.overlap.empty()) c.train.overlap = patching::default_overlap(c.train.patch.size);
  }
  if (!s.overlap.empty()) c.train.overlap = cli::parse_dhw(s.overlap);
  if (!s.loss.empty()) c.train.loss = cli::parse_loss(s.loss);
  if (s.alpha) c.train.tversky = overlap::TverskyParams::from_alpha(*s.alpha, c.train.tversky.epsilon);
  if (!s.window.empty()) c.train.window = cli::parse_window(s.window);
  c.train.threads = trainer::thread_cap_from_env();
  return c;
}

std::string require_out(const Shared& s) {
  if (s.out.empty()) throw CLI::RequiredError("--out");
  return s.out;
}

const char* datatype_name(nifti::Datatype dt) {
  switch (dt) {
    case nifti::Datatype::UInt8: return "uint8";
    case nifti::Datatype::Int16: return "int16";
    case nifti::Datatype::Float32: return "float32";
    case nifti::Datatype::Float64: return "float64";
  }
  return "unknown";
}

std::string indexed(const std::string& stem, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu.nii", stem.c_str(), i);
  return buf;
}

std::vector<trainer::LabeledVolume> load_pairs(const std::vector<std::string>& images,
                                               const std::vector<std::string>& labels, const char* what) {
  if (images.size() != labels.size())
    fail(ErrorCode::ConfigInvalid, std::string(what) + ": image and label counts differ");
  std::vector<trainer::LabeledVolume> out;
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back({nifti::load(images[i]), nifti::load(labels[i])});
  return out;
}

void append_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(ErrorCode::IoError, "cannot write " + path);
  for (const auto& l : lines) f << l << '\n';
}

int run_info(const std::string& input) {
  const auto bytes = nifti::read_file(input);
  const Volume v = nifti::read_nifti(bytes);
  const auto sp = v.spacing();
  std::printf("extents=%zux%zux%zu\n", v.extents[0], v.extents[1], v.extents[2]);
  std::printf("spacing=%g,%g,%g\n", sp[0], sp[1], sp[2]);
  std::printf("orientation=%s\n", v.orientation.str().c_str());
  std::printf("datatype=%s\n", datatype_name(nifti::stored_datatype(bytes)));
  std::printf("affine_source=%s\n", v.affine_from_pixdim ? "pixdim" : "sform");
  return 0;
}

int run_phantom(const Shared& s, std::size_t count) {
  const auto c = resolve(s);
  const fs::path dir = require_out(s);
  fs::create_directories(dir);
  for (std::size_t i = 0; i < count; ++i) {
    auto pc = c.phantom;
    pc.seed = c.phantom.seed + i;
    const auto p = phantom::generate(pc);
    const auto img = (dir / indexed("image", i)).string();
    const auto lab = (dir / indexed("label", i)).string();
    nifti::save(p.image, img, nifti::Datatype::Float32);
    nifti::save(p.mask, lab, nifti::Datatype::UInt8);
    std::printf("%s %s seed=%llu\n", img.c_str(), lab.c_str(), static_cast<unsigned long long>(pc.seed));
  }
  return 0;
}

int run_reorient(const Shared& s, const std::string& input, const std::string& target) {
  const auto bytes = nifti::read_file(input);
  const Volume v = nifti::read_nifti(bytes);
  const Volume r = geometry::reorient(v, OrientationCode(target));
  nifti::save(r, require_out(s), nifti::stored_datatype(bytes));
  std::printf("%s -> %s\n", v.orientation.str().c_str(), r.orientation.str().c_str());
  return 0;
}

int run_normalize(const Shared& s, const std::string& input, const std::string& mode) {
  auto c = resolve(s);
  const Volume v = nifti::load(input);
  if (mode == "label") {
    nifti::save(normalize::normalize_label(v), require_out(s), nifti::Datatype::UInt8);
    return 0;
  }
  if (mode == "zscore") c.normalization.mode = normalize::Mode::ZScore;
  if (mode == "clip") c.normalization.mode = normalize::Mode::ClipRescale;
  nifti::save(normalize::apply(v, c.normalization), require_out(s), nifti::Datatype::Float32);
  return 0;
}

int run_sample(const Shared& s, const std::string& image_path, const std::string& label_path, std::size_t n) {
  const auto c = resolve(s);
  const fs::path dir = require_out(s);
  const Volume image = nifti::load(image_path);
  const Volume label = nifti::load(label_path);
  RngStream rng(c.train.seed);
  const auto patches = patching::sample_training_patches(image, label, c.train.patch, n, rng);
  fs::create_directories(dir);
  json entries = json::array();
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& p = patches[i];
    const auto img = indexed("patch_image", i);
    const auto lab = indexed("patch_label", i);
    nifti::save(p.image, dir / img, nifti::Datatype::Float32);
    nifti::save(p.label, dir / lab, nifti::Datatype::UInt8);
    entries.push_back({{"index", i},
                       {"image", img},
                       {"label", lab},
                       {"center", p.center},
                       {"origin", p.origin},
                       {"foreground_centered", p.foreground_centered}});
  }
  const json manifest = {{"source_image", image_path},
                         {"source_label", label_path},
                         {"seed", c.train.seed},
                         {"rng", RngStream::kAlgorithm},
                         {"patch_size_dhw", cli::format_dhw(c.train.patch.size)},
                         {"fg_fraction", c.train.patch.fg_fraction},
                         {"index_order", "ijk"},
                         {"patches", entries}};
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) fail(ErrorCode::IoError, "cannot write manifest");
  f << manifest.dump(2) << '\n';
  std::printf("wrote %zu patches to %s\n", patches.size(), dir.string().c_str());
  return 0;
}

struct TrainArgs {
  std::vector<std::string> images, labels, eval_images, eval_labels;
  std::string log;
  std::optional<std::size_t> steps;
};

int run_train(const Shared& s, const TrainArgs& a) {
  auto c = resolve(s);
  if (!a.images.empty()) c.io.train_images = a.images;
  if (!a.labels.empty()) c.io.train_labels = a.labels;
  if (!a.eval_images.empty()) c.io.eval_images = a.eval_images;
  if (!a.eval_labels.empty()) c.io.eval_labels = a.eval_labels;
  if (a.steps) c.train.steps = *a.steps;
  const std::string ckpt = s.out.empty() ? c.io.checkpoint : s.out;
  if (ckpt.empty()) throw CLI::RequiredError("--out");
  std::string log_path = a.log.empty() ? c.io.log : a.log;
  if (log_path.empty()) log_path = ckpt + ".log";

  c.train.validate();
  const auto train_set = load_pairs(c.io.train_images, c.io.train_labels, "training set");
  const auto eval_set = load_pairs(c.io.eval_images, c.io.eval_labels, "evaluation set");
  if (train_set.empty()) fail(ErrorCode::EmptyDataset, "no training volumes given");

  RngStream init = RngStream(c.train.seed).split(0);
  vnet::Model model = vnet::Model::build(c.model, init);
  const auto log = trainer::train(model, train_set, eval_set, c.train, [](const std::string& line) {
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
  });
  vnet::save_file(model, ckpt);
  append_lines(log_path, log.lines);
  return 0;
}

int run_predict(const Shared& s, const std::string& input, const std::string& model_path, std::string mask_out) {
  const auto c = resolve(s);
  const std::string out = require_out(s);
  if (mask_out.empty()) {
    const fs::path p(out);
    mask_out = (p.parent_path() / (p.stem().string() + "_mask.nii")).string();
  }
  const vnet::Model model = vnet::load_file(model_path);
  const Volume image = nifti::load(input);
  const Grid prob = trainer::predict_volume(model, image, c.train.patch.size, c.train.overlap, c.train.window,
                                            c.train.threads);
  Volume pv = image;
  pv.data = prob.values;
  nifti::save(pv, out, nifti::Datatype::Float32);
  nifti::save(trainer::threshold(prob, image), mask_out, nifti::Datatype::UInt8);
  std::printf("%s %s\n", out.c_str(), mask_out.c_str());
  return 0;
}

int run_evaluate(const Shared& s, const std::string& pred_path, const std::string& truth_path) {
  const auto c = resolve(s);
  const Volume pred = nifti::load(pred_path);
  const Volume truth = nifti::load(truth_path);
  if (pred.extents != truth.extents) fail(ErrorCode::ShapeMismatch, "prediction and truth extents differ");
  const auto k = overlap::counts(pred.data, truth.data);
  std::printf("jaccard=%.6f\n", overlap::jaccard(k));
  std::printf("dice=%.6f\n", overlap::dice(k));
  std::printf("tversky=%.6f\n", overlap::tversky(k, c.train.tversky));
  return 0;
}

std::string exit_code_footer() {
  std::string f = "Exit codes:\n";
  auto row = [&](int code, std::string_view name) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "  %3d  %s\n", code, std::string(name).c_str());
    f += buf;
  };
  row(0, "success");
  row(kExitInternal, "unexpected internal error");
  row(kExitUsage, "usage error (bad flag, missing argument)");
  for (int i = 0; i < kErrorCodeCount; ++i) {
    const auto code = static_cast<ErrorCode>(i);
    row(exit_code(code), error_name(code));
  }
  f += "\nEnvironment:\n  VOXELSEG_THREADS  worker threads for tiled inference (default 1)\n";
  return f;
}

CLI::Validator dhw_validator() {
  return CLI::Validator(
      [](std::string& v) -> std::string {
        try {
          cli::parse_dhw(v);
        } catch (const Error&) {
          return "expected n or d,h,w positive integers";
        }
        return {};
      },
      "D,H,W");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric segmentation toolkit.", "voxelseg"};
  app.fallthrough();
  app.require_subcommand(1);
  app.footer(exit_code_footer());
  app.get_formatter()->column_width(34);

  Shared s;
  app.add_option("--config", s.config_path, "pipeline config (JSON); flags override its values");
  app.add_option("--seed", s.seed, "RNG seed for phantoms, sampling and initialization");
  app.add_option("--out", s.out, "output file or directory");
  app.add_option("--patch-size", s.patch_size, "patch extents, slowest axis first (n or d,h,w)")->check(dhw_validator());
  app.add_option("--overlap", s.overlap, "tile overlap for inference (n or d,h,w); default half the patch")
      ->check(dhw_validator());
  app.add_option("--loss", s.loss, "training loss")->check(CLI::IsMember({"jaccard", "dice", "tversky"}));
  app.add_option("--alpha", s.alpha, "Tversky false-positive weight; beta = 1 - alpha")->check(CLI::Range(0.0, 1.0));
  app.add_option("--window", s.window, "tile blending window")->check(CLI::IsMember({"uniform", "hann"}));

  std::string in1, in2, target = "RAS", norm_mode = "config", model_path, mask_out;
  std::size_t count = 1, n_patches = 8;
  TrainArgs targs;

  auto* info = app.add_subcommand("info", "print extents, spacing, orientation and datatype");
  info->add_option("input", in1, "NIfTI file")->required();

  auto* ph = app.add_subcommand("phantom", "write synthetic image/label pairs into --out");
  ph->add_option("--count", count, "number of phantoms; seeds are seed, seed+1, ...")->capture_default_str();

  auto* ro = app.add_subcommand("reorient", "resample axes to a target orientation code");
  ro->add_option("input", in1, "NIfTI file")->required();
  ro->add_option("--target", target, "three-letter orientation code")->capture_default_str();

  auto* no = app.add_subcommand("normalize", "normalize intensities, or binarize a label");
  no->add_option("input", in1, "NIfTI file")->required();
  no->add_option("--mode", norm_mode, "zscore, clip, label, or config (use the config's mode)")
      ->check(CLI::IsMember({"config", "zscore", "clip", "label"}))
      ->capture_default_str();

  auto* sp = app.add_subcommand("sample-patches", "draw class-balanced training patches into --out");
  sp->add_option("image", in1, "image NIfTI")->required();
  sp->add_option("label", in2, "binary label NIfTI")->required();
  sp->add_option("--n", n_patches, "number of patches")->capture_default_str();

  auto* tr = app.add_subcommand("train", "train a model; --out is the checkpoint path");
  tr->add_option("--image", targs.images, "training image (repeatable)");
  tr->add_option("--label", targs.labels, "training label (repeatable)");
  tr->add_option("--eval-image", targs.eval_images, "held-out image (repeatable)");
  tr->add_option("--eval-label", targs.eval_labels, "held-out label (repeatable)");
  tr->add_option("--steps", targs.steps, "optimizer steps");
  tr->add_option("--log", targs.log, "metric log path (default <out>.log)");

  auto* pr = app.add_subcommand("predict", "write a probability volume to --out and a 0.5 mask");
  pr->add_option("input", in1, "image NIfTI")->required();
  pr->add_option("--model", model_path, "checkpoint")->required();
  pr->add_option("--mask-out", mask_out, "mask path (default <out stem>_mask.nii)");

  auto* ev = app.add_subcommand("evaluate", "overlap scores of a binary prediction against truth");
  ev->add_option("prediction", in1, "binary mask NIfTI")->required();
  ev->add_option("truth", in2, "binary mask NIfTI")->required();

  for (auto* sub : {info, ph, ro, no, sp, tr, pr, ev})
    sub->footer("Shared flags (--config, --seed, --out, ...) may appear before or after the subcommand.\n"
                "Run `voxelseg --help` for the full flag list and exit codes.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    if (subs.empty()) std::cout << app.help("", CLI::AppFormatMode::All);
    else std::cout << subs.front()->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "voxelseg: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  }

  try {
    if (info->parsed()) return run_info(in1);
    if (ph->parsed()) return run_phantom(s, count);
    if (ro->parsed()) return run_reorient(s, in1, target);
    if (no->parsed()) return run_normalize(s, in1, norm_mode);
    if (sp->parsed()) return run_sample(s, in1, in2, n_patches);
    if (tr->parsed()) return run_train(s, targs);
    if (pr->parsed()) return run_predict(s, in1, model_path, mask_out);
    if (ev->parsed()) return run_evaluate(s, in1, in2);
  } catch (const CLI::ParseError& e) {
    std::cerr << "voxelseg: " << e.what() << " is required\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "voxelseg: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "voxelseg: " << error_name(ErrorCode::IoError) << ": " << e.what() << '\n';
    return exit_code(ErrorCode::IoError);
  } catch (const std::exception& e) {
    std::cerr << "voxelseg: internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}
