// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0
//
// qf: command-line front end for the QF predictor toolkit.
// Subcommands map straight onto the library: train, infer, qf-map,
// corrupt-eval, score-dataset, demo-loss, selftest, gen-corpus.
// Exit codes: 0 success, 1 domain error, 2 usage error.

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qfpred/data_pipeline.hpp"
#include "qfpred/degradations.hpp"
#include "qfpred/eval_harness.hpp"
#include "qfpred/jpeg_sim.hpp"
#include "qfpred/perceptual_loss.hpp"
#include "qfpred/qf_model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qfpred;

namespace {

constexpr const char* kToolVersion = "1.0.0";

// Resolved configuration for one run. JSON config file values fill anything
// the command line did not set explicitly; flags win.
struct RunConfig {
  std::string subcommand;
  std::string manifest;
  std::string model;
  std::string out;
  std::string image;
  std::vector<std::string> images;
  std::string mode = "regression";
  int channels = 1;
  int patch = 64;
  std::uint64_t seed = 42;
  int threads = 1;
  // training
  std::string sampler = "log-weighted";
  int steps = 20000;
  int batch = 16;
  double lr = 1e-3;
  int val_interval = 500;
  int val_patches = 160;
  std::string resume;
  // corrupt-eval
  std::string kind = "blur";
  std::string sweep;
  int locations = 3;
  // score-dataset
  std::string policy = "whole-image";
  int n_patches = 8;
  // demo-loss
  std::string lambdas = "0,0.01,0.1,1,10";
  int demo_seeds = 3;
  int degrade_q = 40;
  double restorer_lr = 2e-3;
  // qf-map extras
  int dump_layer = -1;
  // gen-corpus
  int count = 60;
  int size = 256;
  bool rgb = false;
};

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::string token;
  std::istringstream is(s);
  while (std::getline(is, token, ',')) {
    if (!token.empty()) out.push_back(std::stod(token));
  }
  return out;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["subcommand"] = c.subcommand;
  j["tool_version"] = kToolVersion;
  auto abspath = [](const std::string& p) {
    return p.empty() ? p : fs::absolute(p).string();
  };
  j["manifest"] = abspath(c.manifest);
  j["model"] = abspath(c.model);
  j["out"] = abspath(c.out);
  j["image"] = abspath(c.image);
  json imgs = json::array();
  for (const auto& p : c.images) imgs.push_back(abspath(p));
  j["images"] = imgs;
  j["mode"] = c.mode;
  j["channels"] = c.channels;
  j["patch"] = c.patch;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["sampler"] = c.sampler;
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["val_interval"] = c.val_interval;
  j["val_patches"] = c.val_patches;
  j["resume"] = abspath(c.resume);
  j["kind"] = c.kind;
  j["sweep"] = c.sweep;
  j["locations"] = c.locations;
  j["policy"] = c.policy;
  j["n_patches"] = c.n_patches;
  j["lambdas"] = c.lambdas;
  j["demo_seeds"] = c.demo_seeds;
  j["degrade_q"] = c.degrade_q;
  j["restorer_lr"] = c.restorer_lr;
  j["dump_layer"] = c.dump_layer;
  j["count"] = c.count;
  j["size"] = c.size;
  j["rgb"] = c.rgb;
  return j;
}

void write_run_json(const RunConfig& c) {
  if (c.out.empty()) return;
  fs::create_directories(c.out);
  std::ofstream out(fs::path(c.out) / "run.json");
  out << config_to_json(c).dump(2) << "\n";
}

// Applies config-file values to fields the command line left untouched.
void merge_config_file(const json& j, const CLI::App* cmd, RunConfig& c) {
  auto take = [&](const char* key, auto& field) {
    const CLI::Option* opt = cmd->get_option_no_throw(std::string("--") + key);
    const bool flag_set = opt != nullptr && opt->count() > 0;
    if (!flag_set && j.contains(key) && !j.at(key).is_null()) {
      try {
        j.at(key).get_to(field);
      } catch (const json::exception&) {
        throw FormatError("config: bad value for key '" + std::string(key) + "'");
      }
    }
  };
  take("manifest", c.manifest);
  take("model", c.model);
  take("out", c.out);
  take("image", c.image);
  take("images", c.images);
  take("mode", c.mode);
  take("channels", c.channels);
  take("patch", c.patch);
  take("seed", c.seed);
  take("threads", c.threads);
  take("sampler", c.sampler);
  take("steps", c.steps);
  take("batch", c.batch);
  take("lr", c.lr);
  take("val_interval", c.val_interval);
  take("val_patches", c.val_patches);
  take("resume", c.resume);
  take("kind", c.kind);
  take("sweep", c.sweep);
  take("locations", c.locations);
  take("policy", c.policy);
  take("n_patches", c.n_patches);
  take("lambdas", c.lambdas);
  take("demo_seeds", c.demo_seeds);
  take("degrade_q", c.degrade_q);
  take("restorer_lr", c.restorer_lr);
  take("dump_layer", c.dump_layer);
  take("count", c.count);
  take("size", c.size);
  take("rgb", c.rgb);
}

ImageBuffer hstack(const ImageBuffer& a, const ImageBuffer& b) {
  ImageBuffer out =
      ImageBuffer::make(a.width + b.width, std::max(a.height, b.height), a.channels);
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      for (int ch = 0; ch < a.channels; ++ch) out.at(y, x, ch) = a.at(y, x, ch);
    }
  }
  for (int y = 0; y < b.height; ++y) {
    for (int x = 0; x < b.width; ++x) {
      for (int ch = 0; ch < b.channels; ++ch) out.at(y, a.width + x, ch) = b.at(y, x, ch);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_gen_corpus(const RunConfig& c) {
  if (c.out.empty()) throw Error("gen-corpus: --out is required");
  const std::string manifest = generate_desk_corpus(
      c.out, c.count, c.size, c.seed, c.rgb ? ColorSpace::rgb : ColorSpace::gray);
  write_run_json(c);
  std::cout << "wrote corpus manifest " << manifest << "\n";
  return 0;
}

int cmd_train(const RunConfig& c) {
  if (c.manifest.empty()) throw Error("train: --manifest is required");
  if (c.out.empty()) throw Error("train: --out is required");
  const HeadMode mode = head_mode_from_string(c.mode);
  const ColorSpace color = c.channels == 3 ? ColorSpace::rgb : ColorSpace::gray;

  const CorpusManifest manifest = CorpusManifest::load(c.manifest);
  SamplerMode smode;
  if (mode == HeadMode::classification) {
    smode = SamplerMode::classification_5;
  } else if (c.sampler == "uniform") {
    smode = SamplerMode::uniform;
  } else if (c.sampler == "log-weighted") {
    smode = SamplerMode::log_weighted;
  } else {
    throw RangeError("train: unknown sampler '" + c.sampler + "'");
  }
  const QFSampler sampler(smode, c.seed);

  fs::create_directories(c.out);
  write_run_json(c);

  QfNet net = c.resume.empty() ? QfNet(build_default_arch(c.channels, mode), c.seed)
                               : load_checkpoint(c.resume);
  TrainHyper hyper;
  hyper.lr = c.lr;
  hyper.batch_size = c.batch;
  hyper.steps = c.steps;
  hyper.val_interval = c.val_interval;
  hyper.seed = c.seed;
  hyper.patch_size = c.patch;
  hyper.val_patch_count = c.val_patches;
  hyper.verbose = true;
  hyper.diverged_snapshot_path = (fs::path(c.out) / "diverged.qfp").string();
  if (!c.resume.empty()) {
    CheckpointMeta meta;
    load_checkpoint(c.resume, &meta);
    if (const std::string* s = meta.get("steps")) hyper.start_step = std::stoll(*s);
  }

  const MetricsReport report = train_qf(net, manifest, sampler, color, hyper);

  CheckpointMeta meta;
  meta.set("mode", to_string(mode));
  meta.set("steps", std::to_string(hyper.start_step + c.steps));
  meta.set("seed", std::to_string(c.seed));
  meta.set("sampler", c.sampler);
  if (!report.val_curve.empty()) {
    meta.set("final_val_loss", std::to_string(report.val_curve.back().val_loss));
  }
  const std::string model_path = (fs::path(c.out) / "model.qfp").string();
  save_checkpoint(net, meta, model_path);
  report.write_csv((fs::path(c.out) / "metrics.csv").string());
  report.write_json((fs::path(c.out) / "metrics.json").string());
  std::cout << "wrote " << model_path << "\n";
  return 0;
}

int cmd_infer(const RunConfig& c) {
  if (c.model.empty()) throw Error("infer: --model is required");
  if (c.images.empty()) throw Error("infer: --images is required");
  const QfNet net = load_checkpoint(c.model);
  std::vector<std::pair<std::string, double>> rows;
  for (const auto& path : c.images) {
    const QFMap map = qf_map(net, load_image(path));
    rows.emplace_back(path, map.mean());
    std::cout << path << "\t" << map.mean() << "\n";
  }
  if (!c.out.empty()) {
    write_run_json(c);
    std::ofstream csv(fs::path(c.out) / "infer.csv");
    csv << "path,mean_qf\n";
    for (const auto& [p, v] : rows) csv << p << "," << v << "\n";
  }
  return 0;
}

int cmd_qf_map(const RunConfig& c) {
  if (c.model.empty()) throw Error("qf-map: --model is required");
  if (c.image.empty()) throw Error("qf-map: --image is required");
  if (c.out.empty()) throw Error("qf-map: --out is required");
  const QfNet net = load_checkpoint(c.model);
  const ImageBuffer img = load_image(c.image);
  const QFMap map = qf_map(net, img);

  fs::create_directories(c.out);
  write_run_json(c);
  save_png(map.render_heatmap(), (fs::path(c.out) / "heatmap.png").string());
  {
    std::ofstream csv(fs::path(c.out) / "map.csv");
    csv << "row,col,qf,window_mean_intensity\n";
    for (int i = 0; i < map.grid_h; ++i) {
      for (int j = 0; j < map.grid_w; ++j) {
        csv << i << "," << j << "," << map.value(i, j) << ","
            << map.mean_intensity[static_cast<std::size_t>(i) * map.grid_w + j] << "\n";
      }
    }
  }
  json j;
  j["mean"] = map.mean();
  j["min"] = map.min();
  j["max"] = map.max();
  j["grid_h"] = map.grid_h;
  j["grid_w"] = map.grid_w;
  j["stride"] = map.stride;
  j["receptive_field"] = map.receptive_field;
  std::ofstream(fs::path(c.out) / "map.json") << j.dump(2) << "\n";

  if (c.dump_layer >= 0) {
    dump_activations(net, img, c.dump_layer, (fs::path(c.out) / "activations").string());
  }
  std::cout << "mean_qf " << map.mean() << "\n";
  return 0;
}

int cmd_corrupt_eval(const RunConfig& c) {
  if (c.model.empty()) throw Error("corrupt-eval: --model is required");
  if (c.manifest.empty()) throw Error("corrupt-eval: --manifest is required");
  if (c.out.empty()) throw Error("corrupt-eval: --out is required");
  const QfNet net = load_checkpoint(c.model);
  const CorpusManifest manifest = CorpusManifest::load(c.manifest);
  const CorruptionKind kind = corruption_kind_from_string(c.kind);
  std::vector<double> levels = parse_double_list(c.sweep);
  if (levels.empty()) {
    switch (kind) {
      case CorruptionKind::gaussian_blur: levels = {0, 0.5, 1, 2, 4}; break;
      case CorruptionKind::salt_pepper: levels = {0, 0.01, 0.02, 0.05, 0.1}; break;
      case CorruptionKind::zero_fill_undersample: levels = {1, 2, 4, 8}; break;
    }
  }

  const ColorSpace color = net.spec().input_channels == 3 ? ColorSpace::rgb : ColorSpace::gray;
  Rng root(c.seed);
  std::vector<FixedPatchResult> results;
  for (int idx : manifest.indices(Split::val)) {
    const ImageBuffer& img = manifest.image(idx, color);
    if (img.width < c.patch || img.height < c.patch) continue;
    Rng loc_rng = root.child("locations", static_cast<std::uint64_t>(idx));
    std::vector<std::pair<int, int>> locs;
    for (int l = 0; l < c.locations; ++l) {
      locs.emplace_back(
          static_cast<int>(loc_rng.below(static_cast<std::uint32_t>(img.width - c.patch + 1))),
          static_cast<int>(
              loc_rng.below(static_cast<std::uint32_t>(img.height - c.patch + 1))));
    }
    // one seed per image shared across the ladder: stochastic corruptions
    // (impulse hits, sampling masks) are then nested in severity
    const std::uint64_t level_seed =
        root.child("corruption", static_cast<std::uint64_t>(idx)).next_u64();
    std::vector<CorruptionSpec> sweep;
    for (double level : levels) {
      sweep.push_back(CorruptionSpec{kind, level, level_seed});
    }
    results.push_back(fixed_patch_eval(net, img, locs, c.patch, sweep));
  }
  if (results.empty()) throw Error("corrupt-eval: no val image fits the patch size");

  const CurveReport report = correlation_curve(results, kind);
  fs::create_directories(c.out);
  write_run_json(c);
  report.write_csv((fs::path(c.out) / "curve.csv").string());
  report.write_json((fs::path(c.out) / "curve.json").string());
  report.write_svg((fs::path(c.out) / "curve.svg").string());
  std::cout << "spearman(level, qf) " << report.spearman_level_qf << "\n";
  return 0;
}

int cmd_score_dataset(const RunConfig& c) {
  if (c.model.empty()) throw Error("score-dataset: --model is required");
  if (c.manifest.empty()) throw Error("score-dataset: --manifest is required");
  if (c.out.empty()) throw Error("score-dataset: --out is required");
  const QfNet net = load_checkpoint(c.model);
  const CorpusManifest manifest = CorpusManifest::load(c.manifest);
  PatchPolicy policy;
  if (c.policy == "whole-image") {
    policy = PatchPolicy::whole_image;
  } else if (c.policy == "patches") {
    policy = PatchPolicy::random_patches;
  } else {
    throw RangeError("score-dataset: unknown policy '" + c.policy + "'");
  }
  const DatasetScore score = score_dataset(net, manifest, policy, c.seed, c.n_patches, c.patch,
                                           fs::path(c.manifest).stem().string());
  fs::create_directories(c.out);
  write_run_json(c);
  score.write_csv((fs::path(c.out) / "scores.csv").string());
  score.write_json((fs::path(c.out) / "scores.json").string());
  std::cout << "corpus mean_qf " << score.mean << " +- " << score.stddev << " (skipped "
            << score.skipped << ")\n";
  return 0;
}

int cmd_demo_loss(const RunConfig& c) {
  if (c.model.empty()) throw Error("demo-loss: --model is required");
  if (c.manifest.empty()) throw Error("demo-loss: --manifest is required");
  if (c.out.empty()) throw Error("demo-loss: --out is required");
  QfNet frozen = load_checkpoint(c.model);
  frozen.set_frozen(true);
  const ColorSpace color =
      frozen.spec().input_channels == 3 ? ColorSpace::rgb : ColorSpace::gray;
  const CorpusManifest manifest = CorpusManifest::load(c.manifest);

  const std::vector<double> lambdas = parse_double_list(c.lambdas);
  std::vector<std::uint64_t> seeds;
  for (int s = 0; s < c.demo_seeds; ++s) seeds.push_back(c.seed + s);

  RestorerHyper hyper;
  hyper.lr = c.restorer_lr;
  hyper.steps = c.steps == 20000 ? 200 : c.steps;  // train's default is too long here
  hyper.batch_size = c.batch == 16 ? 8 : c.batch;
  hyper.patch_size = c.patch;
  hyper.verbose = false;

  fs::create_directories(c.out);
  write_run_json(c);
  const TradeoffReport report =
      lambda_sweep(manifest, color, c.degrade_q, frozen, lambdas, seeds, hyper);
  report.write_csv((fs::path(c.out) / "tradeoff.csv").string());
  report.write_json((fs::path(c.out) / "tradeoff.json").string());
  for (const auto& row : report.rows) {
    std::cout << "lambda " << row.lambda << " qf_gain " << row.qf_gain << " l1_drift "
              << row.l1_drift << "\n";
  }

  // before/after pair for the first usable val image at each lambda
  const auto val = manifest.indices(Split::val);
  if (!val.empty()) {
    const ImageBuffer& clean = manifest.image(val.front(), color);
    const ImageBuffer degraded =
        jpeg::jpeg_degrade(clean, jpeg::QualityFactor(c.degrade_q), jpeg_mode_for(color));
    for (double lambda : lambdas) {
      RestorerSpec rspec;
      rspec.channels = frozen.spec().input_channels;
      RestorerNet restorer(rspec, seeds.front());
      CombinedLossConfig cfg;
      cfg.lambda = lambda;
      RestorerHyper h = hyper;
      h.seed = seeds.front();
      train_restorer(restorer, manifest, color, c.degrade_q, frozen, cfg, h);
      const Tensor out_t = restorer.infer(image_to_tensor(degraded));
      std::ostringstream name;
      name << "pair_lambda_" << lambda << ".png";
      save_png(hstack(degraded, tensor_to_image(out_t)),
               (fs::path(c.out) / name.str()).string());
    }
  }
  return 0;
}

// Built-in smoke checks: gradient checks against central finite differences,
// codec properties, and receptive-field locality. Prints PASS/FAIL per
// property; exit 0 only if everything passes.
int cmd_selftest(const RunConfig& c) {
  int failures = 0;
  const auto report = [&](const std::string& name, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "PASS" : "FAIL") << " " << name;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << "\n";
    if (!ok) ++failures;
  };

  auto fd_check = [](float* buf, std::int64_t n, const std::function<double()>& loss,
                     const float* grad) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const float saved = buf[i];
      buf[i] = saved + 1e-3f;
      const double up = loss();
      buf[i] = saved - 1e-3f;
      const double down = loss();
      buf[i] = saved;
      const double fd = (up - down) / 2e-3;
      const double an = static_cast<double>(grad[i]);
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 0.3});
      worst = std::max(worst, rel);
    }
    return worst;
  };
  auto dot = [](const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
      acc += static_cast<double>(a.data()[i]) * b.data()[i];
    }
    return acc;
  };

  {
    Rng rng(c.seed);
    Tensor input(Shape4{1, 2, 8, 8});
    Tensor weight(Shape4{2, 2, 3, 3});
    Tensor bias(Shape4{1, 2, 1, 1});
    for (std::int64_t i = 0; i < input.size(); ++i) {
      input.data()[i] = static_cast<float>(rng.uniform01() * 2 - 1);
    }
    for (std::int64_t i = 0; i < weight.size(); ++i) {
      weight.data()[i] = static_cast<float>(rng.uniform01() - 0.5);
    }
    Tensor probe(nn::conv2d_out_shape(input.shape(), 2, 3, 1, 0));
    for (std::int64_t i = 0; i < probe.size(); ++i) {
      probe.data()[i] = static_cast<float>(rng.uniform01() * 2 - 1);
    }
    Tensor gin(input.shape()), gw(weight.shape()), gb(bias.shape());
    nn::conv2d_backward(input, weight, probe, 1, 0, &gin, &gw, &gb);
    auto conv_loss = [&]() {
      return dot(nn::conv2d_forward(input, weight, bias, 1, 0), probe);
    };
    const double conv_err =
        std::max({fd_check(input.data(), input.size(), conv_loss, gin.data()),
                  fd_check(weight.data(), weight.size(), conv_loss, gw.data()),
                  fd_check(bias.data(), bias.size(), conv_loss, gb.data())});
    report("conv2d gradient vs finite differences", conv_err < 1e-3,
           "max rel err " + std::to_string(conv_err));

    nn::BatchNorm2d bn(2);
    Tensor bprobe(input.shape());
    for (std::int64_t i = 0; i < bprobe.size(); ++i) {
      bprobe.data()[i] = static_cast<float>(rng.uniform01() * 2 - 1);
    }
    bn.forward(input, nn::Mode::train);
    const Tensor bgin = bn.backward(bprobe);
    auto bn_loss = [&]() {
      nn::BatchNorm2d fresh(2);
      fresh.scale = bn.scale;
      fresh.shift = bn.shift;
      return dot(fresh.forward(input, nn::Mode::train), bprobe);
    };
    const double bn_err = fd_check(input.data(), input.size(), bn_loss, bgin.data());
    report("batchnorm gradient vs finite differences", bn_err < 1e-3,
           "max rel err " + std::to_string(bn_err));

    auto sig_loss = [&]() { return dot(nn::sigmoid_forward(input), bprobe); };
    const Tensor sgin = nn::sigmoid_backward(nn::sigmoid_forward(input), bprobe);
    const double sig_err = fd_check(input.data(), input.size(), sig_loss, sgin.data());
    report("sigmoid gradient vs finite differences", sig_err < 1e-3,
           "max rel err " + std::to_string(sig_err));
  }

  {
    const ImageBuffer img = procedural_texture(64, c.seed, ColorSpace::gray);
    const ImageBuffer q100 =
        jpeg::jpeg_degrade(img, jpeg::QualityFactor(100), jpeg::ColorMode::luma_only);
    int worst = 0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      worst = std::max(worst, std::abs(static_cast<int>(img.pixels[i]) - q100.pixels[i]));
    }
    report("jpeg q=100 near-identity", worst <= 1, "max pixel delta " + std::to_string(worst));

    float block[64], coeff[64], recon[64];
    Rng rng(c.seed + 1);
    for (auto& v : block) v = static_cast<float>(rng.uniform01() * 255.0 - 128.0);
    jpeg::dct8x8(block, coeff);
    jpeg::idct8x8(coeff, recon);
    float dct_err = 0.0f;
    for (int i = 0; i < 64; ++i) dct_err = std::max(dct_err, std::abs(recon[i] - block[i]));
    report("dct/idct round-trip", dct_err < 1e-4f, "max abs err " + std::to_string(dct_err));

    const double p90 = psnr(
        img, jpeg::jpeg_degrade(img, jpeg::QualityFactor(90), jpeg::ColorMode::luma_only));
    const double p20 = psnr(
        img, jpeg::jpeg_degrade(img, jpeg::QualityFactor(20), jpeg::ColorMode::luma_only));
    report("jpeg severity ordering (psnr q90 > q20)", p90 > p20);
  }

  {
    QfNet net(build_narrow_arch(1, HeadMode::regression), c.seed);
    Tensor input(Shape4{1, 1, 64, 64});
    Rng rng(c.seed + 2);
    for (std::int64_t i = 0; i < input.size(); ++i) {
      input.data()[i] = static_cast<float>(rng.uniform01());
    }
    const Tensor base = net.infer(input);
    Tensor perturbed = input;
    perturbed.at(0, 0, 60, 60) += 0.4f;  // outside the (0,0) cell window [0,24)
    const Tensor out = net.infer(perturbed);
    const float a = base.at(0, 0, 0, 0), b = out.at(0, 0, 0, 0);
    report("receptive-field locality", std::memcmp(&a, &b, sizeof(float)) == 0);

    bool shapes_ok = true;
    for (const auto [h, w] : {std::pair{64, 64}, std::pair{96, 96}, std::pair{128, 160}}) {
      Tensor probe_in(Shape4{1, 1, h, w});
      shapes_ok = shapes_ok &&
                  (net.infer(probe_in).shape() == net.spec().map_shape(probe_in.shape()));
    }
    report("fully convolutional shape contract", shapes_ok);
  }

  std::cout << (failures == 0 ? "selftest OK" : "selftest FAILED") << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qf: reference-free image quality toolkit built on a JPEG QF predictor"};
  app.require_subcommand(1);

  RunConfig c;
  std::string config_path;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file; explicit flags win");
    cmd->add_option("--seed", c.seed, "root RNG seed");
    cmd->add_option("--threads", c.threads,
                    "compute threads (results are thread-count invariant)");
    cmd->add_option("--out", c.out, "output directory");
    return cmd;
  };

  CLI::App* train = add_common(app.add_subcommand("train", "train a QF predictor"));
  train->add_option("--manifest", c.manifest);
  train->add_option("--mode", c.mode)->check(CLI::IsMember({"regression", "classification"}));
  train->add_option("--channels", c.channels)->check(CLI::IsMember({1, 3}));
  train->add_option("--patch", c.patch);
  train->add_option("--sampler", c.sampler)->check(CLI::IsMember({"log-weighted", "uniform"}));
  train->add_option("--steps", c.steps);
  train->add_option("--batch", c.batch);
  train->add_option("--lr", c.lr);
  train->add_option("--val_interval", c.val_interval);
  train->add_option("--val_patches", c.val_patches);
  train->add_option("--resume", c.resume);

  CLI::App* infer = add_common(app.add_subcommand("infer", "mean QF per image"));
  infer->add_option("--model", c.model);
  infer->add_option("--images", c.images)->expected(-1);

  CLI::App* qfmap = add_common(app.add_subcommand("qf-map", "dense QF map + heatmap"));
  qfmap->add_option("--model", c.model);
  qfmap->add_option("--image", c.image);
  qfmap->add_option("--dump_layer", c.dump_layer, "also dump activation maps of this layer");

  CLI::App* corrupt = add_common(app.add_subcommand(
      "corrupt-eval", "fixed-location corruption sweep + correlation curve"));
  corrupt->add_option("--model", c.model);
  corrupt->add_option("--manifest", c.manifest);
  corrupt->add_option("--kind", c.kind)
      ->check(CLI::IsMember({"blur", "gaussian-blur", "noise", "salt-pepper", "zero-fill",
                             "zero-fill-undersample"}));
  corrupt->add_option("--sweep", c.sweep, "comma-separated severity levels");
  corrupt->add_option("--patch", c.patch);
  corrupt->add_option("--locations", c.locations, "patch locations per image");

  CLI::App* score = add_common(app.add_subcommand("score-dataset", "corpus mean QF"));
  score->add_option("--model", c.model);
  score->add_option("--manifest", c.manifest);
  score->add_option("--policy", c.policy)->check(CLI::IsMember({"whole-image", "patches"}));
  score->add_option("--n_patches", c.n_patches);
  score->add_option("--patch", c.patch);

  CLI::App* demo = add_common(app.add_subcommand(
      "demo-loss", "frozen QF predictor as a perceptual loss (lambda sweep)"));
  demo->add_option("--model", c.model);
  demo->add_option("--manifest", c.manifest);
  demo->add_option("--lambda,--lambdas", c.lambdas, "comma-separated lambda values");
  demo->add_option("--demo_seeds", c.demo_seeds, "seeds to average over");
  demo->add_option("--degrade_q", c.degrade_q, "JPEG q applied to restorer inputs");
  demo->add_option("--steps", c.steps);
  demo->add_option("--batch", c.batch);
  demo->add_option("--patch", c.patch);
  demo->add_option("--restorer_lr", c.restorer_lr);

  CLI::App* selftest =
      add_common(app.add_subcommand("selftest", "gradient, codec, and locality checks"));

  CLI::App* gen = add_common(app.add_subcommand("gen-corpus", "procedural texture corpus"));
  gen->add_option("--count", c.count);
  gen->add_option("--size", c.size);
  gen->add_flag("--rgb", c.rgb);

  CLI11_PARSE(app, argc, argv);

  CLI::App* active = app.get_subcommands().front();
  c.subcommand = active->get_name();

  // config file fills unset fields; a missing file is a usage error and must
  // not produce partial outputs
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      std::cerr << "error: cannot open config " << config_path << "\n";
      return 2;
    }
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      std::cerr << "error: bad config JSON: " << e.what() << "\n";
      return 2;
    }
    try {
      merge_config_file(j, active, c);
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }
  }

  set_num_threads(c.threads);

  try {
    if (active == train) return cmd_train(c);
    if (active == infer) return cmd_infer(c);
    if (active == qfmap) return cmd_qf_map(c);
    if (active == corrupt) return cmd_corrupt_eval(c);
    if (active == score) return cmd_score_dataset(c);
    if (active == demo) return cmd_demo_loss(c);
    if (active == selftest) return cmd_selftest(c);
    if (active == gen) return cmd_gen_corpus(c);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
