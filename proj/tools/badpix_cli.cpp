// badpix command-line tool: defect injection, detection, correction and
// evaluation over Bayer raw frames. Exit codes: 0 success, 2 config error,
// 3 data error, 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "badpix/badpix.hpp"

namespace fs = std::filesystem;
using namespace badpix;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value pairs
};

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

ExperimentConfig load_config(const CommonOpts& common) {
  KvConfig kv = common.config_path.empty()
                    ? KvConfig{}
                    : KvConfig::from_file(common.config_path);
  for (const auto& ov : common.overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + ov + "' is not key=value");
    kv.set(ov.substr(0, eq), ov.substr(eq + 1));
  }
  return ExperimentConfig::from(kv);
}

void add_common(CLI::App* cmd, CommonOpts& common) {
  cmd->add_option("-c,--config", common.config_path, "config file");
  cmd->add_option("-D,--set", common.overrides,
                  "config override key=value (repeatable)");
}

BayerImage load_input_image(const std::string& path,
                            const ExperimentConfig& cfg, int raw_w, int raw_h) {
  return load_image(path, cfg.bit_depth, cfg.pattern, raw_w, raw_h,
                    /*crop_odd=*/true);
}

DefectMap load_map_arg(const std::string& path, int width, int height) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".txt") == 0)
    return load_map_coords(path, width, height);
  return load_map_pgm(path);
}

std::string metrics_json(const MetricsRow& row) { return metrics_row_jsonl(row); }

// published comparison values; correction PSNR (dB) as reported for the
// classical methods, and the concat-CNN cluster baseline
struct ReferenceCosts {
  static constexpr double mlp_psnr_db = 30.55;
  static constexpr double adc_psnr_db = 23.50;
  static constexpr double linear_median_psnr_db = 25.70;
  static constexpr double sparsity_psnr_db = 30.40;
  static constexpr double concat_cnn_nmse = 0.003;
  static constexpr double concat_cnn_params_k = 26.84;
  static constexpr double concat_cnn_kmacs = 203.89;
};

int cmd_inject(const CommonOpts& common, const std::string& input,
               int raw_w, int raw_h, const std::string& out_dir) {
  ExperimentConfig cfg = load_config(common);
  fs::create_directories(out_dir);
  const std::uint64_t seed = cfg.seeds.front();
  BayerImage original =
      input.empty()
          ? generate_synthetic({cfg.width, cfg.height, cfg.scene,
                                derive_seed(seed, 0x5C0000), cfg.flat_level,
                                cfg.pattern, cfg.bit_depth})
          : load_input_image(input, cfg, raw_w, raw_h);
  DefectMap map = sample_defect_map(original.width, original.height, cfg.rate,
                                    derive_seed(seed, 0x3A9));
  DefectSpec spec{cfg.rate, cfg.delta, cfg.defect_kind,
                  derive_seed(seed, 0x1000)};
  BayerImage corrupted = inject(original, map, spec);
  save_pgm(original, (fs::path(out_dir) / "original.pgm").string());
  save_pgm(corrupted, (fs::path(out_dir) / "corrupted.pgm").string());
  save_map_pgm(map, (fs::path(out_dir) / "truth_map.pgm").string());
  save_map_coords(map, (fs::path(out_dir) / "truth_map.txt").string());
  std::printf("injected %lld defects (rate %.6f, delta %.3f) -> %s\n",
              static_cast<long long>(map.defect_count()),
              estimate_error_rate(map), cfg.delta, out_dir.c_str());
  return kExitOk;
}

int cmd_train_detector(const CommonOpts& common, const std::string& out) {
  ExperimentConfig cfg = load_config(common);
  const std::uint64_t seed = cfg.seeds.front();
  auto frames = detail::gather_frames(cfg, seed);
  DefectMap truth = sample_defect_map(frames.train[0].width,
                                      frames.train[0].height, cfg.rate,
                                      derive_seed(seed, 0x3A9));
  std::vector<DetectorSample> samples;
  std::uint64_t inj = 0;
  for (const auto& f : frames.train) {
    DefectSpec spec{cfg.rate, cfg.delta, cfg.defect_kind,
                    derive_seed(seed, 0x1000 + inj++)};
    auto s = make_detector_samples(inject(f, truth, spec), truth, cfg.det_tile,
                                   cfg.det_tile);
    samples.insert(samples.end(), s.begin(), s.end());
  }
  UNetConfig ucfg;
  ucfg.depth = cfg.det_depth;
  ucfg.base_channels = cfg.det_base_channels;
  auto unet = build_unet<float>(ucfg, cfg.det_tile, cfg.det_tile,
                                derive_seed(seed, 0xDE7));
  TrainHyper hyper;
  hyper.epochs = cfg.det_epochs;
  hyper.schedule = LrSchedule::step(cfg.det_lr, 0.5, 10);
  hyper.batch = cfg.det_batch;
  hyper.seed = derive_seed(seed, 0x7A1);
  const auto curve = train_detector(unet, samples, hyper);
  ensure_parent(out);
  save_checkpoint(unet.g, out, ModelKind::unet, unet.digest());
  save_map_pgm(truth, out + ".truth_map.pgm");
  std::printf("trained detector: %d epochs, loss %.6f -> %.6f, saved %s\n",
              cfg.det_epochs, curve.empty() ? 0.0 : curve.front(),
              curve.empty() ? 0.0 : curve.back(), out.c_str());
  return kExitOk;
}

int cmd_detect(const CommonOpts& common, const std::string& checkpoint,
               int n_frames, double threshold,
               const std::vector<std::string>& images,
               const std::string& truth_path, const std::string& out_dir) {
  ExperimentConfig cfg = load_config(common);
  const std::uint64_t seed = cfg.seeds.front();
  fs::create_directories(out_dir);

  std::vector<BayerImage> frames;
  DefectMap truth(2, 2);
  bool have_truth = false;
  if (!images.empty()) {
    for (const auto& p : images)
      frames.push_back(detail::crop_to_multiple(
          load_input_image(p, cfg, 0, 0), cfg.det_tile));
    if (!truth_path.empty()) {
      truth = load_map_arg(truth_path, frames[0].width, frames[0].height);
      have_truth = true;
    }
  } else {
    // synthetic session: scenes + injection from the config seed
    ExperimentConfig scfg = cfg;
    scfg.calibration_frames = n_frames;
    auto src = detail::gather_frames(scfg, seed);
    truth = sample_defect_map(src.calib[0].width, src.calib[0].height,
                              cfg.rate, derive_seed(seed, 0x3A9));
    have_truth = true;
    std::uint64_t inj = 100;
    for (auto& f : src.calib) {
      DefectSpec spec{cfg.rate, cfg.delta, cfg.defect_kind,
                      derive_seed(seed, 0x1000 + inj++)};
      frames.push_back(inject(f, truth, spec));
    }
  }
  if (static_cast<int>(frames.size()) < n_frames)
    throw DataError(DataFault::empty_input,
                    "need " + std::to_string(n_frames) + " frames, got " +
                        std::to_string(frames.size()));

  UNetConfig ucfg;
  ucfg.depth = cfg.det_depth;
  ucfg.base_channels = cfg.det_base_channels;
  auto unet = build_unet<float>(ucfg, cfg.det_tile, cfg.det_tile, 0);
  load_checkpoint(unet.g, checkpoint, ModelKind::unet);

  ProbAccumulator acc(frames[0].width, frames[0].height);
  for (int i = 0; i < n_frames; ++i)
    calibrate(acc, predict_scores(unet, frames[static_cast<std::size_t>(i)]));
  DefectMap pred = finalize_defect_map(acc, threshold);
  save_map_pgm(pred, (fs::path(out_dir) / "detected_map.pgm").string());
  save_map_coords(pred, (fs::path(out_dir) / "detected_map.txt").string());

  std::string recall = "\"undefined\"", precision = "\"undefined\"";
  if (have_truth) {
    const auto pr = precision_recall(confusion(pred, truth));
    if (pr.recall) recall = detail::fmt6(*pr.recall);
    if (pr.precision) precision = detail::fmt6(*pr.precision);
  }
  const std::string json =
      "{\"recall\":" + recall + ",\"precision\":" + precision +
      ",\"n_frames\":" + std::to_string(acc.n_frames) +
      ",\"threshold\":" + detail::fmt6(threshold) +
      ",\"estimated_rate\":" + detail::fmt6(estimate_error_rate(pred)) + "}";
  std::ofstream js((fs::path(out_dir) / "detect.json").string());
  js << json << "\n";
  std::printf("%s\n", json.c_str());
  return kExitOk;
}

int cmd_train_mlp(const CommonOpts& common, int patch_size, int neighbor_errors,
                  const std::string& out) {
  ExperimentConfig cfg = load_config(common);
  const std::uint64_t seed = cfg.seeds.front();
  auto frames = detail::gather_frames(cfg, seed);
  auto ds = make_patch_dataset(frames.train, cfg.mlp_samples, patch_size,
                               neighbor_errors, cfg.delta,
                               derive_seed(seed, 0xDA7A + neighbor_errors));
  MlpConfig mcfg{patch_size, cfg.mlp_hidden, neighbor_errors};
  auto model = build_mlp<float>(mcfg, derive_seed(seed, 0x3E0 + neighbor_errors));
  CorrectorHyper hyper;
  hyper.epochs = cfg.mlp_epochs;
  hyper.lr = cfg.mlp_lr;
  hyper.batch = cfg.mlp_batch;
  hyper.seed = derive_seed(seed, 0xC0 + neighbor_errors);
  const auto curve = train_corrector(model, ds, hyper);
  ensure_parent(out);
  save_checkpoint(model.g, out, ModelKind::mlp, model.digest());
  std::printf("trained mlp (patch %d, %d neighbor errors): loss %.6f -> %.6f, saved %s\n",
              patch_size, neighbor_errors, curve.empty() ? 0.0 : curve.front(),
              curve.empty() ? 0.0 : curve.back(), out.c_str());
  return kExitOk;
}

int cmd_train_ae(const CommonOpts& common, const std::string& mode,
                 const std::string& out) {
  ExperimentConfig cfg = load_config(common);
  const std::uint64_t seed = cfg.seeds.front();
  VitConfig vcfg;
  vcfg.token_patch = cfg.ae_token_patch;
  vcfg.embed_dim = cfg.ae_embed_dim;
  vcfg.encoder_layers = cfg.ae_encoder_layers;
  vcfg.decoder_layers = cfg.ae_decoder_layers;
  vcfg.heads = cfg.ae_heads;
  vcfg.mlp_ratio = cfg.ae_mlp_ratio;

  std::vector<ReconSample> pairs;
  if (mode == "cluster") {
    vcfg.input_size = 3 * cfg.ae_token_patch;  // 8 context tokens + center
    vcfg.mask_center = true;
    const int S = vcfg.input_size, p = cfg.ae_token_patch;
    ExperimentConfig scfg = cfg;
    auto frames = detail::gather_frames(scfg, seed);
    Rng rng = make_rng(derive_seed(seed, 0xC1457e7));
    const DefectMap cluster = make_cluster_map(S, S, p, p, p);
    for (int i = 0; i < cfg.mlp_samples / 4; ++i) {
      const BayerImage& f =
          frames.train[static_cast<std::size_t>(uniform_int(
              rng, 0, frames.train.size() - 1))];
      const int r0 = 2 * static_cast<int>(uniform_int(rng, 0, (f.height - S) / 2));
      const int c0 = 2 * static_cast<int>(uniform_int(rng, 0, (f.width - S) / 2));
      BayerImage tile(S, S, f.pattern, f.bit_depth);
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c) tile.at(r, c) = f.at(r0 + r, c0 + c);
      DefectSpec spec{0.0, cfg.delta, cfg.defect_kind,
                      derive_seed(seed, 0x9000 + static_cast<std::uint64_t>(i))};
      pairs.push_back({inject(tile, cluster, spec), tile, cluster});
    }
  } else if (mode == "full") {
    vcfg.input_size = cfg.ae_input_size;
    vcfg.mask_center = false;
    auto frames = detail::gather_frames(cfg, seed);
    DefectMap truth = sample_defect_map(frames.train[0].width,
                                        frames.train[0].height, cfg.rate,
                                        derive_seed(seed, 0x3A9));
    std::uint64_t inj = 0;
    for (const auto& f : frames.train) {
      DefectSpec spec{cfg.rate, cfg.delta, cfg.defect_kind,
                      derive_seed(seed, 0x1000 + inj++)};
      pairs.push_back({inject(f, truth, spec), f, truth});
    }
  } else {
    throw ConfigError("train-ae mode must be full or cluster");
  }

  auto vit = build_vit_ae<float>(vcfg, derive_seed(seed, 0xA3));
  AeHyper hyper;
  hyper.epochs = cfg.ae_epochs;
  hyper.base_lr = cfg.ae_lr;
  hyper.warmup_epochs = cfg.ae_warmup;
  hyper.batch = cfg.ae_batch;
  hyper.seed = derive_seed(seed, 0xAE);
  const auto curve = train_ae(vit, pairs, hyper);
  ensure_parent(out);
  save_checkpoint(vit.g, out, ModelKind::vit_ae, vit.digest());
  std::printf("trained ae (%s, input %d): loss %.6f -> %.6f, saved %s\n",
              mode.c_str(), vcfg.input_size, curve.empty() ? 0.0 : curve.front(),
              curve.empty() ? 0.0 : curve.back(), out.c_str());
  return kExitOk;
}

int cmd_correct(const CommonOpts& common, const std::string& strategy,
                const std::string& image_path, const std::string& map_path,
                const std::string& bank_dir, const std::string& checkpoint,
                const std::string& truth_path, const std::string& out) {
  ExperimentConfig cfg = load_config(common);
  BayerImage img = load_input_image(image_path, cfg, 0, 0);
  DefectMap map = load_map_arg(map_path, img.width, img.height);
  BayerImage corrected = img;
  const StrategyChoice choice = strategy_from_string(strategy);
  switch (choice) {
    case StrategyChoice::nearest:
      corrected = correct_nearest(img, map);
      break;
    case StrategyChoice::linear:
      corrected = correct_linear(img, map);
      break;
    case StrategyChoice::median:
      corrected = correct_median(img, map);
      break;
    case StrategyChoice::mlp: {
      if (bank_dir.empty())
        throw ConfigError("--bank-dir is required for strategy mlp");
      MlpBank<float> bank;
      for (const auto& e : fs::directory_iterator(bank_dir)) {
        if (e.path().extension() != ".ckpt") continue;
        // bank files are named mlp_p<patch>_e<errors>.ckpt
        const std::string stem = e.path().stem().string();
        int ps = 0, ne = 0;
        if (std::sscanf(stem.c_str(), "mlp_p%d_e%d", &ps, &ne) != 2) continue;
        MlpConfig mcfg{ps, cfg.mlp_hidden, ne};
        auto model = build_mlp<float>(mcfg, 0);
        load_checkpoint(model.g, e.path().string(), ModelKind::mlp);
        bank.put(std::move(model));
      }
      corrected = correct_pixels(img, map, bank, cfg.mlp_patch_size);
      break;
    }
    case StrategyChoice::ae: {
      if (checkpoint.empty())
        throw ConfigError("--checkpoint is required for strategy ae");
      VitConfig vcfg;
      vcfg.input_size = cfg.ae_input_size;
      vcfg.token_patch = cfg.ae_token_patch;
      vcfg.embed_dim = cfg.ae_embed_dim;
      vcfg.encoder_layers = cfg.ae_encoder_layers;
      vcfg.decoder_layers = cfg.ae_decoder_layers;
      vcfg.heads = cfg.ae_heads;
      vcfg.mlp_ratio = cfg.ae_mlp_ratio;
      auto vit = build_vit_ae<float>(vcfg, 0);
      load_checkpoint(vit.g, checkpoint, ModelKind::vit_ae);
      corrected = reconstruct_with_map(vit, img, map);
      break;
    }
    case StrategyChoice::auto_select:
      throw ConfigError("correct needs an explicit strategy");
  }
  ensure_parent(out);
  save_pgm(corrected, out);
  std::printf("corrected %lld pixels with %s -> %s\n",
              static_cast<long long>(map.defect_count()), strategy.c_str(),
              out.c_str());
  if (!truth_path.empty()) {
    BayerImage truth_img = load_input_image(truth_path, cfg, 0, 0);
    MetricsRow row;
    row.run_id = "correct";
    row.error_rate = estimate_error_rate(map);
    row.delta = cfg.delta;
    row.strategy = strategy;
    row.nmse = nmse(corrected, truth_img, &map);
    const auto ps = psnr(corrected, truth_img);
    if (ps)
      row.psnr = ps;
    else
      row.psnr_infinite = true;
    std::printf("%s\n", metrics_json(row).c_str());
  }
  return kExitOk;
}

int cmd_reconstruct(const CommonOpts& common, const std::string& checkpoint,
                    const std::string& image_path, const std::string& map_path,
                    const std::string& out) {
  ExperimentConfig cfg = load_config(common);
  BayerImage img = load_input_image(image_path, cfg, 0, 0);
  VitConfig vcfg;
  vcfg.input_size = cfg.ae_input_size;
  vcfg.token_patch = cfg.ae_token_patch;
  vcfg.embed_dim = cfg.ae_embed_dim;
  vcfg.encoder_layers = cfg.ae_encoder_layers;
  vcfg.decoder_layers = cfg.ae_decoder_layers;
  vcfg.heads = cfg.ae_heads;
  vcfg.mlp_ratio = cfg.ae_mlp_ratio;
  auto vit = build_vit_ae<float>(vcfg, 0);
  load_checkpoint(vit.g, checkpoint, ModelKind::vit_ae);
  BayerImage outimg =
      map_path.empty()
          ? reconstruct(vit, img)
          : reconstruct_with_map(vit, img,
                                 load_map_arg(map_path, img.width, img.height));
  ensure_parent(out);
  save_pgm(outimg, out);
  std::printf("reconstructed %dx%d -> %s\n", outimg.width, outimg.height,
              out.c_str());
  return kExitOk;
}

int cmd_eval(const CommonOpts& common, const std::string& pred_path,
             const std::string& act_path, const std::string& map_path,
             const std::string& pred_map_path, const std::string& csv_out) {
  ExperimentConfig cfg = load_config(common);
  BayerImage pred = load_input_image(pred_path, cfg, 0, 0);
  BayerImage act = load_input_image(act_path, cfg, 0, 0);
  MetricsRow row;
  row.run_id = "eval";
  row.delta = cfg.delta;
  row.strategy = "eval";
  if (!map_path.empty()) {
    DefectMap truth = load_map_arg(map_path, act.width, act.height);
    row.error_rate = estimate_error_rate(truth);
    row.nmse = nmse(pred, act, &truth);
    if (!pred_map_path.empty()) {
      DefectMap dm = load_map_arg(pred_map_path, act.width, act.height);
      const auto pr = precision_recall(confusion(dm, truth));
      row.recall = pr.recall;
      row.precision = pr.precision;
    }
  } else {
    row.nmse = nmse(pred, act);
  }
  const auto ps = psnr(pred, act);
  if (ps)
    row.psnr = ps;
  else
    row.psnr_infinite = true;
  std::printf("%s\n", metrics_json(row).c_str());
  if (!csv_out.empty()) {
    std::ofstream out(csv_out, std::ios::binary);
    out << metrics_csv_header() << "\n" << metrics_row_csv(row) << "\n";
  }
  return kExitOk;
}

int cmd_report_cost(const CommonOpts& common, bool tune, bool with_reference) {
  ExperimentConfig cfg = load_config(common);
  VitConfig vcfg;
  vcfg.input_size = 3 * cfg.ae_token_patch;
  vcfg.token_patch = cfg.ae_token_patch;
  vcfg.embed_dim = cfg.ae_embed_dim;
  vcfg.encoder_layers = cfg.ae_encoder_layers;
  vcfg.decoder_layers = cfg.ae_decoder_layers;
  vcfg.heads = cfg.ae_heads;
  vcfg.mlp_ratio = cfg.ae_mlp_ratio;
  vcfg.mask_center = true;
  if (tune) vcfg.mlp_ratio = tune_mlp_ratio(vcfg, 11360);
  auto vit = build_vit_ae<float>(vcfg, 0);
  const ModelCost cost = count_params_flops(vit);
  std::string json = "{\"params\":" + std::to_string(cost.params) +
                     ",\"kmacs\":" + detail::fmt6(cost.macs / 1000.0) +
                     ",\"mlp_ratio\":" + std::to_string(vcfg.mlp_ratio);
  if (with_reference) {
    json += ",\"reference\":{\"concat_cnn\":{\"nmse\":" +
            detail::fmt6(ReferenceCosts::concat_cnn_nmse) +
            ",\"params_k\":" + detail::fmt6(ReferenceCosts::concat_cnn_params_k) +
            ",\"kmacs\":" + detail::fmt6(ReferenceCosts::concat_cnn_kmacs) +
            "},\"interpolation_psnr_db\":{\"adc\":" +
            detail::fmt6(ReferenceCosts::adc_psnr_db) +
            ",\"linear\":" + detail::fmt6(ReferenceCosts::linear_median_psnr_db) +
            ",\"median\":" + detail::fmt6(ReferenceCosts::linear_median_psnr_db) +
            ",\"sparsity\":" + detail::fmt6(ReferenceCosts::sparsity_psnr_db) +
            ",\"mlp_reported\":" + detail::fmt6(ReferenceCosts::mlp_psnr_db) +
            "}}";
  }
  json += "}";
  std::printf("%s\n", json.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bad-pixel detection and correction for Bayer raw frames"};
  app.require_subcommand(1);

  CommonOpts common;

  // inject
  auto* inject_cmd = app.add_subcommand("inject", "inject defects into a frame");
  add_common(inject_cmd, common);
  std::string in_image, out_dir = "out";
  int raw_w = 0, raw_h = 0;
  inject_cmd->add_option("--input", in_image, "input frame (.pgm or raw u16)");
  inject_cmd->add_option("--width", raw_w, "raw input width");
  inject_cmd->add_option("--height", raw_h, "raw input height");
  inject_cmd->add_option("-o,--out-dir", out_dir, "output directory");

  // train-detector
  auto* td_cmd = app.add_subcommand("train-detector", "train the segmentation detector");
  add_common(td_cmd, common);
  std::string td_out = "detector.ckpt";
  td_cmd->add_option("-o,--out", td_out, "checkpoint path");

  // detect
  auto* det_cmd = app.add_subcommand("detect", "detect defects with n-frame calibration");
  add_common(det_cmd, common);
  std::string det_ckpt, det_truth, det_out = "out";
  std::vector<std::string> det_images;
  int det_frames = 1;
  double det_threshold = 0.5;
  det_cmd->add_option("--checkpoint", det_ckpt, "detector checkpoint")->required();
  det_cmd->add_option("--frames", det_frames, "calibration frame count");
  det_cmd->add_option("--threshold", det_threshold, "mean-score threshold");
  det_cmd->add_option("--images", det_images, "corrupted input frames");
  det_cmd->add_option("--truth-map", det_truth, "ground-truth map for metrics");
  det_cmd->add_option("-o,--out-dir", det_out, "output directory");

  // train-mlp
  auto* tm_cmd = app.add_subcommand("train-mlp", "train a patch corrector");
  add_common(tm_cmd, common);
  int tm_patch = 5, tm_errors = 0;
  std::string tm_out = "mlp.ckpt";
  tm_cmd->add_option("--patch-size", tm_patch, "patch size (odd)");
  tm_cmd->add_option("--neighbor-errors", tm_errors, "corrupted neighbors per training patch");
  tm_cmd->add_option("-o,--out", tm_out, "checkpoint path");

  // train-ae
  auto* ta_cmd = app.add_subcommand("train-ae", "train the reconstruction autoencoder");
  add_common(ta_cmd, common);
  std::string ta_mode = "full", ta_out = "ae.ckpt";
  ta_cmd->add_option("--mode", ta_mode, "full or cluster");
  ta_cmd->add_option("-o,--out", ta_out, "checkpoint path");

  // correct
  auto* cor_cmd = app.add_subcommand("correct", "correct defective pixels");
  add_common(cor_cmd, common);
  std::string cor_strategy = "median", cor_image, cor_map, cor_bank, cor_ckpt,
              cor_truth, cor_out = "corrected.pgm";
  cor_cmd->add_option("--strategy", cor_strategy, "mlp|ae|nearest|linear|median");
  cor_cmd->add_option("--image", cor_image, "corrupted frame")->required();
  cor_cmd->add_option("--map", cor_map, "defect map (.pgm or .txt)")->required();
  cor_cmd->add_option("--bank-dir", cor_bank, "mlp checkpoint directory");
  cor_cmd->add_option("--checkpoint", cor_ckpt, "ae checkpoint");
  cor_cmd->add_option("--truth", cor_truth, "clean frame for metrics");
  cor_cmd->add_option("-o,--out", cor_out, "corrected output path");

  // reconstruct
  auto* rec_cmd = app.add_subcommand("reconstruct", "full-frame reconstruction");
  add_common(rec_cmd, common);
  std::string rec_ckpt, rec_image, rec_map, rec_out = "reconstructed.pgm";
  rec_cmd->add_option("--checkpoint", rec_ckpt, "ae checkpoint")->required();
  rec_cmd->add_option("--image", rec_image, "corrupted frame")->required();
  rec_cmd->add_option("--map", rec_map, "optional map: splice only at defects");
  rec_cmd->add_option("-o,--out", rec_out, "output path");

  // eval
  auto* ev_cmd = app.add_subcommand("eval", "compute metrics between frames");
  add_common(ev_cmd, common);
  std::string ev_pred, ev_act, ev_map, ev_pred_map, ev_csv;
  ev_cmd->add_option("--pred", ev_pred, "corrected/predicted frame")->required();
  ev_cmd->add_option("--act", ev_act, "ground-truth frame")->required();
  ev_cmd->add_option("--map", ev_map, "truth defect map (restricts nmse)");
  ev_cmd->add_option("--pred-map", ev_pred_map, "detected map (enables recall/precision)");
  ev_cmd->add_option("--csv", ev_csv, "also write a csv row");

  // run / sweep
  auto* run_cmd = app.add_subcommand("run", "run the full pipeline once");
  add_common(run_cmd, common);
  auto* sweep_cmd = app.add_subcommand("sweep", "rate x strategy sweep");
  add_common(sweep_cmd, common);
  int sweep_jobs = 0;
  sweep_cmd->add_option("--jobs", sweep_jobs, "parallel worker count");

  // report-cost
  auto* rc_cmd = app.add_subcommand("report-cost", "print {params, kmacs} for the ae");
  add_common(rc_cmd, common);
  bool rc_tune = false, rc_ref = false;
  rc_cmd->add_flag("--tune", rc_tune, "tune mlp_ratio to the 11.36K parameter budget");
  rc_cmd->add_flag("--reference", rc_ref, "include published comparison values");

  try {
    app.parse(argc, argv);
    if (inject_cmd->parsed())
      return cmd_inject(common, in_image, raw_w, raw_h, out_dir);
    if (td_cmd->parsed()) return cmd_train_detector(common, td_out);
    if (det_cmd->parsed())
      return cmd_detect(common, det_ckpt, det_frames, det_threshold, det_images,
                        det_truth, det_out);
    if (tm_cmd->parsed()) return cmd_train_mlp(common, tm_patch, tm_errors, tm_out);
    if (ta_cmd->parsed()) return cmd_train_ae(common, ta_mode, ta_out);
    if (cor_cmd->parsed())
      return cmd_correct(common, cor_strategy, cor_image, cor_map, cor_bank,
                         cor_ckpt, cor_truth, cor_out);
    if (rec_cmd->parsed())
      return cmd_reconstruct(common, rec_ckpt, rec_image, rec_map, rec_out);
    if (ev_cmd->parsed())
      return cmd_eval(common, ev_pred, ev_act, ev_map, ev_pred_map, ev_csv);
    if (run_cmd->parsed()) {
      ExperimentConfig cfg = load_config(common);
      const RunReport rep = run_pipeline(cfg);
      for (const auto& r : rep.rows)
        std::printf("%s\n", metrics_row_jsonl(r).c_str());
      return kExitOk;
    }
    if (sweep_cmd->parsed()) {
      ExperimentConfig cfg = load_config(common);
      if (sweep_jobs > 0) cfg.jobs = sweep_jobs;
      const RunReport rep = run_sweep(cfg);
      for (const auto& r : rep.rows)
        std::printf("%s\n", metrics_row_jsonl(r).c_str());
      return kExitOk;
    }
    if (rc_cmd->parsed()) return cmd_report_cost(common, rc_tune, rc_ref);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return (code == 0) ? 0 : kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  }
}
