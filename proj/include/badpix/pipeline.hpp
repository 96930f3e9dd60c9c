#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "badpix/baselines.hpp"
#include "badpix/checkpoint.hpp"
#include "badpix/common.hpp"
#include "badpix/config.hpp"
#include "badpix/corrector.hpp"
#include "badpix/defects.hpp"
#include "badpix/detector.hpp"
#include "badpix/image.hpp"
#include "badpix/metrics.hpp"
#include "badpix/reconstructor.hpp"
#include "badpix/report.hpp"

namespace badpix {

enum class Strategy { mlp, ae };

/// Rate at or below the threshold keeps the patch corrector; above it the
/// run switches to full reconstruction.
inline Strategy select_strategy(double estimated_rate, double threshold) {
  if (estimated_rate < 0.0 || estimated_rate > 1.0 || threshold < 0.0 ||
      threshold > 1.0)
    throw DataError(DataFault::bad_value,
                    "select_strategy: arguments must be in [0,1]");
  return (estimated_rate <= threshold) ? Strategy::mlp : Strategy::ae;
}

namespace detail {

struct StageError : DataError {
  StageError(const std::string& stage, const DataError& inner)
      : DataError(inner.fault(), "stage '" + stage + "': " + inner.what()) {}
};

struct StageConfigError : ConfigError {
  StageConfigError(const std::string& stage, const ConfigError& inner)
      : ConfigError("stage '" + stage + "': " + inner.what()) {}
};

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline void write_curve_csv(const std::vector<double>& curve,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataFault::io_failure, "cannot write " + path);
  out << "epoch,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i)
    out << i << "," << detail::fmt6(curve[i]) << "\n";
}

/// Frame source for one seeded run: synthetic scenes derived from the seed,
/// or files from a directory (sorted, center-cropped to the tile multiple).
struct FrameSource {
  std::vector<BayerImage> train, calib, test;
};

inline BayerImage crop_to_multiple(const BayerImage& img, int multiple) {
  const int w = (img.width / multiple) * multiple;
  const int h = (img.height / multiple) * multiple;
  if (w == img.width && h == img.height) return img;
  if (w <= 0 || h <= 0)
    throw DataError(DataFault::dimension_mismatch,
                    "frame smaller than one tile");
  BayerImage out(w, h, img.pattern, img.bit_depth);
  const int r0 = ((img.height - h) / 2) & ~1;
  const int c0 = ((img.width - w) / 2) & ~1;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out.at(r, c) = img.at(r0 + r, c0 + c);
  return out;
}

inline FrameSource gather_frames(const ExperimentConfig& cfg,
                                 std::uint64_t seed) {
  FrameSource src;
  const int need = cfg.train_frames + cfg.calibration_frames + cfg.test_frames;
  std::vector<BayerImage> all;
  if (cfg.dataset_kind == "synthetic") {
    for (int i = 0; i < need; ++i) {
      SceneSpec spec;
      spec.width = cfg.width;
      spec.height = cfg.height;
      spec.kind = cfg.scene;
      spec.level = cfg.flat_level;
      spec.pattern = cfg.pattern;
      spec.bit_depth = cfg.bit_depth;
      spec.seed = derive_seed(seed, 0x5C0000 + static_cast<std::uint64_t>(i));
      all.push_back(generate_synthetic(spec));
    }
  } else {
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::directory_iterator(cfg.dataset_dir))
      if (e.is_regular_file() && e.path().extension() == ".pgm")
        files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (static_cast<int>(files.size()) < need)
      throw DataError(DataFault::empty_input,
                      "dataset.dir holds " + std::to_string(files.size()) +
                          " frames, need " + std::to_string(need));
    for (int i = 0; i < need; ++i)
      all.push_back(
          crop_to_multiple(load_pgm(files[static_cast<std::size_t>(i)],
                                    cfg.pattern, /*crop_odd=*/true),
                           cfg.det_tile));
  }
  auto it = all.begin();
  src.train.assign(it, it + cfg.train_frames);
  it += cfg.train_frames;
  src.calib.assign(it, it + cfg.calibration_frames);
  it += cfg.calibration_frames;
  src.test.assign(it, it + cfg.test_frames);
  return src;
}

}  // namespace detail

/// Result of the detection stage for one seeded run.
struct DetectionResult {
  DefectMap predicted;
  double estimated_rate = 0.0;
  PrecisionRecall pr;
  int n_frames = 0;
};

/// inject -> detect (n-frame calibration) -> estimate rate ->
/// select strategy -> correct/reconstruct -> metrics. Fully deterministic
/// per (config, seed); artifacts land under cfg.output_dir.
inline RunReport run_pipeline(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.validate();
  RunReport report;
  report.config_digest = cfg.digest();
  fs::create_directories(cfg.output_dir);

  auto add_artifact = [&](const std::string& p) {
    report.artifacts.push_back(p);
  };

  for (std::uint64_t seed : cfg.seeds) {
    const std::string run_dir =
        detail::join_path(cfg.output_dir, "seed" + std::to_string(seed));
    fs::create_directories(run_dir);

    // --- data ---------------------------------------------------------
    detail::FrameSource frames;
    DefectMap truth(1, 1);
    std::vector<BayerImage> train_bad, calib_bad, test_bad;
    try {
      frames = detail::gather_frames(cfg, seed);
      const int W = frames.train[0].width, H = frames.train[0].height;
      truth = sample_defect_map(W, H, cfg.rate, derive_seed(seed, 0x3A9));
      DefectSpec dspec{cfg.rate, cfg.delta, cfg.defect_kind, 0};
      std::uint64_t inj = 0;
      auto corrupt = [&](const BayerImage& f) {
        DefectSpec s = dspec;
        s.seed = derive_seed(seed, 0x1000 + inj++);
        return inject(f, truth, s);
      };
      for (const auto& f : frames.train) train_bad.push_back(corrupt(f));
      for (const auto& f : frames.calib) calib_bad.push_back(corrupt(f));
      for (const auto& f : frames.test) test_bad.push_back(corrupt(f));
    } catch (const DataError& e) {
      throw detail::StageError("inject", e);
    } catch (const ConfigError& e) {
      throw detail::StageConfigError("inject", e);
    }

    const std::string truth_pgm = detail::join_path(run_dir, "truth_map.pgm");
    save_map_pgm(truth, truth_pgm);
    add_artifact(truth_pgm);

    // --- detection ------------------------------------------------------
    DetectionResult det;
    try {
      UNetConfig ucfg;
      ucfg.depth = cfg.det_depth;
      ucfg.base_channels = cfg.det_base_channels;
      auto unet = build_unet<float>(ucfg, cfg.det_tile, cfg.det_tile,
                                    derive_seed(seed, 0xDE7));
      if (!cfg.train_stages) {
        if (cfg.det_checkpoint.empty())
          throw ConfigError("training disabled and no detector.checkpoint");
        load_checkpoint(unet.g, cfg.det_checkpoint, ModelKind::unet);
      } else {
        std::vector<DetectorSample> samples;
        for (const auto& f : train_bad) {
          auto s = make_detector_samples(f, truth, cfg.det_tile, cfg.det_tile);
          samples.insert(samples.end(), s.begin(), s.end());
        }
        TrainHyper hyper;
        hyper.epochs = cfg.det_epochs;
        hyper.schedule = LrSchedule::step(cfg.det_lr, 0.5, 10);
        hyper.batch = cfg.det_batch;
        hyper.seed = derive_seed(seed, 0x7A1);
        const auto curve = train_detector(unet, samples, hyper);
        const std::string curve_path =
            detail::join_path(run_dir, "detector_loss.csv");
        detail::write_curve_csv(curve, curve_path);
        add_artifact(curve_path);
        const std::string ckpt = detail::join_path(run_dir, "detector.ckpt");
        save_checkpoint(unet.g, ckpt, ModelKind::unet, unet.digest());
        add_artifact(ckpt);
      }
      ProbAccumulator acc(calib_bad[0].width, calib_bad[0].height);
      for (const auto& f : calib_bad) calibrate(acc, predict_scores(unet, f));
      det.predicted = finalize_defect_map(acc, cfg.detect_threshold);
      det.estimated_rate = estimate_error_rate(det.predicted);
      det.pr = precision_recall(confusion(det.predicted, truth));
      det.n_frames = acc.n_frames;
    } catch (const DataError& e) {
      throw detail::StageError("detect", e);
    } catch (const ConfigError& e) {
      throw detail::StageConfigError("detect", e);
    }

    const std::string pred_pgm = detail::join_path(run_dir, "detected_map.pgm");
    save_map_pgm(det.predicted, pred_pgm);
    add_artifact(pred_pgm);
    const std::string pred_txt = detail::join_path(run_dir, "detected_map.txt");
    save_map_coords(det.predicted, pred_txt);
    add_artifact(pred_txt);

    // --- strategy + correction -----------------------------------------
    StrategyChoice choice = cfg.strategy;
    if (choice == StrategyChoice::auto_select)
      choice = (select_strategy(det.estimated_rate, cfg.strategy_threshold) ==
                Strategy::mlp)
                   ? StrategyChoice::mlp
                   : StrategyChoice::ae;

    std::vector<BayerImage> corrected;
    try {
      switch (choice) {
        case StrategyChoice::mlp: {
          MlpBank<float> bank;
          for (int ne : cfg.mlp_neighbor_errors) {
            MlpConfig mcfg{cfg.mlp_patch_size, cfg.mlp_hidden, ne};
            auto model =
                build_mlp<float>(mcfg, derive_seed(seed, 0x3E0 + ne));
            if (!cfg.train_stages) {
              if (cfg.mlp_bank_dir.empty())
                throw ConfigError("training disabled and no corrector.bank_dir");
              load_checkpoint(
                  model.g,
                  detail::join_path(cfg.mlp_bank_dir,
                                    "mlp_p" + std::to_string(mcfg.patch_size) +
                                        "_e" + std::to_string(ne) + ".ckpt"),
                  ModelKind::mlp);
            } else {
              auto ds = make_patch_dataset(frames.train, cfg.mlp_samples,
                                           cfg.mlp_patch_size, ne, cfg.delta,
                                           derive_seed(seed, 0xDA7A + ne));
              CorrectorHyper hyper;
              hyper.epochs = cfg.mlp_epochs;
              hyper.lr = cfg.mlp_lr;
              hyper.batch = cfg.mlp_batch;
              hyper.seed = derive_seed(seed, 0xC0 + ne);
              train_corrector(model, ds, hyper);
              const std::string ckpt = detail::join_path(
                  run_dir, "mlp_p" + std::to_string(mcfg.patch_size) + "_e" +
                               std::to_string(ne) + ".ckpt");
              save_checkpoint(model.g, ckpt, ModelKind::mlp, model.digest());
              add_artifact(ckpt);
            }
            bank.put(std::move(model));
          }
          for (const auto& f : test_bad)
            corrected.push_back(
                correct_pixels(f, det.predicted, bank, cfg.mlp_patch_size));
          break;
        }
        case StrategyChoice::ae: {
          VitConfig vcfg;
          vcfg.input_size = cfg.ae_input_size;
          vcfg.token_patch = cfg.ae_token_patch;
          vcfg.embed_dim = cfg.ae_embed_dim;
          vcfg.encoder_layers = cfg.ae_encoder_layers;
          vcfg.decoder_layers = cfg.ae_decoder_layers;
          vcfg.heads = cfg.ae_heads;
          vcfg.mlp_ratio = cfg.ae_mlp_ratio;
          vcfg.mask_center = false;
          auto vit = build_vit_ae<float>(vcfg, derive_seed(seed, 0xA3));
          if (!cfg.train_stages) {
            if (cfg.ae_checkpoint.empty())
              throw ConfigError("training disabled and no ae.checkpoint");
            load_checkpoint(vit.g, cfg.ae_checkpoint, ModelKind::vit_ae);
          } else {
            std::vector<ReconSample> pairs;
            for (std::size_t i = 0; i < frames.train.size(); ++i)
              pairs.push_back({train_bad[i], frames.train[i], truth});
            AeHyper hyper;
            hyper.epochs = cfg.ae_epochs;
            hyper.base_lr = cfg.ae_lr;
            hyper.warmup_epochs = cfg.ae_warmup;
            hyper.batch = cfg.ae_batch;
            hyper.seed = derive_seed(seed, 0xAE);
            const auto curve = train_ae(vit, pairs, hyper);
            const std::string curve_path =
                detail::join_path(run_dir, "ae_loss.csv");
            detail::write_curve_csv(curve, curve_path);
            add_artifact(curve_path);
            const std::string ckpt = detail::join_path(run_dir, "ae.ckpt");
            save_checkpoint(vit.g, ckpt, ModelKind::vit_ae, vit.digest());
            add_artifact(ckpt);
          }
          for (const auto& f : test_bad)
            corrected.push_back(reconstruct_with_map(vit, f, det.predicted));
          break;
        }
        case StrategyChoice::nearest:
          for (const auto& f : test_bad)
            corrected.push_back(correct_nearest(f, det.predicted));
          break;
        case StrategyChoice::linear:
          for (const auto& f : test_bad)
            corrected.push_back(correct_linear(f, det.predicted));
          break;
        case StrategyChoice::median:
          for (const auto& f : test_bad)
            corrected.push_back(correct_median(f, det.predicted));
          break;
        case StrategyChoice::auto_select:
          break;  // resolved above
      }
    } catch (const DataError& e) {
      throw detail::StageError("correct", e);
    } catch (const ConfigError& e) {
      throw detail::StageConfigError("correct", e);
    }

    for (std::size_t i = 0; i < corrected.size(); ++i) {
      const std::string p = detail::join_path(
          run_dir, "corrected_" + std::to_string(i) + ".pgm");
      save_pgm(corrected[i], p);
      add_artifact(p);
    }

    // --- metrics --------------------------------------------------------
    // NMSE over the true defective pixels, pooled across test frames; PSNR
    // over whole frames, pooled by MSE.
    double num = 0.0, den = 0.0, mse_sum = 0.0;
    std::int64_t mse_count = 0;
    for (std::size_t i = 0; i < corrected.size(); ++i) {
      const BayerImage& orig = frames.test[i];
      const BayerImage& corr = corrected[i];
      for (std::size_t px = 0; px < orig.data.size(); ++px) {
        const double d =
            static_cast<double>(corr.data[px]) - orig.data[px];
        mse_sum += d * d;
        ++mse_count;
        if (truth.mask[px]) {
          num += d * d;
          den += static_cast<double>(orig.data[px]) * orig.data[px];
        }
      }
    }
    MetricsRow row;
    row.run_id = "rate" + detail::fmt6(cfg.rate) + "_seed" +
                 std::to_string(seed) + "_" + to_string(choice);
    row.error_rate = cfg.rate;
    row.delta = cfg.delta;
    row.n_frames = det.n_frames;
    row.strategy = to_string(choice);
    row.recall = det.pr.recall;
    row.precision = det.pr.precision;
    if (den > 1e-12) row.nmse = num / den;
    const double mse = mse_sum / static_cast<double>(std::max<std::int64_t>(
                                     1, mse_count));
    if (mse == 0.0)
      row.psnr_infinite = true;
    else
      row.psnr = 10.0 * std::log10(1.0 / mse);
    row.extras.emplace_back("estimated_rate", det.estimated_rate);
    row.extras.emplace_back("true_rate", estimate_error_rate(truth));
    report.rows.push_back(std::move(row));
  }

  const std::string jsonl =
      detail::join_path(cfg.output_dir, "metrics.jsonl");
  emit_metrics_jsonl(report.rows, jsonl);
  add_artifact(jsonl);
  const std::string csv = detail::join_path(cfg.output_dir, "metrics.csv");
  emit_report_csv(report, csv);
  add_artifact(csv);
  emit_report_json(report,
                   detail::join_path(cfg.output_dir, "report.json"));
  return report;
}

/// Cartesian sweep over rates x strategies; each point is an independent
/// seeded pipeline run in its own subdirectory. Points may execute on a
/// small worker pool; the merged report keeps deterministic point order.
inline RunReport run_sweep(const ExperimentConfig& cfg) {
  if (cfg.sweep_rates.empty())
    throw ConfigError("sweep requires sweep.rates");
  struct Point {
    ExperimentConfig cfg;
    RunReport report;
    std::string error;
  };
  std::vector<Point> points;
  for (double rate : cfg.sweep_rates) {
    for (StrategyChoice st : cfg.sweep_strategies) {
      Point p;
      p.cfg = cfg;
      p.cfg.rate = rate;
      p.cfg.strategy = st;
      p.cfg.output_dir = detail::join_path(
          cfg.output_dir,
          "rate" + detail::fmt6(rate) + "_" + to_string(st));
      points.push_back(std::move(p));
    }
  }
  const int jobs = std::max(1, cfg.jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= points.size()) return;
      try {
        points[i].report = run_pipeline(points[i].cfg);
      } catch (const std::exception& e) {
        points[i].error = e.what();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  RunReport merged;
  merged.config_digest = cfg.digest();
  for (auto& p : points) {
    if (!p.error.empty())
      throw DataError(DataFault::bad_value,
                      "sweep point '" + p.cfg.output_dir + "': " + p.error);
    merged.rows.insert(merged.rows.end(), p.report.rows.begin(),
                       p.report.rows.end());
    merged.artifacts.insert(merged.artifacts.end(), p.report.artifacts.begin(),
                            p.report.artifacts.end());
  }
  emit_report_csv(merged, detail::join_path(cfg.output_dir, "sweep.csv"));
  emit_report_json(merged, detail::join_path(cfg.output_dir, "sweep.json"));
  return merged;
}

}  // namespace badpix
