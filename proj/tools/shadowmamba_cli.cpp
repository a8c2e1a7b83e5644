// shadowmamba command-line front end.
//
// Subcommands: denoise, scanviz, infer, train, eval, scanbench. Every run
// writes a JSON manifest next to its outputs recording the command, the
// paths involved, the seed, a timestamp, and the library version. Exit
// codes: 0 success, 2 usage error, 3 data error, 4 internal error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "shadowmamba/checkpoint.hpp"
#include "shadowmamba/image_io.hpp"
#include "shadowmamba/mask.hpp"
#include "shadowmamba/metrics.hpp"
#include "shadowmamba/model.hpp"
#include "shadowmamba/scan.hpp"
#include "shadowmamba/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- logging ----------------------------------------------------------------

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("SHADOWMAMBA_LOG");
    if (!env) return LogLevel::info;
    const std::string s(env);
    if (s == "error") return LogLevel::error;
    if (s == "warn") return LogLevel::warn;
    if (s == "info") return LogLevel::info;
    if (s == "debug") return LogLevel::debug;
    std::cerr << "warning: unknown SHADOWMAMBA_LOG value '" << s
              << "', using 'info'\n";
    return LogLevel::info;
  }();
  return level;
}

void log(LogLevel lv, const std::string& msg) {
  static const char* names[] = {"error", "warning", "info", "debug"};
  if (lv <= log_level())
    std::cerr << names[(int)lv] << ": " << msg << "\n";
}

// ---- manifests ----------------------------------------------------------------

std::string iso_utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// The manifest lands next to the primary output: "out/dir/manifest.json" for
// directory outputs, "name.manifest.json" for file outputs.
fs::path manifest_path_for(const fs::path& primary_output, bool is_dir) {
  if (is_dir) return primary_output / "manifest.json";
  fs::path p = primary_output;
  p.replace_extension();
  p += ".manifest.json";
  return p;
}

void write_manifest(const fs::path& primary_output, bool is_dir,
                    const std::string& command, const std::string& config_path,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, uint64_t seed,
                    int64_t param_count = -1) {
  json m;
  m["command"] = command;
  m["config"] = config_path;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["seed"] = seed;
  m["timestamp"] = iso_utc_now();
  m["library_version"] = sm::kLibraryVersion;
  if (param_count >= 0) m["param_count"] = param_count;
  const fs::path path = manifest_path_for(primary_output, is_dir);
  std::ofstream out(path);
  if (!out) throw sm::DataError("cannot write manifest: " + path.string());
  out << m.dump(2) << "\n";
}

// ---- small helpers ---------------------------------------------------------

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw sm::DataError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

void ensure_parent_dir(const fs::path& file) {
  const fs::path dir = file.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// ---- denoise ---------------------------------------------------------------

int cmd_denoise(const std::string& mask_path, const std::string& out_path,
                int se_size, int dilate_radius) {
  const sm::BinaryMask noisy = sm::read_mask_png(mask_path);
  const sm::BinaryMask clean =
      sm::denoise_mask(noisy, sm::StructuringElement{se_size}, dilate_radius);
  ensure_parent_dir(out_path);
  sm::write_mask_png(out_path, clean);
  write_manifest(out_path, false, "denoise", "", {mask_path}, {out_path}, 0);
  log(LogLevel::info, "denoised " + mask_path + " -> " + out_path);
  return 0;
}

// ---- scanviz ---------------------------------------------------------------

int cmd_scanviz(const std::string& mask_path, int window,
                const std::string& strategy_name,
                const std::string& direction_name,
                const std::string& out_path) {
  const sm::Strategy strategy = sm::strategy_from_string(strategy_name);
  const sm::Direction direction = sm::direction_from_string(direction_name);
  const sm::BinaryMask mask = sm::read_mask_png(mask_path);

  sm::ScanOrder order;
  switch (strategy) {
    case sm::Strategy::local:
      order = sm::build_local_order(mask.h, mask.w, window, direction);
      break;
    case sm::Strategy::cross:
      order = sm::build_cross_order(mask.h, mask.w, direction);
      break;
    case sm::Strategy::boundary_region:
      order = sm::build_boundary_region_order(
          sm::classify_windows(mask, window), mask.h, mask.w, window,
          direction);
      break;
  }

  // per-pixel sequence position, normalized to [0,1] for the heatmap
  const int64_t L = (int64_t)order.perm.size();
  sm::Image heat(1, mask.h, mask.w);
  for (int64_t pos = 0; pos < L; ++pos)
    heat.chw[order.perm[pos]] = L > 1 ? (double)pos / (double)(L - 1) : 0.0;
  ensure_parent_dir(out_path);
  sm::write_png(out_path, heat);

  json j;
  j["h"] = mask.h;
  j["w"] = mask.w;
  j["window"] = order.window;
  j["strategy"] = sm::to_string(strategy);
  j["direction"] = sm::to_string(direction);
  j["perm"] = order.perm;
  fs::path perm_path = fs::path(out_path);
  perm_path.replace_extension(".perm.json");
  std::ofstream out(perm_path);
  if (!out) throw sm::DataError("cannot write " + perm_path.string());
  out << j.dump() << "\n";

  write_manifest(out_path, false, "scanviz", "", {mask_path},
                 {out_path, perm_path.string()}, 0);
  log(LogLevel::info, "scan order written to " + out_path + " and " +
                          perm_path.string());
  return 0;
}

// ---- infer -----------------------------------------------------------------

int cmd_infer(const std::string& image_path, const std::string& mask_path,
              const std::string& ckpt_path, const std::string& out_path) {
  sm::Model<double> model = sm::load_checkpoint(ckpt_path);
  const sm::Image image = sm::read_png(image_path);
  if (image.c != 3)
    throw sm::DataError("expected a 3-channel image: " + image_path);
  const sm::BinaryMask raw_mask = sm::read_mask_png(mask_path);
  if (raw_mask.h != image.h || raw_mask.w != image.w)
    throw sm::DataError("image and mask dimensions differ");

  // masks from detectors are noisy; clean them up before building scan orders
  const sm::BinaryMask mask =
      sm::denoise_mask(raw_mask, sm::StructuringElement{3}, 5);
  const sm::ModelOutput<double> out = sm::unet_forward(model, image, mask);
  ensure_parent_dir(out_path);
  sm::write_png(out_path, out.restored);
  write_manifest(out_path, false, "infer", ckpt_path,
                 {image_path, mask_path, ckpt_path}, {out_path},
                 model.cfg.seed, model.param_count());
  log(LogLevel::info, "restored image written to " + out_path);
  return 0;
}

// ---- train -----------------------------------------------------------------

// A training sample is the file triple <stem>_input.png, <stem>_mask.png,
// <stem>_target.png inside the data directory.
std::vector<sm::ToyTriplet> load_triplets(const fs::path& dir) {
  std::vector<sm::ToyTriplet> data;
  std::vector<fs::path> inputs;
  for (const auto& f : sorted_pngs(dir)) {
    const std::string stem = f.stem().string();
    if (stem.size() > 6 && stem.substr(stem.size() - 6) == "_input")
      inputs.push_back(f);
  }
  for (const auto& in_path : inputs) {
    const std::string stem =
        in_path.stem().string().substr(0, in_path.stem().string().size() - 6);
    const fs::path mask_path = dir / (stem + "_mask.png");
    const fs::path target_path = dir / (stem + "_target.png");
    try {
      if (!fs::exists(mask_path) || !fs::exists(target_path))
        throw sm::DataError("missing mask or target for stem '" + stem + "'");
      sm::ToyTriplet t;
      t.shadowed = sm::read_png(in_path.string());
      t.target = sm::read_png(target_path.string());
      t.mask = sm::read_mask_png(mask_path.string());
      if (t.shadowed.c != 3 || t.target.c != 3)
        throw sm::DataError("input and target must be 3-channel");
      if (t.shadowed.h != t.target.h || t.shadowed.w != t.target.w ||
          t.mask.h != t.shadowed.h || t.mask.w != t.shadowed.w)
        throw sm::DataError("triplet dimensions differ");
      data.push_back(std::move(t));
    } catch (const sm::DataError& e) {
      log(LogLevel::warn,
          "skipping sample '" + stem + "': " + std::string(e.what()));
    }
  }
  return data;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const sm::TrainOptions& opt) {
  const sm::ModelConfig cfg = sm::load_model_config(config_path);
  const std::vector<sm::ToyTriplet> data = load_triplets(data_dir);
  if (data.empty())
    throw sm::DataError("no usable training samples in " + data_dir);
  log(LogLevel::info, "training on " + std::to_string(data.size()) +
                          " samples for " + std::to_string(opt.steps) +
                          " steps");

  sm::Model<double> model(cfg);
  const sm::TrainResult result = sm::train_toy(model, data, opt);

  fs::create_directories(out_dir);
  const fs::path ckpt_path = fs::path(out_dir) / "checkpoint.bin";
  sm::save_checkpoint(ckpt_path.string(), model);

  const fs::path trace_path = fs::path(out_dir) / "trace.csv";
  std::ofstream trace(trace_path);
  if (!trace) throw sm::DataError("cannot write " + trace_path.string());
  trace << "step,lr,loss\n";
  char line[96];
  for (const auto& row : result.trace) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g\n", row.step, row.lr,
                  row.loss);
    trace << line;
  }
  trace.close();

  write_manifest(out_dir, true, "train", config_path, {data_dir},
                 {ckpt_path.string(), trace_path.string()}, cfg.seed,
                 model.param_count());
  if (!result.trace.empty())
    log(LogLevel::info,
        "final loss " + std::to_string(result.trace.back().loss));
  return 0;
}

// ---- eval ------------------------------------------------------------------

// mean squared error must split exactly across the shadow partition; a
// violation means the metric implementation broke, not the data
void check_decomposition(const sm::Image& pred, const sm::Image& gt,
                         const sm::BinaryMask& mask,
                         const sm::MetricReport& rep,
                         const std::string& name) {
  const double all = sm::mse(pred, gt);
  double split = 0.0;
  if (rep.has_shadow) split += sm::mse(pred, gt, &mask) * rep.shadow_pixels;
  if (rep.has_non_shadow) {
    sm::BinaryMask inv(mask.h, mask.w);
    for (size_t p = 0; p < mask.bits.size(); ++p)
      inv.bits[p] = mask.bits[p] ? 0 : 1;
    split += sm::mse(pred, gt, &inv) * rep.non_shadow_pixels;
  }
  const double n = (double)mask.h * mask.w;
  if (std::abs(all - split / n) > 1e-9 * (all + 1e-12))
    throw std::runtime_error("region decomposition violated for " + name);
}

struct EvalRow {
  std::string name;
  std::string status;  // ok | missing_gt | missing_mask | error
  sm::MetricReport rep;
};

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir,
             const std::string& mask_dir, const std::string& out_path) {
  std::vector<EvalRow> rows;
  for (const auto& pred_path : sorted_pngs(pred_dir)) {
    EvalRow row;
    row.name = pred_path.filename().string();
    const fs::path gt_path = fs::path(gt_dir) / row.name;
    const fs::path mask_path = fs::path(mask_dir) / row.name;
    if (!fs::exists(gt_path)) {
      row.status = "missing_gt";
    } else if (!fs::exists(mask_path)) {
      row.status = "missing_mask";
    } else {
      try {
        const sm::Image pred = sm::read_png(pred_path.string());
        const sm::Image gt = sm::read_png(gt_path.string());
        const sm::BinaryMask mask = sm::read_mask_png(mask_path.string());
        row.rep = sm::evaluate_pair(pred, gt, mask);
        check_decomposition(pred, gt, mask, row.rep, row.name);
        row.status = "ok";
      } catch (const sm::UsageError& e) {
        row.status = "error";
        log(LogLevel::warn, row.name + ": " + std::string(e.what()));
      } catch (const sm::DataError& e) {
        row.status = "error";
        log(LogLevel::warn, row.name + ": " + std::string(e.what()));
      }
    }
    if (row.status != "ok")
      log(LogLevel::warn, row.name + " excluded from aggregate (" +
                              row.status + ")");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw sm::DataError("no .png files in " + pred_dir);

  ensure_parent_dir(out_path);
  std::ofstream csv(out_path);
  if (!csv) throw sm::DataError("cannot write " + out_path);
  csv << "image,status,psnr_all,ssim_all,rmae_all,psnr_shadow,ssim_shadow,"
         "rmae_shadow,psnr_nonshadow,ssim_nonshadow,rmae_nonshadow,"
         "shadow_pixels,nonshadow_pixels\n";
  for (const auto& row : rows) {
    csv << row.name << "," << row.status;
    if (row.status == "ok") {
      const auto& r = row.rep;
      auto triple = [&](const sm::MetricTriple& t, bool present) {
        if (present)
          csv << "," << fmt(t.psnr) << "," << fmt(t.ssim) << ","
              << fmt(t.rmae);
        else
          csv << ",,,";
      };
      triple(r.all, true);
      triple(r.shadow, r.has_shadow);
      triple(r.non_shadow, r.has_non_shadow);
      csv << "," << r.shadow_pixels << "," << r.non_shadow_pixels;
    } else {
      csv << ",,,,,,,,,,,,";
    }
    csv << "\n";
  }
  csv.close();

  // aggregate: mean over rows with a finite value for each column
  json agg;
  agg["images_total"] = rows.size();
  std::vector<std::string> missing;
  int64_t used = 0;
  auto mean_of = [&](auto getter) {
    double sum = 0.0;
    int64_t n = 0;
    for (const auto& row : rows) {
      if (row.status != "ok") continue;
      const double v = getter(row.rep);
      if (std::isfinite(v)) {
        sum += v;
        ++n;
      }
    }
    return n > 0 ? sum / (double)n : std::numeric_limits<double>::quiet_NaN();
  };
  for (const auto& row : rows) {
    if (row.status == "ok") ++used;
    else missing.push_back(row.name + " (" + row.status + ")");
  }
  agg["images_used"] = used;
  agg["excluded"] = missing;
  json m;
  m["psnr_all"] = mean_of([](const sm::MetricReport& r) { return r.all.psnr; });
  m["ssim_all"] = mean_of([](const sm::MetricReport& r) { return r.all.ssim; });
  m["rmae_all"] = mean_of([](const sm::MetricReport& r) { return r.all.rmae; });
  m["psnr_shadow"] = mean_of([](const sm::MetricReport& r) {
    return r.has_shadow ? r.shadow.psnr : std::numeric_limits<double>::quiet_NaN();
  });
  m["ssim_shadow"] = mean_of([](const sm::MetricReport& r) {
    return r.has_shadow ? r.shadow.ssim : std::numeric_limits<double>::quiet_NaN();
  });
  m["rmae_shadow"] = mean_of([](const sm::MetricReport& r) {
    return r.has_shadow ? r.shadow.rmae : std::numeric_limits<double>::quiet_NaN();
  });
  m["psnr_nonshadow"] = mean_of([](const sm::MetricReport& r) {
    return r.has_non_shadow ? r.non_shadow.psnr
                            : std::numeric_limits<double>::quiet_NaN();
  });
  m["ssim_nonshadow"] = mean_of([](const sm::MetricReport& r) {
    return r.has_non_shadow ? r.non_shadow.ssim
                            : std::numeric_limits<double>::quiet_NaN();
  });
  m["rmae_nonshadow"] = mean_of([](const sm::MetricReport& r) {
    return r.has_non_shadow ? r.non_shadow.rmae
                            : std::numeric_limits<double>::quiet_NaN();
  });
  agg["mean"] = m;
  fs::path agg_path = fs::path(out_path);
  agg_path.replace_extension(".json");
  std::ofstream jout(agg_path);
  if (!jout) throw sm::DataError("cannot write " + agg_path.string());
  jout << agg.dump(2) << "\n";

  write_manifest(out_path, false, "eval", "", {pred_dir, gt_dir, mask_dir},
                 {out_path, agg_path.string()}, 0);
  log(LogLevel::info, "evaluated " + std::to_string(used) + "/" +
                          std::to_string(rows.size()) + " images");
  return 0;
}

// ---- scanbench ---------------------------------------------------------------

int cmd_scanbench(const std::string& masks_dir, int window,
                  const std::string& out_path) {
  const std::vector<fs::path> files = sorted_pngs(masks_dir);
  if (files.empty()) throw sm::DataError("no .png masks in " + masks_dir);

  ensure_parent_dir(out_path);
  std::ofstream csv(out_path);
  if (!csv) throw sm::DataError("cannot write " + out_path);
  csv << "mask,category,windows,local_mean,local_max,br_mean,br_max,ratio\n";
  for (const auto& f : files) {
    const sm::BinaryMask mask = sm::read_mask_png(f.string());
    const sm::WindowClassGrid classes = sm::classify_windows(mask, window);
    const sm::ScanOrder local = sm::build_local_order(
        mask.h, mask.w, window, sm::Direction::horizontal);
    const sm::ScanOrder br = sm::build_boundary_region_order(
        classes, mask.h, mask.w, window, sm::Direction::horizontal);
    const sm::CategoryDistanceStats ls =
        sm::intra_category_distance_stats(local, classes);
    const sm::CategoryDistanceStats bs =
        sm::intra_category_distance_stats(br, classes);
    for (int c = 0; c < 3; ++c) {
      if (!ls.category[c].present) continue;
      const auto& l = ls.category[c];
      const auto& b = bs.category[c];
      const double ratio = l.mean > 0.0 ? b.mean / l.mean : 1.0;
      csv << f.filename().string() << "," << c << "," << l.windows << ","
          << fmt(l.mean) << "," << l.max << "," << fmt(b.mean) << ","
          << b.max << "," << fmt(ratio) << "\n";
    }
  }
  csv.close();
  write_manifest(out_path, false, "scanbench", "", {masks_dir}, {out_path},
                 0);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shadowmamba: boundary-region selective scanning toolkit"};
  app.require_subcommand(1);

  // denoise
  std::string dn_mask, dn_out;
  int dn_se = 3, dn_radius = 5;
  CLI::App* dn = app.add_subcommand("denoise", "clean up a binary shadow mask");
  dn->add_option("--mask", dn_mask, "input mask PNG")->required();
  dn->add_option("--out", dn_out, "output mask PNG")->required();
  dn->add_option("--se-size", dn_se, "structuring element size (odd)");
  dn->add_option("--dilate-radius", dn_radius, "rough-region dilation radius");

  // scanviz
  std::string sv_mask, sv_strategy = "boundary_region",
              sv_direction = "horizontal", sv_out;
  int sv_window = 8;
  CLI::App* sv = app.add_subcommand("scanviz", "visualize a scan order");
  sv->add_option("--mask", sv_mask, "mask PNG")->required();
  sv->add_option("--window", sv_window, "window size");
  sv->add_option("--strategy", sv_strategy,
                 "local | cross | boundary_region");
  sv->add_option("--direction", sv_direction,
                 "horizontal | vertical | horizontal_reverse | "
                 "vertical_reverse");
  sv->add_option("--out", sv_out, "heatmap PNG path")->required();

  // infer
  std::string in_image, in_mask, in_ckpt, in_out;
  CLI::App* in = app.add_subcommand("infer", "remove shadows from one image");
  in->add_option("--image", in_image, "shadowed RGB PNG")->required();
  in->add_option("--mask", in_mask, "shadow mask PNG")->required();
  in->add_option("--checkpoint", in_ckpt, "model checkpoint")->required();
  in->add_option("--out", in_out, "restored PNG path")->required();

  // train
  std::string tr_config, tr_data, tr_out;
  sm::TrainOptions tr_opt;
  CLI::App* tr = app.add_subcommand("train", "overfit on a small triplet set");
  tr->add_option("--config", tr_config, "model config JSON")->required();
  tr->add_option("--data", tr_data,
                 "directory of <stem>_{input,mask,target}.png triplets")
      ->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--steps", tr_opt.steps, "optimizer steps");
  tr->add_option("--batch-size", tr_opt.batch_size, "samples per step");
  tr->add_option("--lr-start", tr_opt.lr_start, "initial learning rate");
  tr->add_option("--lr-end", tr_opt.lr_end, "final learning rate");

  // eval
  std::string ev_pred, ev_gt, ev_mask, ev_out;
  CLI::App* ev = app.add_subcommand("eval", "score predictions against truth");
  ev->add_option("--pred", ev_pred, "predictions directory")->required();
  ev->add_option("--gt", ev_gt, "ground-truth directory")->required();
  ev->add_option("--mask", ev_mask, "mask directory")->required();
  ev->add_option("--out", ev_out, "report CSV path")->required();

  // scanbench
  std::string sb_masks, sb_out;
  int sb_window = 8;
  CLI::App* sb =
      app.add_subcommand("scanbench", "intra-category scan distance stats");
  sb->add_option("--masks", sb_masks, "directory of mask PNGs")->required();
  sb->add_option("--window", sb_window, "window size");
  sb->add_option("--out", sb_out, "report CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (dn->parsed()) return cmd_denoise(dn_mask, dn_out, dn_se, dn_radius);
    if (sv->parsed())
      return cmd_scanviz(sv_mask, sv_window, sv_strategy, sv_direction,
                         sv_out);
    if (in->parsed()) return cmd_infer(in_image, in_mask, in_ckpt, in_out);
    if (tr->parsed()) return cmd_train(tr_config, tr_data, tr_out, tr_opt);
    if (ev->parsed()) return cmd_eval(ev_pred, ev_gt, ev_mask, ev_out);
    if (sb->parsed()) return cmd_scanbench(sb_masks, sb_window, sb_out);
  } catch (const sm::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const sm::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
