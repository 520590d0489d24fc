// pyrabox command-line interface: anchors, label, sample, train, infer, eval,
// gradcheck, selftest.
//
// Exit codes: 0 success, 1 usage/flag error, 2 data/format error,
// 3 numeric failure (non-finite loss, failed gradient check, failed selftest).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pyrabox/pyrabox.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pyrabox;

namespace {

NetworkConfig config_from(const std::string& path) {
  if (path.empty()) return NetworkConfig{};
  return load_config(path);
}

AnchorGrid grid_for(const NetworkConfig& cfg) {
  auto sizes = tap_sizes(cfg);
  return build_grid(sizes, sizes);
}

std::ostream& open_out(std::ofstream& file, const std::string& path) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw parse_error(path + ": cannot open for writing");
  return file;
}

std::vector<SampleRecord> records_with_faces(const std::string& path) {
  auto recs = parse_annotations_file(path);
  std::vector<SampleRecord> out;
  for (auto& r : recs)
    if (!r.faces.empty()) out.push_back(std::move(r));
  if (out.empty()) throw parse_error(path + ": no records with faces");
  return out;
}

int cmd_anchors(const std::string& config_path, const std::string& out_path) {
  NetworkConfig cfg = config_from(config_path);
  AnchorGrid grid = grid_for(cfg);
  std::ofstream file;
  std::ostream& out = open_out(file, out_path);
  for (int l = 0; l < grid.num_layers(); ++l)
    for (int r = 0; r < grid.feat_h[static_cast<size_t>(l)]; ++r)
      for (int c = 0; c < grid.feat_w[static_cast<size_t>(l)]; ++c) {
        const BoxPx& b = grid.boxes[static_cast<size_t>(l)]
                             [static_cast<size_t>(r) * grid.feat_w[static_cast<size_t>(l)] + c];
        json j = {{"layer", l}, {"row", r}, {"col", c},
                  {"x_min", b.x}, {"y_min", b.y}, {"side", b.w}};
        out << j.dump() << "\n";
      }
  return 0;
}

int cmd_label(const std::string& config_path, const std::string& ann_path,
              const std::string& out_path) {
  NetworkConfig cfg = config_from(config_path);
  AnchorGrid grid = grid_for(cfg);
  auto recs = parse_annotations_file(ann_path);
  int K = cfg.pyramid.K;
  std::vector<std::vector<int64_t>> per_layer(static_cast<size_t>(K) + 1,
                                              std::vector<int64_t>(static_cast<size_t>(grid.num_layers()), 0));
  std::vector<int64_t> positives(static_cast<size_t>(K) + 1, 0), ignores(static_cast<size_t>(K) + 1, 0);
  for (const auto& rec : recs) {
    PyramidLabelSet labels = label_pyramid(grid, rec.faces, cfg.pyramid);
    for (int k = 0; k <= K; ++k) {
      const auto& lb = labels.branch[static_cast<size_t>(k)];
      for (int l = 0; l < grid.num_layers(); ++l) {
        int64_t off = grid.layer_offset(l);
        int64_t n = static_cast<int64_t>(grid.boxes[static_cast<size_t>(l)].size());
        for (int64_t a = off; a < off + n; ++a) {
          auto v = lb.p_star[static_cast<size_t>(a)];
          if (v == AnchorLabel::kPositive) {
            ++per_layer[static_cast<size_t>(k)][static_cast<size_t>(l)];
            ++positives[static_cast<size_t>(k)];
          } else if (v == AnchorLabel::kIgnore) {
            ++ignores[static_cast<size_t>(k)];
          }
        }
      }
    }
  }
  json branches = json::array();
  for (int k = 0; k <= K; ++k)
    branches.push_back({{"k", k},
                        {"positives", positives[static_cast<size_t>(k)]},
                        {"ignored", ignores[static_cast<size_t>(k)]},
                        {"per_layer_positives", per_layer[static_cast<size_t>(k)]}});
  json summary = {{"num_images", recs.size()},
                  {"num_anchors_per_image", grid.total_count()},
                  {"branches", branches}};
  std::ofstream file;
  std::ostream& out = open_out(file, out_path);
  out << summary.dump(2) << "\n";
  return 0;
}

int cmd_sample(const std::string& config_path, const std::string& ann_path,
               const std::string& images_root, int n, std::uint64_t seed,
               const std::string& out_dir) {
  NetworkConfig cfg = config_from(config_path);
  auto recs = records_with_faces(ann_path);
  fs::create_directories(out_dir);
  std::mt19937_64 rng(seed);
  std::vector<SampleRecord> out_recs;
  std::vector<SamplerDraw> draws;
  for (int i = 0; i < n; ++i) {
    const SampleRecord& rec = recs[std::uniform_int_distribution<size_t>(0, recs.size() - 1)(rng)];
    Raster img = load_ppm((fs::path(images_root) / rec.path).string());
    TrainCrop crop = data_anchor_sample(img, rec.faces, rng, cfg.input_size);
    char name[32];
    std::snprintf(name, sizeof(name), "crop_%06d.ppm", i);
    save_ppm((fs::path(out_dir) / name).string(), crop.image);
    out_recs.push_back({name, crop.faces});
    draws.push_back(crop.provenance);
  }
  serialize_annotations_file((fs::path(out_dir) / "annotations.txt").string(), out_recs);
  std::ofstream csv((fs::path(out_dir) / "histogram.csv").string());
  if (!csv) throw parse_error(out_dir + "/histogram.csv: cannot open for writing");
  write_histogram_csv(csv, sample_report(draws));
  std::cout << "wrote " << n << " crops to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& ann_path,
              const std::string& images_root, int64_t steps, std::uint64_t seed,
              const std::string& out_path, int threads, int64_t log_every) {
  NetworkConfig cfg = config_from(config_path);
  if (seed != 0) cfg.seed = seed;
  auto recs = records_with_faces(ann_path);
  if (steps <= 0) {
    steps = 0;
    for (const auto& s : cfg.lr_schedule) steps += s.steps;
  }
  Trainer trainer(cfg, threads);
  std::mt19937_64 rng(cfg.seed);
  // cache decoded images: desk-scale datasets fit in memory
  std::vector<Raster> images(recs.size());
  for (size_t i = 0; i < recs.size(); ++i)
    images[i] = load_ppm((fs::path(images_root) / recs[i].path).string());
  for (int64_t s = 0; s < steps; ++s) {
    std::vector<TrainCrop> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      size_t r = std::uniform_int_distribution<size_t>(0, recs.size() - 1)(rng);
      batch.push_back(data_anchor_sample(images[r], recs[r].faces, rng, cfg.input_size));
    }
    StepStats stats = trainer.train_step(batch);
    if (log_every > 0 && (s % log_every == 0 || s + 1 == steps))
      std::cout << "step " << s << " lr " << lr_at(s, cfg.lr_schedule)
                << " loss " << stats.total << "\n";
  }
  save_model(trainer.model().params(), out_path);
  std::cout << "saved model to " << out_path << "\n";
  return 0;
}

int cmd_infer(const std::string& config_path, const std::string& model_path,
              const std::string& image_path, const std::string& out_path,
              double score_thr, double nms_thr) {
  NetworkConfig cfg = config_from(config_path);
  Model<float> model(cfg);
  adopt_params(model, load_model(model_path), model_path);
  AnchorGrid grid = grid_for(cfg);
  Raster img = load_ppm(image_path);
  auto dets = infer(model, grid, img, score_thr, nms_thr);
  std::ofstream file;
  std::ostream& out = open_out(file, out_path);
  write_detections(out, image_path, dets);
  std::cerr << dets.size() << " detections\n";
  return 0;
}

int cmd_eval(const std::string& det_path, const std::string& ann_path,
             const std::string& out_path, double iou_thr) {
  std::ifstream df(det_path);
  if (!df) throw parse_error(det_path + ": cannot open");
  NamedDetections nd = parse_detections(df, det_path);
  auto gt_recs = parse_annotations_file(ann_path);
  std::vector<std::vector<BoxPx>> gts;
  std::vector<std::vector<Detection>> dets;
  for (const auto& rec : gt_recs) {
    gts.push_back(rec.faces);
    auto it = std::find(nd.paths.begin(), nd.paths.end(), rec.path);
    dets.push_back(it == nd.paths.end()
                       ? std::vector<Detection>{}
                       : nd.per_image[static_cast<size_t>(it - nd.paths.begin())]);
  }
  EvalReport rep = evaluate(dets, gts, iou_thr);
  std::cout << "AP " << rep.ap << " (small " << rep.ap_small << ", medium " << rep.ap_medium
            << ", large " << rep.ap_large << ", gt " << rep.num_gt << ")\n";
  if (!out_path.empty()) {
    std::ofstream csv(out_path);
    if (!csv) throw parse_error(out_path + ": cannot open for writing");
    write_eval_csv(csv, rep);
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto randu = [&](std::vector<int> shape, double lo = -1, double hi = 1) {
    Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
  };
  std::vector<GradCheckReport> reports;
  reports.push_back(gradcheck("conv2d", {randu({1, 2, 6, 6}), randu({3, 2, 3, 3}, -0.5, 0.5), randu({3})},
                              [](std::vector<Tensor<double>>& in) {
                                return sum(conv2d(in[0], in[1], in[2], {1, 1, 1}));
                              }));
  reports.push_back(gradcheck("relu", {randu({1, 3, 4, 4})}, [](std::vector<Tensor<double>>& in) {
    return sum(relu(in[0]));
  }));
  reports.push_back(gradcheck("mul_add", {randu({2, 5}), randu({2, 5})},
                              [](std::vector<Tensor<double>>& in) {
                                return sum(add(mul(in[0], in[1]), in[0]));
                              }));
  reports.push_back(gradcheck("maxpool2x", {randu({1, 2, 4, 4})}, [](std::vector<Tensor<double>>& in) {
    return sum(mul(maxpool2x(in[0]), maxpool2x(in[0])));
  }));
  reports.push_back(gradcheck("upsample2x_nearest", {randu({1, 2, 3, 3})},
                              [](std::vector<Tensor<double>>& in) {
                                Tensor<double> y = upsample2x(in[0], UpsampleMode::kNearest);
                                return sum(mul(y, y));
                              }));
  reports.push_back(gradcheck("upsample2x_bilinear", {randu({1, 2, 3, 3})},
                              [](std::vector<Tensor<double>>& in) {
                                Tensor<double> y = upsample2x(in[0], UpsampleMode::kBilinear);
                                return sum(mul(y, y));
                              }));
  reports.push_back(gradcheck("l2_rescale", {randu({1, 3, 2, 2}, 0.2, 1.0), randu({3}, 0.5, 2.0)},
                              [](std::vector<Tensor<double>>& in) {
                                Tensor<double> y = l2_rescale(in[0], in[1]);
                                return sum(mul(y, y));
                              }));
  reports.push_back(gradcheck("softmax_channels", {randu({1, 4, 2, 2})},
                              [](std::vector<Tensor<double>>& in) {
                                Tensor<double> s = softmax_channels(in[0], 0, 4);
                                return sum(mul(s, s));
                              }));
  reports.push_back(gradcheck("channel_group_max", {randu({1, 6, 3, 3})},
                              [](std::vector<Tensor<double>>& in) {
                                Tensor<double> m = channel_group_max(in[0], 1, 4);
                                return sum(mul(m, m));
                              }));
  reports.push_back(gradcheck("slice_concat", {randu({1, 6, 2, 2})},
                              [](std::vector<Tensor<double>>& in) {
                                Tensor<double> a = slice_channels(in[0], 0, 2);
                                Tensor<double> b = slice_channels(in[0], 2, 4);
                                Tensor<double> y = concat_channels<double>({a, b});
                                return sum(mul(y, y));
                              }));
  {
    NetworkConfig cfg;
    cfg.input_size = 64;
    cfg.width_factor = 1.0 / 32.0;
    cfg.cpm_width = 16;
    cfg.lfpn_start = 2;
    cfg.seed = seed;
    Model<double> model(cfg);
    Tensor<double> x = randu({1, cfg.lfpn_width(), 6, 6});
    reports.push_back(gradcheck("cpm", {x}, [&](std::vector<Tensor<double>>& in) {
      Tensor<double> y = model.cpm(in[0], 0);
      return sum(mul(y, y));
    }));
  }
  {
    AnchorGrid grid = build_grid({3, 2, 1, 1, 1, 1}, {3, 2, 1, 1, 1, 1});
    PyramidAnchorConfig pc;
    pc.hard_negative_mining = false;
    std::vector<BoxPx> faces = {{-6, -6, 16, 16}, {0, 0, 30, 30}};
    PyramidLabelSet labels = label_pyramid(grid, faces, pc);
    std::vector<Tensor<double>> maps;
    for (int l = 0; l < grid.num_layers(); ++l)
      maps.push_back(randu({1, kHeadChannels, grid.feat_h[static_cast<size_t>(l)],
                            grid.feat_w[static_cast<size_t>(l)]}));
    reports.push_back(gradcheck("pyramid_loss", maps, [&](std::vector<Tensor<double>>& in) {
      return pyramid_loss(in, grid, labels, pc).total;
    }));
  }

  bool all_pass = true;
  std::printf("%-22s %-14s %s\n", "op", "max_rel_err", "status");
  for (const auto& r : reports) {
    all_pass = all_pass && r.pass;
    std::printf("%-22s %-14.3e %s\n", r.name.c_str(), r.max_rel_err, r.pass ? "pass" : "FAIL");
  }
  if (!all_pass) throw numeric_error("gradient check failed");
  return 0;
}

int cmd_selftest() {
  struct Row {
    std::string name;
    bool pass;
  };
  std::vector<Row> rows;
  auto check = [&](const std::string& name, bool ok) { rows.push_back({name, ok}); };

  NetworkConfig cfg;
  check("receptive field table",
        receptive_field(cfg, 1).rf_pixels == 108 && receptive_field(cfg, 2).rf_pixels == 228 &&
            receptive_field(cfg, 3).rf_pixels == 340 && receptive_field(cfg, 4).rf_pixels == 468 &&
            receptive_field(cfg, 5).rf_pixels == 724);
  check("lfpn auto start", select_lfpn_start(cfg) == 3);

  {
    BoxPx anchor{100, 100, 64, 64}, face{110, 90, 50, 80};
    auto t = encode_base(anchor, face);
    auto k1 = encode_targets(anchor, face, 1, ContextTransformParams::defaults(1));
    auto k2 = encode_targets(anchor, face, 2, ContextTransformParams::defaults(2));
    bool ok = std::abs(k1[0] - (t[0] - t[2] / 2)) < 1e-12 && std::abs(k1[2] - 2 * t[2]) < 1e-12 &&
              std::abs(k2[0] - (t[0] - 21.0 / 16.0 * t[2])) < 1e-12 &&
              std::abs(k2[2] - 3.5 * t[2]) < 1e-12 && std::abs(k2[3] - 2 * t[3]) < 1e-12;
    check("context target substitution", ok);
  }
  check("sampler worked example", nearest_anchor_index(140) == 3 &&
                                      std::abs(32.0 / 140.0 - 0.228571) < 1e-5);
  {
    BoxPx a{0, 0, 10, 10}, b{5, 5, 10, 10};
    check("iou fixture", std::abs(iou(a, b) - 25.0 / 175.0) < 1e-12);
  }
  {
    std::vector<Detection> two = {{{0, 0, 10, 10}, 0.9, 0}, {{1, 1, 10, 10}, 0.8, 0}};
    check("nms suppression", nms(two, 0.5).size() == 1);
  }
  {
    std::vector<std::vector<BoxPx>> gts = {{{0, 0, 10, 10}, {50, 50, 10, 10}}};
    std::vector<std::vector<Detection>> dets = {{{{0, 0, 10, 10}, 0.9, 0},
                                                 {{100, 100, 10, 10}, 0.8, 0},
                                                 {{50, 50, 10, 10}, 0.7, 0}}};
    check("ap fixture 5/6", std::abs(evaluate(dets, gts).ap - 5.0 / 6.0) < 1e-12);
  }
  {
    NetworkConfig tiny;
    tiny.input_size = 64;
    tiny.width_factor = 1.0 / 32.0;
    tiny.cpm_width = 16;
    tiny.lfpn_start = 2;
    Model<float> model(tiny);
    std::stringstream ss;
    save_model(model.params(), ss);
    ParamStore<float> loaded = load_model(ss);
    bool ok = loaded.size() == model.params().size();
    for (const auto& [name, t] : model.params()) {
      if (!ok) break;
      ok = loaded.count(name) && loaded.at(name).values() == t.values();
    }
    check("model io round trip", ok);
  }

  bool all_pass = true;
  std::printf("%-32s %s\n", "invariant", "status");
  for (const auto& r : rows) {
    all_pass = all_pass && r.pass;
    std::printf("%-32s %s\n", r.name.c_str(), r.pass ? "pass" : "FAIL");
  }
  if (!all_pass) throw numeric_error("selftest failed");
  return 0;
}

std::string config_help() {
  NetworkConfig d;
  std::ostringstream os;
  os << "JSON config file; keys and defaults:\n"
     << "  input_size=" << d.input_size << " width_factor=" << d.width_factor
     << " lfpn_start=auto lfpn_merge=" << d.lfpn_merge << "\n"
     << "  upsample_mode=" << d.upsample_mode << " cpm_width=" << d.cpm_width
     << " s_pa=" << d.pyramid.s_pa << " K=" << d.pyramid.K << "\n"
     << "  threshold=" << d.pyramid.threshold << " lambda=" << d.pyramid.lambda_cls
     << " lambda_k=[1,0.5,0.25] variance=[1,1,1,1]\n"
     << "  lr_schedule=[[80000,0.001],[20000,0.0001],[20000,0.00001]]"
     << " batch_size=" << d.batch_size << " seed=" << d.seed;
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pyrabox: a desk-scale context-aware face detection pipeline"};
  app.require_subcommand(1);

  std::string config_path, ann_path, images_root, out_path, model_path, image_path, det_path,
      out_dir;
  int n = 100, threads = 1;
  int64_t steps = 0, log_every = 10;
  std::uint64_t seed = 7;
  double score_thr = 0.5, nms_thr = 0.3, iou_thr = 0.5;

  auto* anchors = app.add_subcommand("anchors", "Dump the anchor grid as JSONL");
  anchors->add_option("--config", config_path, config_help());
  anchors->add_option("--out", out_path, "output path ('-' = stdout)");

  auto* label = app.add_subcommand("label", "Summarize pyramid labels over a dataset");
  label->add_option("--config", config_path, config_help());
  label->add_option("--annotations", ann_path, "annotation file")->required();
  label->add_option("--out", out_path, "output path ('-' = stdout)");

  auto* sample = app.add_subcommand("sample", "Draw scale-targeted training crops");
  sample->add_option("--config", config_path, config_help());
  sample->add_option("--annotations", ann_path, "annotation file")->required();
  sample->add_option("--images-root", images_root, "directory containing the images")->required();
  sample->add_option("--n", n, "number of crops (default 100)");
  sample->add_option("--seed", seed, "RNG seed (default 7)");
  sample->add_option("--out-dir", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "Train a detector");
  train->add_option("--config", config_path, config_help());
  train->add_option("--annotations", ann_path, "annotation file")->required();
  train->add_option("--images-root", images_root, "directory containing the images")->required();
  train->add_option("--steps", steps, "step count (default: full lr schedule)");
  train->add_option("--seed", seed, "overrides the config seed when nonzero");
  train->add_option("--threads", threads, "worker threads (default 1)");
  train->add_option("--log-every", log_every, "log interval in steps (0 = quiet)");
  train->add_option("--out", out_path, "model output path")->required();

  auto* infer_cmd = app.add_subcommand("infer", "Detect faces in one image");
  infer_cmd->add_option("--config", config_path, config_help());
  infer_cmd->add_option("--model", model_path, "trained model file")->required();
  infer_cmd->add_option("--image", image_path, "input PPM image")->required();
  infer_cmd->add_option("--out", out_path, "detections output ('-' = stdout)");
  infer_cmd->add_option("--score-threshold", score_thr, "min face probability (default 0.5)");
  infer_cmd->add_option("--nms-threshold", nms_thr, "NMS IoU threshold (default 0.3)");

  auto* eval_cmd = app.add_subcommand("eval", "Score detections against ground truth");
  eval_cmd->add_option("--detections", det_path, "detections file")->required();
  eval_cmd->add_option("--annotations", ann_path, "ground-truth annotation file")->required();
  eval_cmd->add_option("--out", out_path, "PR-curve CSV output path");
  eval_cmd->add_option("--iou-threshold", iou_thr, "match IoU threshold (default 0.5)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op");
  gc->add_option("--seed", seed, "RNG seed (default 7)");

  app.add_subcommand("selftest", "Run the built-in invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (app.got_subcommand("anchors")) return cmd_anchors(config_path, out_path);
    if (app.got_subcommand("label")) return cmd_label(config_path, ann_path, out_path);
    if (app.got_subcommand("sample"))
      return cmd_sample(config_path, ann_path, images_root, n, seed, out_dir);
    if (app.got_subcommand("train"))
      return cmd_train(config_path, ann_path, images_root, steps,
                       train->count("--seed") ? seed : 0, out_path, threads, log_every);
    if (app.got_subcommand("infer"))
      return cmd_infer(config_path, model_path, image_path, out_path, score_thr, nms_thr);
    if (app.got_subcommand("eval")) return cmd_eval(det_path, ann_path, out_path, iou_thr);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck(seed);
    if (app.got_subcommand("selftest")) return cmd_selftest();
  } catch (const numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const contract_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
