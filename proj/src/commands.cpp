#include "tdseg/commands.hpp"

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "tdseg/train.hpp"

namespace tdseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json cfg_to_json(const RunConfig& c) {
  return json{{"command", c.command},
              {"out_dir", c.out_dir},
              {"data_dir", c.data_dir},
              {"arch_path", c.arch_path},
              {"ckpt_path", c.ckpt_path},
              {"resume_path", c.resume_path},
              {"seed", c.seed},
              {"n_train", c.n_train},
              {"n_val", c.n_val},
              {"canvas", c.canvas},
              {"classes", c.classes},
              {"epochs", c.epochs},
              {"pretrain_epochs", c.pretrain_epochs},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"batch", c.batch},
              {"init", c.init},
              {"theta_attention", c.theta_attention},
              {"modulation", c.modulation},
              {"levels", c.levels},
              {"inputs", c.inputs},
              {"alpha_td", c.alpha_td},
              {"alpha_loss", c.alpha_loss},
              {"theta_pos", c.theta_pos},
              {"theta_neg", c.theta_neg},
              {"max_targets", c.max_targets},
              {"split", c.split},
              {"kinds", c.kinds},
              {"sigmas", c.sigmas},
              {"sample_index", c.sample_index},
              {"ablate_inits", c.ablate_inits},
              {"ablate_mods", c.ablate_mods},
              {"ablate_inputs", c.ablate_inputs},
              {"ablate_levels", c.ablate_levels}};
}

RunConfig cfg_from_json(const json& j) {
  RunConfig c;
  j.at("command").get_to(c.command);
  j.at("out_dir").get_to(c.out_dir);
  j.at("data_dir").get_to(c.data_dir);
  j.at("arch_path").get_to(c.arch_path);
  j.at("ckpt_path").get_to(c.ckpt_path);
  j.at("resume_path").get_to(c.resume_path);
  j.at("seed").get_to(c.seed);
  j.at("n_train").get_to(c.n_train);
  j.at("n_val").get_to(c.n_val);
  j.at("canvas").get_to(c.canvas);
  j.at("classes").get_to(c.classes);
  j.at("epochs").get_to(c.epochs);
  j.at("pretrain_epochs").get_to(c.pretrain_epochs);
  j.at("lr").get_to(c.lr);
  j.at("momentum").get_to(c.momentum);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("batch").get_to(c.batch);
  j.at("init").get_to(c.init);
  j.at("theta_attention").get_to(c.theta_attention);
  j.at("modulation").get_to(c.modulation);
  j.at("levels").get_to(c.levels);
  j.at("inputs").get_to(c.inputs);
  j.at("alpha_td").get_to(c.alpha_td);
  j.at("alpha_loss").get_to(c.alpha_loss);
  j.at("theta_pos").get_to(c.theta_pos);
  j.at("theta_neg").get_to(c.theta_neg);
  j.at("max_targets").get_to(c.max_targets);
  j.at("split").get_to(c.split);
  j.at("kinds").get_to(c.kinds);
  j.at("sigmas").get_to(c.sigmas);
  j.at("sample_index").get_to(c.sample_index);
  j.at("ablate_inits").get_to(c.ablate_inits);
  j.at("ablate_mods").get_to(c.ablate_mods);
  j.at("ablate_inputs").get_to(c.ablate_inputs);
  j.at("ablate_levels").get_to(c.ablate_levels);
  return c;
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
  }
  fs::rename(tmp, path);
}

// the snapshot is written last: its presence marks a completed run
void finalize(const RunConfig& cfg) {
  write_text_atomic(cfg.out_dir + "/config.json", to_json(cfg));
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

ModelConfig model_config(const RunConfig& cfg) {
  ModelConfig m;
  m.classes = cfg.classes;
  m.init = parse_init_strategy(cfg.init);
  m.theta_attention = cfg.theta_attention;
  m.dec.mode = parse_modulation(cfg.modulation);
  m.dec.levels = cfg.levels;
  m.dec.inputs = parse_decoder_inputs(cfg.inputs);
  m.alpha_td = cfg.alpha_td;
  m.loss.alpha_loss = cfg.alpha_loss;
  m.loss.theta_pos = cfg.theta_pos;
  m.loss.theta_neg = cfg.theta_neg;
  m.loss.max_targets = cfg.max_targets;
  if (m.loss.theta_neg >= m.loss.theta_pos)
    throw std::invalid_argument("theta_neg must be below theta_pos");
  return m;
}

SgdConfig sgd_config(const RunConfig& cfg) {
  SgdConfig s;
  s.lr = cfg.lr;
  s.momentum = cfg.momentum;
  s.weight_decay = cfg.weight_decay;
  s.batch = cfg.batch;
  s.epochs = cfg.epochs;
  return s;
}

TrainDataset load_data(const RunConfig& cfg) {
  require(!cfg.data_dir.empty(), "--data is required");
  TrainDataset d = load_dataset(cfg.data_dir);
  d.classes = cfg.classes;
  return d;
}

const std::vector<Sample>& pick_split(const TrainDataset& d, const std::string& split) {
  if (split == "val") return d.val;
  if (split == "train") return d.train;
  throw std::invalid_argument("unknown split: " + split);
}

Model make_model(const RunConfig& cfg, const NetworkSpec& spec, bool with_decoder,
                 uint64_t seed) {
  Model m;
  m.spec = spec;
  m.cfg = model_config(cfg);
  m.init_params(seed, with_decoder);
  return m;
}

void write_summary(const std::string& path, const std::vector<std::pair<std::string, double>>& rows) {
  std::ostringstream ss;
  ss << "metric,value\n";
  for (const auto& [k, v] : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s,%.17g\n", k.c_str(), v);
    ss << buf;
  }
  write_text_atomic(path, ss.str());
}

// unit-level confusion metrics of the detection head against assigned anchor
// labels; the head analog of the segmentation metrics
std::pair<double, double> head_unit_metrics(const TrainDataset& data,
                                            const std::vector<Sample>& split, Model& model) {
  auto probe = model.forward_head(Tensor::zeros({1, model.spec.in_channels, data.target, data.target}));
  auto anchors = unit_anchors(model.spec, probe.det.scores, data.target, data.target);
  ConfusionMatrix cm(data.classes);
  const int B = 4;
  for (size_t off = 0; off < split.size(); off += B) {
    std::vector<Sample> batch;
    for (size_t i = off; i < std::min(split.size(), off + B); ++i)
      batch.push_back(eval_transform(split[i], data.target, data.mean));
    std::vector<const Sample*> ptrs;
    for (const auto& s : batch) ptrs.push_back(&s);
    auto head = model.forward_head(to_input_tensor(ptrs, data.mean));
    for (int n = 0; n < (int)batch.size(); ++n) {
      auto targets = assign_targets(anchors, batch[n].boxes, model.cfg.loss);
      std::vector<int> pred(targets.size());
      std::vector<uint8_t> gt(targets.size());
      for (int u = 0; u < head.det.scores.total_units; ++u) {
        gt[u] = (uint8_t)std::min(targets[u], 255);
        auto lg = head.det.scores.unit_logits(n, u);
        int best = 0;
        for (size_t c = 1; c < lg.size(); ++c)
          if (lg[c] > lg[best]) best = (int)c;
        pred[u] = best;
      }
      cm.accumulate(pred, gt);
    }
  }
  return {cm.mean_pixel_accuracy(), cm.mean_iou()};
}

}  // namespace

std::string to_json(const RunConfig& cfg) { return cfg_to_json(cfg).dump(2) + "\n"; }

RunConfig run_config_from_json(const std::string& text) {
  return cfg_from_json(json::parse(text));
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("cannot open config snapshot: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return run_config_from_json(ss.str());
}

void cmd_synth(const RunConfig& cfg) {
  require(!cfg.out_dir.empty(), "--out is required");
  require(cfg.n_train > 0, "--n must be positive");
  fs::create_directories(cfg.out_dir);
  auto train = synth_generate(cfg.seed, cfg.n_train, cfg.canvas, cfg.classes);
  auto val = synth_generate(mix_seed(cfg.seed, fnv1a64("val")), cfg.n_val, cfg.canvas, cfg.classes);
  write_split(cfg.out_dir + "/train", train);
  write_split(cfg.out_dir + "/val", val);
  write_mean_pixel(cfg.out_dir + "/mean.txt", mean_pixel(train));
  std::ostringstream meta;
  meta << "k " << cfg.classes << "\ncanvas " << cfg.canvas << "\nn_train " << cfg.n_train
       << "\nn_val " << cfg.n_val << "\nseed " << cfg.seed << "\n";
  write_text_atomic(cfg.out_dir + "/meta.txt", meta.str());
  finalize(cfg);
}

void cmd_pretrain(const RunConfig& cfg) {
  require(!cfg.out_dir.empty() && !cfg.arch_path.empty(), "--out and --arch are required");
  fs::create_directories(cfg.out_dir);
  auto data = load_data(cfg);
  NetworkSpec spec = load_network_config(cfg.arch_path);
  SgdConfig scfg = sgd_config(cfg);
  scfg.epochs = cfg.pretrain_epochs;
  ModelConfig mcfg = model_config(cfg);
  Checkpoint resume;
  const bool has_resume = !cfg.resume_path.empty();
  if (has_resume) resume = load_checkpoint(cfg.resume_path);
  auto r = pretrain_head(data, spec, mcfg, scfg, cfg.seed, has_resume ? &resume : nullptr);
  save_checkpoint(cfg.out_dir + "/checkpoint.bin", r.ckpt);
  write_text_atomic(cfg.out_dir + "/metrics.csv", r.metrics_csv);

  Model model = make_model(cfg, spec, false, cfg.seed);
  restore_params(r.ckpt, model.params);
  auto [macc, miou] = head_unit_metrics(data, data.val, model);
  write_summary(cfg.out_dir + "/summary.csv",
                {{"val_anchor_accuracy", head_anchor_accuracy(data, data.val, model)},
                 {"val_unit_mean_accuracy", macc},
                 {"val_unit_mean_iou", miou}});
  finalize(cfg);
}

void cmd_train(const RunConfig& cfg) {
  require(!cfg.out_dir.empty() && !cfg.arch_path.empty(), "--out and --arch are required");
  require(!cfg.ckpt_path.empty(), "--ckpt (phase-1 checkpoint) is required");
  fs::create_directories(cfg.out_dir);
  auto data = load_data(cfg);
  NetworkSpec spec = load_network_config(cfg.arch_path);
  Checkpoint init = load_checkpoint(cfg.ckpt_path);
  Checkpoint resume;
  const bool has_resume = !cfg.resume_path.empty();
  if (has_resume) resume = load_checkpoint(cfg.resume_path);
  auto r = train_multiloss(data, spec, model_config(cfg), sgd_config(cfg), init, cfg.seed,
                           has_resume ? &resume : nullptr);
  save_checkpoint(cfg.out_dir + "/checkpoint.bin", r.ckpt);
  write_text_atomic(cfg.out_dir + "/metrics.csv", r.metrics_csv);
  finalize(cfg);
}

void cmd_eval(const RunConfig& cfg) {
  require(!cfg.out_dir.empty() && !cfg.arch_path.empty() && !cfg.ckpt_path.empty(),
          "--out, --arch and --ckpt are required");
  fs::create_directories(cfg.out_dir);
  auto data = load_data(cfg);
  NetworkSpec spec = load_network_config(cfg.arch_path);
  Model model = make_model(cfg, spec, true, cfg.seed);
  restore_params(load_checkpoint(cfg.ckpt_path), model.params);
  const auto& split = pick_split(data, cfg.split);
  auto r = evaluate(data, split, model);
  write_text_atomic(cfg.out_dir + "/metrics.csv", r.metrics_csv);
  write_summary(cfg.out_dir + "/summary.csv", {{"mean_pixel_accuracy", r.per_image_macc},
                                               {"mean_iou", r.per_image_miou},
                                               {"confusion_mean_pixel_accuracy", r.cm_macc},
                                               {"confusion_mean_iou", r.cm_miou}});
  for (size_t i = 0; i < r.masks.size(); ++i) {
    std::vector<uint8_t> m(r.masks[i].size());
    for (size_t j = 0; j < m.size(); ++j) m[j] = (uint8_t)r.masks[i][j];
    char name[64];
    std::snprintf(name, sizeof name, "/pred_%05d.pgm", (int)i);
    write_pgm(cfg.out_dir + name, data.target, data.target, m);
  }
  finalize(cfg);
}

void cmd_perturb(const RunConfig& cfg) {
  require(!cfg.out_dir.empty() && !cfg.arch_path.empty() && !cfg.ckpt_path.empty(),
          "--out, --arch and --ckpt are required");
  fs::create_directories(cfg.out_dir);
  auto data = load_data(cfg);
  NetworkSpec spec = load_network_config(cfg.arch_path);
  Model model = make_model(cfg, spec, true, cfg.seed);
  restore_params(load_checkpoint(cfg.ckpt_path), model.params);
  const auto& split = pick_split(data, cfg.split);

  std::ostringstream csv;
  csv << "kind,sigma,mean_pixel_accuracy,mean_iou,confusion_mean_pixel_accuracy,confusion_mean_iou\n";
  for (const auto& kind : cfg.kinds) {
    for (double sigma : cfg.sigmas) {
      EvalOptions opts;
      opts.use_perturb = true;
      opts.perturb = {parse_perturb_kind(kind), sigma, cfg.seed};
      auto r = evaluate(data, split, model, opts);
      char row[256];
      std::snprintf(row, sizeof row, "%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", kind.c_str(), sigma,
                    r.per_image_macc, r.per_image_miou, r.cm_macc, r.cm_miou);
      csv << row;
    }
  }
  write_text_atomic(cfg.out_dir + "/degradation.csv", csv.str());
  finalize(cfg);
}

void cmd_ablate(const RunConfig& cfg) {
  require(!cfg.out_dir.empty() && !cfg.arch_path.empty(), "--out and --arch are required");
  fs::create_directories(cfg.out_dir);
  auto data = load_data(cfg);
  NetworkSpec spec = load_network_config(cfg.arch_path);

  auto inits = cfg.ablate_inits.empty() ? std::vector<std::string>{"gt", "top1", "threshold"}
                                        : cfg.ablate_inits;
  auto mods = cfg.ablate_mods.empty() ? std::vector<std::string>{"add", "mul", "concat"}
                                      : cfg.ablate_mods;
  auto levels = cfg.ablate_levels.empty() ? std::vector<int>{1, 2, 3} : cfg.ablate_levels;
  auto inputs = cfg.ablate_inputs.empty() ? std::vector<std::string>{"both", "bu", "td"}
                                          : cfg.ablate_inputs;

  // phase 1 is shared: it does not depend on the decoder axes
  RunConfig pre = cfg;
  SgdConfig pre_sgd = sgd_config(cfg);
  pre_sgd.epochs = cfg.pretrain_epochs;
  auto phase1 = pretrain_head(data, spec, model_config(pre), pre_sgd, cfg.seed);

  std::ostringstream csv;
  csv << "init,modulation,levels,inputs,mean_pixel_accuracy,mean_iou\n";
  for (const auto& init : inits)
    for (const auto& mod : mods)
      for (int lv : levels)
        for (const auto& in : inputs) {
          RunConfig rc = cfg;
          rc.init = init;
          rc.modulation = mod;
          rc.levels = lv;
          rc.inputs = in;
          auto r = train_multiloss(data, spec, model_config(rc), sgd_config(rc), phase1.ckpt,
                                   cfg.seed);
          Model model = make_model(rc, spec, true, cfg.seed);
          restore_params(r.ckpt, model.params);
          auto ev = evaluate(data, data.val, model);
          char row[256];
          std::snprintf(row, sizeof row, "%s,%s,%d,%s,%.17g,%.17g\n", init.c_str(), mod.c_str(),
                        lv, in.c_str(), ev.cm_macc, ev.cm_miou);
          csv << row;
        }
  write_text_atomic(cfg.out_dir + "/ablation.csv", csv.str());
  finalize(cfg);
}

void cmd_gate_dump(const RunConfig& cfg) {
  require(!cfg.out_dir.empty() && !cfg.arch_path.empty() && !cfg.ckpt_path.empty(),
          "--out, --arch and --ckpt are required");
  fs::create_directories(cfg.out_dir);
  auto data = load_data(cfg);
  NetworkSpec spec = load_network_config(cfg.arch_path);
  Model model = make_model(cfg, spec, true, cfg.seed);
  restore_params(load_checkpoint(cfg.ckpt_path), model.params);
  const auto& split = pick_split(data, cfg.split);
  require(cfg.sample_index >= 0 && cfg.sample_index < (int)split.size(),
          "--sample-index out of range");

  Sample s = eval_transform(split[cfg.sample_index], data.target, data.mean);
  std::vector<const Sample*> ptrs = {&s};
  std::vector<std::vector<int>> gt_targets;
  if (model.cfg.init == InitStrategy::GroundTruth) {
    auto probe = model.forward_head(Tensor::zeros({1, spec.in_channels, data.target, data.target}));
    auto anchors = unit_anchors(spec, probe.det.scores, data.target, data.target);
    gt_targets.push_back(assign_targets(anchors, s.boxes, model.cfg.loss));
  }
  auto full = model.forward_full(to_input_tensor(ptrs, data.mean),
                                 gt_targets.empty() ? nullptr : &gt_targets);

  for (const auto& [layer, g] : full.gates.gates) {
    const Shape sh = g.shape();
    std::vector<double> plane((size_t)sh.h * sh.w, 0.0);
    double mx = 0.0;
    for (int c = 0; c < sh.c; ++c)
      for (size_t i = 0; i < plane.size(); ++i) {
        plane[i] = std::max(plane[i], g.value()[(size_t)c * plane.size() + i]);
        mx = std::max(mx, plane[i]);
      }
    std::vector<uint8_t> img(plane.size(), 0);
    if (mx > 0)
      for (size_t i = 0; i < plane.size(); ++i)
        img[i] = (uint8_t)std::lround(255.0 * plane[i] / mx);
    char name[64];
    std::snprintf(name, sizeof name, "/gate_layer%02d.pgm", layer);
    write_pgm(cfg.out_dir + name, sh.h, sh.w, img);
  }
  finalize(cfg);
}

void run_command(const RunConfig& cfg) {
  if (cfg.command == "synth") return cmd_synth(cfg);
  if (cfg.command == "pretrain") return cmd_pretrain(cfg);
  if (cfg.command == "train") return cmd_train(cfg);
  if (cfg.command == "eval") return cmd_eval(cfg);
  if (cfg.command == "perturb") return cmd_perturb(cfg);
  if (cfg.command == "ablate") return cmd_ablate(cfg);
  if (cfg.command == "gate-dump") return cmd_gate_dump(cfg);
  throw std::invalid_argument("unknown command: " + cfg.command);
}

}  // namespace tdseg
