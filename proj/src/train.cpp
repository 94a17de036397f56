#include "tdseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tdseg {

void Optimizer::ensure(const ParamRegistry& params) {
  if (velocity.size() == params.items().size()) return;
  velocity.clear();
  for (const auto& [name, t] : params.items()) velocity.emplace_back(t.numel(), 0.0);
}

void Optimizer::step(ParamRegistry& params, const SgdConfig& cfg) {
  ensure(params);
  for (size_t i = 0; i < params.items().size(); ++i) {
    auto& [name, t] = params.items()[i];
    if (!t.has_grad()) continue;
    const auto& g = t.grad();
    auto& p = t.value_mut();
    auto& v = velocity[i];
    const double wd = decays(name) ? cfg.weight_decay : 0.0;
    for (size_t j = 0; j < p.size(); ++j) {
      if (!std::isfinite(g[j]))
        throw std::runtime_error("non-finite gradient in " + name + " at element " +
                                 std::to_string(j));
      v[j] = cfg.momentum * v[j] + g[j] + wd * p[j];
      p[j] -= cfg.lr * v[j];
    }
  }
}

// ---- checkpoint io -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'D', 'S', 'G', 'C', 'K', 'P', '1'};

template <typename T>
void put(std::ostream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& f) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!f) throw std::runtime_error("truncated checkpoint");
  return v;
}

void put_tensors(std::ostream& f, const std::vector<std::pair<std::string, Tensor>>& ts) {
  put<uint32_t>(f, (uint32_t)ts.size());
  for (const auto& [name, t] : ts) {
    put<uint32_t>(f, (uint32_t)name.size());
    f.write(name.data(), (std::streamsize)name.size());
    const Shape s = t.shape();
    put<int32_t>(f, s.n);
    put<int32_t>(f, s.c);
    put<int32_t>(f, s.h);
    put<int32_t>(f, s.w);
    f.write(reinterpret_cast<const char*>(t.value().data()),
            (std::streamsize)(t.numel() * sizeof(double)));
  }
}

std::vector<std::pair<std::string, Tensor>> get_tensors(std::istream& f) {
  std::vector<std::pair<std::string, Tensor>> out;
  const uint32_t n = get<uint32_t>(f);
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t len = get<uint32_t>(f);
    std::string name(len, '\0');
    f.read(name.data(), len);
    Shape s{get<int32_t>(f), get<int32_t>(f), get<int32_t>(f), get<int32_t>(f)};
    std::vector<double> data((size_t)s.numel());
    f.read(reinterpret_cast<char*>(data.data()), (std::streamsize)(data.size() * sizeof(double)));
    if (!f) throw std::runtime_error("truncated checkpoint tensor " + name);
    out.emplace_back(name, Tensor::from_data(s, std::move(data)));
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f.write(kMagic, 8);
    put<uint64_t>(f, ckpt.config_hash);
    put<uint32_t>(f, ckpt.epoch);
    put<uint64_t>(f, ckpt.root_seed);
    put_tensors(f, ckpt.tensors);
    put_tensors(f, ckpt.velocities);
  }
  std::remove(path.c_str());
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot finalize checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  Checkpoint c;
  c.config_hash = get<uint64_t>(f);
  c.epoch = get<uint32_t>(f);
  c.root_seed = get<uint64_t>(f);
  c.tensors = get_tensors(f);
  c.velocities = get_tensors(f);
  return c;
}

Checkpoint snapshot_state(const Model& m, const Optimizer& opt, uint32_t epoch,
                          uint64_t root_seed, uint64_t config_hash) {
  Checkpoint c;
  c.config_hash = config_hash;
  c.epoch = epoch;
  c.root_seed = root_seed;
  for (const auto& [name, t] : m.params.items())
    c.tensors.emplace_back(name, Tensor::from_data(t.shape(), t.value()));
  for (size_t i = 0; i < opt.velocity.size(); ++i) {
    const auto& [name, t] = m.params.items()[i];
    c.velocities.emplace_back(name, Tensor::from_data(t.shape(), opt.velocity[i]));
  }
  return c;
}

void restore_params(const Checkpoint& ckpt, ParamRegistry& params) {
  for (const auto& [name, t] : ckpt.tensors) {
    Tensor* dst = params.find(name);
    if (!dst) continue;
    if (dst->shape() != t.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    dst->value_mut() = t.value();
  }
}

void restore_velocities(const Checkpoint& ckpt, ParamRegistry& params, Optimizer& opt) {
  opt.ensure(params);
  for (const auto& [name, t] : ckpt.velocities) {
    for (size_t i = 0; i < params.items().size(); ++i)
      if (params.items()[i].first == name) {
        if ((int64_t)opt.velocity[i].size() != t.numel())
          throw std::runtime_error("velocity shape mismatch for " + name);
        opt.velocity[i] = t.value();
      }
  }
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

uint64_t config_fingerprint(const NetworkSpec& spec, const ModelConfig& mcfg,
                            const SgdConfig& scfg) {
  std::ostringstream ss;
  ss << serialize_network_config(spec) << "|k=" << mcfg.classes
     << "|init=" << format_init_strategy(mcfg.init) << "|theta=" << mcfg.theta_attention
     << "|mod=" << format_modulation(mcfg.dec.mode) << "|levels=" << mcfg.dec.levels
     << "|inputs=" << format_decoder_inputs(mcfg.dec.inputs) << "|atd=" << mcfg.alpha_td
     << "|aloss=" << mcfg.loss.alpha_loss << "|lr=" << scfg.lr << "|mom=" << scfg.momentum
     << "|wd=" << scfg.weight_decay << "|batch=" << scfg.batch;
  return fnv1a64(ss.str());
}

TrainDataset load_dataset(const std::string& root) {
  TrainDataset d;
  d.train = read_split(root + "/train");
  d.val = read_split(root + "/val");
  d.mean = read_mean_pixel(root + "/mean.txt");
  std::ifstream meta(root + "/meta.txt");
  if (meta) {
    std::string key;
    while (meta >> key) {
      if (key == "k") meta >> d.classes;
      if (key == "canvas") meta >> d.target;
    }
  }
  if (d.train.empty()) throw std::runtime_error("dataset has no training split: " + root);
  return d;
}

// ---- training loops ---------------------------------------------------------

namespace {

struct BatchInputs {
  Tensor x;
  std::vector<std::vector<int>> assigned;  // raw anchor labels per sample
  std::vector<std::vector<int>> sampled;   // after budget sampling
  std::vector<int> seg_labels;             // n*h*w concatenated
};

BatchInputs make_train_batch(const TrainDataset& data, const std::vector<int>& idx,
                             const std::vector<Box>& anchors, const LossConfig& loss_cfg,
                             uint64_t seed, int epoch, int step) {
  BatchInputs b;
  std::vector<Sample> transformed;
  transformed.reserve(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    Rng aug = sub_rng(seed, fnv1a64("aug"), (uint64_t)epoch, (uint64_t)idx[i]);
    transformed.push_back(train_transform(data.train[idx[i]], data.target, aug));
  }
  std::vector<const Sample*> ptrs;
  for (const auto& s : transformed) ptrs.push_back(&s);
  b.x = to_input_tensor(ptrs, data.mean);
  for (size_t i = 0; i < transformed.size(); ++i) {
    auto assigned = assign_targets(anchors, transformed[i].boxes, loss_cfg);
    Rng smp = sub_rng(seed, fnv1a64("sample"), (uint64_t)epoch, (uint64_t)(step * 16 + (int)i));
    b.sampled.push_back(sample_targets(assigned, smp, loss_cfg));
    b.assigned.push_back(std::move(assigned));
    for (uint8_t v : transformed[i].mask) b.seg_labels.push_back(v);
  }
  return b;
}

std::vector<int> shuffled_indices(size_t n, uint64_t seed, int epoch) {
  std::vector<int> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = (int)i;
  Rng rng = sub_rng(seed, fnv1a64("shuffle"), (uint64_t)epoch);
  for (size_t i = 0; i + 1 < n; ++i) {
    const size_t j = i + rng.uniform_int(n - i);
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

}  // namespace

TrainResult pretrain_head(const TrainDataset& data, const NetworkSpec& spec,
                          const ModelConfig& mcfg, const SgdConfig& scfg, uint64_t seed,
                          const Checkpoint* resume) {
  Model model;
  model.spec = spec;
  model.cfg = mcfg;
  model.init_params(seed, false);
  Optimizer opt;
  opt.ensure(model.params);
  int start_epoch = 0;
  const uint64_t hash = config_fingerprint(spec, mcfg, scfg);
  if (resume) {
    if (resume->config_hash != hash) throw std::runtime_error("checkpoint belongs to another configuration");
    restore_params(*resume, model.params);
    restore_velocities(*resume, model.params, opt);
    start_epoch = (int)resume->epoch;
  }

  // anchors are fixed by the architecture and input extent
  auto probe = model.forward_head(Tensor::zeros({1, spec.in_channels, data.target, data.target}));
  auto anchors = unit_anchors(spec, probe.det.scores, data.target, data.target);

  std::ostringstream csv;
  csv << "epoch,loss,anchor_accuracy\n";
  double last_loss = 0.0;
  for (int epoch = start_epoch; epoch < scfg.epochs; ++epoch) {
    auto order = shuffled_indices(data.train.size(), seed, epoch);
    double loss_sum = 0.0;
    int64_t hits = 0, totals = 0;
    int steps = 0;
    for (size_t off = 0; off < order.size(); off += scfg.batch, ++steps) {
      std::vector<int> idx(order.begin() + off,
                           order.begin() + std::min(order.size(), off + scfg.batch));
      auto b = make_train_batch(data, idx, anchors, mcfg.loss, seed, epoch, steps);
      auto head = model.forward_head(b.x);
      Tensor loss = detect_loss(head.det.scores, b.sampled);
      if (!std::isfinite(loss.item())) throw std::runtime_error("detection loss diverged");
      model.params.zero_grads();
      backward(loss);
      opt.step(model.params, scfg);
      loss_sum += loss.item();
      for (int n = 0; n < (int)idx.size(); ++n)
        for (int u = 0; u < head.det.scores.total_units; ++u) {
          const int t = b.sampled[n][u];
          if (t == kDontCare) continue;
          auto lg = head.det.scores.unit_logits(n, u);
          int best = 0;
          for (size_t c = 1; c < lg.size(); ++c)
            if (lg[c] > lg[best]) best = (int)c;
          hits += best == t;
          ++totals;
        }
    }
    last_loss = loss_sum / steps;
    char row[128];
    std::snprintf(row, sizeof row, "%d,%.17g,%.17g\n", epoch, last_loss,
                  totals ? (double)hits / totals : 0.0);
    csv << row;
  }
  TrainResult r;
  r.ckpt = snapshot_state(model, opt, (uint32_t)scfg.epochs, seed, hash);
  r.metrics_csv = csv.str();
  r.final_loss = last_loss;
  return r;
}

TrainResult train_multiloss(const TrainDataset& data, const NetworkSpec& spec,
                            const ModelConfig& mcfg, const SgdConfig& scfg,
                            const Checkpoint& init, uint64_t seed, const Checkpoint* resume) {
  Model model;
  model.spec = spec;
  model.cfg = mcfg;
  model.init_params(seed, true);
  restore_params(init, model.params);  // encoder + head from phase 1
  Optimizer opt;
  opt.ensure(model.params);
  int start_epoch = 0;
  const uint64_t hash = config_fingerprint(spec, mcfg, scfg);
  if (resume) {
    if (resume->config_hash != hash) throw std::runtime_error("checkpoint belongs to another configuration");
    restore_params(*resume, model.params);
    restore_velocities(*resume, model.params, opt);
    start_epoch = (int)resume->epoch;
  }

  auto probe = model.forward_head(Tensor::zeros({1, spec.in_channels, data.target, data.target}));
  auto anchors = unit_anchors(spec, probe.det.scores, data.target, data.target);

  std::ostringstream csv;
  csv << "epoch,loss_total,loss_detect,loss_seg\n";
  double last_loss = 0.0;
  for (int epoch = start_epoch; epoch < scfg.epochs; ++epoch) {
    auto order = shuffled_indices(data.train.size(), seed, epoch);
    double lt = 0, ld = 0, ls = 0;
    int steps = 0;
    for (size_t off = 0; off < order.size(); off += scfg.batch, ++steps) {
      std::vector<int> idx(order.begin() + off,
                           order.begin() + std::min(order.size(), off + scfg.batch));
      auto b = make_train_batch(data, idx, anchors, mcfg.loss, seed, epoch, steps);
      auto full = model.forward_full(b.x, &b.assigned);
      Tensor det_term = detect_loss(full.det.scores, b.sampled);
      Tensor seg_term = seg_loss(full.seg_logits, b.seg_labels);
      Tensor loss = total_loss(det_term, seg_term, mcfg.loss.alpha_loss);
      if (!std::isfinite(loss.item())) throw std::runtime_error("joint loss diverged");
      model.params.zero_grads();
      backward(loss);
      opt.step(model.params, scfg);
      lt += loss.item();
      ld += det_term.item();
      ls += seg_term.item();
    }
    last_loss = lt / steps;
    char row[160];
    std::snprintf(row, sizeof row, "%d,%.17g,%.17g,%.17g\n", epoch, lt / steps, ld / steps,
                  ls / steps);
    csv << row;
  }
  TrainResult r;
  r.ckpt = snapshot_state(model, opt, (uint32_t)scfg.epochs, seed, hash);
  r.metrics_csv = csv.str();
  r.final_loss = last_loss;
  return r;
}

EvalResult evaluate(const TrainDataset& data, const std::vector<Sample>& split, Model& model,
                    const EvalOptions& opts) {
  EvalResult res;
  ConfusionMatrix cm(data.classes);
  std::ostringstream csv;
  csv << "index,mean_pixel_accuracy,mean_iou\n";
  const int B = 4;
  auto probe = model.forward_head(Tensor::zeros({1, model.spec.in_channels, data.target, data.target}));
  auto anchors = unit_anchors(model.spec, probe.det.scores, data.target, data.target);

  for (size_t off = 0; off < split.size(); off += B) {
    std::vector<Sample> batch;
    for (size_t i = off; i < std::min(split.size(), off + B); ++i) {
      Sample s = eval_transform(split[i], data.target, data.mean);
      if (opts.use_perturb) {
        PerturbSpec ps = opts.perturb;
        ps.seed = mix_seed(opts.perturb.seed, fnv1a64("perturb"), i);
        s.image = perturb(s.image, s.h, s.w, ps);
      }
      batch.push_back(std::move(s));
    }
    std::vector<const Sample*> ptrs;
    for (const auto& s : batch) ptrs.push_back(&s);
    Tensor x = to_input_tensor(ptrs, data.mean);

    std::vector<std::vector<int>> gt_targets;
    if (model.cfg.init == InitStrategy::GroundTruth)
      for (const auto& s : batch) gt_targets.push_back(assign_targets(anchors, s.boxes, model.cfg.loss));
    auto full = model.forward_full(x, gt_targets.empty() ? nullptr : &gt_targets);
    auto labels = predict_mask(full.seg_logits);

    const size_t plane = (size_t)data.target * data.target;
    for (size_t n = 0; n < batch.size(); ++n) {
      std::vector<int> pred(labels.begin() + n * plane, labels.begin() + (n + 1) * plane);
      const auto& gt = batch[n].mask;
      const double a = mean_pixel_accuracy(pred, gt, data.classes);
      const double j = mean_iou(pred, gt, data.classes);
      cm.accumulate(pred, gt);
      res.image_macc.push_back(a);
      res.image_miou.push_back(j);
      res.masks.push_back(std::move(pred));
      char row[128];
      std::snprintf(row, sizeof row, "%d,%.17g,%.17g\n", (int)(off + n), a, j);
      csv << row;
    }
  }
  for (double v : res.image_macc) res.per_image_macc += v;
  for (double v : res.image_miou) res.per_image_miou += v;
  if (!res.image_macc.empty()) {
    res.per_image_macc /= (double)res.image_macc.size();
    res.per_image_miou /= (double)res.image_miou.size();
  }
  res.cm_macc = cm.mean_pixel_accuracy();
  res.cm_miou = cm.mean_iou();
  res.metrics_csv = csv.str();
  return res;
}

double head_anchor_accuracy(const TrainDataset& data, const std::vector<Sample>& split,
                            Model& model) {
  auto probe = model.forward_head(Tensor::zeros({1, model.spec.in_channels, data.target, data.target}));
  auto anchors = unit_anchors(model.spec, probe.det.scores, data.target, data.target);
  int64_t hit = 0, total = 0;
  const int B = 4;
  for (size_t off = 0; off < split.size(); off += B) {
    std::vector<Sample> batch;
    for (size_t i = off; i < std::min(split.size(), off + B); ++i)
      batch.push_back(eval_transform(split[i], data.target, data.mean));
    std::vector<const Sample*> ptrs;
    for (const auto& s : batch) ptrs.push_back(&s);
    auto head = model.forward_head(to_input_tensor(ptrs, data.mean));
    std::vector<std::vector<int>> targets;
    for (const auto& s : batch) targets.push_back(assign_targets(anchors, s.boxes, model.cfg.loss));
    for (int n = 0; n < (int)batch.size(); ++n)
      for (int u = 0; u < head.det.scores.total_units; ++u) {
        if (targets[n][u] == kDontCare) continue;
        auto lg = head.det.scores.unit_logits(n, u);
        int best = 0;
        for (size_t c = 1; c < lg.size(); ++c)
          if (lg[c] > lg[best]) best = (int)c;
        hit += best == targets[n][u];
        ++total;
      }
  }
  return total ? (double)hit / total : 0.0;
}

}  // namespace tdseg
