#include "tdseg/arch.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace tdseg {

namespace {

[[noreturn]] void bad(const std::string& msg) { throw std::invalid_argument(msg); }

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::map<std::string, std::string> kv_args(const std::vector<std::string>& tokens, size_t from,
                                           const std::string& line) {
  std::map<std::string, std::string> kv;
  for (size_t i = from; i < tokens.size(); ++i) {
    auto pos = tokens[i].find('=');
    if (pos == std::string::npos) bad("expected key=value in config line: " + line);
    kv[tokens[i].substr(0, pos)] = tokens[i].substr(pos + 1);
  }
  return kv;
}

int to_int(const std::string& s, const std::string& what) {
  try {
    size_t used = 0;
    int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    bad("bad integer for " + what + ": '" + s + "'");
  }
}

}  // namespace

RfGeometry rf_step(const RfGeometry& g, const LayerSpec& l) {
  if (!l.is_conv() && l.kind != LayerKind::MaxPool) return g;  // elementwise layers
  RfGeometry o;
  o.size = g.size + (l.k - 1) * (double)l.dil * g.jump;
  o.offset = g.offset + ((l.k - 1) * (double)l.dil / 2.0 - l.pad) * g.jump;
  o.jump = g.jump * l.stride;
  return o;
}

RfGeometry receptive_field_prefix(const NetworkSpec& spec, int n_layers) {
  if (n_layers < 0 || n_layers > (int)spec.layers.size())
    bad("receptive_field: layer prefix out of range");
  RfGeometry g;
  for (int i = 0; i < n_layers; ++i) g = rf_step(g, spec.layers[i]);
  return g;
}

int NetworkSpec::tap_layer(const std::string& name) const {
  for (const auto& t : taps)
    if (t.name == name) return t.layer;
  bad("unknown tap name: " + name);
}

RfGeometry receptive_field(const NetworkSpec& spec, const std::string& layer_name) {
  for (const auto& t : spec.taps)
    if (t.name == layer_name) return receptive_field_prefix(spec, t.layer + 1);
  if (layer_name.rfind("layer", 0) == 0) {
    int idx = to_int(layer_name.substr(5), "layer index");
    if (idx >= 0 && idx < (int)spec.layers.size()) return receptive_field_prefix(spec, idx + 1);
  }
  bad("receptive_field: unknown layer '" + layer_name + "'");
}

LayerSpec parse_compact_layer(const std::string& s, bool collapsed_is_1x1) {
  if (s.empty()) bad("empty compact layer spec");
  LayerSpec l;
  auto parts = split(s, '-');
  const std::string& head = parts[0];
  char kindc = head[0];
  if (kindc == 'c')
    l.kind = LayerKind::Conv;
  else if (kindc == 'm')
    l.kind = LayerKind::MaxPool;
  else
    bad("compact layer must start with 'c' or 'm': " + s);
  auto xpos = head.find('x');
  if (xpos == std::string::npos) bad("compact layer needs KxK: " + s);
  int k1 = to_int(head.substr(1, xpos - 1), "kernel");
  int k2 = to_int(head.substr(xpos + 1), "kernel");
  if (k1 != k2) bad("only square kernels are supported: " + s);
  l.k = k1;
  for (size_t i = 1; i < parts.size(); ++i) {
    const std::string& p = parts[i];
    if (p.size() < 2) bad("bad compact layer field: " + s);
    int v = to_int(p.substr(1), "compact field");
    switch (p[0]) {
      case 's': l.stride = v; break;
      case 'p': l.pad = v; break;
      case 'd': l.dil = v; break;
      default: bad("unknown compact field '" + p + "' in " + s);
    }
  }
  if (l.kind == LayerKind::Conv && l.k == 1 && collapsed_is_1x1) l.kind = LayerKind::CollapsedConv;
  return l;
}

std::string format_compact_layer(const LayerSpec& l) {
  std::string s;
  s += l.kind == LayerKind::MaxPool ? 'm' : 'c';
  s += std::to_string(l.k) + "x" + std::to_string(l.k);
  if (l.stride != 1) s += "-s" + std::to_string(l.stride);
  if (l.pad != 0) s += "-p" + std::to_string(l.pad);
  if (l.dil != 1) s += "-d" + std::to_string(l.dil);
  return s;
}

NetworkSpec parse_network_config(const std::string& text) {
  NetworkSpec spec;
  std::istringstream in(text);
  std::string line;
  bool saw_layer = false;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r'))
      line.pop_back();
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line = line.substr(start);

    auto tokens = split(line, ' ');
    const std::string& cmd = tokens[0];
    auto kv = kv_args(tokens, 1, line);

    if (cmd == "input") {
      spec.in_channels = to_int(kv.at("c"), "input channels");
    } else if (cmd == "conv") {
      LayerSpec l;
      l.out_c = to_int(kv.at("out"), "conv out");
      l.k = kv.count("k") ? to_int(kv["k"], "k") : 1;
      l.stride = kv.count("s") ? to_int(kv["s"], "s") : 1;
      l.pad = kv.count("p") ? to_int(kv["p"], "p") : 0;
      l.dil = kv.count("d") ? to_int(kv["d"], "d") : 1;
      l.kind = l.k == 1 ? LayerKind::CollapsedConv : LayerKind::Conv;
      if (l.k < 1 || l.stride < 1 || l.pad < 0 || l.dil < 1) bad("bad conv hyperparameters: " + line);
      spec.layers.push_back(l);
      saw_layer = true;
    } else if (cmd == "relu") {
      spec.layers.push_back({LayerKind::Relu, 0, 1, 1, 0, 1});
      saw_layer = true;
    } else if (cmd == "maxpool") {
      LayerSpec l;
      l.kind = LayerKind::MaxPool;
      l.k = to_int(kv.at("k"), "pool k");
      l.stride = kv.count("s") ? to_int(kv["s"], "s") : l.k;
      spec.layers.push_back(l);
      saw_layer = true;
    } else if (cmd == "tap") {
      if (!saw_layer) bad("tap before any layer");
      spec.taps.push_back({kv.at("name"), (int)spec.layers.size() - 1});
    } else if (cmd == "stop") {
      if (!saw_layer) bad("stop before any layer");
      spec.stop_layer = (int)spec.layers.size() - 1;
    } else if (cmd == "detect") {
      spec.head_tap = kv.at("input");
      if (kv.count("design")) {
        const std::string& d = kv["design"];
        if (d == "parallel")
          spec.design = DetectDesign::Parallel;
        else if (d == "sequential")
          spec.design = DetectDesign::Sequential;
        else
          bad("unknown detect design: " + d);
      }
    } else if (cmd == "group") {
      DetectGroupSpec g;
      g.channels = kv.count("channels") ? to_int(kv["channels"], "group channels") : 16;
      for (const auto& ls : split(kv.at("layers"), ','))
        g.inner.push_back(parse_compact_layer(ls));
      spec.groups.push_back(g);
    } else if (cmd == "seglevel") {
      SegLevelSpec sl;
      sl.tap = kv.at("tap");
      sl.b = to_int(kv.at("b"), "seg b");
      sl.r = to_int(kv.at("r"), "seg r");
      sl.q = to_int(kv.at("q"), "seg q");
      spec.seg_levels.push_back(sl);
    } else {
      bad("unknown config directive: " + cmd);
    }
  }
  // structural checks
  for (const auto& t : spec.taps)
    if (t.layer < 0 || t.layer >= (int)spec.layers.size()) bad("tap points at missing layer");
  if (!spec.head_tap.empty()) {
    int head_layer = spec.tap_layer(spec.head_tap);
    if (spec.stop_layer >= 0 && spec.stop_layer >= head_layer)
      bad("stop layer must precede the detection-head tap");
  }
  for (const auto& sl : spec.seg_levels) spec.tap_layer(sl.tap);
  return spec;
}

std::string serialize_network_config(const NetworkSpec& spec) {
  std::ostringstream out;
  out << "input c=" << spec.in_channels << "\n";
  // taps/stop printed immediately after the layer they annotate
  for (int i = 0; i < (int)spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::CollapsedConv:
        out << "conv out=" << l.out_c << " k=" << l.k << " s=" << l.stride << " p=" << l.pad
            << " d=" << l.dil << "\n";
        break;
      case LayerKind::Relu:
        out << "relu\n";
        break;
      case LayerKind::MaxPool:
        out << "maxpool k=" << l.k << " s=" << l.stride << "\n";
        break;
    }
    if (spec.stop_layer == i) out << "stop\n";
    for (const auto& t : spec.taps)
      if (t.layer == i) out << "tap name=" << t.name << "\n";
  }
  if (!spec.head_tap.empty())
    out << "detect input=" << spec.head_tap << " design="
        << (spec.design == DetectDesign::Parallel ? "parallel" : "sequential") << "\n";
  for (const auto& g : spec.groups) {
    out << "group channels=" << g.channels << " layers=";
    for (size_t i = 0; i < g.inner.size(); ++i) {
      if (i) out << ",";
      out << format_compact_layer(g.inner[i]);
    }
    out << "\n";
  }
  for (const auto& sl : spec.seg_levels)
    out << "seglevel tap=" << sl.tap << " b=" << sl.b << " r=" << sl.r << " q=" << sl.q << "\n";
  return out.str();
}

NetworkSpec load_network_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) bad("cannot open architecture config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_network_config(ss.str());
}

}  // namespace tdseg
