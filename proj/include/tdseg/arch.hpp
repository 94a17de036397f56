#ifndef TDSEG_ARCH_HPP
#define TDSEG_ARCH_HPP

#include <optional>
#include <string>
#include <vector>

namespace tdseg {

enum class LayerKind { Conv, CollapsedConv, Relu, MaxPool };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  int out_c = 0;  // conv kinds only
  int k = 1, stride = 1, pad = 0, dil = 1;

  bool is_conv() const { return kind == LayerKind::Conv || kind == LayerKind::CollapsedConv; }
  bool operator==(const LayerSpec&) const = default;
};

// Input-space footprint of one unit: edge length of the (bounding) box,
// stride between adjacent units, and the center of unit (0,0).
struct RfGeometry {
  double size = 1.0;
  double jump = 1.0;
  double offset = 0.0;
};

RfGeometry rf_step(const RfGeometry& g, const LayerSpec& l);

struct TapPoint {
  std::string name;
  int layer = -1;  // tap sits on the output of this layer index
  bool operator==(const TapPoint&) const = default;
};

struct DetectGroupSpec {
  std::vector<LayerSpec> inner;  // intermediate layers, compact-notation strings
  int channels = 16;             // out channels of intermediate convs
  bool operator==(const DetectGroupSpec&) const = default;
};

enum class DetectDesign { Parallel, Sequential };

struct SegLevelSpec {
  std::string tap;  // encoder tap feeding this level
  int b = 0, r = 0, q = 0;
  bool operator==(const SegLevelSpec&) const = default;
};

// Full network description: encoder layers with taps and the top-down stop
// layer, detection-head groups, and decoder level schedule.
struct NetworkSpec {
  int in_channels = 3;
  std::vector<LayerSpec> layers;
  std::vector<TapPoint> taps;
  int stop_layer = -1;  // last layer traversed by the top-down pass
  std::string head_tap; // encoder tap feeding the detection head
  DetectDesign design = DetectDesign::Parallel;
  std::vector<DetectGroupSpec> groups;
  std::vector<SegLevelSpec> seg_levels;

  int tap_layer(const std::string& name) const;  // throws on unknown name
  bool operator==(const NetworkSpec&) const = default;
};

// Footprint of one unit of the output of layers[0..n_layers). n_layers = 0 is
// the identity (the input itself).
RfGeometry receptive_field_prefix(const NetworkSpec& spec, int n_layers);
// By tap name or auto name ("layer<i>").
RfGeometry receptive_field(const NetworkSpec& spec, const std::string& layer_name);

// Compact layer notation used for detection-head groups, e.g. "c3x3-s2-p1-d2"
// or "m3x3-s2"; default values (s1, p0, d1) are omitted when printing.
LayerSpec parse_compact_layer(const std::string& s, bool collapsed_is_1x1 = true);
std::string format_compact_layer(const LayerSpec& l);

// Line-oriented architecture config; parse/serialize round-trip is exact for
// canonical files.
NetworkSpec parse_network_config(const std::string& text);
std::string serialize_network_config(const NetworkSpec& spec);
NetworkSpec load_network_config(const std::string& path);

}  // namespace tdseg

#endif
