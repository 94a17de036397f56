#include <doctest.h>

#include "tdseg/anchors.hpp"
#include "tdseg/detect.hpp"
#include "tdseg/model.hpp"

using namespace tdseg;

namespace {

Model make_desk_model(uint64_t seed = 7, int classes = 4) {
  Model m;
  m.spec = load_network_config(std::string(CONFIG_DIR) + "/desk64.cfg");
  m.cfg.classes = classes;
  m.init_params(seed, false);
  return m;
}

}  // namespace

TEST_CASE("desk-scale head produces 256/64/16 units") {
  Model m = make_desk_model();
  auto r = m.forward_head(Tensor::zeros({1, 3, 64, 64}));
  REQUIRE(r.det.scores.groups() == 3);
  CHECK(r.det.scores.units_in_group(0) == 256);
  CHECK(r.det.scores.units_in_group(1) == 64);
  CHECK(r.det.scores.units_in_group(2) == 16);
  CHECK(r.det.scores.total_units == 336);
}

TEST_CASE("zero weights give zero scores and uniform softmax") {
  Model m = make_desk_model(7, 2);
  for (auto& [name, t] : m.params.items())
    for (auto& v : t.value_mut()) v = 0.0;
  Rng rng(3);
  std::vector<double> xv(3 * 64 * 64);
  for (auto& v : xv) v = rng.uniform(-1, 1);
  auto r = m.forward_head(Tensor::from_data({1, 3, 64, 64}, xv));
  for (const auto& s : r.det.scores.group_scores) {
    for (double v : s.value()) CHECK(v == 0.0);
    auto p = softmax_channel(s);
    for (double v : p.value()) CHECK(v == doctest::Approx(0.5));
  }
}

TEST_CASE("parallel and sequential designs share score-map shapes") {
  // holds whenever inter-group reduction lives in the deepest group only, as
  // in the stride-free group layouts; groups that each stride would compound
  // their reductions along the sequential chain
  const char* spec_text = R"(input c=3
conv out=8 k=3 s=1 p=1 d=1
relu
maxpool k=2 s=2
stop
conv out=12 k=3 s=1 p=1 d=1
relu
tap name=head
detect input=head design=parallel
group channels=8 layers=c1x1,c1x1
group channels=8 layers=m3x3-s2,c3x3-p2-d2,c1x1,c3x3-p1
)";
  Model par;
  par.spec = parse_network_config(spec_text);
  par.cfg.classes = 4;
  par.init_params(8, false);
  Model seq;
  seq.spec = par.spec;
  seq.spec.design = DetectDesign::Sequential;
  seq.cfg.classes = 4;
  seq.init_params(8, false);
  auto x = Tensor::zeros({1, 3, 40, 40});
  auto rp = par.forward_head(x);
  auto rs = seq.forward_head(x);
  REQUIRE(rp.det.scores.groups() == rs.det.scores.groups());
  for (int g = 0; g < rp.det.scores.groups(); ++g) {
    CHECK(rp.det.scores.group_h[g] == rs.det.scores.group_h[g]);
    CHECK(rp.det.scores.group_w[g] == rs.det.scores.group_w[g]);
  }
}

TEST_CASE("sequential design on the desk config keeps unit counts falling") {
  Model seq;
  seq.spec = load_network_config(std::string(CONFIG_DIR) + "/desk64.cfg");
  seq.spec.design = DetectDesign::Sequential;
  seq.cfg.classes = 4;
  seq.init_params(9, false);
  auto r = seq.forward_head(Tensor::zeros({1, 3, 64, 64}));
  for (int g = 0; g + 1 < r.det.scores.groups(); ++g)
    CHECK(r.det.scores.units_in_group(g) > r.det.scores.units_in_group(g + 1));
}

TEST_CASE("flattened unit index mapping is bijective") {
  Model m = make_desk_model();
  auto r = m.forward_head(Tensor::zeros({1, 3, 64, 64}));
  const auto& s = r.det.scores;
  int count = 0;
  for (int g = 0; g < s.groups(); ++g)
    for (int y = 0; y < s.group_h[g]; ++y)
      for (int x = 0; x < s.group_w[g]; ++x) {
        const int u = s.unit_at(g, y, x);
        int g2, y2, x2;
        s.locate(u, g2, y2, x2);
        CHECK(g2 == g);
        CHECK(y2 == y);
        CHECK(x2 == x);
        ++count;
      }
  CHECK(count == s.total_units);
  CHECK_THROWS_AS(s.unit_logits(0, s.total_units), std::invalid_argument);
}

TEST_CASE("group receptive fields grow strictly while unit counts fall") {
  Model m = make_desk_model();
  auto rfs = detect_group_rf(m.spec);
  REQUIRE(rfs.size() == 3);
  CHECK(rfs[0].size < rfs[1].size);
  CHECK(rfs[1].size < rfs[2].size);
  CHECK(rfs[0].jump < rfs[1].jump);
}

TEST_CASE("anchors are clipped to image bounds and centered per unit") {
  Model m = make_desk_model();
  auto r = m.forward_head(Tensor::zeros({1, 3, 64, 64}));
  auto anchors = unit_anchors(m.spec, r.det.scores, 64, 64);
  REQUIRE((int)anchors.size() == r.det.scores.total_units);
  for (const auto& a : anchors) {
    CHECK(a.x0 >= 0.0);
    CHECK(a.y0 >= 0.0);
    CHECK(a.x1 <= 64.0);
    CHECK(a.y1 <= 64.0);
    CHECK(a.x1 > a.x0);
    CHECK(a.y1 > a.y0);
  }
  // co-located units of deeper groups cover strictly larger clipped boxes
  auto g0 = detect_unit_geometry(m.spec, r.det.scores, r.det.scores.unit_at(0, 8, 8));
  auto g2 = detect_unit_geometry(m.spec, r.det.scores, r.det.scores.unit_at(2, 2, 2));
  CHECK(g2.rf.size > g0.rf.size);
  // interior anchors are spaced by the group jump
  const auto& s = r.det.scores;
  Box a1 = anchors[s.unit_at(0, 8, 8)];
  Box a2 = anchors[s.unit_at(0, 8, 9)];
  CHECK(a2.x0 - a1.x0 == doctest::Approx(detect_group_rf(m.spec)[0].jump));
}
