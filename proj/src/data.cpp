#include "tdseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tdseg {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad(const std::string& msg) { throw std::invalid_argument(msg); }

uint8_t clamp_u8(double v) {
  if (v <= 0.0) return 0;
  if (v >= 255.0) return 255;
  return (uint8_t)std::lround(v);
}

struct ShapeInstance {
  int kind;  // 1 circle, 2 square, 3 triangle
  int cy, cx, r;
};

bool inside_shape(const ShapeInstance& s, int y, int x) {
  switch (s.kind) {
    case 1: {
      const int dy = y - s.cy, dx = x - s.cx;
      return dy * dy + dx * dx <= s.r * s.r;
    }
    case 2:
      return std::abs(y - s.cy) <= s.r && std::abs(x - s.cx) <= s.r;
    default: {
      // isoceles triangle pointing up: apex (cx, cy-r), base at cy+r
      if (y < s.cy - s.r || y > s.cy + s.r) return false;
      const double half = (double)(y - (s.cy - s.r)) / 2.0;
      return std::abs(x - s.cx) <= half;
    }
  }
}

}  // namespace

std::vector<Sample> synth_generate(uint64_t seed, int n, int canvas, int classes) {
  if (classes < 2) bad("synth_generate: need at least background plus one class");
  if (canvas < 24) bad("synth_generate: canvas too small");
  const int shape_kinds = std::min(3, classes - 1);
  std::vector<Sample> out;
  out.reserve(n);
  for (int idx = 0; idx < n; ++idx) {
    Rng rng = sub_rng(seed, 0x736d706c, idx);
    Sample s;
    s.h = s.w = canvas;
    s.image.assign((size_t)3 * canvas * canvas, 0);
    s.mask.assign((size_t)canvas * canvas, 0);

    double base[3];
    for (auto& b : base) b = rng.uniform(10.0, 70.0);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < canvas * canvas; ++i)
        s.image[(size_t)c * canvas * canvas + i] = clamp_u8(base[c] + rng.uniform(-15.0, 15.0));

    const int count = 1 + (int)rng.uniform_int(3);
    std::vector<ShapeInstance> placed;
    for (int k = 0; k < count; ++k) {
      ShapeInstance inst{};
      bool ok = false;
      // small shapes keep fine detail mattering relative to the encoder's
      // coarsest resolution
      const int r_span = std::min(7, canvas / 2 - 5);  // keep r strictly inside
      for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
        inst.kind = 1 + (int)rng.uniform_int(shape_kinds);
        inst.r = 4 + (int)rng.uniform_int(std::max(1, r_span));  // 4..10 on a 64 canvas
        inst.cy = inst.r + (int)rng.uniform_int(canvas - 2 * inst.r);
        inst.cx = inst.r + (int)rng.uniform_int(canvas - 2 * inst.r);
        ok = true;
        for (const auto& p : placed) {
          // bounding boxes are 2r squares, so the Chebyshev distance decides overlap
          const int gap = std::max(std::abs(inst.cy - p.cy), std::abs(inst.cx - p.cx));
          if (gap < inst.r + p.r + 3) ok = false;
        }
      }
      if (!ok) continue;
      placed.push_back(inst);

      double fill[3];
      for (auto& f : fill) f = rng.uniform(110.0, 255.0);
      int y0 = canvas, x0 = canvas, y1 = -1, x1 = -1;
      for (int y = std::max(0, inst.cy - inst.r); y <= std::min(canvas - 1, inst.cy + inst.r); ++y)
        for (int x = std::max(0, inst.cx - inst.r); x <= std::min(canvas - 1, inst.cx + inst.r); ++x)
          if (inside_shape(inst, y, x)) {
            s.mask[(size_t)y * canvas + x] = (uint8_t)inst.kind;
            for (int c = 0; c < 3; ++c)
              s.image[((size_t)c * canvas + y) * canvas + x] =
                  clamp_u8(fill[c] + rng.uniform(-8.0, 8.0));
            y0 = std::min(y0, y);
            x0 = std::min(x0, x);
            y1 = std::max(y1, y);
            x1 = std::max(x1, x);
          }
      if (y1 < 0) continue;
      s.boxes.push_back({{(double)x0, (double)y0, (double)(x1 + 1), (double)(y1 + 1)},
                         inst.kind});
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

// half-pixel-center bilinear resize, per channel plane
std::vector<uint8_t> resize_plane_bilinear(const uint8_t* src, int ih, int iw, int oh, int ow) {
  std::vector<uint8_t> dst((size_t)oh * ow);
  const double sy = (double)ih / oh, sx = (double)iw / ow;
  for (int y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, (double)ih - 1);
    const int y0 = std::min((int)fy, ih - 1);
    const int y1 = std::min(y0 + 1, ih - 1);
    const double ty = fy - y0;
    for (int x = 0; x < ow; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, (double)iw - 1);
      const int x0 = std::min((int)fx, iw - 1);
      const int x1 = std::min(x0 + 1, iw - 1);
      const double tx = fx - x0;
      const double v = (1 - ty) * ((1 - tx) * src[(size_t)y0 * iw + x0] + tx * src[(size_t)y0 * iw + x1]) +
                       ty * ((1 - tx) * src[(size_t)y1 * iw + x0] + tx * src[(size_t)y1 * iw + x1]);
      dst[(size_t)y * ow + x] = clamp_u8(v);
    }
  }
  return dst;
}

std::vector<uint8_t> resize_plane_nearest(const uint8_t* src, int ih, int iw, int oh, int ow) {
  std::vector<uint8_t> dst((size_t)oh * ow);
  const double sy = (double)ih / oh, sx = (double)iw / ow;
  for (int y = 0; y < oh; ++y) {
    int iy = std::clamp((int)std::floor((y + 0.5) * sy), 0, ih - 1);
    for (int x = 0; x < ow; ++x) {
      int ix = std::clamp((int)std::floor((x + 0.5) * sx), 0, iw - 1);
      dst[(size_t)y * ow + x] = src[(size_t)iy * iw + ix];
    }
  }
  return dst;
}

Sample resize_sample(const Sample& s, int oh, int ow) {
  Sample r;
  r.h = oh;
  r.w = ow;
  r.image.resize((size_t)3 * oh * ow);
  for (int c = 0; c < 3; ++c) {
    auto plane = resize_plane_bilinear(s.image.data() + (size_t)c * s.h * s.w, s.h, s.w, oh, ow);
    std::copy(plane.begin(), plane.end(), r.image.begin() + (size_t)c * oh * ow);
  }
  r.mask = resize_plane_nearest(s.mask.data(), s.h, s.w, oh, ow);
  const double fy = (double)oh / s.h, fx = (double)ow / s.w;
  for (const auto& b : s.boxes) {
    GtBox nb = b;
    nb.box = {b.box.x0 * fx, b.box.y0 * fy, b.box.x1 * fx, b.box.y1 * fy};
    if (nb.box.x1 - nb.box.x0 >= 1.0 && nb.box.y1 - nb.box.y0 >= 1.0) r.boxes.push_back(nb);
  }
  return r;
}

Sample crop_sample(const Sample& s, int oy, int ox, int size) {
  Sample r;
  r.h = r.w = size;
  r.image.resize((size_t)3 * size * size);
  r.mask.resize((size_t)size * size);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      std::copy(s.image.begin() + ((size_t)c * s.h + oy + y) * s.w + ox,
                s.image.begin() + ((size_t)c * s.h + oy + y) * s.w + ox + size,
                r.image.begin() + ((size_t)c * size + y) * size);
  for (int y = 0; y < size; ++y)
    std::copy(s.mask.begin() + (size_t)(oy + y) * s.w + ox,
              s.mask.begin() + (size_t)(oy + y) * s.w + ox + size,
              r.mask.begin() + (size_t)y * size);
  for (const auto& b : s.boxes) {
    Box nb{std::max(0.0, b.box.x0 - ox), std::max(0.0, b.box.y0 - oy),
           std::min((double)size, b.box.x1 - ox), std::min((double)size, b.box.y1 - oy)};
    if (nb.x1 - nb.x0 >= 1.0 && nb.y1 - nb.y0 >= 1.0) r.boxes.push_back({nb, b.cls});
  }
  return r;
}

}  // namespace

Sample train_transform(const Sample& s, int target, Rng& rng) {
  const int small = std::min(s.h, s.w);
  const int oh = (int)std::lround((double)s.h * target / small);
  const int ow = (int)std::lround((double)s.w * target / small);
  Sample r = resize_sample(s, std::max(oh, target), std::max(ow, target));
  const int oy = (int)rng.uniform_int(r.h - target + 1);
  const int ox = (int)rng.uniform_int(r.w - target + 1);
  return crop_sample(r, oy, ox, target);
}

Sample eval_transform(const Sample& s, int target, const std::array<double, 3>& mean) {
  const int large = std::max(s.h, s.w);
  const int oh = (int)std::lround((double)s.h * target / large);
  const int ow = (int)std::lround((double)s.w * target / large);
  Sample rs = resize_sample(s, std::min(oh, target), std::min(ow, target));
  Sample r;
  r.h = r.w = target;
  r.image.assign((size_t)3 * target * target, 0);
  r.mask.assign((size_t)target * target, kDontCare);
  for (int c = 0; c < 3; ++c) {
    const uint8_t fillv = clamp_u8(mean[c]);
    std::fill(r.image.begin() + (size_t)c * target * target,
              r.image.begin() + (size_t)(c + 1) * target * target, fillv);
    for (int y = 0; y < rs.h; ++y)
      std::copy(rs.image.begin() + ((size_t)c * rs.h + y) * rs.w,
                rs.image.begin() + ((size_t)c * rs.h + y) * rs.w + rs.w,
                r.image.begin() + ((size_t)c * target + y) * target);
  }
  for (int y = 0; y < rs.h; ++y)
    std::copy(rs.mask.begin() + (size_t)y * rs.w, rs.mask.begin() + (size_t)y * rs.w + rs.w,
              r.mask.begin() + (size_t)y * target);
  r.boxes = rs.boxes;
  return r;
}

PerturbKind parse_perturb_kind(const std::string& s) {
  if (s == "uniform") return PerturbKind::Uniform;
  if (s == "salt-pepper") return PerturbKind::SaltPepper;
  if (s == "box-occlusion") return PerturbKind::BoxOcclusion;
  bad("unknown perturbation kind: " + s);
}

std::string format_perturb_kind(PerturbKind k) {
  switch (k) {
    case PerturbKind::Uniform: return "uniform";
    case PerturbKind::SaltPepper: return "salt-pepper";
    case PerturbKind::BoxOcclusion: return "box-occlusion";
  }
  return "?";
}

std::vector<uint8_t> perturb(const std::vector<uint8_t>& image, int h, int w,
                             const PerturbSpec& spec) {
  if (spec.sigma < 0.0 || spec.sigma > 1.0) bad("perturb: sigma must lie in [0,1]");
  std::vector<uint8_t> out = image;
  Rng rng(spec.seed);
  switch (spec.kind) {
    case PerturbKind::Uniform: {
      const double half = 255.0 * spec.sigma / 2.0;
      for (size_t i = 0; i < out.size(); ++i)
        out[i] = clamp_u8((double)image[i] + rng.uniform(-half, half));
      break;
    }
    case PerturbKind::SaltPepper: {
      for (int i = 0; i < h * w; ++i) {
        if (rng.uniform() < spec.sigma) {
          const uint8_t v = rng.uniform() < 0.5 ? 0 : 255;
          for (int c = 0; c < 3; ++c) out[(size_t)c * h * w + i] = v;
        }
      }
      break;
    }
    case PerturbKind::BoxOcclusion: {
      const int side = (int)std::floor(spec.sigma * std::min(h, w));
      if (side < 1) break;
      const int oy = (int)rng.uniform_int(h - side + 1);
      const int ox = (int)rng.uniform_int(w - side + 1);
      for (int c = 0; c < 3; ++c)
        for (int y = oy; y < oy + side; ++y)
          for (int x = ox; x < ox + side; ++x) out[((size_t)c * h + y) * w + x] = 0;
      break;
    }
  }
  return out;
}

std::array<double, 3> mean_pixel(const std::vector<Sample>& samples) {
  std::array<double, 3> m{0, 0, 0};
  int64_t cnt = 0;
  for (const auto& s : samples) {
    const size_t plane = (size_t)s.h * s.w;
    for (int c = 0; c < 3; ++c)
      for (size_t i = 0; i < plane; ++i) m[c] += s.image[(size_t)c * plane + i];
    cnt += plane;
  }
  if (cnt) for (auto& v : m) v /= (double)cnt;
  return m;
}

// ---- binary PPM/PGM -----------------------------------------------------------

void write_ppm(const std::string& path, int h, int w, const std::vector<uint8_t>& planar) {
  std::ofstream f(path, std::ios::binary);
  if (!f) bad("cannot write " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row((size_t)w * 3);
  const size_t plane = (size_t)h * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) row[(size_t)x * 3 + c] = planar[c * plane + (size_t)y * w + x];
    f.write((const char*)row.data(), row.size());
  }
}

namespace {
int read_pnm_header(std::ifstream& f, const std::string& magic, int& h, int& w,
                    const std::string& path) {
  std::string m;
  f >> m;
  if (m != magic) bad("bad magic in " + path);
  int maxv;
  f >> w >> h >> maxv;
  if (maxv != 255) bad("expected maxval 255 in " + path);
  f.get();  // single whitespace after header
  return 0;
}
}  // namespace

void read_ppm(const std::string& path, int& h, int& w, std::vector<uint8_t>& planar) {
  std::ifstream f(path, std::ios::binary);
  if (!f) bad("cannot read " + path);
  read_pnm_header(f, "P6", h, w, path);
  std::vector<uint8_t> row((size_t)w * 3);
  const size_t plane = (size_t)h * w;
  planar.assign(plane * 3, 0);
  for (int y = 0; y < h; ++y) {
    f.read((char*)row.data(), row.size());
    if (!f) bad("truncated " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) planar[c * plane + (size_t)y * w + x] = row[(size_t)x * 3 + c];
  }
}

void write_pgm(const std::string& path, int h, int w, const std::vector<uint8_t>& gray) {
  std::ofstream f(path, std::ios::binary);
  if (!f) bad("cannot write " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  f.write((const char*)gray.data(), (std::streamsize)gray.size());
}

void read_pgm(const std::string& path, int& h, int& w, std::vector<uint8_t>& gray) {
  std::ifstream f(path, std::ios::binary);
  if (!f) bad("cannot read " + path);
  read_pnm_header(f, "P5", h, w, path);
  gray.assign((size_t)h * w, 0);
  f.read((char*)gray.data(), (std::streamsize)gray.size());
  if (!f) bad("truncated " + path);
}

// ---- split io ------------------------------------------------------------------

namespace {
std::string seq_name(const char* stem, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05d.%s", stem, i, ext);
  return buf;
}
}  // namespace

void write_split(const std::string& dir, const std::vector<Sample>& samples) {
  fs::create_directories(dir);
  for (int i = 0; i < (int)samples.size(); ++i) {
    const Sample& s = samples[i];
    write_ppm(dir + "/" + seq_name("img", i, "ppm"), s.h, s.w, s.image);
    write_pgm(dir + "/" + seq_name("mask", i, "pgm"), s.h, s.w, s.mask);
    std::ofstream f(dir + "/" + seq_name("boxes", i, "csv"), std::ios::binary);
    f << "index,x0,y0,x1,y1,class\n";
    for (int b = 0; b < (int)s.boxes.size(); ++b)
      f << b << "," << (int)s.boxes[b].box.x0 << "," << (int)s.boxes[b].box.y0 << ","
        << (int)s.boxes[b].box.x1 << "," << (int)s.boxes[b].box.y1 << "," << s.boxes[b].cls
        << "\n";
  }
}

std::vector<Sample> read_split(const std::string& dir) {
  std::vector<Sample> out;
  for (int i = 0;; ++i) {
    const std::string img = dir + "/" + seq_name("img", i, "ppm");
    if (!fs::exists(img)) break;
    Sample s;
    read_ppm(img, s.h, s.w, s.image);
    int mh, mw;
    read_pgm(dir + "/" + seq_name("mask", i, "pgm"), mh, mw, s.mask);
    if (mh != s.h || mw != s.w) bad("mask extent mismatch in " + dir);
    std::ifstream f(dir + "/" + seq_name("boxes", i, "csv"), std::ios::binary);
    if (!f) bad("missing boxes csv for sample " + std::to_string(i));
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      GtBox b;
      int idx;
      if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%d", &idx, &b.box.x0, &b.box.y0, &b.box.x1,
                      &b.box.y1, &b.cls) != 6)
        bad("bad boxes row: " + line);
      s.boxes.push_back(b);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_mean_pixel(const std::string& path, const std::array<double, 3>& mean) {
  std::ofstream f(path, std::ios::binary);
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", mean[0], mean[1], mean[2]);
  f << buf;
}

std::array<double, 3> read_mean_pixel(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) bad("cannot read " + path);
  std::array<double, 3> m{};
  f >> m[0] >> m[1] >> m[2];
  return m;
}

Tensor to_input_tensor(const std::vector<const Sample*>& batch,
                       const std::array<double, 3>& mean) {
  if (batch.empty()) bad("empty batch");
  const int h = batch[0]->h, w = batch[0]->w;
  std::vector<double> data((size_t)batch.size() * 3 * h * w);
  for (int n = 0; n < (int)batch.size(); ++n) {
    const Sample& s = *batch[n];
    if (s.h != h || s.w != w) bad("mixed extents in one batch");
    const size_t plane = (size_t)h * w;
    for (int c = 0; c < 3; ++c)
      for (size_t i = 0; i < plane; ++i)
        data[((size_t)n * 3 + c) * plane + i] = ((double)s.image[c * plane + i] - mean[c]) / 128.0;
  }
  return Tensor::from_data({(int)batch.size(), 3, h, w}, std::move(data));
}

}  // namespace tdseg
