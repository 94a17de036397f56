#ifndef TDSEG_DATA_HPP
#define TDSEG_DATA_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tdseg/anchors.hpp"
#include "tdseg/rng.hpp"

namespace tdseg {

// Image stored planar (3 x h x w), mask (h x w) with labels {0..K-1, 255}.
struct Sample {
  int h = 0, w = 0;
  std::vector<uint8_t> image;
  std::vector<uint8_t> mask;
  std::vector<GtBox> boxes;
};

// 1-3 non-overlapping filled shapes (circle, square, triangle for classes
// 1..3) on a textured dark background; masks exact, boxes tight.
std::vector<Sample> synth_generate(uint64_t seed, int n, int canvas, int classes);

// Smallest side to `target`, then a random target x target crop.
Sample train_transform(const Sample& s, int target, Rng& rng);
// Largest side to `target`, pad right/bottom: image with the dataset mean
// pixel, mask with the don't-care label.
Sample eval_transform(const Sample& s, int target, const std::array<double, 3>& mean_pixel);

enum class PerturbKind { Uniform, SaltPepper, BoxOcclusion };

PerturbKind parse_perturb_kind(const std::string& s);
std::string format_perturb_kind(PerturbKind k);

struct PerturbSpec {
  PerturbKind kind = PerturbKind::Uniform;
  double sigma = 0.0;  // in [0, 1]
  uint64_t seed = 0;
};

std::vector<uint8_t> perturb(const std::vector<uint8_t>& image, int h, int w,
                             const PerturbSpec& spec);

std::array<double, 3> mean_pixel(const std::vector<Sample>& samples);

// ---- on-disk dataset ------------------------------------------------------

void write_ppm(const std::string& path, int h, int w, const std::vector<uint8_t>& planar_rgb);
void read_ppm(const std::string& path, int& h, int& w, std::vector<uint8_t>& planar_rgb);
void write_pgm(const std::string& path, int h, int w, const std::vector<uint8_t>& gray);
void read_pgm(const std::string& path, int& h, int& w, std::vector<uint8_t>& gray);

// One directory per split; per-sample files img_%05d.ppm / mask_%05d.pgm /
// boxes_%05d.csv, boxes as "index,x0,y0,x1,y1,class".
void write_split(const std::string& dir, const std::vector<Sample>& samples);
std::vector<Sample> read_split(const std::string& dir);

void write_mean_pixel(const std::string& path, const std::array<double, 3>& mean);
std::array<double, 3> read_mean_pixel(const std::string& path);

// (image - mean_c) / 128 per channel; padding with the mean maps to zero.
Tensor to_input_tensor(const std::vector<const Sample*>& batch,
                       const std::array<double, 3>& mean);

}  // namespace tdseg

#endif
