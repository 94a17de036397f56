#ifndef TDSEG_METRICS_HPP
#define TDSEG_METRICS_HPP

#include <cstdint>
#include <vector>

namespace tdseg {

// Pixels whose ground truth is 255 are excluded everywhere. Per-image
// variants average over the classes present in the ground truth; the
// confusion-matrix accumulator gives the dataset-level numbers used for
// reporting.

double mean_pixel_accuracy(const std::vector<int>& pred, const std::vector<uint8_t>& gt,
                           int classes);
double mean_iou(const std::vector<int>& pred, const std::vector<uint8_t>& gt, int classes);

struct ConfusionMatrix {
  int classes = 0;
  std::vector<int64_t> counts;  // gt-major [gt * classes + pred]

  explicit ConfusionMatrix(int k = 0) : classes(k), counts((size_t)k * k, 0) {}
  void accumulate(const std::vector<int>& pred, const std::vector<uint8_t>& gt);
  double mean_pixel_accuracy() const;
  double mean_iou() const;
};

}  // namespace tdseg

#endif
