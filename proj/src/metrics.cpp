#include "tdseg/metrics.hpp"

#include <stdexcept>

#include "tdseg/anchors.hpp"

namespace tdseg {

namespace {

// per-class tallies over pixels with gt != 255
struct Tally {
  std::vector<int64_t> gt_count, pred_count, hit;
  explicit Tally(int k) : gt_count(k, 0), pred_count(k, 0), hit(k, 0) {}

  void add(const std::vector<int>& pred, const std::vector<uint8_t>& gt) {
    if (pred.size() != gt.size())
      throw std::invalid_argument("metrics: prediction/ground-truth size mismatch");
    for (size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == kDontCare) continue;
      const int g = gt[i], p = pred[i];
      if (g >= (int)gt_count.size() || p >= (int)pred_count.size() || p < 0)
        throw std::invalid_argument("metrics: label out of range");
      gt_count[g]++;
      pred_count[p]++;
      if (g == p) hit[g]++;
    }
  }

  bool empty() const {
    for (auto v : gt_count)
      if (v) return false;
    return true;
  }

  double macc() const {
    double sum = 0;
    int present = 0;
    for (size_t c = 0; c < gt_count.size(); ++c) {
      if (!gt_count[c]) continue;
      sum += (double)hit[c] / (double)gt_count[c];
      ++present;
    }
    return sum / present;
  }

  double miou() const {
    double sum = 0;
    int present = 0;
    for (size_t c = 0; c < gt_count.size(); ++c) {
      if (!gt_count[c]) continue;
      const int64_t uni = gt_count[c] + pred_count[c] - hit[c];
      sum += uni ? (double)hit[c] / (double)uni : 0.0;
      ++present;
    }
    return sum / present;
  }
};

}  // namespace

double mean_pixel_accuracy(const std::vector<int>& pred, const std::vector<uint8_t>& gt,
                           int classes) {
  Tally t(classes);
  t.add(pred, gt);
  if (t.empty()) throw std::invalid_argument("metrics: ground truth is entirely don't-care");
  return t.macc();
}

double mean_iou(const std::vector<int>& pred, const std::vector<uint8_t>& gt, int classes) {
  Tally t(classes);
  t.add(pred, gt);
  if (t.empty()) throw std::invalid_argument("metrics: ground truth is entirely don't-care");
  return t.miou();
}

void ConfusionMatrix::accumulate(const std::vector<int>& pred, const std::vector<uint8_t>& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("metrics: prediction/ground-truth size mismatch");
  for (size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kDontCare) continue;
    if (gt[i] >= classes || pred[i] < 0 || pred[i] >= classes)
      throw std::invalid_argument("metrics: label out of range");
    counts[(size_t)gt[i] * classes + pred[i]]++;
  }
}

double ConfusionMatrix::mean_pixel_accuracy() const {
  double sum = 0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    int64_t row = 0;
    for (int p = 0; p < classes; ++p) row += counts[(size_t)c * classes + p];
    if (!row) continue;
    sum += (double)counts[(size_t)c * classes + c] / (double)row;
    ++present;
  }
  if (!present) throw std::invalid_argument("metrics: empty confusion matrix");
  return sum / present;
}

double ConfusionMatrix::mean_iou() const {
  double sum = 0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    int64_t row = 0, col = 0;
    for (int p = 0; p < classes; ++p) {
      row += counts[(size_t)c * classes + p];
      col += counts[(size_t)p * classes + c];
    }
    if (!row) continue;
    const int64_t uni = row + col - counts[(size_t)c * classes + c];
    sum += uni ? (double)counts[(size_t)c * classes + c] / (double)uni : 0.0;
    ++present;
  }
  if (!present) throw std::invalid_argument("metrics: empty confusion matrix");
  return sum / present;
}

}  // namespace tdseg
