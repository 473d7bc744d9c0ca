#include "pastanet/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "pastanet/geometry.hpp"

namespace pastanet::eval {

std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw data_error("average_precision: scores and labels differ in length");
  std::size_t positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw data_error("average_precision: labels must be binary");
    positives += static_cast<std::size_t>(l);
  }
  if (positives == 0) return std::nullopt;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == 1) {
      ++tp;
      double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
      ap += precision / static_cast<double>(positives);  // delta recall = 1/positives
    }
  }
  return ap;
}

double mean_ap(const std::vector<std::optional<double>>& per_class) {
  double sum = 0.0;
  std::size_t defined = 0;
  for (const auto& ap : per_class) {
    if (ap) {
      sum += *ap;
      ++defined;
    }
  }
  if (defined == 0) throw data_error("mean_ap: no class has a defined AP");
  return sum / static_cast<double>(defined);
}

double pasta_map(const std::vector<std::vector<std::optional<double>>>& per_part_per_verb) {
  double sum = 0.0;
  std::size_t defined_parts = 0;
  for (const auto& part : per_part_per_verb) {
    bool any = false;
    for (const auto& ap : part)
      if (ap) any = true;
    if (!any) continue;
    sum += mean_ap(part);
    ++defined_parts;
  }
  if (defined_parts == 0) throw data_error("pasta_map: no part has a defined AP");
  return sum / static_cast<double>(defined_parts);
}

DetectionEvalResult detection_map(const std::vector<Detection>& detections,
                                  const std::vector<GroundTruthPair>& ground_truth,
                                  int num_classes, double iou_thr) {
  DetectionEvalResult result;
  result.is_true_positive.assign(detections.size(), false);
  result.per_class_ap.assign(static_cast<std::size_t>(num_classes), std::nullopt);

  for (int cls = 0; cls < num_classes; ++cls) {
    std::vector<std::size_t> det_ids, gt_ids;
    for (std::size_t i = 0; i < detections.size(); ++i)
      if (detections[i].category == cls) det_ids.push_back(i);
    for (std::size_t i = 0; i < ground_truth.size(); ++i)
      if (ground_truth[i].category == cls) gt_ids.push_back(i);
    if (gt_ids.empty()) continue;  // undefined AP for this class

    std::stable_sort(det_ids.begin(), det_ids.end(), [&](std::size_t a, std::size_t b) {
      return detections[a].score > detections[b].score;
    });

    std::vector<bool> gt_used(gt_ids.size(), false);
    std::vector<double> cls_scores;
    std::vector<int> cls_labels;
    for (std::size_t rank = 0; rank < det_ids.size(); ++rank) {
      const Detection& det = detections[det_ids[rank]];
      // Pair overlap = min(human IoU, object IoU); best unmatched wins.
      double best = 0.0;
      std::size_t best_g = gt_ids.size();
      for (std::size_t g = 0; g < gt_ids.size(); ++g) {
        if (gt_used[g]) continue;
        const GroundTruthPair& gt = ground_truth[gt_ids[g]];
        double overlap = std::min(geom::iou(det.human, gt.human), geom::iou(det.object, gt.object));
        if (overlap > best) {
          best = overlap;
          best_g = g;
        }
      }
      bool tp = best > iou_thr && best_g < gt_ids.size();
      if (tp) {
        gt_used[best_g] = true;
        result.is_true_positive[det_ids[rank]] = true;
      }
      cls_scores.push_back(det.score);
      cls_labels.push_back(tp ? 1 : 0);
    }
    // Detections are already rank-ordered; append unmatched GT as misses by
    // dividing by the full positive count instead.
    double ap = 0.0;
    std::size_t tp_count = 0;
    for (std::size_t k = 0; k < cls_labels.size(); ++k) {
      if (cls_labels[k] == 1) {
        ++tp_count;
        ap += static_cast<double>(tp_count) / static_cast<double>(k + 1) /
              static_cast<double>(gt_ids.size());
      }
    }
    result.per_class_ap[static_cast<std::size_t>(cls)] = ap;
  }
  result.map = mean_ap(result.per_class_ap);
  return result;
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw data_error("accuracy: predictions and labels differ in length");
  if (predictions.empty()) throw data_error("accuracy: empty inputs");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

}  // namespace pastanet::eval
