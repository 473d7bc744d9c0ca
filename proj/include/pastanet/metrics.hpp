#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pastanet/types.hpp"

namespace pastanet::eval {

/// Ranked average precision over one class: sort by score descending (stable,
/// ties keep original index order), AP = sum_k precision@k * delta-recall@k.
/// Returns nullopt when the class has no positives (undefined; excluded from
/// means).
std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<int>& labels);

/// Arithmetic mean over the defined entries; errors when all are undefined.
double mean_ap(const std::vector<std::optional<double>>& per_class);

/// Two-stage mean: verbs within a part, then across the ten parts.
/// per_part_per_verb[i][k] is the AP of verb k of part i (nullopt = no
/// positives). Parts whose every verb is undefined are excluded from the
/// outer mean.
double pasta_map(const std::vector<std::vector<std::optional<double>>>& per_part_per_verb);

struct Detection {
  Box human;
  Box object;
  int category = 0;
  double score = 0;
};

struct GroundTruthPair {
  Box human;
  Box object;
  int category = 0;
};

struct DetectionEvalResult {
  std::vector<std::optional<double>> per_class_ap;
  double map = 0;
  // Per detection (in the input order), whether it matched a ground truth.
  std::vector<bool> is_true_positive;
};

/// HOI detection mAP: greedy matching per class by descending score; a
/// detection is a true positive iff both its human and object boxes overlap
/// an unmatched ground-truth pair of the same class with IoU strictly above
/// iou_thr; each ground-truth pair matches at most once.
DetectionEvalResult detection_map(const std::vector<Detection>& detections,
                                  const std::vector<GroundTruthPair>& ground_truth,
                                  int num_classes, double iou_thr = 0.5);

/// Top-1 exact match ratio.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

}  // namespace pastanet::eval
