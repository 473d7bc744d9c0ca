#pragma once

#include <array>
#include <optional>

#include "pastanet/types.hpp"

namespace pastanet::geom {

/// Intersection-over-union of two boxes, in [0,1].
double iou(const Box& a, const Box& b);

/// Clamp a box to [0,width] x [0,height]. Errors if the box lies entirely
/// outside the image.
Box clip_box(const Box& b, double width, double height);

struct PartBoxConfig {
  // A joint is visible when its confidence is strictly higher than this
  // (the strict reading of the 0.7 rule).
  double visibility_threshold = 0.7;
  // Box side per part type, as a multiple of the neck-pelvis reference
  // length. Only the centering law, the scaling law, the 0.7 threshold and
  // the upper-body hand rule are fixed; these factors are configurable.
  std::array<double, kNumPartTypes> scale = {1.5, 0.6, 0.6, 1.0, 0.8, 0.6};
  // Reference length when neck/pelvis is unavailable: multiple of the
  // inter-eye (pupil) distance.
  double eye_fallback_scale = 4.0;
};

struct PartBoxResult {
  std::array<std::optional<Box>, kNumParts> boxes;  // clipped to the image
  std::array<bool, kNumParts> visible{};
  bool used_eye_fallback = false;  // upper-body-only configuration
};

/// Generate the ten part boxes from 17 pose keypoints. Each visible part's
/// box is a square centered on its anchor joint (head:nose, upper arm:elbow,
/// hand:wrist, hip:mid-hip, thigh:knee, foot:ankle) with side
/// scale[part_type] * reference length. The reference length is the
/// neck-pelvis distance (shoulder midpoint to hip midpoint); when that is
/// unavailable the inter-eye fallback applies, and in that upper-body-only
/// case the hand box side is exactly twice the pupil distance.
PartBoxResult generate_part_boxes(const std::array<Keypoint, kNumJoints>& joints,
                                  const PartBoxConfig& config, double image_width,
                                  double image_height);

}  // namespace pastanet::geom
