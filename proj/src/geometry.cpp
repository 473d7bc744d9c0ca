#include "pastanet/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace pastanet::geom {

double iou(const Box& a, const Box& b) {
  double ix1 = std::max(a.x1, b.x1);
  double iy1 = std::max(a.y1, b.y1);
  double ix2 = std::min(a.x2, b.x2);
  double iy2 = std::min(a.y2, b.y2);
  double iw = std::max(0.0, ix2 - ix1);
  double ih = std::max(0.0, iy2 - iy1);
  double inter = iw * ih;
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

Box clip_box(const Box& b, double width, double height) {
  double x1 = std::clamp(b.x1, 0.0, width);
  double y1 = std::clamp(b.y1, 0.0, height);
  double x2 = std::clamp(b.x2, 0.0, width);
  double y2 = std::clamp(b.y2, 0.0, height);
  if (!(x1 < x2) || !(y1 < y2))
    throw data_error("box lies entirely outside the image");
  return Box(x1, y1, x2, y2);
}

namespace {

// Anchor joints per part, in PartIndex order.
constexpr std::array<JointId, kNumParts> kAnchor = {
    JointId::Nose,       JointId::RightElbow, JointId::LeftElbow, JointId::RightWrist,
    JointId::LeftWrist,  JointId::LeftHip /* placeholder, hip uses the midpoint */,
    JointId::RightKnee,  JointId::LeftKnee,   JointId::RightAnkle, JointId::LeftAnkle};

struct Point {
  double x, y;
};

double dist(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

PartBoxResult generate_part_boxes(const std::array<Keypoint, kNumJoints>& joints,
                                  const PartBoxConfig& config, double image_width,
                                  double image_height) {
  for (const auto& j : joints)
    if (!j.finite()) throw data_error("non-finite keypoint coordinate");

  auto vis = [&](JointId id) {
    return joints[static_cast<int>(id)].confidence > config.visibility_threshold;
  };
  auto pt = [&](JointId id) {
    const auto& j = joints[static_cast<int>(id)];
    return Point{j.x, j.y};
  };

  bool any_visible = false;
  for (int i = 0; i < kNumJoints; ++i)
    if (joints[i].confidence > config.visibility_threshold) any_visible = true;
  if (!any_visible) throw data_error("no visible joints above the confidence threshold");

  bool shoulders = vis(JointId::LeftShoulder) && vis(JointId::RightShoulder);
  bool hips = vis(JointId::LeftHip) && vis(JointId::RightHip);
  bool eyes = vis(JointId::LeftEye) && vis(JointId::RightEye);

  double reference = 0.0;
  bool eye_fallback = false;
  if (shoulders && hips) {
    Point neck{0.5 * (pt(JointId::LeftShoulder).x + pt(JointId::RightShoulder).x),
               0.5 * (pt(JointId::LeftShoulder).y + pt(JointId::RightShoulder).y)};
    Point pelvis{0.5 * (pt(JointId::LeftHip).x + pt(JointId::RightHip).x),
                 0.5 * (pt(JointId::LeftHip).y + pt(JointId::RightHip).y)};
    reference = dist(neck, pelvis);
  } else if (eyes) {
    eye_fallback = true;
    reference = config.eye_fallback_scale * dist(pt(JointId::LeftEye), pt(JointId::RightEye));
  } else {
    throw data_error("cannot derive a reference length: neck/pelvis and eyes all invisible");
  }
  if (!(reference > 0.0))
    throw data_error("degenerate reference length (coincident joints)");

  double pupil = eyes ? dist(pt(JointId::LeftEye), pt(JointId::RightEye)) : 0.0;

  PartBoxResult out;
  for (int p = 0; p < kNumParts; ++p) {
    auto part = static_cast<PartIndex>(p);
    Point anchor;
    bool anchor_visible;
    if (part == PartIndex::Hip) {
      anchor_visible = hips;
      if (anchor_visible)
        anchor = {0.5 * (pt(JointId::LeftHip).x + pt(JointId::RightHip).x),
                  0.5 * (pt(JointId::LeftHip).y + pt(JointId::RightHip).y)};
    } else {
      JointId a = kAnchor[p];
      anchor_visible = vis(a);
      if (anchor_visible) anchor = pt(a);
    }
    if (!anchor_visible) continue;

    PartType type = part_type_of(part);
    double side = config.scale[static_cast<int>(type)] * reference;
    // Upper-body-only rule: the hand box side is twice the pupil distance.
    if (eye_fallback && type == PartType::Hand) side = 2.0 * pupil;
    if (!(side > 0.0)) throw data_error("degenerate part box side");

    Box raw(anchor.x - side / 2, anchor.y - side / 2, anchor.x + side / 2, anchor.y + side / 2);
    try {
      out.boxes[p] = clip_box(raw, image_width, image_height);
      out.visible[p] = true;
    } catch (const Error&) {
      // Anchored entirely outside the canvas: treat as invisible.
      out.visible[p] = false;
    }
  }
  out.used_eye_fallback = eye_fallback;
  return out;
}

}  // namespace pastanet::geom
