#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pastanet {

/// Runtime error carrying a category that maps onto process exit codes.
struct Error : std::runtime_error {
  enum class Kind { Usage, Data, Numeric, Internal };
  Kind kind;
  explicit Error(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

inline Error usage_error(const std::string& m) { return Error(Error::Kind::Usage, m); }
inline Error data_error(const std::string& m) { return Error(Error::Kind::Data, m); }
inline Error numeric_error(const std::string& m) { return Error(Error::Kind::Numeric, m); }

// The ten body parts, in fixed head-to-foot order. This order is semantic:
// the sequential reasoning head consumes parts in exactly this order.
enum class PartIndex : int {
  Head = 0,
  RightUpperArm = 1,
  LeftUpperArm = 2,
  RightHand = 3,
  LeftHand = 4,
  Hip = 5,
  RightThigh = 6,
  LeftThigh = 7,
  RightFoot = 8,
  LeftFoot = 9,
};

inline constexpr int kNumParts = 10;

// The six part type classes; paired parts share a type.
enum class PartType : int { Head = 0, Arm = 1, Hand = 2, Hip = 3, Thigh = 4, Foot = 5 };

inline constexpr int kNumPartTypes = 6;

constexpr PartType part_type_of(PartIndex p) {
  switch (p) {
    case PartIndex::Head: return PartType::Head;
    case PartIndex::RightUpperArm:
    case PartIndex::LeftUpperArm: return PartType::Arm;
    case PartIndex::RightHand:
    case PartIndex::LeftHand: return PartType::Hand;
    case PartIndex::Hip: return PartType::Hip;
    case PartIndex::RightThigh:
    case PartIndex::LeftThigh: return PartType::Thigh;
    case PartIndex::RightFoot:
    case PartIndex::LeftFoot: return PartType::Foot;
  }
  return PartType::Head;
}

inline constexpr std::array<std::string_view, kNumParts> kPartNames = {
    "head",        "right_upper_arm", "left_upper_arm", "right_hand", "left_hand",
    "hip",         "right_thigh",     "left_thigh",     "right_foot", "left_foot"};

inline constexpr std::array<std::string_view, kNumPartTypes> kPartTypeNames = {
    "head", "arm", "hand", "hip", "thigh", "foot"};

/// Axis-aligned pixel box. Construction enforces x1 < x2, y1 < y2.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  Box() = default;
  Box(double ax1, double ay1, double ax2, double ay2) : x1(ax1), y1(ay1), x2(ax2), y2(ay2) {
    if (!(x1 < x2) || !(y1 < y2))
      throw data_error("box has non-positive extent: [" + std::to_string(x1) + "," +
                       std::to_string(y1) + "," + std::to_string(x2) + "," + std::to_string(y2) +
                       "]");
  }

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

// COCO-style 17-joint layout.
enum class JointId : int {
  Nose = 0,
  LeftEye = 1,
  RightEye = 2,
  LeftEar = 3,
  RightEar = 4,
  LeftShoulder = 5,
  RightShoulder = 6,
  LeftElbow = 7,
  RightElbow = 8,
  LeftWrist = 9,
  RightWrist = 10,
  LeftHip = 11,
  RightHip = 12,
  LeftKnee = 13,
  RightKnee = 14,
  LeftAnkle = 15,
  RightAnkle = 16,
};

inline constexpr int kNumJoints = 17;

struct Keypoint {
  double x = 0, y = 0;
  double confidence = 0;  // in [0,1]

  bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

}  // namespace pastanet
