#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pastanet/rng.hpp"
#include "pastanet/types.hpp"

namespace pastanet::bench {

// ---------------------------------------------------------------------------
// IDX binary format (big-endian headers, raw u8 payload).

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;  // count*rows*cols
};

IdxImages parse_idx_images(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_idx_images(const IdxImages& images);
std::vector<std::uint8_t> serialize_idx_labels(const std::vector<std::uint8_t>& labels);

IdxImages load_idx_images(const std::string& path);
std::vector<std::uint8_t> load_idx_labels(const std::string& path);
void save_idx_images(const IdxImages& images, const std::string& path);
void save_idx_labels(const std::vector<std::uint8_t>& labels, const std::string& path);

// ---------------------------------------------------------------------------
// Scene generation: 3-5 digits on a 128x128 canvas, label = sum of the two
// largest digit classes.

struct DigitPool {
  IdxImages images;                  // 28x28 glyphs
  std::vector<std::uint8_t> labels;  // classes 0-9
};

/// Procedurally drawn digit glyphs (seven-segment strokes with jitter), for
/// hermetic runs without an external digit file.
DigitPool synth_digit_pool(std::uint64_t seed, std::size_t per_class = 200);

struct DigitPlacement {
  int digit_class = 0;
  std::size_t source_index = 0;
  Box box{0, 0, 1, 1};  // 28x28 placement
};

struct SceneSpec {
  std::vector<DigitPlacement> digits;  // 3..5 entries
  int label = 0;                       // 0..18
  Box union_box{0, 0, 1, 1};
  std::uint64_t noise_seed = 0;
};

struct MnistActionConfig {
  std::size_t train_size = 5000, test_size = 800;
  std::size_t canvas = 128, digit_size = 28;
  std::size_t min_digits = 3, max_digits = 5;
  double noise_sigma = 0.1;    // fraction of the dynamic range
  double overlap_cap = 0.3;    // max pairwise IoU between digit boxes
  std::uint64_t seed = 1;

  // Appendix training settings.
  std::size_t epochs = 100;            // the paper trains 1000
  double instance_lr = 1e-4;           // RMSProp
  std::size_t instance_batch = 16;
  double hierarchical_lr = 1e-3;       // RMSProp
  std::size_t hierarchical_batch = 32;
  std::size_t jobs = 1;                // scene-generation worker threads
};

inline constexpr int kSumClasses = 19;    // labels 0..18
inline constexpr int kDigitClasses = 10;

/// Label oracle: sum of the two largest digit classes, multiplicity counted.
int scene_label(const std::vector<int>& digit_classes);

/// One scene: composited digit glyphs plus clipped Gaussian noise. Pixels
/// are u8 in [0,255]. Pure function of the rng stream and inputs;
/// resample_count reports placement restarts.
std::pair<std::vector<std::uint8_t>, SceneSpec> generate_scene(Rng rng, const DigitPool& pool,
                                                               const MnistActionConfig& cfg,
                                                               std::size_t* resample_count = nullptr);

struct MnistDataset {
  std::size_t canvas = 128;
  std::vector<std::uint8_t> pixels;  // scenes * canvas * canvas
  std::vector<SceneSpec> specs;
  std::size_t resamples = 0;

  std::size_t size() const { return specs.size(); }
};

/// Scene i derives its own stream from (seed, split, i), so generation is a
/// pure function of (seed, config) and parallelizable across scenes.
MnistDataset generate_dataset(const MnistActionConfig& cfg, const DigitPool& pool,
                              const std::string& split, std::size_t count);

void save_dataset(const MnistDataset& ds, const std::string& idx_path,
                  const std::string& sidecar_path);
MnistDataset load_dataset(const std::string& idx_path, const std::string& sidecar_path);

// ---------------------------------------------------------------------------
// Models and training.

enum class MnistVariant { Instance, Early, Late, PartOnly };
MnistVariant mnist_variant_from_string(const std::string& s);
std::string to_string(MnistVariant v);

struct MnistTrainResult {
  double test_accuracy = 0;
  double digit_accuracy = 0;              // auxiliary head, hierarchical variants only
  std::vector<double> epoch_train_loss;
  std::vector<int> predictions;           // over the test set
  std::vector<int> labels;
  std::uint64_t seed = 0;
  std::string variant;
  double wall_seconds = 0;
};

/// Train one variant per the Appendix settings and report test accuracy.
/// A non-empty checkpoint_out writes the trained parameters in the binary
/// tensor container format.
MnistTrainResult train_mnist_action(const MnistActionConfig& cfg, MnistVariant variant,
                                    const MnistDataset& train, const MnistDataset& test,
                                    const std::function<void(std::size_t, double)>& progress = {},
                                    const std::string& checkpoint_out = {});

}  // namespace pastanet::bench
