#include "pastanet/mnist_action.hpp"

#include <algorithm>
#include <chrono>
#include <malloc.h>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "pastanet/geometry.hpp"
#include "pastanet/nn.hpp"
#include "pastanet/optim.hpp"
#include "pastanet/tape.hpp"
#include "pastanet/tensorfile.hpp"

namespace pastanet::bench {

using diff::Tensor;
using diff::TensorF;
using nlohmann::json;

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off,
                        const char* what) {
  if (off + 4 > b.size()) throw data_error(std::string("truncated IDX file in ") + what);
  return (static_cast<std::uint32_t>(b[off]) << 24) | (static_cast<std::uint32_t>(b[off + 1]) << 16) |
         (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

IdxImages parse_idx_images(const std::vector<std::uint8_t>& bytes) {
  if (read_be32(bytes, 0, "magic") != kImagesMagic)
    throw data_error("bad IDX image magic (expected 0x00000803)");
  IdxImages out;
  out.count = read_be32(bytes, 4, "count");
  out.rows = read_be32(bytes, 8, "rows");
  out.cols = read_be32(bytes, 12, "cols");
  std::size_t need = 16 + out.count * out.rows * out.cols;
  if (bytes.size() < need)
    throw data_error("truncated IDX image payload: need " + std::to_string(need) + " bytes, have " +
                     std::to_string(bytes.size()));
  out.pixels.assign(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(need));
  return out;
}

std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& bytes) {
  if (read_be32(bytes, 0, "magic") != kLabelsMagic)
    throw data_error("bad IDX label magic (expected 0x00000801)");
  std::size_t count = read_be32(bytes, 4, "count");
  if (bytes.size() < 8 + count) throw data_error("truncated IDX label payload");
  return std::vector<std::uint8_t>(bytes.begin() + 8,
                                   bytes.begin() + static_cast<std::ptrdiff_t>(8 + count));
}

std::vector<std::uint8_t> serialize_idx_images(const IdxImages& images) {
  std::vector<std::uint8_t> out;
  write_be32(out, kImagesMagic);
  write_be32(out, static_cast<std::uint32_t>(images.count));
  write_be32(out, static_cast<std::uint32_t>(images.rows));
  write_be32(out, static_cast<std::uint32_t>(images.cols));
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> serialize_idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  write_be32(out, kLabelsMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

IdxImages load_idx_images(const std::string& path) { return parse_idx_images(read_file_bytes(path)); }
std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
  return parse_idx_labels(read_file_bytes(path));
}
void save_idx_images(const IdxImages& images, const std::string& path) {
  write_file_bytes(serialize_idx_images(images), path);
}
void save_idx_labels(const std::vector<std::uint8_t>& labels, const std::string& path) {
  write_file_bytes(serialize_idx_labels(labels), path);
}

// ---------------------------------------------------------------------------
// Synthetic digit glyphs: jittered seven-segment strokes.

namespace {

struct Segment {
  double x1, y1, x2, y2;
};

// Segment order: A top, B top-right, C bottom-right, D bottom, E bottom-left,
// F top-left, G middle.
constexpr std::uint8_t kDigitSegments[10] = {
    0b0111111,  // 0: ABCDEF
    0b0000110,  // 1: BC
    0b1011011,  // 2: ABDEG
    0b1001111,  // 3: ABCDG
    0b1100110,  // 4: BCFG
    0b1101101,  // 5: ACDFG
    0b1111101,  // 6: ACDEFG
    0b0000111,  // 7: ABC
    0b1111111,  // 8
    0b1101111,  // 9: ABCDFG
};

void draw_segment(std::vector<std::uint8_t>& img, std::size_t size, const Segment& s,
                  double thickness, double intensity) {
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      double px = x + 0.5, py = y + 0.5;
      double dx = s.x2 - s.x1, dy = s.y2 - s.y1;
      double len2 = dx * dx + dy * dy;
      double t = len2 > 0 ? ((px - s.x1) * dx + (py - s.y1) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      double cx = s.x1 + t * dx, cy = s.y1 + t * dy;
      double d = std::hypot(px - cx, py - cy);
      if (d < thickness) {
        double v = intensity * std::clamp(1.2 - d / thickness, 0.0, 1.0);
        img[y * size + x] = static_cast<std::uint8_t>(
            std::min(255.0, static_cast<double>(img[y * size + x]) + v));
      }
    }
}

std::vector<std::uint8_t> draw_digit(int digit, Rng& rng, std::size_t size) {
  std::vector<std::uint8_t> img(size * size, 0);
  double left = 8 + rng.uniform(-2.0, 2.0);
  double right = 20 + rng.uniform(-2.0, 2.0);
  double top = 4 + rng.uniform(-1.5, 1.5);
  double mid = 14 + rng.uniform(-1.5, 1.5);
  double bottom = 24 + rng.uniform(-1.5, 1.5);
  double thickness = rng.uniform(1.6, 2.4);
  double intensity = rng.uniform(200.0, 255.0);
  auto jitter = [&] { return rng.uniform(-0.8, 0.8); };
  Segment segs[7] = {
      {left + jitter(), top + jitter(), right + jitter(), top + jitter()},      // A
      {right + jitter(), top + jitter(), right + jitter(), mid + jitter()},     // B
      {right + jitter(), mid + jitter(), right + jitter(), bottom + jitter()},  // C
      {left + jitter(), bottom + jitter(), right + jitter(), bottom + jitter()},// D
      {left + jitter(), mid + jitter(), left + jitter(), bottom + jitter()},    // E
      {left + jitter(), top + jitter(), left + jitter(), mid + jitter()},       // F
      {left + jitter(), mid + jitter(), right + jitter(), mid + jitter()},      // G
  };
  for (int s = 0; s < 7; ++s)
    if (kDigitSegments[digit] & (1u << s)) draw_segment(img, size, segs[s], thickness, intensity);
  return img;
}

}  // namespace

DigitPool synth_digit_pool(std::uint64_t seed, std::size_t per_class) {
  DigitPool pool;
  pool.images.count = per_class * kDigitClasses;
  pool.images.rows = pool.images.cols = 28;
  pool.images.pixels.reserve(pool.images.count * 28 * 28);
  Rng master(seed);
  for (int digit = 0; digit < kDigitClasses; ++digit) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng = master.stream("digit", static_cast<std::uint64_t>(digit) * 1000003 + i);
      auto img = draw_digit(digit, rng, 28);
      pool.images.pixels.insert(pool.images.pixels.end(), img.begin(), img.end());
      pool.labels.push_back(static_cast<std::uint8_t>(digit));
    }
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Scenes

int scene_label(const std::vector<int>& digit_classes) {
  if (digit_classes.size() < 2) throw data_error("scene needs at least two digits");
  std::vector<int> sorted = digit_classes;
  std::sort(sorted.begin(), sorted.end(), std::greater<int>());
  return sorted[0] + sorted[1];
}

std::pair<std::vector<std::uint8_t>, SceneSpec> generate_scene(Rng rng, const DigitPool& pool,
                                                               const MnistActionConfig& cfg,
                                                               std::size_t* resample_count) {
  if (pool.labels.empty()) throw data_error("empty digit pool");
  std::vector<std::vector<std::size_t>> by_class(kDigitClasses);
  for (std::size_t i = 0; i < pool.labels.size(); ++i)
    by_class[pool.labels[i]].push_back(i);
  for (int c = 0; c < kDigitClasses; ++c)
    if (by_class[c].empty()) throw data_error("digit pool has no samples of class " + std::to_string(c));

  const std::size_t canvas = cfg.canvas, ds = cfg.digit_size;
  if (ds > canvas) throw usage_error("digit larger than canvas");

  SceneSpec spec;
  std::size_t restarts = 0;
  for (;;) {
    spec.digits.clear();
    std::size_t count = cfg.min_digits + rng.uniform_int(cfg.max_digits - cfg.min_digits + 1);
    bool ok = true;
    for (std::size_t d = 0; d < count && ok; ++d) {
      int cls = static_cast<int>(rng.uniform_int(kDigitClasses));
      std::size_t src = by_class[cls][rng.uniform_int(by_class[cls].size())];
      bool placed = false;
      for (int attempt = 0; attempt < 100; ++attempt) {
        double x = static_cast<double>(rng.uniform_int(canvas - ds + 1));
        double y = static_cast<double>(rng.uniform_int(canvas - ds + 1));
        Box box(x, y, x + static_cast<double>(ds), y + static_cast<double>(ds));
        bool clash = false;
        for (const auto& prev : spec.digits)
          if (geom::iou(box, prev.box) > cfg.overlap_cap) clash = true;
        if (!clash) {
          spec.digits.push_back({cls, src, box});
          placed = true;
          break;
        }
      }
      if (!placed) ok = false;
    }
    if (ok) break;
    ++restarts;
    if (restarts > 1000)
      throw data_error("scene placement failed after 1000 resamples; lower the overlap cap");
  }
  if (resample_count) *resample_count += restarts;

  std::vector<int> classes;
  for (const auto& d : spec.digits) classes.push_back(d.digit_class);
  spec.label = scene_label(classes);
  double ux1 = spec.digits[0].box.x1, uy1 = spec.digits[0].box.y1;
  double ux2 = spec.digits[0].box.x2, uy2 = spec.digits[0].box.y2;
  for (const auto& d : spec.digits) {
    ux1 = std::min(ux1, d.box.x1);
    uy1 = std::min(uy1, d.box.y1);
    ux2 = std::max(ux2, d.box.x2);
    uy2 = std::max(uy2, d.box.y2);
  }
  spec.union_box = Box(ux1, uy1, ux2, uy2);
  spec.noise_seed = rng.next_u64();

  std::vector<std::uint8_t> pixels(canvas * canvas, 0);
  for (const auto& d : spec.digits) {
    auto gx = static_cast<std::size_t>(d.box.x1);
    auto gy = static_cast<std::size_t>(d.box.y1);
    const std::uint8_t* glyph = pool.images.pixels.data() + d.source_index * ds * ds;
    for (std::size_t yy = 0; yy < ds; ++yy)
      for (std::size_t xx = 0; xx < ds; ++xx) {
        std::uint8_t& px = pixels[(gy + yy) * canvas + gx + xx];
        px = std::max(px, glyph[yy * ds + xx]);
      }
  }
  if (cfg.noise_sigma > 0) {
    Rng noise(spec.noise_seed);
    for (auto& px : pixels) {
      double v = static_cast<double>(px) + cfg.noise_sigma * 255.0 * noise.normal();
      px = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
    }
  }
  return {std::move(pixels), std::move(spec)};
}

MnistDataset generate_dataset(const MnistActionConfig& cfg, const DigitPool& pool,
                              const std::string& split, std::size_t count) {
  MnistDataset ds;
  ds.canvas = cfg.canvas;
  ds.pixels.assign(count * cfg.canvas * cfg.canvas, 0);
  ds.specs.resize(count);
  Rng master(cfg.seed);
  std::vector<std::size_t> resamples(std::max<std::size_t>(cfg.jobs, 1), 0);

  auto worker = [&](std::size_t worker_id, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng = master.stream("scene/" + split, i);
      auto [pixels, spec] = generate_scene(rng, pool, cfg, &resamples[worker_id]);
      std::copy(pixels.begin(), pixels.end(), ds.pixels.begin() + static_cast<std::ptrdiff_t>(
          i * cfg.canvas * cfg.canvas));
      ds.specs[i] = std::move(spec);
    }
  };

  std::size_t jobs = std::max<std::size_t>(cfg.jobs, 1);
  if (jobs == 1 || count < 2 * jobs) {
    worker(0, 0, count);
  } else {
    std::vector<std::thread> threads;
    std::size_t chunk = (count + jobs - 1) / jobs;
    for (std::size_t w = 0; w < jobs; ++w) {
      std::size_t begin = w * chunk, end = std::min(count, begin + chunk);
      if (begin < end) threads.emplace_back(worker, w, begin, end);
    }
    for (auto& t : threads) t.join();
  }
  for (auto r : resamples) ds.resamples += r;
  return ds;
}

void save_dataset(const MnistDataset& ds, const std::string& idx_path,
                  const std::string& sidecar_path) {
  IdxImages images;
  images.count = ds.size();
  images.rows = images.cols = ds.canvas;
  images.pixels = ds.pixels;
  save_idx_images(images, idx_path);

  std::ofstream out(sidecar_path);
  if (!out) throw data_error("cannot write " + sidecar_path);
  for (const auto& spec : ds.specs) {
    json j;
    j["label"] = spec.label;
    j["noise_seed"] = spec.noise_seed;
    j["union_box"] = {spec.union_box.x1, spec.union_box.y1, spec.union_box.x2, spec.union_box.y2};
    json digits = json::array();
    for (const auto& d : spec.digits)
      digits.push_back({{"class", d.digit_class},
                        {"source", d.source_index},
                        {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}});
    j["digits"] = std::move(digits);
    out << j.dump() << "\n";
  }
}

MnistDataset load_dataset(const std::string& idx_path, const std::string& sidecar_path) {
  IdxImages images = load_idx_images(idx_path);
  if (images.rows != images.cols) throw data_error("canvas must be square");
  MnistDataset ds;
  ds.canvas = images.rows;
  ds.pixels = std::move(images.pixels);
  std::ifstream in(sidecar_path);
  if (!in) throw data_error("cannot open " + sidecar_path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    SceneSpec spec;
    spec.label = j.at("label").get<int>();
    spec.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    auto ub = j.at("union_box");
    spec.union_box = Box(ub[0], ub[1], ub[2], ub[3]);
    for (const auto& d : j.at("digits")) {
      auto b = d.at("box");
      spec.digits.push_back({d.at("class").get<int>(), d.at("source").get<std::size_t>(),
                             Box(b[0], b[1], b[2], b[3])});
    }
    ds.specs.push_back(std::move(spec));
  }
  if (ds.specs.size() != ds.pixels.size() / (ds.canvas * ds.canvas))
    throw data_error("sidecar and IDX canvas counts differ");
  return ds;
}

// ---------------------------------------------------------------------------
// Models

MnistVariant mnist_variant_from_string(const std::string& s) {
  if (s == "instance") return MnistVariant::Instance;
  if (s == "early") return MnistVariant::Early;
  if (s == "late") return MnistVariant::Late;
  if (s == "part" || s == "part_only") return MnistVariant::PartOnly;
  throw usage_error("unknown variant '" + s + "' (expected instance|early|late|part)");
}

std::string to_string(MnistVariant v) {
  switch (v) {
    case MnistVariant::Instance: return "instance";
    case MnistVariant::Early: return "early";
    case MnistVariant::Late: return "late";
    case MnistVariant::PartOnly: return "part";
  }
  return "?";
}

namespace {

constexpr std::size_t kMaxSlots = 5;    // digit slots, zero-padded with a mask
constexpr std::size_t kRoiBins = 4;     // p x p RoI grid
constexpr std::size_t kDigitFeat = 128; // digit-branch feature width
constexpr std::size_t kMlpHidden = 256;

struct Trunk {
  diff::Param<float>*w1, *b1, *w2, *b2, *w3, *b3, *w4, *b4;

  static Trunk create(diff::ParamStore<float>& ps, std::uint64_t seed) {
    auto conv = [&](const char* name, std::size_t cin, std::size_t cout) {
      return &ps.create_glorot(std::string("trunk/") + name + "/w", {3, 3, cin, cout}, seed,
                               9 * cin, 9 * cout);
    };
    Trunk t;
    t.w1 = conv("conv1", 1, 8);
    t.b1 = &ps.create("trunk/conv1/b", {8});
    t.w2 = conv("conv2", 8, 16);
    t.b2 = &ps.create("trunk/conv2/b", {16});
    t.w3 = conv("conv3", 16, 32);
    t.b3 = &ps.create("trunk/conv3/b", {32});
    t.w4 = conv("conv4", 32, 32);
    t.b4 = &ps.create("trunk/conv4/b", {32});
    return t;
  }

  // 4 convolutions (ReLU fused) with two stride-2 poolings; output stride 4.
  int build(diff::Tape<float>& t, int x) const {
    diff::Conv2dSpec same{3, 3, 1, 1, true};
    x = t.maxpool2d(t.conv2d(x, t.param(*w1), t.param(*b1), same), 2, 2);
    x = t.maxpool2d(t.conv2d(x, t.param(*w2), t.param(*b2), same), 2, 2);
    x = t.conv2d(x, t.param(*w3), t.param(*b3), same);
    x = t.conv2d(x, t.param(*w4), t.param(*b4), same);
    return x;
  }
};

struct MnistModel {
  MnistVariant variant;
  diff::ParamStore<float> params;
  Trunk trunk;
  diff::Mlp<float> instance_mlp;  // union RoI -> 19
  diff::Mlp<float> digit_fc;      // RoI -> 128 -> 10 (penultimate = digit feature)
  diff::Mlp<float> part_mlp;      // concat digit feats (+ union in early) -> 19

  static MnistModel create(MnistVariant variant, std::uint64_t seed) {
    MnistModel m;
    m.variant = variant;
    m.trunk = Trunk::create(m.params, seed);
    std::size_t roi_dim = kRoiBins * kRoiBins * 32;
    bool has_instance = variant == MnistVariant::Instance || variant == MnistVariant::Late;
    bool has_parts = variant != MnistVariant::Instance;
    if (has_instance)
      m.instance_mlp = diff::Mlp<float>::create(m.params, "instance", roi_dim, {kMlpHidden},
                                                kSumClasses, seed);
    if (has_parts) {
      m.digit_fc = diff::Mlp<float>::create(m.params, "digit", roi_dim, {kDigitFeat},
                                            kDigitClasses, seed);
      std::size_t part_in = kMaxSlots * kDigitFeat +
                            (variant == MnistVariant::Early ? roi_dim : 0);
      m.part_mlp = diff::Mlp<float>::create(m.params, "part", part_in, {kMlpHidden}, kSumClasses,
                                            seed);
    }
    return m;
  }

  struct Forward {
    int loss = -1;
    int instance_logits = -1;
    int part_logits = -1;
    std::array<int, kMaxSlots> digit_logits{};
    std::size_t valid_slots = 0;
  };

  struct Batch {
    TensorF images;  // [n, canvas, canvas, 1]
    std::vector<Box> union_boxes;
    std::array<std::vector<Box>, kMaxSlots> digit_boxes;
    std::array<std::vector<int>, kMaxSlots> digit_labels;  // -1 = padded slot
    TensorF slot_mask;                                     // [n, kMaxSlots]
    std::vector<int> labels;
  };

  Forward build(diff::Tape<float>& t, const Batch& b, bool with_loss) const {
    Forward out;
    int feat = trunk.build(t, t.input(b.images));
    double scale = 0.25;  // two stride-2 poolings
    std::size_t n = b.labels.size();
    std::size_t roi_dim = kRoiBins * kRoiBins * 32;

    int union_flat = -1;
    bool needs_union = variant != MnistVariant::PartOnly;
    if (needs_union) {
      int union_roi = t.roi_pool(feat, b.union_boxes, kRoiBins, scale);
      union_flat = t.reshape(union_roi, {n, roi_dim});
    }

    std::vector<int> loss_terms;
    if (variant == MnistVariant::Instance || variant == MnistVariant::Late) {
      out.instance_logits = instance_mlp.build(t, union_flat);
      if (with_loss) loss_terms.push_back(t.softmax_ce(out.instance_logits, b.labels));
    }

    if (variant != MnistVariant::Instance) {
      std::vector<int> digit_feats;
      std::vector<int> aux_terms;
      for (std::size_t slot = 0; slot < kMaxSlots; ++slot) {
        int roi = t.roi_pool(feat, b.digit_boxes[slot], kRoiBins, scale);
        int flat = t.reshape(roi, {n, roi_dim});
        int hidden = -1;
        int logits = digit_fc.build_with_penultimate(t, flat, &hidden);
        out.digit_logits[slot] = logits;
        // Padded slots contribute exactly zero to the concatenated feature.
        TensorF mask({n, kDigitFeat});
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < kDigitFeat; ++j)
            mask.at2(r, j) = b.slot_mask.at2(r, slot);
        digit_feats.push_back(t.mul(hidden, t.input(mask)));
        if (with_loss) aux_terms.push_back(t.softmax_ce(logits, b.digit_labels[slot]));
      }
      if (variant == MnistVariant::Early) digit_feats.push_back(union_flat);
      out.part_logits = part_mlp.build(t, t.concat_cols(digit_feats));
      if (with_loss) {
        loss_terms.push_back(t.softmax_ce(out.part_logits, b.labels));
        loss_terms.push_back(t.scale(t.add_scalars(aux_terms), 1.0 / kMaxSlots));
      }
    }
    if (with_loss) out.loss = t.add_scalars(loss_terms);
    return out;
  }
};

MnistModel::Batch make_batch(const MnistDataset& ds, const std::vector<std::size_t>& ids) {
  MnistModel::Batch b;
  std::size_t n = ids.size(), canvas = ds.canvas;
  b.images = TensorF({n, canvas, canvas, 1});
  b.slot_mask = TensorF({n, kMaxSlots});
  double full = static_cast<double>(canvas);
  for (std::size_t r = 0; r < n; ++r) {
    const SceneSpec& spec = ds.specs[ids[r]];
    const std::uint8_t* px = ds.pixels.data() + ids[r] * canvas * canvas;
    float* dst = b.images.data() + r * canvas * canvas;
    for (std::size_t i = 0; i < canvas * canvas; ++i)
      dst[i] = static_cast<float>(px[i]) / 255.0f;
    b.union_boxes.push_back(spec.union_box);
    b.labels.push_back(spec.label);
    for (std::size_t slot = 0; slot < kMaxSlots; ++slot) {
      if (slot < spec.digits.size()) {
        b.digit_boxes[slot].push_back(spec.digits[slot].box);
        b.digit_labels[slot].push_back(spec.digits[slot].digit_class);
        b.slot_mask.at2(r, slot) = 1.0f;
      } else {
        b.digit_boxes[slot].push_back(Box(0, 0, full, full));  // masked out downstream
        b.digit_labels[slot].push_back(-1);
      }
    }
  }
  return b;
}

std::vector<double> softmax_row(const float* row, std::size_t k) {
  double mx = row[0];
  for (std::size_t j = 1; j < k; ++j) mx = std::max<double>(mx, row[j]);
  std::vector<double> p(k);
  double z = 0;
  for (std::size_t j = 0; j < k; ++j) {
    p[j] = std::exp(static_cast<double>(row[j]) - mx);
    z += p[j];
  }
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace

MnistTrainResult train_mnist_action(const MnistActionConfig& cfg, MnistVariant variant,
                                    const MnistDataset& train, const MnistDataset& test,
                                    const std::function<void(std::size_t, double)>& progress,
                                    const std::string& checkpoint_out) {
  auto t_start = std::chrono::steady_clock::now();
  if (train.size() == 0 || test.size() == 0) throw data_error("empty MNIST-Action dataset");
#if defined(__GLIBC__)
  // Large step buffers churn every iteration; keep them on the heap instead
  // of handing them back to the kernel.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif

  MnistModel model = MnistModel::create(variant, cfg.seed);
  diff::OptimizerState<float> opt;
  bool is_instance = variant == MnistVariant::Instance;
  std::size_t batch = is_instance ? cfg.instance_batch : cfg.hierarchical_batch;
  double lr = is_instance ? cfg.instance_lr : cfg.hierarchical_lr;

  MnistTrainResult result;
  result.seed = cfg.seed;
  result.variant = to_string(variant);

  Rng master(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle = master.stream("shuffle", epoch);
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle.uniform_int(i + 1)]);
    double epoch_loss = 0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(
                                       std::min(start + batch, order.size())));
      MnistModel::Batch b = make_batch(train, ids);
      diff::Tape<float> tape;
      MnistModel::Forward fwd = model.build(tape, b, true);
      double loss = tape.val(fwd.loss)[0];
      if (!std::isfinite(loss))
        throw numeric_error("non-finite MNIST-Action loss at epoch " + std::to_string(epoch));
      model.params.zero_grads();
      tape.backward(fwd.loss);
      diff::rmsprop_step(model.params, opt, lr);
      epoch_loss += loss;
      ++steps;
    }
    result.epoch_train_loss.push_back(epoch_loss / static_cast<double>(steps));
    if (progress) progress(epoch, result.epoch_train_loss.back());
  }

  // Test evaluation.
  std::size_t correct = 0, digit_correct = 0, digit_total = 0;
  const std::size_t eval_batch = 16;
  for (std::size_t start = 0; start < test.size(); start += eval_batch) {
    std::vector<std::size_t> ids;
    for (std::size_t i = start; i < std::min(start + eval_batch, test.size()); ++i)
      ids.push_back(i);
    MnistModel::Batch b = make_batch(test, ids);
    diff::Tape<float> tape;
    MnistModel::Forward fwd = model.build(tape, b, false);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      std::vector<double> probs(kSumClasses, 0.0);
      if (variant == MnistVariant::Instance || variant == MnistVariant::Late) {
        const TensorF& logits = tape.val(fwd.instance_logits);
        auto p = softmax_row(logits.data() + r * kSumClasses, kSumClasses);
        for (int j = 0; j < kSumClasses; ++j) probs[j] += p[j];
      }
      if (variant != MnistVariant::Instance) {
        const TensorF& logits = tape.val(fwd.part_logits);
        auto p = softmax_row(logits.data() + r * kSumClasses, kSumClasses);
        if (variant != MnistVariant::Late) probs.assign(p.begin(), p.end());
        else
          for (int j = 0; j < kSumClasses; ++j) probs[j] += p[j];
      }
      int pred = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      result.predictions.push_back(pred);
      result.labels.push_back(b.labels[r]);
      if (pred == b.labels[r]) ++correct;
      if (variant != MnistVariant::Instance) {
        for (std::size_t slot = 0; slot < kMaxSlots; ++slot) {
          if (b.digit_labels[slot][r] < 0) continue;
          const TensorF& dl = tape.val(fwd.digit_logits[slot]);
          const float* row = dl.data() + r * kDigitClasses;
          int dp = static_cast<int>(std::max_element(row, row + kDigitClasses) - row);
          if (dp == b.digit_labels[slot][r]) ++digit_correct;
          ++digit_total;
        }
      }
    }
  }
  if (!checkpoint_out.empty())
    diff::save_tensor_file(diff::params_to_tensors(model.params), checkpoint_out);
  result.test_accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  result.digit_accuracy =
      digit_total ? static_cast<double>(digit_correct) / static_cast<double>(digit_total) : 0.0;
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace pastanet::bench
