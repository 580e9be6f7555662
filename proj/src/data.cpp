#include "clcc/data.hpp"

#include "clcc/errors.hpp"

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

namespace clcc {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kImageExtensions = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::map<std::string, fs::path> index_by_stem(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) throw DataError("missing directory: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (!kImageExtensions.count(lower(entry.path().extension().string()))) continue;
    const auto stem = entry.path().stem().string();
    if (!out.emplace(stem, entry.path()).second)
      throw DataError("duplicate id '" + stem + "' in " + dir.string());
  }
  return out;
}

torch::Tensor mat_to_tensor_u8(const cv::Mat& mat) {
  auto t = torch::from_blob(mat.data, {mat.rows, mat.cols, mat.channels()}, torch::kUInt8).clone();
  return t;
}

torch::Tensor read_mask(const fs::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw DataError("unreadable mask: " + path.string());
  if (raw.dims != 2) throw DataError("mask is not 2-D: " + path.string());
  if (raw.depth() != CV_8U) throw DataError("mask must be 8-bit: " + path.string());
  cv::Mat gray;
  if (raw.channels() == 1)
    gray = raw;
  else if (raw.channels() == 3)
    cv::cvtColor(raw, gray, cv::COLOR_BGR2GRAY);
  else if (raw.channels() == 4)
    cv::cvtColor(raw, gray, cv::COLOR_BGRA2GRAY);
  else
    throw DataError("mask has unsupported channel count: " + path.string());
  if (!gray.isContinuous()) gray = gray.clone();
  return mat_to_tensor_u8(gray).squeeze(-1).gt(127).to(torch::kFloat32);
}

}  // namespace

torch::Tensor read_image(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("unreadable image: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return mat_to_tensor_u8(rgb).permute({2, 0, 1}).contiguous().to(torch::kFloat32).div_(255.0);
}

void write_image(const torch::Tensor& image, const fs::path& path) {
  auto u8 = image.detach().cpu().clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8);
  cv::Mat out;
  if (u8.dim() == 2) {
    u8 = u8.contiguous();
    out = cv::Mat(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC1, u8.data_ptr()).clone();
  } else if (u8.dim() == 3 && u8.size(0) == 3) {
    u8 = u8.permute({1, 2, 0}).contiguous();
    cv::Mat rgb(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC3, u8.data_ptr());
    cv::cvtColor(rgb, out, cv::COLOR_RGB2BGR);
  } else {
    throw ShapeError("write_image expects [3, H, W] or [H, W], got " + c10::str(image.sizes()));
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw DataError("failed to write image: " + path.string());
}

std::vector<Sample> load_dataset(const fs::path& root) {
  const auto images = index_by_stem(root / "images");
  const auto masks = index_by_stem(root / "masks");
  std::vector<Sample> out;
  out.reserve(images.size());
  for (const auto& [stem, image_path] : images) {
    auto it = masks.find(stem);
    if (it == masks.end()) throw DataError("no mask for image id '" + stem + "' (" + image_path.string() + ")");
    Sample s;
    s.id = stem;
    s.image = read_image(image_path);
    s.mask = read_mask(it->second);
    if (s.mask->size(0) != s.height() || s.mask->size(1) != s.width())
      throw DataError("mask size differs from image for id '" + stem + "'");
    out.push_back(std::move(s));
  }
  return out;  // std::map iteration is already sorted by id
}

void save_dataset(const std::vector<Sample>& samples, const fs::path& root) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (const auto& s : samples) {
    write_image(s.image, root / "images" / (s.id + ".png"));
    const auto& m = s.mask ? s.mask : s.audit_mask;
    if (m) write_image(*m, root / "masks" / (s.id + ".png"));
  }
}

void SplitSpec::validate() const {
  for (double f : {train_fraction, val_fraction, test_fraction})
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
    throw ConfigError("train/val/test fractions must sum to 1");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
    throw ConfigError("labeled fraction must lie in (0, 1]");
}

Sample strip_label(Sample s) {
  if (s.mask) {
    s.audit_mask = std::move(s.mask);
    s.mask.reset();
  }
  return s;
}

Splits make_splits(const std::vector<Sample>& samples, const SplitSpec& spec) {
  spec.validate();
  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return samples[a].id < samples[b].id; });
  std::mt19937_64 part_rng(spec.seed);
  std::shuffle(order.begin(), order.end(), part_rng);

  const auto total = static_cast<long>(samples.size());
  const long n_train = std::lround(static_cast<double>(total) * spec.train_fraction);
  const long n_val = std::lround(static_cast<double>(total) * spec.val_fraction);
  const long n_test = total - n_train - n_val;
  const long n_labeled = std::lround(static_cast<double>(n_train) * spec.labeled_fraction);
  const long n_unlabeled = n_train - n_labeled;

  auto require = [](long count, const char* name) {
    if (count <= 0) throw DataError(std::string("split produces an empty ") + name + " partition");
  };
  require(n_train, "train");
  require(n_val, "val");
  require(n_test, "test");
  require(n_labeled, "labeled");
  if (spec.labeled_fraction < 1.0) require(n_unlabeled, "unlabeled");

  std::vector<size_t> train(order.begin(), order.begin() + n_train);
  std::sort(train.begin(), train.end(), [&](size_t a, size_t b) { return samples[a].id < samples[b].id; });
  std::mt19937_64 label_rng(spec.label_seed);
  std::shuffle(train.begin(), train.end(), label_rng);

  auto collect = [&](auto first, auto last, bool strip) {
    std::vector<Sample> out;
    for (auto it = first; it != last; ++it) out.push_back(strip ? strip_label(samples[*it]) : samples[*it]);
    std::sort(out.begin(), out.end(), [](const Sample& a, const Sample& b) { return a.id < b.id; });
    return out;
  };
  Splits splits;
  splits.train_labeled = collect(train.begin(), train.begin() + n_labeled, false);
  splits.train_unlabeled = collect(train.begin() + n_labeled, train.end(), true);
  splits.val = collect(order.begin() + n_train, order.begin() + n_train + n_val, false);
  splits.test = collect(order.begin() + n_train + n_val, order.end(), false);
  for (const auto& s : splits.train_labeled)
    if (!s.mask) throw DataError("labeled split member '" + s.id + "' has no mask");
  return splits;
}

std::string split_manifest(const Splits& splits, const SplitSpec& spec) {
  auto ids = [](const std::vector<Sample>& v) {
    std::vector<std::string> out;
    for (const auto& s : v) out.push_back(s.id);
    return out;
  };
  nlohmann::ordered_json j;
  j["seed"] = spec.seed;
  j["label_seed"] = spec.label_seed;
  j["fractions"] = {{"train", spec.train_fraction},
                    {"val", spec.val_fraction},
                    {"test", spec.test_fraction},
                    {"labeled", spec.labeled_fraction}};
  j["train_labeled"] = ids(splits.train_labeled);
  j["train_unlabeled"] = ids(splits.train_unlabeled);
  j["val"] = ids(splits.val);
  j["test"] = ids(splits.test);
  return j.dump(2) + "\n";
}

void write_split_manifest(const Splits& splits, const SplitSpec& spec, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write split manifest: " + path.string());
  out << split_manifest(splits, spec);
  if (!out) throw DataError("failed writing split manifest: " + path.string());
}

Splits read_split_manifest(const fs::path& path, const std::vector<Sample>& samples) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read split manifest: " + path.string());
  const auto j = nlohmann::json::parse(in);
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : samples) by_id[s.id] = &s;
  auto pick = [&](const char* key, bool strip) {
    std::vector<Sample> out;
    for (const auto& id : j.at(key)) {
      auto it = by_id.find(id.get<std::string>());
      if (it == by_id.end()) throw DataError("manifest id '" + id.get<std::string>() + "' not in dataset");
      out.push_back(strip ? strip_label(*it->second) : *it->second);
    }
    return out;
  };
  Splits splits;
  splits.train_labeled = pick("train_labeled", false);
  splits.train_unlabeled = pick("train_unlabeled", true);
  splits.val = pick("val", false);
  splits.test = pick("test", false);
  return splits;
}

Sample resize_sample(const Sample& s, int64_t side) {
  if (side <= 0) throw ConfigError("resize side must be positive");
  Sample out = s;
  if (s.height() == side && s.width() == side) return out;
  namespace F = torch::nn::functional;
  out.image = F::interpolate(s.image.unsqueeze(0),
                             F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{side, side})
                                 .mode(torch::kBilinear)
                                 .align_corners(false))
                  .squeeze(0)
                  .clamp(0.0, 1.0);
  auto nearest = [side](const torch::Tensor& m) {
    return F::interpolate(m.unsqueeze(0).unsqueeze(0),
                          F::InterpolateFuncOptions().size(std::vector<int64_t>{side, side}).mode(torch::kNearest))
        .squeeze(0)
        .squeeze(0);
  };
  if (s.mask) out.mask = nearest(*s.mask);
  if (s.audit_mask) out.audit_mask = nearest(*s.audit_mask);
  return out;
}

Sample flip_sample(const Sample& s, bool horizontal, bool vertical) {
  std::vector<int64_t> image_dims, mask_dims;
  if (horizontal) {
    image_dims.push_back(2);
    mask_dims.push_back(1);
  }
  if (vertical) {
    image_dims.push_back(1);
    mask_dims.push_back(0);
  }
  if (image_dims.empty()) return s;
  Sample out = s;
  out.image = s.image.flip(image_dims);
  if (s.mask) out.mask = s.mask->flip(mask_dims);
  if (s.audit_mask) out.audit_mask = s.audit_mask->flip(mask_dims);
  return out;
}

Sample augment_sample(const Sample& s, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  const bool h = coin(rng);
  const bool v = coin(rng);
  return flip_sample(s, h, v);
}

namespace {

struct Blob {
  double cx, cy, rx, ry, angle, wobble, lobes, phase;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * std::cos(angle) + dy * std::sin(angle)) / rx;
    const double v = (-dx * std::sin(angle) + dy * std::cos(angle)) / ry;
    const double r = std::sqrt(u * u + v * v);
    const double phi = std::atan2(v, u);
    return r < 1.0 + wobble * std::sin(lobes * phi + phase);
  }
};

Sample synthesize_one(std::mt19937_64& rng, int64_t side, std::string id) {
  using U = std::uniform_real_distribution<double>;
  const double s = static_cast<double>(side);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  while (true) {
    std::array<double, 3> bg_color{};
    for (auto& c : bg_color) c = U(0.3, 0.6)(rng);
    const double bg_fx = U(0.5, 2.0)(rng), bg_fy = U(0.5, 2.0)(rng), bg_phase = U(0.0, two_pi)(rng);

    const int blobs = std::uniform_int_distribution<int>(1, 3)(rng);
    std::vector<Blob> shapes;
    for (int k = 0; k < blobs; ++k) {
      Blob b{};
      b.cx = U(0.2 * s, 0.8 * s)(rng);
      b.cy = U(0.2 * s, 0.8 * s)(rng);
      b.rx = U(0.08 * s, 0.22 * s)(rng);
      b.ry = U(0.08 * s, 0.22 * s)(rng);
      b.angle = U(0.0, std::numbers::pi)(rng);
      b.wobble = U(0.0, 0.2)(rng);
      b.lobes = static_cast<double>(std::uniform_int_distribution<int>(2, 4)(rng));
      b.phase = U(0.0, two_pi)(rng);
      shapes.push_back(b);
    }
    // Foreground: warmer and brighter, with a fine oriented stripe texture.
    std::array<double, 3> fg_shift{U(0.12, 0.25)(rng), U(-0.02, 0.08)(rng), U(-0.15, -0.05)(rng)};
    const double tex_angle = U(0.0, std::numbers::pi)(rng);
    const double tex_period = U(3.0, 5.0)(rng);
    const double tex_amp = U(0.06, 0.1)(rng);

    auto image = torch::empty({3, side, side}, torch::kFloat32);
    auto mask = torch::zeros({side, side}, torch::kFloat32);
    auto img = image.accessor<float, 3>();
    auto msk = mask.accessor<float, 2>();
    std::normal_distribution<double> grain(0.0, 0.03);
    int64_t fg_pixels = 0;
    for (int64_t y = 0; y < side; ++y) {
      for (int64_t x = 0; x < side; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        bool inside = false;
        for (const auto& b : shapes) inside = inside || b.contains(px, py);
        const double shade = 0.06 * std::sin(two_pi * (bg_fx * px + bg_fy * py) / s + bg_phase);
        const double stripes =
            tex_amp * std::sin(two_pi * (px * std::cos(tex_angle) + py * std::sin(tex_angle)) / tex_period);
        for (int ch = 0; ch < 3; ++ch) {
          double v = bg_color[static_cast<size_t>(ch)] + shade + grain(rng);
          if (inside) v += fg_shift[static_cast<size_t>(ch)] + stripes;
          img[ch][y][x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
        if (inside) {
          msk[y][x] = 1.0F;
          ++fg_pixels;
        }
      }
    }
    const double fraction = static_cast<double>(fg_pixels) / (s * s);
    if (fraction < 0.05 || fraction > 0.5) continue;
    return Sample{std::move(id), image, mask, std::nullopt};
  }
}

}  // namespace

std::vector<Sample> generate_synthetic(uint64_t seed, int64_t count, int64_t side) {
  if (count <= 0) throw std::invalid_argument("generate_synthetic: count must be positive");
  if (side < 8) throw std::invalid_argument("generate_synthetic: side must be at least 8");
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%05lld", static_cast<long long>(i));
    out.push_back(synthesize_one(rng, side, id));
  }
  return out;
}

torch::Tensor stack_images(const std::vector<const Sample*>& samples) {
  std::vector<torch::Tensor> t;
  t.reserve(samples.size());
  for (const auto* s : samples) t.push_back(s->image);
  return torch::stack(t);
}

torch::Tensor stack_masks(const std::vector<const Sample*>& samples) {
  std::vector<torch::Tensor> t;
  t.reserve(samples.size());
  for (const auto* s : samples) {
    if (!s->mask) throw DataError("sample '" + s->id + "' has no mask");
    t.push_back(*s->mask);
  }
  return torch::stack(t);
}

}  // namespace clcc
