#include "dipa/data/synthetic.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dipa/checkpoint.hpp"
#include "dipa/data/png.hpp"
#include "dipa/error.hpp"
#include "dipa/rng.hpp"

namespace dipa::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::int64_t PixelMask::object_pixels() const {
  return std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; });
}

const ImageSample* Dataset::find(const std::string& id) const {
  for (const auto* split : {&train, &test})
    for (const auto& s : *split)
      if (s.id == id) return &s;
  return nullptr;
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw InvalidArgument("synthetic: need at least 2 classes");
  if (train_per_class < 1 || test_per_class < 0) throw InvalidArgument("synthetic: bad sample counts");
  if (min_object < 4 || max_object < min_object) throw InvalidArgument("synthetic: bad object size range");
  if (max_object > image_size)
    throw InvalidArgument("synthetic: objects of " + std::to_string(max_object) +
                          " px do not fit a " + std::to_string(image_size) + " px image");
  if (confound_strength < 0.0 || confound_strength > 1.0)
    throw InvalidArgument("synthetic: confound_strength outside [0,1]");
}

void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"classes", s.classes},
           {"train_per_class", s.train_per_class},
           {"test_per_class", s.test_per_class},
           {"image_size", s.image_size},
           {"min_object", s.min_object},
           {"max_object", s.max_object},
           {"confound_strength", s.confound_strength}};
}

void from_json(const json& j, SyntheticSpec& s) {
  s.classes = j.value("classes", s.classes);
  s.train_per_class = j.value("train_per_class", s.train_per_class);
  s.test_per_class = j.value("test_per_class", s.test_per_class);
  s.image_size = j.value("image_size", s.image_size);
  s.min_object = j.value("min_object", s.min_object);
  s.max_object = j.value("max_object", s.max_object);
  s.confound_strength = j.value("confound_strength", s.confound_strength);
}

namespace {

constexpr std::array<const char*, 6> kShapes = {"circle", "square", "triangle", "diamond", "cross", "ring"};

using Rgb = std::array<double, 3>;

Rgb hsv(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(h);
  const double f = h - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// u,v in [-1,1] relative to the object box.
bool inside_shape(int kind, double u, double v) {
  switch (kind % 6) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return std::max(std::fabs(u), std::fabs(v)) <= 0.85;
    case 2: return v >= -0.95 && v <= 0.85 && std::fabs(u) <= 0.5 * (0.85 - v) + 0.05;
    case 3: return std::fabs(u) + std::fabs(v) <= 1.0;
    case 4: return (std::fabs(u) <= 0.33 && std::fabs(v) <= 1.0) || (std::fabs(v) <= 0.33 && std::fabs(u) <= 1.0);
    default: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.3;
    }
  }
}

// Smooth value noise on a coarse lattice, bilinear interpolated.
struct ValueNoise {
  int cells;
  std::vector<double> lattice;
  ValueNoise(Rng& rng, int c) : cells(c), lattice(static_cast<std::size_t>((c + 1) * (c + 1))) {
    for (auto& v : lattice) v = rng.uniform();
  }
  double at(double x, double y) const {  // x,y in [0,1]
    const double fx = x * cells, fy = y * cells;
    const int x0 = std::min(static_cast<int>(fx), cells - 1), y0 = std::min(static_cast<int>(fy), cells - 1);
    const double tx = fx - x0, ty = fy - y0;
    auto l = [&](int i, int j) { return lattice[static_cast<std::size_t>(j * (cells + 1) + i)]; };
    return (1 - ty) * ((1 - tx) * l(x0, y0) + tx * l(x0 + 1, y0)) +
           ty * ((1 - tx) * l(x0, y0 + 1) + tx * l(x0 + 1, y0 + 1));
  }
};

// Background intensity pattern in [0,1] for texture kind at pixel (x,y).
double pattern(int kind, int x, int y, int phase, const ValueNoise& noise, int size) {
  const double nx = (x + 0.5) / size, ny = (y + 0.5) / size;
  switch (kind % 6) {
    case 0: return ((y + phase) / 4) % 2 ? 1.0 : 0.0;                 // horizontal stripes
    case 1: return ((x + phase) / 4) % 2 ? 1.0 : 0.0;                 // vertical stripes
    case 2: return (((x + phase) / 6) + ((y + phase) / 6)) % 2 ? 1.0 : 0.0;  // checker
    case 3: return ((x + y + phase) / 5) % 2 ? 1.0 : 0.0;             // diagonal stripes
    case 4: {                                                          // dots
      const int cx = (x + phase) % 8 - 4, cy = (y + phase) % 8 - 4;
      return cx * cx + cy * cy <= 5 ? 1.0 : 0.0;
    }
    default: return noise.at(nx, ny);                                 // blotches
  }
}

struct ClassStyle {
  int shape;
  Rgb object;
  Rgb bg_a, bg_b;
  int texture;
};

ClassStyle class_style(int k, int classes) {
  ClassStyle s;
  s.shape = k % 6;
  s.texture = k % 6;
  const double hue = static_cast<double>(k) / classes;
  s.object = hsv(hue, 0.85, 0.95);
  s.bg_a = hsv(hue + 0.5 / classes + 0.37, 0.45, 0.35);
  s.bg_b = hsv(hue + 0.5 / classes + 0.37, 0.25, 0.75);
  return s;
}

float quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::lround(c * 255.0)) / 255.0f;
}

ImageSample render(const SyntheticSpec& spec, int label, int index, Split split, std::uint64_t seed) {
  const int S = spec.image_size;
  Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(label) * 100003 + index,
                      split == Split::Train ? 1 : 2));
  const ClassStyle style = class_style(label, spec.classes);
  const bool confounded = rng.uniform() < spec.confound_strength;
  const int phase = static_cast<int>(rng.below(8));
  ValueNoise coarse(rng, 4);
  ValueNoise fine(rng, 8);
  const int box = spec.min_object + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_object - spec.min_object + 1)));
  const double aspect = rng.uniform(0.85, 1.15);
  const int bw = std::min(S, static_cast<int>(std::lround(box * aspect)));
  const int bh = box;
  const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(S - bw + 1)));
  const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(S - bh + 1)));

  ImageSample s;
  s.label = label;
  s.split = split;
  s.pixels = ad::Tensor(ad::Shape{3, S, S});
  s.mask.height = S;
  s.mask.width = S;
  s.mask.bits.assign(static_cast<std::size_t>(S) * S, 0);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double u = ((x + 0.5) - x0) / bw * 2.0 - 1.0;
      const double v = ((y + 0.5) - y0) / bh * 2.0 - 1.0;
      const bool obj = u >= -1.0 && u <= 1.0 && v >= -1.0 && v <= 1.0 && inside_shape(style.shape, u, v);
      Rgb c;
      if (obj) {
        const double shade = 0.85 + 0.15 * fine.at((x + 0.5) / S, (y + 0.5) / S);
        for (int ch = 0; ch < 3; ++ch) c[static_cast<std::size_t>(ch)] = style.object[static_cast<std::size_t>(ch)] * shade;
        s.mask.bits[static_cast<std::size_t>(y) * S + x] = 1;
      } else if (confounded) {
        const double t = pattern(style.texture, x, y, phase, coarse, S);
        for (int ch = 0; ch < 3; ++ch)
          c[static_cast<std::size_t>(ch)] = (1 - t) * style.bg_a[static_cast<std::size_t>(ch)] + t * style.bg_b[static_cast<std::size_t>(ch)];
      } else {
        const double g = 0.35 + 0.3 * coarse.at((x + 0.5) / S, (y + 0.5) / S);
        c = {g, g, g};
      }
      for (int ch = 0; ch < 3; ++ch) {
        const double jitter = 0.03 * (rng.uniform() - 0.5);
        s.pixels[(static_cast<std::int64_t>(ch) * S + y) * S + x] = quantize(c[static_cast<std::size_t>(ch)] + jitter);
      }
    }
  return s;
}

std::string class_folder(int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02d_%s", k, kShapes[static_cast<std::size_t>(k % 6)]);
  return buf;
}

std::string split_name(Split s) { return s == Split::Train ? "train" : "test"; }

std::string sample_id(Split split, const std::string& cls, const std::string& stem) {
  return split_name(split) + "/" + cls + "/" + stem;
}

Image8 to_rgb8(const ad::Tensor& px) {
  Image8 img{static_cast<int>(px.dim(2)), static_cast<int>(px.dim(1)), 3, {}};
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] = static_cast<std::uint8_t>(
            std::lround(std::clamp(px[(static_cast<std::int64_t>(c) * img.height + y) * img.width + x], 0.0f, 1.0f) * 255.0f));
  return img;
}

}  // namespace

std::string shape_name(int class_id) { return kShapes[static_cast<std::size_t>(class_id % 6)]; }

Dataset generate(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Dataset ds;
  for (int k = 0; k < spec.classes; ++k) ds.class_names.push_back(class_folder(k));
  for (Split split : {Split::Train, Split::Test}) {
    auto& out = split == Split::Train ? ds.train : ds.test;
    const int per = split == Split::Train ? spec.train_per_class : spec.test_per_class;
    for (int k = 0; k < spec.classes; ++k)
      for (int i = 0; i < per; ++i) {
        ImageSample s = render(spec, k, i, split, seed);
        char stem[32];
        std::snprintf(stem, sizeof stem, "img_%04d", i);
        s.id = sample_id(split, ds.class_names[static_cast<std::size_t>(k)], stem);
        s.mask.image_id = s.id;
        out.push_back(std::move(s));
      }
    std::sort(out.begin(), out.end(), [](const ImageSample& a, const ImageSample& b) { return a.id < b.id; });
  }
  return ds;
}

std::string git_blob_hash(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + std::string(1, '\0') + content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1)
    throw Error("sha1 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[digest[i] >> 4];
    s += hex[digest[i] & 0xf];
  }
  return s;
}

namespace {

Image8 to_mask8(const PixelMask& mask) {
  Image8 m{mask.width, mask.height, 1, {}};
  m.pixels.reserve(mask.bits.size());
  for (auto b : mask.bits) m.pixels.push_back(b ? 255 : 0);
  return m;
}

json build_manifest(const Dataset& ds, const json& provenance, const fs::path* root) {
  json files = json::array();
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& s : *split) {
      const fs::path rel = fs::path(s.id).concat(".png");
      const fs::path mask_rel = fs::path("masks") / rel;
      const auto img = encode_png(to_rgb8(s.pixels));
      const auto mask = encode_png(to_mask8(s.mask));
      if (root) {
        for (const auto& [path, bytes] : {std::pair{*root / rel, &img}, std::pair{*root / mask_rel, &mask}}) {
          fs::create_directories(path.parent_path());
          std::ofstream out(path, std::ios::binary);
          out.write(reinterpret_cast<const char*>(bytes->data()), static_cast<std::streamsize>(bytes->size()));
          if (!out) throw Error("cannot write " + path.string());
        }
      }
      files.push_back({{"path", rel.generic_string()},
                       {"mask", mask_rel.generic_string()},
                       {"label", s.label},
                       {"checksum", content_hash(img)},
                       {"mask_checksum", content_hash(mask)}});
    }
  return json{{"classes", ds.class_names}, {"files", files}, {"provenance", provenance}};
}

}  // namespace

json dataset_manifest(const Dataset& ds, const json& provenance) { return build_manifest(ds, provenance, nullptr); }

std::string manifest_text(const json& manifest) { return manifest.dump(2) + "\n"; }

json write_dataset(const Dataset& ds, const fs::path& root, const json& provenance) {
  json manifest = build_manifest(ds, provenance, &root);
  std::ofstream(root / "dataset.json") << manifest_text(manifest);
  return manifest;
}

namespace {

ad::Tensor resize_bilinear(const Image8& img, int height, int width) {
  ad::Tensor out(ad::Shape{3, height, width});
  if (img.height == height && img.width == width) {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < 3; ++c)
          out[(static_cast<std::int64_t>(c) * height + y) * width + x] =
              static_cast<float>(img.pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]) / 255.0f;
    return out;
  }
  const double sy = static_cast<double>(img.height) / height, sx = static_cast<double>(img.width) / width;
  auto px = [&](int y, int x, int c) {
    return img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] / 255.0;
  };
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, img.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, img.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - ty) * ((1 - tx) * px(y0, x0, c) + tx * px(y0, x1, c)) +
                         ty * ((1 - tx) * px(y1, x0, c) + tx * px(y1, x1, c));
        out[(static_cast<std::int64_t>(c) * height + y) * width + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

PixelMask resize_nearest(const Image8& m, int height, int width) {
  PixelMask out{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width), {}};
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(m.height - 1, static_cast<int>((y + 0.5) * m.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(m.width - 1, static_cast<int>((x + 0.5) * m.width / width));
      out.bits[static_cast<std::size_t>(y) * width + x] =
          m.pixels[static_cast<std::size_t>(sy) * m.width + sx] != 0 ? 1 : 0;
    }
  }
  return out;
}

}  // namespace

Dataset ingest(const fs::path& root, int height, int width) {
  if (!fs::is_directory(root)) throw NotFound("ingest: no dataset folder at " + root.string());
  Dataset ds;
  std::map<std::string, int> labels;
  for (const char* split : {"train", "test"}) {
    if (!fs::is_directory(root / split)) continue;
    for (const auto& entry : fs::directory_iterator(root / split))
      if (entry.is_directory()) labels[entry.path().filename().string()] = 0;
  }
  if (labels.empty()) throw InvalidArgument("ingest: " + root.string() + " has no class folders");
  int next = 0;
  for (auto& [name, id] : labels) {
    id = next++;
    ds.class_names.push_back(name);
  }
  std::vector<std::string> missing;
  for (Split split : {Split::Train, Split::Test}) {
    auto& out = split == Split::Train ? ds.train : ds.test;
    const fs::path dir = root / split_name(split);
    if (!fs::is_directory(dir)) continue;
    for (const auto& [cls, label] : labels) {
      if (!fs::is_directory(dir / cls)) continue;
      std::vector<fs::path> images;
      for (const auto& e : fs::directory_iterator(dir / cls))
        if (e.is_regular_file() && e.path().extension() == ".png") images.push_back(e.path());
      std::sort(images.begin(), images.end());
      for (const auto& p : images) {
        const fs::path mask_path = root / "masks" / split_name(split) / cls / p.filename();
        if (!fs::exists(mask_path)) {
          missing.push_back(mask_path.string());
          continue;
        }
        ImageSample s;
        s.id = sample_id(split, cls, p.stem().string());
        s.label = label;
        s.split = split;
        const Image8 img = read_png(p, 3);
        s.pixels = resize_bilinear(img, height, width);
        s.mask = resize_nearest(read_png(mask_path, 1), height, width);
        s.mask.image_id = s.id;
        out.push_back(std::move(s));
      }
    }
    std::sort(out.begin(), out.end(), [](const ImageSample& a, const ImageSample& b) { return a.id < b.id; });
  }
  if (!missing.empty()) {
    std::string msg = "ingest: images without masks:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw NotFound(msg);
  }
  if (ds.train.empty() && ds.test.empty()) throw InvalidArgument("ingest: no images under " + root.string());
  return ds;
}

}  // namespace dipa::data
