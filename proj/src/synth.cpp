#include "synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "image_io.hpp"

namespace fs = std::filesystem;

namespace kfwc::data {

void SyntheticSpec::validate() const {
  if (train_groups < 1 || valid_groups < 1 || test_groups < 1)
    throw ConfigError("synthetic spec: every split needs at least one group");
  if (image_size < 32) throw ConfigError("synthetic spec: image_size must be >= 32");
  for (double p : prevalence)
    if (p < 0.0 || p > 1.0) throw ConfigError("synthetic spec: prevalence outside [0,1]");
  if (noise < 0.0 || noise > 0.5) throw ConfigError("synthetic spec: noise outside [0,0.5]");
}

uint64_t SyntheticSpec::hash() const {
  nlohmann::json j;
  j["train_groups"] = train_groups;
  j["valid_groups"] = valid_groups;
  j["test_groups"] = test_groups;
  j["image_size"] = image_size;
  j["prevalence"] = prevalence;
  j["noise"] = noise;
  j["seed"] = seed;
  return fnv1a64(j.dump());
}

const std::array<MarkerSpec, 10>& marker_catalog() {
  static const std::array<MarkerSpec, 10> cat = {{
      {Modality::Fundus, 0, fundus_vocabulary()[0], "dark red disc"},
      {Modality::Fundus, 1, fundus_vocabulary()[1], "bright yellow dot scatter"},
      {Modality::Fundus, 2, fundus_vocabulary()[2], "pale soft blob grid"},
      {Modality::Fundus, 3, fundus_vocabulary()[3], "thick orange ring"},
      {Modality::Fundus, 4, fundus_vocabulary()[4], "large dark maroon ellipse"},
      {Modality::OCT, 0, oct_vocabulary()[0], "dark cavity inside band"},
      {Modality::OCT, 1, oct_vocabulary()[1], "dark half-dome below band"},
      {Modality::OCT, 2, oct_vocabulary()[2], "bright dome bump on band floor"},
      {Modality::OCT, 3, oct_vocabulary()[3], "bright square below band"},
      {Modality::OCT, 4, oct_vocabulary()[4], "bright speckle cluster in band"},
  }};
  return cat;
}

namespace {

using std::uniform_real_distribution;

struct Box {
  int x0, y0, x1, y1;  // half-open
  int w() const { return x1 - x0; }
  int h() const { return y1 - y0; }
};

Box clamp_box(double cx, double cy, double ex, double ey, int size) {
  Box b;
  b.x0 = std::max(0, static_cast<int>(std::floor(cx - ex)));
  b.y0 = std::max(0, static_cast<int>(std::floor(cy - ey)));
  b.x1 = std::min(size, static_cast<int>(std::ceil(cx + ex)) + 1);
  b.y1 = std::min(size, static_cast<int>(std::ceil(cy + ey)) + 1);
  return b;
}

void blend_px(Tensor3& img, int y, int x, const std::array<float, 3>& color, float a) {
  if (a <= 0.f) return;
  for (int ch = 0; ch < img.c; ++ch) {
    const float col = img.c == 1 ? color[0] : color[ch];
    img.at(ch, y, x) = (1.f - a) * img.at(ch, y, x) + a * col;
  }
}

// Filled ellipse with a soft rim of `soft` pixels.
void draw_ellipse(Tensor3& img, double cx, double cy, double rx, double ry,
                  const std::array<float, 3>& color, double soft = 1.5) {
  const Box b = clamp_box(cx, cy, rx + soft, ry + soft, img.w);
  for (int y = b.y0; y < b.y1; ++y) {
    for (int x = b.x0; x < b.x1; ++x) {
      const double d = std::hypot((x - cx) / rx, (y - cy) / ry);
      const double edge = (1.0 - d) * std::min(rx, ry);  // approx px distance to rim
      const float a = static_cast<float>(std::clamp(edge / soft + 1.0, 0.0, 1.0));
      blend_px(img, y, x, color, a);
    }
  }
}

void draw_ring(Tensor3& img, double cx, double cy, double r, double thickness,
               const std::array<float, 3>& color) {
  const Box b = clamp_box(cx, cy, r + thickness, r + thickness, img.w);
  for (int y = b.y0; y < b.y1; ++y) {
    for (int x = b.x0; x < b.x1; ++x) {
      const double d = std::hypot(x - cx, y - cy);
      const double inner = r - thickness / 2, outer = r + thickness / 2;
      double a = 0.0;
      if (d >= inner && d <= outer) a = 1.0;
      else if (d > outer && d < outer + 1.5) a = 1.0 - (d - outer) / 1.5;
      else if (d < inner && d > inner - 1.5) a = 1.0 - (inner - d) / 1.5;
      blend_px(img, y, x, color, static_cast<float>(a));
    }
  }
}

struct Placement {
  double cx, cy;
  double ex, ey;  // half extents
};

// Keeps marker centers apart; gives up after a few tries so generation always
// terminates.
Placement place(Rng& rng, int size, double ex, double ey, std::vector<Placement>& used,
                double y_min_frac = 0.0, double y_max_frac = 1.0) {
  uniform_real_distribution<double> ux(ex + 3, size - ex - 3);
  const double ylo = std::max(ey + 3, y_min_frac * size);
  const double yhi = std::min(size - ey - 3, y_max_frac * size);
  uniform_real_distribution<double> uy(ylo, std::max(ylo + 1.0, yhi));
  Placement p{0, 0, ex, ey};
  for (int attempt = 0; attempt < 16; ++attempt) {
    p.cx = ux(rng);
    p.cy = uy(rng);
    bool ok = true;
    for (const auto& q : used) {
      const double min_dx = 0.8 * (p.ex + q.ex);
      const double min_dy = 0.8 * (p.ey + q.ey);
      if (std::abs(p.cx - q.cx) < min_dx && std::abs(p.cy - q.cy) < min_dy) {
        ok = false;
        break;
      }
    }
    if (ok) break;
  }
  used.push_back(p);
  return p;
}

LesionBox to_lesion_box(Modality m, int sign, const Placement& p, int size) {
  const Box b = clamp_box(p.cx, p.cy, p.ex, p.ey, size);
  return LesionBox{m, sign, b.x0, b.y0, b.w(), b.h()};
}

Tensor3 fundus_background(Rng& rng, int size) {
  uniform_real_distribution<double> u(0.0, 1.0);
  const double gx = (u(rng) - 0.5) * 0.16, gy = (u(rng) - 0.5) * 0.16;
  const double gain_r = 0.92 + 0.16 * u(rng);
  const double gain_g = 0.92 + 0.16 * u(rng);
  const double gain_b = 0.92 + 0.16 * u(rng);
  Tensor3 img(3, size, size);
  const double c = (size - 1) / 2.0;
  const double rmax = std::hypot(c, c);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double r = std::hypot(x - c, y - c) / rmax;
      const double vig = 1.0 - 0.40 * r * r;
      const double grad = gx * (x - c) / size + gy * (y - c) / size;
      img.at(0, y, x) = static_cast<float>(std::clamp((0.58 * vig + grad) * gain_r, 0.0, 1.0));
      img.at(1, y, x) = static_cast<float>(std::clamp((0.28 * vig + grad) * gain_g, 0.0, 1.0));
      img.at(2, y, x) = static_cast<float>(std::clamp((0.12 * vig + grad) * gain_b, 0.0, 1.0));
    }
  }
  return img;
}

// Horizontal retina band with gentle curvature; returns per-column band
// centerline and half-thickness through out-params.
Tensor3 oct_background(Rng& rng, int size, std::vector<double>& band_c,
                       std::vector<double>& band_t) {
  uniform_real_distribution<double> u(0.0, 1.0);
  const double y0 = (0.42 + 0.12 * u(rng)) * size;
  const double amp = 0.06 * size * u(rng);
  const double freq = 2 * M_PI * (1.0 + u(rng)) / size;
  const double phase = 2 * M_PI * u(rng);
  const double thick = (0.09 + 0.03 * u(rng)) * size;
  const double gain = 0.9 + 0.2 * u(rng);
  band_c.resize(size);
  band_t.assign(size, thick);
  Tensor3 img(1, size, size);
  for (int x = 0; x < size; ++x) band_c[x] = y0 + amp * std::sin(freq * x + phase);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double top = band_c[x] - thick, bot = band_c[x] + thick;
      double v = 0.06;
      if (y >= top - 2 && y < top + 2) v = 0.55;                       // inner limiting membrane
      else if (y >= top + 2 && y < bot - 3) v = 0.32;                  // retina body
      else if (y >= bot - 3 && y <= bot + 2) v = 0.68;                 // RPE line
      else if (y > bot + 2) v = std::max(0.06, 0.20 - 0.0015 * (y - bot));  // choroid
      img.at(0, y, x) = static_cast<float>(std::clamp(v * gain, 0.0, 1.0));
    }
  }
  return img;
}

void add_noise(Tensor3& img, Rng& rng, double sigma) {
  if (sigma <= 0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (float& v : img.v) v = static_cast<float>(std::clamp(v + n(rng), 0.0, 1.0));
}

ImageU8 quantize(const Tensor3& img) {
  ImageU8 out;
  out.c = img.c;
  out.h = img.h;
  out.w = img.w;
  out.bytes.resize(static_cast<size_t>(img.c) * img.h * img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch)
        out.at(y, x, ch) =
            static_cast<uint8_t>(std::lround(std::clamp(img.at(ch, y, x), 0.f, 1.f) * 255.f));
  return out;
}

// --- fundus motifs ------------------------------------------------------

LesionBox draw_fundus_marker(Tensor3& img, int sign, Rng& rng, std::vector<Placement>& used) {
  uniform_real_distribution<double> usize(0.12, 0.22);
  uniform_real_distribution<double> u(0.0, 1.0);
  const int size = img.w;
  const double s = usize(rng) * size;
  switch (sign) {
    case kFundusHemorrhage: {  // dark red disc
      const double r = s / 2;
      auto p = place(rng, size, r, r, used);
      draw_ellipse(img, p.cx, p.cy, r, r, {0.42f, 0.05f, 0.06f});
      return to_lesion_box(Modality::Fundus, sign, p, size);
    }
    case kFundusExudation: {  // hard bright yellow dots, irregular scatter
      const double ext = s / 2;
      auto p = place(rng, size, ext, ext, used);
      const int ndots = 9 + static_cast<int>(u(rng) * 5);
      for (int i = 0; i < ndots; ++i) {
        const double dx = (u(rng) - 0.5) * 2 * (ext - 2);
        const double dy = (u(rng) - 0.5) * 2 * (ext - 2);
        const double r = std::max(1.5, s / 14 * (0.7 + 0.6 * u(rng)));
        draw_ellipse(img, p.cx + dx, p.cy + dy, r, r, {0.96f, 0.87f, 0.25f}, 0.8);
      }
      return to_lesion_box(Modality::Fundus, sign, p, size);
    }
    case kFundusDrusen: {  // regular grid of pale soft blobs
      const double ext = s / 2;
      auto p = place(rng, size, ext, ext, used);
      const int grid = 3;
      for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
          const double dx = (gx - (grid - 1) / 2.0) * (2 * ext / grid);
          const double dy = (gy - (grid - 1) / 2.0) * (2 * ext / grid);
          draw_ellipse(img, p.cx + dx, p.cy + dy, s / 10, s / 10, {0.88f, 0.78f, 0.52f}, 2.5);
        }
      }
      return to_lesion_box(Modality::Fundus, sign, p, size);
    }
    case kFundusOrangeRedLesion: {  // thick orange ring
      const double r = s / 2;
      auto p = place(rng, size, r + s / 8, r + s / 8, used);
      draw_ring(img, p.cx, p.cy, r, s / 5, {0.95f, 0.45f, 0.12f});
      return to_lesion_box(Modality::Fundus, sign, p, size);
    }
    case kFundusSubretinalHem: {  // big dark maroon ellipse
      const double rx = 0.75 * s, ry = 0.45 * s;
      auto p = place(rng, size, rx, ry, used);
      draw_ellipse(img, p.cx, p.cy, rx, ry, {0.22f, 0.02f, 0.08f}, 3.0);
      return to_lesion_box(Modality::Fundus, sign, p, size);
    }
  }
  throw ContractError("bad fundus sign index");
}

// --- OCT motifs ---------------------------------------------------------

LesionBox draw_oct_marker(Tensor3& img, int sign, Rng& rng, std::vector<Placement>& used,
                          const std::vector<double>& band_c, const std::vector<double>& band_t) {
  uniform_real_distribution<double> usize(0.12, 0.22);
  uniform_real_distribution<double> u(0.0, 1.0);
  const int size = img.w;
  const double s = usize(rng) * size;

  // x first, then anchor y relative to the band at that column.
  auto anchored = [&](double ex, double ey, double y_off_frac) {
    Placement p{0, 0, ex, ey};
    for (int attempt = 0; attempt < 16; ++attempt) {
      uniform_real_distribution<double> ux(ex + 3, size - ex - 3);
      p.cx = ux(rng);
      const int col = std::clamp(static_cast<int>(p.cx), 0, size - 1);
      p.cy = std::clamp(band_c[col] + y_off_frac * band_t[col], ey + 1, size - ey - 1);
      bool ok = true;
      for (const auto& q : used)
        if (std::abs(p.cx - q.cx) < 0.8 * (p.ex + q.ex) &&
            std::abs(p.cy - q.cy) < 0.8 * (p.ey + q.ey))
          ok = false;
      if (ok) break;
    }
    used.push_back(p);
    return p;
  };

  switch (sign) {
    case kOctIntraretinalFluid: {  // dark cavity inside the band
      auto p = anchored(0.5 * s, 0.30 * s, 0.0);
      draw_ellipse(img, p.cx, p.cy, p.ex, p.ey, {0.10f, 0.10f, 0.10f});
      return to_lesion_box(Modality::OCT, sign, p, size);
    }
    case kOctSubretinalFluid: {  // dark half-dome hanging under the band floor
      auto p = anchored(0.65 * s, 0.35 * s, 1.35);
      const Box b = clamp_box(p.cx, p.cy, p.ex, p.ey, size);
      for (int y = b.y0; y < b.y1; ++y) {
        if (y < p.cy - 1) continue;  // flat top
        for (int x = b.x0; x < b.x1; ++x) {
          const double d = std::hypot((x - p.cx) / p.ex, (y - p.cy) / p.ey);
          if (d <= 1.0) blend_px(img, y, x, {0.08f, 0.08f, 0.08f}, 1.f);
        }
      }
      return to_lesion_box(Modality::OCT, sign, p, size);
    }
    case kOctPed: {  // bright dome rising from the band floor
      auto p = anchored(0.55 * s, 0.45 * s, 0.9);
      const Box b = clamp_box(p.cx, p.cy, p.ex, p.ey, size);
      for (int y = b.y0; y < b.y1; ++y) {
        if (y > p.cy + 1) continue;  // dome only above its base line
        for (int x = b.x0; x < b.x1; ++x) {
          const double d = std::hypot((x - p.cx) / p.ex, (y - p.cy) / p.ey);
          if (d <= 1.0) blend_px(img, y, x, {0.85f, 0.85f, 0.85f}, 1.f);
        }
      }
      return to_lesion_box(Modality::OCT, sign, p, size);
    }
    case kOctHyperUnderRpe: {  // bright square block below the band
      auto p = anchored(0.45 * s, 0.32 * s, 1.8);
      const Box b = clamp_box(p.cx, p.cy, p.ex, p.ey, size);
      for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) blend_px(img, y, x, {0.92f, 0.92f, 0.92f}, 1.f);
      return to_lesion_box(Modality::OCT, sign, p, size);
    }
    case kOctHyperInRetina: {  // bright speckles inside/under the band
      auto p = anchored(0.55 * s, 0.40 * s, 0.4);
      const int ndots = 8 + static_cast<int>(u(rng) * 5);
      for (int i = 0; i < ndots; ++i) {
        const double dx = (u(rng) - 0.5) * 2 * (p.ex - 2);
        const double dy = (u(rng) - 0.5) * 2 * (p.ey - 2);
        const double r = std::max(1.2, s / 16 * (0.7 + 0.6 * u(rng)));
        draw_ellipse(img, p.cx + dx, p.cy + dy, r, r, {0.95f, 0.95f, 0.95f}, 0.8);
      }
      return to_lesion_box(Modality::OCT, sign, p, size);
    }
  }
  throw ContractError("bad oct sign index");
}

}  // namespace

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticDataset ds;
  ds.manifest.generator_seed = spec.seed;
  ds.manifest.spec_hash = hex64(spec.hash());

  const int total = spec.train_groups + spec.valid_groups + spec.test_groups;
  std::array<std::vector<std::string>, 3> split_ids;
  char idbuf[32];

  for (int gi = 0; gi < total; ++gi) {
    std::snprintf(idbuf, sizeof(idbuf), "g%05d", gi);
    const std::string gid = idbuf;
    Rng rng(derive_seed(spec.seed, "group", static_cast<uint64_t>(gi)));
    std::uniform_real_distribution<double> u(0.0, 1.0);

    BiModalGroup g;
    g.id = gid;
    std::snprintf(idbuf, sizeof(idbuf), "e%05d", gi);
    g.fundus = {gid + "_f", Modality::Fundus, "images/" + gid + "_f.png", {}, idbuf};
    g.oct = {gid + "_o", Modality::OCT, "images/" + gid + "_o.png", {}, idbuf};
    g.fundus_signs.modality = Modality::Fundus;
    g.oct_signs.modality = Modality::OCT;
    for (int si = 0; si < 5; ++si) g.fundus_signs.flags[si] = u(rng) < spec.prevalence[si];
    for (int si = 0; si < 5; ++si) g.oct_signs.flags[si] = u(rng) < spec.prevalence[5 + si];
    g.disease = disease_from_signs(g.fundus_signs, g.oct_signs);

    Tensor3 fundus = fundus_background(rng, spec.image_size);
    std::vector<Placement> used_f;
    for (int si = 0; si < 5; ++si)
      if (g.fundus_signs.flags[si])
        g.lesion_boxes.push_back(draw_fundus_marker(fundus, si, rng, used_f));
    add_noise(fundus, rng, spec.noise);

    std::vector<double> band_c, band_t;
    Tensor3 oct = oct_background(rng, spec.image_size, band_c, band_t);
    std::vector<Placement> used_o;
    for (int si = 0; si < 5; ++si)
      if (g.oct_signs.flags[si])
        g.lesion_boxes.push_back(draw_oct_marker(oct, si, rng, used_o, band_c, band_t));
    add_noise(oct, rng, spec.noise);

    ds.images[g.fundus.id] = quantize(fundus);
    ds.images[g.oct.id] = quantize(oct);

    const int split = gi < spec.train_groups ? 0 : (gi < spec.train_groups + spec.valid_groups ? 1 : 2);
    split_ids[split].push_back(gid);
    ds.manifest.groups.push_back(std::move(g));
  }
  ds.manifest.splits["train"] = std::move(split_ids[0]);
  ds.manifest.splits["valid"] = std::move(split_ids[1]);
  ds.manifest.splits["test"] = std::move(split_ids[2]);
  ds.manifest.validate();
  return ds;
}

void write_dataset(const SyntheticDataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  for (const auto& [id, img] : ds.images) {
    const auto png = encode_png(img);
    write_file((fs::path(dir) / "images" / (id + ".png")).string(), png.data(), png.size());
  }
  write_manifest(ds.manifest, (fs::path(dir) / "manifest.json").string());
}

}  // namespace kfwc::data
