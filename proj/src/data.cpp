#include "data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace kfwc::data {

std::string modality_name(Modality m) { return m == Modality::Fundus ? "fundus" : "oct"; }

Modality modality_from_name(const std::string& s) {
  if (s == "fundus") return Modality::Fundus;
  if (s == "oct") return Modality::OCT;
  throw ConfigError("unknown modality: " + s);
}

const std::array<std::string, 5>& fundus_vocabulary() {
  static const std::array<std::string, 5> v = {
      "macular retinal hemorrhage",
      "macular retinal exudation",
      "drusen in macular area",
      "orange-red lesions under the retina",
      "subretinal hemorrhage",
  };
  return v;
}

const std::array<std::string, 5>& oct_vocabulary() {
  static const std::array<std::string, 5> v = {
      "intraretinal fluid",
      "subretinal fluid",
      "pigment epithelial detachment",
      "hyperreflective lesions under RPE",
      "hyperreflective lesions in/under the retina",
  };
  return v;
}

std::string disease_name(DiseaseLabel d) {
  switch (d) {
    case DiseaseLabel::NeovascularAMD: return "NeovascularAMD";
    case DiseaseLabel::PCV: return "PCV";
    case DiseaseLabel::Other: return "Other";
  }
  throw ContractError("bad disease label");
}

DiseaseLabel disease_from_int(int v) {
  if (v < 0 || v > 2) throw ConfigError("disease label out of range: " + std::to_string(v));
  return static_cast<DiseaseLabel>(v);
}

DiseaseLabel disease_from_signs(const SignLabelVector& fundus, const SignLabelVector& oct) {
  if (fundus.modality != Modality::Fundus || oct.modality != Modality::OCT)
    throw ContractError("disease_from_signs: modality mismatch");
  if (fundus.flags[kFundusOrangeRedLesion] || oct.flags[kOctHyperUnderRpe])
    return DiseaseLabel::PCV;
  if (oct.flags[kOctIntraretinalFluid] || oct.flags[kOctSubretinalFluid] ||
      fundus.flags[kFundusSubretinalHem])
    return DiseaseLabel::NeovascularAMD;
  return DiseaseLabel::Other;
}

const BiModalGroup& DatasetManifest::group(const std::string& id) const {
  for (const auto& g : groups)
    if (g.id == id) return g;
  throw ArtifactError("group not found in manifest: " + id);
}

void DatasetManifest::validate() const {
  std::set<std::string> all;
  for (const auto& g : groups) {
    if (!all.insert(g.id).second) throw ConfigError("duplicate group id: " + g.id);
    if (g.fundus.eye_id.empty() || g.fundus.eye_id != g.oct.eye_id)
      throw ConfigError("group " + g.id + ": fundus/oct eye_id mismatch");
    if (g.fundus_signs.modality != Modality::Fundus || g.oct_signs.modality != Modality::OCT)
      throw ConfigError("group " + g.id + ": sign vector modality mismatch");
  }
  std::set<std::string> seen;
  size_t total = 0;
  for (const auto& [name, ids] : splits) {
    for (const auto& id : ids) {
      if (!all.count(id)) throw ConfigError("split " + name + " references unknown group " + id);
      if (!seen.insert(id).second) throw ConfigError("group in multiple splits: " + id);
      ++total;
    }
  }
  if (!splits.empty() && total != groups.size())
    throw ConfigError("splits do not cover all groups");
}

namespace {

json record_to_json(const ImageRecord& r) {
  json j;
  j["id"] = r.id;
  j["modality"] = modality_name(r.modality);
  j["path"] = r.path;
  j["eye_id"] = r.eye_id;
  return j;
}

ImageRecord record_from_json(const json& j) {
  ImageRecord r;
  r.id = j.at("id").get<std::string>();
  r.modality = modality_from_name(j.at("modality").get<std::string>());
  r.path = j.at("path").get<std::string>();
  r.eye_id = j.at("eye_id").get<std::string>();
  return r;
}

json flags_to_json(const SignLabelVector& s) {
  json a = json::array();
  for (bool f : s.flags) a.push_back(f ? 1 : 0);
  return a;
}

std::array<bool, 5> flags_from_json(const json& a) {
  if (!a.is_array() || a.size() != 5) throw ConfigError("sign vector must have 5 entries");
  std::array<bool, 5> out{};
  for (int i = 0; i < 5; ++i) out[i] = a[i].get<int>() != 0;
  return out;
}

}  // namespace

json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["vocabulary"]["fundus"] = fundus_vocabulary();
  j["vocabulary"]["oct"] = oct_vocabulary();
  if (m.generator_seed) {
    j["generator"]["seed"] = *m.generator_seed;
    j["generator"]["spec_hash"] = m.spec_hash;
  }
  json groups = json::array();
  for (const auto& g : m.groups) {
    json jg;
    jg["id"] = g.id;
    jg["fundus"] = record_to_json(g.fundus);
    jg["oct"] = record_to_json(g.oct);
    jg["fundus_signs"] = flags_to_json(g.fundus_signs);
    jg["oct_signs"] = flags_to_json(g.oct_signs);
    jg["disease"] = static_cast<int>(g.disease);
    jg["disease_name"] = disease_name(g.disease);
    if (!g.lesion_boxes.empty()) {
      json boxes = json::array();
      for (const auto& b : g.lesion_boxes) {
        boxes.push_back({{"modality", modality_name(b.modality)},
                         {"sign", b.sign},
                         {"x", b.x},
                         {"y", b.y},
                         {"w", b.w},
                         {"h", b.h}});
      }
      jg["lesion_boxes"] = boxes;
    }
    groups.push_back(std::move(jg));
  }
  j["groups"] = std::move(groups);
  j["splits"] = m.splits;
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != 1)
    throw ArtifactError("unsupported manifest format_version " +
                        std::to_string(m.format_version));
  if (j.at("vocabulary").at("fundus") != json(fundus_vocabulary()) ||
      j.at("vocabulary").at("oct") != json(oct_vocabulary()))
    throw ArtifactError("manifest vocabulary does not match the frozen sign vocabulary");
  if (j.contains("generator")) {
    m.generator_seed = j["generator"].at("seed").get<uint64_t>();
    m.spec_hash = j["generator"].value("spec_hash", "");
  }
  for (const auto& jg : j.at("groups")) {
    BiModalGroup g;
    g.id = jg.at("id").get<std::string>();
    g.fundus = record_from_json(jg.at("fundus"));
    g.oct = record_from_json(jg.at("oct"));
    g.fundus_signs = {Modality::Fundus, flags_from_json(jg.at("fundus_signs"))};
    g.oct_signs = {Modality::OCT, flags_from_json(jg.at("oct_signs"))};
    g.disease = disease_from_int(jg.at("disease").get<int>());
    if (jg.contains("lesion_boxes")) {
      for (const auto& jb : jg["lesion_boxes"]) {
        LesionBox b;
        b.modality = modality_from_name(jb.at("modality").get<std::string>());
        b.sign = jb.at("sign").get<int>();
        b.x = jb.at("x").get<int>();
        b.y = jb.at("y").get<int>();
        b.w = jb.at("w").get<int>();
        b.h = jb.at("h").get<int>();
        g.lesion_boxes.push_back(b);
      }
    }
    m.groups.push_back(std::move(g));
  }
  if (j.contains("splits"))
    m.splits = j.at("splits").get<std::map<std::string, std::vector<std::string>>>();
  m.validate();
  return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  const std::string text = manifest_to_json(m).dump(2) + "\n";
  write_file(path, text.data(), text.size());
}

DatasetManifest read_manifest(const std::string& path) {
  auto bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ArtifactError("cannot parse manifest " + path + ": " + e.what());
  }
  try {
    return manifest_from_json(j);
  } catch (const json::exception& e) {
    throw ArtifactError("malformed manifest " + path + ": " + e.what());
  }
}

Tensor3 preprocess_pixels(const ImageU8& img) {
  if (img.h < 1 || img.w < 1) throw ArtifactError("empty image");
  Tensor3 t(3, img.h, img.w);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        const uint8_t u = img.c == 1 ? img.at(y, x, 0) : img.at(y, x, ch);
        t.at(ch, y, x) = static_cast<float>(u) / 255.f;
      }
    }
  }
  return resize_bilinear(t, kInputSize, kInputSize);
}

Tensor3 preprocess(const ImageRecord& rec, const std::string& base_dir) {
  try {
    if (!rec.buffer.empty()) return preprocess_pixels(decode_image(rec.buffer));
    const fs::path p = base_dir.empty() ? fs::path(rec.path) : fs::path(base_dir) / rec.path;
    return preprocess_pixels(decode_image(read_file(p.string())));
  } catch (const ArtifactError& e) {
    throw ArtifactError("record '" + rec.id + "': " + e.what());
  }
}

AugmentParams draw_augment_params(Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentParams p;
  // Five draws in fixed order keep the stream aligned whatever fires.
  p.rotate = unit(rng) < 0.5;
  p.angle_deg = -15.0 + 30.0 * unit(rng);
  p.flip = unit(rng) < 0.5;
  p.contrast = unit(rng) < 0.5;
  p.factor = 0.8 + 0.45 * unit(rng);
  return p;
}

namespace {

Tensor3 rotate_bilinear(const Tensor3& t, double angle_deg) {
  const double a = angle_deg * M_PI / 180.0;
  const double cs = std::cos(a), sn = std::sin(a);
  const double cy = (t.h - 1) / 2.0, cx = (t.w - 1) / 2.0;
  Tensor3 out(t.c, t.h, t.w);
  for (int y = 0; y < t.h; ++y) {
    for (int x = 0; x < t.w; ++x) {
      // inverse mapping, clamp-to-edge sampling
      const double dx = x - cx, dy = y - cy;
      double sx = cs * dx + sn * dy + cx;
      double sy = -sn * dx + cs * dy + cy;
      sx = std::clamp(sx, 0.0, static_cast<double>(t.w - 1));
      sy = std::clamp(sy, 0.0, static_cast<double>(t.h - 1));
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, t.w - 1), y1 = std::min(y0 + 1, t.h - 1);
      const float fx = static_cast<float>(sx - x0), fy = static_cast<float>(sy - y0);
      for (int ch = 0; ch < t.c; ++ch) {
        const float v00 = t.at(ch, y0, x0), v01 = t.at(ch, y0, x1);
        const float v10 = t.at(ch, y1, x0), v11 = t.at(ch, y1, x1);
        out.at(ch, y, x) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                           fy * ((1 - fx) * v10 + fx * v11);
      }
    }
  }
  return out;
}

}  // namespace

Tensor3 apply_augment(const Tensor3& t, const AugmentParams& p) {
  Tensor3 out = t;
  if (p.rotate) out = rotate_bilinear(out, p.angle_deg);
  if (p.flip) {
    for (int ch = 0; ch < out.c; ++ch)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w / 2; ++x)
          std::swap(out.at(ch, y, x), out.at(ch, y, out.w - 1 - x));
  }
  if (p.contrast) {
    double mean = 0;
    for (float v : out.v) mean += v;
    mean /= static_cast<double>(out.v.size());
    for (float& v : out.v)
      v = static_cast<float>(mean + p.factor * (v - mean));
  }
  for (float& v : out.v) v = std::clamp(v, 0.f, 1.f);
  return out;
}

Tensor3 augment(const Tensor3& t, Rng& rng) { return apply_augment(t, draw_augment_params(rng)); }

DatasetManifest split_dataset(const DatasetManifest& m, std::array<double, 3> ratios,
                              uint64_t seed) {
  double sum = 0;
  for (double r : ratios) {
    if (r <= 0) throw ConfigError("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  const size_t n = m.groups.size();
  if (n < 3) throw ConfigError("need at least 3 groups to split");

  // Global split sizes by largest remainder.
  std::array<size_t, 3> target{};
  {
    std::array<double, 3> exact{};
    size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      exact[s] = ratios[s] * static_cast<double>(n);
      target[s] = static_cast<size_t>(std::floor(exact[s]));
      assigned += target[s];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double fa = exact[a] - std::floor(exact[a]);
      const double fb = exact[b] - std::floor(exact[b]);
      return fa != fb ? fa > fb : a < b;
    });
    for (int i = 0; assigned < n; ++i, ++assigned) target[order[i % 3]]++;
  }

  // Stratify: per class, order groups by hash(seed, id) and hand them out
  // proportionally, capped by what is still free globally.
  std::array<std::vector<const BiModalGroup*>, kNumDiseaseClasses> per_class;
  for (const auto& g : m.groups) per_class[static_cast<int>(g.disease)].push_back(&g);
  for (auto& cls : per_class) {
    std::stable_sort(cls.begin(), cls.end(), [&](const BiModalGroup* a, const BiModalGroup* b) {
      const uint64_t ha = derive_seed(seed, "split", fnv1a64(a->id));
      const uint64_t hb = derive_seed(seed, "split", fnv1a64(b->id));
      return ha != hb ? ha < hb : a->id < b->id;
    });
  }

  DatasetManifest out = m;
  out.splits.clear();
  std::array<std::vector<std::string>, 3> buckets;
  std::array<size_t, 3> remaining = target;
  int classes_left = 0;
  for (const auto& cls : per_class)
    if (!cls.empty()) ++classes_left;
  for (const auto& cls : per_class) {
    if (cls.empty()) continue;
    --classes_left;
    const size_t cn = cls.size();
    std::array<size_t, 3> quota{};
    if (classes_left == 0) {
      quota = remaining;  // last class absorbs the rounding slack
    } else {
      std::array<double, 3> exact{};
      size_t assigned = 0;
      for (int s = 0; s < 3; ++s) {
        exact[s] = ratios[s] * static_cast<double>(cn);
        quota[s] = std::min(static_cast<size_t>(std::floor(exact[s])), remaining[s]);
        assigned += quota[s];
      }
      std::array<int, 3> order = {0, 1, 2};
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double fa = exact[a] - std::floor(exact[a]);
        const double fb = exact[b] - std::floor(exact[b]);
        return fa != fb ? fa > fb : a < b;
      });
      for (int i = 0; assigned < cn; ++i) {
        const int s = order[i % 3];
        if (quota[s] < remaining[s]) {
          quota[s]++;
          assigned++;
        }
      }
    }
    size_t idx = 0;
    for (int s = 0; s < 3; ++s) {
      for (size_t k = 0; k < quota[s] && idx < cls.size(); ++k, ++idx)
        buckets[s].push_back(cls[idx]->id);
      remaining[s] -= std::min(quota[s], remaining[s]);
    }
  }
  // Keep manifest order inside each split for readability.
  std::map<std::string, size_t> pos;
  for (size_t i = 0; i < m.groups.size(); ++i) pos[m.groups[i].id] = i;
  const char* names[3] = {"train", "valid", "test"};
  for (int s = 0; s < 3; ++s) {
    std::sort(buckets[s].begin(), buckets[s].end(),
              [&](const std::string& a, const std::string& b) { return pos[a] < pos[b]; });
    out.splits[names[s]] = std::move(buckets[s]);
  }
  out.validate();
  return out;
}

}  // namespace kfwc::data
