#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "common.hpp"
#include "tensor.hpp"

namespace kfwc::data {

enum class Modality { Fundus, OCT };

std::string modality_name(Modality m);
Modality modality_from_name(const std::string& s);

// Frozen 5-sign vocabularies; index order is part of the manifest format.
const std::array<std::string, 5>& fundus_vocabulary();
const std::array<std::string, 5>& oct_vocabulary();

// Fundus sign indices.
inline constexpr int kFundusHemorrhage = 0;        // macular retinal hemorrhage
inline constexpr int kFundusExudation = 1;         // macular retinal exudation
inline constexpr int kFundusDrusen = 2;            // drusen in macular area
inline constexpr int kFundusOrangeRedLesion = 3;   // orange-red lesions under the retina
inline constexpr int kFundusSubretinalHem = 4;     // subretinal hemorrhage
// OCT sign indices.
inline constexpr int kOctIntraretinalFluid = 0;    // intraretinal fluid
inline constexpr int kOctSubretinalFluid = 1;      // subretinal fluid
inline constexpr int kOctPed = 2;                  // pigment epithelial detachment
inline constexpr int kOctHyperUnderRpe = 3;        // hyperreflective lesions under RPE
inline constexpr int kOctHyperInRetina = 4;        // hyperreflective lesions in/under retina

struct SignLabelVector {
  Modality modality = Modality::Fundus;
  std::array<bool, 5> flags{};
};

enum class DiseaseLabel : int { NeovascularAMD = 0, PCV = 1, Other = 2 };

inline constexpr int kNumDiseaseClasses = 3;
std::string disease_name(DiseaseLabel d);
DiseaseLabel disease_from_int(int v);

// Frozen sign -> disease rule:
//   PCV             iff orange-red lesion OR hyperreflective under RPE
//   NeovascularAMD  else iff intraretinal fluid OR subretinal fluid OR subretinal hemorrhage
//   Other           otherwise
DiseaseLabel disease_from_signs(const SignLabelVector& fundus, const SignLabelVector& oct);

struct ImageRecord {
  std::string id;
  Modality modality = Modality::Fundus;
  std::string path;             // relative to the dataset directory when set
  std::vector<uint8_t> buffer;  // in-memory encoded image, used when path empty
  std::string eye_id;
};

struct LesionBox {
  Modality modality = Modality::Fundus;
  int sign = 0;            // index into the modality's vocabulary
  int x = 0, y = 0;        // top-left, pixel coords of the original image
  int w = 0, h = 0;
};

struct BiModalGroup {
  std::string id;
  ImageRecord fundus;
  ImageRecord oct;
  SignLabelVector fundus_signs{Modality::Fundus, {}};
  SignLabelVector oct_signs{Modality::OCT, {}};
  DiseaseLabel disease = DiseaseLabel::Other;
  std::vector<LesionBox> lesion_boxes;  // synthetic ground truth only
};

struct DatasetManifest {
  int format_version = 1;
  std::vector<BiModalGroup> groups;
  std::map<std::string, std::vector<std::string>> splits;  // train/valid/test -> group ids
  // synthetic provenance, empty for external datasets
  std::optional<uint64_t> generator_seed;
  std::string spec_hash;

  const BiModalGroup& group(const std::string& id) const;
  void validate() const;  // split lists disjoint, union == all ids
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

// Decode + resize to 224x224x3 in [0,1]. Bilinear interpolation; grayscale
// inputs are replicated to 3 channels. `base_dir` resolves relative paths.
inline constexpr int kInputSize = 224;
Tensor3 preprocess(const ImageRecord& rec, const std::string& base_dir = "");
Tensor3 preprocess_pixels(const ImageU8& img);

// Training-time augmentation. Each op fires with independent probability 0.5:
// rotation uniform in +-15 deg (bilinear, clamp-to-edge), horizontal flip,
// contrast scale uniform in [0.8, 1.25] about the image mean. Output clamped
// to [0,1]. Five rng draws are consumed regardless of which ops fire.
struct AugmentParams {
  bool rotate = false;
  double angle_deg = 0.0;
  bool flip = false;
  bool contrast = false;
  double factor = 1.0;
};

AugmentParams draw_augment_params(Rng& rng);
Tensor3 apply_augment(const Tensor3& t, const AugmentParams& p);
Tensor3 augment(const Tensor3& t, Rng& rng);

// Deterministic stratified split. Assignment depends only on (group id, seed);
// global split sizes follow largest-remainder rounding of the ratios.
DatasetManifest split_dataset(const DatasetManifest& m, std::array<double, 3> ratios,
                              uint64_t seed);

}  // namespace kfwc::data
