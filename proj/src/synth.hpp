#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "data.hpp"

namespace kfwc::data {

// Parameters of the synthetic bi-modal generator. Same spec + seed produce a
// byte-identical dataset. Prevalence order: the 5 fundus signs followed by
// the 5 OCT signs, each in vocabulary order.
struct SyntheticSpec {
  int train_groups = 600;
  int valid_groups = 100;
  int test_groups = 100;
  int image_size = 224;  // generated (pre-resize) square size
  std::array<double, 10> prevalence = {0.30, 0.30, 0.30, 0.24, 0.26,
                                       0.26, 0.26, 0.30, 0.24, 0.30};
  double noise = 0.05;  // stddev of per-pixel gaussian noise
  uint64_t seed = 7;

  void validate() const;  // throws ConfigError
  uint64_t hash() const;
};

// One catalog entry per sign; `motif` names the geometric/texture pattern the
// generator plants for that sign.
struct MarkerSpec {
  Modality modality;
  int sign;
  std::string name;   // vocabulary entry
  std::string motif;  // distinct drawing primitive
};

const std::array<MarkerSpec, 10>& marker_catalog();

struct SyntheticDataset {
  DatasetManifest manifest;
  std::map<std::string, ImageU8> images;  // record id -> pixels
};

// Plants one marker per active sign, labels the group through the frozen
// sign->disease rule and records every marker's bounding box.
SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec);

// Persists as <dir>/images/*.png + <dir>/manifest.json.
void write_dataset(const SyntheticDataset& ds, const std::string& dir);

}  // namespace kfwc::data
