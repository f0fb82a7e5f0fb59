#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "data.hpp"
#include "nn.hpp"
#include "tensor.hpp"

namespace kfwc::model {

using Scalar = float;
using FMap = nn::FeatureMap<Scalar>;
using MatX = nn::Mat<Scalar>;
using VecX = nn::Vec<Scalar>;

inline constexpr int kFeatureDim = 1000;
inline constexpr int kFusedDim = 2000;
inline constexpr int kNumSigns = 5;

// Convolutional trunk description. All registered trunks accept 224x224x3
// input; probes may build unregistered configs at other sizes.
struct TrunkConfig {
  std::string name;
  int input_size = data::kInputSize;
  int in_channels = 3;
  std::vector<nn::ConvSpec> blocks;
};

const std::vector<std::string>& registered_trunks();
TrunkConfig trunk_config(const std::string& name);  // ConfigError when unknown
nlohmann::json trunk_to_json(const TrunkConfig& cfg);
TrunkConfig trunk_from_json(const nlohmann::json& j);

// Dual-use: the model's own parameters and, on zeroed clones, gradient and
// velocity buffers for the same parameters.
struct TensorRef {
  std::string name;
  Scalar* data;
  size_t size;
  int rows, cols;
};

// Encoder = conv trunk + global average pool + linear projection to 1000.
struct Encoder {
  TrunkConfig cfg;
  std::vector<nn::Conv2d<Scalar>> blocks;
  nn::Linear<Scalar> proj;

  struct Ctx {
    FMap input;
    std::vector<FMap> acts;                       // per-block outputs
    std::vector<nn::Conv2d<Scalar>::Cache> caches;
    VecX pooled;
    // Grad-CAM capture: activation and its gradient at the last conv block.
    const FMap* last_activation() const { return acts.empty() ? nullptr : &acts.back(); }
    MatX last_activation_grad;
  };

  // Throws ContractError if the input shape differs from the trunk contract;
  // NumericError naming the block if a non-finite value appears.
  VecX encode(const Tensor3& img, Ctx& ctx) const;

  // Backprop from feature gradient. Stops after filling
  // ctx.last_activation_grad when stop_at_last_activation is set.
  void backward(Ctx& ctx, const VecX& dfeat, Encoder& grads,
                bool stop_at_last_activation = false) const;

  void collect(const std::string& prefix, std::vector<TensorRef>& out);
  Encoder clone_zero() const;
};

Encoder build_encoder(const TrunkConfig& cfg, uint64_t seed);

// Eq-style heads.
using SignHead = nn::Linear<Scalar>;       // 1000 -> 5
using DiagnosisHead = nn::Linear<Scalar>;  // 2000 -> 3

SignHead build_sign_head(uint64_t seed);
DiagnosisHead build_diagnosis_head(uint64_t seed);

// sigmoid(W f + b); probabilities in (0,1).
VecX sign_scores(const SignHead& head, const VecX& feature);
VecX sign_logits(const SignHead& head, const VecX& feature);

// Flags strictly above 0.5; exactly 0.5 is excluded.
std::set<int> predict_signs(const VecX& probs);

// [f_f || f_o], dimension 2000.
VecX fuse(const VecX& f_f, const VecX& f_o);

// Raw affine scores; softmax only lives inside the loss.
VecX diagnosis_scores(const DiagnosisHead& head, const VecX& fused);

// Argmax with ties broken toward the lowest class index.
data::DiseaseLabel predict_diagnosis(const VecX& scores);

// Stage-1 model for one branch.
struct SignModel {
  data::Modality modality = data::Modality::Fundus;
  Encoder enc;
  SignHead head;

  void collect(std::vector<TensorRef>& out);
  SignModel clone_zero() const;
};

SignModel build_sign_model(data::Modality m, const TrunkConfig& cfg, uint64_t seed);

// Stage-2 model. Sign heads ride along frozen so the final artifact can emit
// sign predictions next to the diagnosis.
struct DiagnosisModel {
  Encoder enc_f, enc_o;
  DiagnosisHead head;
  SignHead sign_head_f, sign_head_o;

  VecX scores(const Tensor3& fundus, const Tensor3& oct, Encoder::Ctx* ctx_f = nullptr,
              Encoder::Ctx* ctx_o = nullptr) const;

  void collect(std::vector<TensorRef>& out);                // everything
  void collect_trainable(std::vector<TensorRef>& out, bool freeze_encoders);
  DiagnosisModel clone_zero() const;
};

DiagnosisModel build_diagnosis_model(const TrunkConfig& cfg, uint64_t seed);

uint64_t checksum(const std::vector<TensorRef>& refs);
template <class ModelT>
uint64_t model_checksum(ModelT& m) {
  std::vector<TensorRef> refs;
  m.collect(refs);
  return checksum(refs);
}

}  // namespace kfwc::model
