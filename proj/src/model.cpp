#include "model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace kfwc::model {

const std::vector<std::string>& registered_trunks() {
  static const std::vector<std::string> names = {"tiny", "small", "wide"};
  return names;
}

TrunkConfig trunk_config(const std::string& name) {
  TrunkConfig cfg;
  cfg.name = name;
  if (name == "tiny") {
    cfg.blocks = {{8, 3, 4, 1}, {16, 3, 2, 1}};
  } else if (name == "small") {
    cfg.blocks = {{12, 5, 4, 2}, {24, 3, 2, 1}, {48, 3, 2, 1}, {64, 3, 2, 1}};
  } else if (name == "wide") {
    cfg.blocks = {{16, 5, 4, 2}, {32, 3, 2, 1}, {64, 3, 2, 1}, {96, 3, 2, 1}};
  } else {
    throw ConfigError("unknown trunk '" + name + "'");
  }
  return cfg;
}

nlohmann::json trunk_to_json(const TrunkConfig& cfg) {
  nlohmann::json j;
  j["name"] = cfg.name;
  j["input_size"] = cfg.input_size;
  j["in_channels"] = cfg.in_channels;
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : cfg.blocks)
    blocks.push_back({{"out_c", b.out_c}, {"kernel", b.kernel}, {"stride", b.stride}, {"pad", b.pad}});
  j["blocks"] = blocks;
  return j;
}

TrunkConfig trunk_from_json(const nlohmann::json& j) {
  TrunkConfig cfg;
  cfg.name = j.at("name").get<std::string>();
  cfg.input_size = j.at("input_size").get<int>();
  cfg.in_channels = j.at("in_channels").get<int>();
  for (const auto& jb : j.at("blocks")) {
    nn::ConvSpec s;
    s.out_c = jb.at("out_c").get<int>();
    s.kernel = jb.at("kernel").get<int>();
    s.stride = jb.at("stride").get<int>();
    s.pad = jb.at("pad").get<int>();
    cfg.blocks.push_back(s);
  }
  return cfg;
}

Encoder build_encoder(const TrunkConfig& cfg, uint64_t seed) {
  if (cfg.blocks.empty()) throw ConfigError("trunk needs at least one conv block");
  Encoder e;
  e.cfg = cfg;
  Rng rng(derive_seed(seed, "encoder"));
  int c = cfg.in_channels;
  for (const auto& spec : cfg.blocks) {
    nn::Conv2d<Scalar> conv;
    conv.init(c, spec, rng);
    c = spec.out_c;
    e.blocks.push_back(std::move(conv));
  }
  e.proj.init(c, kFeatureDim, rng);
  return e;
}

VecX Encoder::encode(const Tensor3& img, Ctx& ctx) const {
  if (img.c != cfg.in_channels || img.h != cfg.input_size || img.w != cfg.input_size)
    throw ContractError("encoder '" + cfg.name + "' expects " +
                        std::to_string(cfg.input_size) + "x" + std::to_string(cfg.input_size) +
                        "x" + std::to_string(cfg.in_channels) + " input");
  ctx.input = to_feature_map(img);
  ctx.acts.resize(blocks.size());
  ctx.caches.resize(blocks.size());
  const FMap* cur = &ctx.input;
  for (size_t i = 0; i < blocks.size(); ++i) {
    ctx.acts[i] = blocks[i].forward(*cur, ctx.caches[i]);
    if (!ctx.acts[i].m.allFinite())
      throw NumericError("non-finite activation in '" + cfg.name + "' block " +
                         std::to_string(i));
    cur = &ctx.acts[i];
  }
  ctx.pooled = nn::GlobalAvgPool<Scalar>::forward(*cur);
  VecX feat = proj.forward(ctx.pooled);
  if (!feat.allFinite()) throw NumericError("non-finite feature in projection layer");
  return feat;
}

void Encoder::backward(Ctx& ctx, const VecX& dfeat, Encoder& grads,
                       bool stop_at_last_activation) const {
  VecX dpooled = proj.backward(ctx.pooled, dfeat, grads.proj.w, grads.proj.b);
  const FMap& last = ctx.acts.back();
  MatX dact = nn::GlobalAvgPool<Scalar>::backward(dpooled, last.positions());
  ctx.last_activation_grad = dact;
  if (stop_at_last_activation) return;
  for (int i = static_cast<int>(blocks.size()) - 1; i >= 0; --i) {
    FMap dx = blocks[i].backward(ctx.caches[i], dact, grads.blocks[i].w, grads.blocks[i].b);
    dact = std::move(dx.m);
  }
}

void Encoder::collect(const std::string& prefix, std::vector<TensorRef>& out) {
  for (size_t i = 0; i < blocks.size(); ++i) {
    auto& blk = blocks[i];
    const std::string base = prefix + ".block" + std::to_string(i);
    out.push_back({base + ".w", blk.w.data(), static_cast<size_t>(blk.w.size()),
                   static_cast<int>(blk.w.rows()), static_cast<int>(blk.w.cols())});
    out.push_back({base + ".b", blk.b.data(), static_cast<size_t>(blk.b.size()),
                   static_cast<int>(blk.b.size()), 1});
  }
  out.push_back({prefix + ".proj.w", proj.w.data(), static_cast<size_t>(proj.w.size()),
                 static_cast<int>(proj.w.rows()), static_cast<int>(proj.w.cols())});
  out.push_back({prefix + ".proj.b", proj.b.data(), static_cast<size_t>(proj.b.size()),
                 static_cast<int>(proj.b.size()), 1});
}

Encoder Encoder::clone_zero() const {
  Encoder z = *this;
  for (auto& blk : z.blocks) {
    blk.w.setZero();
    blk.b.setZero();
  }
  z.proj.w.setZero();
  z.proj.b.setZero();
  return z;
}

SignHead build_sign_head(uint64_t seed) {
  SignHead h;
  Rng rng(derive_seed(seed, "sign_head"));
  h.init(kFeatureDim, kNumSigns, rng);
  return h;
}

DiagnosisHead build_diagnosis_head(uint64_t seed) {
  DiagnosisHead h;
  Rng rng(derive_seed(seed, "diag_head"));
  h.init(kFusedDim, data::kNumDiseaseClasses, rng);
  return h;
}

VecX sign_logits(const SignHead& head, const VecX& feature) { return head.forward(feature); }

VecX sign_scores(const SignHead& head, const VecX& feature) {
  VecX z = sign_logits(head, feature);
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = nn::sigmoid(z[i]);
  return z;
}

std::set<int> predict_signs(const VecX& probs) {
  std::set<int> out;
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    if (probs[i] > Scalar(0.5)) out.insert(static_cast<int>(i));
  return out;
}

VecX fuse(const VecX& f_f, const VecX& f_o) {
  if (f_f.size() != kFeatureDim || f_o.size() != kFeatureDim)
    throw ContractError("fuse: both features must be 1000-dimensional");
  VecX out(kFusedDim);
  out.head(kFeatureDim) = f_f;
  out.tail(kFeatureDim) = f_o;
  return out;
}

VecX diagnosis_scores(const DiagnosisHead& head, const VecX& fused) {
  if (fused.size() != head.w.cols()) throw ContractError("diagnosis_scores: dimension mismatch");
  return head.forward(fused);
}

data::DiseaseLabel predict_diagnosis(const VecX& scores) {
  if (scores.size() != data::kNumDiseaseClasses)
    throw ContractError("predict_diagnosis: expected 3 scores");
  int best = 0;
  for (int i = 0; i < data::kNumDiseaseClasses; ++i) {
    if (!std::isfinite(static_cast<double>(scores[i])))
      throw NumericError("non-finite diagnosis score");
    if (scores[i] > scores[best]) best = i;
  }
  return data::disease_from_int(best);
}

void SignModel::collect(std::vector<TensorRef>& out) {
  enc.collect("enc", out);
  out.push_back({"sign_head.w", head.w.data(), static_cast<size_t>(head.w.size()),
                 static_cast<int>(head.w.rows()), static_cast<int>(head.w.cols())});
  out.push_back({"sign_head.b", head.b.data(), static_cast<size_t>(head.b.size()),
                 static_cast<int>(head.b.size()), 1});
}

SignModel SignModel::clone_zero() const {
  SignModel z = *this;
  z.enc = enc.clone_zero();
  z.head.w.setZero();
  z.head.b.setZero();
  return z;
}

SignModel build_sign_model(data::Modality m, const TrunkConfig& cfg, uint64_t seed) {
  SignModel sm;
  sm.modality = m;
  sm.enc = build_encoder(cfg, derive_seed(seed, m == data::Modality::Fundus ? "F" : "O"));
  sm.head = build_sign_head(derive_seed(seed, m == data::Modality::Fundus ? "F.head" : "O.head"));
  return sm;
}

VecX DiagnosisModel::scores(const Tensor3& fundus, const Tensor3& oct, Encoder::Ctx* ctx_f,
                            Encoder::Ctx* ctx_o) const {
  Encoder::Ctx local_f, local_o;
  Encoder::Ctx& cf = ctx_f ? *ctx_f : local_f;
  Encoder::Ctx& co = ctx_o ? *ctx_o : local_o;
  const VecX f_f = enc_f.encode(fundus, cf);
  const VecX f_o = enc_o.encode(oct, co);
  return diagnosis_scores(head, fuse(f_f, f_o));
}

void DiagnosisModel::collect(std::vector<TensorRef>& out) {
  enc_f.collect("enc_f", out);
  enc_o.collect("enc_o", out);
  out.push_back({"diag_head.w", head.w.data(), static_cast<size_t>(head.w.size()),
                 static_cast<int>(head.w.rows()), static_cast<int>(head.w.cols())});
  out.push_back({"diag_head.b", head.b.data(), static_cast<size_t>(head.b.size()),
                 static_cast<int>(head.b.size()), 1});
  out.push_back({"sign_head_f.w", sign_head_f.w.data(), static_cast<size_t>(sign_head_f.w.size()),
                 static_cast<int>(sign_head_f.w.rows()), static_cast<int>(sign_head_f.w.cols())});
  out.push_back({"sign_head_f.b", sign_head_f.b.data(), static_cast<size_t>(sign_head_f.b.size()),
                 static_cast<int>(sign_head_f.b.size()), 1});
  out.push_back({"sign_head_o.w", sign_head_o.w.data(), static_cast<size_t>(sign_head_o.w.size()),
                 static_cast<int>(sign_head_o.w.rows()), static_cast<int>(sign_head_o.w.cols())});
  out.push_back({"sign_head_o.b", sign_head_o.b.data(), static_cast<size_t>(sign_head_o.b.size()),
                 static_cast<int>(sign_head_o.b.size()), 1});
}

void DiagnosisModel::collect_trainable(std::vector<TensorRef>& out, bool freeze_encoders) {
  if (!freeze_encoders) {
    enc_f.collect("enc_f", out);
    enc_o.collect("enc_o", out);
  }
  out.push_back({"diag_head.w", head.w.data(), static_cast<size_t>(head.w.size()),
                 static_cast<int>(head.w.rows()), static_cast<int>(head.w.cols())});
  out.push_back({"diag_head.b", head.b.data(), static_cast<size_t>(head.b.size()),
                 static_cast<int>(head.b.size()), 1});
}

DiagnosisModel DiagnosisModel::clone_zero() const {
  DiagnosisModel z = *this;
  z.enc_f = enc_f.clone_zero();
  z.enc_o = enc_o.clone_zero();
  z.head.w.setZero();
  z.head.b.setZero();
  z.sign_head_f.w.setZero();
  z.sign_head_f.b.setZero();
  z.sign_head_o.w.setZero();
  z.sign_head_o.b.setZero();
  return z;
}

DiagnosisModel build_diagnosis_model(const TrunkConfig& cfg, uint64_t seed) {
  DiagnosisModel m;
  m.enc_f = build_encoder(cfg, derive_seed(seed, "F"));
  m.enc_o = build_encoder(cfg, derive_seed(seed, "O"));
  m.head = build_diagnosis_head(derive_seed(seed, "diag"));
  m.sign_head_f = build_sign_head(derive_seed(seed, "F.head"));
  m.sign_head_o = build_sign_head(derive_seed(seed, "O.head"));
  return m;
}

uint64_t checksum(const std::vector<TensorRef>& refs) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& r : refs) {
    h = fnv1a64(r.name, h);
    h = fnv1a64(r.data, r.size * sizeof(Scalar), h);
  }
  return h;
}

}  // namespace kfwc::model
