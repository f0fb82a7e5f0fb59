#include "train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace kfwc::train {

void Hyperparams::validate() const {
  if (base_lr <= 0 || momentum < 0 || momentum >= 1 || weight_decay < 0)
    throw ConfigError("hyperparams: base_lr > 0, momentum in [0,1), weight_decay >= 0");
  if (batch_size < 1 || epochs_stage1 < 1 || epochs_stage2 < 1 || lr_decay_period < 1)
    throw ConfigError("hyperparams: batch size, epochs and decay period must be positive");
  if (lr_decay_factor <= 0 || lr_decay_factor >= 1)
    throw ConfigError("hyperparams: lr_decay_factor must lie in (0,1)");
}

json Hyperparams::to_json() const {
  return json{{"base_lr", base_lr},
              {"momentum", momentum},
              {"weight_decay", weight_decay},
              {"batch_size", batch_size},
              {"epochs_stage1", epochs_stage1},
              {"epochs_stage2", epochs_stage2},
              {"lr_decay_period", lr_decay_period},
              {"lr_decay_factor", lr_decay_factor},
              {"seed", seed}};
}

Hyperparams Hyperparams::from_json(const json& j) {
  Hyperparams h;
  h.base_lr = j.value("base_lr", h.base_lr);
  h.momentum = j.value("momentum", h.momentum);
  h.weight_decay = j.value("weight_decay", h.weight_decay);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.epochs_stage1 = j.value("epochs_stage1", h.epochs_stage1);
  h.epochs_stage2 = j.value("epochs_stage2", h.epochs_stage2);
  h.lr_decay_period = j.value("lr_decay_period", h.lr_decay_period);
  h.lr_decay_factor = j.value("lr_decay_factor", h.lr_decay_factor);
  h.seed = j.value("seed", h.seed);
  h.validate();
  return h;
}

double lr_at(int epoch, const Hyperparams& h) {
  if (epoch < 0) throw ContractError("lr_at: negative epoch");
  return h.base_lr * std::pow(h.lr_decay_factor, epoch / h.lr_decay_period);
}

// --- checkpoint container ---------------------------------------------------

namespace {

constexpr char kMagic[8] = {'K', 'F', 'W', 'C', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <class T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(const std::vector<uint8_t>& buf, size_t& off) {
  if (off + sizeof(T) > buf.size()) throw ArtifactError("corrupt checkpoint: truncated");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  json header{{"stage", c.stage},          {"trunk", c.trunk},
              {"epoch", c.epoch},          {"hyperparams", c.hyperparams},
              {"seed", c.seed},            {"metrics", c.metrics},
              {"format_version", c.format_version}};
  const std::string hs = header.dump();
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put(out, kVersion);
  put(out, static_cast<uint64_t>(hs.size()));
  out += hs;
  put(out, static_cast<uint32_t>(c.tensors.size()));
  for (const auto& [name, blob] : c.tensors) {
    put(out, static_cast<uint32_t>(name.size()));
    out += name;
    put(out, static_cast<int32_t>(blob.rows));
    put(out, static_cast<int32_t>(blob.cols));
    put(out, static_cast<uint64_t>(blob.data.size() * sizeof(float)));
    out.append(reinterpret_cast<const char*>(blob.data.data()),
               blob.data.size() * sizeof(float));
  }
  write_file(path, out.data(), out.size());
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto buf = read_file(path);
  size_t off = 0;
  if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw ArtifactError("not a checkpoint file: " + path);
  off = sizeof(kMagic);
  const auto version = take<uint32_t>(buf, off);
  if (version != kVersion)
    throw ArtifactError("unsupported checkpoint version " + std::to_string(version));
  const auto hlen = take<uint64_t>(buf, off);
  if (off + hlen > buf.size()) throw ArtifactError("corrupt checkpoint: truncated header");
  json header;
  try {
    header = json::parse(buf.begin() + off, buf.begin() + off + hlen);
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("corrupt checkpoint header: ") + e.what());
  }
  off += hlen;
  Checkpoint c;
  c.stage = header.at("stage").get<std::string>();
  c.trunk = header.at("trunk");
  c.epoch = header.at("epoch").get<int>();
  c.hyperparams = header.at("hyperparams");
  c.seed = header.at("seed").get<uint64_t>();
  c.metrics = header.at("metrics");
  c.format_version = header.at("format_version").get<int>();
  const auto n_tensors = take<uint32_t>(buf, off);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const auto name_len = take<uint32_t>(buf, off);
    if (off + name_len > buf.size()) throw ArtifactError("corrupt checkpoint: truncated");
    std::string name(buf.begin() + off, buf.begin() + off + name_len);
    off += name_len;
    TensorBlob blob;
    blob.rows = take<int32_t>(buf, off);
    blob.cols = take<int32_t>(buf, off);
    const auto nbytes = take<uint64_t>(buf, off);
    if (nbytes % sizeof(float) != 0 || off + nbytes > buf.size())
      throw ArtifactError("corrupt checkpoint: truncated tensor '" + name + "'");
    blob.data.resize(nbytes / sizeof(float));
    std::memcpy(blob.data.data(), buf.data() + off, nbytes);
    off += nbytes;
    if (static_cast<size_t>(blob.rows) * blob.cols != blob.data.size())
      throw ArtifactError("corrupt checkpoint: shape mismatch in '" + name + "'");
    c.tensors.emplace(std::move(name), std::move(blob));
  }
  if (off != buf.size()) throw ArtifactError("corrupt checkpoint: trailing bytes");
  return c;
}

namespace {

std::map<std::string, TensorBlob> blobs_from(std::vector<model::TensorRef>& refs) {
  std::map<std::string, TensorBlob> out;
  for (const auto& r : refs) {
    TensorBlob b;
    b.rows = r.rows;
    b.cols = r.cols;
    b.data.assign(r.data, r.data + r.size);
    out.emplace(r.name, std::move(b));
  }
  return out;
}

void apply_blobs(std::vector<model::TensorRef>& refs,
                 const std::map<std::string, TensorBlob>& tensors) {
  if (refs.size() != tensors.size())
    throw ArtifactError("checkpoint tensor set does not match the model");
  for (auto& r : refs) {
    auto it = tensors.find(r.name);
    if (it == tensors.end()) throw ArtifactError("checkpoint is missing tensor '" + r.name + "'");
    const auto& b = it->second;
    if (b.rows != r.rows || b.cols != r.cols || b.data.size() != r.size)
      throw ArtifactError("checkpoint tensor '" + r.name + "' has wrong shape");
    std::copy(b.data.begin(), b.data.end(), r.data);
  }
}

}  // namespace

Checkpoint checkpoint_from(model::SignModel& m, const std::string& stage, int epoch,
                           const Hyperparams& h, const json& metric_snapshot) {
  Checkpoint c;
  c.stage = stage;
  c.trunk = model::trunk_to_json(m.enc.cfg);
  c.epoch = epoch;
  c.hyperparams = h.to_json();
  c.seed = h.seed;
  c.metrics = metric_snapshot;
  std::vector<model::TensorRef> refs;
  m.collect(refs);
  c.tensors = blobs_from(refs);
  return c;
}

Checkpoint checkpoint_from(model::DiagnosisModel& m, int epoch, const Hyperparams& h,
                           const json& metric_snapshot) {
  Checkpoint c;
  c.stage = "diagnosis";
  c.trunk = model::trunk_to_json(m.enc_f.cfg);
  c.epoch = epoch;
  c.hyperparams = h.to_json();
  c.seed = h.seed;
  c.metrics = metric_snapshot;
  std::vector<model::TensorRef> refs;
  m.collect(refs);
  c.tensors = blobs_from(refs);
  return c;
}

model::SignModel sign_model_from(const Checkpoint& c) {
  if (c.stage != "signs-F" && c.stage != "signs-O")
    throw ArtifactError("stage mismatch: expected a signs checkpoint, got '" + c.stage + "'");
  model::SignModel m = model::build_sign_model(
      c.stage == "signs-F" ? data::Modality::Fundus : data::Modality::OCT,
      model::trunk_from_json(c.trunk), c.seed);
  std::vector<model::TensorRef> refs;
  m.collect(refs);
  apply_blobs(refs, c.tensors);
  return m;
}

model::DiagnosisModel diagnosis_model_from(const Checkpoint& c) {
  if (c.stage != "diagnosis")
    throw ArtifactError("stage mismatch: expected a diagnosis checkpoint, got '" + c.stage + "'");
  model::DiagnosisModel m =
      model::build_diagnosis_model(model::trunk_from_json(c.trunk), c.seed);
  std::vector<model::TensorRef> refs;
  m.collect(refs);
  apply_blobs(refs, c.tensors);
  return m;
}

// --- dataset --------------------------------------------------------------

LoadedDataset::LoadedDataset(data::DatasetManifest manifest, std::string base_dir)
    : manifest_(std::move(manifest)), base_dir_(std::move(base_dir)) {
  manifest_.validate();
  for (const auto& g : manifest_.groups) index_[g.id] = &g;
}

const std::vector<std::string>& LoadedDataset::split(const std::string& name) const {
  auto it = manifest_.splits.find(name);
  if (it == manifest_.splits.end()) throw ConfigError("dataset has no '" + name + "' split");
  return it->second;
}

Tensor3 LoadedDataset::tensor(const data::ImageRecord& rec) const {
  {
    std::lock_guard<std::mutex> g(mu_);
    auto it = cache_.find(rec.id);
    if (it != cache_.end()) return data::preprocess_pixels(it->second);
  }
  ImageU8 img;
  try {
    if (!rec.buffer.empty()) {
      img = decode_image(rec.buffer);
    } else {
      const fs::path p = base_dir_.empty() ? fs::path(rec.path) : fs::path(base_dir_) / rec.path;
      img = decode_image(read_file(p.string()));
    }
  } catch (const ArtifactError& e) {
    throw ArtifactError("record '" + rec.id + "': " + e.what());
  }
  std::lock_guard<std::mutex> g(mu_);
  auto [it, _] = cache_.emplace(rec.id, std::move(img));
  return data::preprocess_pixels(it->second);
}

std::pair<int, int> LoadedDataset::image_size(const data::ImageRecord& rec) const {
  {
    std::lock_guard<std::mutex> g(mu_);
    auto it = cache_.find(rec.id);
    if (it != cache_.end()) return {it->second.w, it->second.h};
  }
  (void)tensor(rec);  // populate the cache
  std::lock_guard<std::mutex> g(mu_);
  const auto& img = cache_.at(rec.id);
  return {img.w, img.h};
}

LoadedDataset load_dataset(const std::string& dir) {
  const fs::path mp = fs::path(dir) / "manifest.json";
  if (!fs::exists(mp)) throw ArtifactError("dataset manifest not found: " + mp.string());
  return LoadedDataset(data::read_manifest(mp.string()), dir);
}

json EpochLog::to_json() const {
  return json{{"epoch", epoch}, {"lr", lr}, {"train_loss", train_loss}, {"val_auroc", val_auroc}};
}

// --- generic SGD loop -------------------------------------------------------

namespace {

using model::Scalar;
using model::TensorRef;

struct Optimizer {
  std::vector<TensorRef> params, grads, velocity;
  double lr = 0.0, momentum = 0.9, weight_decay = 0.0;

  void step() {
    for (size_t t = 0; t < params.size(); ++t) {
      nn::sgd_update(params[t].data, grads[t].data, velocity[t].data, params[t].size,
                     static_cast<Scalar>(lr), static_cast<Scalar>(momentum),
                     static_cast<Scalar>(weight_decay), params[t].name);
    }
  }
};

void zero_refs(std::vector<TensorRef>& refs) {
  for (auto& r : refs) std::fill(r.data, r.data + r.size, Scalar(0));
}

// grads[slot] summed into `into` in slot order, then scaled by 1/count.
void reduce_grads(std::vector<std::vector<TensorRef>>& slots, int count,
                  std::vector<TensorRef>& into) {
  for (size_t t = 0; t < into.size(); ++t) {
    Eigen::Map<nn::Vec<Scalar>> acc(into[t].data, static_cast<Eigen::Index>(into[t].size));
    acc.setZero();
    for (int s = 0; s < count; ++s) {
      Eigen::Map<nn::Vec<Scalar>> g(slots[s][t].data,
                                    static_cast<Eigen::Index>(slots[s][t].size));
      acc += g;
    }
    acc /= Scalar(count);
  }
}

std::vector<std::string> epoch_order(const std::vector<std::string>& ids, uint64_t seed,
                                     int epoch) {
  std::vector<std::string> order = ids;
  Rng rng(derive_seed(seed, "order", static_cast<uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Tensor3 train_tensor(const LoadedDataset& ds, const data::ImageRecord& rec, uint64_t seed,
                     int epoch) {
  Tensor3 t = ds.tensor(rec);
  Rng rng(derive_seed(seed, "aug", static_cast<uint64_t>(epoch), fnv1a64(rec.id)));
  return data::augment(t, rng);
}

double softmax_prob_auroc(const std::vector<std::array<double, 3>>& probs,
                          const std::vector<int>& truth) {
  std::vector<std::vector<double>> s(probs.size(), std::vector<double>(3));
  std::vector<std::vector<int>> t(probs.size(), std::vector<int>(3, 0));
  for (size_t i = 0; i < probs.size(); ++i) {
    for (int j = 0; j < 3; ++j) s[i][j] = probs[i][j];
    t[i][truth[i]] = 1;
  }
  try {
    return metrics::auroc_macro(s, t).value;
  } catch (const metrics::UndefinedMetric&) {
    return 0.0;
  }
}

double sign_prob_auroc(const std::vector<std::array<double, 5>>& probs,
                       const std::vector<std::array<int, 5>>& truth) {
  std::vector<std::vector<double>> s(probs.size(), std::vector<double>(5));
  std::vector<std::vector<int>> t(probs.size(), std::vector<int>(5));
  for (size_t i = 0; i < probs.size(); ++i)
    for (int j = 0; j < 5; ++j) {
      s[i][j] = probs[i][j];
      t[i][j] = truth[i][j];
    }
  try {
    return metrics::auroc_macro(s, t).value;
  } catch (const metrics::UndefinedMetric&) {
    return 0.0;
  }
}

}  // namespace

metrics::SignEvalBatch eval_signs(const model::SignModel& m, const LoadedDataset& ds,
                                  const std::string& split, int threads) {
  const auto& ids = ds.split(split);
  metrics::SignEvalBatch batch;
  batch.ids = ids;
  batch.probs.resize(ids.size());
  batch.truth.resize(ids.size());
  parallel_for(static_cast<int>(ids.size()), threads, [&](int i) {
    const auto& g = ds.group(ids[i]);
    const auto& rec = m.modality == data::Modality::Fundus ? g.fundus : g.oct;
    const auto& signs = m.modality == data::Modality::Fundus ? g.fundus_signs : g.oct_signs;
    model::Encoder::Ctx ctx;
    const auto feat = m.enc.encode(ds.tensor(rec), ctx);
    const auto probs = model::sign_scores(m.head, feat);
    for (int j = 0; j < 5; ++j) {
      batch.probs[i][j] = probs[j];
      batch.truth[i][j] = signs.flags[j] ? 1 : 0;
    }
  });
  return batch;
}

metrics::DiagEvalBatch eval_diagnosis(const model::DiagnosisModel& m, const LoadedDataset& ds,
                                      const std::string& split, int threads) {
  const auto& ids = ds.split(split);
  metrics::DiagEvalBatch batch;
  batch.ids = ids;
  batch.probs.resize(ids.size());
  batch.truth.resize(ids.size());
  parallel_for(static_cast<int>(ids.size()), threads, [&](int i) {
    const auto& g = ds.group(ids[i]);
    const auto scores = m.scores(ds.tensor(g.fundus), ds.tensor(g.oct));
    nn::Vec<Scalar> p = nn::softmax(scores);
    for (int j = 0; j < 3; ++j) batch.probs[i][j] = p[j];
    batch.truth[i] = static_cast<int>(g.disease);
  });
  return batch;
}

SignTrainResult pretrain_signs(data::Modality branch, const LoadedDataset& ds,
                               const Hyperparams& h, const model::TrunkConfig& trunk,
                               const TrainOptions& opt) {
  h.validate();
  const auto& train_ids = ds.split("train");
  if (train_ids.empty()) throw ConfigError("training split is empty");

  model::SignModel m = model::build_sign_model(branch, trunk, h.seed);
  model::SignModel grad_total = m.clone_zero();
  model::SignModel velocity = m.clone_zero();
  Optimizer optzr;
  optzr.momentum = h.momentum;
  optzr.weight_decay = h.weight_decay;
  m.collect(optzr.params);
  grad_total.collect(optzr.grads);
  velocity.collect(optzr.velocity);

  const int bs = h.batch_size;
  std::vector<model::SignModel> slot_grads(bs, m.clone_zero());
  std::vector<std::vector<TensorRef>> slot_refs(bs);
  for (int s = 0; s < bs; ++s) slot_grads[s].collect(slot_refs[s]);

  SignTrainResult res;
  model::SignModel best = m;
  double best_auroc = -1.0;
  int best_epoch = -1;

  for (int epoch = 0; epoch < h.epochs_stage1; ++epoch) {
    const double lr = lr_at(epoch, h);
    optzr.lr = lr;
    const auto order = epoch_order(train_ids, h.seed, epoch);
    double loss_sum = 0.0;
    size_t loss_n = 0;
    for (size_t pos = 0; pos < order.size(); pos += bs) {
      const int bn = static_cast<int>(std::min<size_t>(bs, order.size() - pos));
      std::vector<double> losses(bn, 0.0);
      parallel_for(bn, opt.threads, [&](int i) {
        const auto& g = ds.group(order[pos + i]);
        const auto& rec = branch == data::Modality::Fundus ? g.fundus : g.oct;
        const auto& signs = branch == data::Modality::Fundus ? g.fundus_signs : g.oct_signs;
        zero_refs(slot_refs[i]);
        const Tensor3 img = train_tensor(ds, rec, h.seed, epoch);
        model::Encoder::Ctx ctx;
        const auto feat = m.enc.encode(img, ctx);
        const auto logits = model::sign_logits(m.head, feat);
        nn::Vec<Scalar> targets(5), dlogits;
        for (int j = 0; j < 5; ++j) targets[j] = signs.flags[j] ? Scalar(1) : Scalar(0);
        losses[i] = nn::bce_with_logits(logits, targets, &dlogits);
        auto dfeat = m.head.backward(feat, dlogits, slot_grads[i].head.w, slot_grads[i].head.b);
        m.enc.backward(ctx, dfeat, slot_grads[i].enc);
      });
      for (int i = 0; i < bn; ++i) {
        if (!std::isfinite(losses[i])) throw NumericError("non-finite training loss");
        loss_sum += losses[i];
      }
      loss_n += bn;
      reduce_grads(slot_refs, bn, optzr.grads);
      optzr.step();
    }

    const auto val = eval_signs(m, ds, "valid", opt.threads);
    EpochLog log{epoch, lr, loss_sum / static_cast<double>(loss_n),
                 sign_prob_auroc(val.probs, val.truth)};
    res.log.push_back(log);
    if (opt.sink) opt.sink(log);
    if (log.val_auroc > best_auroc) {
      best_auroc = log.val_auroc;
      best_epoch = epoch;
      best = m;
    }
  }
  res.best_val_auroc = best_auroc;
  res.checkpoint = checkpoint_from(
      best, branch == data::Modality::Fundus ? "signs-F" : "signs-O", best_epoch, h,
      json{{"val_auroc", best_auroc}});
  return res;
}

namespace {

DiagnosisTrainResult run_diagnosis_training(model::DiagnosisModel m, const LoadedDataset& ds,
                                            const Hyperparams& h, const TrainOptions& opt) {
  h.validate();
  const auto& train_ids = ds.split("train");
  if (train_ids.empty()) throw ConfigError("training split is empty");

  model::DiagnosisModel grad_total = m.clone_zero();
  model::DiagnosisModel velocity = m.clone_zero();
  Optimizer optzr;
  optzr.momentum = h.momentum;
  optzr.weight_decay = h.weight_decay;
  m.collect_trainable(optzr.params, opt.freeze_encoders);
  grad_total.collect_trainable(optzr.grads, opt.freeze_encoders);
  velocity.collect_trainable(optzr.velocity, opt.freeze_encoders);

  nn::Vec<Scalar> class_w = nn::Vec<Scalar>::Ones(3);
  if (opt.class_weights) {
    std::array<double, 3> counts{};
    for (const auto& id : train_ids) counts[static_cast<int>(ds.group(id).disease)] += 1;
    for (int c = 0; c < 3; ++c)
      class_w[c] = counts[c] > 0
                       ? static_cast<Scalar>(train_ids.size() / (3.0 * counts[c]))
                       : Scalar(1);
  }

  const int bs = h.batch_size;
  std::vector<model::DiagnosisModel> slot_grads(bs, m.clone_zero());
  std::vector<std::vector<TensorRef>> slot_refs(bs);
  for (int s = 0; s < bs; ++s)
    slot_grads[s].collect_trainable(slot_refs[s], opt.freeze_encoders);

  DiagnosisTrainResult res;
  model::DiagnosisModel best = m;
  double best_auroc = -1.0;
  int best_epoch = -1;

  for (int epoch = 0; epoch < h.epochs_stage2; ++epoch) {
    const double lr = lr_at(epoch, h);
    optzr.lr = lr;
    const auto order = epoch_order(train_ids, h.seed, epoch);
    double loss_sum = 0.0;
    size_t loss_n = 0;
    for (size_t pos = 0; pos < order.size(); pos += bs) {
      const int bn = static_cast<int>(std::min<size_t>(bs, order.size() - pos));
      std::vector<double> losses(bn, 0.0);
      parallel_for(bn, opt.threads, [&](int i) {
        const auto& g = ds.group(order[pos + i]);
        zero_refs(slot_refs[i]);
        const Tensor3 xf = train_tensor(ds, g.fundus, h.seed, epoch);
        const Tensor3 xo = train_tensor(ds, g.oct, h.seed, epoch);
        model::Encoder::Ctx ctx_f, ctx_o;
        const auto f_f = m.enc_f.encode(xf, ctx_f);
        const auto f_o = m.enc_o.encode(xo, ctx_o);
        const auto fused = model::fuse(f_f, f_o);
        const auto scores = model::diagnosis_scores(m.head, fused);
        const int label = static_cast<int>(g.disease);
        nn::Vec<Scalar> dscores;
        losses[i] = nn::softmax_xent(scores, label, class_w[label], &dscores);
        auto dfused =
            m.head.backward(fused, dscores, slot_grads[i].head.w, slot_grads[i].head.b);
        if (!opt.freeze_encoders) {
          nn::Vec<Scalar> dff = dfused.head(model::kFeatureDim);
          nn::Vec<Scalar> dfo = dfused.tail(model::kFeatureDim);
          m.enc_f.backward(ctx_f, dff, slot_grads[i].enc_f);
          m.enc_o.backward(ctx_o, dfo, slot_grads[i].enc_o);
        }
      });
      for (int i = 0; i < bn; ++i) {
        if (!std::isfinite(losses[i])) throw NumericError("non-finite training loss");
        loss_sum += losses[i];
      }
      loss_n += bn;
      reduce_grads(slot_refs, bn, optzr.grads);
      optzr.step();
    }

    const auto val = eval_diagnosis(m, ds, "valid", opt.threads);
    EpochLog log{epoch, lr, loss_sum / static_cast<double>(loss_n),
                 softmax_prob_auroc(val.probs, val.truth)};
    res.log.push_back(log);
    if (opt.sink) opt.sink(log);
    if (log.val_auroc > best_auroc) {
      best_auroc = log.val_auroc;
      best_epoch = epoch;
      best = m;
    }
  }
  res.best_val_auroc = best_auroc;
  res.checkpoint = checkpoint_from(best, best_epoch, h, json{{"val_auroc", best_auroc}});
  return res;
}

uint64_t data_checksum(const std::vector<TensorRef>& refs) {
  uint64_t hsh = 0xcbf29ce484222325ull;
  for (const auto& r : refs) hsh = fnv1a64(r.data, r.size * sizeof(Scalar), hsh);
  return hsh;
}

}  // namespace

DiagnosisTrainResult finetune_diagnosis(const Checkpoint& ckpt_f, const Checkpoint& ckpt_o,
                                        const LoadedDataset& ds, const Hyperparams& h,
                                        const TrainOptions& opt) {
  if (ckpt_f.stage != "signs-F" || ckpt_o.stage != "signs-O")
    throw ConfigError("finetune_diagnosis expects stage-1 checkpoints signs-F and signs-O, got '" +
                      ckpt_f.stage + "' and '" + ckpt_o.stage + "'");
  if (ckpt_f.trunk != ckpt_o.trunk)
    throw ConfigError("stage-1 checkpoints use different trunk configs");

  model::SignModel sf = sign_model_from(ckpt_f);
  model::SignModel so = sign_model_from(ckpt_o);

  model::DiagnosisModel m;
  m.enc_f = sf.enc;
  m.enc_o = so.enc;
  m.sign_head_f = sf.head;
  m.sign_head_o = so.head;
  m.head = model::build_diagnosis_head(derive_seed(h.seed, "diag"));

  // Weight-reuse contract: encoder bytes equal the checkpoint bytes before
  // the first optimization step.
  std::vector<TensorRef> enc_refs, src_refs;
  m.enc_f.collect("enc", enc_refs);
  sf.enc.collect("enc", src_refs);
  if (data_checksum(enc_refs) != data_checksum(src_refs))
    throw NumericError("fundus encoder initialization does not match its checkpoint");
  enc_refs.clear();
  src_refs.clear();
  m.enc_o.collect("enc", enc_refs);
  so.enc.collect("enc", src_refs);
  if (data_checksum(enc_refs) != data_checksum(src_refs))
    throw NumericError("oct encoder initialization does not match its checkpoint");

  return run_diagnosis_training(std::move(m), ds, h, opt);
}

DiagnosisTrainResult train_scratch_baseline(const LoadedDataset& ds, const Hyperparams& h,
                                            const model::TrunkConfig& trunk,
                                            const TrainOptions& opt) {
  model::DiagnosisModel m = model::build_diagnosis_model(trunk, derive_seed(h.seed, "scratch"));
  return run_diagnosis_training(std::move(m), ds, h, opt);
}

}  // namespace kfwc::train
