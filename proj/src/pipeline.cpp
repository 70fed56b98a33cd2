#include "slmfuse/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>

#include "json.hpp"
#include "slmfuse/binio.hpp"
#include "slmfuse/error.hpp"
#include "slmfuse/mmf.hpp"
#include "slmfuse/optim.hpp"
#include "slmfuse/projector.hpp"
#include "slmfuse/rng.hpp"

namespace slmfuse {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------ splits

Split split_by_patient(std::span<const std::uint32_t> patients, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ValidationError("split ratio must be in (0, 1), got " + std::to_string(ratio));
  }
  std::vector<std::uint32_t> order;
  std::map<std::uint32_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    auto& m = members[patients[i]];
    if (m.empty()) order.push_back(patients[i]);
    m.push_back(i);
  }
  if (order.size() < 2) throw ValidationError("split needs at least 2 patients, got " + std::to_string(order.size()));

  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

  const double target = ratio * static_cast<double>(patients.size());
  Split out;
  for (std::uint32_t p : order) {
    auto& dst = static_cast<double>(out.train.size()) < target ? out.train : out.test;
    dst.insert(dst.end(), members[p].begin(), members[p].end());
  }
  if (out.test.empty()) throw ValidationError("split left no patient for the test side");
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

DataSplits make_splits(const Dataset& data, std::uint64_t seed) {
  const Split outer = split_by_patient(data.patients, kTrainRatio, seed);
  std::vector<std::uint32_t> train_patients;
  for (std::size_t i : outer.train) train_patients.push_back(data.patients[i]);
  const Split inner = split_by_patient(train_patients, kFitRatio, seed + 1);
  DataSplits s;
  for (std::size_t j : inner.train) s.fit.push_back(outer.train[j]);
  for (std::size_t j : inner.test) s.val.push_back(outer.train[j]);
  s.test = outer.test;
  return s;
}

// ---------------------------------------------------------------- encoding

std::vector<Tensor> encode_records(const Dataset& data, std::span<const std::size_t> ids,
                                   SourceStats& stats, bool fit) {
  if (ids.empty()) throw ValidationError("no records to encode");
  for (std::size_t i : ids) {
    if (i >= data.size()) throw ValidationError("record id " + std::to_string(i) + " out of range");
  }
  stats.resize(data.sources.size());
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < data.sources.size(); ++s) {
    const SourceSpec& src = data.sources[s];
    Tensor emb = Tensor::matrix(ids.size(), src.dim);
    if (data.mode == DataMode::Latent) {
      for (std::size_t r = 0; r < ids.size(); ++r) {
        for (std::size_t d = 0; d < src.dim; ++d) emb.at(r, d) = data.embeddings[s].at(ids[r], d);
      }
      out.push_back(std::move(emb));
      continue;
    }
    const RawSourceData& raw = data.raw[s];
    switch (src.modality) {
      case Modality::TimeSeries: {
        std::vector<SeriesSet> recs;
        for (std::size_t i : ids) recs.push_back(raw.series[i]);
        if (fit) {
          FeatureStats st = embed_timeseries_source(recs, src.raw_dim).stats;
          round_to_f32(st.mean);
          round_to_f32(st.std);
          stats[s] = std::move(st);
        } else if (!stats[s]) {
          throw ValidationError("no feature stats for time-series source '" + src.name + "'");
        }
        emb = embed_timeseries_source(recs, src.raw_dim, stats[s]).embeddings;
        break;
      }
      case Modality::Image: {
        const StubEncoder enc(src, data.encoder_seed);
        for (std::size_t r = 0; r < ids.size(); ++r) {
          std::vector<Screening> shots;
          for (const auto& shot : raw.screenings[ids[r]]) {
            shots.push_back({shot.time, enc.encode_image(shot.embedding)});
          }
          const auto e = src.aggregate ? aggregate_images(shots) : latest_image(shots);
          for (std::size_t d = 0; d < src.dim; ++d) emb.at(r, d) = e[d];
        }
        break;
      }
      case Modality::Text: {
        const StubEncoder enc(src, data.encoder_seed);
        for (std::size_t r = 0; r < ids.size(); ++r) {
          const auto e = enc.encode_text(raw.tokens[ids[r]]);
          for (std::size_t d = 0; d < src.dim; ++d) emb.at(r, d) = e[d];
        }
        break;
      }
    }
    out.push_back(std::move(emb));
  }
  return out;
}

// ---------------------------------------------------------------- training

std::string to_string(TrainMode mode) { return mode == TrainMode::Joint ? "joint" : "isolated"; }

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "joint") return TrainMode::Joint;
  if (s == "isolated") return TrainMode::Isolated;
  throw ValidationError("unknown training mode '" + s + "' (expected joint or isolated)");
}

void validate(const TrainConfig& cfg) {
  if (cfg.epochs == 0) throw ValidationError("epochs must be positive");
  if (cfg.batch == 0) throw ValidationError("batch must be positive");
  if (!(cfg.lr > 0.0)) throw ValidationError("lr must be positive");
  if (!(cfg.wd >= 0.0)) throw ValidationError("wd must be nonnegative");
  if (!(cfg.beta >= 0.0)) throw ValidationError("beta must be nonnegative");
  if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) throw ValidationError("threshold must be in (0, 1)");
  validate(cfg.asl);
  validate(cfg.lm);
}

namespace {

// Rows of an n x d matrix as 1 x d tensors.
std::vector<Tensor> split_rows(const Tensor& m) {
  std::vector<Tensor> rows;
  rows.reserve(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    rows.emplace_back(std::vector<std::size_t>{1, m.cols()},
                      std::vector<double>(m.data() + r * m.cols(), m.data() + (r + 1) * m.cols()));
  }
  return rows;
}

LossSettings loss_settings(const Checkpoint& ck) {
  return {ck.config.loss, ck.config.asl, ck.weights};
}

// Confidences phi (1 x K) from the token sequence (one token per row).
Var confidence(Graph& g, const FrozenLM& lm, const Tensor& head_columns, const std::vector<Var>& tokens) {
  Var seq = tokens.size() == 1 ? tokens.front() : ad::concat(tokens, 0);
  return ad::sigmoid(ad::mean_rows(lm.forward_columns(g, seq, head_columns)));
}

// Projects each row and returns (tokens, summed reconstruction loss).
std::pair<std::vector<Var>, Var> project_all(Graph& g, ParamSet& params,
                                             const std::vector<std::string>& prefixes,
                                             const std::vector<const Tensor*>& rows) {
  std::vector<Var> tokens;
  Var rec{};
  for (std::size_t s = 0; s < prefixes.size(); ++s) {
    Var e = g.constant_ref(*rows[s]);
    Var t = project(g, params, e, prefixes[s]);
    Var r = reconstruction_loss(e, reconstruct(g, params, t, prefixes[s]));
    rec = s == 0 ? r : rec + r;
    tokens.push_back(t);
  }
  return {tokens, rec};
}

Var record_objective(Graph& g, ParamSet& params, const FrozenLM& lm, const Tensor& head_columns,
                     const std::vector<std::string>& prefixes, const std::vector<const Tensor*>& rows,
                     std::span<const std::int8_t> labels, double beta, const LossSettings& settings) {
  auto [tokens, rec] = project_all(g, params, prefixes, rows);
  Var phi = confidence(g, lm, head_columns, tokens);
  return rec + beta * masked_multilabel_loss(g, phi, labels, settings);
}

Checkpoint make_checkpoint(const Dataset& data, std::span<const std::size_t> ids, const TrainConfig& cfg,
                           const FrozenLM& lm) {
  validate(cfg);
  if (data.sources.size() > cfg.lm.max_seq) {
    throw ValidationError(std::to_string(data.sources.size()) + " sources exceed the LM context of " +
                          std::to_string(cfg.lm.max_seq));
  }
  Checkpoint ck;
  ck.config = cfg;
  ck.sources = data.sources;
  ck.task_names = data.task_names;
  ck.data_mode = data.mode;
  ck.encoder_seed = data.encoder_seed;
  ck.designated = draw_designated(cfg.lm.vocab, data.num_tasks(), cfg.seed);
  ck.lm_hash = lm.hash();
  if (cfg.loss == LossKind::Avg) {
    std::vector<LabelVector> labels;
    for (std::size_t i : ids) labels.push_back(data.labels[i]);
    ck.weights = class_weights(labels, data.num_tasks(), data.task_names);
  } else {
    ck.weights = unit_weights(data.num_tasks());
  }
  for (const auto& src : data.sources) {
    add_projector(ck.params, src.name, {src.dim, cfg.lm.d_model}, derive_seed(cfg.seed, "projector/" + src.name));
  }
  return ck;
}

// Runs the epoch loop over `params` with per-record objective `objective(g, ps, i)`.
std::vector<double> optimize(ParamSet& params, const TrainConfig& cfg, std::size_t n,
                             const std::function<Var(Graph&, ParamSet&, std::size_t)>& objective,
                             const std::string& label, const EpochCallback& on_epoch) {
  OptimState state(params, AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.wd});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    double total = 0.0;
    for (std::size_t start = 0, b = 0; start < n; start += cfg.batch, ++b) {
      const std::size_t end = std::min(n, start + cfg.batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      try {
        for (std::size_t j = start; j < end; ++j) {
          const std::size_t rec = order[j];
          total += eval_with_grads([&](Graph& g, ParamSet& ps) { return objective(g, ps, rec); }, params, scale);
        }
        adamw_step(params, state);
      } catch (const NumericalError& e) {
        throw NumericalError(label + ": epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                             ": " + e.what());
      }
    }
    history.push_back(total / static_cast<double>(n));
    if (on_epoch) on_epoch(label, epoch, history.back());
  }
  return history;
}

}  // namespace

Checkpoint init_checkpoint(const Dataset& data, std::span<const std::size_t> ids, const TrainConfig& cfg) {
  return make_checkpoint(data, ids, cfg, FrozenLM(cfg.lm));
}

Checkpoint train(const Dataset& data, std::span<const std::size_t> ids, const TrainConfig& cfg,
                 const EpochCallback& on_epoch) {
  return cfg.mode == TrainMode::Joint ? train_joint(data, ids, cfg, on_epoch)
                                      : train_isolated(data, ids, cfg, on_epoch);
}

Checkpoint train_joint(const Dataset& data, std::span<const std::size_t> ids, TrainConfig cfg,
                       const EpochCallback& on_epoch) {
  cfg.mode = TrainMode::Joint;
  const FrozenLM lm(cfg.lm);
  Checkpoint ck = make_checkpoint(data, ids, cfg, lm);
  const std::vector<Tensor> emb = encode_records(data, ids, ck.stats, true);
  std::vector<std::vector<Tensor>> rows;
  std::vector<std::string> prefixes;
  for (std::size_t s = 0; s < emb.size(); ++s) {
    rows.push_back(split_rows(emb[s]));
    prefixes.push_back(data.sources[s].name);
  }
  const Tensor head = lm.head_columns(ck.designated.indices);
  const LossSettings settings = loss_settings(ck);
  auto objective = [&](Graph& g, ParamSet& ps, std::size_t r) {
    std::vector<const Tensor*> rec_rows;
    for (const auto& src_rows : rows) rec_rows.push_back(&src_rows[r]);
    return record_objective(g, ps, lm, head, prefixes, rec_rows, data.labels[ids[r]], cfg.beta, settings);
  };
  ck.history.push_back(optimize(ck.params, cfg, ids.size(), objective, "joint", on_epoch));
  if (lm.hash() != ck.lm_hash) throw NumericalError("frozen LM weights changed during training");
  round_params(ck);
  return ck;
}

Checkpoint train_isolated(const Dataset& data, std::span<const std::size_t> ids, TrainConfig cfg,
                          const EpochCallback& on_epoch) {
  cfg.mode = TrainMode::Isolated;
  const FrozenLM lm(cfg.lm);
  Checkpoint ck = make_checkpoint(data, ids, cfg, lm);
  const std::vector<Tensor> emb = encode_records(data, ids, ck.stats, true);
  const Tensor head = lm.head_columns(ck.designated.indices);
  const LossSettings settings = loss_settings(ck);
  ParamSet merged;
  for (std::size_t s = 0; s < data.sources.size(); ++s) {
    const std::string& name = data.sources[s].name;
    const ProjectorNames pn = ProjectorNames::with_prefix(name);
    ParamSet own;
    for (const std::string* p : {&pn.enc_w, &pn.enc_b, &pn.dec_w, &pn.dec_b}) {
      own.add(*p, ck.params.value(*p), ck.params.entry(*p).decay);
    }
    const std::vector<Tensor> rows = split_rows(emb[s]);
    const std::vector<std::string> prefixes{name};
    auto objective = [&](Graph& g, ParamSet& ps, std::size_t r) {
      return record_objective(g, ps, lm, head, prefixes, {&rows[r]}, data.labels[ids[r]], cfg.beta, settings);
    };
    ck.history.push_back(optimize(own, cfg, ids.size(), objective, name, on_epoch));
    for (auto& [pname, entry] : own.entries()) merged.add(pname, entry.value, entry.decay);
  }
  ck.params = std::move(merged);
  if (lm.hash() != ck.lm_hash) throw NumericalError("frozen LM weights changed during training");
  round_params(ck);
  return ck;
}

double batch_loss(const Checkpoint& ckpt, const FrozenLM& lm, std::span<const Tensor> embeddings,
                  std::span<const LabelVector> labels, std::optional<std::size_t> source) {
  ParamSet params = ckpt.params;
  const Tensor head = lm.head_columns(ckpt.designated.indices);
  const LossSettings settings = loss_settings(ckpt);
  std::vector<std::size_t> srcs;
  if (source) srcs.push_back(*source);
  else {
    srcs.resize(ckpt.sources.size());
    std::iota(srcs.begin(), srcs.end(), 0);
  }
  std::vector<std::string> prefixes;
  std::vector<std::vector<Tensor>> rows;
  for (std::size_t s : srcs) {
    prefixes.push_back(ckpt.sources[s].name);
    rows.push_back(split_rows(embeddings[s]));
  }
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    std::vector<const Tensor*> rec_rows;
    for (const auto& src_rows : rows) rec_rows.push_back(&src_rows[r]);
    total += eval_loss([&](Graph& g, ParamSet& ps) {
      return record_objective(g, ps, lm, head, prefixes, rec_rows, labels[r], ckpt.config.beta, settings);
    }, params);
  }
  return total / static_cast<double>(labels.size());
}

Computation joint_objective(const FrozenLM& lm, const Tensor& head_columns, std::vector<std::string> prefixes,
                            std::vector<Tensor> rows, LabelVector labels, double beta, LossSettings settings) {
  return [&lm, &head_columns, prefixes = std::move(prefixes), rows = std::move(rows),
          labels = std::move(labels), beta, settings = std::move(settings)](Graph& g, ParamSet& ps) {
    std::vector<const Tensor*> ptrs;
    for (const auto& r : rows) ptrs.push_back(&r);
    return record_objective(g, ps, lm, head_columns, prefixes, ptrs, labels, beta, settings);
  };
}

GradCheckReport pipeline_gradcheck(std::uint64_t seed, double tol, double h) {
  const LMConfig lm_cfg{16, 2, 2, 32, 8, seed};
  const FrozenLM lm(lm_cfg);
  const std::size_t n_src = 3, d_e = 8, k = 4;
  const DesignatedVocab designated = draw_designated(lm_cfg.vocab, k, seed);
  const Tensor head = lm.head_columns(designated.indices);
  Rng rng(derive_seed(seed, "gradcheck"));
  ParamSet params;
  std::vector<std::string> prefixes;
  std::vector<Tensor> rows;
  for (std::size_t s = 0; s < n_src; ++s) {
    prefixes.push_back("s" + std::to_string(s));
    add_projector(params, prefixes.back(), {d_e, lm_cfg.d_model}, derive_seed(seed, s));
    Tensor row = Tensor::matrix(1, d_e);
    for (double& v : row.values()) v = rng.normal();
    rows.push_back(std::move(row));
  }
  // Nonzero biases so their gradients are exercised away from the init point.
  for (auto& [name, entry] : params.entries()) {
    if (!entry.decay) {
      for (double& v : entry.value.values()) v = 0.1 * rng.normal();
    }
  }
  const LabelVector labels{1, 0, kUnlabeled, 1};
  const Computation comp = joint_objective(lm, head, prefixes, rows, labels, 10.0,
                                           {LossKind::Asl, ASLConfig{}, unit_weights(k)});
  return finite_diff_check(comp, params, h, tol);
}

// -------------------------------------------------------------- prediction

PredictMode parse_predict_mode(const std::string& s, std::span<const SourceSpec> sources) {
  if (s == "joint") return {PredictKind::Joint, 0};
  if (s == "iso-joint") return {PredictKind::IsoJoint, 0};
  if (s.rfind("single:", 0) == 0) {
    const std::string name = s.substr(7);
    for (std::size_t i = 0; i < sources.size(); ++i) {
      if (sources[i].name == name) return {PredictKind::Single, i};
    }
    throw ValidationError("unknown source '" + name + "' in mode '" + s + "'");
  }
  throw ValidationError("unknown prediction mode '" + s + "' (expected joint, iso-joint or single:SRC)");
}

std::string to_string(const PredictMode& mode, std::span<const SourceSpec> sources) {
  switch (mode.kind) {
    case PredictKind::Joint: return "joint";
    case PredictKind::IsoJoint: return "iso-joint";
    case PredictKind::Single: return "single:" + sources[mode.source].name;
  }
  return "";
}

Predictions predict(const Checkpoint& ckpt, const FrozenLM& lm, std::span<const Tensor> embeddings,
                    PredictMode mode, std::optional<double> threshold) {
  const bool joint_ckpt = ckpt.config.mode == TrainMode::Joint;
  if (mode.kind == PredictKind::Joint && !joint_ckpt) {
    throw ValidationError("joint prediction needs a jointly trained checkpoint; use iso-joint for isolated ones");
  }
  if (mode.kind == PredictKind::IsoJoint && joint_ckpt) {
    throw ValidationError("iso-joint prediction needs an isolated checkpoint");
  }
  if (mode.kind == PredictKind::Single && mode.source >= ckpt.sources.size()) {
    throw ValidationError("single-source prediction: source index out of range");
  }
  if (embeddings.size() != ckpt.sources.size()) {
    throw ValidationError("expected embeddings for " + std::to_string(ckpt.sources.size()) + " sources");
  }
  if (lm.hash() != ckpt.lm_hash) throw ValidationError("frozen LM does not match the checkpoint");
  const double thr = threshold.value_or(ckpt.config.threshold);
  if (!(thr > 0.0 && thr < 1.0)) throw ValidationError("threshold must be in (0, 1)");

  std::vector<std::size_t> srcs;
  if (mode.kind == PredictKind::Single) srcs.push_back(mode.source);
  else {
    srcs.resize(ckpt.sources.size());
    std::iota(srcs.begin(), srcs.end(), 0);
  }
  std::vector<std::vector<Tensor>> rows;
  for (std::size_t s : srcs) rows.push_back(split_rows(embeddings[s]));
  const std::size_t n = embeddings.front().rows(), k = ckpt.task_names.size();

  ParamSet params = ckpt.params;
  const Tensor head = lm.head_columns(ckpt.designated.indices);
  Predictions out{Tensor::matrix(n, k), std::vector<LabelVector>(n, LabelVector(k, 0))};
  for (std::size_t r = 0; r < n; ++r) {
    Graph g(false);
    std::vector<Var> tokens;
    for (std::size_t j = 0; j < srcs.size(); ++j) {
      tokens.push_back(project(g, params, g.constant_ref(rows[j][r]), ckpt.sources[srcs[j]].name));
    }
    const Tensor& phi = g.value(confidence(g, lm, head, tokens));
    for (std::size_t t = 0; t < k; ++t) {
      out.phi.at(r, t) = phi[t];
      out.labels[r][t] = phi[t] >= thr ? 1 : 0;
    }
  }
  return out;
}

Predictions predict(const Checkpoint& ckpt, const Dataset& data, std::span<const std::size_t> ids,
                    PredictMode mode, std::optional<double> threshold) {
  if (data.sources.size() != ckpt.sources.size()) throw ValidationError("dataset sources do not match the checkpoint");
  for (std::size_t s = 0; s < data.sources.size(); ++s) {
    if (data.sources[s].name != ckpt.sources[s].name || data.sources[s].dim != ckpt.sources[s].dim) {
      throw ValidationError("dataset source '" + data.sources[s].name + "' does not match the checkpoint");
    }
  }
  if (data.task_names != ckpt.task_names) throw ValidationError("dataset tasks do not match the checkpoint");
  if (data.mode != ckpt.data_mode) throw ValidationError("dataset mode does not match the checkpoint");
  SourceStats stats = ckpt.stats;
  const std::vector<Tensor> emb = encode_records(data, ids, stats, false);
  const FrozenLM lm(ckpt.config.lm);
  return predict(ckpt, lm, emb, mode, threshold);
}

// --------------------------------------------------------------------- BSS

BssSelection bss_select(const Checkpoint& ckpt, const Dataset& data, std::span<const std::size_t> val_ids) {
  if (ckpt.config.mode != TrainMode::Isolated) {
    throw ValidationError("best-single-source selection needs an isolated checkpoint");
  }
  std::vector<LabelVector> labels;
  for (std::size_t i : val_ids) labels.push_back(data.labels[i]);
  std::vector<std::vector<TaskMetrics>> validation;
  for (std::size_t s = 0; s < ckpt.sources.size(); ++s) {
    const Predictions p = predict(ckpt, data, val_ids, {PredictKind::Single, s});
    validation.push_back(evaluate_tasks(p.labels, labels, ckpt.task_names));
  }
  return select_best_sources(std::move(validation));
}

BssSelection select_best_sources(std::vector<std::vector<TaskMetrics>> validation) {
  // Equal ratios computed from different counts may differ in the last bit.
  constexpr double kTieEps = 1e-12;
  if (validation.empty()) throw ValidationError("BSS selection needs at least one source");
  BssSelection sel;
  sel.validation = std::move(validation);
  const std::size_t k = sel.validation.front().size();
  for (std::size_t t = 0; t < k; ++t) {
    std::size_t best = 0;
    for (std::size_t s = 1; s < sel.validation.size(); ++s) {
      const TaskMetrics& a = sel.validation[s].at(t);
      const TaskMetrics& b = sel.validation[best][t];
      const double df = a.f1() - b.f1();
      if (df > kTieEps || (std::abs(df) <= kTieEps && a.recall > b.recall + kTieEps)) best = s;
    }
    const bool ok = sel.validation[0][t].n_labeled > 0;
    sel.source.push_back(ok ? best : 0);
    sel.selectable.push_back(ok);
  }
  return sel;
}

Predictions predict_bss(const Checkpoint& ckpt, const Dataset& data, std::span<const std::size_t> ids,
                        const BssSelection& selection) {
  const std::size_t k = ckpt.task_names.size();
  if (selection.source.size() != k) throw ValidationError("BSS selection does not cover every task");
  std::map<std::size_t, Predictions> per_source;
  for (std::size_t s : selection.source) {
    if (!per_source.count(s)) per_source.emplace(s, predict(ckpt, data, ids, {PredictKind::Single, s}));
  }
  Predictions out{Tensor::matrix(ids.size(), k), std::vector<LabelVector>(ids.size(), LabelVector(k, 0))};
  for (std::size_t t = 0; t < k; ++t) {
    const Predictions& p = per_source.at(selection.source[t]);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      out.phi.at(r, t) = p.phi.at(r, t);
      out.labels[r][t] = p.labels[r][t];
    }
  }
  return out;
}

// -------------------------------------------------------------- checkpoints

namespace {

constexpr int kCheckpointVersion = 1;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string param_file(const std::string& name) {
  std::string f = "proj_" + name + ".mmf";
  std::replace(f.begin(), f.end(), '/', '_');
  return f;
}

json config_json(const TrainConfig& c) {
  return {{"loss", to_string(c.loss)},
          {"mode", to_string(c.mode)},
          {"epochs", c.epochs},
          {"batch", c.batch},
          {"lr", c.lr},
          {"wd", c.wd},
          {"beta", c.beta},
          {"m", c.asl.margin},
          {"gamma_neg", c.asl.gamma_neg},
          {"threshold", c.threshold},
          {"seed", c.seed},
          {"lm", {{"d_model", c.lm.d_model},
                  {"n_layers", c.lm.n_layers},
                  {"n_heads", c.lm.n_heads},
                  {"vocab", c.lm.vocab},
                  {"max_seq", c.lm.max_seq},
                  {"seed", c.lm.seed}}}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.loss = loss_kind_from_string(j.at("loss").get<std::string>());
  c.mode = train_mode_from_string(j.at("mode").get<std::string>());
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch = j.at("batch").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.wd = j.at("wd").get<double>();
  c.beta = j.at("beta").get<double>();
  c.asl.margin = j.at("m").get<double>();
  c.asl.gamma_neg = j.at("gamma_neg").get<double>();
  c.threshold = j.at("threshold").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const json& lm = j.at("lm");
  c.lm.d_model = lm.at("d_model").get<std::size_t>();
  c.lm.n_layers = lm.at("n_layers").get<std::size_t>();
  c.lm.n_heads = lm.at("n_heads").get<std::size_t>();
  c.lm.vocab = lm.at("vocab").get<std::size_t>();
  c.lm.max_seq = lm.at("max_seq").get<std::size_t>();
  c.lm.seed = lm.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void round_params(Checkpoint& ckpt) {
  for (auto& [name, entry] : ckpt.params.entries()) round_to_f32(entry.value);
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  fs::create_directories(dir);
  json m;
  m["format"] = "slmfuse-checkpoint";
  m["version"] = kCheckpointVersion;
  m["train"] = config_json(ckpt.config);
  m["sources"] = json::array();
  for (const auto& s : ckpt.sources) {
    m["sources"].push_back({{"name", s.name}, {"modality", to_string(s.modality)}, {"dim", s.dim},
                            {"raw_dim", s.raw_dim}, {"aggregate", s.aggregate}});
  }
  m["task_names"] = ckpt.task_names;
  m["data_mode"] = to_string(ckpt.data_mode);
  m["encoder_seed"] = ckpt.encoder_seed;
  m["designated"] = {{"indices", ckpt.designated.indices}, {"seed", ckpt.designated.seed}};
  m["lm_hash"] = hex64(ckpt.lm_hash);
  m["class_weights"] = {{"pos", ckpt.weights.pos}, {"neg", ckpt.weights.neg}};
  m["history"] = ckpt.history;
  m["params"] = json::array();
  for (const auto& [name, entry] : ckpt.params.entries()) {
    const std::string file = param_file(name);
    write_mmf(dir / file, entry.value);
    m["params"].push_back({{"name", name}, {"file", file}, {"decay", entry.decay}});
  }
  m["stats"] = json::array();
  for (std::size_t s = 0; s < ckpt.stats.size(); ++s) {
    if (!ckpt.stats[s]) continue;
    const std::string base = "stats_" + ckpt.sources[s].name;
    write_mmf(dir / (base + "_mean.mmf"), ckpt.stats[s]->mean);
    write_mmf(dir / (base + "_std.mmf"), ckpt.stats[s]->std);
    m["stats"].push_back({{"source", ckpt.sources[s].name}, {"mean", base + "_mean.mmf"}, {"std", base + "_std.mmf"}});
  }
  write_file(dir / "manifest", m.dump(2) + "\n");
  std::string vocab;
  for (std::size_t i : ckpt.designated.indices) vocab += std::to_string(i) + "\n";
  write_file(dir / "designated_vocab.txt", vocab);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path mpath = dir / "manifest";
  if (!fs::is_regular_file(mpath)) throw ValidationError("missing checkpoint file " + mpath.string());
  Checkpoint ck;
  std::string stored_hash;
  try {
    const json m = json::parse(read_file(mpath));
    if (m.at("format") != "slmfuse-checkpoint" || m.at("version") != kCheckpointVersion) {
      throw ValidationError(mpath.string() + ": unsupported checkpoint format or version");
    }
    ck.config = config_from_json(m.at("train"));
    for (const auto& s : m.at("sources")) {
      ck.sources.push_back({s.at("name").get<std::string>(), modality_from_string(s.at("modality").get<std::string>()),
                            s.at("dim").get<std::size_t>(), s.at("raw_dim").get<std::size_t>(),
                            s.at("aggregate").get<bool>()});
    }
    ck.task_names = m.at("task_names").get<std::vector<std::string>>();
    ck.data_mode = data_mode_from_string(m.at("data_mode").get<std::string>());
    ck.encoder_seed = m.at("encoder_seed").get<std::uint64_t>();
    ck.designated.indices = m.at("designated").at("indices").get<std::vector<std::size_t>>();
    ck.designated.seed = m.at("designated").at("seed").get<std::uint64_t>();
    stored_hash = m.at("lm_hash").get<std::string>();
    ck.weights.pos = m.at("class_weights").at("pos").get<std::vector<double>>();
    ck.weights.neg = m.at("class_weights").at("neg").get<std::vector<double>>();
    ck.history = m.at("history").get<std::vector<std::vector<double>>>();
    for (const auto& p : m.at("params")) {
      const fs::path file = dir / p.at("file").get<std::string>();
      if (!fs::is_regular_file(file)) throw ValidationError("missing checkpoint file " + file.string());
      ck.params.add(p.at("name").get<std::string>(), read_mmf(file), p.at("decay").get<bool>());
    }
    ck.stats.resize(ck.sources.size());
    for (const auto& st : m.at("stats")) {
      const std::string name = st.at("source").get<std::string>();
      auto it = std::find_if(ck.sources.begin(), ck.sources.end(), [&](const SourceSpec& s) { return s.name == name; });
      if (it == ck.sources.end()) throw ValidationError(mpath.string() + ": stats for unknown source '" + name + "'");
      ck.stats[static_cast<std::size_t>(it - ck.sources.begin())] =
          FeatureStats{read_mmf(dir / st.at("mean").get<std::string>()), read_mmf(dir / st.at("std").get<std::string>())};
    }
  } catch (const json::exception& e) {
    throw ValidationError(mpath.string() + ": " + e.what());
  }
  validate(ck.config);
  const FrozenLM lm(ck.config.lm);
  ck.lm_hash = lm.hash();
  if (hex64(ck.lm_hash) != stored_hash) {
    throw ValidationError(mpath.string() + ": frozen LM hash " + hex64(ck.lm_hash) +
                          " does not match stored " + stored_hash);
  }
  const DesignatedVocab expect = draw_designated(ck.config.lm.vocab, ck.task_names.size(), ck.config.seed);
  if (expect.indices != ck.designated.indices) {
    throw ValidationError(mpath.string() + ": designated vocabulary does not match the training seed");
  }
  const fs::path vpath = dir / "designated_vocab.txt";
  if (!fs::is_regular_file(vpath)) throw ValidationError("missing checkpoint file " + vpath.string());
  std::string listed;
  for (std::size_t i : ck.designated.indices) listed += std::to_string(i) + "\n";
  if (read_file(vpath) != listed) throw ValidationError(vpath.string() + ": does not match the manifest");
  for (const auto& src : ck.sources) {
    const ProjectorNames pn = ProjectorNames::with_prefix(src.name);
    for (const std::string* p : {&pn.enc_w, &pn.enc_b, &pn.dec_w, &pn.dec_b}) {
      if (!ck.params.contains(*p)) throw ValidationError(mpath.string() + ": missing parameter " + *p);
    }
  }
  return ck;
}

}  // namespace slmfuse
