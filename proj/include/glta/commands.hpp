#pragma once

// Pipeline orchestration behind the CLI subcommands: stage checkpoints,
// profile generation, evaluation and the ablation harness. All commands
// rebuild the dataset, split and vocabulary deterministically from the
// config, so any stage can run in a fresh process.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "glta/checkpoint.hpp"
#include "glta/config.hpp"
#include "glta/data.hpp"
#include "glta/errors.hpp"
#include "glta/gllm.hpp"
#include "glta/graph.hpp"
#include "glta/lightgcn.hpp"
#include "glta/metrics.hpp"
#include "glta/projector.hpp"
#include "glta/stages.hpp"
#include "glta/templates.hpp"
#include "glta/textgen.hpp"
#include "glta/textgen_http.hpp"
#include "glta/trainlog.hpp"
#include "glta/transformer.hpp"
#include "glta/vocab.hpp"

namespace glta {

struct PipelineEnv {
  data::Dataset dataset;
  eval::EvalSplit split;
  InteractionGraph train_graph;
  lm::Vocabulary vocab;
  std::vector<int64_t> train_edge_times;  // parallel to split.train_edges
  std::vector<std::string> warnings;
};

inline PipelineEnv build_env(const RunConfig& cfg) {
  PipelineEnv env;
  if (cfg.synthetic) {
    data::SynthConfig sc;
    sc.users = cfg.synth_users;
    sc.items = cfg.synth_items;
    sc.clusters = static_cast<int>(cfg.synth_clusters);
    sc.in_cluster_p = cfg.synth_in_cluster_p;
    sc.noise_p = cfg.synth_noise_p;
    sc.vocab_per_cluster = static_cast<int>(cfg.synth_vocab_per_cluster);
    sc.desc_words = static_cast<int>(cfg.synth_desc_words);
    sc.seed = cfg.seed;
    env.dataset = data::generate_synthetic(sc);
  } else {
    env.dataset = data::load_dataset(cfg.interactions, cfg.items);
    if (env.dataset.duplicates_collapsed > 0)
      env.warnings.push_back("load_dataset: collapsed " +
                             std::to_string(env.dataset.duplicates_collapsed) +
                             " duplicate interactions");
  }
  env.split = eval::split_dataset(env.dataset.graph, cfg.eval_ratio, cfg.seed);
  env.train_graph = InteractionGraph::build(env.dataset.graph.num_users,
                                            env.dataset.graph.num_items, env.split.train_edges);
  env.vocab = lm::Vocabulary::build(env.dataset.catalog.descriptions,
                                    static_cast<size_t>(cfg.lm_vocab_cap));
  if (env.split.users_excluded > 0)
    env.warnings.push_back("split: " + std::to_string(env.split.users_excluded) +
                           " users lack a train/test division and are excluded from evaluation");

  if (env.dataset.has_timestamps) {
    env.train_edge_times.reserve(env.split.train_edges.size());
    for (const auto& [u, i] : env.split.train_edges) {
      const auto& edges = env.dataset.graph.edges;
      const auto it = std::lower_bound(edges.begin(), edges.end(), std::make_pair(u, i));
      env.train_edge_times.push_back(
          env.dataset.edge_times[static_cast<size_t>(it - edges.begin())]);
    }
  }
  return env;
}

inline std::filesystem::path stage_path(const RunConfig& cfg, int stage) {
  return std::filesystem::path(cfg.out_dir) / ("stage" + std::to_string(stage) + ".ckpt");
}

inline void require_writable(const RunConfig& cfg, const std::filesystem::path& path,
                             bool resumable = false) {
  std::filesystem::create_directories(cfg.out_dir);
  if (std::filesystem::exists(path) && !cfg.force && !(resumable && cfg.resume))
    throw Error("refusing to overwrite " + path.string() + " without --force");
}

// --------------------------------------------------------------------------
// backbone persistence
// --------------------------------------------------------------------------
inline lm::TransformerWeights<float> init_backbone(const RunConfig& cfg, int64_t vocab_size) {
  Rng rng = Rng::derive(cfg.seed, "lm-init");
  return lm::TransformerWeights<float>::init(rng, vocab_size, cfg.lm_d_model, cfg.lm_heads,
                                             cfg.lm_depth, cfg.lm_max_len);
}

inline void save_transformer(io::Checkpoint& ck, lm::TransformerWeights<float>& w) {
  for (auto& [name, t] : w.named_params()) ck.put(name, t);
  ck.put_scalar("meta.lm_heads", static_cast<float>(w.n_heads));
  ck.put_scalar("meta.lm_depth", static_cast<float>(w.n_layers));
}

inline lm::TransformerWeights<float> load_transformer(const io::Checkpoint& ck) {
  lm::TransformerWeights<float> w;
  w.tok_table = ck.get("lm.tok_table").clone();
  w.pos_table = ck.get("lm.pos_table").clone();
  w.vocab = w.tok_table.shape()[0];
  w.d_model = w.tok_table.shape()[1];
  w.max_len = w.pos_table.shape()[0];
  w.n_heads = static_cast<int64_t>(ck.get_scalar("meta.lm_heads"));
  w.n_layers = static_cast<int64_t>(ck.get_scalar("meta.lm_depth"));
  for (int64_t l = 0; l < w.n_layers; ++l) {
    const std::string p = "lm.layer" + std::to_string(l) + ".";
    typename lm::TransformerWeights<float>::Layer lay;
    lay.wq = ck.get(p + "wq").clone();
    lay.bq = ck.get(p + "bq").clone();
    lay.wk = ck.get(p + "wk").clone();
    lay.bk = ck.get(p + "bk").clone();
    lay.wv = ck.get(p + "wv").clone();
    lay.bv = ck.get(p + "bv").clone();
    lay.wo = ck.get(p + "wo").clone();
    lay.bo = ck.get(p + "bo").clone();
    lay.ln1_g = ck.get(p + "ln1_g").clone();
    lay.ln1_b = ck.get(p + "ln1_b").clone();
    lay.ln2_g = ck.get(p + "ln2_g").clone();
    lay.ln2_b = ck.get(p + "ln2_b").clone();
    lay.w1 = ck.get(p + "w1").clone();
    lay.b1 = ck.get(p + "b1").clone();
    lay.w2 = ck.get(p + "w2").clone();
    lay.b2 = ck.get(p + "b2").clone();
    w.layers.push_back(std::move(lay));
  }
  w.lnf_g = ck.get("lm.final_ln_g").clone();
  w.lnf_b = ck.get("lm.final_ln_b").clone();
  return w;
}

inline void save_adam(io::Checkpoint& ck, const nd::Adam<float>& opt) {
  for (const auto& slot : opt.slots()) {
    ck.put("adam.m." + slot.name,
           nd::Tensor<float>::from({static_cast<int64_t>(slot.m.size())}, slot.m));
    ck.put("adam.v." + slot.name,
           nd::Tensor<float>::from({static_cast<int64_t>(slot.v.size())}, slot.v));
  }
  ck.put_scalar("meta.adam_t", static_cast<float>(opt.step_count()));
}

inline void restore_adam(const io::Checkpoint& ck, nd::Adam<float>& opt) {
  for (const auto& slot : opt.slots()) {
    auto* s = opt.find(slot.name);
    if (ck.has("adam.m." + slot.name)) {
      s->m = ck.get("adam.m." + slot.name).values();
      s->v = ck.get("adam.v." + slot.name).values();
    }
  }
  if (ck.has("meta.adam_t"))
    opt.set_step_count(static_cast<int64_t>(ck.get_scalar("meta.adam_t")));
}

// --------------------------------------------------------------------------
// profile / prediction texts
// --------------------------------------------------------------------------

// Per-user history descriptions from the training split, oldest first when
// timestamps are available, ascending item id otherwise.
inline std::vector<std::vector<std::string>> user_histories(const PipelineEnv& env) {
  const auto num_users = static_cast<size_t>(env.dataset.graph.num_users);
  std::vector<std::vector<std::pair<int64_t, int32_t>>> timed(num_users);
  for (size_t e = 0; e < env.split.train_edges.size(); ++e) {
    const auto& [u, i] = env.split.train_edges[e];
    const int64_t ts = env.dataset.has_timestamps ? env.train_edge_times[e] : 0;
    timed[static_cast<size_t>(u)].emplace_back(ts, i);
  }
  std::vector<std::vector<std::string>> out(num_users);
  for (size_t u = 0; u < num_users; ++u) {
    auto& v = timed[u];
    std::sort(v.begin(), v.end());
    for (const auto& [ts, item] : v)
      out[u].push_back(env.dataset.catalog.descriptions[static_cast<size_t>(item)]);
  }
  return out;
}

inline std::vector<textgen::UserTextAssets> load_user_texts(const RunConfig& cfg,
                                                            const PipelineEnv& env,
                                                            std::vector<std::string>* warnings,
                                                            int64_t* cache_hits = nullptr) {
  textgen::TextCache cache{std::filesystem::path(cfg.cache_path())};
  std::filesystem::create_directories(cfg.out_dir);

  const std::string profile_key =
      cfg.gen_mode == "offline"
          ? "offline-profile:top_n=" + std::to_string(cfg.gen_top_n)
          : textgen::profile_prompt({});
  const std::string prediction_key =
      cfg.gen_mode == "offline"
          ? "offline-prediction:top_n=" + std::to_string(cfg.gen_top_n) +
                ":recency=" + std::to_string(cfg.gen_recency_weight)
          : textgen::prediction_prompt({}, "");
  const uint64_t profile_hash = textgen::template_hash(profile_key, cfg.gen_model);
  const uint64_t prediction_hash = textgen::template_hash(prediction_key, cfg.gen_model);
  const std::string mode_tag = cfg.gen_mode;

  textgen::ChatConfig chat;
  chat.endpoint = cfg.gen_endpoint;
  chat.model = cfg.gen_model;
  chat.timeout_ms = static_cast<int>(cfg.gen_timeout_ms);
  if (const char* key = std::getenv("GLTA_LLM_API_KEY")) chat.api_key = key;

  auto generate = [&](const std::string& prompt, const std::vector<std::string>& history,
                      bool profile, const std::string& profile_text) -> std::string {
    if (cfg.gen_mode == "offline")
      return profile ? textgen::offline_profile(history, static_cast<int>(cfg.gen_top_n))
                     : textgen::offline_prediction(history, profile_text,
                                                   static_cast<int>(cfg.gen_top_n),
                                                   cfg.gen_recency_weight);
    try {
      return textgen::chat_complete(chat, prompt);
    } catch (const AuthError&) {
      throw;
    } catch (const Error& e) {
      if (!cfg.gen_fallback_offline) throw;
      if (warnings)
        warnings->push_back(std::string("gen: external generation failed (") + e.what() +
                            "); falling back to offline");
      return profile ? textgen::offline_profile(history, static_cast<int>(cfg.gen_top_n))
                     : textgen::offline_prediction(history, profile_text,
                                                   static_cast<int>(cfg.gen_top_n),
                                                   cfg.gen_recency_weight);
    }
  };

  const auto histories = user_histories(env);
  std::vector<textgen::UserTextAssets> out;
  out.reserve(histories.size());
  for (size_t u = 0; u < histories.size(); ++u) {
    textgen::UserTextAssets assets;
    assets.user_id = static_cast<int32_t>(u);
    assets.model_name = cfg.gen_model;
    const auto& history = histories[u];
    if (history.empty()) {
      assets.profile_text = textgen::kNoHistoryText;
      assets.prediction_text = textgen::kNoHistoryText;
      assets.provenance = "offline";
      out.push_back(std::move(assets));
      continue;
    }
    if (auto hit = cache.get(assets.user_id, "profile:" + mode_tag, profile_hash)) {
      assets.profile_text = *hit;
      assets.provenance = "cached";
      if (cache_hits) ++*cache_hits;
    } else {
      assets.profile_text =
          generate(textgen::profile_prompt(history), history, true, "");
      assets.provenance = cfg.gen_mode;
      cache.put(assets.user_id, "profile:" + mode_tag, profile_hash, assets.profile_text);
    }
    if (auto hit = cache.get(assets.user_id, "prediction:" + mode_tag, prediction_hash)) {
      assets.prediction_text = *hit;
      if (cache_hits) ++*cache_hits;
    } else {
      assets.prediction_text = generate(textgen::prediction_prompt(history, assets.profile_text),
                                        history, false, assets.profile_text);
      cache.put(assets.user_id, "prediction:" + mode_tag, prediction_hash,
                assets.prediction_text);
    }
    out.push_back(std::move(assets));
  }
  return out;
}

// --------------------------------------------------------------------------
// commands
// --------------------------------------------------------------------------
inline std::filesystem::path cmd_pretrain(const RunConfig& cfg) {
  cfg.validate();
  PipelineEnv env = build_env(cfg);
  const auto path = stage_path(cfg, 1);
  require_writable(cfg, path);

  cf::BprConfig bc;
  bc.d = cfg.graph_d;
  bc.layers = static_cast<int>(cfg.graph_layers);
  bc.lr = cfg.graph_lr;
  bc.epochs = static_cast<int>(cfg.graph_epochs);
  bc.neg_samples = static_cast<int>(cfg.graph_neg_samples);
  bc.l2 = cfg.graph_l2;
  bc.seed = cfg.seed;
  std::vector<TrainRecord> records;
  cf::GraphEmbeddings emb = cf::bpr_pretrain(env.train_graph, bc, &env.warnings, &records);

  io::Checkpoint ck;
  ck.stage = "stage1";
  ck.config_text = cfg.to_text();
  ck.put("graph.e_user", emb.e_user);
  ck.put("graph.e_item", emb.e_item);
  ck.put_scalar("meta.graph_layers", static_cast<float>(emb.layer_count));
  ck.save(path);
  write_train_log(std::filesystem::path(cfg.out_dir) / "stage1_log.jsonl", records);
  for (const auto& w : env.warnings) std::cerr << "[warn] " << w << "\n";
  return path;
}

inline std::filesystem::path cmd_align_items(const RunConfig& cfg) {
  cfg.validate();
  PipelineEnv env = build_env(cfg);
  const auto path = stage_path(cfg, 2);
  require_writable(cfg, path, /*resumable=*/true);

  io::Checkpoint ck1 = io::Checkpoint::load_expect(stage_path(cfg, 1), {"stage1"});
  nd::Tensor<float> e_user = ck1.get("graph.e_user").clone();
  nd::Tensor<float> e_item = ck1.get("graph.e_item").clone();

  lm::TransformerWeights<float> backbone;
  align::Projector<float> item_proj;
  gllm::GllmHead<float> head;
  int64_t from_epoch = 0;
  std::optional<io::Checkpoint> resume_ck;
  if (cfg.resume && std::filesystem::exists(path)) {
    resume_ck = io::Checkpoint::load_expect(path, {"stage2"});
    backbone = load_transformer(*resume_ck);
    item_proj.kind = align::ProjectorKind::Item;
    item_proj.w = resume_ck->get("proj_item.w").clone();
    item_proj.b = resume_ck->get("proj_item.b").clone();
    head.w = resume_ck->get("head.w").clone();
    head.b = resume_ck->get("head.b").clone();
    from_epoch = static_cast<int64_t>(resume_ck->get_scalar("meta.epoch"));
  } else {
    backbone = init_backbone(cfg, env.vocab.size());
    if (cfg.lm_pretrain) {
      std::vector<std::vector<int32_t>> docs;
      for (const auto& d : env.dataset.catalog.descriptions) docs.push_back(env.vocab.encode(d));
      pretrain_next_token(backbone, docs, static_cast<int>(cfg.lm_pretrain_epochs),
                          cfg.lm_pretrain_lr, splitmix64(cfg.seed ^ 0x1a2b3c));
    }
    Rng proj_rng = Rng::derive(cfg.seed, "proj-item");
    item_proj = align::Projector<float>::init(proj_rng, e_item.shape()[1], cfg.lm_d_model,
                                              align::ProjectorKind::Item, true);
    head = gllm::GllmHead<float>::zero_init(cfg.lm_d_model, env.dataset.graph.num_items, true);
  }

  io::Checkpoint ck;
  ck.config_text = cfg.to_text();
  std::vector<TrainRecord> records;
  if (cfg.no_item_align) {
    // Stage-2-skip marker: untrained projector and head pass straight
    // through to user-item alignment, which then trains both projectors.
    ck.stage = "stage2-skip";
  } else {
    item_proj.set_trainable(true);
    head.set_trainable(true);
    nd::Adam<float> opt({cfg.align_lr});
    opt.add_param("proj_item.w", item_proj.w);
    opt.add_param("proj_item.b", item_proj.b);
    opt.add_param("head.w", head.w);
    opt.add_param("head.b", head.b);
    if (resume_ck) restore_adam(*resume_ck, opt);
    align::train_stage2(e_item, env.dataset.catalog.descriptions, env.vocab, backbone, item_proj,
                        head, opt, cfg, from_epoch, cfg.align_stage2_epochs, records,
                        &env.warnings);
    ck.stage = "stage2";
    save_adam(ck, opt);
  }

  ck.put("graph.e_user", e_user);
  ck.put("graph.e_item", e_item);
  ck.put_scalar("meta.graph_layers", ck1.get_scalar("meta.graph_layers"));
  save_transformer(ck, backbone);
  ck.put("proj_item.w", item_proj.w);
  ck.put("proj_item.b", item_proj.b);
  ck.put("head.w", head.w);
  ck.put("head.b", head.b);
  ck.put_scalar("meta.epoch", static_cast<float>(cfg.no_item_align ? 0 : cfg.align_stage2_epochs));
  ck.save(path);
  write_train_log(std::filesystem::path(cfg.out_dir) / "stage2_log.jsonl", records,
                  /*append=*/from_epoch > 0);
  for (const auto& w : env.warnings) std::cerr << "[warn] " << w << "\n";
  return path;
}

inline std::filesystem::path cmd_align_users(const RunConfig& cfg) {
  cfg.validate();
  PipelineEnv env = build_env(cfg);
  const auto path = stage_path(cfg, 3);
  require_writable(cfg, path, /*resumable=*/true);

  io::Checkpoint ck2 =
      cfg.no_item_align
          ? io::Checkpoint::load_expect(stage_path(cfg, 2), {"stage2", "stage2-skip"})
          : io::Checkpoint::load_expect(stage_path(cfg, 2), {"stage2"});

  nd::Tensor<float> e_user = ck2.get("graph.e_user").clone();
  nd::Tensor<float> e_item = ck2.get("graph.e_item").clone();
  lm::TransformerWeights<float> backbone = load_transformer(ck2);
  align::Projector<float> item_proj;
  item_proj.kind = align::ProjectorKind::Item;
  item_proj.w = ck2.get("proj_item.w").clone();
  item_proj.b = ck2.get("proj_item.b").clone();
  gllm::GllmHead<float> head;
  head.w = ck2.get("head.w").clone();
  head.b = ck2.get("head.b").clone();

  align::Projector<float> user_proj;
  nd::Tensor<float> uid_table;
  int64_t from_epoch = 0;
  std::optional<io::Checkpoint> resume_ck;
  if (cfg.resume && std::filesystem::exists(path)) {
    resume_ck = io::Checkpoint::load_expect(path, {"stage3"});
    item_proj.w = resume_ck->get("proj_item.w").clone();
    item_proj.b = resume_ck->get("proj_item.b").clone();
    head.w = resume_ck->get("head.w").clone();
    head.b = resume_ck->get("head.b").clone();
    if (cfg.no_user_align) {
      uid_table = resume_ck->get("uid_table").clone();
    } else {
      user_proj.kind = align::ProjectorKind::User;
      user_proj.w = resume_ck->get("proj_user.w").clone();
      user_proj.b = resume_ck->get("proj_user.b").clone();
    }
    from_epoch = static_cast<int64_t>(resume_ck->get_scalar("meta.epoch"));
  } else if (cfg.no_user_align) {
    Rng rng = Rng::derive(cfg.seed, "uid-table");
    uid_table =
        nd::Tensor<float>::randn(rng, {env.dataset.graph.num_users, cfg.lm_d_model}, 0.1, true);
  } else {
    Rng rng = Rng::derive(cfg.seed, "proj-user");
    user_proj = align::Projector<float>::init(rng, e_user.shape()[1], cfg.lm_d_model,
                                              align::ProjectorKind::User, true);
  }

  const bool train_item_proj = cfg.no_item_align || !cfg.align_freeze_item_projector;
  item_proj.set_trainable(train_item_proj);
  head.set_trainable(true);

  std::vector<textgen::UserTextAssets> texts = load_user_texts(cfg, env, &env.warnings);
  align::UserAssets assets =
      align::build_user_assets(env.split.user_train, env.split.train_edges, env.train_edge_times,
                               env.dataset.has_timestamps, texts, env.vocab, cfg);

  nd::Adam<float> opt({cfg.align_lr});
  if (cfg.no_user_align) {
    uid_table.set_requires_grad(true);
    opt.add_param("uid_table", uid_table);
  } else {
    user_proj.set_trainable(true);
    opt.add_param("proj_user.w", user_proj.w);
    opt.add_param("proj_user.b", user_proj.b);
  }
  opt.add_param("head.w", head.w);
  opt.add_param("head.b", head.b);
  if (train_item_proj) {
    opt.add_param("proj_item.w", item_proj.w);
    opt.add_param("proj_item.b", item_proj.b);
  }
  if (resume_ck) restore_adam(*resume_ck, opt);

  std::vector<TrainRecord> records;
  align::train_stage3(env.split.user_train, assets, env.vocab, backbone, e_user,
                      cfg.no_user_align ? nullptr : &user_proj,
                      cfg.no_user_align ? &uid_table : nullptr, e_item, item_proj, head, opt,
                      cfg, from_epoch, cfg.align_stage3_epochs, records, &env.warnings);

  io::Checkpoint ck;
  ck.stage = "stage3";
  ck.config_text = cfg.to_text();
  ck.put("graph.e_user", e_user);
  ck.put("graph.e_item", e_item);
  ck.put_scalar("meta.graph_layers", ck2.get_scalar("meta.graph_layers"));
  save_transformer(ck, backbone);
  ck.put("proj_item.w", item_proj.w);
  ck.put("proj_item.b", item_proj.b);
  if (cfg.no_user_align) {
    ck.put("uid_table", uid_table);
  } else {
    ck.put("proj_user.w", user_proj.w);
    ck.put("proj_user.b", user_proj.b);
  }
  ck.put("head.w", head.w);
  ck.put("head.b", head.b);
  save_adam(ck, opt);
  ck.put_scalar("meta.epoch", static_cast<float>(cfg.align_stage3_epochs));
  ck.save(path);
  write_train_log(std::filesystem::path(cfg.out_dir) / "stage3_log.jsonl", records,
                  /*append=*/from_epoch > 0);
  for (const auto& w : env.warnings) std::cerr << "[warn] " << w << "\n";
  return path;
}

inline int64_t cmd_gen_profiles(const RunConfig& cfg) {
  cfg.validate();
  PipelineEnv env = build_env(cfg);
  std::filesystem::create_directories(cfg.out_dir);
  int64_t cache_hits = 0;
  std::vector<textgen::UserTextAssets> texts =
      load_user_texts(cfg, env, &env.warnings, &cache_hits);
  for (const auto& w : env.warnings) std::cerr << "[warn] " << w << "\n";
  if (cache_hits > 0)
    std::cerr << "[info] gen-profiles: reused " << cache_hits << " cached texts\n";
  return static_cast<int64_t>(texts.size());
}

// --------------------------------------------------------------------------
// evaluation
// --------------------------------------------------------------------------
struct ModelContext {
  nd::Tensor<float> e_user, e_item;
  lm::TransformerWeights<float> backbone;
  align::Projector<float> item_proj;
  std::optional<align::Projector<float>> user_proj;
  nd::Tensor<float> uid_table;
  gllm::GllmHead<float> head;
  nd::Tensor<float> v_users, v_items;  // projected once, frozen at inference
  align::UserAssets assets;
  int64_t graph_layers = 0;
};

inline ModelContext build_model_context(const RunConfig& cfg, const PipelineEnv& env,
                                        const io::Checkpoint& ck,
                                        std::vector<std::string>* warnings) {
  ModelContext ctx;
  ctx.e_user = ck.get("graph.e_user").clone();
  ctx.e_item = ck.get("graph.e_item").clone();
  ctx.backbone = load_transformer(ck);
  ctx.item_proj.kind = align::ProjectorKind::Item;
  ctx.item_proj.w = ck.get("proj_item.w").clone();
  ctx.item_proj.b = ck.get("proj_item.b").clone();
  ctx.head.w = ck.get("head.w").clone();
  ctx.head.b = ck.get("head.b").clone();
  ctx.graph_layers = static_cast<int64_t>(ck.get_scalar("meta.graph_layers"));
  ctx.v_items = align::project_items<float>(nullptr, ctx.e_item, ctx.item_proj);
  if (ck.has("uid_table")) {
    ctx.uid_table = ck.get("uid_table").clone();
    ctx.v_users = ctx.uid_table;
  } else {
    align::Projector<float> up;
    up.kind = align::ProjectorKind::User;
    up.w = ck.get("proj_user.w").clone();
    up.b = ck.get("proj_user.b").clone();
    ctx.user_proj = up;
    ctx.v_users = align::project_users<float>(nullptr, ctx.e_user, *ctx.user_proj);
  }
  std::vector<textgen::UserTextAssets> texts =
      load_user_texts(cfg, env, warnings);
  ctx.assets =
      align::build_user_assets(env.split.user_train, env.split.train_edges, env.train_edge_times,
                               env.dataset.has_timestamps, texts, env.vocab, cfg);
  return ctx;
}

inline lm::MixedSequence build_eval_template(const ModelContext& ctx, const RunConfig& cfg,
                                             const lm::Vocabulary& vocab, int32_t user) {
  align::UserTemplateInputs in;
  in.user = user;
  in.context_items = ctx.assets.context[static_cast<size_t>(user)];
  in.profile_tokens = ctx.assets.profile_tokens[static_cast<size_t>(user)];
  in.prediction_tokens = ctx.assets.prediction_tokens[static_cast<size_t>(user)];
  in.k = static_cast<int>(cfg.align_k);
  in.include_profile = !cfg.no_profile;
  in.include_prediction = !cfg.no_prediction;
  return align::build_user_item_template(in, vocab);
}

// Ranked list for one user under the requested inference discipline.
inline std::vector<int32_t> rank_for_user(const ModelContext& ctx, const RunConfig& cfg,
                                          const PipelineEnv& env, const std::string& mode,
                                          int32_t user, const std::vector<char>& excluded,
                                          int64_t k_rank,
                                          std::vector<std::string>* warnings = nullptr) {
  if (mode == "dot") {
    std::vector<int32_t> cands;
    const auto items = static_cast<int32_t>(env.dataset.graph.num_items);
    for (int32_t i = 0; i < items; ++i)
      if (!excluded[static_cast<size_t>(i)]) cands.push_back(i);
    std::vector<float> score(static_cast<size_t>(items), 0.f);
    for (int32_t i : cands) {
      float s = 0.f;
      for (int64_t j = 0; j < ctx.e_user.shape()[1]; ++j)
        s += ctx.e_user.at(user, j) * ctx.e_item.at(i, j);
      score[static_cast<size_t>(i)] = s;
    }
    std::stable_sort(cands.begin(), cands.end(), [&](int32_t a, int32_t b) {
      if (score[static_cast<size_t>(a)] != score[static_cast<size_t>(b)])
        return score[static_cast<size_t>(a)] > score[static_cast<size_t>(b)];
      return a < b;
    });
    if (static_cast<int64_t>(cands.size()) > k_rank) cands.resize(static_cast<size_t>(k_rank));
    return cands;
  }

  lm::MixedSequence seq = build_eval_template(ctx, cfg, env.vocab, user);
  lm::InjectionSources<float> sources;
  sources.user_rows = ctx.v_users;
  sources.item_rows = ctx.v_items;
  if (mode == "ar") {
    lm::MixedSequence prompt = align::truncate_after_first_answer(seq);
    return gllm::infer_autoregressive<float>(ctx.backbone, prompt, sources, ctx.head, k_rank,
                                             excluded, warnings);
  }
  nd::Tensor<float> hidden = lm::lm_forward<float>(nullptr, ctx.backbone, seq, sources);
  nd::Tensor<float> logits = gllm::compute_item_logits<float>(nullptr, hidden, ctx.head);
  nd::Tensor<float> z_answers = nd::gather_rows<float>(nullptr, logits, seq.answer_positions);
  if (mode == "firstk") return gllm::infer_first_k(z_answers, k_rank, excluded, warnings);
  if (mode == "fl") return gllm::infer_first_logit(z_answers, k_rank, excluded, warnings);
  throw ConfigError("evaluate: unknown inference mode '" + mode + "'");
}

inline std::vector<eval::MetricReport> evaluate_modes(const RunConfig& cfg,
                                                      const std::vector<std::string>& modes) {
  cfg.validate();
  PipelineEnv env = build_env(cfg);
  io::Checkpoint ck = io::Checkpoint::load_expect(stage_path(cfg, 3), {"stage3"});
  ModelContext ctx = build_model_context(cfg, env, ck, &env.warnings);
  const std::vector<int> cutoffs = cfg.cutoffs();
  const int64_t k_rank = *std::max_element(cutoffs.begin(), cutoffs.end());

  std::vector<eval::MetricReport> reports;
  for (const std::string& mode : modes) {
    const std::string tag = mode == "dot" ? "dot-baseline" : mode;
    auto ranker = [&](int32_t user, const std::vector<char>& excluded) {
      return rank_for_user(ctx, cfg, env, mode, user, excluded, k_rank, &env.warnings);
    };
    eval::MetricReport report =
        eval::evaluate(ranker, env.split, env.dataset.graph, cutoffs, tag);
    for (const auto& [k, v] : report.precision)
      if (v < 0.0 || v > 1.0) throw ContractError("evaluate: P@k out of bounds");
    for (const auto& [k, v] : report.ndcg)
      if (v < 0.0 || v > 1.0) throw ContractError("evaluate: N@k out of bounds");
    reports.push_back(std::move(report));
  }
  for (const auto& w : env.warnings) std::cerr << "[warn] " << w << "\n";
  return reports;
}

inline std::vector<eval::MetricReport> cmd_evaluate(const RunConfig& cfg,
                                                    std::string* json_out = nullptr) {
  std::vector<std::string> modes;
  if (cfg.eval_mode == "all")
    modes = {"firstk", "fl", "ar", "dot"};
  else
    modes = {cfg.eval_mode};
  std::vector<eval::MetricReport> reports = evaluate_modes(cfg, modes);

  nlohmann::json j;
  if (reports.size() == 1) {
    j = reports[0].to_json();
  } else {
    j = nlohmann::json::array();
    for (const auto& r : reports) j.push_back(r.to_json());
  }
  const std::string text = j.dump(2);
  if (json_out) *json_out = text;
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream out(std::filesystem::path(cfg.out_dir) / "report.json");
  out << text << "\n";
  return reports;
}

// --------------------------------------------------------------------------
// ablation harness: {full, w/o IA, w/o UA, w/o PF, w/o PD} x {firstk, fl, ar}
// --------------------------------------------------------------------------
struct AblateCell {
  std::string variant;
  std::string mode;
  std::string checkpoint;
  eval::MetricReport report;
};

struct AblateTable {
  std::vector<AblateCell> cells;

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cells) {
      nlohmann::json j = c.report.to_json();
      j["variant"] = c.variant;
      j["checkpoint"] = c.checkpoint;
      arr.push_back(j);
    }
    return nlohmann::json{{"cells", arr}};
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "variant      mode           P@5      P@10     N@5      N@10\n";
    for (const auto& c : cells) {
      char line[160];
      std::snprintf(line, sizeof(line), "%-12s %-12s %8.4f %8.4f %8.4f %8.4f\n",
                    c.variant.c_str(), c.report.mode.c_str(), c.report.precision.at(5),
                    c.report.precision.at(10), c.report.ndcg.at(5), c.report.ndcg.at(10));
      os << line;
    }
    return os.str();
  }
};

inline AblateTable cmd_ablate(const RunConfig& base) {
  base.validate();
  struct Variant {
    const char* name;
    void (*apply)(RunConfig&);
  };
  const std::vector<Variant> variants = {
      {"full", [](RunConfig&) {}},
      {"no-ia", [](RunConfig& c) { c.no_item_align = true; }},
      {"no-ua", [](RunConfig& c) { c.no_user_align = true; }},
      {"no-pf", [](RunConfig& c) { c.no_profile = true; }},
      {"no-pd", [](RunConfig& c) { c.no_prediction = true; }},
  };
  AblateTable table;
  for (const Variant& v : variants) {
    RunConfig cfg = base;
    v.apply(cfg);
    cfg.out_dir = base.out_dir + "/ablate/" + v.name;
    cfg.force = true;
    cfg.resume = false;
    cmd_pretrain(cfg);
    cmd_align_items(cfg);
    const auto ck3 = cmd_align_users(cfg);
    std::vector<eval::MetricReport> reports = evaluate_modes(cfg, {"firstk", "fl", "ar"});
    for (auto& r : reports)
      table.cells.push_back({v.name, r.mode, ck3.string(), std::move(r)});
  }
  std::filesystem::create_directories(base.out_dir);
  std::ofstream out(std::filesystem::path(base.out_dir) / "ablation.json");
  out << table.to_json().dump(2) << "\n";
  return table;
}

}  // namespace glta
