// stam: pose-sequence risk classification pipeline.
//
// Subcommands: synth | preprocess | featurize | train | predict | evaluate |
// explain. All stages are deterministic for a fixed seed and identical
// inputs. Exit codes: 0 ok, 2 missing file, 3 bad format/config, 4 sequence
// too short, 5 non-finite loss, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stam/stam.hpp"

namespace fs = std::filesystem;

namespace {

int exit_code_for(stam::Errc code) {
  switch (code) {
    case stam::Errc::file_not_found: return 2;
    case stam::Errc::format_error:
    case stam::Errc::malformed_input:
    case stam::Errc::config_invalid:
    case stam::Errc::empty_input:
    case stam::Errc::empty_sequence:
    case stam::Errc::empty_series:
    case stam::Errc::all_missing:
    case stam::Errc::single_class:
    case stam::Errc::length_mismatch:
    case stam::Errc::shape_mismatch: return 3;
    case stam::Errc::too_short: return 4;
    case stam::Errc::non_finite_loss: return 5;
    default: return 1;
  }
}

int report_error(const stam::Error& e) {
  nlohmann::ordered_json j;
  j["error"] = {{"type", stam::errc_name(e.code())}, {"message", e.what()}};
  std::cerr << j.dump() << std::endl;
  return exit_code_for(e.code());
}

std::string format_float(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Config file handling: one flat JSON object holding model and training
// fields; unknown keys are a hard error so experiment configs cannot rot.
// ---------------------------------------------------------------------------

void apply_config_file(const fs::path& path, stam::StamConfig& model, stam::TrainConfig& train) {
  std::ifstream in(path);
  if (!in.good()) stam::fail(stam::Errc::file_not_found, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    stam::fail(stam::Errc::config_invalid, "bad config JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) stam::fail(stam::Errc::config_invalid, "config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const auto& v = it.value();
      if (k == "clip_len") model.clip_len = v.get<int>();
      else if (k == "clip_overlap") model.clip_overlap = v.get<int>();
      else if (k == "channels") model.channels = v.get<std::array<int, 3>>();
      else if (k == "t_kernels") model.t_kernels = v.get<std::array<int, 3>>();
      else if (k == "t_strides") model.t_strides = v.get<std::array<int, 3>>();
      else if (k == "d_u") model.d_u = v.get<int>();
      else if (k == "d_h") model.d_h = v.get<int>();
      else if (k == "attention_mode")
        model.attention_mode = stam::attention_mode_from_name(v.get<std::string>());
      else if (k == "dropout") model.dropout = v.get<double>();
      else if (k == "input_channels") model.input_channels = v.get<int>();
      else if (k == "lr") train.lr = v.get<double>();
      else if (k == "weight_decay") train.weight_decay = v.get<double>();
      else if (k == "epochs") train.epochs = v.get<int>();
      else if (k == "batch_size") train.batch_size = v.get<int>();
      else if (k == "seed") train.seed = v.get<std::uint64_t>();
      else if (k == "val_ratio") train.val_ratio = v.get<double>();
      else if (k == "subseq_window") train.subseq_window = v.get<int>();
      else if (k == "subseq_overlap") train.subseq_overlap = v.get<int>();
      else if (k == "subseq_max_count") train.subseq_max_count = v.get<int>();
      else if (k == "threshold") train.threshold = v.get<double>();
      else if (k == "pos_weight") train.pos_weight = v.get<double>();
      else if (k == "threads") train.threads = v.get<int>();
      else
        stam::fail(stam::Errc::config_invalid, "unknown config key \"" + k + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    stam::fail(stam::Errc::config_invalid, "bad config value: " + std::string(e.what()));
  }
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) stam::fail(stam::Errc::file_not_found, p.string() + " does not exist");
}

nlohmann::ordered_json predict_json(const std::string& id, const stam::PerVideoResult& r) {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["probability"] = r.score;
  j["label"] = r.pred_label;
  j["subsequences"] = r.subsequence_probs;
  return j;
}

void write_attention_csv(const stam::AttentionMap& map, std::ostream& out) {
  const int m = map.normalized.dim(0), k = map.normalized.dim(1);
  for (int j = 0; j < m; ++j) {
    for (int ki = 0; ki < k; ++ki) {
      if (ki) out << ',';
      out << format_float(map.normalized[static_cast<std::int64_t>(j) * k + ki]);
    }
    out << '\n';
  }
}

nlohmann::ordered_json attention_sidecar(const stam::AttentionMap& map, const std::string& id) {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["alpha"] = map.alpha;
  auto& beta = j["beta"] = nlohmann::ordered_json::array();
  const int k = map.num_clips;
  const int m = static_cast<int>(map.beta.size()) / std::max(1, k);
  for (int ki = 0; ki < k; ++ki) {
    std::vector<double> row(map.beta.begin() + static_cast<std::ptrdiff_t>(ki) * m,
                            map.beta.begin() + static_cast<std::ptrdiff_t>(ki + 1) * m);
    beta.push_back(row);
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-sequence movement classification with joint/clip attention"};
  app.require_subcommand(1);

  stam::StamConfig model_cfg;
  stam::TrainConfig train_cfg;
  std::string config_path;

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic keypoint corpus");
  stam::SynthConfig synth_cfg;
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--n-pos", synth_cfg.n_pos, "Positive (burst-carrying) videos")
      ->capture_default_str();
  synth->add_option("--n-neg", synth_cfg.n_neg, "Negative videos")->capture_default_str();
  synth->add_option("--frames", synth_cfg.frames, "Frames per video")->capture_default_str();
  synth->add_option("--fps", synth_cfg.fps, "Frame rate")->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed, "Generator seed")
      ->envname("STAM_SEED")
      ->capture_default_str();
  synth->add_option("--burst-joints", synth_cfg.burst_joints, "Burst joints per positive video")
      ->capture_default_str();
  synth->add_option("--burst-amplitude", synth_cfg.burst_amplitude,
                    "Burst amplitude in trunk units")
      ->capture_default_str();
  synth->add_option("--noise-sigma", synth_cfg.noise_sigma, "Keypoint jitter sigma")
      ->capture_default_str();
  synth->add_option("--drift-amplitude", synth_cfg.drift_amplitude, "Whole-body drift amplitude")
      ->capture_default_str();
  synth->add_option("--missing-prob", synth_cfg.missing_prob, "Per-joint missing probability")
      ->capture_default_str();

  // ---- preprocess ----
  auto* preprocess = app.add_subcommand("preprocess", "Clean and normalize raw keypoints");
  std::string pre_in, pre_out;
  double pre_fps = 30.0;
  stam::PreprocessOptions pre_opt;
  float pre_conf = stam::kDefaultConfidenceThreshold;
  preprocess->add_option("--in", pre_in, "Input keypoint JSONL")->required();
  preprocess->add_option("--out", pre_out, "Output sequence file")->required();
  preprocess->add_option("--fps", pre_fps, "Frame rate of the input")->capture_default_str();
  preprocess->add_option("--median-window", pre_opt.median_window_seconds,
                         "Rolling median window (seconds)")
      ->capture_default_str();
  preprocess->add_option("--mean-window", pre_opt.mean_window_seconds,
                         "Rolling mean window (seconds)")
      ->capture_default_str();
  preprocess->add_option("--confidence-threshold", pre_conf,
                         "Joints below this confidence count as missing")
      ->capture_default_str();

  // ---- featurize ----
  auto* featurize = app.add_subcommand("featurize", "Compute 7-channel motion features");
  std::string feat_in, feat_out;
  featurize->add_option("--in", feat_in, "Input coordinate sequence (2 channels)")->required();
  featurize->add_option("--out", feat_out, "Output feature sequence (7 channels)")->required();

  // ---- train ----
  auto* train = app.add_subcommand("train", "Train on a labeled data directory");
  std::string train_data, train_out, train_loss_csv;
  std::string attention_mode_str = "both";
  train->add_option("--data", train_data, "Directory with sequences and labels.json")->required();
  train->add_option("--out", train_out, "Output checkpoint path")->required();
  train->add_option("--loss-csv", train_loss_csv,
                    "Loss history CSV path (default: <out>.loss.csv)");
  train->add_option("--config", config_path, "JSON config file (flat model + training fields)");
  train->add_option("--seed", train_cfg.seed, "Training seed")
      ->envname("STAM_SEED")
      ->capture_default_str();
  train->add_option("--lr", train_cfg.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--weight-decay", train_cfg.weight_decay, "L2 weight decay")
      ->capture_default_str();
  train->add_option("--epochs", train_cfg.epochs, "Training epochs")->capture_default_str();
  train->add_option("--batch-size", train_cfg.batch_size, "Batch size")->capture_default_str();
  train->add_option("--val-ratio", train_cfg.val_ratio, "Validation split ratio")
      ->capture_default_str();
  train->add_option("--subseq-window", train_cfg.subseq_window, "Sub-sequence window (frames)")
      ->capture_default_str();
  train->add_option("--subseq-overlap", train_cfg.subseq_overlap, "Sub-sequence overlap (frames)")
      ->capture_default_str();
  train->add_option("--subseq-max-count", train_cfg.subseq_max_count,
                    "Max sub-sequences per video (0 = unlimited)")
      ->capture_default_str();
  train->add_option("--pos-weight", train_cfg.pos_weight, "Positive-class loss weight")
      ->capture_default_str();
  train->add_option("--threads", train_cfg.threads, "Worker threads")->capture_default_str();
  train->add_option("--clip-len", model_cfg.clip_len, "Clip length (frames)")
      ->capture_default_str();
  train->add_option("--clip-overlap", model_cfg.clip_overlap, "Clip overlap (frames)")
      ->capture_default_str();
  train->add_option("--dropout", model_cfg.dropout, "Dropout rate")->capture_default_str();
  train->add_option("--attention-mode", attention_mode_str,
                    "Attention mode: none|spatial|temporal|both")
      ->capture_default_str();

  // ---- predict ----
  auto* predict = app.add_subcommand("predict", "Score one feature sequence with a checkpoint");
  std::string pred_ckpt, pred_in, pred_out;
  predict->add_option("--ckpt", pred_ckpt, "Checkpoint path")->required();
  predict->add_option("--in", pred_in, "Feature sequence file (7 channels)")->required();
  predict->add_option("--out", pred_out, "Output JSON path (default: stdout)");
  predict->add_option("--threshold", train_cfg.threshold, "Positive decision threshold")
      ->capture_default_str();
  predict->add_option("--subseq-window", train_cfg.subseq_window, "Sub-sequence window (frames)")
      ->capture_default_str();
  predict->add_option("--subseq-overlap", train_cfg.subseq_overlap, "Sub-sequence overlap (frames)")
      ->capture_default_str();
  predict->add_option("--subseq-max-count", train_cfg.subseq_max_count,
                      "Max sub-sequences per video (0 = unlimited)")
      ->capture_default_str();
  predict->add_option("--threads", train_cfg.threads, "Worker threads")->capture_default_str();

  // ---- evaluate ----
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a labeled directory");
  std::string eval_ckpt, eval_data, eval_out = "metrics.json";
  evaluate->add_option("--ckpt", eval_ckpt, "Checkpoint path")->required();
  evaluate->add_option("--data", eval_data, "Directory with sequences and labels.json")
      ->required();
  evaluate->add_option("--out", eval_out, "Metrics JSON output path")->capture_default_str();
  evaluate->add_option("--threshold", train_cfg.threshold, "Positive decision threshold")
      ->capture_default_str();
  evaluate->add_option("--subseq-window", train_cfg.subseq_window, "Sub-sequence window (frames)")
      ->capture_default_str();
  evaluate->add_option("--subseq-overlap", train_cfg.subseq_overlap,
                       "Sub-sequence overlap (frames)")
      ->capture_default_str();
  evaluate->add_option("--subseq-max-count", train_cfg.subseq_max_count,
                       "Max sub-sequences per video (0 = unlimited)")
      ->capture_default_str();
  evaluate->add_option("--threads", train_cfg.threads, "Worker threads")->capture_default_str();

  // ---- explain ----
  auto* explain = app.add_subcommand("explain", "Export the joint x clip attention map");
  std::string exp_ckpt, exp_in, exp_out, exp_json;
  explain->add_option("--ckpt", exp_ckpt, "Checkpoint path")->required();
  explain->add_option("--in", exp_in, "Feature sequence file (7 channels)")->required();
  explain->add_option("--out", exp_out, "Normalized attention CSV path")->required();
  explain->add_option("--json", exp_json, "Raw alpha/beta sidecar path (default: <out>.json)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      auto videos = stam::generate_synthetic_dataset(synth_cfg);
      stam::write_synthetic_dataset(videos, synth_out);
      std::cout << "wrote " << videos.size() << " videos (" << synth_cfg.n_pos << " positive, "
                << synth_cfg.n_neg << " negative) to " << synth_out << std::endl;
      return 0;
    }

    if (*preprocess) {
      require_file(pre_in);
      auto raw = stam::parse_pose_file(pre_in, pre_conf, static_cast<float>(pre_fps));
      auto clean = stam::preprocess_pose(raw, stam::default_joint_layout(), pre_opt);
      stam::save_sequence(stam::to_sequence_tensor(clean), fs::path(pre_out));
      std::cout << "preprocessed " << raw.length() << " frames -> " << pre_out << std::endl;
      return 0;
    }

    if (*featurize) {
      require_file(feat_in);
      auto clean = stam::load_sequence(fs::path(feat_in));
      auto features = stam::compute_motion_features(clean);
      stam::save_sequence(features, fs::path(feat_out));
      std::cout << "featurized " << features.frames << " frames -> " << feat_out << std::endl;
      return 0;
    }

    if (*train) {
      // Config file first, then explicit flags override its values.
      if (!config_path.empty()) {
        stam::StamConfig file_model = model_cfg;
        stam::TrainConfig file_train = train_cfg;
        apply_config_file(config_path, file_model, file_train);
        auto keep = [&](const std::string& flag) { return train->count(flag) > 0; };
        if (keep("--seed")) file_train.seed = train_cfg.seed;
        if (keep("--lr")) file_train.lr = train_cfg.lr;
        if (keep("--weight-decay")) file_train.weight_decay = train_cfg.weight_decay;
        if (keep("--epochs")) file_train.epochs = train_cfg.epochs;
        if (keep("--batch-size")) file_train.batch_size = train_cfg.batch_size;
        if (keep("--val-ratio")) file_train.val_ratio = train_cfg.val_ratio;
        if (keep("--subseq-window")) file_train.subseq_window = train_cfg.subseq_window;
        if (keep("--subseq-overlap")) file_train.subseq_overlap = train_cfg.subseq_overlap;
        if (keep("--subseq-max-count")) file_train.subseq_max_count = train_cfg.subseq_max_count;
        if (keep("--pos-weight")) file_train.pos_weight = train_cfg.pos_weight;
        if (keep("--threads")) file_train.threads = train_cfg.threads;
        if (keep("--clip-len")) file_model.clip_len = model_cfg.clip_len;
        if (keep("--clip-overlap")) file_model.clip_overlap = model_cfg.clip_overlap;
        if (keep("--dropout")) file_model.dropout = model_cfg.dropout;
        if (keep("--attention-mode"))
          file_model.attention_mode = stam::attention_mode_from_name(attention_mode_str);
        model_cfg = file_model;
        train_cfg = file_train;
      } else if (train->count("--attention-mode") > 0) {
        model_cfg.attention_mode = stam::attention_mode_from_name(attention_mode_str);
      }
      model_cfg.validate();
      train_cfg.validate();

      auto videos = stam::load_directory(train_data);
      auto result = stam::run_training_pipeline(videos, train_cfg, model_cfg,
                                                [](const stam::EpochLog& log) {
        std::cout << "epoch " << log.epoch << " loss " << format_float(log.train_loss);
        if (log.val_auc >= 0.0) std::cout << " val_auc " << format_float(log.val_auc);
        std::cout << std::endl;
        return true;
      });
      stam::save_checkpoint(train_out, result.train_result.best_params, model_cfg);

      const std::string csv_path = train_loss_csv.empty() ? train_out + ".loss.csv" : train_loss_csv;
      std::ofstream csv(csv_path);
      csv << "epoch,train_loss,val_auc\n";
      for (const auto& log : result.train_result.history) {
        csv << log.epoch << ',' << format_float(log.train_loss) << ',';
        if (log.val_auc >= 0.0) csv << format_float(log.val_auc);
        csv << '\n';
      }
      std::cout << "saved checkpoint to " << train_out << " (best epoch "
                << result.train_result.best_epoch << ", val AUC "
                << format_float(result.train_result.best_val_auc) << ")" << std::endl;
      return 0;
    }

    if (*predict) {
      require_file(pred_ckpt);
      require_file(pred_in);
      auto ckpt = stam::load_checkpoint(pred_ckpt);
      auto seq = stam::load_sequence(fs::path(pred_in));
      const auto graph = stam::PoseGraph<float>::build();
      stam::LabeledSequence item;
      item.seq = std::move(seq);
      item.id = fs::path(pred_in).stem().string();
      auto result = stam::predict_video_voted(item, ckpt.params, ckpt.config, graph.normalized,
                                              train_cfg.subseq_window, train_cfg.subseq_overlap,
                                              train_cfg.subseq_max_count, train_cfg.threshold,
                                              train_cfg.threads);
      const auto j = predict_json(item.id, result);
      if (pred_out.empty()) {
        std::cout << j.dump(2) << std::endl;
      } else {
        std::ofstream out(pred_out);
        out << j.dump(2) << '\n';
        std::cout << "wrote " << pred_out << std::endl;
      }
      return 0;
    }

    if (*evaluate) {
      require_file(eval_ckpt);
      auto ckpt = stam::load_checkpoint(eval_ckpt);
      auto videos = stam::load_directory(eval_data);
      const auto graph = stam::PoseGraph<float>::build();
      auto report = stam::evaluate_videos(videos, ckpt.params, ckpt.config, graph.normalized,
                                          train_cfg);
      std::ofstream out(eval_out);
      out << stam::eval_report_to_json(report).dump(2) << '\n';
      std::cout << "roc_auc " << format_float(report.roc_auc) << " -> " << eval_out << std::endl;
      return 0;
    }

    if (*explain) {
      require_file(exp_ckpt);
      require_file(exp_in);
      auto ckpt = stam::load_checkpoint(exp_ckpt);
      auto seq = stam::load_sequence(fs::path(exp_in));
      const auto graph = stam::PoseGraph<float>::build();
      auto map = stam::explain(seq, ckpt.params, ckpt.config, graph.normalized);
      std::ofstream out(exp_out);
      write_attention_csv(map, out);
      const std::string sidecar = exp_json.empty() ? exp_out + ".json" : exp_json;
      std::ofstream jout(sidecar);
      jout << attention_sidecar(map, fs::path(exp_in).stem().string()).dump(2) << '\n';
      std::cout << "wrote " << exp_out << " and " << sidecar << std::endl;
      return 0;
    }
  } catch (const stam::Error& e) {
    return report_error(e);
  } catch (const std::exception& e) {
    nlohmann::ordered_json j;
    j["error"] = {{"type", "Internal"}, {"message", e.what()}};
    std::cerr << j.dump() << std::endl;
    return 1;
  }
  return 0;
}
