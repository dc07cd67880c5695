#include "saas/harness/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace saas;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<long long> seed;
  std::optional<int> epochs;
  std::string data;
  std::string run;
};

void add_common(CLI::App* app, Common& c, bool needs_data = true) {
  app->add_option("--config", c.config, "config file (key = value lines)");
  app->add_option("--set", c.sets, "override, key=value (repeatable)");
  app->add_option("--seed", c.seed, "seed override");
  app->add_option("--epochs", c.epochs, "epoch override for this stage");
  if (needs_data) app->add_option("--data", c.data, "corpus directory written by gen-data")->required();
}

/// Defaults <- run dir config.txt (if any) <- --config <- --set <- --seed / --epochs.
RunConfig resolve(const Common& c, const fs::path& run, const std::vector<std::string>& epoch_keys) {
  RunConfig rc;
  if (!run.empty() && fs::exists(run / "config.txt")) rc.merge_file(run / "config.txt");
  if (!c.config.empty()) rc.merge_file(c.config);
  for (const auto& s : c.sets) rc.apply(s);
  if (c.seed) rc.set("seed", std::to_string(*c.seed));
  if (c.epochs) {
    for (const auto& k : epoch_keys) rc.set(k, std::to_string(*c.epochs));
  }
  return rc;
}

template <class F>
void with_precision(const RunConfig& rc, F&& f) {
  const std::string& p = rc.raw("precision");
  if (p == "float32") {
    f.template operator()<float>();
  } else if (p == "float64") {
    f.template operator()<double>();
  } else {
    throw ConfigError("precision must be float32 or float64, got " + p);
  }
}

void emit(const EvalReport& r, const fs::path& run, const std::string& stem) {
  std::cout << r.table();
  std::ofstream(run / (stem + ".txt")) << r.table();
  std::ofstream(run / (stem + ".jsonl")) << r.jsonl();
}

void print_epoch(const nlohmann::json& rec) { std::cerr << rec.dump() << "\n"; }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Writes a T x k float track under `name` into a container directory.
void write_tracks(const fs::path& out, const std::vector<std::pair<std::string, Matrix>>& tracks, const RunConfig& rc,
                  const std::string& kind) {
  Container c;
  for (const auto& [name, m] : tracks) c.add_matrix(name, m);
  c.metadata["kind"] = kind;
  c.metadata["config_hash"] = rc.hash();
  c.metadata["seed"] = std::to_string(rc.seed());
  save_container(out, c);
}

Matrix track_from(const fs::path& dir, const std::string& name) { return load_container(dir).matrix(name); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"saas: stylized talking-head motion in coefficient space"};
  app.require_subcommand(1);
  app.footer(RunConfig::usage());

  Common gen_c;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic labeled corpus");
  add_common(gen, gen_c, false);
  gen->add_option("--out", gen_out, "output corpus directory")->required();

  Common st_c, mo_c, po_c, tr_c;
  auto* train_style = app.add_subcommand("train-style", "train the style extractor");
  auto* train_motion = app.add_subcommand("train-motion", "train the motion stylizer (needs a trained style extractor)");
  auto* train_pose = app.add_subcommand("train-pose", "train the pose codebook and index predictor");
  auto* train_transfer = app.add_subcommand("train-transfer", "train video-driven style transfer");
  for (auto [sub, c] : {std::pair{train_style, &st_c}, {train_motion, &mo_c}, {train_pose, &po_c}, {train_transfer, &tr_c}}) {
    add_common(sub, *c);
    sub->add_option("--run", c->run, "run directory")->required();
  }

  Common in_c;
  int in_index = 0, in_style = 0;
  std::string in_split = "test", in_audio, in_style_clip, in_reference, in_out;
  auto* infer = app.add_subcommand("infer", "generate stylized expression (and pose) from audio and a style clip");
  add_common(infer, in_c, false);
  infer->add_option("--run", in_c.run, "trained run directory")->required();
  infer->add_option("--data", in_c.data, "corpus directory (clip selection mode)");
  infer->add_option("--split", in_split, "split for --index/--style-index");
  infer->add_option("--index", in_index, "clip supplying the audio and reference frame");
  infer->add_option("--style-index", in_style, "clip supplying the style");
  infer->add_option("--audio", in_audio, "container with an 'audio' T x d_a track (raw features)");
  infer->add_option("--style-clip", in_style_clip, "container with an 'expression' T x 64 track (raw)");
  infer->add_option("--reference", in_reference, "container with an 'expression' track whose first frame is the reference");
  infer->add_option("--out", in_out, "output container directory")->required();

  Common xf_c;
  int xf_index = 0, xf_style = 0;
  std::string xf_split = "test", xf_out;
  auto* transfer = app.add_subcommand("transfer", "restyle a recorded expression track and report lip preservation");
  add_common(transfer, xf_c);
  transfer->add_option("--run", xf_c.run, "trained run directory")->required();
  transfer->add_option("--split", xf_split, "split to draw clips from");
  transfer->add_option("--index", xf_index, "source clip");
  transfer->add_option("--style-index", xf_style, "clip supplying the target style");
  transfer->add_option("--out", xf_out, "output container directory")->required();

  Common ev_c;
  auto* eval = app.add_subcommand("eval", "evaluate every checkpoint in a run directory on the test split");
  add_common(eval, ev_c);
  eval->add_option("--run", ev_c.run, "run directory")->required();

  Common ab_c;
  std::string ab_axis, ab_values;
  int ab_seeds = 3;
  auto* ablate = app.add_subcommand("ablate", "ablation arms over seeds; prints the median comparison table");
  add_common(ablate, ab_c);
  ablate->add_option("--out", ab_c.run, "output directory")->required();
  ablate->add_option("--axis", ab_axis, "config key to sweep (default: the standard arm set)");
  ablate->add_option("--values", ab_values, "comma-separated values for --axis");
  ablate->add_option("--seeds", ab_seeds, "seeds per arm (seed, seed+1, ...)")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const RunConfig rc = resolve(gen_c, "", {});
      generate_corpus(corpus_config(rc), gen_out);
      rc.write(fs::path(gen_out) / "config.txt");
      std::cout << "corpus written to " << gen_out << "\n";
      return 0;
    }

    const auto train = [&](const Common& c, const std::vector<std::string>& keys, const std::string& stem, auto stage) {
      const fs::path run = c.run;
      fs::create_directories(run);
      const RunConfig rc = resolve(c, run, keys);
      rc.write(run / "config.txt");
      const Dataset ds = load_dataset(c.data);
      with_precision(rc, [&]<class S>() { emit(stage.template operator()<S>(rc, ds, run), run, stem); });
    };
    if (*train_style) {
      train(st_c, {"style_epochs"}, "style_report",
            []<class S>(const RunConfig& rc, const Dataset& ds, const fs::path& run) { return stage_train_style<S>(rc, ds, run, print_epoch); });
    } else if (*train_motion) {
      train(mo_c, {"motion_epochs"}, "motion_report",
            []<class S>(const RunConfig& rc, const Dataset& ds, const fs::path& run) { return stage_train_motion<S>(rc, ds, run, print_epoch); });
    } else if (*train_pose) {
      train(po_c, {"pose_codebook_epochs", "pose_epochs"}, "pose_report",
            []<class S>(const RunConfig& rc, const Dataset& ds, const fs::path& run) { return stage_train_pose<S>(rc, ds, run, print_epoch); });
    } else if (*train_transfer) {
      train(tr_c, {"transfer_epochs"}, "transfer_report",
            []<class S>(const RunConfig& rc, const Dataset& ds, const fs::path& run) { return stage_train_transfer<S>(rc, ds, run, print_epoch); });
    } else if (*eval) {
      const fs::path run = ev_c.run;
      const RunConfig rc = resolve(ev_c, run, {});
      const Dataset ds = load_dataset(ev_c.data);
      with_precision(rc, [&]<class S>() { emit(stage_eval<S>(rc, ds, run), run, "eval"); });
    } else if (*infer) {
      const fs::path run = in_c.run;
      const RunConfig rc = resolve(in_c, run, {});
      const bool files = !in_audio.empty();
      if (!files && in_c.data.empty()) throw ConfigError("infer needs --data (clip selection) or --audio/--style-clip/--reference");
      if (files && (in_style_clip.empty() || in_reference.empty())) throw ConfigError("--audio needs --style-clip and --reference");
      with_precision(rc, [&]<class S>() {
        // Models and normalization come from the checkpoints, so file mode needs no corpus.
        Dataset ds;
        const Container style_ckpt = load_container(run / "style");
        ds.expr = norm_from(style_ckpt, "expression");
        ds.pose = norm_from(style_ckpt, "pose");
        ds.audio = norm_from(style_ckpt, "audio");
        const int styles = static_cast<int>(style_ckpt.matrix("style.cls.b").cols());
        const int audio_dim = static_cast<int>(ds.audio.mean.cols());
        StyleExtractor<S> ex(style_config(rc, styles), rc.seed());
        ex.params().import_from(style_ckpt);
        MotionStylizer<S> model(motion_config(rc, styles, audio_dim), rc.seed());
        StyleDiscriminator<S> disc(rc.i("disc_hidden"), styles, 5, rc.seed());
        load_checkpoint<S>(run / "motion", {&model.params(), &disc.params()}, "motion");
        Matrix audio, style_clip, reference;
        if (files) {
          audio = normalize(track_from(in_audio, "audio"), ds.audio);
          style_clip = normalize(track_from(in_style_clip, "expression"), ds.expr);
          reference = normalize(track_from(in_reference, "expression"), ds.expr);
        } else {
          const ClipSet clips = load_split(in_c.data, in_split);
          if (in_index < 0 || in_style < 0 || in_index >= static_cast<int>(clips.size()) || in_style >= static_cast<int>(clips.size())) {
            throw ConfigError("clip index out of range for split " + in_split);
          }
          audio = normalize(clips[static_cast<std::size_t>(in_index)].audio, ds.audio);
          reference = normalize(clips[static_cast<std::size_t>(in_index)].expression, ds.expr);
          style_clip = normalize(clips[static_cast<std::size_t>(in_style)].expression, ds.expr);
        }
        const RowVectorT<S> s = ex.extract_style(style_clip.template cast<S>());
        const Matrix expr = model.generate(audio.template cast<S>(), reference.row(0).template cast<S>(), s).template cast<float>();
        std::vector<std::pair<std::string, Matrix>> tracks{{"expression", ds.raw_expression(expr)}};
        if (fs::exists(run / "pose" / "manifest.json")) {
          PoseGenerator<S> pose(pose_config(rc, audio_dim), rc.seed());
          load_checkpoint<S>(run / "pose", {&pose.codebook_params(), &pose.predictor_params()}, "pose");
          const Matrix p = pose.sample_poses(audio.template cast<S>(), s, rc.real("temperature"), rc.seed()).template cast<float>();
          tracks.emplace_back("pose", ds.raw_pose(p));
        }
        write_tracks(in_out, tracks, rc, "inference");
        std::cout << "predicted style of output: " << ex.predict_label(expr.template cast<S>()) << "\n";
      });
    } else if (*transfer) {
      const fs::path run = xf_c.run;
      const RunConfig rc = resolve(xf_c, run, {});
      const Dataset ds = load_dataset(xf_c.data);
      const ClipSet& clips = xf_split == "train" ? ds.train : xf_split == "val" ? ds.val : ds.test;
      if (xf_index < 0 || xf_style < 0 || xf_index >= static_cast<int>(clips.size()) || xf_style >= static_cast<int>(clips.size())) {
        throw ConfigError("clip index out of range for split " + xf_split);
      }
      with_precision(rc, [&]<class S>() {
        StyleExtractor<S> ex = load_style<S>(rc, ds, run);
        VideoTransfer<S> model(video_config(rc, ds.corpus.styles), rc.seed());
        StyleDiscriminator<S> disc(rc.i("disc_hidden"), ds.corpus.styles, 5, rc.seed() + 1);
        load_checkpoint<S>(run / "transfer", {&model.params(), &disc.params()}, "transfer");
        const Clip& src = clips[static_cast<std::size_t>(xf_index)];
        const Clip& sty = clips[static_cast<std::size_t>(xf_style)];
        const RowVectorT<S> s_t = ex.extract_style(sty.expression.template cast<S>());
        const Matrix out = model.transfer(src.expression.template cast<S>(), s_t).template cast<float>();
        write_tracks(xf_out, {{"expression", ds.raw_expression(out)}}, rc, "transfer");
        EvalReport r;
        r.scalars["lip_difference_error"] = lip_difference_error(src.expression, out, ds.basis_n);
        r.scalars["source_style"] = src.style;
        r.scalars["target_style"] = sty.style;
        r.scalars["predicted_style"] = ex.predict_label(out.template cast<S>());
        std::cout << r.table();
        std::ofstream(fs::path(xf_out) / "lip_report.jsonl") << r.jsonl();
      });
    } else if (*ablate) {
      const fs::path out = ab_c.run;
      fs::create_directories(out);
      const RunConfig rc = resolve(ab_c, "", {"motion_epochs"});
      rc.write(out / "config.txt");
      const Dataset ds = load_dataset(ab_c.data);
      const std::vector<ArmSpec> arms = ab_axis.empty() ? table3_arms() : axis_arms(ab_axis, split_list(ab_values));
      if (arms.empty()) throw ConfigError("--axis needs --values");
      std::vector<std::uint64_t> seeds;
      for (int k = 0; k < ab_seeds; ++k) seeds.push_back(rc.seed() + static_cast<std::uint64_t>(k));
      with_precision(rc, [&]<class S>() {
        std::ofstream log(out / "ablation.jsonl");
        const auto results = run_ablation<S>(rc, ds, arms, seeds, [&](const ArmResult& r) {
          const nlohmann::json rec{{"record", "arm"}, {"arm", r.arm}, {"seed", r.seed}, {"style_accuracy", r.style_accuracy},
                                   {"flmd_proxy", r.flmd}, {"mlmd_proxy", r.mlmd}};
          std::cerr << rec.dump() << "\n";
          log << rec.dump() << "\n" << std::flush;
        });
        const std::string table = arm_table(summarize_arms(arms, results));
        std::cout << table;
        std::ofstream(out / "ablation.txt") << table;
      });
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
