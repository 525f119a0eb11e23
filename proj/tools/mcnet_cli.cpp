// mcnet: content-adaptive embedding simulation, detector training and
// evaluation in one binary. Exit codes: 0 ok, 1 runtime failure, 2 usage.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mcnet/configfile.hpp"
#include "mcnet/metrics.hpp"
#include "mcnet/model.hpp"
#include "mcnet/pipeline.hpp"
#include "mcnet/stego.hpp"
#include "mcnet/verify.hpp"

namespace fs = std::filesystem;
using namespace mcnet;

namespace {

struct Profile {
  ModelConfig model;
  TrainSchedule train, train_dn, finetune;
};

Profile profile_named(const std::string& name) {
  Profile p;
  if (name == "paper") {
    p.model = ModelConfig();
    p.train = TrainSchedule::mcnet_defaults();
    p.train_dn = TrainSchedule::dn_defaults();
    p.finetune = TrainSchedule::finetune_defaults();
  } else if (name == "desk") {
    p.model = ModelConfig::desk();
    p.train = TrainSchedule::mcnet_defaults();
    p.train.epochs = 50;
    p.train.batch_pairs = 8;
    p.train_dn = TrainSchedule::dn_defaults();
    p.train_dn.epochs = 30;
    p.train_dn.batch_pairs = 8;
    p.finetune = TrainSchedule::finetune_defaults();
    p.finetune.epochs = 50;
    p.finetune.select_from_epoch = 13;
  } else {
    throw UsageError("unknown profile '" + name + "' (desk or paper)");
  }
  return p;
}

void echo_schedule(const char* what, const TrainSchedule& s) {
  std::printf("%s: epochs=%d batch=%d images (%d cover + %d stego) lr=%g decay=x%g every %d epochs "
              "augment_p=%g seed=%llu%s\n",
              what, s.epochs, 2 * s.batch_pairs, s.batch_pairs, s.batch_pairs, s.lr,
              s.decay_factor, s.decay_every, s.augment_p,
              static_cast<unsigned long long>(s.seed), s.end_to_end ? " end_to_end" : "");
}

std::vector<std::string> list_images(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pgm" || ext == ".png") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

void write_eval_report(const fs::path& dir, const MetricsReport& report) {
  fs::create_directories(dir);
  std::ofstream rep(dir / "report.csv");
  rep << report.to_csv();
  std::ofstream rocf(dir / "roc.csv");
  rocf << roc_to_csv(report.roc);
}

// ---- subcommand bodies -------------------------------------------------------

int cmd_gen_synth(int n, int size, uint64_t seed, const std::string& out) {
  if (n < 1) throw UsageError("--n must be >= 1");
  if (size < 16) throw UsageError("--size must be >= 16");
  fs::create_directories(out);
  for (int i = 0; i < n; ++i) {
    ImageGray img = synth_image(size, seed, i, n);
    char name[64];
    std::snprintf(name, sizeof(name), "cover_%04d.pgm", i);
    write_pgm((fs::path(out) / name).string(), img);
  }
  std::printf("wrote %d synthetic covers (%dx%d, seed %llu) to %s\n", n, size, size,
              static_cast<unsigned long long>(seed), out.c_str());
  return 0;
}

int cmd_embed(const std::string& cover_dir, const std::string& model, double payload,
              uint64_t seed, uint64_t split_seed, const std::string& out,
              const std::string& noise_out, const std::string& noise_format,
              const std::string& source_tag) {
  if (payload < 0) throw UsageError("--payload must be >= 0");
  if (!cost_model_available(model)) {
    std::string names;
    for (const auto& n : cost_model_names()) names += " " + n;
    throw UsageError("cost model '" + model + "' is not available; registered:" + names);
  }
  auto covers = list_images(cover_dir);
  if (covers.empty()) throw UsageError("no .pgm/.png covers found in " + cover_dir);

  fs::path stego_dir = fs::path(out) / "stego";
  fs::create_directories(stego_dir);
  if (!noise_out.empty()) fs::create_directories(noise_out);

  std::ofstream log(fs::path(out) / "embed_log.csv");
  log << "cover,lambda,achieved_bpp\n";
  std::vector<SourceList> sources(1);
  sources[0].tag = source_tag;
  // independent per-image seeds make the image loop embarrassingly parallel
  struct Row {
    std::string name, stego_path;
    double lambda = 0, bpp = 0;
  };
  std::vector<Row> rows(covers.size());
  std::string first_error;
  std::mutex err_mutex;
  parallel_for(static_cast<int64_t>(covers.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      try {
        ImageGray cover = read_image(covers[static_cast<size_t>(i)]);
        EmbedResult r =
            embed(cover, model, payload, derive_seed(seed, {kSeedEmbed, static_cast<uint64_t>(i)}));
        Row& row = rows[static_cast<size_t>(i)];
        row.name = fs::path(covers[static_cast<size_t>(i)]).filename().string();
        row.stego_path = (stego_dir / row.name).string();
        row.lambda = r.lambda;
        row.bpp = r.achieved_bpp;
        write_image(row.stego_path, r.stego);
        if (!noise_out.empty()) {
          fs::path base = fs::path(noise_out) / fs::path(row.name).stem();
          if (noise_format == "txt") {
            std::ofstream nf(base.string() + "_noise.txt");
            nf << r.noise.to_text();
          } else {
            write_image(base.string() + "_noise." + noise_format, r.noise.to_visual());
          }
        }
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lk(err_mutex);
        if (first_error.empty())
          first_error = covers[static_cast<size_t>(i)] + ": " + e.what();
      }
    }
  });
  if (!first_error.empty()) throw RuntimeFail("embed failed: " + first_error);
  double bpp_sum = 0;
  for (size_t i = 0; i < rows.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g,%.9f", rows[i].lambda, rows[i].bpp);
    log << rows[i].name << "," << buf << "\n";
    bpp_sum += rows[i].bpp;
    sources[0].pairs.push_back({covers[i], rows[i].stego_path});
  }
  DatasetManifest manifest = split_dataset(sources, split_seed);
  manifest.payload_bpp = payload;
  manifest.algorithm = model;
  manifest.save((fs::path(out) / "manifest.csv").string());
  std::printf("embedded %zu images at %.6f bpp (mean achieved %.6f); manifest at %s\n",
              covers.size(), payload, bpp_sum / static_cast<double>(covers.size()),
              (fs::path(out) / "manifest.csv").c_str());
  return 0;
}

struct TrainArgs {
  std::string config_path, manifest_path, run_dir, profile = "desk";
  std::string dn_checkpoint, resume, source;
  int64_t seed = -1;  // overrides the schedule seed when >= 0
};

int cmd_train_dn(const TrainArgs& args) {
  Profile prof = profile_named(args.profile);
  ConfigFile cf =
      args.config_path.empty() ? ConfigFile::parse("") : ConfigFile::load(args.config_path);
  ModelConfig model = model_config_from(cf, prof.model);
  model.preprocessing = Preproc::learned_dn;
  TrainSchedule sched = schedule_from(cf, "train_dn", prof.train_dn);
  if (args.seed >= 0) sched.seed = static_cast<uint64_t>(args.seed);
  model.validate();

  DatasetManifest manifest = DatasetManifest::load(args.manifest_path);
  RunDir run(args.run_dir);
  run.write_text("config.toml",
                 model_section_text(model) + "\n" + schedule_section_text("train_dn", sched));
  manifest.save((run.root() / "manifest.csv").string());
  echo_schedule("denoiser schedule", sched);
  TrainResult r = train_denoiser(manifest, model, sched, run);
  std::printf("best val loss %.6g at epoch %d after %lld steps -> %s\n", r.best_val_metric,
              r.best_epoch, static_cast<long long>(r.steps), r.best_checkpoint.c_str());
  return 0;
}

int cmd_train(const TrainArgs& args) {
  Profile prof = profile_named(args.profile);
  ConfigFile cf =
      args.config_path.empty() ? ConfigFile::parse("") : ConfigFile::load(args.config_path);
  ModelConfig model = model_config_from(cf, prof.model);
  TrainSchedule sched = schedule_from(cf, "train", prof.train);
  if (args.seed >= 0) sched.seed = static_cast<uint64_t>(args.seed);
  model.validate();

  DatasetManifest manifest = DatasetManifest::load(args.manifest_path);
  RunDir run(args.run_dir);
  std::string provenance;
  if (!args.dn_checkpoint.empty()) provenance += "# dn_checkpoint = " + args.dn_checkpoint + "\n";
  if (!args.resume.empty()) provenance += "# resumed_from = " + args.resume + "\n";
  run.write_text("config.toml", provenance + model_section_text(model) + "\n" +
                                    schedule_section_text("train", sched));
  manifest.save((run.root() / "manifest.csv").string());
  echo_schedule("training schedule", sched);
  std::optional<std::string> dn =
      args.dn_checkpoint.empty() ? std::nullopt : std::make_optional(args.dn_checkpoint);
  std::optional<std::string> resume =
      args.resume.empty() ? std::nullopt : std::make_optional(args.resume);
  TrainResult r = train_mcnet(manifest, model, sched, dn, run, resume);
  std::printf("best val P_E %.6g at epoch %d after %lld steps -> %s\n", r.best_val_metric,
              r.best_epoch, static_cast<long long>(r.steps), r.best_checkpoint.c_str());
  return 0;
}

int cmd_finetune(const TrainArgs& args) {
  Profile prof = profile_named(args.profile);
  ConfigFile cf =
      args.config_path.empty() ? ConfigFile::parse("") : ConfigFile::load(args.config_path);
  TrainSchedule sched = schedule_from(cf, "finetune", prof.finetune);
  if (args.seed >= 0) sched.seed = static_cast<uint64_t>(args.seed);

  DatasetManifest manifest = DatasetManifest::load(args.manifest_path);
  RunDir run(args.run_dir);
  run.write_text("config.toml", "# transferred_from = " + args.source + "\n" +
                                    schedule_section_text("finetune", sched));
  manifest.save((run.root() / "manifest.csv").string());
  echo_schedule("finetune schedule", sched);
  TrainResult r = curriculum_finetune(args.source, manifest, sched, run);
  std::printf("epoch-0 val loss %.6g; best val P_E %.6g at epoch %d -> %s\n", r.epoch0_val_loss,
              r.best_val_metric, r.best_epoch, r.best_checkpoint.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest_path,
             const std::string& split, const std::string& out, int batch_pairs) {
  DatasetManifest manifest = DatasetManifest::load(manifest_path);
  MetricsReport report = evaluate_checkpoint(checkpoint, manifest, split_from(split), batch_pairs);
  write_eval_report(out, report);
  std::printf("split=%s  P_E=%.4f  AUC=%.4f  WAUC=%.4f  (%zu cover / %zu stego) -> %s\n",
              split.c_str(), report.pe, report.auc, report.wauc, report.n_cover, report.n_stego,
              out.c_str());
  return 0;
}

int cmd_ablate(const std::string& grid_path, const std::string& manifest_path,
               const std::string& run_dir, const std::string& profile,
               const std::string& dn_checkpoint) {
  ConfigFile cf = ConfigFile::load(grid_path);
  std::vector<GridAxis> axes = grid_axes(cf);
  if (axes.empty()) throw UsageError(grid_path + ": [grid] section is empty");
  Profile prof = profile_named(profile);
  ModelConfig base_model = model_config_from(cf, prof.model);
  TrainSchedule base_train = schedule_from(cf, "train", prof.train);
  TrainSchedule dn_sched = schedule_from(cf, "train_dn", prof.train_dn);
  DatasetManifest manifest = DatasetManifest::load(manifest_path);
  fs::create_directories(run_dir);

  size_t combos = 1;
  for (const auto& a : axes) combos *= a.values.size();
  std::ofstream table(fs::path(run_dir) / "ablate.csv");
  for (const auto& a : axes) table << a.key << ",";
  table << "pe,auc,wauc,best_epoch,steps\n";

  for (size_t k = 0; k < combos; ++k) {
    ModelConfig model = base_model;
    TrainSchedule sched = base_train;
    size_t rem = k;
    std::vector<std::string> chosen;
    for (const auto& a : axes) {
      const std::string& v = a.values[rem % a.values.size()];
      rem /= a.values.size();
      apply_override(model, sched, a.key, v);
      chosen.push_back(v);
    }
    model.validate();
    fs::path combo_dir = fs::path(run_dir) / ("combo_" + std::to_string(k));
    std::printf("[ablate %zu/%zu]", k + 1, combos);
    for (size_t i = 0; i < axes.size(); ++i) std::printf(" %s=%s", axes[i].key.c_str(), chosen[i].c_str());
    std::printf("\n");

    std::optional<std::string> dn;
    if (model.preprocessing == Preproc::learned_dn) {
      if (!dn_checkpoint.empty()) {
        dn = dn_checkpoint;
      } else {
        RunDir dn_run((combo_dir / "dn").string());
        dn = train_denoiser(manifest, model, dn_sched, dn_run).best_checkpoint;
      }
    }
    RunDir run((combo_dir / "train").string());
    TrainResult r = train_mcnet(manifest, model, sched, dn, run);
    MetricsReport rep = evaluate_checkpoint(r.best_checkpoint, manifest, Split::test,
                                            sched.batch_pairs);
    write_eval_report(combo_dir / "reports", rep);
    for (const auto& v : chosen) table << v << ",";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%d,%lld\n", rep.pe, rep.auc, rep.wauc,
                  r.best_epoch, static_cast<long long>(r.steps));
    table << buf;
    table.flush();
    std::printf("  -> P_E=%.4f AUC=%.4f WAUC=%.4f\n", rep.pe, rep.auc, rep.wauc);
  }
  std::printf("ablation table: %s\n", (fs::path(run_dir) / "ablate.csv").c_str());
  return 0;
}

int cmd_resize(const std::string& in_dir, const std::string& out_dir, int size) {
  auto files = list_images(in_dir);
  if (files.empty()) throw UsageError("no .pgm/.png images found in " + in_dir);
  fs::create_directories(out_dir);
  parallel_for(static_cast<int64_t>(files.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const std::string& f = files[static_cast<size_t>(i)];
      write_image((fs::path(out_dir) / fs::path(f).filename()).string(),
                  resize_square(read_image(f), size));
    }
  });
  std::printf("resized %zu images to %dx%d in %s\n", files.size(), size, size, out_dir.c_str());
  return 0;
}

int cmd_banks(const std::string& out) {
  fs::create_directories(out);
  for (const KernelBank& bank : {srm_bank(), kv_kernel(), gabor_bank()}) {
    std::string name = bank_source_name(bank.source) + ".txt";
    std::string text = bank.to_text();
    std::ofstream os(fs::path(out) / name);
    os << text;
    os.close();
    // import back and confirm bit-exactness
    std::ifstream is(fs::path(out) / name);
    std::string readback((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    KernelBank again = KernelBank::from_text(readback);
    for (size_t k = 0; k < bank.size(); ++k)
      for (int i = 0; i < 25; ++i)
        if (again.kernels[k][static_cast<size_t>(i)] != bank.kernels[k][static_cast<size_t>(i)])
          throw RuntimeFail("bank export round-trip failed for " + name);
    std::printf("wrote %s (%zu kernels, round-trip verified)\n",
                (fs::path(out) / name).c_str(), bank.size());
  }
  return 0;
}

int cmd_verify(bool quick) {
  auto checks = run_verification(quick);
  size_t passed = 0;
  for (const auto& c : checks) {
    if (c.pass) {
      std::printf("[ ok ] %-45s (%.2fs)\n", c.name.c_str(), c.seconds);
      ++passed;
    } else {
      std::printf("[FAIL] %-45s %s\n", c.name.c_str(), c.detail.c_str());
    }
  }
  std::printf("%zu/%zu checks passed\n", passed, checks.size());
  return passed == checks.size() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mcnet steganalysis laboratory"};
  app.require_subcommand(1);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic grayscale cover corpus");
  int gen_n = 0, gen_size = 64;
  uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("--n", gen_n, "number of covers")->required();
  gen->add_option("--size", gen_size, "image side length (>= 16)");
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  // embed
  auto* emb = app.add_subcommand("embed", "simulate content-adaptive embedding over a cover set");
  std::string emb_dir, emb_model = "inverse_variance", emb_out, emb_noise, emb_noise_fmt = "pgm",
              emb_tag = "covers";
  double emb_payload = 0.4;
  uint64_t emb_seed = 1;
  int64_t emb_split_seed = -1;
  emb->add_option("--cover-dir", emb_dir, "directory of .pgm/.png covers")->required();
  emb->add_option("--model", emb_model, "cost model id");
  emb->add_option("--payload", emb_payload, "payload in bits per pixel");
  emb->add_option("--seed", emb_seed, "embedding seed");
  emb->add_option("--split-seed", emb_split_seed, "manifest split seed (defaults to --seed)");
  emb->add_option("--out", emb_out, "output directory (stego/, manifest.csv, embed_log.csv)")
      ->required();
  emb->add_option("--noise-out", emb_noise, "also write stego-noise visualizations here");
  emb->add_option("--noise-format", emb_noise_fmt, "pgm|png|txt")
      ->check(CLI::IsMember({"pgm", "png", "txt"}));
  emb->add_option("--source-tag", emb_tag, "manifest source tag");

  // training commands share an argument block
  TrainArgs targs;
  auto add_train_common = [&](CLI::App* cmd, bool needs_manifest = true) {
    cmd->add_option("--config", targs.config_path, "TOML-style config file");
    if (needs_manifest)
      cmd->add_option("--manifest", targs.manifest_path, "dataset manifest CSV")->required();
    cmd->add_option("--run-dir", targs.run_dir, "run directory")->required();
    cmd->add_option("--profile", targs.profile, "desk|paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--seed", targs.seed, "schedule seed override");
  };
  auto* tdn = app.add_subcommand("train-dn", "train the denoiser subnetwork");
  add_train_common(tdn);
  auto* trn = app.add_subcommand("train", "train the detector");
  add_train_common(trn);
  trn->add_option("--dn-checkpoint", targs.dn_checkpoint,
                  "denoiser checkpoint (required for learned_dn split training)");
  trn->add_option("--resume", targs.resume, "resume from a last.bin checkpoint");
  auto* ftn = app.add_subcommand("finetune", "curriculum transfer to a new payload");
  add_train_common(ftn);
  ftn->add_option("--source", targs.source, "source checkpoint to transfer from")->required();

  // eval
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
  std::string ev_ckpt, ev_manifest, ev_split = "test", ev_out = "eval_report";
  int ev_batch = 10;
  evl->add_option("--checkpoint", ev_ckpt, "detector checkpoint")->required();
  evl->add_option("--manifest", ev_manifest, "dataset manifest CSV")->required();
  evl->add_option("--split", ev_split, "train|val|test|dn_train|dn_val");
  evl->add_option("--out", ev_out, "report directory (report.csv, roc.csv)");
  evl->add_option("--batch-pairs", ev_batch, "pairs per forward batch");

  // ablate
  auto* abl = app.add_subcommand("ablate", "run a config cross-product and tabulate metrics");
  std::string ab_grid, ab_manifest, ab_run, ab_profile = "desk", ab_dn;
  abl->add_option("--grid", ab_grid, "grid file with [grid] axes")->required();
  abl->add_option("--manifest", ab_manifest, "dataset manifest CSV")->required();
  abl->add_option("--run-dir", ab_run, "output directory")->required();
  abl->add_option("--profile", ab_profile, "desk|paper")->check(CLI::IsMember({"desk", "paper"}));
  abl->add_option("--dn-checkpoint", ab_dn, "shared denoiser checkpoint for learned_dn combos");

  // resize
  auto* rsz = app.add_subcommand("resize", "bicubic-resize a square corpus (antialiased)");
  std::string rs_in, rs_out;
  int rs_size = 256;
  rsz->add_option("--in-dir", rs_in, "input directory of square .pgm/.png images")->required();
  rsz->add_option("--out-dir", rs_out, "output directory")->required();
  rsz->add_option("--size", rs_size, "output side length");

  // banks
  auto* bnk = app.add_subcommand("banks", "export the SRM/KV/Gabor kernel banks as text");
  std::string bank_out;
  bnk->add_option("--out", bank_out, "output directory")->required();

  // verify
  auto* ver = app.add_subcommand("verify", "run the property/oracle verification suite");
  bool quick = false;
  ver->add_flag("--quick", quick, "reduced sample counts");

  int rc = 0;
  gen->callback([&] { rc = cmd_gen_synth(gen_n, gen_size, gen_seed, gen_out); });
  emb->callback([&] {
    rc = cmd_embed(emb_dir, emb_model, emb_payload, emb_seed,
                   emb_split_seed >= 0 ? static_cast<uint64_t>(emb_split_seed) : emb_seed, emb_out,
                   emb_noise, emb_noise_fmt, emb_tag);
  });
  tdn->callback([&] { rc = cmd_train_dn(targs); });
  trn->callback([&] { rc = cmd_train(targs); });
  ftn->callback([&] { rc = cmd_finetune(targs); });
  evl->callback([&] { rc = cmd_eval(ev_ckpt, ev_manifest, ev_split, ev_out, ev_batch); });
  abl->callback([&] { rc = cmd_ablate(ab_grid, ab_manifest, ab_run, ab_profile, ab_dn); });
  rsz->callback([&] { rc = cmd_resize(rs_in, rs_out, rs_size); });
  bnk->callback([&] { rc = cmd_banks(bank_out); });
  ver->callback([&] { rc = cmd_verify(quick); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return rc;
}
