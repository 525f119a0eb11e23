#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "mcnet/pipeline.hpp"
#include "mcnet/stego.hpp"

using namespace mcnet;
namespace fs = std::filesystem;

namespace {

std::vector<SourceList> fake_sources(size_t n0, size_t n1 = 0) {
  std::vector<SourceList> out;
  SourceList a{"srcA", {}};
  for (size_t i = 0; i < n0; ++i)
    a.pairs.push_back({"a_cover_" + std::to_string(i), "a_stego_" + std::to_string(i)});
  out.push_back(std::move(a));
  if (n1) {
    SourceList b{"srcB", {}};
    for (size_t i = 0; i < n1; ++i)
      b.pairs.push_back({"b_cover_" + std::to_string(i), "b_stego_" + std::to_string(i)});
    out.push_back(std::move(b));
  }
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// writes a small embedded corpus and returns its manifest
DatasetManifest make_corpus(const fs::path& dir, int n, int size, double payload, uint64_t seed) {
  std::vector<SourceList> sources(1);
  sources[0].tag = "synth";
  for (int i = 0; i < n; ++i) {
    ImageGray cover = synth_image(size, seed, i, n);
    EmbedResult er = embed(cover, "inverse_variance", payload, derive_seed(seed, {kSeedEmbed, static_cast<uint64_t>(i)}));
    std::string cpath = (dir / ("cover_" + std::to_string(i) + ".pgm")).string();
    std::string spath = (dir / ("stego_" + std::to_string(i) + ".pgm")).string();
    write_pgm(cpath, cover);
    write_pgm(spath, er.stego);
    sources[0].pairs.push_back({cpath, spath});
  }
  DatasetManifest m = split_dataset(sources, seed);
  m.payload_bpp = payload;
  m.algorithm = "inverse_variance";
  return m;
}

ModelConfig smoke_config() {
  ModelConfig c;
  c.preprocessing = Preproc::srm;
  c.input_size = 32;
  c.branch_width = 4;
  c.head_channels = 32;
  c.depth = 3;
  c.kernel_set = {1, 3};
  return c;
}

}  // namespace

TEST_CASE("split_dataset reproduces the full-scale counts") {
  DatasetManifest m = split_dataset(fake_sources(10000, 10000), 42);
  size_t pool = m.count(Split::train) + m.count(Split::dn_train) + m.count(Split::dn_val);
  CHECK(pool == 14000);
  CHECK(m.count(Split::val) == 1000);
  CHECK(m.count(Split::test) == 5000);
  CHECK(m.count(Split::dn_train) == 1600);
  CHECK(m.count(Split::dn_val) == 400);
  CHECK(m.count(Split::train) == 12000);  // classifier training set
}

TEST_CASE("split_dataset: desk corpus keeps the 40/10/50 ratios of the first source") {
  DatasetManifest m = split_dataset(fake_sources(100), 7);
  size_t pool = m.count(Split::train) + m.count(Split::dn_train) + m.count(Split::dn_val);
  CHECK(pool == 40);
  CHECK(m.count(Split::val) == 10);
  CHECK(m.count(Split::test) == 50);
}

TEST_CASE("split_dataset determinism and disjointness over seeds") {
  DatasetManifest a = split_dataset(fake_sources(80, 30), 11);
  DatasetManifest b = split_dataset(fake_sources(80, 30), 11);
  REQUIRE(a.entries.size() == b.entries.size());
  for (size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].cover_path == b.entries[i].cover_path);
    CHECK(a.entries[i].split == b.entries[i].split);
  }

  for (uint64_t seed = 0; seed < 12; ++seed) {
    DatasetManifest m = split_dataset(fake_sources(60, 25), seed);
    std::set<std::string> seen;
    for (const auto& e : m.entries) {
      CHECK(seen.insert(e.cover_path).second);  // nothing appears twice anywhere
    }
    CHECK(m.entries.size() == 85);
  }
}

TEST_CASE("split_dataset rejects corpora too small to honor the ratios") {
  CHECK_THROWS_AS(split_dataset(fake_sources(8), 1), RuntimeFail);
  CHECK_THROWS_AS(split_dataset({}, 1), RuntimeFail);
}

TEST_CASE("manifest csv round-trip") {
  DatasetManifest m = split_dataset(fake_sources(40), 3);
  m.payload_bpp = 0.4;
  m.algorithm = "inverse_variance";
  DatasetManifest back = DatasetManifest::from_csv(m.to_csv());
  CHECK(back.seed == m.seed);
  CHECK(back.payload_bpp == m.payload_bpp);
  CHECK(back.algorithm == m.algorithm);
  REQUIRE(back.entries.size() == m.entries.size());
  for (size_t i = 0; i < m.entries.size(); ++i) {
    CHECK(back.entries[i].cover_path == m.entries[i].cover_path);
    CHECK(back.entries[i].split == m.entries[i].split);
  }
  CHECK_THROWS_AS(DatasetManifest::from_csv("bogus,header\n"), RuntimeFail);
}

TEST_CASE("synth corpus: deterministic, in range, variance spread >= 10x") {
  auto a = synth_corpus(16, 32, 5);
  auto b = synth_corpus(16, 32, 5);
  REQUIRE(a.size() == 16);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].pixels == b[i].pixels);

  double vmin = 1e30, vmax = 0;
  for (const auto& img : a) {
    double mean = 0, sq = 0;
    for (uint8_t p : img.pixels) mean += p;
    mean /= static_cast<double>(img.size());
    for (uint8_t p : img.pixels) sq += (p - mean) * (p - mean);
    double var = sq / static_cast<double>(img.size());
    vmin = std::min(vmin, var);
    vmax = std::max(vmax, var);
  }
  CHECK(vmax / vmin >= 10.0);
}

TEST_CASE("resize: constant preserved, checkerboard averages to mid-gray, size contract") {
  ImageGray flat(512, 512, 77);
  ImageGray r = resize_to_256(flat);
  CHECK(r.width == 256);
  CHECK(r.height == 256);
  for (uint8_t p : r.pixels) CHECK(p == 77);

  ImageGray checker(512, 512);
  for (int y = 0; y < 512; ++y)
    for (int x = 0; x < 512; ++x) checker.at(y, x) = ((x / 2 + y / 2) % 2) ? 255 : 0;
  ImageGray down = resize_to_256(checker);
  double mean = 0;
  for (uint8_t p : down.pixels) mean += p;
  mean /= static_cast<double>(down.size());
  CHECK(mean > 126.0);
  CHECK(mean < 130.0);

  ImageGray rect(100, 50);
  CHECK_THROWS_AS(resize_to_256(rect), RuntimeFail);
}

TEST_CASE("augment: p=0 identity; pair residual transforms exactly") {
  Rng rng(3);
  int size = 16;
  std::vector<float> cover(256), delta(256);
  for (auto& v : cover) v = static_cast<float>(rng.below(256));
  for (auto& v : delta) v = static_cast<float>(static_cast<int>(rng.below(3)) - 1);
  std::vector<float> stego(256);
  for (int i = 0; i < 256; ++i) stego[static_cast<size_t>(i)] = cover[static_cast<size_t>(i)] + delta[static_cast<size_t>(i)];

  Rng zero_rng(9);
  AugmentDraw none = draw_augment(0.0, zero_rng);
  CHECK(!none.rot90);
  CHECK(!none.hflip);
  CHECK(!none.vflip);

  AugmentDraw d{true, false, true};
  std::vector<float> c2 = cover, s2 = stego, d2 = delta;
  apply_augment(c2, size, d);
  apply_augment(s2, size, d);
  apply_augment(d2, size, d);
  for (int i = 0; i < 256; ++i)
    CHECK(s2[static_cast<size_t>(i)] - c2[static_cast<size_t>(i)] == d2[static_cast<size_t>(i)]);
}

TEST_CASE("augment: double application stays inside the dihedral group") {
  int size = 8;
  std::vector<float> base(64);
  for (int i = 0; i < 64; ++i) base[static_cast<size_t>(i)] = static_cast<float>(i);

  // all eight dihedral images of the base plane
  std::vector<std::vector<float>> dihedral;
  for (int r = 0; r < 4; ++r)
    for (int f = 0; f < 2; ++f) {
      std::vector<float> img = base;
      for (int k = 0; k < r; ++k) rot90_plane(img, size);
      if (f) hflip_plane(img, size);
      dihedral.push_back(img);
    }

  AugmentDraw all{true, true, true};
  std::vector<float> x = base;
  apply_augment(x, size, all);
  apply_augment(x, size, all);
  bool member = false;
  for (const auto& d : dihedral) member = member || d == x;
  CHECK(member);
}

TEST_CASE("lr schedule is the documented step function") {
  TrainSchedule dn = TrainSchedule::dn_defaults();
  CHECK(dn.lr_at(1) == doctest::Approx(1e-3));
  CHECK(dn.lr_at(25) == doctest::Approx(1e-3));
  CHECK(dn.lr_at(26) == doctest::Approx(1e-4));
  CHECK(dn.lr_at(50) == doctest::Approx(1e-4));
  CHECK(dn.lr_at(51) == doctest::Approx(1e-5));

  TrainSchedule mc = TrainSchedule::mcnet_defaults();
  CHECK(mc.lr_at(40) == doctest::Approx(1e-3));
  CHECK(mc.lr_at(41) == doctest::Approx(1e-4));

  TrainSchedule ft = TrainSchedule::finetune_defaults();
  CHECK(ft.lr_at(100) == doctest::Approx(1e-7));
  CHECK(ft.lr_at(150) == doctest::Approx(1e-8));
  CHECK(ft.select_from_epoch == 51);
}

TEST_CASE("run directory: layout, lockfile, metrics log") {
  TempDir tmp("mcnet_rundir_test");
  {
    RunDir run(tmp.path / "run1");
    CHECK(fs::exists(run.checkpoints()));
    CHECK(fs::exists(run.logs()));
    CHECK(fs::exists(run.reports()));
    CHECK_THROWS_AS(RunDir(tmp.path / "run1"), RuntimeFail);  // locked
    run.log_metrics(1, 0.5, 0.6, 0.25, 1e-3);
    run.log_metrics(2, 0.4, 0.5, 0.20, 1e-3);
    CHECK(fs::exists(run.logs() / "metrics.csv"));
  }
  RunDir again(tmp.path / "run1");  // lock released on destruction
}

TEST_CASE("denoiser training: payload-0 regression toward zero targets") {
  TempDir tmp("mcnet_dn_zero");
  DatasetManifest m = make_corpus(tmp.path, 30, 32, 0.0, 21);
  ModelConfig c = smoke_config();
  c.preprocessing = Preproc::learned_dn;
  TrainSchedule s = TrainSchedule::dn_defaults();
  s.epochs = 8;
  s.batch_pairs = 2;
  s.eval_every = 2;
  s.seed = 5;
  RunDir run(tmp.path / "run");
  TrainResult r = train_denoiser(m, c, s, run);
  REQUIRE(r.step_losses.size() >= 4);
  CHECK(r.step_losses.back() < r.step_losses.front());
  CHECK(fs::exists(r.best_checkpoint));
}

TEST_CASE("denoiser training: 16 pairs, 64x64, 30 epochs cuts the loss 10x") {
  TempDir tmp("mcnet_dn_десk");
  DatasetManifest m;
  // all sixteen pairs straight into dn_train, four more for dn_val
  for (int i = 0; i < 20; ++i) {
    ImageGray cover = synth_image(64, 31, i, 20);
    EmbedResult er = embed(cover, "inverse_variance", 0.4, 1000 + static_cast<uint64_t>(i));
    std::string cp = (tmp.path / ("c" + std::to_string(i) + ".pgm")).string();
    std::string sp = (tmp.path / ("s" + std::to_string(i) + ".pgm")).string();
    write_pgm(cp, cover);
    write_pgm(sp, er.stego);
    m.entries.push_back({cp, sp, "synth", i < 16 ? Split::dn_train : Split::dn_val});
  }
  ModelConfig c = ModelConfig::desk();
  TrainSchedule s = TrainSchedule::dn_defaults();
  s.epochs = 30;
  s.batch_pairs = 4;
  s.eval_every = 10;
  s.seed = 9;
  RunDir run(tmp.path / "run");
  TrainResult r = train_denoiser(m, c, s, run);
  double initial = r.epoch_train_loss.front();
  double final_loss = r.epoch_train_loss.back();
  INFO("initial " << initial << " final " << final_loss);
  CHECK(final_loss * 10.0 <= initial);
}

TEST_CASE("mcnet training: learned_dn without a checkpoint fails in split mode") {
  TempDir tmp("mcnet_train_nodn");
  DatasetManifest m = make_corpus(tmp.path, 30, 32, 0.5, 23);
  ModelConfig c = smoke_config();
  c.preprocessing = Preproc::learned_dn;
  TrainSchedule s = TrainSchedule::mcnet_defaults();
  s.epochs = 1;
  RunDir run(tmp.path / "run");
  CHECK_THROWS_AS(train_mcnet(m, c, s, std::nullopt, run), RuntimeFail);
}

TEST_CASE("mcnet training: same seed twice reproduces the loss trajectory bitwise") {
  TempDir tmp("mcnet_train_det");
  DatasetManifest m = make_corpus(tmp.path, 30, 32, 0.5, 29);
  ModelConfig c = smoke_config();
  TrainSchedule s = TrainSchedule::mcnet_defaults();
  s.epochs = 3;
  s.batch_pairs = 3;
  s.seed = 77;
  s.eval_every = 1;

  RunDir runA(tmp.path / "runA");
  TrainResult a = train_mcnet(m, c, s, std::nullopt, runA);
  RunDir runB(tmp.path / "runB");
  TrainResult b = train_mcnet(m, c, s, std::nullopt, runB);
  REQUIRE(a.step_losses.size() == b.step_losses.size());
  for (size_t i = 0; i < a.step_losses.size(); ++i) CHECK(a.step_losses[i] == b.step_losses[i]);
}

TEST_CASE("mcnet training: resume matches the uninterrupted run") {
  TempDir tmp("mcnet_train_resume");
  DatasetManifest m = make_corpus(tmp.path, 30, 32, 0.5, 31);
  ModelConfig c = smoke_config();
  TrainSchedule s = TrainSchedule::mcnet_defaults();
  s.epochs = 4;
  s.batch_pairs = 3;
  s.seed = 13;

  RunDir full(tmp.path / "full");
  TrainResult fr = train_mcnet(m, c, s, std::nullopt, full);

  TrainSchedule half = s;
  half.epochs = 2;
  RunDir part1(tmp.path / "part1");
  TrainResult p1 = train_mcnet(m, c, half, std::nullopt, part1);
  RunDir part2(tmp.path / "part2");
  TrainResult p2 = train_mcnet(m, c, s, std::nullopt, part2, p1.last_checkpoint);

  // steps from epochs 3..4 must match the uninterrupted run bitwise
  REQUIRE(p2.step_losses.size() + p1.step_losses.size() == fr.step_losses.size());
  for (size_t i = 0; i < p2.step_losses.size(); ++i)
    CHECK(p2.step_losses[i] == fr.step_losses[p1.step_losses.size() + i]);

  Checkpoint ca = read_checkpoint(fr.last_checkpoint);
  Checkpoint cb = read_checkpoint(p2.last_checkpoint);
  REQUIRE(ca.tensors.size() == cb.tensors.size());
  for (size_t i = 0; i < ca.tensors.size(); ++i) CHECK(ca.tensors[i].data == cb.tensors[i].data);
}

TEST_CASE("curriculum finetune: epoch-0 validation equals the source checkpoint") {
  TempDir tmp("mcnet_train_curr");
  DatasetManifest m = make_corpus(tmp.path, 30, 32, 0.5, 37);
  ModelConfig c = smoke_config();
  TrainSchedule s = TrainSchedule::mcnet_defaults();
  s.epochs = 2;
  s.batch_pairs = 3;
  s.seed = 3;
  RunDir src_run(tmp.path / "src");
  TrainResult src = train_mcnet(m, c, s, std::nullopt, src_run);

  Checkpoint ck = read_checkpoint(src.best_checkpoint);
  McNet<float> net = build_mcnet<float>(c, 1);
  restore(net, ck);
  double source_val = split_bce(net, m, Split::val, 3);

  TrainSchedule ft = TrainSchedule::finetune_defaults();
  ft.epochs = 2;
  ft.batch_pairs = 3;
  ft.seed = 4;
  ft.select_from_epoch = 1;
  RunDir ft_run(tmp.path / "ft");
  TrainResult r = curriculum_finetune(src.best_checkpoint, m, ft, ft_run);
  CHECK(r.best_val_metric >= 0.0);
  CHECK(r.epoch0_val_loss == source_val);  // transfer preserves the weights bitwise

  // epoch-0 row in metrics.csv carries the transferred net's val loss
  std::ifstream is(ft_run.logs() / "metrics.csv");
  std::string line, epoch0;
  std::getline(is, line);  // header
  std::getline(is, epoch0);
  REQUIRE(epoch0.rfind("0,", 0) == 0);
  auto c1 = epoch0.find(',') + 1;
  auto c2 = epoch0.find(',', c1) + 1;
  auto c3 = epoch0.find(',', c2);
  double logged = std::stod(epoch0.substr(c2, c3 - c2));
  CHECK(logged == doctest::Approx(source_val).epsilon(1e-8));  // %.9g formatting
}

TEST_CASE("score_split and evaluate_checkpoint produce usable reports") {
  TempDir tmp("mcnet_eval_smoke");
  DatasetManifest m = make_corpus(tmp.path, 30, 32, 0.5, 41);
  ModelConfig c = smoke_config();
  TrainSchedule s = TrainSchedule::mcnet_defaults();
  s.epochs = 1;
  s.batch_pairs = 3;
  RunDir run(tmp.path / "run");
  TrainResult r = train_mcnet(m, c, s, std::nullopt, run);
  MetricsReport rep = evaluate_checkpoint(r.best_checkpoint, m, Split::test, 4);
  CHECK(rep.pe >= 0.0);
  CHECK(rep.pe <= 0.5);
  CHECK(rep.n_cover == m.count(Split::test));
}

TEST_CASE("image io: pgm and png round-trips, format dispatch, header errors") {
  TempDir tmp("mcnet_image_io");
  ImageGray img(32, 24);
  Rng rng(8);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.below(256));

  std::string pgm = (tmp.path / "a.pgm").string();
  write_image(pgm, img);
  ImageGray back = read_image(pgm);
  CHECK(back.width == 32);
  CHECK(back.height == 24);
  CHECK(back.pixels == img.pixels);

  std::string png = (tmp.path / "a.png").string();
  write_image(png, img);
  ImageGray back_png = read_image(png);
  CHECK(back_png.width == 32);
  CHECK(back_png.height == 24);
  CHECK(back_png.pixels == img.pixels);

  CHECK_THROWS_AS(read_image((tmp.path / "missing.pgm").string()), RuntimeFail);
  CHECK_THROWS_AS(read_image((tmp.path / "a.bmp").string()), RuntimeFail);

  std::ofstream bad(tmp.path / "bad.pgm", std::ios::binary);
  bad << "P2\n4 4\n255\n";
  bad.close();
  CHECK_THROWS_AS(read_pgm((tmp.path / "bad.pgm").string()), RuntimeFail);

  std::ofstream trunc(tmp.path / "trunc.pgm", std::ios::binary);
  trunc << "P5\n64 64\n255\nxx";
  trunc.close();
  CHECK_THROWS_AS(read_pgm((tmp.path / "trunc.pgm").string()), RuntimeFail);
}
