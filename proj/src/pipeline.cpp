#include "mcnet/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mcnet {

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::dn_train: return "dn_train";
    default: return "dn_val";
  }
}

Split split_from(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "dn_train") return Split::dn_train;
  if (s == "dn_val") return Split::dn_val;
  throw RuntimeFail("unknown split '" + s + "'");
}

std::vector<const ManifestEntry*> DatasetManifest::split_entries(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

size_t DatasetManifest::count(Split s) const { return split_entries(s).size(); }

std::string DatasetManifest::to_csv() const {
  std::ostringstream os;
  char buf[48];
  os << "# seed=" << seed << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", payload_bpp);
  os << "# payload_bpp=" << buf << "\n";
  os << "# algorithm=" << algorithm << "\n";
  os << "cover_path,stego_path,source,split\n";
  for (const auto& e : entries)
    os << e.cover_path << "," << e.stego_path << "," << e.source << "," << split_name(e.split)
       << "\n";
  return os.str();
}

DatasetManifest DatasetManifest::from_csv(const std::string& text) {
  DatasetManifest m;
  std::istringstream is(text);
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1), val = line.substr(eq + 1);
      key.erase(0, key.find_first_not_of(' '));
      if (key == "seed") m.seed = std::stoull(val);
      else if (key == "payload_bpp") m.payload_bpp = std::stod(val);
      else if (key == "algorithm") m.algorithm = val;
      continue;
    }
    if (!header_seen) {
      if (line != "cover_path,stego_path,source,split")
        throw RuntimeFail("manifest: unexpected header '" + line + "'");
      header_seen = true;
      continue;
    }
    ManifestEntry e;
    std::istringstream ls(line);
    std::string split_s;
    if (!std::getline(ls, e.cover_path, ',') || !std::getline(ls, e.stego_path, ',') ||
        !std::getline(ls, e.source, ',') || !std::getline(ls, split_s))
      throw RuntimeFail("manifest: bad row '" + line + "'");
    e.split = split_from(split_s);
    m.entries.push_back(std::move(e));
  }
  if (!header_seen) throw RuntimeFail("manifest: missing header row");
  return m;
}

void DatasetManifest::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw RuntimeFail("cannot write manifest " + path);
  os << to_csv();
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw RuntimeFail("cannot open manifest " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return from_csv(text);
}

// ---------------------------------------------------------------------------

DatasetManifest split_dataset(const std::vector<SourceList>& sources, uint64_t seed) {
  if (sources.empty() || sources[0].pairs.empty())
    throw RuntimeFail("split_dataset: no input pairs");

  DatasetManifest m;
  m.seed = seed;

  // first source: 40/10/50
  std::vector<size_t> idx(sources[0].pairs.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  Rng rng0(derive_seed(seed, {kSeedSplit, 0}));
  deterministic_shuffle(idx, rng0);
  size_t n0 = idx.size();
  size_t train0 = static_cast<size_t>(std::llround(0.4 * static_cast<double>(n0)));
  size_t val0 = static_cast<size_t>(std::llround(0.1 * static_cast<double>(n0)));
  if (train0 + val0 >= n0)
    throw RuntimeFail("split_dataset: too few images in the first source (" + std::to_string(n0) +
                      ")");

  std::vector<ManifestEntry> pool;
  auto push = [](std::vector<ManifestEntry>& dst, const SourceList& src, size_t i, Split s) {
    dst.push_back({src.pairs[i].first, src.pairs[i].second, src.tag, s});
  };
  for (size_t i = 0; i < n0; ++i) {
    if (i < train0)
      push(pool, sources[0], idx[i], Split::train);
    else if (i < train0 + val0)
      push(m.entries, sources[0], idx[i], Split::val);
    else
      push(m.entries, sources[0], idx[i], Split::test);
  }
  for (size_t s = 1; s < sources.size(); ++s)
    for (size_t i = 0; i < sources[s].pairs.size(); ++i) push(pool, sources[s], i, Split::train);

  // denoiser subsplit carved out of (and removed from) the training pool
  std::vector<size_t> pidx(pool.size());
  std::iota(pidx.begin(), pidx.end(), size_t{0});
  Rng rng1(derive_seed(seed, {kSeedSplit, 1}));
  deterministic_shuffle(pidx, rng1);
  size_t n_dn = static_cast<size_t>(std::llround(static_cast<double>(pool.size()) / 7.0));
  size_t dn_train = std::max<size_t>(1, static_cast<size_t>(0.8 * static_cast<double>(n_dn)));
  size_t dn_val = n_dn - dn_train;
  if (n_dn < 2 || dn_val < 1 || n_dn >= pool.size())
    throw RuntimeFail("split_dataset: training pool too small for the denoiser subsplit (" +
                      std::to_string(pool.size()) + " pairs; need >= 14)");
  for (size_t i = 0; i < pool.size(); ++i) {
    ManifestEntry e = pool[pidx[i]];
    e.split = i < dn_train ? Split::dn_train : (i < n_dn ? Split::dn_val : Split::train);
    m.entries.push_back(std::move(e));
  }

  if (m.count(Split::val) == 0 || m.count(Split::test) == 0)
    throw RuntimeFail("split_dataset: empty val/test split");
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic covers.

namespace {

void box_blur(std::vector<double>& p, int size, int radius) {
  std::vector<double> tmp(p.size());
  auto clampi = [size](int v) { return v < 0 ? 0 : (v >= size ? size - 1 : v); };
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      double acc = 0;
      for (int j = -radius; j <= radius; ++j) acc += p[static_cast<size_t>(r) * size + clampi(c + j)];
      tmp[static_cast<size_t>(r) * size + c] = acc / (2 * radius + 1);
    }
  for (int c = 0; c < size; ++c)
    for (int r = 0; r < size; ++r) {
      double acc = 0;
      for (int j = -radius; j <= radius; ++j) acc += tmp[static_cast<size_t>(clampi(r + j)) * size + c];
      p[static_cast<size_t>(r) * size + c] = acc / (2 * radius + 1);
    }
}

void normalize_unit_var(std::vector<double>& p) {
  double mean = 0, sq = 0;
  for (double v : p) mean += v;
  mean /= static_cast<double>(p.size());
  for (double v : p) sq += (v - mean) * (v - mean);
  double var = sq / static_cast<double>(p.size());
  if (var < 1e-12) return;
  double inv = 1.0 / std::sqrt(var);
  for (double& v : p) v = (v - mean) * inv;
}

}  // namespace

ImageGray synth_image(int size, uint64_t corpus_seed, int index, int corpus_n) {
  Rng rng(derive_seed(corpus_seed, {kSeedSynth, static_cast<uint64_t>(index)}));
  double where = corpus_n > 1 ? static_cast<double>(index) / static_cast<double>(corpus_n - 1) : 0.5;
  double target_var = 25.0 * std::pow(100.0, where);  // sigma 5 .. 50

  size_t n = static_cast<size_t>(size) * static_cast<size_t>(size);
  std::vector<double> gradient(n), noise(n), shapes(n, 0.0);

  double angle = rng.uniform() * 6.283185307179586;
  double ca = std::cos(angle), sa = std::sin(angle);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      gradient[static_cast<size_t>(r) * size + c] =
          (ca * c + sa * r) / static_cast<double>(size);

  for (double& v : noise) v = rng.uniform() - 0.5;
  int radius = 1 + static_cast<int>(rng.below(2));
  box_blur(noise, size, radius);
  box_blur(noise, size, radius);

  int n_shapes = 2 + static_cast<int>(rng.below(4));
  for (int s = 0; s < n_shapes; ++s) {
    bool ellipse = rng.uniform() < 0.5;
    int cx = static_cast<int>(rng.below(static_cast<uint64_t>(size)));
    int cy = static_cast<int>(rng.below(static_cast<uint64_t>(size)));
    int rx = size / 8 + static_cast<int>(rng.below(static_cast<uint64_t>(size / 4)));
    int ry = size / 8 + static_cast<int>(rng.below(static_cast<uint64_t>(size / 4)));
    double amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.4 + 0.6 * rng.uniform());
    for (int r = std::max(0, cy - ry); r < std::min(size, cy + ry); ++r)
      for (int c = std::max(0, cx - rx); c < std::min(size, cx + rx); ++c) {
        if (ellipse) {
          double dx = (c - cx) / static_cast<double>(rx);
          double dy = (r - cy) / static_cast<double>(ry);
          if (dx * dx + dy * dy > 1.0) continue;
        }
        shapes[static_cast<size_t>(r) * size + c] += amp;
      }
  }

  normalize_unit_var(gradient);
  normalize_unit_var(noise);
  normalize_unit_var(shapes);
  std::vector<double> comp(n);
  for (size_t i = 0; i < n; ++i) comp[i] = 0.9 * gradient[i] + 1.0 * noise[i] + 0.8 * shapes[i];
  double mean = 0, sq = 0;
  for (double v : comp) mean += v;
  mean /= static_cast<double>(n);
  for (double v : comp) sq += (v - mean) * (v - mean);
  double var = sq / static_cast<double>(n);
  double scale = var > 1e-12 ? std::sqrt(target_var / var) : 0.0;

  ImageGray img(size, size);
  for (size_t i = 0; i < n; ++i) {
    double v = std::round(128.0 + (comp[i] - mean) * scale);
    img.pixels[i] = static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
  }
  return img;
}

std::vector<ImageGray> synth_corpus(int n, int size, uint64_t seed) {
  if (n < 1) throw UsageError("synth_corpus: n must be >= 1");
  std::vector<ImageGray> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(synth_image(size, seed, i, n));
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation.

void rot90_plane(std::vector<float>& plane, int size) {
  std::vector<float> tmp = plane;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      plane[static_cast<size_t>(r) * size + c] = tmp[static_cast<size_t>(size - 1 - c) * size + r];
}

void hflip_plane(std::vector<float>& plane, int size) {
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size / 2; ++c)
      std::swap(plane[static_cast<size_t>(r) * size + c],
                plane[static_cast<size_t>(r) * size + (size - 1 - c)]);
}

void vflip_plane(std::vector<float>& plane, int size) {
  for (int r = 0; r < size / 2; ++r)
    for (int c = 0; c < size; ++c)
      std::swap(plane[static_cast<size_t>(r) * size + c],
                plane[static_cast<size_t>(size - 1 - r) * size + c]);
}

AugmentDraw draw_augment(double p, Rng& rng) {
  AugmentDraw d;
  d.rot90 = rng.uniform() < p;
  d.hflip = rng.uniform() < p;
  d.vflip = rng.uniform() < p;
  return d;
}

void apply_augment(std::vector<float>& plane, int size, const AugmentDraw& d) {
  if (d.rot90) rot90_plane(plane, size);
  if (d.hflip) hflip_plane(plane, size);
  if (d.vflip) vflip_plane(plane, size);
}

// ---------------------------------------------------------------------------
// Schedules.

double TrainSchedule::lr_at(int epoch) const {
  int stages = (epoch - 1) / decay_every;
  return lr * std::pow(decay_factor, static_cast<double>(stages));
}

TrainSchedule TrainSchedule::dn_defaults() {
  TrainSchedule s;
  s.lr = 1e-3;
  s.decay_every = 25;
  s.epochs = 100;
  s.batch_pairs = 10;
  return s;
}

TrainSchedule TrainSchedule::mcnet_defaults() {
  TrainSchedule s;
  s.lr = 1e-3;
  s.decay_every = 40;
  s.epochs = 400;
  s.batch_pairs = 10;
  return s;
}

TrainSchedule TrainSchedule::finetune_defaults() {
  TrainSchedule s;
  s.lr = 1e-7;
  s.decay_every = 100;
  s.epochs = 200;
  s.batch_pairs = 10;
  s.select_from_epoch = 51;
  return s;
}

// ---------------------------------------------------------------------------
// Run directories.

RunDir::RunDir(const std::filesystem::path& root) : root_(root) {
  std::filesystem::create_directories(root_);
  std::filesystem::create_directories(root_ / "checkpoints");
  std::filesystem::create_directories(root_ / "logs");
  std::filesystem::create_directories(root_ / "reports");
  lock_ = root_ / ".lock";
  int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    throw RuntimeFail("run directory " + root_.string() +
                      " is locked by another run (remove .lock if stale)");
  ::close(fd);
}

RunDir::~RunDir() {
  std::error_code ec;
  std::filesystem::remove(lock_, ec);
}

void RunDir::write_text(const std::string& rel_path, const std::string& text) const {
  std::ofstream os(root_ / rel_path);
  if (!os) throw RuntimeFail("cannot write " + (root_ / rel_path).string());
  os << text;
}

void RunDir::log_metrics(int epoch, double train_loss, double val_loss, double val_pe,
                         double lr) const {
  auto path = root_ / "logs" / "metrics.csv";
  bool fresh = !std::filesystem::exists(path);
  std::ofstream os(path, std::ios::app);
  if (fresh) os << "epoch,train_loss,val_loss,val_pe,lr\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", epoch, train_loss, val_loss, val_pe,
                lr);
  os << buf;
}

// ---------------------------------------------------------------------------
// Training internals.

namespace {

std::vector<float> load_plane(const std::string& path, int expected) {
  ImageGray img = read_image(path);
  if (img.width != expected || img.height != expected)
    throw RuntimeFail(path + ": expected " + std::to_string(expected) + "x" +
                      std::to_string(expected) + ", got " + std::to_string(img.width) + "x" +
                      std::to_string(img.height) + " (resize the corpus first)");
  std::vector<float> v(img.size());
  for (size_t i = 0; i < img.size(); ++i) v[i] = static_cast<float>(img.pixels[i]);
  return v;
}

struct PairPlanes {
  std::vector<std::vector<float>> covers, stegos;
};

PairPlanes load_pairs(const std::vector<const ManifestEntry*>& entries,
                      const std::vector<size_t>& order, size_t begin, size_t count, int size) {
  PairPlanes out;
  for (size_t i = begin; i < begin + count; ++i) {
    const ManifestEntry* e = entries[order[i]];
    out.covers.push_back(load_plane(e->cover_path, size));
    out.stegos.push_back(load_plane(e->stego_path, size));
  }
  return out;
}

Tensor<float> planes_to_batch(const std::vector<std::vector<float>>& first,
                              const std::vector<std::vector<float>>& second, int size) {
  int64_t n = static_cast<int64_t>(first.size() + second.size());
  std::vector<float> data;
  data.reserve(static_cast<size_t>(n) * first[0].size());
  for (const auto& p : first) data.insert(data.end(), p.begin(), p.end());
  for (const auto& p : second) data.insert(data.end(), p.begin(), p.end());
  return Tensor<float>::from({n, 1, size, size}, std::move(data));
}

struct LoopResult {
  TrainResult result;
};

void save_snapshot(McNet<float>& net, const std::string& path, int epoch, uint64_t seed,
                   double metric) {
  Checkpoint ck = snapshot(net);
  ck.epoch = epoch;
  ck.seed = seed;
  ck.best_val_metric = metric;
  write_checkpoint(path, ck);
}

// Shared detector epoch loop (fresh training, resume and curriculum all land
// here once the net is prepared).
TrainResult detector_loop(McNet<float>& net, const DatasetManifest& manifest,
                          const TrainSchedule& schedule, const RunDir& run, int start_epoch,
                          bool log_epoch0) {
  auto train_pairs = manifest.split_entries(Split::train);
  auto val_pairs = manifest.split_entries(Split::val);
  if (train_pairs.empty()) throw RuntimeFail("train_mcnet: train split is empty");
  const int size = net.config.input_size;

  Adamax<float> opt;
  auto params = net.trainable_parameters();

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  std::string best_path = (run.checkpoints() / "best.bin").string();
  std::string last_path = (run.checkpoints() / "last.bin").string();

  auto validate = [&](double& val_loss, double& val_pe) {
    val_loss = std::numeric_limits<double>::quiet_NaN();
    val_pe = std::numeric_limits<double>::quiet_NaN();
    if (val_pairs.empty()) return;
    val_loss = split_bce(net, manifest, Split::val, schedule.batch_pairs);
    val_pe = pe_min(score_split(net, manifest, Split::val, schedule.batch_pairs));
  };

  if (log_epoch0) {
    double v_loss, v_pe;
    validate(v_loss, v_pe);
    result.epoch_train_loss.push_back(std::numeric_limits<double>::quiet_NaN());
    run.log_metrics(0, std::numeric_limits<double>::quiet_NaN(), v_loss, v_pe, 0.0);
    result.epoch0_val_loss = v_loss;
  }

  size_t pairs_per_batch =
      std::min<size_t>(static_cast<size_t>(schedule.batch_pairs), train_pairs.size());
  double initial_loss = std::numeric_limits<double>::quiet_NaN();
  int high_loss_epochs = 0;
  bool stop = false;

  for (int epoch = start_epoch; epoch <= schedule.epochs && !stop; ++epoch) {
    double lr = schedule.lr_at(epoch);
    std::vector<size_t> order(train_pairs.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(derive_seed(schedule.seed, {kSeedShuffle, static_cast<uint64_t>(epoch)}));
    deterministic_shuffle(order, shuffle_rng);

    size_t nbatches = std::max<size_t>(1, order.size() / pairs_per_batch);
    double loss_sum = 0;
    size_t loss_n = 0;
    for (size_t b = 0; b < nbatches; ++b) {
      if (schedule.max_steps > 0 && result.steps >= schedule.max_steps) {
        stop = true;
        break;
      }
      PairPlanes planes = load_pairs(train_pairs, order, b * pairs_per_batch,
                                     std::min(pairs_per_batch, order.size() - b * pairs_per_batch),
                                     size);
      for (size_t p = 0; p < planes.covers.size(); ++p) {
        Rng arng(derive_seed(schedule.seed, {kSeedAugment, static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(b), static_cast<uint64_t>(p)}));
        AugmentDraw d = draw_augment(schedule.augment_p, arng);
        apply_augment(planes.covers[p], size, d);
        apply_augment(planes.stegos[p], size, d);
      }
      Tensor<float> batch = planes_to_batch(planes.covers, planes.stegos, size);
      std::vector<int> labels(planes.covers.size(), 0);
      labels.insert(labels.end(), planes.stegos.size(), 1);

      opt.zero_grad(params);
      auto probs = net.forward(batch, true);
      auto loss = bce_loss(take_column(probs, 1), labels);
      double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv))
        throw RuntimeFail("train_mcnet: non-finite training loss at epoch " +
                          std::to_string(epoch));
      loss.backward();
      opt.step(params, static_cast<float>(lr));
      result.step_losses.push_back(lv);
      result.steps += 1;
      loss_sum += lv;
      loss_n += 1;
    }
    if (loss_n == 0) break;
    double train_mean = loss_sum / static_cast<double>(loss_n);
    result.epoch_train_loss.push_back(train_mean);
    if (std::isnan(initial_loss)) initial_loss = train_mean;
    high_loss_epochs = train_mean > 10.0 * initial_loss ? high_loss_epochs + 1 : 0;
    if (high_loss_epochs >= 5)
      throw RuntimeFail("train_mcnet: diverged (loss > 10x initial for 5 epochs)");

    bool do_eval = epoch % schedule.eval_every == 0 || epoch == schedule.epochs || stop;
    if (do_eval) {
      double v_loss, v_pe;
      validate(v_loss, v_pe);
      run.log_metrics(epoch, train_mean, v_loss, v_pe, lr);
      double metric = val_pairs.empty() ? train_mean : v_pe;
      if (epoch >= schedule.select_from_epoch && metric < best) {
        best = metric;
        result.best_epoch = epoch;
        result.best_val_metric = metric;
        save_snapshot(net, best_path, epoch, schedule.seed, metric);
        result.best_checkpoint = best_path;
      }
      if (schedule.stop_below_val_pe >= 0 && !std::isnan(v_pe) && v_pe <= schedule.stop_below_val_pe)
        stop = true;
    }
    if (schedule.stop_below_train_loss > 0 && train_mean < schedule.stop_below_train_loss)
      stop = true;
    save_snapshot(net, last_path, epoch, schedule.seed, result.best_val_metric);
    result.last_checkpoint = last_path;
  }

  if (result.best_checkpoint.empty()) {
    // no eligible candidate (e.g. stopped before select_from_epoch): keep last
    save_snapshot(net, best_path, schedule.epochs, schedule.seed, best);
    result.best_checkpoint = best_path;
  }
  if (result.last_checkpoint.empty()) {
    save_snapshot(net, last_path, start_epoch - 1, schedule.seed, best);
    result.last_checkpoint = last_path;
  }
  return result;
}

}  // namespace

TrainResult train_mcnet(const DatasetManifest& manifest, const ModelConfig& config,
                        const TrainSchedule& schedule, std::optional<std::string> dn_checkpoint,
                        const RunDir& run, std::optional<std::string> resume) {
  config.validate();
  if (schedule.dn_target != "residual" && schedule.dn_target != "image")
    throw UsageError("schedule: dn_target must be residual or image");

  McNet<float> net = build_mcnet<float>(config, derive_seed(schedule.seed, {kSeedInit}));
  if (net.has_dn()) {
    if (dn_checkpoint) load_dn_into(net, read_checkpoint(*dn_checkpoint));
    else if (!schedule.end_to_end)
      throw RuntimeFail("train_mcnet: learned_dn preprocessing requires a denoiser checkpoint "
                        "under split training (pass one or set end_to_end)");
    net.set_dn_frozen(!schedule.end_to_end);
  }

  int start_epoch = 1;
  if (resume) {
    Checkpoint ck = read_checkpoint(*resume);
    if (ck.seed != schedule.seed)
      throw RuntimeFail("resume: checkpoint seed " + std::to_string(ck.seed) +
                        " differs from schedule seed " + std::to_string(schedule.seed));
    restore(net, ck);
    start_epoch = static_cast<int>(ck.epoch) + 1;
  }

  run.write_text("model_config.txt", config.to_text());
  return detector_loop(net, manifest, schedule, run, start_epoch, false);
}

TrainResult curriculum_finetune(const std::string& source_checkpoint,
                                const DatasetManifest& manifest, const TrainSchedule& schedule,
                                const RunDir& run) {
  Checkpoint src = read_checkpoint(source_checkpoint);
  McNet<float> net = build_mcnet<float>(src.config, derive_seed(schedule.seed, {kSeedInit}));
  restore(net, src, /*transfer=*/true);  // weights in, optimizer state and epoch reset
  if (net.has_dn()) net.set_dn_frozen(!schedule.end_to_end);
  run.write_text("model_config.txt", src.config.to_text());
  return detector_loop(net, manifest, schedule, run, 1, /*log_epoch0=*/true);
}

// ---------------------------------------------------------------------------
// Denoiser training.

TrainResult train_denoiser(const DatasetManifest& manifest, const ModelConfig& config,
                           const TrainSchedule& schedule, const RunDir& run) {
  auto train_pairs = manifest.split_entries(Split::dn_train);
  auto val_pairs = manifest.split_entries(Split::dn_val);
  if (train_pairs.empty()) throw RuntimeFail("train_denoiser: dn_train split is empty");
  bool image_target = schedule.dn_target == "image";
  if (!image_target && schedule.dn_target != "residual")
    throw UsageError("schedule: dn_target must be residual or image");

  DenoiserNet<float> net =
      build_denoiser<float>(config, derive_seed(schedule.seed, {kSeedInit, 99}));
  const int size = config.input_size;
  Adamax<float> opt;
  auto params = net.parameters();

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  std::string best_path = (run.checkpoints() / "dn_best.bin").string();

  // inputs are covers then stegos; targets are |input - cover| (or the input)
  auto batch_loss = [&](const PairPlanes& planes) {
    size_t p = planes.covers.size();
    Tensor<float> inputs = planes_to_batch(planes.covers, planes.stegos, size);
    std::vector<float> tgt;
    tgt.reserve(inputs.values().size());
    for (size_t i = 0; i < p; ++i) {
      if (image_target)
        tgt.insert(tgt.end(), planes.covers[i].begin(), planes.covers[i].end());
      else
        tgt.insert(tgt.end(), planes.covers[i].size(), 0.0f);  // |X - X|
    }
    for (size_t i = 0; i < p; ++i) {
      if (image_target) {
        tgt.insert(tgt.end(), planes.stegos[i].begin(), planes.stegos[i].end());
      } else {
        for (size_t j = 0; j < planes.stegos[i].size(); ++j)
          tgt.push_back(std::abs(planes.stegos[i][j] - planes.covers[i][j]));
      }
    }
    Tensor<float> target =
        Tensor<float>::from({static_cast<int64_t>(2 * p), 1, size, size}, std::move(tgt));
    return mse_loss(net.residual(inputs), target);
  };

  auto val_loss_fn = [&]() {
    if (val_pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<size_t> order(val_pairs.size());
    std::iota(order.begin(), order.end(), size_t{0});
    double sum = 0;
    size_t batches = 0;
    size_t per = std::min<size_t>(static_cast<size_t>(schedule.batch_pairs), val_pairs.size());
    for (size_t b = 0; b + per <= val_pairs.size(); b += per) {
      PairPlanes planes = load_pairs(val_pairs, order, b, per, size);
      sum += static_cast<double>(batch_loss(planes).item());
      ++batches;
    }
    return sum / static_cast<double>(batches);
  };

  size_t pairs_per_batch =
      std::min<size_t>(static_cast<size_t>(schedule.batch_pairs), train_pairs.size());
  bool stop = false;
  for (int epoch = 1; epoch <= schedule.epochs && !stop; ++epoch) {
    double lr = schedule.lr_at(epoch);
    std::vector<size_t> order(train_pairs.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(derive_seed(schedule.seed, {kSeedShuffle, static_cast<uint64_t>(epoch)}));
    deterministic_shuffle(order, shuffle_rng);

    double loss_sum = 0;
    size_t loss_n = 0;
    size_t nbatches = std::max<size_t>(1, order.size() / pairs_per_batch);
    for (size_t b = 0; b < nbatches; ++b) {
      if (schedule.max_steps > 0 && result.steps >= schedule.max_steps) {
        stop = true;
        break;
      }
      PairPlanes planes = load_pairs(train_pairs, order, b * pairs_per_batch,
                                     std::min(pairs_per_batch, order.size() - b * pairs_per_batch),
                                     size);
      for (size_t p = 0; p < planes.covers.size(); ++p) {
        Rng arng(derive_seed(schedule.seed, {kSeedAugment, static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(b), static_cast<uint64_t>(p)}));
        AugmentDraw d = draw_augment(schedule.augment_p, arng);
        apply_augment(planes.covers[p], size, d);
        apply_augment(planes.stegos[p], size, d);
      }
      opt.zero_grad(params);
      auto loss = batch_loss(planes);
      double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv))
        throw RuntimeFail("train_denoiser: non-finite loss at epoch " + std::to_string(epoch));
      loss.backward();
      opt.step(params, static_cast<float>(lr));
      result.step_losses.push_back(lv);
      result.steps += 1;
      loss_sum += lv;
      ++loss_n;
    }
    if (loss_n == 0) break;
    double train_mean = loss_sum / static_cast<double>(loss_n);
    result.epoch_train_loss.push_back(train_mean);

    if (epoch % schedule.eval_every == 0 || epoch == schedule.epochs || stop) {
      double v = val_loss_fn();
      if (!val_pairs.empty() && std::isnan(v))
        throw RuntimeFail("train_denoiser: validation loss is NaN at epoch " +
                          std::to_string(epoch));
      run.log_metrics(epoch, train_mean, v, std::numeric_limits<double>::quiet_NaN(), lr);
      double metric = val_pairs.empty() ? train_mean : v;
      if (metric < best) {
        best = metric;
        result.best_epoch = epoch;
        result.best_val_metric = metric;
        Checkpoint ck = snapshot(net);
        ck.epoch = epoch;
        ck.seed = schedule.seed;
        ck.best_val_metric = metric;
        write_checkpoint(best_path, ck);
        result.best_checkpoint = best_path;
      }
    }
  }
  if (result.best_checkpoint.empty()) {
    Checkpoint ck = snapshot(net);
    ck.seed = schedule.seed;
    write_checkpoint(best_path, ck);
    result.best_checkpoint = best_path;
  }
  result.last_checkpoint = result.best_checkpoint;
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation plumbing.

ScoreSet score_split(McNet<float>& net, const DatasetManifest& manifest, Split split,
                     int batch_pairs) {
  auto pairs = manifest.split_entries(split);
  if (pairs.empty()) throw RuntimeFail("score_split: split '" + split_name(split) + "' is empty");
  const int size = net.config.input_size;
  ScoreSet out;
  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t per = std::max<size_t>(1, static_cast<size_t>(batch_pairs));
  for (size_t b = 0; b < pairs.size(); b += per) {
    size_t count = std::min(per, pairs.size() - b);
    PairPlanes planes = load_pairs(pairs, order, b, count, size);
    Tensor<float> batch = planes_to_batch(planes.covers, planes.stegos, size);
    auto probs = net.forward(batch, false);
    for (size_t i = 0; i < count; ++i) {
      out.scores.push_back(static_cast<double>(probs.data()[i * 2 + 1]));
      out.labels.push_back(0);
    }
    for (size_t i = 0; i < count; ++i) {
      out.scores.push_back(static_cast<double>(probs.data()[(count + i) * 2 + 1]));
      out.labels.push_back(1);
    }
  }
  return out;
}

double split_bce(McNet<float>& net, const DatasetManifest& manifest, Split split,
                 int batch_pairs) {
  auto pairs = manifest.split_entries(split);
  if (pairs.empty()) throw RuntimeFail("split_bce: split '" + split_name(split) + "' is empty");
  const int size = net.config.input_size;
  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t per = std::max<size_t>(1, static_cast<size_t>(batch_pairs));
  double sum = 0;
  size_t n = 0;
  for (size_t b = 0; b < pairs.size(); b += per) {
    size_t count = std::min(per, pairs.size() - b);
    PairPlanes planes = load_pairs(pairs, order, b, count, size);
    Tensor<float> batch = planes_to_batch(planes.covers, planes.stegos, size);
    std::vector<int> labels(count, 0);
    labels.insert(labels.end(), count, 1);
    auto probs = net.forward(batch, false);
    sum += static_cast<double>(bce_loss(take_column(probs, 1), labels).item()) *
           static_cast<double>(2 * count);
    n += 2 * count;
  }
  return sum / static_cast<double>(n);
}

MetricsReport evaluate_checkpoint(const std::string& checkpoint_path,
                                  const DatasetManifest& manifest, Split split, int batch_pairs) {
  Checkpoint ck = read_checkpoint(checkpoint_path);
  if (ck.kind != "mcnet") throw RuntimeFail("evaluate: checkpoint is not a detector checkpoint");
  McNet<float> net = build_mcnet<float>(ck.config, 0);
  restore(net, ck);
  return evaluate_scores(score_split(net, manifest, split, batch_pairs));
}

}  // namespace mcnet
