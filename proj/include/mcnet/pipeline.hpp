#pragma once

#include <filesystem>
#include <limits>
#include <optional>

#include "mcnet/image.hpp"
#include "mcnet/metrics.hpp"
#include "mcnet/model.hpp"

namespace mcnet {

enum class Split { train, val, test, dn_train, dn_val };
std::string split_name(Split s);
Split split_from(const std::string& s);

struct ManifestEntry {
  std::string cover_path, stego_path, source;
  Split split = Split::train;
};

/// Cover/stego pairs with their split assignment. dn_train/dn_val are carved
/// out of the training pool and never overlap val or test.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  uint64_t seed = 0;
  double payload_bpp = 0.0;
  std::string algorithm;

  std::vector<const ManifestEntry*> split_entries(Split s) const;
  size_t count(Split s) const;

  std::string to_csv() const;
  static DatasetManifest from_csv(const std::string& text);
  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

struct SourceList {
  std::string tag;
  std::vector<std::pair<std::string, std::string>> pairs;  // (cover, stego)
};

/// First source: 40/10/50 train/val/test; any further sources go entirely to
/// the training pool. One seventh of the training pool is then moved to the
/// denoiser subsplit (4:1 dn_train:dn_val). Deterministic in the seed.
DatasetManifest split_dataset(const std::vector<SourceList>& sources, uint64_t seed);

/// Textured synthetic covers: gradient + smoothed noise + geometric shapes,
/// with per-image variance on a geometric schedule spanning a 100x range.
ImageGray synth_image(int size, uint64_t corpus_seed, int index, int corpus_n);
std::vector<ImageGray> synth_corpus(int n, int size, uint64_t seed);

// --- augmentation ------------------------------------------------------------

/// In-place square-plane transforms (exact permutations).
void rot90_plane(std::vector<float>& plane, int size);
void hflip_plane(std::vector<float>& plane, int size);
void vflip_plane(std::vector<float>& plane, int size);

struct AugmentDraw {
  bool rot90 = false, hflip = false, vflip = false;
};
AugmentDraw draw_augment(double p, Rng& rng);
void apply_augment(std::vector<float>& plane, int size, const AugmentDraw& d);

// --- schedules ---------------------------------------------------------------

struct TrainSchedule {
  double lr = 1e-3;
  double decay_factor = 0.1;
  int decay_every = 40;  // epochs
  int epochs = 400;
  int batch_pairs = 10;  // batch = 2x this (covers + stegos)
  double augment_p = 0.4;
  uint64_t seed = 1;
  int64_t max_steps = 0;      // optional cap on optimizer updates (0 = none)
  int eval_every = 1;         // validation cadence in epochs
  int select_from_epoch = 1;  // best-checkpoint candidates start here
  bool end_to_end = false;    // learned_dn kernels trainable when true
  std::string dn_target = "residual";  // or "image"
  double stop_below_train_loss = 0.0;  // early stop once an epoch mean drops below (0 = off)
  double stop_below_val_pe = -1.0;     // early stop once val P_E reaches this (negative = off)

  double lr_at(int epoch) const;  // 1-based pure step function

  static TrainSchedule dn_defaults();        // 100 epochs, decay every 25
  static TrainSchedule mcnet_defaults();     // 400 epochs, decay every 40
  static TrainSchedule finetune_defaults();  // 200 epochs at 1e-7, select from 51
};

// --- run directories ---------------------------------------------------------

/// Self-describing output directory: config copy, manifest, checkpoints/,
/// logs/metrics.csv, reports/. Holds a lockfile while a trainer owns it.
class RunDir {
 public:
  explicit RunDir(const std::filesystem::path& root);
  ~RunDir();
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path checkpoints() const { return root_ / "checkpoints"; }
  std::filesystem::path logs() const { return root_ / "logs"; }
  std::filesystem::path reports() const { return root_ / "reports"; }

  void write_text(const std::string& rel_path, const std::string& text) const;
  void log_metrics(int epoch, double train_loss, double val_loss, double val_pe, double lr) const;

 private:
  std::filesystem::path root_;
  std::filesystem::path lock_;
};

// --- training ----------------------------------------------------------------

struct TrainResult {
  std::string best_checkpoint;
  std::string last_checkpoint;
  double best_val_metric = 0.0;  // val loss for the denoiser, val P_E for the detector
  int best_epoch = 0;
  int64_t steps = 0;
  std::vector<double> step_losses;        // per optimizer update
  std::vector<double> epoch_train_loss;   // means
  double epoch0_val_loss = std::numeric_limits<double>::quiet_NaN();  // curriculum baseline
};

/// Regression of the denoiser onto |input - cover| residual targets (or the
/// input image itself under dn_target = "image"). Returns the minimum-
/// validation-loss checkpoint.
TrainResult train_denoiser(const DatasetManifest& manifest, const ModelConfig& config,
                           const TrainSchedule& schedule, const RunDir& run);

/// Detector training: Adamax on BCE, paired batches, best validation P_E.
/// learned_dn preprocessing requires dn_checkpoint unless end_to_end.
TrainResult train_mcnet(const DatasetManifest& manifest, const ModelConfig& config,
                        const TrainSchedule& schedule, std::optional<std::string> dn_checkpoint,
                        const RunDir& run, std::optional<std::string> resume = std::nullopt);

/// Weight transfer plus a low-rate schedule; the best checkpoint is chosen
/// only among epochs >= schedule.select_from_epoch.
TrainResult curriculum_finetune(const std::string& source_checkpoint,
                                const DatasetManifest& manifest, const TrainSchedule& schedule,
                                const RunDir& run);

/// Scores every pair in a split with an eval-mode forward pass.
ScoreSet score_split(McNet<float>& net, const DatasetManifest& manifest, Split split,
                     int batch_pairs = 10);

MetricsReport evaluate_checkpoint(const std::string& checkpoint_path,
                                  const DatasetManifest& manifest, Split split,
                                  int batch_pairs = 10);

/// Mean BCE of a trained net over a split (validation-loss helper).
double split_bce(McNet<float>& net, const DatasetManifest& manifest, Split split,
                 int batch_pairs = 10);

}  // namespace mcnet
