#pragma once

#include <map>
#include <optional>
#include <string>

#include "mcnet/filters.hpp"
#include "mcnet/ops.hpp"
#include "mcnet/optim.hpp"

namespace mcnet {

enum class Preproc { none, kv, srm, gabor, learned_dn };
enum class Activation { sigmoid, tanh, relu, prelu, tanh_then_relu };
enum class DnInit { kaiming, srm, gabor };

std::string preproc_name(Preproc p);
Preproc preproc_from(const std::string& s);
std::string activation_name(Activation a);
Activation activation_from(const std::string& s);
std::string dn_init_name(DnInit d);
DnInit dn_init_from(const std::string& s);

/// Declarative description of a detector variant; every ablation axis is a
/// field here.
struct ModelConfig {
  Preproc preprocessing = Preproc::learned_dn;
  int dn_filters = 30;
  int dn_filter_size = 5;
  DnInit dn_init = DnInit::srm;
  int depth = 6;  // number of conv blocks incl. the 1x1 head
  std::vector<int> kernel_set = {1, 3, 5};
  int branch_width = 32;
  int head_channels = 256;
  Activation activation = Activation::prelu;
  bool attention = true;
  int input_size = 256;
  std::vector<int> abs_blocks = {1};

  bool operator==(const ModelConfig&) const = default;

  void validate() const;  // throws UsageError on inconsistent settings
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);

  /// Small profile that runs the full pipeline in minutes on a CPU.
  static ModelConfig desk();
};

/// Spatial size reaching the attention layer / head block; the pooling
/// schedule applies four 3x3 stride-2 stages regardless of depth.
int attention_spatial(const ModelConfig& config);

// ---------------------------------------------------------------------------

template <typename T>
struct ConvLayer {
  Parameter<T> weight, bias;
  int stride = 1, padding = 0;

  Tensor<T> operator()(const Tensor<T>& x, ConvAlgo algo) const {
    return conv2d(x, weight.tensor, bias.tensor, stride, padding, algo);
  }
  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&weight);
    if (bias.tensor.defined()) out.push_back(&bias);
  }
};

template <typename T>
struct BnLayer {
  Parameter<T> gamma, beta;
  BnStats<T> stats;

  Tensor<T> operator()(const Tensor<T>& x, bool train) {
    return batch_norm(x, gamma.tensor, beta.tensor, stats, train);
  }
  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

/// Query/key projections to C/8 channels, value to C; out = gamma * (V A^T)
/// + x with A the rowwise softmax of Q^T K over spatial positions. gamma
/// starts at 0 so the layer opens as an exact identity.
template <typename T>
struct SelfAttention {
  ConvLayer<T> query, key, value;
  Parameter<T> gamma;

  Tensor<T> operator()(const Tensor<T>& x, ConvAlgo algo,
                       Tensor<T>* attention_out = nullptr) const;
  void collect(std::vector<Parameter<T>*>& out) {
    query.collect(out);
    key.collect(out);
    value.collect(out);
    out.push_back(&gamma);
  }
};

/// Two plain convolutions (dn_filters kernels then a single kernel); the
/// classifier consumes the first layer's feature maps, the second produces
/// the residual estimate used as the training target path.
template <typename T>
struct DenoiserNet {
  ModelConfig config;
  ConvLayer<T> layer1, layer2;

  Tensor<T> features(const Tensor<T>& x, ConvAlgo algo = ConvAlgo::im2col) const {
    return layer1(x, algo);
  }
  Tensor<T> residual(const Tensor<T>& x, ConvAlgo algo = ConvAlgo::im2col) const {
    return layer2(layer1(x, algo), algo);
  }
  std::vector<Parameter<T>*> parameters();
};

template <typename T>
DenoiserNet<T> build_denoiser(const ModelConfig& config, uint64_t seed);

template <typename T>
struct McNetBlock {
  std::vector<ConvLayer<T>> branches;  // one per kernel size; head has one 1x1
  BnLayer<T> bn;
  Parameter<T> prelu_alpha;  // defined only when this block activates with PReLU
  Activation act = Activation::prelu;
  bool use_abs = false;
  int pools_after = 0;
  int out_channels = 0;
};

template <typename T>
class McNet {
 public:
  ModelConfig config;

  Tensor<T> fixed_bank_weight;  // kv/srm/gabor preprocessing (not trainable)
  ConvLayer<T> dn_layer;        // learned_dn preprocessing
  std::vector<McNetBlock<T>> blocks;
  SelfAttention<T> attn;
  Parameter<T> fc_weight, fc_bias;

  /// images [N,1,S,S] -> class probabilities [N,2] (rows sum to 1).
  Tensor<T> forward(const Tensor<T>& images, bool train, ConvAlgo algo = ConvAlgo::im2col);

  /// Output of the preprocessing stage (the residual feature tap).
  Tensor<T> preprocess(const Tensor<T>& images, ConvAlgo algo = ConvAlgo::im2col) const;

  std::vector<Parameter<T>*> parameters();
  std::vector<Parameter<T>*> trainable_parameters();

  /// Split training keeps the learned denoiser kernels fixed; end-to-end
  /// training lets them move.
  void set_dn_frozen(bool frozen);
  bool has_dn() const { return config.preprocessing == Preproc::learned_dn; }

  int block_out_channels(int block_index_1based) const;
};

template <typename T>
McNet<T> build_mcnet(const ModelConfig& config, uint64_t seed);

// ---------------------------------------------------------------------------
// Checkpoints: "MCNT1" magic, text manifest (name, shape, offset), raw
// little-endian f32 payloads, trailing CRC32.

struct NamedTensorData {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string kind;  // "mcnet" or "dn"
  ModelConfig config;
  int64_t epoch = 0;
  uint64_t seed = 0;
  double best_val_metric = 0.0;
  std::vector<NamedTensorData> tensors;
  std::map<std::string, std::string> extras;  // optimizer step counters etc.

  const NamedTensorData* find(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

/// Serializes parameters, optimizer state and BN running statistics.
Checkpoint snapshot(McNet<float>& net);
Checkpoint snapshot(DenoiserNet<float>& net);

/// strict restore: configs must match exactly; optimizer state and BN stats
/// come back too. transfer: copies parameters and BN stats into a same-
/// architecture net but resets optimizer state and the epoch counter.
void restore(McNet<float>& net, const Checkpoint& ckpt, bool transfer = false);
void restore(DenoiserNet<float>& net, const Checkpoint& ckpt, bool transfer = false);

/// Loads the denoiser's first-layer kernels into a learned_dn classifier.
void load_dn_into(McNet<float>& net, const Checkpoint& dn_ckpt);

extern template struct DenoiserNet<float>;
extern template struct DenoiserNet<double>;
extern template class McNet<float>;
extern template class McNet<double>;

}  // namespace mcnet
