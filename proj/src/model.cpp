#include "mcnet/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mcnet {

std::string preproc_name(Preproc p) {
  switch (p) {
    case Preproc::none: return "none";
    case Preproc::kv: return "kv";
    case Preproc::srm: return "srm";
    case Preproc::gabor: return "gabor";
    default: return "learned_dn";
  }
}

Preproc preproc_from(const std::string& s) {
  if (s == "none") return Preproc::none;
  if (s == "kv") return Preproc::kv;
  if (s == "srm") return Preproc::srm;
  if (s == "gabor") return Preproc::gabor;
  if (s == "learned_dn" || s == "learned") return Preproc::learned_dn;
  throw UsageError("unknown preprocessing '" + s + "' (none|kv|srm|gabor|learned_dn)");
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::tanh_then_relu: return "tanh_then_relu";
    default: return "prelu";
  }
}

Activation activation_from(const std::string& s) {
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "prelu") return Activation::prelu;
  if (s == "tanh_then_relu") return Activation::tanh_then_relu;
  throw UsageError("unknown activation '" + s + "' (sigmoid|tanh|relu|prelu|tanh_then_relu)");
}

std::string dn_init_name(DnInit d) {
  switch (d) {
    case DnInit::kaiming: return "kaiming";
    case DnInit::gabor: return "gabor";
    default: return "srm";
  }
}

DnInit dn_init_from(const std::string& s) {
  if (s == "kaiming") return DnInit::kaiming;
  if (s == "srm") return DnInit::srm;
  if (s == "gabor") return DnInit::gabor;
  throw UsageError("unknown dn_init '" + s + "' (kaiming|srm|gabor)");
}

// ---------------------------------------------------------------------------

namespace {

// four pooling stages total: after blocks 2..min(depth-1,5), remainder
// stacked just before the head so attention always sees input_size/16
std::vector<int> pooling_schedule(const ModelConfig& c) {
  std::vector<int> pools(static_cast<size_t>(c.depth), 0);  // index = block-1
  int assigned = 0;
  for (int b = 2; b <= std::min(c.depth - 1, 5); ++b) {
    pools[static_cast<size_t>(b - 1)] = 1;
    ++assigned;
  }
  pools[static_cast<size_t>(c.depth - 2)] += 4 - assigned;
  return pools;
}

int pooled_size(int s, int pools) {
  for (int i = 0; i < pools; ++i) s = (s - 1) / 2 + 1;
  return s;
}

}  // namespace

int attention_spatial(const ModelConfig& config) { return pooled_size(config.input_size, 4); }

void ModelConfig::validate() const {
  if (kernel_set.empty()) throw UsageError("config: kernel_set must be non-empty");
  for (int k : kernel_set)
    if (k != 1 && k != 3 && k != 5) throw UsageError("config: kernel_set entries must be 1, 3 or 5");
  if (depth < 2 || depth > 8) throw UsageError("config: depth must be in [2,8]");
  if (branch_width < 1) throw UsageError("config: branch_width must be positive");
  if (head_channels < branch_width)
    throw UsageError("config: head_channels must be >= branch_width");
  if (input_size < 16) throw UsageError("config: input_size must be >= 16");
  if (preprocessing == Preproc::learned_dn) {
    bool ok_n = dn_filters == 16 || dn_filters == 30 || dn_filters == 32 || dn_filters == 64;
    bool ok_s = dn_filter_size == 3 || dn_filter_size == 5;
    if (!ok_n || !ok_s)
      throw UsageError("config: dn_filters must be one of {16,30,32,64} and dn_filter_size 3 or 5");
    if ((dn_init == DnInit::srm || dn_init == DnInit::gabor) &&
        (dn_filters != 30 || dn_filter_size != 5))
      throw UsageError("config: " + dn_init_name(dn_init) +
                       " init needs 30 filters of size 5 (got " + std::to_string(dn_filters) +
                       " of size " + std::to_string(dn_filter_size) + ")");
  }
  for (int b : abs_blocks)
    if (b < 1 || b > depth) throw UsageError("config: abs_blocks entries must be in [1,depth]");
  if (attention) {
    if (head_channels % 8 != 0) throw UsageError("config: attention needs head_channels divisible by 8");
    if (attention_spatial(*this) < 2)
      throw UsageError("config: attention at spatial size " +
                       std::to_string(attention_spatial(*this)) + " < 2; increase input_size");
  }
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.input_size = 64;
  c.branch_width = 8;
  return c;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "preprocessing=" << preproc_name(preprocessing) << "\n";
  os << "dn_filters=" << dn_filters << "\n";
  os << "dn_filter_size=" << dn_filter_size << "\n";
  os << "dn_init=" << dn_init_name(dn_init) << "\n";
  os << "depth=" << depth << "\n";
  os << "kernel_set=" << join_ints(kernel_set) << "\n";
  os << "branch_width=" << branch_width << "\n";
  os << "head_channels=" << head_channels << "\n";
  os << "activation=" << activation_name(activation) << "\n";
  os << "attention=" << (attention ? 1 : 0) << "\n";
  os << "input_size=" << input_size << "\n";
  os << "abs_blocks=" << join_ints(abs_blocks) << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw RuntimeFail("config text: bad line '" + line + "'");
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "preprocessing") c.preprocessing = preproc_from(val);
    else if (key == "dn_filters") c.dn_filters = std::stoi(val);
    else if (key == "dn_filter_size") c.dn_filter_size = std::stoi(val);
    else if (key == "dn_init") c.dn_init = dn_init_from(val);
    else if (key == "depth") c.depth = std::stoi(val);
    else if (key == "kernel_set") c.kernel_set = split_ints(val);
    else if (key == "branch_width") c.branch_width = std::stoi(val);
    else if (key == "head_channels") c.head_channels = std::stoi(val);
    else if (key == "activation") c.activation = activation_from(val);
    else if (key == "attention") c.attention = val == "1" || val == "true";
    else if (key == "input_size") c.input_size = std::stoi(val);
    else if (key == "abs_blocks") c.abs_blocks = split_ints(val);
    else throw RuntimeFail("config text: unknown key '" + key + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> SelfAttention<T>::operator()(const Tensor<T>& x, ConvAlgo algo,
                                       Tensor<T>* attention_out) const {
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto q = query(x, algo);
  auto k = key(x, algo);
  auto v = value(x, algo);
  auto qf = reshape(q, {N, C / 8, H * W});
  auto kf = reshape(k, {N, C / 8, H * W});
  auto vf = reshape(v, {N, C, H * W});
  auto energy = bmm(qf, kf, true, false);  // [N,HW,HW], row i holds q_i . k_j
  auto attention = softmax_rows(energy);
  if (attention_out) *attention_out = attention;
  auto o = bmm(vf, attention, false, true);  // position i mixes values by its row
  return add(scale_by(reshape(o, {N, C, H, W}), gamma.tensor), x);
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
ConvLayer<T> make_conv(const std::string& name, int64_t out_ch, int64_t in_ch, int k,
                       InitKind init, uint64_t seed, int stride, int padding, bool with_bias,
                       bool trainable) {
  ConvLayer<T> layer;
  layer.stride = stride;
  layer.padding = padding;
  layer.weight.name = name + ".weight";
  layer.weight.tensor = random_init<T>({out_ch, in_ch, k, k}, init, seed);
  layer.weight.tensor.set_requires_grad(trainable);
  if (with_bias) {
    layer.bias.name = name + ".bias";
    layer.bias.tensor = Tensor<T>::zeros({out_ch}, trainable);
  }
  return layer;
}

template <typename T>
void init_bn(BnLayer<T>& bn, const std::string& name, int64_t channels) {
  bn.gamma.name = name + ".gamma";
  bn.gamma.tensor = Tensor<T>::full({channels}, T(1), true);
  bn.beta.name = name + ".beta";
  bn.beta.tensor = Tensor<T>::zeros({channels}, true);
}

template <typename T>
Tensor<T> dn_init_weight(const ModelConfig& c, uint64_t seed) {
  switch (c.dn_init) {
    case DnInit::srm: return srm_bank().to_weight<T>();
    case DnInit::gabor: return gabor_bank().to_weight<T>();
    default:
      return random_init<T>({c.dn_filters, 1, c.dn_filter_size, c.dn_filter_size},
                            InitKind::kaiming, seed);
  }
}

}  // namespace

template <typename T>
std::vector<Parameter<T>*> DenoiserNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  layer1.collect(out);
  layer2.collect(out);
  return out;
}

template <typename T>
DenoiserNet<T> build_denoiser(const ModelConfig& config, uint64_t seed) {
  ModelConfig c = config;
  c.preprocessing = Preproc::learned_dn;
  c.validate();
  DenoiserNet<T> net;
  net.config = c;
  int pad = (c.dn_filter_size - 1) / 2;

  net.layer1.stride = 1;
  net.layer1.padding = pad;
  net.layer1.weight.name = "dn.layer1.weight";
  net.layer1.weight.tensor = dn_init_weight<T>(c, derive_seed(seed, {kSeedInit, 0}));
  net.layer1.weight.tensor.set_requires_grad(true);
  net.layer1.bias.name = "dn.layer1.bias";
  net.layer1.bias.tensor = Tensor<T>::zeros({c.dn_filters}, true);

  net.layer2 = make_conv<T>("dn.layer2", 1, c.dn_filters, c.dn_filter_size, InitKind::kaiming,
                            derive_seed(seed, {kSeedInit, 1}), 1, pad, true, true);
  return net;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> McNet<T>::preprocess(const Tensor<T>& images, ConvAlgo algo) const {
  switch (config.preprocessing) {
    case Preproc::none: return images;
    case Preproc::learned_dn: return dn_layer(images, algo);
    default: return conv2d(images, fixed_bank_weight, Tensor<T>(), 1, 2, algo);
  }
}

template <typename T>
Tensor<T> McNet<T>::forward(const Tensor<T>& images, bool train, ConvAlgo algo) {
  if (images.ndim() != 4 || images.dim(1) != 1 || images.dim(2) != config.input_size ||
      images.dim(3) != config.input_size)
    throw RuntimeFail("forward: expected [N,1," + std::to_string(config.input_size) + "," +
                      std::to_string(config.input_size) + "], got " + shape_str(images.shape()));

  Tensor<T> x = preprocess(images, algo);
  for (size_t bi = 0; bi < blocks.size(); ++bi) {
    McNetBlock<T>& block = blocks[bi];
    Tensor<T> y;
    if (block.branches.size() == 1) {
      y = block.branches[0](x, algo);
    } else {
      std::vector<Tensor<T>> outs;
      outs.reserve(block.branches.size());
      for (const auto& br : block.branches) outs.push_back(br(x, algo));
      y = concat_channels(outs);
    }
    if (block.use_abs) y = abs_op(y);
    y = block.bn(y, train);
    switch (block.act) {
      case Activation::sigmoid: y = sigmoid(y); break;
      case Activation::tanh: y = tanh_act(y); break;
      case Activation::relu: y = relu(y); break;
      case Activation::prelu: y = prelu(y, block.prelu_alpha.tensor); break;
      default: throw RuntimeFail("forward: unresolved per-block activation");
    }
    for (int p = 0; p < block.pools_after; ++p) y = avg_pool(y, 3, 2, 1);
    x = y;
  }
  if (config.attention) x = attn(x, algo);
  auto pooled = global_avg_pool(x);
  auto logits = fully_connected(pooled, fc_weight.tensor, fc_bias.tensor);
  return softmax_rows(logits);
}

template <typename T>
std::vector<Parameter<T>*> McNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  if (has_dn()) dn_layer.collect(out);
  for (auto& block : blocks) {
    for (auto& br : block.branches) br.collect(out);
    block.bn.collect(out);
    if (block.prelu_alpha.tensor.defined()) out.push_back(&block.prelu_alpha);
  }
  if (config.attention) attn.collect(out);
  out.push_back(&fc_weight);
  out.push_back(&fc_bias);
  return out;
}

template <typename T>
std::vector<Parameter<T>*> McNet<T>::trainable_parameters() {
  std::vector<Parameter<T>*> out;
  for (Parameter<T>* p : parameters())
    if (p->trainable()) out.push_back(p);
  return out;
}

template <typename T>
void McNet<T>::set_dn_frozen(bool frozen) {
  if (!has_dn()) return;
  dn_layer.weight.tensor.set_requires_grad(!frozen);
  if (dn_layer.bias.tensor.defined()) dn_layer.bias.tensor.set_requires_grad(!frozen);
}

template <typename T>
int McNet<T>::block_out_channels(int block_index_1based) const {
  return blocks[static_cast<size_t>(block_index_1based - 1)].out_channels;
}

template <typename T>
McNet<T> build_mcnet(const ModelConfig& config, uint64_t seed) {
  config.validate();
  McNet<T> net;
  net.config = config;

  int in_ch = 1;
  switch (config.preprocessing) {
    case Preproc::none: break;
    case Preproc::kv:
      net.fixed_bank_weight = kv_kernel().to_weight<T>();
      in_ch = 1;
      break;
    case Preproc::srm:
      net.fixed_bank_weight = srm_bank().to_weight<T>();
      in_ch = 30;
      break;
    case Preproc::gabor:
      net.fixed_bank_weight = gabor_bank().to_weight<T>();
      in_ch = 30;
      break;
    case Preproc::learned_dn: {
      int pad = (config.dn_filter_size - 1) / 2;
      net.dn_layer.stride = 1;
      net.dn_layer.padding = pad;
      net.dn_layer.weight.name = "dn.layer1.weight";
      net.dn_layer.weight.tensor = dn_init_weight<T>(config, derive_seed(seed, {kSeedInit, 1000}));
      net.dn_layer.weight.tensor.set_requires_grad(false);  // split training default
      net.dn_layer.bias.name = "dn.layer1.bias";
      net.dn_layer.bias.tensor = Tensor<T>::zeros({config.dn_filters}, false);
      in_ch = config.dn_filters;
      break;
    }
  }

  auto pools = pooling_schedule(config);
  uint64_t stream = 0;
  auto next_seed = [&] { return derive_seed(seed, {kSeedInit, ++stream}); };

  auto block_activation = [&](int index1) {
    if (config.activation != Activation::tanh_then_relu) return config.activation;
    return index1 <= 2 ? Activation::tanh : Activation::relu;
  };

  for (int b = 1; b <= config.depth; ++b) {
    McNetBlock<T> block;
    std::string bname = "block" + std::to_string(b);
    bool head = b == config.depth;
    if (head) {
      block.branches.push_back(make_conv<T>(bname + ".conv1x1", config.head_channels, in_ch, 1,
                                            InitKind::xavier, next_seed(), 1, 0, true, true));
      block.out_channels = config.head_channels;
    } else {
      for (int k : config.kernel_set)
        block.branches.push_back(make_conv<T>(
            bname + ".b" + std::to_string(k) + "x" + std::to_string(k), config.branch_width, in_ch,
            k, InitKind::xavier, next_seed(), 1, (k - 1) / 2, true, true));
      block.out_channels = config.branch_width * static_cast<int>(config.kernel_set.size());
    }
    block.use_abs =
        std::find(config.abs_blocks.begin(), config.abs_blocks.end(), b) != config.abs_blocks.end();
    init_bn(block.bn, bname + ".bn", block.out_channels);
    block.act = block_activation(b);
    if (block.act == Activation::prelu) {
      block.prelu_alpha.name = bname + ".alpha";
      block.prelu_alpha.tensor = Tensor<T>::full({block.out_channels}, T(0.25), true);
    }
    block.pools_after = pools[static_cast<size_t>(b - 1)];
    in_ch = block.out_channels;
    net.blocks.push_back(std::move(block));
  }

  if (config.attention) {
    int64_t C = config.head_channels;
    net.attn.query = make_conv<T>("attn.query", C / 8, C, 1, InitKind::xavier, next_seed(), 1, 0,
                                  true, true);
    net.attn.key =
        make_conv<T>("attn.key", C / 8, C, 1, InitKind::xavier, next_seed(), 1, 0, true, true);
    net.attn.value =
        make_conv<T>("attn.value", C, C, 1, InitKind::xavier, next_seed(), 1, 0, true, true);
    net.attn.gamma.name = "attn.gamma";
    net.attn.gamma.tensor = Tensor<T>::zeros({1}, true);
  }

  net.fc_weight.name = "fc.weight";
  net.fc_weight.tensor =
      random_init<T>({2, config.head_channels}, InitKind::gaussian, next_seed(), 0.0, 0.01);
  net.fc_weight.tensor.set_requires_grad(true);
  net.fc_bias.name = "fc.bias";
  net.fc_bias.tensor = Tensor<T>::zeros({2}, true);
  return net;
}

// ---------------------------------------------------------------------------
// Checkpoint IO.

namespace {

constexpr char kMagic[] = "MCNT1";

void append_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t read_u32(const std::string& s, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

template <typename T>
void collect_state(std::vector<Parameter<T>*> params, std::vector<BnLayer<T>*> bns,
                   Checkpoint& ckpt) {
  for (Parameter<T>* p : params) {
    NamedTensorData t;
    t.name = p->name;
    t.shape = p->tensor.shape();
    t.data.assign(p->tensor.data(), p->tensor.data() + p->tensor.numel());
    ckpt.tensors.push_back(std::move(t));
    if (!p->m.empty()) {
      NamedTensorData m{"opt." + p->name + ".m", p->tensor.shape(), {}};
      m.data.assign(p->m.begin(), p->m.end());
      ckpt.tensors.push_back(std::move(m));
      NamedTensorData u{"opt." + p->name + ".u", p->tensor.shape(), {}};
      u.data.assign(p->u.begin(), p->u.end());
      ckpt.tensors.push_back(std::move(u));
    }
    if (p->t) ckpt.extras["opt." + p->name + ".t"] = std::to_string(p->t);
  }
  for (BnLayer<T>* bn : bns) {
    if (!bn->stats.initialized) continue;
    std::string base = bn->gamma.name.substr(0, bn->gamma.name.size() - 6);  // strip ".gamma"
    NamedTensorData rm{base + ".running_mean", {static_cast<int64_t>(bn->stats.mean.size())}, {}};
    rm.data.assign(bn->stats.mean.begin(), bn->stats.mean.end());
    ckpt.tensors.push_back(std::move(rm));
    NamedTensorData rv{base + ".running_var", {static_cast<int64_t>(bn->stats.var.size())}, {}};
    rv.data.assign(bn->stats.var.begin(), bn->stats.var.end());
    ckpt.tensors.push_back(std::move(rv));
  }
}

template <typename T>
void restore_state(std::vector<Parameter<T>*> params, std::vector<BnLayer<T>*> bns,
                   const Checkpoint& ckpt, bool transfer) {
  for (Parameter<T>* p : params) {
    const NamedTensorData* t = ckpt.find(p->name);
    if (!t) throw RuntimeFail("checkpoint missing tensor '" + p->name + "'");
    if (t->shape != p->tensor.shape())
      throw RuntimeFail("checkpoint tensor '" + p->name + "' has shape mismatch");
    std::copy(t->data.begin(), t->data.end(), p->tensor.data());
    p->reset_state();
    if (!transfer) {
      const NamedTensorData* m = ckpt.find("opt." + p->name + ".m");
      const NamedTensorData* u = ckpt.find("opt." + p->name + ".u");
      if (m && u) {
        p->m.assign(m->data.begin(), m->data.end());
        p->u.assign(u->data.begin(), u->data.end());
      }
      auto it = ckpt.extras.find("opt." + p->name + ".t");
      if (it != ckpt.extras.end()) p->t = std::stoll(it->second);
    }
  }
  for (BnLayer<T>* bn : bns) {
    std::string base = bn->gamma.name.substr(0, bn->gamma.name.size() - 6);
    const NamedTensorData* rm = ckpt.find(base + ".running_mean");
    const NamedTensorData* rv = ckpt.find(base + ".running_var");
    if (rm && rv) {
      bn->stats.mean.assign(rm->data.begin(), rm->data.end());
      bn->stats.var.assign(rv->data.begin(), rv->data.end());
      bn->stats.initialized = true;
    }
  }
}

std::vector<BnLayer<float>*> bn_layers(McNet<float>& net) {
  std::vector<BnLayer<float>*> out;
  for (auto& b : net.blocks) out.push_back(&b.bn);
  return out;
}

}  // namespace

const NamedTensorData* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ostringstream header;
  header << "kind=" << ckpt.kind << "\n";
  header << "epoch=" << ckpt.epoch << "\n";
  header << "seed=" << ckpt.seed << "\n";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", ckpt.best_val_metric);
  header << "best_val_metric=" << buf << "\n";
  std::istringstream cfg(ckpt.config.to_text());
  std::string line;
  while (std::getline(cfg, line)) header << "config." << line << "\n";
  for (const auto& [k, v] : ckpt.extras) header << "extra." << k << "=" << v << "\n";

  size_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    header << "tensor." << t.name << "=";
    for (size_t i = 0; i < t.shape.size(); ++i) header << (i ? "x" : "") << t.shape[i];
    header << ";" << offset << ";" << t.data.size() * sizeof(float) << "\n";
    offset += t.data.size() * sizeof(float);
  }

  std::string blob = header.str();
  std::string out;
  out.reserve(5 + 4 + blob.size() + offset + 4);
  out.append(kMagic, 5);
  append_u32(out, static_cast<uint32_t>(blob.size()));
  out += blob;
  for (const auto& t : ckpt.tensors) {
    size_t pos = out.size();
    out.resize(pos + t.data.size() * sizeof(float));
    std::memcpy(out.data() + pos, t.data.data(), t.data.size() * sizeof(float));
  }
  append_u32(out, crc32_bytes(out.data(), out.size()));

  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFail("cannot write checkpoint " + path);
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw RuntimeFail("checkpoint write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFail("cannot open checkpoint " + path);
  std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (data.size() < 13) throw RuntimeFail(path + ": truncated checkpoint");
  if (crc32_bytes(data.data(), data.size() - 4) != read_u32(data, data.size() - 4))
    throw RuntimeFail(path + ": checkpoint CRC mismatch (corrupt or truncated)");
  if (std::memcmp(data.data(), kMagic, 5) != 0)
    throw RuntimeFail(path + ": not a checkpoint file (bad magic)");
  uint32_t header_len = read_u32(data, 5);
  if (9 + static_cast<size_t>(header_len) + 4 > data.size())
    throw RuntimeFail(path + ": truncated checkpoint header");

  Checkpoint ckpt;
  std::string config_text;
  std::istringstream header(data.substr(9, header_len));
  size_t payload_base = 9 + header_len;
  std::string line;
  while (std::getline(header, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw RuntimeFail(path + ": bad header line '" + line + "'");
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "kind") ckpt.kind = val;
    else if (key == "epoch") ckpt.epoch = std::stoll(val);
    else if (key == "seed") ckpt.seed = std::stoull(val);
    else if (key == "best_val_metric") ckpt.best_val_metric = std::stod(val);
    else if (key.rfind("config.", 0) == 0) config_text += key.substr(7) + "=" + val + "\n";
    else if (key.rfind("extra.", 0) == 0) ckpt.extras[key.substr(6)] = val;
    else if (key.rfind("tensor.", 0) == 0) {
      NamedTensorData t;
      t.name = key.substr(7);
      auto semi1 = val.find(';');
      auto semi2 = val.find(';', semi1 + 1);
      if (semi1 == std::string::npos || semi2 == std::string::npos)
        throw RuntimeFail(path + ": bad tensor manifest line");
      std::string dims = val.substr(0, semi1);
      size_t off = std::stoull(val.substr(semi1 + 1, semi2 - semi1 - 1));
      size_t bytes = std::stoull(val.substr(semi2 + 1));
      std::istringstream ds(dims);
      std::string d;
      while (std::getline(ds, d, 'x')) t.shape.push_back(std::stoll(d));
      if (payload_base + off + bytes + 4 > data.size())
        throw RuntimeFail(path + ": tensor payload out of range");
      t.data.resize(bytes / sizeof(float));
      std::memcpy(t.data.data(), data.data() + payload_base + off, bytes);
      if (static_cast<int64_t>(t.data.size()) != shape_numel(t.shape))
        throw RuntimeFail(path + ": tensor '" + t.name + "' size/shape mismatch");
      ckpt.tensors.push_back(std::move(t));
    } else {
      throw RuntimeFail(path + ": unknown header key '" + key + "'");
    }
  }
  ckpt.config = ModelConfig::from_text(config_text);
  return ckpt;
}

Checkpoint snapshot(McNet<float>& net) {
  Checkpoint ckpt;
  ckpt.kind = "mcnet";
  ckpt.config = net.config;
  collect_state<float>(net.parameters(), bn_layers(net), ckpt);
  return ckpt;
}

Checkpoint snapshot(DenoiserNet<float>& net) {
  Checkpoint ckpt;
  ckpt.kind = "dn";
  ckpt.config = net.config;
  collect_state<float>(net.parameters(), {}, ckpt);
  return ckpt;
}

void restore(McNet<float>& net, const Checkpoint& ckpt, bool transfer) {
  if (ckpt.kind != "mcnet") throw RuntimeFail("checkpoint kind '" + ckpt.kind + "' is not mcnet");
  if (!(ckpt.config == net.config))
    throw RuntimeFail("checkpoint/model config mismatch:\n--- checkpoint\n" +
                      ckpt.config.to_text() + "--- model\n" + net.config.to_text());
  restore_state<float>(net.parameters(), bn_layers(net), ckpt, transfer);
}

void restore(DenoiserNet<float>& net, const Checkpoint& ckpt, bool transfer) {
  if (ckpt.kind != "dn") throw RuntimeFail("checkpoint kind '" + ckpt.kind + "' is not dn");
  if (!(ckpt.config == net.config))
    throw RuntimeFail("denoiser checkpoint/config mismatch");
  restore_state<float>(net.parameters(), {}, ckpt, transfer);
}

void load_dn_into(McNet<float>& net, const Checkpoint& dn_ckpt) {
  if (!net.has_dn())
    throw RuntimeFail("load_dn_into: model preprocessing is not learned_dn");
  if (dn_ckpt.kind != "dn") throw RuntimeFail("load_dn_into: checkpoint kind is not dn");
  const NamedTensorData* w = dn_ckpt.find("dn.layer1.weight");
  const NamedTensorData* b = dn_ckpt.find("dn.layer1.bias");
  if (!w || !b) throw RuntimeFail("load_dn_into: checkpoint lacks dn.layer1 tensors");
  if (w->shape != net.dn_layer.weight.tensor.shape())
    throw RuntimeFail("load_dn_into: denoiser shape mismatch (filters/size differ)");
  std::copy(w->data.begin(), w->data.end(), net.dn_layer.weight.tensor.data());
  std::copy(b->data.begin(), b->data.end(), net.dn_layer.bias.tensor.data());
}

template struct DenoiserNet<float>;
template struct DenoiserNet<double>;
template class McNet<float>;
template class McNet<double>;

template DenoiserNet<float> build_denoiser(const ModelConfig&, uint64_t);
template DenoiserNet<double> build_denoiser(const ModelConfig&, uint64_t);
template McNet<float> build_mcnet(const ModelConfig&, uint64_t);
template McNet<double> build_mcnet(const ModelConfig&, uint64_t);
template struct SelfAttention<float>;
template struct SelfAttention<double>;

}  // namespace mcnet
