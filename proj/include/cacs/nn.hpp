#pragma once

#include <array>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cacs/tensor.hpp"

namespace cacs::nn {

enum class Mode { train, eval };

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// ---------------------------------------------------------------------------
// Layers

struct Conv2d {
  Tensor weight;  // [out_ch, in_ch, k, k]
  Tensor bias;    // [out_ch]
  Index stride = 1;
  Index dilation = 1;
  Index padding = 0;

  Index out_channels() const { return weight.shape()[0]; }
  Index in_channels() const { return weight.shape()[1]; }
  Index kernel() const { return weight.shape()[2]; }
};

Conv2d make_conv2d(std::mt19937_64& rng, Index in_ch, Index out_ch, Index kernel,
                   Index stride = 1, Index dilation = 1, Index padding = 0,
                   double init_stddev = 0.01);

/// Cross-correlation with dilation and zero padding over [N,C,H,W].
/// out dims: floor((H + 2*pad - dilation*(k-1) - 1)/stride) + 1.
Tensor conv2d(const Tensor& x, const Conv2d& layer);

/// Fixed kernel-2 stride-2 transposed convolution: doubles spatial dims.
/// Weight layout [in_ch, out_ch, 2, 2]; the adjoint of a stride-2 conv.
struct ConvTranspose2d {
  Tensor weight;
  Tensor bias;

  Index in_channels() const { return weight.shape()[0]; }
  Index out_channels() const { return weight.shape()[1]; }
};

ConvTranspose2d make_conv_transpose2d(std::mt19937_64& rng, Index in_ch, Index out_ch,
                                      double init_stddev = 0.01);
Tensor conv_transpose2d(const Tensor& x, const ConvTranspose2d& layer);

/// Per-channel batch normalization. Train mode normalizes by batch statistics
/// (biased variance) and folds them into the running buffers with
/// keep-fraction `momentum`; eval mode uses the running buffers only.
struct BatchNorm2d {
  Tensor gamma;
  Tensor beta;
  Array running_mean;
  Array running_var;
  double eps = 1e-5;
  double momentum = 0.9;

  Index channels() const { return gamma.shape()[0]; }
};

BatchNorm2d make_batchnorm2d(Index channels, double eps = 1e-5, double momentum = 0.9);
Tensor batchnorm(const Tensor& x, BatchNorm2d& layer, Mode mode);

/// 2x2 mean pooling with stride 2; spatial dims must be even.
Tensor avg_pool2d(const Tensor& x);

// ---------------------------------------------------------------------------
// Blocks

/// BN -> ReLU -> 3x3 conv producing growth_rate channels; every layer sees
/// the concat of the block input and all previous layer outputs.
struct DenseLayer {
  BatchNorm2d bn;
  Conv2d conv;
};

struct DenseBlock {
  std::vector<DenseLayer> layers;
  Index in_channels = 0;
  Index growth_rate = 0;

  Index out_channels() const {
    return in_channels + static_cast<Index>(layers.size()) * growth_rate;
  }
};

DenseBlock make_dense_block(std::mt19937_64& rng, Index in_ch, Index n_layers, Index growth_rate,
                            double init_stddev = 0.01);
Tensor dense_block(const Tensor& x, DenseBlock& block, Mode mode);

/// BN -> ReLU -> 1x1 conv -> 2x2 mean pool; the downsampling step between
/// encoder stages.
struct TransitionDown {
  BatchNorm2d bn;
  Conv2d conv;
};

TransitionDown make_transition(std::mt19937_64& rng, Index in_ch, Index out_ch,
                               double init_stddev = 0.01);
Tensor transition_down(const Tensor& x, TransitionDown& t, Mode mode);

/// Residual block over three parallel 3x3 dilated convolutions (spatial
/// preserving: padding == dilation), each producing C/2 channels, rejoined by
/// a 1x1 projection back to C channels and added to the input.
struct ResidualAtrousUnit {
  std::array<Conv2d, 3> branches;
  Conv2d proj;
  std::array<Index, 3> dilations{2, 4, 8};
};

ResidualAtrousUnit make_rau(std::mt19937_64& rng, Index channels,
                            std::array<Index, 3> dilations = {2, 4, 8},
                            double init_stddev = 0.01);
Tensor rau(const Tensor& x, const ResidualAtrousUnit& unit);

/// Concurrent channel and spatial recalibration. Channel gate: global mean
/// pool -> FC(C -> C/r) -> ReLU -> FC(C/r -> C) -> sigmoid. Spatial gate: 1x1
/// conv to one channel -> sigmoid. Output is the elementwise max of the two
/// gated maps.
struct ScSeBlock {
  Tensor fc1_weight;  // [C, C/r]
  Tensor fc1_bias;    // [C/r]
  Tensor fc2_weight;  // [C/r, C]
  Tensor fc2_bias;    // [C]
  Conv2d spatial;     // C -> 1, 1x1
};

ScSeBlock make_scse(std::mt19937_64& rng, Index channels, Index reduction = 2,
                    double init_stddev = 0.01);
Tensor scse(const Tensor& x, const ScSeBlock& block);

/// Two-layer dense block followed by a 1x1 projection back to the input
/// channel count; extra nonlinearity for the highest-resolution skip.
struct ExtraDenseBlock {
  DenseBlock block;
  Conv2d proj;
};

ExtraDenseBlock make_edb(std::mt19937_64& rng, Index channels, Index growth_rate,
                         double init_stddev = 0.01);
Tensor edb(const Tensor& x, ExtraDenseBlock& block, Mode mode);

/// Upsample (transposed conv) -> concat with the skip -> two conv/BN/ReLU
/// stages -> scSE. Output lands at the skip's resolution and width.
struct DecoderModule {
  ConvTranspose2d up;
  Conv2d conv1;
  BatchNorm2d bn1;
  Conv2d conv2;
  BatchNorm2d bn2;
  ScSeBlock se;
};

DecoderModule make_decoder_module(std::mt19937_64& rng, Index in_ch, Index skip_ch, Index out_ch,
                                  Index scse_reduction = 2, double init_stddev = 0.01);
Tensor decoder_module(const Tensor& x, const Tensor& skip, DecoderModule& m, Mode mode);

// ---------------------------------------------------------------------------
// Full network

struct NetConfig {
  Index growth_rate = 4;
  std::array<Index, 3> stage_layers{2, 2, 2};
  Index base_channels = 8;
  Index input_channels = 9;
  std::array<Index, 3> rau_dilations{2, 4, 8};
  Index scse_reduction = 2;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;
  double init_stddev = 0.01;  // Gaussian weight init
};

/// Encoder: stride-1 stem conv, then three (dense block -> transition)
/// stages. Each stage's pre-pool feature feeds a lateral residual atrous
/// unit; the highest-resolution lateral additionally passes the extra dense
/// block. Decoder: three decoder modules consuming laterals deepest-first,
/// then a 1x1 conv + sigmoid head at input resolution.
struct DenseRauNet {
  NetConfig cfg;
  Conv2d stem;
  std::array<DenseBlock, 3> blocks;
  std::array<TransitionDown, 3> transitions;
  std::array<ResidualAtrousUnit, 3> raus;
  ExtraDenseBlock first_skip_edb;
  std::array<DecoderModule, 3> decoders;  // [0] consumes the deepest lateral
  Conv2d head;
};

DenseRauNet make_denseraunet(const NetConfig& cfg, std::mt19937_64& rng);

/// [N, 9, H, W] -> per-pixel foreground probability [N, 1, H, W].
/// H and W must be divisible by 8 (three 2x downsamples).
Tensor denseraunet_forward(DenseRauNet& net, const Tensor& stack, Mode mode);

std::vector<NamedParam> named_parameters(DenseRauNet& net);
std::vector<Tensor> parameters(DenseRauNet& net);
void zero_grad(std::vector<Tensor>& params);

/// Checkpoint container: magic line, tensor count, then per tensor a name
/// line, shape line, dtype line (float64) and raw little-endian payload.
/// Includes the BN running buffers so a reloaded net is inference-identical.
void save_checkpoint(DenseRauNet& net, const std::filesystem::path& path);
void load_checkpoint(DenseRauNet& net, const std::filesystem::path& path);

}  // namespace cacs::nn
