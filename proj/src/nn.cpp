#include "cacs/nn.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "cacs/errors.hpp"

namespace cacs::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

Index conv_out_dim(Index in, Index kernel, Index stride, Index dilation, Index padding) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

// Patch matrix [C*k*k, OH*OW] for one sample; out-of-bounds reads are zero.
void im2col(const double* x, Index c_in, Index h, Index w, Index kernel, Index stride,
            Index dilation, Index padding, Index oh, Index ow, Eigen::MatrixXd& cols) {
  cols.setZero(c_in * kernel * kernel, oh * ow);
  for (Index c = 0; c < c_in; ++c) {
    for (Index ki = 0; ki < kernel; ++ki) {
      for (Index kj = 0; kj < kernel; ++kj) {
        const Index row = (c * kernel + ki) * kernel + kj;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride - padding + ki * dilation;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * stride - padding + kj * dilation;
            if (ix < 0 || ix >= w) continue;
            cols(row, oy * ow + ox) = x[(c * h + iy) * w + ix];
          }
        }
      }
    }
  }
}

void col2im_add(const Eigen::MatrixXd& cols, Index c_in, Index h, Index w, Index kernel,
                Index stride, Index dilation, Index padding, Index oh, Index ow, double* gx) {
  for (Index c = 0; c < c_in; ++c) {
    for (Index ki = 0; ki < kernel; ++ki) {
      for (Index kj = 0; kj < kernel; ++kj) {
        const Index row = (c * kernel + ki) * kernel + kj;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride - padding + ki * dilation;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * stride - padding + kj * dilation;
            if (ix < 0 || ix >= w) continue;
            gx[(c * h + iy) * w + ix] += cols(row, oy * ow + ox);
          }
        }
      }
    }
  }
}

Tensor reshape_per_channel(const Tensor& v, Index channels) {
  return reshape(v, {1, channels, 1, 1});
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d make_conv2d(std::mt19937_64& rng, Index in_ch, Index out_ch, Index kernel, Index stride,
                   Index dilation, Index padding, double init_stddev) {
  check(in_ch >= 1 && out_ch >= 1 && kernel >= 1, "conv dims must be positive");
  check(stride >= 1 && dilation >= 1 && padding >= 0, "conv geometry invalid");
  Conv2d layer;
  layer.weight = Tensor::randn({out_ch, in_ch, kernel, kernel}, rng, init_stddev);
  layer.weight.set_requires_grad(true);
  layer.bias = Tensor::zeros({out_ch});
  layer.bias.set_requires_grad(true);
  layer.stride = stride;
  layer.dilation = dilation;
  layer.padding = padding;
  return layer;
}

Tensor conv2d(const Tensor& x, const Conv2d& layer) {
  check(x.ndim() == 4, "conv2d expects [N,C,H,W]");
  const Index n = x.shape()[0], c_in = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  check(c_in == layer.in_channels(),
        "conv2d channel mismatch: input has " + std::to_string(c_in) + ", layer expects " +
            std::to_string(layer.in_channels()));
  const Index k = layer.kernel(), stride = layer.stride, dil = layer.dilation,
              pad = layer.padding;
  const Index oh = conv_out_dim(h, k, stride, dil, pad);
  const Index ow = conv_out_dim(w, k, stride, dil, pad);
  check(oh >= 1 && ow >= 1, "conv2d output would be empty");
  const Index oc = layer.out_channels();

  Array out(n * oc * oh * ow);
  Eigen::MatrixXd cols;
  Eigen::Map<const RowMat> wmat(layer.weight.values().data(), oc, c_in * k * k);
  for (Index s = 0; s < n; ++s) {
    im2col(x.values().data() + s * c_in * h * w, c_in, h, w, k, stride, dil, pad, oh, ow, cols);
    RowMat prod = wmat * cols;
    prod.array().colwise() +=
        Eigen::Map<const Eigen::VectorXd>(layer.bias.values().data(), oc).array();
    std::copy_n(prod.data(), oc * oh * ow, out.data() + s * oc * oh * ow);
  }

  auto xn = x.node();
  auto wn = layer.weight.node();
  auto bn = layer.bias.node();
  auto backward = [xn, wn, bn, n, c_in, h, w, k, stride, dil, pad, oh, ow, oc](
                      const Array& flow, const std::vector<Array*>& pf) {
    Eigen::MatrixXd cols;
    Eigen::Map<const RowMat> wmat(wn->values.data(), oc, c_in * k * k);
    for (Index s = 0; s < n; ++s) {
      Eigen::Map<const RowMat> g(flow.data() + s * oc * oh * ow, oc, oh * ow);
      if (pf[0] != nullptr || pf[1] != nullptr) {
        im2col(xn->values.data() + s * c_in * h * w, c_in, h, w, k, stride, dil, pad, oh, ow,
               cols);
      }
      if (pf[1] != nullptr) {
        Eigen::Map<RowMat>(pf[1]->data(), oc, c_in * k * k) += g * cols.transpose();
      }
      if (pf[0] != nullptr) {
        const Eigen::MatrixXd gcols = wmat.transpose() * g;
        col2im_add(gcols, c_in, h, w, k, stride, dil, pad, oh, ow,
                   pf[0]->data() + s * c_in * h * w);
      }
      if (pf[2] != nullptr) {
        Eigen::Map<Eigen::VectorXd>(pf[2]->data(), oc) += g.rowwise().sum();
      }
    }
  };
  return make_op({n, oc, oh, ow}, std::move(out), {x, layer.weight, layer.bias},
                 std::move(backward));
}

// ---------------------------------------------------------------------------
// ConvTranspose2d (kernel 2, stride 2)

ConvTranspose2d make_conv_transpose2d(std::mt19937_64& rng, Index in_ch, Index out_ch,
                                      double init_stddev) {
  check(in_ch >= 1 && out_ch >= 1, "conv_transpose dims must be positive");
  ConvTranspose2d layer;
  layer.weight = Tensor::randn({in_ch, out_ch, 2, 2}, rng, init_stddev);
  layer.weight.set_requires_grad(true);
  layer.bias = Tensor::zeros({out_ch});
  layer.bias.set_requires_grad(true);
  return layer;
}

Tensor conv_transpose2d(const Tensor& x, const ConvTranspose2d& layer) {
  check(x.ndim() == 4, "conv_transpose2d expects [N,C,H,W]");
  const Index n = x.shape()[0], c_in = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  check(c_in == layer.in_channels(), "conv_transpose2d channel mismatch");
  const Index oc = layer.out_channels(), oh = 2 * h, ow = 2 * w;

  const Array& wv = layer.weight.values();
  const Array& bv = layer.bias.values();
  Array out(n * oc * oh * ow);
  for (Index s = 0; s < n; ++s) {
    for (Index o = 0; o < oc; ++o) {
      double* dst = out.data() + (s * oc + o) * oh * ow;
      std::fill_n(dst, oh * ow, bv[o]);
    }
    for (Index c = 0; c < c_in; ++c) {
      const double* src = x.values().data() + (s * c_in + c) * h * w;
      for (Index o = 0; o < oc; ++o) {
        double* dst = out.data() + (s * oc + o) * oh * ow;
        const double* ker = wv.data() + (c * oc + o) * 4;
        for (Index i = 0; i < h; ++i) {
          for (Index j = 0; j < w; ++j) {
            const double v = src[i * w + j];
            dst[(2 * i) * ow + 2 * j] += v * ker[0];
            dst[(2 * i) * ow + 2 * j + 1] += v * ker[1];
            dst[(2 * i + 1) * ow + 2 * j] += v * ker[2];
            dst[(2 * i + 1) * ow + 2 * j + 1] += v * ker[3];
          }
        }
      }
    }
  }

  auto xn = x.node();
  auto wn = layer.weight.node();
  auto backward = [xn, wn, n, c_in, h, w, oc, oh, ow](const Array& flow,
                                                      const std::vector<Array*>& pf) {
    for (Index s = 0; s < n; ++s) {
      for (Index c = 0; c < c_in; ++c) {
        const double* src = xn->values.data() + (s * c_in + c) * h * w;
        for (Index o = 0; o < oc; ++o) {
          const double* g = flow.data() + (s * oc + o) * oh * ow;
          const double* ker = wn->values.data() + (c * oc + o) * 4;
          double* gx = pf[0] ? pf[0]->data() + (s * c_in + c) * h * w : nullptr;
          double* gw = pf[1] ? pf[1]->data() + (c * oc + o) * 4 : nullptr;
          for (Index i = 0; i < h; ++i) {
            for (Index j = 0; j < w; ++j) {
              const double g00 = g[(2 * i) * ow + 2 * j];
              const double g01 = g[(2 * i) * ow + 2 * j + 1];
              const double g10 = g[(2 * i + 1) * ow + 2 * j];
              const double g11 = g[(2 * i + 1) * ow + 2 * j + 1];
              if (gx != nullptr) {
                gx[i * w + j] += g00 * ker[0] + g01 * ker[1] + g10 * ker[2] + g11 * ker[3];
              }
              if (gw != nullptr) {
                const double v = src[i * w + j];
                gw[0] += v * g00;
                gw[1] += v * g01;
                gw[2] += v * g10;
                gw[3] += v * g11;
              }
            }
          }
        }
      }
      if (pf[2] != nullptr) {
        for (Index o = 0; o < oc; ++o) {
          const double* g = flow.data() + (s * oc + o) * oh * ow;
          double acc = 0;
          for (Index i = 0; i < oh * ow; ++i) acc += g[i];
          (*pf[2])[o] += acc;
        }
      }
    }
  };
  return make_op({n, oc, oh, ow}, std::move(out), {x, layer.weight, layer.bias},
                 std::move(backward));
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm2d make_batchnorm2d(Index channels, double eps, double momentum) {
  check(channels >= 1, "batchnorm needs at least one channel");
  BatchNorm2d layer;
  layer.gamma = Tensor::ones({channels});
  layer.gamma.set_requires_grad(true);
  layer.beta = Tensor::zeros({channels});
  layer.beta.set_requires_grad(true);
  layer.running_mean = Array::Zero(channels);
  layer.running_var = Array::Ones(channels);
  layer.eps = eps;
  layer.momentum = momentum;
  return layer;
}

Tensor batchnorm(const Tensor& x, BatchNorm2d& layer, Mode mode) {
  check(x.ndim() == 4, "batchnorm expects [N,C,H,W]");
  const Index n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  check(c == layer.channels(), "batchnorm channel mismatch");

  const Tensor gamma_r = reshape_per_channel(layer.gamma, c);
  const Tensor beta_r = reshape_per_channel(layer.beta, c);

  if (mode == Mode::train) {
    check(n * h * w >= 2, "batchnorm train mode needs at least two values per channel");
    const Tensor mu = mean(x, {0, 2, 3}, true);
    const Tensor centered = x - mu;
    const Tensor var = mean(mul(centered, centered), {0, 2, 3}, true);
    const Tensor normalized = centered / sqrt(var + layer.eps);

    // fold batch statistics into the running buffers (values only, no grad)
    for (Index ch = 0; ch < c; ++ch) {
      layer.running_mean[ch] =
          layer.momentum * layer.running_mean[ch] + (1.0 - layer.momentum) * mu.at(ch);
      layer.running_var[ch] =
          layer.momentum * layer.running_var[ch] + (1.0 - layer.momentum) * var.at(ch);
    }
    return add(mul(gamma_r, normalized), beta_r);
  }

  const Tensor rm = Tensor::from_array({1, c, 1, 1}, layer.running_mean);
  const Tensor rv = Tensor::from_array({1, c, 1, 1}, layer.running_var);
  return add(mul(gamma_r, div(sub(x, rm), sqrt(rv + layer.eps))), beta_r);
}

// ---------------------------------------------------------------------------
// Pooling

Tensor avg_pool2d(const Tensor& x) {
  check(x.ndim() == 4, "avg_pool2d expects [N,C,H,W]");
  const Index n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  check(h % 2 == 0 && w % 2 == 0, "avg_pool2d needs even spatial dims");
  const Index oh = h / 2, ow = w / 2;

  Array out(n * c * oh * ow);
  const Array& xv = x.values();
  for (Index b = 0; b < n * c; ++b) {
    const double* src = xv.data() + b * h * w;
    double* dst = out.data() + b * oh * ow;
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        dst[i * ow + j] = 0.25 * (src[(2 * i) * w + 2 * j] + src[(2 * i) * w + 2 * j + 1] +
                                  src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1]);
      }
    }
  }

  auto backward = [n, c, h, w, oh, ow](const Array& flow, const std::vector<Array*>& pf) {
    if (pf[0] == nullptr) return;
    for (Index b = 0; b < n * c; ++b) {
      const double* g = flow.data() + b * oh * ow;
      double* gx = pf[0]->data() + b * h * w;
      for (Index i = 0; i < oh; ++i) {
        for (Index j = 0; j < ow; ++j) {
          const double v = 0.25 * g[i * ow + j];
          gx[(2 * i) * w + 2 * j] += v;
          gx[(2 * i) * w + 2 * j + 1] += v;
          gx[(2 * i + 1) * w + 2 * j] += v;
          gx[(2 * i + 1) * w + 2 * j + 1] += v;
        }
      }
    }
  };
  return make_op({n, c, oh, ow}, std::move(out), {x}, std::move(backward));
}

// ---------------------------------------------------------------------------
// Dense block and transition

DenseBlock make_dense_block(std::mt19937_64& rng, Index in_ch, Index n_layers, Index growth_rate,
                            double init_stddev) {
  check(n_layers >= 0 && growth_rate >= 1 && in_ch >= 1, "dense block config invalid");
  DenseBlock block;
  block.in_channels = in_ch;
  block.growth_rate = growth_rate;
  for (Index i = 0; i < n_layers; ++i) {
    const Index ch = in_ch + i * growth_rate;
    DenseLayer layer;
    layer.bn = make_batchnorm2d(ch);
    layer.conv = make_conv2d(rng, ch, growth_rate, 3, 1, 1, 1, init_stddev);
    block.layers.push_back(std::move(layer));
  }
  return block;
}

Tensor dense_block(const Tensor& x, DenseBlock& block, Mode mode) {
  check(x.shape()[1] == block.in_channels, "dense block channel mismatch");
  Tensor features = x;
  for (DenseLayer& layer : block.layers) {
    const Tensor h = conv2d(relu(batchnorm(features, layer.bn, mode)), layer.conv);
    features = concat(std::vector<Tensor>{features, h}, 1);
  }
  return features;
}

TransitionDown make_transition(std::mt19937_64& rng, Index in_ch, Index out_ch,
                               double init_stddev) {
  TransitionDown t;
  t.bn = make_batchnorm2d(in_ch);
  t.conv = make_conv2d(rng, in_ch, out_ch, 1, 1, 1, 0, init_stddev);
  return t;
}

Tensor transition_down(const Tensor& x, TransitionDown& t, Mode mode) {
  return avg_pool2d(conv2d(relu(batchnorm(x, t.bn, mode)), t.conv));
}

// ---------------------------------------------------------------------------
// Residual atrous unit

ResidualAtrousUnit make_rau(std::mt19937_64& rng, Index channels, std::array<Index, 3> dilations,
                            double init_stddev) {
  check(channels >= 2 && channels % 2 == 0,
        "residual atrous unit needs an even channel count, got " + std::to_string(channels));
  ResidualAtrousUnit unit;
  unit.dilations = dilations;
  const Index branch_ch = channels / 2;
  for (size_t i = 0; i < 3; ++i) {
    unit.branches[i] =
        make_conv2d(rng, channels, branch_ch, 3, 1, dilations[i], dilations[i], init_stddev);
  }
  unit.proj = make_conv2d(rng, 3 * branch_ch, channels, 1, 1, 1, 0, init_stddev);
  return unit;
}

Tensor rau(const Tensor& x, const ResidualAtrousUnit& unit) {
  std::vector<Tensor> branches;
  branches.reserve(3);
  for (const Conv2d& b : unit.branches) branches.push_back(conv2d(x, b));
  return add(x, conv2d(concat(branches, 1), unit.proj));
}

// ---------------------------------------------------------------------------
// scSE

ScSeBlock make_scse(std::mt19937_64& rng, Index channels, Index reduction, double init_stddev) {
  check(reduction >= 1 && channels >= reduction,
        "scse needs channels >= reduction, got " + std::to_string(channels) + " < " +
            std::to_string(reduction));
  ScSeBlock block;
  const Index hidden = channels / reduction;
  block.fc1_weight = Tensor::randn({channels, hidden}, rng, init_stddev);
  block.fc1_weight.set_requires_grad(true);
  block.fc1_bias = Tensor::zeros({hidden});
  block.fc1_bias.set_requires_grad(true);
  block.fc2_weight = Tensor::randn({hidden, channels}, rng, init_stddev);
  block.fc2_weight.set_requires_grad(true);
  block.fc2_bias = Tensor::zeros({channels});
  block.fc2_bias.set_requires_grad(true);
  block.spatial = make_conv2d(rng, channels, 1, 1, 1, 1, 0, init_stddev);
  return block;
}

Tensor scse(const Tensor& x, const ScSeBlock& block) {
  const Index n = x.shape()[0], c = x.shape()[1];
  const Tensor pooled = mean(x, {2, 3});  // [N, C]
  const Tensor hidden = relu(add(matmul(pooled, block.fc1_weight), block.fc1_bias));
  const Tensor channel_gate = sigmoid(add(matmul(hidden, block.fc2_weight), block.fc2_bias));
  const Tensor cse = mul(x, reshape(channel_gate, {n, c, 1, 1}));
  const Tensor sse = mul(x, sigmoid(conv2d(x, block.spatial)));
  return maximum(cse, sse);
}

// ---------------------------------------------------------------------------
// Extra dense block

ExtraDenseBlock make_edb(std::mt19937_64& rng, Index channels, Index growth_rate,
                         double init_stddev) {
  ExtraDenseBlock block;
  block.block = make_dense_block(rng, channels, 2, growth_rate, init_stddev);
  block.proj = make_conv2d(rng, block.block.out_channels(), channels, 1, 1, 1, 0, init_stddev);
  return block;
}

Tensor edb(const Tensor& x, ExtraDenseBlock& block, Mode mode) {
  return conv2d(dense_block(x, block.block, mode), block.proj);
}

// ---------------------------------------------------------------------------
// Decoder module

DecoderModule make_decoder_module(std::mt19937_64& rng, Index in_ch, Index skip_ch, Index out_ch,
                                  Index scse_reduction, double init_stddev) {
  DecoderModule m;
  m.up = make_conv_transpose2d(rng, in_ch, out_ch, init_stddev);
  m.conv1 = make_conv2d(rng, out_ch + skip_ch, out_ch, 3, 1, 1, 1, init_stddev);
  m.bn1 = make_batchnorm2d(out_ch);
  m.conv2 = make_conv2d(rng, out_ch, out_ch, 3, 1, 1, 1, init_stddev);
  m.bn2 = make_batchnorm2d(out_ch);
  m.se = make_scse(rng, out_ch, scse_reduction, init_stddev);
  return m;
}

Tensor decoder_module(const Tensor& x, const Tensor& skip, DecoderModule& m, Mode mode) {
  check(skip.shape()[2] == 2 * x.shape()[2] && skip.shape()[3] == 2 * x.shape()[3],
        "decoder skip resolution must be exactly twice the input resolution");
  const Tensor up = conv_transpose2d(x, m.up);
  Tensor h = concat(std::vector<Tensor>{up, skip}, 1);
  h = relu(batchnorm(conv2d(h, m.conv1), m.bn1, mode));
  h = relu(batchnorm(conv2d(h, m.conv2), m.bn2, mode));
  return scse(h, m.se);
}

// ---------------------------------------------------------------------------
// Full network

DenseRauNet make_denseraunet(const NetConfig& cfg, std::mt19937_64& rng) {
  check(cfg.input_channels == 9, "network input is a 9-slice stack");
  check(cfg.base_channels >= 2 && cfg.base_channels % 2 == 0,
        "base_channels must be even and >= 2");
  check(cfg.growth_rate >= 1 && cfg.growth_rate % 2 == 0, "growth_rate must be even and >= 1");

  DenseRauNet net;
  net.cfg = cfg;
  net.stem = make_conv2d(rng, cfg.input_channels, cfg.base_channels, 3, 1, 1, 1, cfg.init_stddev);

  Index ch = cfg.base_channels;
  std::array<Index, 3> lateral_ch{};
  for (size_t s = 0; s < 3; ++s) {
    net.blocks[s] = make_dense_block(rng, ch, cfg.stage_layers[s], cfg.growth_rate,
                                     cfg.init_stddev);
    const Index block_ch = net.blocks[s].out_channels();
    lateral_ch[s] = block_ch;
    net.raus[s] = make_rau(rng, block_ch, cfg.rau_dilations, cfg.init_stddev);
    if (s == 0) net.first_skip_edb = make_edb(rng, block_ch, cfg.growth_rate, cfg.init_stddev);
    const Index next_ch = block_ch / 2;
    net.transitions[s] = make_transition(rng, block_ch, next_ch, cfg.init_stddev);
    ch = next_ch;
  }

  // decoder widths mirror the skip they consume, deepest first
  Index dec_in = ch;
  for (size_t d = 0; d < 3; ++d) {
    const Index skip_ch = lateral_ch[2 - d];
    net.decoders[d] = make_decoder_module(rng, dec_in, skip_ch, skip_ch, cfg.scse_reduction,
                                          cfg.init_stddev);
    dec_in = skip_ch;
  }
  net.head = make_conv2d(rng, lateral_ch[0], 1, 1, 1, 1, 0, cfg.init_stddev);
  return net;
}

Tensor denseraunet_forward(DenseRauNet& net, const Tensor& stack, Mode mode) {
  check(stack.ndim() == 4, "network input must be [N,9,H,W]");
  check(stack.shape()[1] == net.cfg.input_channels, "network input must have 9 channels");
  const Index h = stack.shape()[2], w = stack.shape()[3];
  check(h % 8 == 0 && w % 8 == 0 && h >= 8 && w >= 8,
        "spatial dims must be divisible by 8, got " + shape_str(stack.shape()));

  Tensor features = conv2d(stack, net.stem);
  std::array<Tensor, 3> laterals;
  for (size_t s = 0; s < 3; ++s) {
    const Tensor block_out = dense_block(features, net.blocks[s], mode);
    Tensor lateral = rau(block_out, net.raus[s]);
    if (s == 0) lateral = edb(lateral, net.first_skip_edb, mode);
    laterals[s] = lateral;
    features = transition_down(block_out, net.transitions[s], mode);
  }

  Tensor decoded = features;
  for (size_t d = 0; d < 3; ++d) {
    decoded = decoder_module(decoded, laterals[2 - d], net.decoders[d], mode);
  }
  return sigmoid(conv2d(decoded, net.head));
}

// ---------------------------------------------------------------------------
// Parameter registry and checkpoints

namespace {

void collect_conv(std::vector<NamedParam>& out, const std::string& prefix, Conv2d& c) {
  out.push_back({prefix + ".weight", c.weight});
  out.push_back({prefix + ".bias", c.bias});
}

void collect_convt(std::vector<NamedParam>& out, const std::string& prefix, ConvTranspose2d& c) {
  out.push_back({prefix + ".weight", c.weight});
  out.push_back({prefix + ".bias", c.bias});
}

void collect_bn(std::vector<NamedParam>& out, const std::string& prefix, BatchNorm2d& bn) {
  out.push_back({prefix + ".gamma", bn.gamma});
  out.push_back({prefix + ".beta", bn.beta});
}

void collect_dense(std::vector<NamedParam>& out, const std::string& prefix, DenseBlock& block) {
  for (size_t i = 0; i < block.layers.size(); ++i) {
    const std::string lp = prefix + ".layer" + std::to_string(i);
    collect_bn(out, lp + ".bn", block.layers[i].bn);
    collect_conv(out, lp + ".conv", block.layers[i].conv);
  }
}

void collect_scse(std::vector<NamedParam>& out, const std::string& prefix, ScSeBlock& se) {
  out.push_back({prefix + ".fc1.weight", se.fc1_weight});
  out.push_back({prefix + ".fc1.bias", se.fc1_bias});
  out.push_back({prefix + ".fc2.weight", se.fc2_weight});
  out.push_back({prefix + ".fc2.bias", se.fc2_bias});
  collect_conv(out, prefix + ".spatial", se.spatial);
}

struct NamedBuffer {
  std::string name;
  Array* buffer;
};

void collect_bn_buffers(std::vector<NamedBuffer>& out, const std::string& prefix,
                        BatchNorm2d& bn) {
  out.push_back({prefix + ".running_mean", &bn.running_mean});
  out.push_back({prefix + ".running_var", &bn.running_var});
}

void collect_dense_buffers(std::vector<NamedBuffer>& out, const std::string& prefix,
                           DenseBlock& block) {
  for (size_t i = 0; i < block.layers.size(); ++i) {
    collect_bn_buffers(out, prefix + ".layer" + std::to_string(i) + ".bn", block.layers[i].bn);
  }
}

std::vector<NamedBuffer> named_buffers(DenseRauNet& net) {
  std::vector<NamedBuffer> out;
  for (size_t s = 0; s < 3; ++s) {
    const std::string sp = "stage" + std::to_string(s);
    collect_dense_buffers(out, sp + ".block", net.blocks[s]);
    collect_bn_buffers(out, sp + ".transition.bn", net.transitions[s].bn);
  }
  collect_dense_buffers(out, "edb.block", net.first_skip_edb.block);
  for (size_t d = 0; d < 3; ++d) {
    const std::string dp = "decoder" + std::to_string(d);
    collect_bn_buffers(out, dp + ".bn1", net.decoders[d].bn1);
    collect_bn_buffers(out, dp + ".bn2", net.decoders[d].bn2);
  }
  return out;
}

}  // namespace

std::vector<NamedParam> named_parameters(DenseRauNet& net) {
  std::vector<NamedParam> out;
  collect_conv(out, "stem", net.stem);
  for (size_t s = 0; s < 3; ++s) {
    const std::string sp = "stage" + std::to_string(s);
    collect_dense(out, sp + ".block", net.blocks[s]);
    collect_conv(out, sp + ".rau.branch0", net.raus[s].branches[0]);
    collect_conv(out, sp + ".rau.branch1", net.raus[s].branches[1]);
    collect_conv(out, sp + ".rau.branch2", net.raus[s].branches[2]);
    collect_conv(out, sp + ".rau.proj", net.raus[s].proj);
    collect_bn(out, sp + ".transition.bn", net.transitions[s].bn);
    collect_conv(out, sp + ".transition.conv", net.transitions[s].conv);
  }
  collect_dense(out, "edb.block", net.first_skip_edb.block);
  collect_conv(out, "edb.proj", net.first_skip_edb.proj);
  for (size_t d = 0; d < 3; ++d) {
    const std::string dp = "decoder" + std::to_string(d);
    collect_convt(out, dp + ".up", net.decoders[d].up);
    collect_conv(out, dp + ".conv1", net.decoders[d].conv1);
    collect_bn(out, dp + ".bn1", net.decoders[d].bn1);
    collect_conv(out, dp + ".conv2", net.decoders[d].conv2);
    collect_bn(out, dp + ".bn2", net.decoders[d].bn2);
    collect_scse(out, dp + ".scse", net.decoders[d].se);
  }
  collect_conv(out, "head", net.head);
  return out;
}

std::vector<Tensor> parameters(DenseRauNet& net) {
  std::vector<Tensor> out;
  for (NamedParam& p : named_parameters(net)) out.push_back(p.tensor);
  return out;
}

void zero_grad(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.zero_grad();
}

namespace {

constexpr const char* kCkptMagic = "CACSCKPT1";

void write_entry(std::ofstream& out, const std::string& name, const Shape& shape,
                 const double* data, Index count) {
  out << "name " << name << "\n";
  out << "shape";
  for (Index d : shape) out << " " << d;
  out << "\n";
  out << "dtype float64\n";
  out << "data\n";
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
  out << "\n";
}

struct CkptEntry {
  Shape shape;
  Array data;
};

std::map<std::string, CkptEntry> read_all_entries(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCkptMagic) {
    throw ValidationError(path.string() + ": bad checkpoint magic");
  }
  Index count = 0;
  {
    std::getline(in, line);
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag >> count) || tag != "tensors" || count < 0) {
      throw ValidationError(path.string() + ": malformed tensors line");
    }
  }
  std::map<std::string, CkptEntry> entries;
  for (Index i = 0; i < count; ++i) {
    std::string name;
    {
      std::getline(in, line);
      std::istringstream ls(line);
      std::string tag;
      if (!(ls >> tag >> name) || tag != "name") {
        throw ValidationError(path.string() + ": malformed name line");
      }
    }
    CkptEntry entry;
    {
      std::getline(in, line);
      std::istringstream ls(line);
      std::string tag;
      ls >> tag;
      if (tag != "shape") throw ValidationError(path.string() + ": malformed shape line");
      Index d = 0;
      while (ls >> d) entry.shape.push_back(d);
    }
    {
      std::getline(in, line);
      if (line != "dtype float64") {
        throw ValidationError(path.string() + ": expected dtype float64");
      }
    }
    std::getline(in, line);
    if (line != "data") throw ValidationError(path.string() + ": expected data line");
    const Index n = shape_size(entry.shape);
    entry.data.resize(n);
    in.read(reinterpret_cast<char*>(entry.data.data()), static_cast<std::streamsize>(n * 8));
    if (in.gcount() != static_cast<std::streamsize>(n * 8)) {
      throw ValidationError(path.string() + ": truncated payload for " + name);
    }
    char nl;
    in.read(&nl, 1);
    entries.emplace(name, std::move(entry));
  }
  return entries;
}

}  // namespace

void save_checkpoint(DenseRauNet& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  auto params = named_parameters(net);
  auto buffers = named_buffers(net);
  out << kCkptMagic << "\n";
  out << "tensors " << params.size() + buffers.size() << "\n";
  for (NamedParam& p : params) {
    write_entry(out, p.name, p.tensor.shape(), p.tensor.values().data(), p.tensor.size());
  }
  for (NamedBuffer& b : buffers) {
    write_entry(out, b.name, Shape{b.buffer->size()}, b.buffer->data(), b.buffer->size());
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void load_checkpoint(DenseRauNet& net, const std::filesystem::path& path) {
  auto entries = read_all_entries(path);
  auto params = named_parameters(net);
  auto buffers = named_buffers(net);
  if (entries.size() != params.size() + buffers.size()) {
    throw ValidationError(path.string() + ": checkpoint tensor count does not match network");
  }
  for (NamedParam& p : params) {
    auto it = entries.find(p.name);
    if (it == entries.end()) throw ValidationError(path.string() + ": missing tensor " + p.name);
    if (it->second.shape != p.tensor.shape()) {
      throw ValidationError(path.string() + ": shape mismatch for " + p.name);
    }
    p.tensor.values() = it->second.data;
  }
  for (NamedBuffer& b : buffers) {
    auto it = entries.find(b.name);
    if (it == entries.end()) throw ValidationError(path.string() + ": missing tensor " + b.name);
    if (it->second.data.size() != b.buffer->size()) {
      throw ValidationError(path.string() + ": shape mismatch for " + b.name);
    }
    *b.buffer = it->second.data;
  }
}

}  // namespace cacs::nn
