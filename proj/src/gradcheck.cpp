#include "cacs/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "cacs/loss.hpp"
#include "cacs/nn.hpp"
#include "cacs/tensor.hpp"

namespace cacs {

namespace {

constexpr double kFixtureStddev = 0.5;  // keeps pre-activations clear of ReLU kinks
constexpr double kFdEps = 1e-6;

struct BlockFixture {
  std::vector<Tensor> leaves;
  std::function<Tensor()> forward;
};

// Random projection so the scalar objective is sensitive to every output.
Tensor project(const Tensor& out, std::mt19937_64& rng) {
  return sum(mul(out, Tensor::randn(out.shape(), rng)));
}

BlockFixture conv_fixture(std::mt19937_64& rng, Index dilation) {
  const Index side = dilation <= 2 ? 6 : 2 * dilation + 2;
  auto x = std::make_shared<Tensor>(Tensor::randn({1, 2, side, side}, rng));
  auto layer = std::make_shared<nn::Conv2d>(
      nn::make_conv2d(rng, 2, 2, 3, 1, dilation, dilation, kFixtureStddev));
  auto proj = std::make_shared<Tensor>();
  BlockFixture f;
  f.leaves = {*x, layer->weight, layer->bias};
  f.forward = [x, layer, proj, &rng]() {
    Tensor out = nn::conv2d(*x, *layer);
    if (!proj->defined()) *proj = Tensor::randn(out.shape(), rng);
    return sum(mul(out, *proj));
  };
  return f;
}

BlockFixture conv_transpose_fixture(std::mt19937_64& rng) {
  auto x = std::make_shared<Tensor>(Tensor::randn({1, 3, 3, 3}, rng));
  auto layer =
      std::make_shared<nn::ConvTranspose2d>(nn::make_conv_transpose2d(rng, 3, 2, kFixtureStddev));
  auto proj = std::make_shared<Tensor>();
  BlockFixture f;
  f.leaves = {*x, layer->weight, layer->bias};
  f.forward = [x, layer, proj, &rng]() {
    Tensor out = nn::conv_transpose2d(*x, *layer);
    if (!proj->defined()) *proj = Tensor::randn(out.shape(), rng);
    return sum(mul(out, *proj));
  };
  return f;
}

BlockFixture batchnorm_fixture(std::mt19937_64& rng) {
  auto x = std::make_shared<Tensor>(Tensor::randn({2, 3, 3, 3}, rng));
  auto layer = std::make_shared<nn::BatchNorm2d>(nn::make_batchnorm2d(3));
  layer->gamma.values() += 0.3 * Tensor::randn({3}, rng).values();
  layer->beta.values() += 0.3 * Tensor::randn({3}, rng).values();
  auto proj = std::make_shared<Tensor>();
  BlockFixture f;
  f.leaves = {*x, layer->gamma, layer->beta};
  f.forward = [x, layer, proj, &rng]() {
    Tensor out = nn::batchnorm(*x, *layer, nn::Mode::train);
    if (!proj->defined()) *proj = Tensor::randn(out.shape(), rng);
    return sum(mul(out, *proj));
  };
  return f;
}

template <class Block, class Forward>
BlockFixture block_fixture(std::mt19937_64& rng, Shape input_shape, Block block,
                           std::vector<Tensor> params, Forward&& fwd) {
  auto x = std::make_shared<Tensor>(Tensor::randn(std::move(input_shape), rng));
  auto b = std::make_shared<Block>(std::move(block));
  auto proj = std::make_shared<Tensor>();
  BlockFixture f;
  f.leaves = std::move(params);
  f.leaves.push_back(*x);
  f.forward = [x, b, proj, &rng, fwd]() {
    Tensor out = fwd(*b, *x);
    if (!proj->defined()) *proj = Tensor::randn(out.shape(), rng);
    return sum(mul(out, *proj));
  };
  return f;
}

std::vector<Tensor> dense_params(nn::DenseBlock& block) {
  std::vector<Tensor> out;
  for (nn::DenseLayer& layer : block.layers) {
    out.push_back(layer.bn.gamma);
    out.push_back(layer.bn.beta);
    out.push_back(layer.conv.weight);
    out.push_back(layer.conv.bias);
  }
  return out;
}

BlockFixture dense_block_fixture(std::mt19937_64& rng) {
  nn::DenseBlock block = nn::make_dense_block(rng, 4, 2, 4, kFixtureStddev);
  auto params = dense_params(block);
  return block_fixture(rng, {1, 4, 4, 4}, std::move(block), std::move(params),
                       [](nn::DenseBlock& b, const Tensor& x) {
                         return nn::dense_block(x, b, nn::Mode::train);
                       });
}

BlockFixture rau_fixture(std::mt19937_64& rng) {
  nn::ResidualAtrousUnit unit = nn::make_rau(rng, 4, {2, 4, 8}, kFixtureStddev);
  std::vector<Tensor> params;
  for (nn::Conv2d& branch : unit.branches) {
    params.push_back(branch.weight);
    params.push_back(branch.bias);
  }
  params.push_back(unit.proj.weight);
  params.push_back(unit.proj.bias);
  return block_fixture(rng, {1, 4, 6, 6}, std::move(unit), std::move(params),
                       [](nn::ResidualAtrousUnit& u, const Tensor& x) { return nn::rau(x, u); });
}

BlockFixture scse_fixture(std::mt19937_64& rng) {
  nn::ScSeBlock block = nn::make_scse(rng, 4, 2, kFixtureStddev);
  std::vector<Tensor> params = {block.fc1_weight, block.fc1_bias,    block.fc2_weight,
                                block.fc2_bias,   block.spatial.weight, block.spatial.bias};
  return block_fixture(rng, {1, 4, 3, 3}, std::move(block), std::move(params),
                       [](nn::ScSeBlock& b, const Tensor& x) { return nn::scse(x, b); });
}

BlockFixture edb_fixture(std::mt19937_64& rng) {
  nn::ExtraDenseBlock block = nn::make_edb(rng, 4, 4, kFixtureStddev);
  auto params = dense_params(block.block);
  params.push_back(block.proj.weight);
  params.push_back(block.proj.bias);
  return block_fixture(rng, {1, 4, 4, 4}, std::move(block), std::move(params),
                       [](nn::ExtraDenseBlock& b, const Tensor& x) {
                         return nn::edb(x, b, nn::Mode::train);
                       });
}

BlockFixture decoder_fixture(std::mt19937_64& rng) {
  auto m = std::make_shared<nn::DecoderModule>(
      nn::make_decoder_module(rng, 3, 4, 4, 2, kFixtureStddev));
  auto x = std::make_shared<Tensor>(Tensor::randn({1, 3, 2, 2}, rng));
  auto skip = std::make_shared<Tensor>(Tensor::randn({1, 4, 4, 4}, rng));
  auto proj = std::make_shared<Tensor>();
  BlockFixture f;
  f.leaves = {*x,
              *skip,
              m->up.weight,
              m->up.bias,
              m->conv1.weight,
              m->conv1.bias,
              m->bn1.gamma,
              m->bn1.beta,
              m->conv2.weight,
              m->conv2.bias,
              m->bn2.gamma,
              m->bn2.beta,
              m->se.fc1_weight,
              m->se.fc1_bias,
              m->se.fc2_weight,
              m->se.fc2_bias,
              m->se.spatial.weight,
              m->se.spatial.bias};
  f.forward = [x, skip, m, proj, &rng]() {
    Tensor out = nn::decoder_module(*x, *skip, *m, nn::Mode::train);
    if (!proj->defined()) *proj = Tensor::randn(out.shape(), rng);
    return sum(mul(out, *proj));
  };
  return f;
}

// Probabilities sampled away from the clip bounds and from the hard-negative
// threshold (1-p < 0.9 <=> p > 0.1), so finite differences never cross the
// piecewise-constant selection.
BlockFixture bootstrap_fixture(std::mt19937_64& rng) {
  const Index n = 40;
  Array pv(n), yv(n);
  std::bernoulli_distribution is_pos(0.3);
  std::bernoulli_distribution is_easy(0.3);
  std::uniform_real_distribution<double> active(0.15, 0.95);
  std::uniform_real_distribution<double> easy(0.01, 0.08);
  bool any_pos = false;
  for (Index i = 0; i < n; ++i) {
    const bool pos = is_pos(rng);
    any_pos = any_pos || pos;
    yv[i] = pos ? 1.0 : 0.0;
    pv[i] = (!pos && is_easy(rng)) ? easy(rng) : active(rng);
  }
  if (!any_pos) {
    yv[0] = 1.0;
    pv[0] = active(rng);
  }
  auto p = std::make_shared<Tensor>(Tensor::from_array({n}, pv));
  auto y = std::make_shared<Tensor>(Tensor::from_array({n}, yv));
  BlockFixture f;
  f.leaves = {*p};
  f.forward = [p, y]() { return bootstrap_loss(*p, *y, BootstrapParams{}); };
  return f;
}

BlockFixture iou_fixture(std::mt19937_64& rng) {
  const Index n = 48;
  Array pv(n), gv(n);
  std::uniform_real_distribution<double> prob(0.02, 0.98);
  std::bernoulli_distribution is_pos(0.4);
  for (Index i = 0; i < n; ++i) {
    pv[i] = prob(rng);
    gv[i] = is_pos(rng) ? 1.0 : 0.0;
  }
  auto p = std::make_shared<Tensor>(Tensor::from_array({n}, pv));
  auto g = std::make_shared<Tensor>(Tensor::from_array({n}, gv));
  BlockFixture f;
  f.leaves = {*p};
  f.forward = [p, g]() { return iou_loss(*p, *g); };
  return f;
}

GradCheckResult check_block(const std::string& name,
                            const std::function<BlockFixture(std::mt19937_64&)>& builder,
                            std::uint64_t seed, int n_seeds, double rtol, double atol) {
  GradCheckResult result;
  result.block = name;
  result.n_seeds = n_seeds;
  for (int k = 0; k < n_seeds; ++k) {
    std::mt19937_64 rng(seed + 7919ull * static_cast<std::uint64_t>(k + 1));
    BlockFixture fixture = builder(rng);
    for (Tensor& leaf : fixture.leaves) {
      leaf.set_requires_grad(true);
      leaf.zero_grad();
    }
    backward(fixture.forward());
    for (Tensor& leaf : fixture.leaves) {
      const Array analytic = leaf.has_grad() ? leaf.grad() : Array::Zero(leaf.size());
      for (Index i = 0; i < leaf.size(); ++i) {
        const double v = leaf.values()[i];
        leaf.values()[i] = v + kFdEps;
        const double fp = fixture.forward().value();
        leaf.values()[i] = v - kFdEps;
        const double fm = fixture.forward().value();
        leaf.values()[i] = v;
        const double fd = (fp - fm) / (2.0 * kFdEps);
        const double err = std::abs(analytic[i] - fd);
        const double tol = atol + rtol * std::max(std::abs(analytic[i]), std::abs(fd));
        result.max_abs_err = std::max(result.max_abs_err, err);
        result.max_violation = std::max(result.max_violation, err / tol);
        result.n_elements += 1;
      }
    }
  }
  result.pass = result.max_violation <= 1.0;
  return result;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, int n_seeds, double rtol,
                                                double atol) {
  std::vector<std::pair<std::string, std::function<BlockFixture(std::mt19937_64&)>>> blocks = {
      {"conv3x3_d1", [](std::mt19937_64& rng) { return conv_fixture(rng, 1); }},
      {"conv3x3_d2", [](std::mt19937_64& rng) { return conv_fixture(rng, 2); }},
      {"conv3x3_d4", [](std::mt19937_64& rng) { return conv_fixture(rng, 4); }},
      {"conv3x3_d8", [](std::mt19937_64& rng) { return conv_fixture(rng, 8); }},
      {"conv_transpose2x2", conv_transpose_fixture},
      {"batchnorm_train", batchnorm_fixture},
      {"dense_block", dense_block_fixture},
      {"rau", rau_fixture},
      {"scse", scse_fixture},
      {"edb", edb_fixture},
      {"decoder_module", decoder_fixture},
      {"bootstrap_loss", bootstrap_fixture},
      {"iou_loss", iou_fixture},
  };
  std::vector<GradCheckResult> results;
  std::uint64_t salt = 0;
  for (auto& [name, builder] : blocks) {
    results.push_back(check_block(name, builder, seed + (salt += 0x9e3779b9ull), n_seeds, rtol,
                                  atol));
  }
  return results;
}

}  // namespace cacs
