// Copyright 2026 The riskdiff Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "riskdiff/diffusion.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <algorithm>
#include <fstream>
#include <numeric>

namespace riskdiff::diffusion {

NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
  if (betas.empty()) throw std::invalid_argument("schedule: need at least one step");
  NoiseSchedule s;
  s.steps = static_cast<int>(betas.size());
  const std::size_t n = betas.size() + 1;
  s.beta.assign(n, 0.0);
  s.alpha.assign(n, 1.0);
  s.alpha_bar.assign(n, 1.0);
  s.sigma.assign(n, 0.0);
  for (std::size_t t = 1; t < n; ++t) {
    const double b = betas[t - 1];
    if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("schedule: beta must lie in (0, 1)");
    s.beta[t] = b;
    s.alpha[t] = 1.0 - b;
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.sigma[t] = std::sqrt(b * (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]));
  }
  return s;
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule: steps must be >= 1");
  const double k = 1000.0 / steps;
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    const double f = steps == 1 ? 1.0 : static_cast<double>(t) / (steps - 1);
    betas[static_cast<std::size_t>(t)] = std::min(kMaxBeta, k * (beta_start + f * (beta_end - beta_start)));
  }
  return schedule_from_betas(betas);
}

Eigen::VectorXf Context::features() const {
  Eigen::VectorXf f(kDim);
  const double n = goal.norm();
  const Vec2 g = n > kGoalFeatureRange ? Vec2(goal * (kGoalFeatureRange / n)) : goal;
  f(0) = static_cast<float>(g.x() / 1.5);
  f(1) = static_cast<float>(g.y() / 1.5);
  f(2) = static_cast<float>(sin_heading);
  f(3) = static_cast<float>(cos_heading);
  for (int i = 0; i < kPatchSize * kPatchSize; ++i) f(4 + i) = patch[static_cast<std::size_t>(i)];
  return f;
}

Context make_context(const risk::RiskMap& map, const Pose& pose, const Vec2& goal_world) {
  Context ctx;
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  const Vec2 d = goal_world - pose.position();
  ctx.goal = Vec2(c * d.x() + s * d.y(), -s * d.x() + c * d.y());
  ctx.sin_heading = s;
  ctx.cos_heading = c;

  const GridSpec& g = map.spec;
  const double half = 0.5 * kPatchSpacing;
  for (int r = 0; r < kPatchSize; ++r) {
    for (int col = 0; col < kPatchSize; ++col) {
      const double fwd = r * kPatchSpacing;
      const double lat = (col - kPatchSize / 2) * kPatchSpacing;
      const Vec2 p = pose.position() + Vec2(c * fwd - s * lat, s * fwd + c * lat);
      const int ix0 = static_cast<int>(std::floor((p.x() - half - g.origin_x) / g.resolution));
      const int ix1 = static_cast<int>(std::floor((p.x() + half - g.origin_x) / g.resolution));
      const int iy0 = static_cast<int>(std::floor((p.y() - half - g.origin_y) / g.resolution));
      const int iy1 = static_cast<int>(std::floor((p.y() + half - g.origin_y) / g.resolution));
      double v = 0.0;
      if (ix0 < 0 || iy0 < 0 || ix1 >= g.width || iy1 >= g.height) {
        v = kPatchRiskScale;
      } else {
        for (int iy = iy0; iy <= iy1; ++iy)
          for (int ix = ix0; ix <= ix1; ++ix) v = std::max(v, static_cast<double>(map.at({ix, iy})));
      }
      ctx.patch[static_cast<std::size_t>(r * kPatchSize + col)] =
          static_cast<float>(std::min(v, kPatchRiskScale) / kPatchRiskScale);
    }
  }
  return ctx;
}

Eigen::VectorXd Normalizer::normalize(const ActionSequence& u) const {
  const Eigen::Map<const Eigen::VectorXd> flat(u.data(), u.size());
  return (flat - mean).cwiseQuotient(scale);
}

ActionSequence Normalizer::unnormalize(const Eigen::VectorXd& v) const {
  const Eigen::VectorXd flat = v.cwiseProduct(scale) + mean;
  return Eigen::Map<const Eigen::Matrix2Xd>(flat.data(), 2, flat.size() / 2);
}

Normalizer fit_normalizer(const std::vector<ActionSequence>& actions) {
  if (actions.empty()) throw std::invalid_argument("fit_normalizer: no actions");
  const Eigen::Index dim = actions.front().size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  for (const auto& a : actions) {
    if (a.size() != dim) throw std::invalid_argument("fit_normalizer: inconsistent action sizes");
    sum += Eigen::Map<const Eigen::VectorXd>(a.data(), dim);
  }
  Normalizer n;
  const double count = static_cast<double>(actions.size());
  n.mean = sum / count;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (const auto& a : actions) {
    const Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(a.data(), dim) - n.mean;
    var += d.cwiseProduct(d);
  }
  n.scale = (var / count).cwiseSqrt().cwiseMax(Normalizer::kMinScale);
  return n;
}

Eigen::VectorXf time_embedding(int t) {
  Eigen::VectorXf e(kTimeEmbedding);
  const int half = kTimeEmbedding / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    e(2 * k) = static_cast<float>(std::sin(t * freq));
    e(2 * k + 1) = static_cast<float>(std::cos(t * freq));
  }
  return e;
}

Denoiser::Denoiser(const std::vector<int>& hidden, Rng& rng) {
  std::vector<int> dims{kInputDim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(kActionDim);
  net_ = Mlp(dims, rng);
}

Denoiser::Denoiser(Mlp net) : net_(std::move(net)) {
  if (net_.input_dim() != kInputDim || net_.output_dim() != kActionDim)
    throw std::invalid_argument("denoiser: network shape does not match action/context layout");
}

Eigen::MatrixXf Denoiser::assemble(const Eigen::MatrixXf& u, const std::vector<int>& t,
                                   const Eigen::MatrixXf& contexts) {
  const Eigen::Index b = u.cols();
  Eigen::MatrixXf x(kInputDim, b);
  x.topRows(kActionDim) = u;
  for (Eigen::Index i = 0; i < b; ++i) x.col(i).segment(kActionDim, kTimeEmbedding) = time_embedding(t[static_cast<std::size_t>(i)]);
  x.bottomRows(Context::kDim) = contexts;
  return x;
}

Eigen::MatrixXf Denoiser::predict(const Eigen::MatrixXf& u, int t, const Eigen::VectorXf& context) const {
  const Eigen::Index b = u.cols();
  Eigen::MatrixXf x(kInputDim, b);
  x.topRows(kActionDim) = u;
  x.middleRows(kActionDim, kTimeEmbedding) = time_embedding(t).replicate(1, b);
  x.bottomRows(Context::kDim) = context.replicate(1, b);
  return net_.forward(x);
}

Eigen::VectorXd forward_noise(const Eigen::VectorXd& u0, int t, const Eigen::VectorXd& eps,
                              const NoiseSchedule& schedule) {
  if (t < 0 || t > schedule.steps) throw std::out_of_range("forward_noise: t out of range");
  if (eps.size() != u0.size()) throw std::invalid_argument("forward_noise: eps shape mismatch");
  const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
  if (t == 0) return u0;
  return std::sqrt(ab) * u0 + std::sqrt(1.0 - ab) * eps;
}

Eigen::VectorXd standard_normal(Rng& rng, int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  return v;
}

TrainResult train(const Dataset& data, const NoiseSchedule& schedule, const TrainConfig& config) {
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (config.epochs < 1 || config.batch_size < 1) throw std::invalid_argument("train: epochs and batch size must be >= 1");
  const int n = static_cast<int>(data.size());
  const int dim = Denoiser::kActionDim;

  Eigen::MatrixXf x0(dim, n), ctx(Context::kDim, n);
  for (int i = 0; i < n; ++i) {
    x0.col(i) = data.normalizer.normalize(data.actions[static_cast<std::size_t>(i)]).cast<float>();
    ctx.col(i) = data.contexts[static_cast<std::size_t>(i)].features();
  }

  Rng rng(config.seed);
  TrainResult result;
  result.policy.denoiser = Denoiser(config.hidden, rng);
  result.policy.normalizer = data.normalizer;
  result.policy.schedule = schedule;
  Mlp& net = result.policy.denoiser.net();
  Adam adam(net, static_cast<float>(config.learning_rate));

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int bs = std::min(config.batch_size, n);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    double loss_sum = 0.0;
    int batches = 0;
    for (int start = 0; start + bs <= n; start += bs) {
      Eigen::MatrixXf ut(dim, bs), eps(dim, bs), c(Context::kDim, bs);
      std::vector<int> ts(static_cast<std::size_t>(bs));
      for (int k = 0; k < bs; ++k) {
        const int idx = order[static_cast<std::size_t>(start + k)];
        const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps)));
        ts[static_cast<std::size_t>(k)] = t;
        const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
        for (int d = 0; d < dim; ++d) eps(d, k) = static_cast<float>(rng.normal());
        ut.col(k) = static_cast<float>(std::sqrt(ab)) * x0.col(idx) + static_cast<float>(std::sqrt(1.0 - ab)) * eps.col(k);
        c.col(k) = ctx.col(idx);
      }
      const Eigen::MatrixXf& pred = net.forward_train(Denoiser::assemble(ut, ts, c));
      const Eigen::MatrixXf diff = pred - eps;
      const double loss = static_cast<double>(diff.squaredNorm()) / (static_cast<double>(dim) * bs);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(batches + 1) + " (lr " + std::to_string(config.learning_rate) + ")");
      }
      adam.step(net, net.backward(diff * (2.0f / static_cast<float>(dim * bs))));
      loss_sum += loss;
      ++batches;
    }
    result.loss_trace.push_back(loss_sum / batches);
  }
  return result;
}

double eps_mse(const Policy& policy, const Dataset& data, int t, std::uint64_t seed) {
  Rng rng(seed);
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Eigen::VectorXd u0 = policy.normalizer.normalize(data.actions[i]);
    const Eigen::VectorXd eps = standard_normal(rng, static_cast<int>(u0.size()));
    const Eigen::VectorXd ut = forward_noise(u0, t, eps, policy.schedule);
    acc += (predict_eps(policy, ut, t, data.contexts[i]) - eps).squaredNorm() / static_cast<double>(u0.size());
  }
  return acc / static_cast<double>(data.size());
}

Eigen::VectorXd predict_eps(const Policy& policy, const Eigen::VectorXd& u_t, int t, const Context& ctx) {
  const Eigen::MatrixXf out = policy.denoiser.predict(u_t.cast<float>(), t, ctx.features());
  return out.col(0).cast<double>();
}

Eigen::VectorXd posterior_mean(const Eigen::VectorXd& u_t, int t, const Eigen::VectorXd& eps,
                               const NoiseSchedule& s) {
  const auto k = static_cast<std::size_t>(t);
  return (u_t - (s.beta[k] / std::sqrt(1.0 - s.alpha_bar[k])) * eps) / std::sqrt(s.alpha[k]);
}

Eigen::VectorXd ddpm_step(const Eigen::VectorXd& u_t, int t, const Eigen::VectorXd& eps_pred,
                          const NoiseSchedule& schedule, Rng& rng) {
  if (t < 1 || t > schedule.steps) throw std::out_of_range("ddpm_step: t out of range");
  const Eigen::VectorXd w = standard_normal(rng, static_cast<int>(u_t.size()));
  return posterior_mean(u_t, t, eps_pred, schedule) + schedule.sigma[static_cast<std::size_t>(t)] * w;
}

Eigen::VectorXd ddpm_step(const Policy& policy, const Eigen::VectorXd& u_t, int t, const Context& ctx, Rng& rng) {
  return ddpm_step(u_t, t, predict_eps(policy, u_t, t, ctx), policy.schedule, rng);
}

namespace {

constexpr char kCkptMagic[8] = {'R', 'D', 'C', 'K', 'P', 'T', '0', '1'};

template <class T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const Policy& policy, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(kCkptMagic, sizeof(kCkptMagic));
  put<std::uint32_t>(out, kWaypoints);
  put<std::uint32_t>(out, Context::kDim);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(policy.schedule.steps));
  for (int t = 1; t <= policy.schedule.steps; ++t) put<double>(out, policy.schedule.beta[static_cast<std::size_t>(t)]);
  const auto dims = policy.denoiser.net().dims();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (const auto& layer : policy.denoiser.net().layers()) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) put<float>(out, layer.weight(r, c));
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) put<float>(out, layer.bias(r));
  }
  for (Eigen::Index i = 0; i < policy.normalizer.mean.size(); ++i) put<double>(out, policy.normalizer.mean(i));
  for (Eigen::Index i = 0; i < policy.normalizer.scale.size(); ++i) put<double>(out, policy.normalizer.scale(i));
  if (!out) throw std::runtime_error("write failed: " + path);
}

Policy load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw FormatError("not a riskdiff checkpoint (or unsupported version): " + path);
  if (get<std::uint32_t>(in) != kWaypoints) throw FormatError("checkpoint waypoint count mismatch");
  if (get<std::uint32_t>(in) != Context::kDim) throw FormatError("checkpoint context layout mismatch");
  const auto steps = get<std::uint32_t>(in);
  if (steps < 1 || steps > 100000) throw FormatError("bad diffusion step count");
  std::vector<double> betas(steps);
  for (double& b : betas) b = get<double>(in);

  Policy p;
  try {
    p.schedule = schedule_from_betas(betas);
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  const auto nd = get<std::uint32_t>(in);
  if (nd < 2 || nd > 64) throw FormatError("bad layer count");
  std::vector<int> dims(nd);
  for (int& d : dims) {
    d = static_cast<int>(get<std::uint32_t>(in));
    if (d < 1 || d > 1 << 16) throw FormatError("bad layer width");
  }
  Mlp net;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Mlp::Layer layer{Eigen::MatrixXf(dims[l + 1], dims[l]), Eigen::VectorXf(dims[l + 1])};
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = get<float>(in);
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = get<float>(in);
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) throw FormatError("non-finite weights");
    net.layers().push_back(std::move(layer));
  }
  try {
    p.denoiser = Denoiser(std::move(net));
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  p.normalizer.mean.resize(Denoiser::kActionDim);
  p.normalizer.scale.resize(Denoiser::kActionDim);
  for (Eigen::Index i = 0; i < Denoiser::kActionDim; ++i) p.normalizer.mean(i) = get<double>(in);
  for (Eigen::Index i = 0; i < Denoiser::kActionDim; ++i) {
    p.normalizer.scale(i) = get<double>(in);
    if (!(p.normalizer.scale(i) > 0.0)) throw FormatError("normalizer scale must be > 0");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing data in checkpoint");
  return p;
}

}  // namespace riskdiff::diffusion
