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

#include "riskdiff/guidance.hpp"

#include <cmath>
#include <sstream>

namespace riskdiff::guidance {

Projection Projection::defaults_for(int steps) {
  Projection p;
  p.t2 = static_cast<int>(std::lround(0.6 * steps));
  p.t1 = static_cast<int>(std::lround(0.2 * steps));
  return p;
}

void Projection::validate(int steps) const {
  if (!(0 <= t1 && t1 <= t2 && t2 <= steps)) throw std::invalid_argument("projection: need 0 <= t1 <= t2 <= T");
  if (!(beta_mix > 0.0 && beta_mix < 1.0)) throw std::invalid_argument("projection: beta_mix must lie in (0, 1)");
  if (max_rejections < 1 || max_projections < 1) throw std::invalid_argument("projection: iteration caps must be >= 1");
}

std::string describe(const GuidanceMode& mode) {
  std::ostringstream os;
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, Unguided>) {
          os << "none";
        } else if constexpr (std::is_same_v<M, Classifier>) {
          os << "classifier(eta=" << m.eta << ")";
        } else {
          os << "projection(t1=" << m.t1 << ",t2=" << m.t2 << ",beta_mix=" << m.beta_mix << ")";
        }
      },
      mode);
  return os.str();
}

Eigen::VectorXd classifier_step(const diffusion::Policy& policy, const Eigen::VectorXd& u_t, int t,
                                const Eigen::VectorXd& eps_pred, const GuidanceEnv& env, double eta,
                                Rng& rng) {
  if (eta == 0.0) return diffusion::ddpm_step(u_t, t, eps_pred, policy.schedule, rng);
  if (env.surrogate == nullptr) throw std::invalid_argument("classifier guidance needs a risk surrogate");
  const ActionSequence u_m = policy.normalizer.unnormalize(u_t);
  const risk::CRiskResult cr = risk::c_risk(*env.surrogate, u_m, env.pose);
  const Eigen::Map<const Eigen::VectorXd> g(cr.gradient.data(), cr.gradient.size());
  // d c / d u_norm = d c / d u_m * scale
  const Eigen::VectorXd eps = eps_pred + eta * g.cwiseProduct(policy.normalizer.scale);
  return diffusion::ddpm_step(u_t, t, eps, policy.schedule, rng);
}

int shrink_to_safe(ActionSequence& u, const risk::SafeSet& safe_set, const Pose& pose, double beta_mix) {
  if (!safe_set.safe(pose.position())) throw GuidanceError("small-action projection: current pose is unsafe");
  // Shrinking by (1 - beta_mix) per step reaches any cell-interior pose's
  // cell in O(log) steps; the cap only matters for a pose sitting exactly on
  // a cell edge, where the zero action is returned instead.
  constexpr int kCap = 2000;
  int k = 0;
  while (!risk::is_safe(safe_set, u, pose)) {
    if (++k > kCap) {
      u.setZero();
      break;
    }
    u *= (1.0 - beta_mix);
  }
  return k;
}

Eigen::VectorXd projection_step(const diffusion::Policy& policy, const Eigen::VectorXd& u_t, int t,
                                const Eigen::VectorXd& eps_pred, const GuidanceEnv& env,
                                const Projection& mode, Rng& rng, StepStats* stats) {
  if (env.safe_set == nullptr) throw std::invalid_argument("projection guidance needs a safe set");
  const risk::SafeSet& safe = *env.safe_set;
  const diffusion::NoiseSchedule& s = policy.schedule;
  const diffusion::Normalizer& norm = policy.normalizer;
  if (!safe.safe(env.pose.position())) throw GuidanceError("projection: current pose is unsafe");

  const Eigen::VectorXd mean = diffusion::posterior_mean(u_t, t, eps_pred, s);
  const double sigma = s.sigma[static_cast<std::size_t>(t)];
  const int dim = static_cast<int>(u_t.size());
  Eigen::VectorXd cand = mean + sigma * diffusion::standard_normal(rng, dim);
  ActionSequence cand_m = norm.unnormalize(cand);
  if (risk::is_safe(safe, cand_m, env.pose)) return cand;

  enum class Rung { kReject, kPrevious, kSmall };
  Rung rung = t > mode.t2 ? Rung::kReject : (t > mode.t1 ? Rung::kPrevious : Rung::kSmall);

  if (rung == Rung::kReject) {
    for (int k = 0; k < mode.max_rejections; ++k) {
      if (stats) ++stats->rejections;
      cand = mean + sigma * diffusion::standard_normal(rng, dim);
      cand_m = norm.unnormalize(cand);
      if (risk::is_safe(safe, cand_m, env.pose)) return cand;
    }
    rung = Rung::kPrevious;
  }
  if (rung == Rung::kPrevious) {
    const ActionSequence prev_m = norm.unnormalize(u_t);
    for (int k = 0; k < mode.max_projections; ++k) {
      if (stats) ++stats->previous_projections;
      cand_m = (1.0 - mode.beta_mix) * cand_m + mode.beta_mix * prev_m;
      if (risk::is_safe(safe, cand_m, env.pose)) return norm.normalize(cand_m);
    }
  }
  const int k = shrink_to_safe(cand_m, safe, env.pose, mode.beta_mix);
  if (stats) stats->small_action_projections += k;
  return norm.normalize(cand_m);
}

ActionSequence safety_filter(const ActionSequence& u, const risk::SafeSet& safe_set, const Pose& pose) {
  const double res = safe_set.map().spec.resolution;
  if (!safe_set.safe(pose.position())) return ActionSequence(2, 0);
  const Eigen::Matrix2Xd w = to_world(pose, u);
  std::vector<Vec2> pts;
  Vec2 prev = pose.position();
  Eigen::Index keep = 0;
  for (; keep < w.cols(); ++keep) {
    pts.clear();
    const Vec2 next = w.col(keep);
    append_segment_points(prev, next, res, pts);
    bool ok = true;
    for (const Vec2& p : pts) ok = ok && safe_set.safe(p);
    if (!ok) break;
    prev = next;
  }
  return u.leftCols(keep);
}

}  // namespace riskdiff::guidance

namespace riskdiff::diffusion {

std::vector<ActionSequence> sample(const Policy& policy, const Context& ctx, const guidance::GuidanceMode& mode,
                                   const guidance::GuidanceEnv& env, std::uint64_t seed, int batch,
                                   guidance::StepStats* stats) {
  if (batch < 1) throw std::invalid_argument("sample: batch must be >= 1");
  if (const auto* p = std::get_if<guidance::Projection>(&mode)) p->validate(policy.schedule.steps);
  if (const auto* c = std::get_if<guidance::Classifier>(&mode); c && !(c->eta >= 0.0))
    throw std::invalid_argument("classifier guidance: eta must be >= 0");

  const int dim = Denoiser::kActionDim;
  const Eigen::VectorXf features = ctx.features();
  std::vector<Rng> rngs;
  Eigen::MatrixXd u(dim, batch);
  for (int i = 0; i < batch; ++i) {
    rngs.emplace_back(derive_seed(seed, static_cast<std::uint64_t>(i)));
    u.col(i) = standard_normal(rngs.back(), dim);
  }

  for (int t = policy.schedule.steps; t >= 1; --t) {
    const Eigen::MatrixXd eps = policy.denoiser.predict(u.cast<float>(), t, features).cast<double>();
    for (int i = 0; i < batch; ++i) {
      const Eigen::VectorXd ut = u.col(i);
      const Eigen::VectorXd ei = eps.col(i);
      Rng& rng = rngs[static_cast<std::size_t>(i)];
      u.col(i) = std::visit(
          [&](const auto& m) -> Eigen::VectorXd {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, guidance::Unguided>) {
              return ddpm_step(ut, t, ei, policy.schedule, rng);
            } else if constexpr (std::is_same_v<M, guidance::Classifier>) {
              return guidance::classifier_step(policy, ut, t, ei, env, m.eta, rng);
            } else {
              return guidance::projection_step(policy, ut, t, ei, env, m, rng, stats);
            }
          },
          mode);
    }
  }

  std::vector<ActionSequence> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    out.push_back(policy.normalizer.unnormalize(u.col(i)));
    // The last projection may have passed through normalize(); re-check the
    // meter-space result so rounding can never break the guarantee.
    if (const auto* p = std::get_if<guidance::Projection>(&mode)) {
      if (!risk::is_safe(*env.safe_set, out.back(), env.pose))
        guidance::shrink_to_safe(out.back(), *env.safe_set, env.pose, p->beta_mix);
    }
  }
  return out;
}

}  // namespace riskdiff::diffusion
