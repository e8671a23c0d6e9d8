#include "guidelab/policy.hpp"

#include <cmath>
#include <stdexcept>

namespace guidelab {

void PolicyParams::validate() const {
  if (horizon() < 1 || alphabet() < 2) throw std::invalid_argument("PolicyParams: bad shape");
  if (!all_finite(logits.data())) throw std::invalid_argument("PolicyParams: non-finite logit");
  if (!(guidance_strength >= 0.0) || !std::isfinite(guidance_strength))
    throw std::invalid_argument("PolicyParams: guidance strength must be finite and >= 0");
}

PolicyParams uniform_policy(int horizon, int alphabet, double guidance_strength) {
  PolicyParams params{Table(horizon, alphabet, 0.0), guidance_strength};
  params.validate();
  return params;
}

std::vector<double> logits(const PolicyParams& params, int t, std::optional<Action> recommended) {
  if (t < 0 || t >= params.horizon()) throw std::out_of_range("logits: step out of range");
  const auto row = params.logits.row(t);
  std::vector<double> out(row.begin(), row.end());
  if (recommended) {
    if (*recommended < 0 || *recommended >= params.alphabet())
      throw std::out_of_range("logits: recommended action out of range");
    out[static_cast<std::size_t>(*recommended)] += params.guidance_strength;
  }
  return out;
}

std::vector<double> logits(const PolicyParams& params, int t, const GuidanceContext& ctx) {
  return logits(params, t, ctx.recommended(t));
}

std::vector<double> probabilities(const PolicyParams& params, int t, std::optional<Action> recommended) {
  auto z = logits(params, t, recommended);
  std::vector<double> p(z.size());
  softmax(z, p);
  return p;
}

double log_prob(const PolicyParams& params, int t, Action action, std::optional<Action> recommended) {
  if (action < 0 || action >= params.alphabet()) throw std::out_of_range("log_prob: action out of range");
  auto z = logits(params, t, recommended);
  std::vector<double> lp(z.size());
  log_softmax(z, lp);
  return lp[static_cast<std::size_t>(action)];
}

double log_prob(const PolicyParams& params, int t, Action action, const GuidanceContext& ctx) {
  return log_prob(params, t, action, ctx.recommended(t));
}

Action sample_from(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    acc += probs[a];
    if (u < acc) return static_cast<Action>(a);
  }
  // Round-off left u above the accumulated total: take the last action with mass.
  for (std::size_t a = probs.size(); a-- > 0;)
    if (probs[a] > 0.0) return static_cast<Action>(a);
  return static_cast<Action>(probs.size() - 1);
}

Action sample_action(const PolicyParams& params, int t, const GuidanceContext& ctx, Rng& rng) {
  const auto p = probabilities(params, t, ctx.recommended(t));
  return sample_from(p, rng);
}

std::vector<double> grad_log_prob(const PolicyParams& params, int t, Action action, const GuidanceContext& ctx) {
  if (action < 0 || action >= params.alphabet()) throw std::out_of_range("grad_log_prob: action out of range");
  auto g = probabilities(params, t, ctx.recommended(t));
  for (auto& x : g) x = -x;
  g[static_cast<std::size_t>(action)] += 1.0;
  return g;
}

double categorical_kl(std::span<const double> p, std::span<const double> q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  return std::max(kl, 0.0);
}

double kl_at_step(const PolicyParams& p, const PolicyParams& q, int t, const GuidanceContext& ctx) {
  if (!p.logits.same_shape(q.logits)) throw std::invalid_argument("kl_at_step: shape mismatch");
  const auto pp = probabilities(p, t, ctx.recommended(t));
  const auto qq = probabilities(q, t, ctx.recommended(t));
  return categorical_kl(pp, qq);
}

Table step_distributions(const PolicyParams& params, const GuidanceContext& ctx) {
  Table out(params.horizon(), params.alphabet());
  for (int t = 0; t < params.horizon(); ++t) {
    const auto z = logits(params, t, ctx.recommended(t));
    softmax(z, out.row(t));
  }
  return out;
}

Table step_log_distributions(const PolicyParams& params, const GuidanceContext& ctx) {
  Table out(params.horizon(), params.alphabet());
  for (int t = 0; t < params.horizon(); ++t) {
    const auto z = logits(params, t, ctx.recommended(t));
    log_softmax(z, out.row(t));
  }
  return out;
}

nlohmann::json checkpoint_to_json(const PolicyParams& params, const std::string& env_hash, int step) {
  nlohmann::json doc;
  doc["version"] = kCheckpointVersion;
  doc["env_hash"] = env_hash;
  doc["gamma"] = params.guidance_strength;
  doc["step"] = step;
  doc["T"] = params.horizon();
  doc["A"] = params.alphabet();
  doc["theta"] = params.logits.data();
  return doc;
}

Checkpoint checkpoint_from_json(const nlohmann::json& doc) {
  if (doc.at("version").get<int>() != kCheckpointVersion)
    throw std::invalid_argument("checkpoint: unsupported version");
  Checkpoint ck;
  const int T = doc.at("T").get<int>();
  const int A = doc.at("A").get<int>();
  ck.params.logits = Table(T, A);
  auto theta = doc.at("theta").get<std::vector<double>>();
  if (theta.size() != ck.params.logits.data().size()) throw std::invalid_argument("checkpoint: theta size mismatch");
  ck.params.logits.data() = std::move(theta);
  ck.params.guidance_strength = doc.at("gamma").get<double>();
  ck.env_hash = doc.at("env_hash").get<std::string>();
  ck.step = doc.at("step").get<int>();
  ck.params.validate();
  return ck;
}

}  // namespace guidelab
