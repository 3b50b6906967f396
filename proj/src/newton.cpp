#include "gridnum/newton.hpp"

#include <algorithm>
#include <cmath>

namespace gridnum {

NewtonConfig NewtonConfig::for_scenario(const Scenario& s) {
  NewtonConfig cfg;
  cfg.base = DualConfig::for_scenario(s);
  return cfg;
}

DualDerivatives dual_gradient_and_curvature(const Scenario& s, const PriceSignal& p) {
  if (s.has_batteries()) throw SolverError("dual curvature is undefined for scenarios with batteries");
  const int T = s.slots();
  if (static_cast<int>(p.size()) != T) throw DimensionError("price vector length does not match horizon");
  auto agents = make_agents(s, false, true);
  RoundMessage msg;
  msg.payload = p.p;
  DualDerivatives out{std::vector<double>(T, 0.0), std::vector<double>(T, 0.0)};
  for (std::size_t k = 0; k < agents.size(); ++k) {
    const auto reply = agents[k]->respond(msg);
    const double sign = k < s.users.size() ? 1.0 : -1.0;
    for (int t = 0; t < T; ++t) {
      out.g[t] += sign * reply.payload[t];
      out.h[t] += sign * (*reply.slope)[t];
    }
  }
  return out;
}

PriceSignal newton_price_step(const PriceSignal& p, const std::vector<double>& g, const std::vector<double>& h,
                              const std::vector<double>& alpha, double gamma, double h_floor) {
  if (g.size() != p.size() || h.size() != p.size() || alpha.size() != p.size())
    throw DimensionError("newton_price_step: length mismatch");
  PriceSignal out = p;
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (std::abs(h[t]) >= h_floor)
      out[t] = std::max(0.0, p[t] - alpha[t] * g[t] / h[t]);
    else
      out[t] = std::max(0.0, p[t] + gamma * g[t]);
  }
  return out;
}

PriceSignal newton_price_step(const PriceSignal& p, const std::vector<double>& g, const std::vector<double>& h,
                              double alpha, double gamma, double h_floor) {
  return newton_price_step(p, g, h, std::vector<double>(p.size(), alpha), gamma, h_floor);
}

NewtonPolicy::NewtonPolicy(const NewtonConfig& cfg, int slots) : cfg_(cfg), cap_(slots, 1.0) {}

PriceSignal NewtonPolicy::next(const PriceSignal& p, const std::vector<double>& mismatch,
                               const std::vector<RoundMessage>& replies, int k) {
  const std::size_t T = p.size();
  // Curvature only on slots where every agent reported a slope.
  std::vector<double> h(T, 0.0);
  std::vector<char> full(T, 1);
  for (const auto& r : replies) {
    const double sign = r.direction == Direction::supply_reply ? -1.0 : 1.0;
    for (std::size_t t = 0; t < T; ++t) {
      if (!r.slope || r.slope->size() != T)
        full[t] = 0;
      else
        h[t] += sign * (*r.slope)[t];
    }
  }
  for (std::size_t t = 0; t < T; ++t)
    if (!full[t]) h[t] = 0.0;

  const double norm = projected_mismatch(p, mismatch);
  if (prev_norm_ >= 0.0) {
    if (norm > prev_norm_ && halvings_ < cfg_.retry_cap) {
      scale_ *= 0.5;
      ++halvings_;
    } else if (norm < prev_norm_) {
      scale_ = std::min(1.0, 2.0 * scale_);
    }
    for (std::size_t t = 0; t < T; ++t) {
      const bool flipped = (mismatch[t] > 0.0) != (prev_g_[t] > 0.0) && mismatch[t] != 0.0 && prev_g_[t] != 0.0;
      if (flipped && std::abs(mismatch[t]) > cfg_.base.tol_balance)
        cap_[t] = std::min(cap_[t], cfg_.overshoot_damping);
    }
  }
  prev_norm_ = norm;
  prev_g_ = mismatch;

  std::vector<double> alpha(T);
  for (std::size_t t = 0; t < T; ++t) alpha[t] = scale_ * cap_[t];
  const double gamma = cfg_.base.step_rule == StepRule::constant
                           ? cfg_.base.gamma0
                           : cfg_.base.gamma0 / std::sqrt(static_cast<double>(k));
  return newton_price_step(p, mismatch, h, alpha, gamma, cfg_.h_floor);
}

MarketResult run_newton(const Scenario& s, const NewtonConfig& cfg, MessageBus& bus) {
  NewtonPolicy policy(cfg, s.slots());
  return run_market(s, cfg.base, bus, policy, false);
}

MarketResult run_newton(const Scenario& s, const NewtonConfig& cfg) {
  InProcessBus bus(make_agents(s, false, true));
  return run_newton(s, cfg, bus);
}

}  // namespace gridnum
