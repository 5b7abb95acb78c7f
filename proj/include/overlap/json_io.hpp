#pragma once

// JSON forms of the report types. Kept apart so the numeric headers do not need nlohmann/json.

#include <cmath>
#include <string>

#include <json.hpp>

#include "overlap/asymptotic.hpp"
#include "overlap/minimax_ci.hpp"
#include "overlap/simulation.hpp"

namespace overlap {

inline constexpr int kSchemaVersion = 1;

// Non-finite doubles become null.
inline nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline void to_json(nlohmann::json& j, const Interval& iv) {
  j = {{"lower", num(iv.lower)}, {"upper", num(iv.upper)}, {"alpha", iv.alpha}};
}

inline void to_json(nlohmann::json& j, const IntervalReport& r) {
  j = {{"estimate", num(r.estimate)},
       {"maxbias", num(r.maxbias)},
       {"sd", num(r.sd)},
       {"cv", num(r.cv)},
       {"lower", num(r.lower)},
       {"upper", num(r.upper)},
       {"delta_star", num(r.delta_star)},
       {"alpha", r.alpha},
       {"omega", num(r.omega)},
       {"omega_prime", num(r.omega_prime)},
       {"weight_sum", num(r.weight_sum)},
       {"degenerate", r.degenerate},
       {"bracket_warning", r.bracket_warning}};
}

inline void to_json(nlohmann::json& j, const AsymptoticCI& c) {
  j = {{"estimate", num(c.estimate)}, {"se", num(c.se)},     {"lower", num(c.lower)},
       {"upper", num(c.upper)},       {"alpha", c.alpha},     {"n_used", c.n_used},
       {"epsilon_used", c.epsilon_used ? nlohmann::json(*c.epsilon_used) : nlohmann::json(nullptr)}};
}

inline void to_json(nlohmann::json& j, const SequenceEntry& e) {
  j = {{"t", e.t},         {"estimate", num(e.estimate)}, {"maxbias", num(e.maxbias)},
       {"sd", num(e.sd)},  {"alpha_t", e.alpha_t},        {"lower", num(e.lower)},
       {"upper", num(e.upper)}, {"delta_star", num(e.delta_star)}, {"degenerate", e.degenerate}};
}

inline void to_json(nlohmann::json& j, const MethodSummary& s) {
  j = {{"method", method_name(s.method)},
       {"target", s.target},
       {"ok", s.ok},
       {"failed", s.failed},
       {"coverage", num(s.coverage)},
       {"coverage_se", num(s.coverage_se)},
       {"mean_half_length", num(s.mean_half_length)},
       {"half_length_se", num(s.half_length_se)},
       {"errors", s.errors}};
  if (!s.alt_target.empty()) {
    j["alt_target"] = s.alt_target;
    j["coverage_alt"] = num(s.coverage_alt);
  }
}

}  // namespace overlap
