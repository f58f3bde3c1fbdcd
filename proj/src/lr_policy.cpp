#include "sdn/lr_policy.hpp"

#include <cmath>

#include "sdn/error.hpp"

namespace sdn {

std::string to_string(LrKind kind) {
  switch (kind) {
    case LrKind::Fixed: return "fixed";
    case LrKind::Step: return "step";
    case LrKind::Inv: return "inv";
  }
  return "?";
}

LrKind parse_lr_kind(const std::string& text) {
  if (text == "fixed") return LrKind::Fixed;
  if (text == "step") return LrKind::Step;
  if (text == "inv") return LrKind::Inv;
  throw SpecError("unknown learning-rate policy '" + text + "' (expected fixed, step or inv)");
}

void LrPolicy::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw SpecError("lr policy: base_lr must be > 0");
  if (kind == LrKind::Step && step_size < 1) throw SpecError("lr policy: step requires step_size >= 1");
  if (kind == LrKind::Inv && !(power > 0.0)) throw SpecError("lr policy: inv requires power > 0");
}

double lr_at(const LrPolicy& policy, std::int64_t iter) {
  if (iter < 0) throw SpecError("lr_at: iteration must be >= 0");
  const long double base = policy.base_lr;
  switch (policy.kind) {
    case LrKind::Fixed:
      return policy.base_lr;
    case LrKind::Step: {
      const std::int64_t drops = iter / policy.step_size;
      return static_cast<double>(base * std::pow(static_cast<long double>(policy.gamma),
                                                 static_cast<long double>(drops)));
    }
    case LrKind::Inv: {
      const long double t = 1.0L + static_cast<long double>(policy.gamma) * static_cast<long double>(iter);
      return static_cast<double>(base * std::pow(t, -static_cast<long double>(policy.power)));
    }
  }
  return policy.base_lr;
}

}  // namespace sdn
