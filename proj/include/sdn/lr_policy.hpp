#pragma once

#include <cstdint>
#include <string>

namespace sdn {

enum class LrKind { Fixed, Step, Inv };

std::string to_string(LrKind kind);
LrKind parse_lr_kind(const std::string& text);

struct LrPolicy {
  LrKind kind = LrKind::Fixed;
  double base_lr = 0.001;
  double gamma = 0.1;
  std::int64_t step_size = 20000;
  double power = 0.75;

  void validate() const;
};

// fixed: base_lr
// step:  base_lr * gamma^floor(iter / step_size)
// inv:   base_lr * (1 + gamma * iter)^(-power)
// Evaluated in extended precision and rounded once to double.
double lr_at(const LrPolicy& policy, std::int64_t iter);

}  // namespace sdn
