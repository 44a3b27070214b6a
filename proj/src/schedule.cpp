#include "skd/errors.hpp"
#include "skd/trainer.hpp"

#include <cmath>
#include <numbers>

namespace skd {

namespace {

constexpr double kOneCycleWarmup = 0.25;
constexpr double kOneCycleDiv = 25.0;
constexpr double kOneCycleFinalDiv = 1e5;

double cosine(double from, double to, double pct) {
  return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * pct));
}

}  // namespace

std::string to_string(Schedule schedule) { return schedule == Schedule::constant ? "constant" : "one_cycle"; }

Schedule schedule_from_string(const std::string& text) {
  if (text == "constant") return Schedule::constant;
  if (text == "one_cycle") return Schedule::one_cycle;
  throw ConfigError("unknown schedule '" + text + "'; expected constant or one_cycle");
}

LrSchedule::LrSchedule(Schedule kind, double max_lr, int64_t total_steps)
    : kind_(kind), max_lr_(max_lr), total_steps_(std::max<int64_t>(total_steps, 1)) {}

double LrSchedule::at(int64_t step) const {
  if (kind_ == Schedule::constant) return max_lr_;
  const double warm_steps = kOneCycleWarmup * static_cast<double>(total_steps_);
  const double s = static_cast<double>(std::clamp<int64_t>(step, 0, total_steps_ - 1));
  if (s < warm_steps) {
    return cosine(max_lr_ / kOneCycleDiv, max_lr_, s / warm_steps);
  }
  const double rest = static_cast<double>(total_steps_) - warm_steps;
  const double pct = rest > 1.0 ? (s - warm_steps) / (rest - 1.0) : 1.0;
  return cosine(max_lr_, max_lr_ / kOneCycleFinalDiv, std::min(pct, 1.0));
}

}  // namespace skd
