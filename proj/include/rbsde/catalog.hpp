#pragma once

// Drivers addressable by name: zero, linear, perfect_market, borrow_rate, custom.

#include <string>

#include "rbsde/market.hpp"

namespace rbsde {

struct DriverSpec {
  std::string kind = "zero";
  LinearDriverParams linear;  // linear
  MarketModel market;         // perfect_market, borrow_rate
  double borrow_rate = 0.0;   // borrow_rate
  std::string expression;     // custom, over (t, y, z, kappa)
  double lipschitz = 0.0;     // custom
};

inline bool is_driver_kind(const std::string& kind) {
  return kind == "zero" || kind == "linear" || kind == "perfect_market" || kind == "borrow_rate" || kind == "custom";
}

inline Driver make_driver(const DriverSpec& spec, const Lattice& lattice) {
  if (spec.kind == "zero") return zero_driver();
  if (spec.kind == "linear") return linear_driver(spec.linear, lattice.intensity());
  if (spec.kind == "custom") {
    if (!(spec.lipschitz >= 0.0)) throw Error(ErrorCode::InvalidConfig, "custom driver needs lipschitz >= 0");
    return custom_driver(spec.expression, spec.lipschitz);
  }
  if (spec.kind == "perfect_market" || spec.kind == "borrow_rate") {
    spec.market.validate(lattice);
    ImperfectionSpec imp;
    if (spec.kind == "borrow_rate") {
      imp.kind = ImperfectionKind::BorrowRate;
      imp.borrow_rate = spec.borrow_rate;
    }
    return market_driver(spec.market, imp, lattice);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown driver '" + spec.kind + "'");
}

}  // namespace rbsde
