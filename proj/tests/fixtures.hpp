#pragma once

// Hand-built models with known outputs.

#include <algorithm>

#include "chno/operators.hpp"

namespace fixtures {

/// FNO whose every output frame equals the last input frame. Activations see
/// inputs shifted by +10, where GELU is the identity to double precision.
inline chno::OperatorModel identity_fno(int n_in, int n_out) {
  chno::ModelConfig c;
  c.kind = chno::ModelKind::FNO;
  c.n_in = n_in;
  c.n_out = n_out;
  c.coord_channels = false;
  c.fno.width = 3;
  c.fno.n_layers = 2;
  c.fno.modes = {2, 2};
  c.fno.lift_channels = 4;
  c.fno.proj_channels = 4;
  chno::OperatorModel m(c);
  for (auto &[name, p] : m.params().entries()) std::fill(p.values.begin(), p.values.end(), 0.0);
  auto &ps = m.params();
  const double shift = 10.0;
  // weight (cout, cin): entry (0, col)
  ps.get("lift.0.weight").values[n_in - 1] = 1.0;
  ps.get("lift.0.bias").values[0] = shift;
  ps.get("lift.1.weight").values[0] = 1.0;
  ps.get("lift.1.bias").values[0] = -shift;
  ps.get("block0.skip.weight").values[0] = 1.0;
  ps.get("block0.skip.bias").values[0] = shift;
  ps.get("block1.skip.weight").values[0] = 1.0;
  ps.get("block1.skip.bias").values[0] = -shift;
  ps.get("proj.0.weight").values[0] = 1.0;
  ps.get("proj.0.bias").values[0] = shift;
  auto &w = ps.get("proj.1.weight").values;
  auto &b = ps.get("proj.1.bias").values;
  for (int o = 0; o < n_out; ++o) {
    w[o * 4] = 1.0;
    b[o] = -shift;
  }
  return m;
}

} // namespace fixtures
