// SPDX-License-Identifier: Apache-2.0
#pragma once

// Parameter-free composition of the four tower probabilities along
//   impression -> click -> D(O)Action -> purchase
// and its exact backward pass.

namespace esm2 {

struct TowerOutputs {
  double y1 = 0.0;  // impression -> click
  double y2 = 0.0;  // click -> DAction
  double y3 = 0.0;  // DAction -> purchase
  double y4 = 0.0;  // OAction -> purchase
};

struct ComposedProbs {
  double pctr = 0.0;
  double pctavr = 0.0;
  double pcvr = 0.0;
  double pctcvr = 0.0;
};

/// pctr = y1, pctavr = y1*y2, pcvr = y4*(1-y2) + y2*y3, pctcvr = y1*pcvr.
/// Throws ValidationError when a component lies outside [0, 1].
ComposedProbs compose(const TowerOutputs& y);

/// Upstream gradients dL/d(pctr, pctavr, pcvr, pctcvr) -> dL/d(y1..y4).
TowerOutputs compose_backward(const TowerOutputs& y, const ComposedProbs& upstream);

/// Two-tower entire-space composition: pctcvr = pctr * pcvr. pctavr is 0.
ComposedProbs compose_esmm(double y_ctr, double y_cvr);

struct EsmmGrads {
  double ctr = 0.0;
  double cvr = 0.0;
};

EsmmGrads compose_esmm_backward(double y_ctr, double y_cvr, const ComposedProbs& upstream);

}  // namespace esm2
