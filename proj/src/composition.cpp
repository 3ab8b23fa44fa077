// SPDX-License-Identifier: Apache-2.0
#include "esm2/composition.hpp"

#include <string>

#include "esm2/error.hpp"
#include "esm2/text.hpp"

namespace esm2 {

namespace {

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ValidationError(std::string("composition: ") + name + " = " + format_double(p) +
                          " outside [0, 1]");
  }
}

}  // namespace

ComposedProbs compose(const TowerOutputs& y) {
  check_prob(y.y1, "y1");
  check_prob(y.y2, "y2");
  check_prob(y.y3, "y3");
  check_prob(y.y4, "y4");
  ComposedProbs p;
  p.pctr = y.y1;
  p.pctavr = y.y1 * y.y2;
  p.pcvr = y.y4 * (1.0 - y.y2) + y.y2 * y.y3;
  p.pctcvr = y.y1 * p.pcvr;
  return p;
}

TowerOutputs compose_backward(const TowerOutputs& y, const ComposedProbs& up) {
  check_prob(y.y1, "y1");
  check_prob(y.y2, "y2");
  check_prob(y.y3, "y3");
  check_prob(y.y4, "y4");
  const double pcvr = y.y4 * (1.0 - y.y2) + y.y2 * y.y3;
  // pcvr feeds pctcvr = y1 * pcvr, so its total upstream is up.pcvr + y1 * up.pctcvr.
  const double g_pcvr = up.pcvr + y.y1 * up.pctcvr;
  TowerOutputs g;
  g.y1 = up.pctr + y.y2 * up.pctavr + pcvr * up.pctcvr;
  g.y2 = y.y1 * up.pctavr + (y.y3 - y.y4) * g_pcvr;
  g.y3 = y.y2 * g_pcvr;
  g.y4 = (1.0 - y.y2) * g_pcvr;
  return g;
}

ComposedProbs compose_esmm(double y_ctr, double y_cvr) {
  check_prob(y_ctr, "y_ctr");
  check_prob(y_cvr, "y_cvr");
  return ComposedProbs{y_ctr, 0.0, y_cvr, y_ctr * y_cvr};
}

EsmmGrads compose_esmm_backward(double y_ctr, double y_cvr, const ComposedProbs& up) {
  check_prob(y_ctr, "y_ctr");
  check_prob(y_cvr, "y_cvr");
  return EsmmGrads{up.pctr + y_cvr * up.pctcvr, up.pcvr + y_ctr * up.pctcvr};
}

}  // namespace esm2
