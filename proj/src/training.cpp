#include "icvrag/training.hpp"

#include <cstdio>

namespace icvrag {

std::string loss_log_header() { return "step,alpha,l_cos,l_gen,l_combined"; }

std::string loss_log_line(const LossReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g", static_cast<unsigned long long>(r.step), r.alpha,
                r.l_cos, r.l_gen, r.l_combined);
  return buf;
}

}  // namespace icvrag
