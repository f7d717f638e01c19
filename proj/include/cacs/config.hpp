#pragma once

#include <cstdint>
#include <sstream>
#include <string>

#include "cacs/loss.hpp"
#include "cacs/scoring.hpp"

namespace cacs {

/// Operating defaults shared by the CLI commands. Printed by --show-config so
/// every run is self-documenting.
struct Config {
  double prob_threshold = 0.5;
  int hu_threshold = 130;
  double min_lesion_mm2 = 1.0;
  Connectivity connectivity = Connectivity::c26;
  BootstrapParams bootstrap;  // t=0.9, alpha=8, beta=1
  double lr0 = 0.001;
  double momentum = 0.9;
  int epochs = 25;
  std::uint64_t seed = 0;

  ScoringOptions scoring_options() const {
    return ScoringOptions{prob_threshold, hu_threshold, min_lesion_mm2, connectivity};
  }

  std::string show() const {
    std::ostringstream out;
    out << "prob_threshold " << prob_threshold << "\n";
    out << "hu_threshold " << hu_threshold << "\n";
    out << "min_lesion_mm2 " << min_lesion_mm2 << "\n";
    out << "connectivity " << (connectivity == Connectivity::c26 ? "26" : "8-2d") << "\n";
    out << "bootstrap_t " << bootstrap.t << "\n";
    out << "bootstrap_alpha " << bootstrap.alpha << "\n";
    out << "bootstrap_beta " << bootstrap.beta << "\n";
    out << "lr0 " << lr0 << "\n";
    out << "momentum " << momentum << "\n";
    out << "epochs " << epochs << "\n";
    out << "seed " << seed << "\n";
    return out.str();
  }
};

}  // namespace cacs
