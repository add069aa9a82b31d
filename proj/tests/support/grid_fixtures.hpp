#pragma once

#include <array>
#include <vector>

#include "epd/experiments.hpp"

namespace epd::support {

// Test L1 (km) for the 18 (size, gamma, lr) cells of two finished grids, rows
// in table order: size 256,128,64; gamma 0.5,0.9; lr 1e-3,1e-4,1e-5.
inline constexpr std::array<double, 18> kResnetLocalNoPs = {51.74, 49.21, 48.81, 47.08, 47.06, 24.93,
                                                            23.57, 22.28, 19.9,  19.86, 19.78, 19.58,
                                                            19.35, 19.06, 18.44, 18.06, 15.99, 13.33};
inline constexpr std::array<double, 18> kResnetLocalPs = {16.55, 15.45, 13.17, 11.55, 9.79, 9.51,
                                                          8.05,  7.49,  7.1,   6.85,  6.51, 6.28,
                                                          5.97,  5.62,  5.46,  4.64,  4.51, 4.47};
inline constexpr std::array<double, 18> kTcnGlobalNoPs = {10.8, 10.18, 5.35, 4.16, 3.02, 2.88, 7.73, 6.8,  5.52,
                                                          5.12, 3.21,  3.16, 12.56, 9.67, 9.32, 8.55, 3.67, 3.14};
inline constexpr std::array<double, 18> kTcnGlobalPs = {3.51, 3.48, 3.45, 3.45, 3.44, 3.43, 2.96, 2.94, 2.93,
                                                        2.91, 2.9,  2.88, 2.86, 2.84, 2.81, 2.74, 2.7,  2.64};

/// Done records for one model/dataset with the given No PS and PS columns.
inline std::vector<experiments::ExperimentRecord> table_records(nn::Arch model, const std::string& dataset,
                                                                const std::array<double, 18>& no_ps,
                                                                const std::array<double, 18>& ps) {
  std::vector<experiments::ExperimentRecord> out;
  std::size_t row = 0;
  for (int size : {256, 128, 64}) {
    for (double gamma : {0.5, 0.9}) {
      for (double lr : {1e-3, 1e-4, 1e-5}) {
        for (bool p : {false, true}) {
          experiments::ExperimentRecord r;
          r.cell = {model, size, gamma, lr, p, dataset};
          r.run_id = experiments::run_id(r.cell, 0);
          r.test_l1_km = p ? ps[row] : no_ps[row];
          out.push_back(r);
        }
        ++row;
      }
    }
  }
  return out;
}

}  // namespace epd::support
