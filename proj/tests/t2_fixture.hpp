#pragma once

// Twenty hand-built prediction records with five raw outputs each, and the
// metric values computed for them independently of the library.

#include <string>
#include <vector>

#include "trajlens/destination.hpp"

namespace t2fixture {

struct Row {
  const char* id;
  trajlens::Coordinate truth;
  std::vector<std::string> outputs;
};

inline const std::vector<Row>& rows() {
  static const std::vector<Row> kRows{
      {"r00", {116.2, 39.95}, {"(116.19926, 39.95044)", "Destination ( , )", "Destination ( , )", "Destination ( , )", "(116.19946, 39.95018)"}},
      {"r01", {116.21, 39.955}, {"I think near the park", " Destination (116.2100, 39.9550) done", "I think near the park", " Destination (116.2100, 39.9550) done", "(116.21135, 39.95531)"}},
      {"r02", {116.22, 39.96}, {"(116.21692, 39.96131)", " Destination (116.2167, 39.9590) done", "(116.21949, 39.95978)", " Destination (116.2243, 39.9623) done", "(116.22000, 39.96000)"}},
      {"r03", {116.23, 39.965}, {"garbage", "(200.0, 95.0)", "no idea", "Destination (181, 10)", "(1, )"}},
      {"r04", {116.24, 39.97}, {"(116.24039, 39.96896)", " Destination (116.2412, 39.9705) done", "(116.25246, 39.96047)", " Destination (116.2373, 39.9683) done", "Destination ( , )"}},
      {"r05", {116.25, 39.975}, {"(116.25305, 39.97830)", " Destination (116.2500, 39.9750) done", "Destination ( , )", " Destination (116.2472, 39.9784) done", "(116.23457, 39.96851)"}},
      {"r06", {116.26, 39.98}, {"(116.26055, 39.97985)", " Destination (116.2605, 39.9802) done", "(116.25620, 39.99317)", " Destination (116.2652, 39.9806) done", "(116.25928, 39.97954)"}},
      {"r07", {116.27, 39.985}, {"(116.27016, 39.98393)", "I think near the park", "(116.28540, 39.99154)", " Destination (116.2726, 39.9832) done", "(116.26905, 39.98240)"}},
      {"r08", {116.28, 39.99}, {"(116.28793, 39.98835)", " Destination (116.2805, 39.9906) done", "(116.28000, 39.99000)", " Destination (116.2793, 39.9926) done", "Destination ( , )"}},
      {"r09", {116.29, 39.995}, {"(116.29505, 39.99382)", " Destination (116.2900, 39.9950) done", "(116.28341, 39.99876)", " Destination (116.2783, 39.9849) done", "I think near the park"}},
      {"r10", {116.3, 40.0}, {"(116.30922, 40.01149)", " Destination (116.3000, 40.0000) done", "(116.30056, 39.99986)", " Destination (116.3004, 39.9997) done", "(116.29938, 39.99946)"}},
      {"r11", {116.31, 40.005}, {"garbage", "(200.0, 95.0)", "no idea", "Destination (181, 10)", "(1, )"}},
      {"r12", {116.32, 40.01}, {"(116.30248, 40.01137)", "I think near the park", "(116.31651, 40.01036)", " Destination (116.3200, 40.0100) done", "(116.32320, 40.01322)"}},
      {"r13", {116.33, 40.015}, {"(116.33000, 40.01500)", " Destination (116.3298, 40.0146) done", "(116.33443, 40.01279)", " Destination (116.3286, 40.0148) done", "(116.32654, 40.01194)"}},
      {"r14", {116.34, 40.02}, {"(116.34049, 40.01899)", " Destination (116.3404, 40.0210) done", "(116.34000, 40.02000)", " Destination (116.3390, 40.0335) done", "(116.33500, 40.02132)"}},
      {"r15", {116.35, 40.025}, {"(116.35507, 40.02387)", " Destination (116.3511, 40.0256) done", "(116.35149, 40.02888)", " Destination (116.3500, 40.0250) done", "(116.35030, 40.02461)"}},
      {"r16", {116.36, 40.03}, {"(200.0, 10.0)", " Destination (116.3586, 40.0301) done", "(116.36452, 40.03210)", " Destination (116.3520, 40.0314) done", "(116.35991, 40.02956)"}},
      {"r17", {116.37, 40.035}, {"(116.37093, 40.03512)", " Destination (116.3761, 40.0224) done", "Destination ( , )", " Destination (116.3729, 40.0384) done", "(116.37000, 40.03500)"}},
      {"r18", {116.38, 40.04}, {"(116.37942, 40.03993)", " Destination (116.3882, 40.0395) done", "(116.38139, 40.04019)", " Destination (116.3801, 40.0389) done", "(116.38415, 40.03457)"}},
      {"r19", {116.39, 40.045}, {"Destination ( , )", " Destination (116.3808, 40.0335) done", "(116.39383, 40.03943)", " Destination (116.3891, 40.0449) done", "(116.39000, 40.04500)"}},
  };
  return kRows;
}

inline constexpr double kValidity5 = 0.76;
inline constexpr double kError1 = 0.39790745322103305;
inline constexpr std::size_t kExcluded1 = 5;
inline constexpr double kError5Min = 0.024106358490992533;
inline constexpr std::size_t kExcluded5 = 2;
inline constexpr double kError5Mean = 0.3805812690161276;
inline constexpr double kAcc1At100 = 0.25;
inline constexpr double kAcc1At500 = 0.6;
inline constexpr double kAcc5At100 = 0.8;
inline constexpr double kAcc5At500 = 0.9;

inline std::vector<trajlens::PredictionRecord> records(std::size_t k = 5) {
  std::vector<trajlens::PredictionRecord> out;
  for (const auto& r : rows()) out.push_back(trajlens::make_record(r.id, r.truth, r.outputs, k));
  return out;
}

inline std::vector<std::vector<std::string>> raw_outputs() {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows()) out.push_back(r.outputs);
  return out;
}

inline std::vector<trajlens::Coordinate> truths() {
  std::vector<trajlens::Coordinate> out;
  for (const auto& r : rows()) out.push_back(r.truth);
  return out;
}

}  // namespace t2fixture
