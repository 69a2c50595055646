#pragma once

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "rdsmall/cli.hpp"

namespace test_support {

inline std::string fixture(const std::string& name) { return std::string(RDSMALL_FIXTURE_DIR) + "/" + name; }
inline std::string data_file(const std::string& name) { return std::string(RDSMALL_DATA_DIR) + "/" + name; }

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  return j;
}

inline rdsmall::RDSample load_xy(const std::string& path, double cutoff, const char* xc = "x", const char* yc = "y") {
  return rdsmall::cli::read_csv(path, xc, yc, cutoff, true).sample;
}

inline bool rel_close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace test_support
