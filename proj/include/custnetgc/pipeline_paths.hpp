#pragma once

// Canonical artifact locations under a run's out_dir.

#include <string>

#include "custnetgc/config.hpp"

namespace custnetgc::paths {

inline std::string processed_dir(const RunConfig& c) { return c.out_dir + "/processed"; }
inline std::string processed_manifest(const RunConfig& c) { return processed_dir(c) + "/manifest.csv"; }
inline std::string features_dir(const RunConfig& c) { return c.out_dir + "/features"; }
inline std::string features_meta(const RunConfig& c) { return features_dir(c) + "/features_meta.json"; }
inline std::string model_dir(const RunConfig& c) { return c.out_dir + "/model"; }
inline std::string checkpoint(const RunConfig& c) { return model_dir(c) + "/custnet.ckpt"; }
inline std::string gbdt_model(const RunConfig& c) { return model_dir(c) + "/gbdt.json"; }
inline std::string history(const RunConfig& c) { return model_dir(c) + "/history.csv"; }
inline std::string report_dir(const RunConfig& c) { return c.out_dir + "/report"; }

}  // namespace custnetgc::paths
