#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "glta/errors.hpp"

namespace glta {

struct TrainRecord {
  int64_t epoch = 0;
  double loss = 0.0;
  int64_t wall_ms = 0;
};

inline int64_t steady_now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// JSON-lines training log, one {epoch, loss, wall_ms} object per epoch.
inline void write_train_log(const std::filesystem::path& path,
                            const std::vector<TrainRecord>& records, bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw Error("train log: cannot open " + path.string());
  for (const TrainRecord& r : records) {
    nlohmann::json j = {{"epoch", r.epoch}, {"loss", r.loss}, {"wall_ms", r.wall_ms}};
    out << j.dump() << "\n";
  }
}

}  // namespace glta
