#pragma once

#include <cstdint>
#include <string>

#include "splineflow/flow.hpp"
#include "splineflow/training.hpp"

// Run configuration: a flat "key = value" document with [run], [data],
// [model], and [training] sections. Every key has a default, unknown keys are
// rejected with their line number, and emit_config(parse_config(text)) is a
// fixed point so the echoed copy of a run's config parses back identically.

namespace splineflow::config {

enum class DataKind { grid, image, csv };

struct DataConfig {
  DataKind kind = DataKind::grid;
  std::string path;               // source file for image / csv kinds
  std::size_t samples = 1000000;  // draw count for grid / image kinds
  double val_fraction = 0.1;
  double test_fraction = 0.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  DataConfig data;
  flow::ModelConfig model;
  training::TrainConfig training;  // seed field unused; see train_config()

  // One run seed drives everything: the model, the data stream, and the
  // minibatch stream get distinct derived seeds.
  std::uint64_t model_seed() const { return seed; }
  std::uint64_t data_seed() const { return seed + 1; }
  training::TrainConfig train_config() const {
    training::TrainConfig t = training;
    t.seed = seed + 2;
    return t;
  }
};

RunConfig parse_config(const std::string& text);
RunConfig parse_config_file(const std::string& path);
std::string emit_config(const RunConfig& cfg);

const char* kind_name(DataKind kind);

}  // namespace splineflow::config
