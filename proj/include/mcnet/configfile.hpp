#pragma once

#include <map>
#include <string>
#include <vector>

#include "mcnet/model.hpp"
#include "mcnet/pipeline.hpp"

namespace mcnet {

/// Minimal TOML-style reader: [sections], key = value, where value is a
/// number, true/false, a "string" (quotes optional) or a [comma, list].
/// Errors carry file:line positions.
class ConfigFile {
 public:
  struct Entry {
    std::string key, value;
    int line = 0;
  };

  static ConfigFile parse(const std::string& text, const std::string& filename = "<config>");
  static ConfigFile load(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  const Entry* find(const std::string& section, const std::string& key) const;
  const std::vector<Entry>& section(const std::string& name) const;  // empty if absent

  // typed accessors; throw UsageError with position info on bad values
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  std::vector<int> get_int_list(const std::string& section, const std::string& key,
                                const std::vector<int>& fallback) const;

  const std::string& filename() const { return filename_; }

 private:
  std::map<std::string, std::vector<Entry>> sections_;
  std::string filename_ = "<config>";
};

/// Applies the [model] section over a base config; unknown keys are errors.
ModelConfig model_config_from(const ConfigFile& file, ModelConfig base);

/// Applies a schedule section ([train], [train_dn], [finetune]) over a base.
TrainSchedule schedule_from(const ConfigFile& file, const std::string& section,
                            TrainSchedule base);

/// Single dotted override ("model.depth" = "2"), used by the ablation grid.
void apply_override(ModelConfig& model, TrainSchedule& train, const std::string& dotted_key,
                    const std::string& value);

struct GridAxis {
  std::string key;                  // dotted, e.g. "model.depth"
  std::vector<std::string> values;  // raw strings
};

/// The [grid] section as ordered ablation axes.
std::vector<GridAxis> grid_axes(const ConfigFile& file);

/// Serializations used to make run directories self-describing.
std::string model_section_text(const ModelConfig& config);
std::string schedule_section_text(const std::string& section, const TrainSchedule& schedule);

}  // namespace mcnet
