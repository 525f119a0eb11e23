#include "mcnet/configfile.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace mcnet {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& s) {
  bool in_quote = false;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_quote = !in_quote;
    if (s[i] == '#' && !in_quote) return s.substr(0, i);
  }
  return s;
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

[[noreturn]] void fail(const std::string& file, int line, const std::string& msg) {
  throw UsageError(file + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_list(const std::string& raw) {
  std::string body = raw;
  if (!body.empty() && body.front() == '[') {
    if (body.back() != ']') throw UsageError("unterminated list '" + raw + "'");
    body = body.substr(1, body.size() - 2);
  }
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(body);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(unquote(item));
  }
  return out;
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text, const std::string& filename) {
  ConfigFile cf;
  cf.filename_ = filename;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail(filename, lineno, "unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section.empty()) fail(filename, lineno, "empty section name");
      cf.sections_[section];
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos) fail(filename, lineno, "expected key = value, got '" + s + "'");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty()) fail(filename, lineno, "empty key");
    if (section.empty()) fail(filename, lineno, "key outside any [section]");
    cf.sections_[section].push_back({key, value, lineno});
  }
  return cf;
}

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse(text, path);
}

const std::vector<ConfigFile::Entry>& ConfigFile::section(const std::string& name) const {
  static const std::vector<Entry> empty;
  auto it = sections_.find(name);
  return it == sections_.end() ? empty : it->second;
}

const ConfigFile::Entry* ConfigFile::find(const std::string& section_name,
                                          const std::string& key) const {
  for (const auto& e : section(section_name))
    if (e.key == key) return &e;
  return nullptr;
}

bool ConfigFile::has(const std::string& section_name, const std::string& key) const {
  return find(section_name, key) != nullptr;
}

int ConfigFile::get_int(const std::string& section_name, const std::string& key,
                        int fallback) const {
  const Entry* e = find(section_name, key);
  if (!e) return fallback;
  try {
    size_t pos = 0;
    int v = std::stoi(e->value, &pos);
    if (pos != e->value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    fail(filename_, e->line, "expected integer for " + key + ", got '" + e->value + "'");
  }
}

double ConfigFile::get_double(const std::string& section_name, const std::string& key,
                              double fallback) const {
  const Entry* e = find(section_name, key);
  if (!e) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(e->value, &pos);
    if (pos != e->value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    fail(filename_, e->line, "expected number for " + key + ", got '" + e->value + "'");
  }
}

bool ConfigFile::get_bool(const std::string& section_name, const std::string& key,
                          bool fallback) const {
  const Entry* e = find(section_name, key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1") return true;
  if (e->value == "false" || e->value == "0") return false;
  fail(filename_, e->line, "expected true/false for " + key + ", got '" + e->value + "'");
}

std::string ConfigFile::get_string(const std::string& section_name, const std::string& key,
                                   const std::string& fallback) const {
  const Entry* e = find(section_name, key);
  return e ? unquote(e->value) : fallback;
}

std::vector<int> ConfigFile::get_int_list(const std::string& section_name, const std::string& key,
                                          const std::vector<int>& fallback) const {
  const Entry* e = find(section_name, key);
  if (!e) return fallback;
  std::vector<int> out;
  try {
    for (const std::string& item : split_list(e->value)) out.push_back(std::stoi(item));
  } catch (const std::exception&) {
    fail(filename_, e->line, "expected integer list for " + key + ", got '" + e->value + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void set_model_key(ModelConfig& c, const std::string& key, const std::string& raw,
                   const std::string& where) {
  std::string v = unquote(trim(raw));
  try {
    if (key == "preprocessing") c.preprocessing = preproc_from(v);
    else if (key == "dn_filters") c.dn_filters = std::stoi(v);
    else if (key == "dn_filter_size") c.dn_filter_size = std::stoi(v);
    else if (key == "dn_init") c.dn_init = dn_init_from(v);
    else if (key == "depth") c.depth = std::stoi(v);
    else if (key == "kernel_set") {
      c.kernel_set.clear();
      for (const std::string& item : split_list(v)) c.kernel_set.push_back(std::stoi(item));
    } else if (key == "branch_width") c.branch_width = std::stoi(v);
    else if (key == "head_channels") c.head_channels = std::stoi(v);
    else if (key == "activation") c.activation = activation_from(v);
    else if (key == "attention") c.attention = v == "true" || v == "1";
    else if (key == "input_size") c.input_size = std::stoi(v);
    else if (key == "abs_blocks") {
      c.abs_blocks.clear();
      for (const std::string& item : split_list(v)) c.abs_blocks.push_back(std::stoi(item));
    } else
      throw UsageError(where + ": unknown model key '" + key + "'");
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw UsageError(where + ": bad value '" + raw + "' for model." + key);
  }
}

void set_train_key(TrainSchedule& s, const std::string& key, const std::string& raw,
                   const std::string& where) {
  std::string v = unquote(trim(raw));
  try {
    if (key == "lr") s.lr = std::stod(v);
    else if (key == "decay_factor") s.decay_factor = std::stod(v);
    else if (key == "decay_every") s.decay_every = std::stoi(v);
    else if (key == "epochs") s.epochs = std::stoi(v);
    else if (key == "batch_pairs") s.batch_pairs = std::stoi(v);
    else if (key == "augment_p") s.augment_p = std::stod(v);
    else if (key == "seed") s.seed = std::stoull(v);
    else if (key == "max_steps") s.max_steps = std::stoll(v);
    else if (key == "eval_every") s.eval_every = std::stoi(v);
    else if (key == "select_from_epoch") s.select_from_epoch = std::stoi(v);
    else if (key == "end_to_end") s.end_to_end = v == "true" || v == "1";
    else if (key == "dn_target") s.dn_target = v;
    else if (key == "stop_below_train_loss") s.stop_below_train_loss = std::stod(v);
    else if (key == "stop_below_val_pe") s.stop_below_val_pe = std::stod(v);
    else
      throw UsageError(where + ": unknown schedule key '" + key + "'");
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw UsageError(where + ": bad value '" + raw + "' for " + key);
  }
}

}  // namespace

ModelConfig model_config_from(const ConfigFile& file, ModelConfig base) {
  for (const auto& e : file.section("model"))
    set_model_key(base, e.key, e.value,
                  file.filename() + ":" + std::to_string(e.line));
  return base;
}

TrainSchedule schedule_from(const ConfigFile& file, const std::string& section,
                            TrainSchedule base) {
  for (const auto& e : file.section(section))
    set_train_key(base, e.key, e.value, file.filename() + ":" + std::to_string(e.line));
  return base;
}

void apply_override(ModelConfig& model, TrainSchedule& train, const std::string& dotted_key,
                    const std::string& value) {
  auto dot = dotted_key.find('.');
  if (dot == std::string::npos)
    throw UsageError("grid axis '" + dotted_key + "' must be model.<key> or train.<key>");
  std::string ns = dotted_key.substr(0, dot), key = dotted_key.substr(dot + 1);
  if (ns == "model")
    set_model_key(model, key, value, "grid axis " + dotted_key);
  else if (ns == "train")
    set_train_key(train, key, value, "grid axis " + dotted_key);
  else
    throw UsageError("grid axis '" + dotted_key + "': namespace must be model or train");
}

std::vector<GridAxis> grid_axes(const ConfigFile& file) {
  std::vector<GridAxis> axes;
  for (const auto& e : file.section("grid")) {
    GridAxis axis;
    axis.key = e.key;
    axis.values = split_list(e.value);
    if (axis.values.empty())
      throw UsageError(file.filename() + ":" + std::to_string(e.line) + ": empty grid axis '" +
                       e.key + "'");
    axes.push_back(std::move(axis));
  }
  return axes;
}



std::string model_section_text(const ModelConfig& config) {
  std::ostringstream os;
  os << "[model]\n";
  std::istringstream lines(config.to_text());
  std::string line;
  while (std::getline(lines, line)) os << line << "\n";
  return os.str();
}

std::string schedule_section_text(const std::string& section, const TrainSchedule& s) {
  std::ostringstream os;
  char buf[64];
  os << "[" << section << "]\n";
  std::snprintf(buf, sizeof(buf), "%.17g", s.lr);
  os << "lr = " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", s.decay_factor);
  os << "decay_factor = " << buf << "\n";
  os << "decay_every = " << s.decay_every << "\n";
  os << "epochs = " << s.epochs << "\n";
  os << "batch_pairs = " << s.batch_pairs << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", s.augment_p);
  os << "augment_p = " << buf << "\n";
  os << "seed = " << s.seed << "\n";
  os << "max_steps = " << s.max_steps << "\n";
  os << "eval_every = " << s.eval_every << "\n";
  os << "select_from_epoch = " << s.select_from_epoch << "\n";
  os << "end_to_end = " << (s.end_to_end ? "true" : "false") << "\n";
  os << "dn_target = " << s.dn_target << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", s.stop_below_train_loss);
  os << "stop_below_train_loss = " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", s.stop_below_val_pe);
  os << "stop_below_val_pe = " << buf << "\n";
  return os.str();
}

}  // namespace mcnet
