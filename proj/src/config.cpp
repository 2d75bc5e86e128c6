#include "peghole/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "peghole/errors.hpp"

namespace peghole::cfg {

const std::vector<SchemaEntry>& schema() {
  static const std::vector<SchemaEntry> s = {
      {"seed", "1", "base seed for every derived random stream"},
      {"out", "out", "output directory"},

      {"trial.dof", "6", "degrees of freedom: 3, 4, or 6"},
      {"trial.initial_error", "0.15", "initial EE distance from the hole [m]"},
      {"trial.tilt_lo_deg", "0", "6-DoF hole tilt lower bound [deg]"},
      {"trial.tilt_hi_deg", "50", "6-DoF hole tilt upper bound [deg]"},
      {"trial.yaw_max_deg", "40", "4-DoF |yaw| bound [deg]"},
      {"trial.approach_cone_deg", "30", "EE start direction cone [deg]"},
      {"trial.noise_sigma", "0.0", "per-axis sensor noise at test time [m]"},
      {"trial.body", "auto", "auto|cuboid1|cuboid2|cylinder|pentagon"},

      {"gen.coarse_count", "2000", "coarse records to generate"},
      {"gen.fine_count", "2000", "fine records to generate"},
      {"gen.coarse_points", "1024", "points per coarse cloud"},
      {"gen.fine_points", "512", "points per fine crop"},
      {"gen.sigma", "0.025", "confidence map sigma [m]"},
      {"gen.augment", "true", "apply contour augmentation to coarse clouds"},
      {"gen.noise_sigma", "0.0", "sensor noise baked into training data [m]"},
      {"gen.crop_radius", "0.08", "fine crop radius around the tip [m]"},
      {"gen.standoff", "0.05", "pre-insertion standoff height [m]"},
      {"gen.max_dt", "0.02", "fine perturbation translation bound [m]"},
      {"gen.max_dr_deg", "10", "fine perturbation rotation bound [deg]"},

      {"train.target", "both", "both|coarse|fine"},
      {"train.epochs", "60", "training epochs"},
      {"train.batch", "16", "minibatch size"},
      {"train.lr", "0.001", "peak Adam learning rate"},
      {"train.lr_final_factor", "0.1", "cosine floor as a fraction of lr"},
      {"train.coarse_data", "", "coarse dataset path (gen-data output)"},
      {"train.fine_data", "", "fine dataset path (gen-data output)"},
      {"train.resume_coarse", "", "keypoint checkpoint to continue from"},
      {"train.resume_fine", "", "offset checkpoint to continue from"},
      {"train.verbose", "true", "print per-epoch losses"},

      {"ctl.e_t", "0.001", "servo translation tolerance [m]"},
      {"ctl.e_r_deg", "1.0", "servo rotation tolerance [deg]"},
      {"ctl.max_iters", "10", "servo iteration cap"},
      {"ctl.standoff", "0.05", "controller standoff height [m]"},
      {"ctl.crop_radius", "0.08", "controller crop radius [m]"},

      {"eval.trials", "100", "trials per table cell"},
      {"eval.dofs", "3,4,6", "DoF modes in the evaluation grid"},
      {"eval.errors", "0.15,0.30", "initial errors in the grid [m]"},
      {"eval.bodies", "auto", "auto = mixed per trial, or a fixed body list"},
      {"eval.kpt_checkpoint", "", "keypoint network checkpoint"},
      {"eval.off_checkpoint", "", "offset network checkpoint"},
      {"eval.workers", "0", "worker threads per cell (0 = hardware)"},
  };
  return s;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config::Config() {
  for (const SchemaEntry& e : schema()) values_[e.key] = e.default_value;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key: " + key);
  it->second = value;
}

void Config::apply_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(lineno) +
                       ": expected key = value");
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void Config::apply_override(const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw UsageError("override must look like key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& Config::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key: " + key);
  return it->second;
}

std::int64_t Config::get_int(const std::string& key) const {
  const std::string& v = raw(key);
  errno = 0;
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (errno != 0 || end == v.c_str() || *end != '\0')
    throw UsageError(key + ": not an integer: '" + v + "'");
  return x;
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const std::string& v = raw(key);
  errno = 0;
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (errno != 0 || end == v.c_str() || *end != '\0' || v.find('-') == 0)
    throw UsageError(key + ": not an unsigned integer: '" + v + "'");
  return x;
}

double Config::get_double(const std::string& key) const {
  const std::string& v = raw(key);
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (errno != 0 || end == v.c_str() || *end != '\0')
    throw UsageError(key + ": not a number: '" + v + "'");
  return x;
}

bool Config::get_bool(const std::string& key) const {
  const std::string& v = raw(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError(key + ": not a boolean: '" + v + "'");
}

const std::string& Config::get_string(const std::string& key) const {
  return raw(key);
}

std::vector<std::string> Config::get_strings(const std::string& key) const {
  const std::string& v = raw(key);
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  if (out.empty()) throw UsageError(key + ": empty list");
  return out;
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& item : get_strings(key)) {
    errno = 0;
    char* end = nullptr;
    const double x = std::strtod(item.c_str(), &end);
    if (errno != 0 || end == item.c_str() || *end != '\0')
      throw UsageError(key + ": not a number: '" + item + "'");
    out.push_back(x);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> Config::entries() const {
  return {values_.begin(), values_.end()};
}

}  // namespace peghole::cfg
