#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mtvit/selector.hpp"
#include "mtvit/tails.hpp"
#include "mtvit/vit.hpp"

namespace mtvit {

enum class OptimizerKind { kAdamW, kSgd };

// Run configuration, stored as a flat key=value file. Parsing normalizes to
// a canonical form: canonical_dump(parse(canonical_dump(x))) is byte-identical
// to canonical_dump(x). Unknown keys are errors.
struct RunConfig {
  uint64_t seed = 42;
  std::string data_dir = "runs/data";

  EncoderConfig encoder;                    // depth/dim/heads/mlp_ratio/classes/ln_eps
  std::vector<TailConfig> tails;            // desk default: p in {16, 8, 4} on 32x32
  double lambda = 0.5;
  double alpha = 0.25;
  TemperatureSchedule::Mode tau_mode = TemperatureSchedule::Mode::kLinear;
  double tau_start = 5.0;
  double tau_end = 0.5;

  double lr_pretrain = 1e-3;
  double lr_finetune = 5e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  size_t batch_size = 64;
  size_t epochs_pretrain = 20;
  size_t epochs_finetune = 10;

  size_t image_h = 32, image_w = 32, channels = 3;

  RunConfig() {
    encoder.depth = 4;
    encoder.dim = 64;
    encoder.heads = 4;
    encoder.mlp_ratio = 4;
    encoder.classes = 10;
    tails = {{.patch = 16, .grid = 2}, {.patch = 8, .grid = 4}, {.patch = 4, .grid = 8}};
  }

  void validate() const {
    encoder.validate();
    if (tails.empty()) throw std::invalid_argument("config: no tails");
    for (const auto& t : tails) t.validate(image_h, image_w);
    if (lambda < 0) throw std::invalid_argument("config: lambda must be >= 0");
    if (alpha < 0 || alpha > 1)
      throw std::invalid_argument("config: alpha must be in [0,1]");
    if (!(tau_start > 0) || !(tau_end > 0))
      throw std::invalid_argument("config: temperatures must be > 0");
    if (!(lr_pretrain > 0) || !(lr_finetune > 0))
      throw std::invalid_argument("config: learning rates must be > 0");
    if (momentum < 0 || momentum >= 1)
      throw std::invalid_argument("config: momentum must be in [0,1)");
    if (weight_decay < 0)
      throw std::invalid_argument("config: weight decay must be >= 0");
    if (batch_size < 1 || epochs_pretrain < 1 || epochs_finetune < 1)
      throw std::invalid_argument("config: batch size and epoch counts must be >= 1");
  }

  TemperatureSchedule temperature_schedule() const {
    return {tau_mode, tau_start, tau_end, epochs_finetune};
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw std::invalid_argument("config: bad number for " + key + ": " + v);
  return d;
}

inline uint64_t parse_uint(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const unsigned long long u = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw std::invalid_argument("config: bad integer for " + key + ": " + v);
  return u;
}

// Tail list: comma-separated patch sizes, each optionally "patch:resize"
// (square resize before patching). Grids derive from the image size.
inline std::vector<TailConfig> parse_tails(const std::string& v, size_t img_h,
                                           size_t img_w) {
  std::vector<TailConfig> tails;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw std::invalid_argument("config: empty tail entry");
    TailConfig t;
    const size_t colon = item.find(':');
    if (colon == std::string::npos) {
      t.patch = parse_uint("tails", item);
    } else {
      t.patch = parse_uint("tails", item.substr(0, colon));
      t.resize_h = t.resize_w = parse_uint("tails", item.substr(colon + 1));
    }
    const size_t side = t.resize_h ? t.resize_h : img_h;
    const size_t side_w = t.resize_w ? t.resize_w : img_w;
    if (t.patch == 0 || side % t.patch != 0 || side_w % t.patch != 0 ||
        side / t.patch != side_w / t.patch)
      throw std::invalid_argument("config: tail patch " + item +
                                  " does not tile the image");
    t.grid = side / t.patch;
    tails.push_back(t);
  }
  return tails;
}

inline std::string dump_tails(const std::vector<TailConfig>& tails) {
  std::string out;
  for (size_t i = 0; i < tails.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(tails[i].patch);
    if (tails[i].resize_h) out += ":" + std::to_string(tails[i].resize_h);
  }
  return out;
}

}  // namespace detail

inline std::string canonical_dump(const RunConfig& c) {
  std::ostringstream os;
  os << "seed=" << c.seed << "\n";
  os << "data_dir=" << c.data_dir << "\n";
  os << "image_h=" << c.image_h << "\n";
  os << "image_w=" << c.image_w << "\n";
  os << "channels=" << c.channels << "\n";
  os << "depth=" << c.encoder.depth << "\n";
  os << "dim=" << c.encoder.dim << "\n";
  os << "heads=" << c.encoder.heads << "\n";
  os << "mlp_ratio=" << c.encoder.mlp_ratio << "\n";
  os << "classes=" << c.encoder.classes << "\n";
  os << "ln_eps=" << detail::fmt_double(c.encoder.ln_eps) << "\n";
  os << "tails=" << detail::dump_tails(c.tails) << "\n";
  os << "lambda=" << detail::fmt_double(c.lambda) << "\n";
  os << "alpha=" << detail::fmt_double(c.alpha) << "\n";
  os << "tau_mode="
     << (c.tau_mode == TemperatureSchedule::Mode::kLinear ? "linear" : "constant")
     << "\n";
  os << "tau_start=" << detail::fmt_double(c.tau_start) << "\n";
  os << "tau_end=" << detail::fmt_double(c.tau_end) << "\n";
  os << "optimizer=" << (c.optimizer == OptimizerKind::kAdamW ? "adamw" : "sgd")
     << "\n";
  os << "lr_pretrain=" << detail::fmt_double(c.lr_pretrain) << "\n";
  os << "lr_finetune=" << detail::fmt_double(c.lr_finetune) << "\n";
  os << "momentum=" << detail::fmt_double(c.momentum) << "\n";
  os << "weight_decay=" << detail::fmt_double(c.weight_decay) << "\n";
  os << "batch_size=" << c.batch_size << "\n";
  os << "epochs_pretrain=" << c.epochs_pretrain << "\n";
  os << "epochs_finetune=" << c.epochs_finetune << "\n";
  return os.str();
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value, got: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }

  auto take = [&](const char* key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) return {};
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_uint = [&](const char* key, auto& field) {
    const std::string v = take(key);
    if (!v.empty()) field = static_cast<std::decay_t<decltype(field)>>(
        detail::parse_uint(key, v));
  };
  auto take_double = [&](const char* key, double& field) {
    const std::string v = take(key);
    if (!v.empty()) field = detail::parse_double(key, v);
  };

  take_uint("seed", c.seed);
  if (std::string v = take("data_dir"); !v.empty()) c.data_dir = v;
  take_uint("image_h", c.image_h);
  take_uint("image_w", c.image_w);
  take_uint("channels", c.channels);
  take_uint("depth", c.encoder.depth);
  take_uint("dim", c.encoder.dim);
  take_uint("heads", c.encoder.heads);
  take_uint("mlp_ratio", c.encoder.mlp_ratio);
  take_uint("classes", c.encoder.classes);
  take_double("ln_eps", c.encoder.ln_eps);
  if (std::string v = take("tails"); !v.empty())
    c.tails = detail::parse_tails(v, c.image_h, c.image_w);
  take_double("lambda", c.lambda);
  take_double("alpha", c.alpha);
  if (std::string v = take("tau_mode"); !v.empty()) {
    if (v == "linear")
      c.tau_mode = TemperatureSchedule::Mode::kLinear;
    else if (v == "constant")
      c.tau_mode = TemperatureSchedule::Mode::kConstant;
    else
      throw std::invalid_argument("config: tau_mode must be linear or constant");
  }
  take_double("tau_start", c.tau_start);
  take_double("tau_end", c.tau_end);
  if (std::string v = take("optimizer"); !v.empty()) {
    if (v == "adamw")
      c.optimizer = OptimizerKind::kAdamW;
    else if (v == "sgd")
      c.optimizer = OptimizerKind::kSgd;
    else
      throw std::invalid_argument("config: optimizer must be adamw or sgd");
  }
  take_double("lr_pretrain", c.lr_pretrain);
  take_double("lr_finetune", c.lr_finetune);
  take_double("momentum", c.momentum);
  take_double("weight_decay", c.weight_decay);
  take_uint("batch_size", c.batch_size);
  take_uint("epochs_pretrain", c.epochs_pretrain);
  take_uint("epochs_finetune", c.epochs_finetune);

  if (!kv.empty())
    throw std::invalid_argument("config: unknown key: " + kv.begin()->first);
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str());
}

inline void save_config(const RunConfig& c, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << canonical_dump(c);
}

}  // namespace mtvit
