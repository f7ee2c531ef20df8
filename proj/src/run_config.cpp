#include "memo/run_config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace memo {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& section, const std::string& key,
                            const std::string& value) {
  throw std::invalid_argument("invalid value for " + section + "." + key + ": '" +
                              value + "'");
}

struct KeyRef {
  const std::string& section;
  const std::string& key;
  const std::string& value;

  int integer() const {
    try {
      size_t used = 0;
      const int v = std::stoi(value, &used);
      if (used == value.size()) return v;
    } catch (const std::exception&) {
    }
    bad_value(section, key, value);
  }

  uint64_t unsigned64() const {
    try {
      size_t used = 0;
      const uint64_t v = std::stoull(value, &used, 0);
      if (used == value.size()) return v;
    } catch (const std::exception&) {
    }
    bad_value(section, key, value);
  }

  double real() const {
    try {
      size_t used = 0;
      const double v = std::stod(value, &used);
      if (used == value.size()) return v;
    } catch (const std::exception&) {
    }
    bad_value(section, key, value);
  }

  float realf() const { return static_cast<float>(real()); }

  bool boolean() const {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off")
      return false;
    bad_value(section, key, value);
  }

  std::vector<int> int_list() const {
    std::vector<int> out;
    std::istringstream ss(value);
    std::string piece;
    while (std::getline(ss, piece, ',')) {
      piece = trim(piece);
      try {
        size_t used = 0;
        out.push_back(std::stoi(piece, &used));
        if (used != piece.size()) bad_value(section, key, value);
      } catch (const std::invalid_argument&) {
        bad_value(section, key, value);
      }
    }
    if (out.empty()) bad_value(section, key, value);
    return out;
  }
};

void apply_model(RunConfig& cfg, const KeyRef& kv) {
  if (kv.key == "channels")
    cfg.model.channels = kv.int_list();
  else if (kv.key == "norm_groups")
    cfg.model.norm_groups = kv.integer();
  else if (kv.key == "pe_dim")
    cfg.model.pe_dim = kv.integer();
  else if (kv.key == "init_seed")
    cfg.model_init_seed = kv.unsigned64();
  else
    throw std::invalid_argument("unknown key '" + kv.key + "' in [model]");
}

void apply_train(RunConfig& cfg, const KeyRef& kv) {
  auto& t = cfg.train;
  if (kv.key == "batch_size")
    t.batch_size = kv.integer();
  else if (kv.key == "learning_rate")
    t.learning_rate = kv.realf();
  else if (kv.key == "epochs")
    t.epochs = kv.integer();
  else if (kv.key == "weight_decay")
    t.weight_decay = kv.realf();
  else if (kv.key == "beta1")
    t.adam_beta1 = kv.realf();
  else if (kv.key == "beta2")
    t.adam_beta2 = kv.realf();
  else if (kv.key == "eps")
    t.adam_eps = kv.realf();
  else if (kv.key == "mask_ratio") {
    if (kv.value == "uniform") {
      t.mask_ratio.kind = MaskRatioDistribution::Kind::Uniform;
    } else {
      t.mask_ratio.kind = MaskRatioDistribution::Kind::Fixed;
      t.mask_ratio.fixed_value = kv.realf();
    }
  } else if (kv.key == "condition_drop_prob")
    t.condition_drop_prob = kv.realf();
  else if (kv.key == "loss_normalization") {
    if (kv.value == "per_pixel")
      t.loss_normalization = LossNormalization::PerPixel;
    else if (kv.value == "ratio_only")
      t.loss_normalization = LossNormalization::RatioOnly;
    else
      bad_value(kv.section, kv.key, kv.value);
  } else if (kv.key == "seed")
    t.seed = kv.unsigned64();
  else if (kv.key == "threads")
    t.threads = kv.integer();
  else if (kv.key == "augment")
    t.augment = kv.boolean();
  else
    throw std::invalid_argument("unknown key '" + kv.key + "' in [train]");
}

void apply_infer(RunConfig& cfg, const KeyRef& kv) {
  auto& in = cfg.infer;
  if (kv.key == "steps") {
    if (kv.value == "full") {
      cfg.infer_full = true;
    } else {
      cfg.infer_full = false;
      in.steps = kv.integer();
    }
  } else if (kv.key == "strategy") {
    if (kv.value == "locmax")
      in.strategy = UnmaskStrategy::LocMax;
    else if (kv.value == "random")
      in.strategy = UnmaskStrategy::Random;
    else if (kv.value == "topk")
      in.strategy = UnmaskStrategy::TopK;
    else
      bad_value(kv.section, kv.key, kv.value);
  } else if (kv.key == "scale")
    in.scale = kv.realf();
  else if (kv.key == "fraction")
    in.fraction = kv.realf();
  else if (kv.key == "threshold")
    in.threshold = kv.realf();
  else if (kv.key == "seed")
    in.seed = kv.unsigned64();
  else
    throw std::invalid_argument("unknown key '" + kv.key + "' in [infer]");
}

void apply_eval(RunConfig& cfg, const KeyRef& kv) {
  auto& ev = cfg.eval;
  if (kv.key == "protocol") {
    if (kv.value == "seval")
      ev.protocol = EvalProtocol::Standard;
    else if (kv.value == "ceval")
      ev.protocol = EvalProtocol::Crispness;
    else
      bad_value(kv.section, kv.key, kv.value);
  } else if (kv.key == "thresholds")
    ev.threshold_count = kv.integer();
  else if (kv.key == "tolerance_fraction")
    ev.tolerance_fraction = kv.real();
  else if (kv.key == "jobs")
    ev.jobs = kv.integer();
  else
    throw std::invalid_argument("unknown key '" + kv.key + "' in [eval]");
}

void apply_data(RunConfig& cfg, const KeyRef& kv) {
  auto& d = cfg.data;
  if (kv.key == "width")
    d.width = kv.integer();
  else if (kv.key == "height")
    d.height = kv.integer();
  else if (kv.key == "min_shapes")
    d.min_shapes = kv.integer();
  else if (kv.key == "max_shapes")
    d.max_shapes = kv.integer();
  else if (kv.key == "weight_ellipse")
    d.weight_ellipse = kv.realf();
  else if (kv.key == "weight_polygon")
    d.weight_polygon = kv.realf();
  else if (kv.key == "weight_rectangle")
    d.weight_rectangle = kv.realf();
  else if (kv.key == "min_radius")
    d.min_radius = kv.realf();
  else if (kv.key == "max_radius")
    d.max_radius = kv.realf();
  else if (kv.key == "gradient_background")
    d.gradient_background = kv.boolean();
  else if (kv.key == "noise_sigma")
    d.noise_sigma = kv.realf();
  else if (kv.key == "blur_sigma")
    d.blur_sigma = kv.realf();
  else if (kv.key == "min_color_separation")
    d.min_color_separation = kv.realf();
  else if (kv.key == "invert_colors")
    d.invert_colors = kv.boolean();
  else if (kv.key == "seed")
    d.seed = kv.unsigned64();
  else if (kv.key == "jobs")
    cfg.data_jobs = kv.integer();
  else
    throw std::invalid_argument("unknown key '" + kv.key + "' in [data]");
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream lines(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(lines, raw)) {
    ++line_no;
    if (const size_t hash = raw.find('#'); hash != std::string::npos)
      raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("malformed section header at line " +
                                    std::to_string(line_no) + ": " + line);
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "infer" &&
          section != "eval" && section != "data")
        throw std::invalid_argument("unknown section [" + section + "] at line " +
                                    std::to_string(line_no));
      continue;
    }

    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("expected key = value at line " +
                                  std::to_string(line_no) + ": " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::invalid_argument("expected key = value at line " +
                                  std::to_string(line_no) + ": " + line);
    if (section.empty())
      throw std::invalid_argument("key '" + key + "' appears before any section");

    const KeyRef kv{section, key, value};
    if (section == "model")
      apply_model(cfg, kv);
    else if (section == "train")
      apply_train(cfg, kv);
    else if (section == "infer")
      apply_infer(cfg, kv);
    else if (section == "eval")
      apply_eval(cfg, kv);
    else
      apply_data(cfg, kv);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_run_config(buf.str());
}

std::string default_run_config_text() {
  return R"(# Every key with its built-in default. Unknown keys are rejected.

[model]
channels = 32,64,128,192
norm_groups = 8
pe_dim = 64
init_seed = 257509

[train]
batch_size = 16
learning_rate = 5e-5
epochs = 10
weight_decay = 0.01
beta1 = 0.9
beta2 = 0.999
eps = 1e-8
mask_ratio = uniform   # or a fixed value in (0,1]
condition_drop_prob = 0.1
loss_normalization = per_pixel   # or ratio_only
seed = 0
threads = 1
augment = true

[infer]
steps = 10   # or 'full' to iterate to natural completion
strategy = locmax   # locmax | random | topk
scale = 1.0
fraction = 0   # random/topk per-step share; 0 means 1/steps
threshold = 0.5
seed = 0

[eval]
protocol = seval   # seval | ceval
thresholds = 33
tolerance_fraction = 0.0075
jobs = 1

[data]
width = 64
height = 64
min_shapes = 3
max_shapes = 7
weight_ellipse = 1
weight_polygon = 1
weight_rectangle = 1
min_radius = 5
max_radius = 20
gradient_background = true
noise_sigma = 0.02
blur_sigma = 0.8
min_color_separation = 0.25
invert_colors = false
seed = 0
jobs = 1
)";
}

}  // namespace memo
