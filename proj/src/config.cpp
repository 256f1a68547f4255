#include "scolio/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "text_util.hpp"

namespace scolio {

using detail::format_double;
using detail::parse_bool;
using detail::parse_number;

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
  if (batch_size < 2) throw std::invalid_argument("train.batch_size must be >= 2 (batch norm)");
  if (!(lr > 0) || !(lr_min >= 0) || lr_min > lr) {
    throw std::invalid_argument("need 0 <= train.lr_min <= train.lr and train.lr > 0");
  }
  if (!(warmup_frac >= 0 && warmup_frac < 1)) {
    throw std::invalid_argument("train.warmup_frac must lie in [0, 1)");
  }
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(eps > 0) ||
      !(weight_decay >= 0)) {
    throw std::invalid_argument("invalid AdamW hyper-parameters");
  }
  if (input_size < 8) throw std::invalid_argument("train.input_size must be >= 8");
  if (folds < 2) throw std::invalid_argument("train.folds must be >= 2");
  lambda.validate();
  augment.validate();
}

std::vector<StageConfig> parse_stages(const std::string& text) {
  std::vector<StageConfig> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find('x');
    if (x == std::string::npos) {
      throw std::invalid_argument("model.stages: expected CxB items, got '" + item + "'");
    }
    StageConfig st;
    st.channels = parse_number<Index>(item.substr(0, x), "model.stages");
    st.blocks = parse_number<Index>(item.substr(x + 1), "model.stages");
    st.stride = 2;
    out.push_back(st);
  }
  if (out.empty()) throw std::invalid_argument("model.stages is empty");
  return out;
}

std::string format_stages(const std::vector<StageConfig>& stages) {
  std::string s;
  for (const auto& st : stages) {
    if (st.stride != 2) throw std::invalid_argument("only stride-2 stages are expressible");
    if (!s.empty()) s += ',';
    s += std::to_string(st.channels) + "x" + std::to_string(st.blocks);
  }
  return s;
}

void apply_variant(ModelConfig& cfg, const std::string& name) {
  if (name == "full") {
    cfg.use_sfmm = true, cfg.head = HeadKind::ordinal;
  } else if (name == "baseline+sfmm") {
    cfg.use_sfmm = true, cfg.head = HeadKind::softmax;
  } else if (name == "baseline+orh") {
    cfg.use_sfmm = false, cfg.head = HeadKind::ordinal;
  } else if (name == "baseline") {
    cfg.use_sfmm = false, cfg.head = HeadKind::softmax;
  } else {
    throw std::invalid_argument("unknown variant '" + name +
                                "' (full|baseline+sfmm|baseline+orh|baseline)");
  }
}

namespace {

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <auto Group, auto Member>
Field num(const char* key) {
  using T = std::remove_cvref_t<decltype((std::declval<RunConfig&>().*Group).*Member)>;
  return {[key](RunConfig& c, const std::string& v) {
            (c.*Group).*Member = parse_number<T>(v, key);
          },
          [](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double((c.*Group).*Member);
            } else {
              return std::to_string((c.*Group).*Member);
            }
          }};
}

template <auto Member>
Field aug(const char* key) {
  return {[key](RunConfig& c, const std::string& v) {
            c.train.augment.*Member = parse_number<double>(v, key);
          },
          [](const RunConfig& c) { return format_double(c.train.augment.*Member); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["model.stages"] = {
        [](RunConfig& c, const std::string& v) { c.model.backbone.stages = parse_stages(v); },
        [](const RunConfig& c) { return format_stages(c.model.backbone.stages); }};
    t["model.drop_path"] = {
        [](RunConfig& c, const std::string& v) {
          c.model.backbone.drop_path = parse_number<double>(v, "model.drop_path");
        },
        [](const RunConfig& c) { return format_double(c.model.backbone.drop_path); }};
    t["model.bn_eps"] = {
        [](RunConfig& c, const std::string& v) {
          c.model.backbone.bn_eps = parse_number<double>(v, "model.bn_eps");
        },
        [](const RunConfig& c) { return format_double(c.model.backbone.bn_eps); }};
    t["model.bn_momentum"] = {
        [](RunConfig& c, const std::string& v) {
          c.model.backbone.bn_momentum = parse_number<double>(v, "model.bn_momentum");
        },
        [](const RunConfig& c) { return format_double(c.model.backbone.bn_momentum); }};
    t["model.use_sfmm"] = {
        [](RunConfig& c, const std::string& v) {
          c.model.use_sfmm = parse_bool(v, "model.use_sfmm");
        },
        [](const RunConfig& c) { return std::string(c.model.use_sfmm ? "true" : "false"); }};
    t["model.use_projections"] = {
        [](RunConfig& c, const std::string& v) {
          c.model.use_projections = parse_bool(v, "model.use_projections");
        },
        [](const RunConfig& c) {
          return std::string(c.model.use_projections ? "true" : "false");
        }};
    t["model.head"] = {
        [](RunConfig& c, const std::string& v) {
          c.model.head = head_kind_from_string(detail::trim(v));
        },
        [](const RunConfig& c) { return to_string(c.model.head); }};

    t["train.epochs"] = num<&RunConfig::train, &TrainConfig::epochs>("train.epochs");
    t["train.batch_size"] = num<&RunConfig::train, &TrainConfig::batch_size>("train.batch_size");
    t["train.lr"] = num<&RunConfig::train, &TrainConfig::lr>("train.lr");
    t["train.lr_min"] = num<&RunConfig::train, &TrainConfig::lr_min>("train.lr_min");
    t["train.warmup_frac"] =
        num<&RunConfig::train, &TrainConfig::warmup_frac>("train.warmup_frac");
    t["train.beta1"] = num<&RunConfig::train, &TrainConfig::beta1>("train.beta1");
    t["train.beta2"] = num<&RunConfig::train, &TrainConfig::beta2>("train.beta2");
    t["train.eps"] = num<&RunConfig::train, &TrainConfig::eps>("train.eps");
    t["train.weight_decay"] =
        num<&RunConfig::train, &TrainConfig::weight_decay>("train.weight_decay");
    t["train.input_size"] = num<&RunConfig::train, &TrainConfig::input_size>("train.input_size");
    t["train.folds"] = num<&RunConfig::train, &TrainConfig::folds>("train.folds");
    t["train.seed"] = num<&RunConfig::train, &TrainConfig::seed>("train.seed");
    t["train.lambda"] = {
        [](RunConfig& c, const std::string& v) {
          c.train.lambda = LossWeights::from_ratio(detail::trim(v));
        },
        [](const RunConfig& c) {
          return format_double(c.train.lambda.general) + ":" + format_double(c.train.lambda.fine);
        }};
    t["train.aug_flip"] = aug<&AugmentPolicy::flip_prob>("train.aug_flip");
    t["train.aug_crop"] = aug<&AugmentPolicy::crop>("train.aug_crop");
    t["train.aug_scale"] = aug<&AugmentPolicy::scale>("train.aug_scale");
    t["train.aug_brightness"] = aug<&AugmentPolicy::brightness>("train.aug_brightness");
    t["train.aug_contrast"] = aug<&AugmentPolicy::contrast>("train.aug_contrast");

    for (const auto& [k, unused] : SynthConfig{}.to_map()) {
      const std::string key = k;
      t["synth." + key] = {[key](RunConfig& c, const std::string& v) { c.synth.set(key, v); },
                           [key](const RunConfig& c) { return c.synth.to_map().at(key); }};
    }
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& table = fields();
  auto it = table.find(key);
  if (it == table.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second.set(*this, value);
}

void RunConfig::apply(const std::map<std::string, std::string>& values) {
  for (const auto& [k, v] : values) set(k, v);
}

void RunConfig::validate() const {
  model.backbone.validate();
  train.validate();
  synth.validate();
  if (train.input_size % model.backbone.total_stride() != 0) {
    throw std::invalid_argument("train.input_size must be divisible by the backbone stride " +
                                std::to_string(model.backbone.total_stride()));
  }
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(*this);
  return out;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [k, v] : to_map()) s += k + " = " + v + "\n";
  return s;
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << to_text();
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  RunConfig c;
  c.apply(read_key_values(path));
  c.validate();
  return c;
}

}  // namespace scolio
