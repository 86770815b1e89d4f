#pragma once

// Run configuration: one JSON document with sections simulate, model, loss,
// train and detect. Missing keys keep their defaults; unknown keys are errors.
//
// model.layers and model.input_dim are not configurable: they are read from
// the feature files at training time.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "scdnet/errors.hpp"
#include "scdnet/inference.hpp"
#include "scdnet/losses.hpp"
#include "scdnet/model.hpp"
#include "scdnet/simulator.hpp"
#include "scdnet/trainer.hpp"

namespace scdnet {

struct RunConfig {
  SimConfig simulate;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  DetectionConfig detect;
  std::uint64_t train_seed = 7;

  void validate() const {
    simulate.validate();
    model.validate();
    loss.validate();
    train.validate();
    detect.validate();
  }
};

namespace detail {

struct Field {
  std::string key;
  std::function<void(const nlohmann::json&, const std::string&)> read;
  std::function<nlohmann::json()> write;
};

template <class V>
Field field(std::string key, V& ref) {
  Field f;
  f.key = std::move(key);
  f.read = [&ref](const nlohmann::json& j, const std::string& path) {
    if constexpr (std::is_same_v<V, bool>) {
      if (!j.is_boolean()) throw ConfigError("config key '" + path + "' must be a boolean");
      ref = j.get<bool>();
    } else if constexpr (std::is_integral_v<V>) {
      if (!j.is_number_integer()) throw ConfigError("config key '" + path + "' must be an integer");
      if (std::is_unsigned_v<V> && j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0) {
        throw ConfigError("config key '" + path + "' must be non-negative");
      }
      ref = j.get<V>();
    } else {
      if (!j.is_number()) throw ConfigError("config key '" + path + "' must be a number");
      ref = j.get<V>();
    }
  };
  f.write = [&ref]() { return nlohmann::json(ref); };
  return f;
}

inline Field norm_field(NormKind& ref) {
  Field f;
  f.key = "norm";
  f.read = [&ref](const nlohmann::json& j, const std::string& path) {
    const std::string v = j.is_string() ? j.get<std::string>() : "";
    if (v == "l1") {
      ref = NormKind::kL1;
    } else if (v == "l2") {
      ref = NormKind::kL2;
    } else {
      throw ConfigError("config key '" + path + "' must be \"l1\" or \"l2\"");
    }
  };
  f.write = [&ref]() { return nlohmann::json(ref == NormKind::kL1 ? "l1" : "l2"); };
  return f;
}

struct Section {
  std::string name;
  std::vector<Field> fields;
};

inline std::vector<Section> sections(RunConfig& c) {
  auto& s = c.simulate;
  auto& m = c.model;
  auto& l = c.loss;
  auto& t = c.train;
  auto& d = c.detect;
  return {
      {"simulate",
       {field("num_speakers", s.num_speakers), field("feature_dim", s.feature_dim),
        field("num_layers", s.num_layers), field("frame_rate", s.frame_rate), field("num_turns", s.num_turns),
        field("segment_min", s.segment_min), field("segment_max", s.segment_max),
        field("pause_prob", s.pause_prob), field("pause_min", s.pause_min), field("pause_max", s.pause_max),
        field("overlap_prob", s.overlap_prob), field("overlap_min", s.overlap_min),
        field("overlap_max", s.overlap_max), field("noise_sigma", s.noise_sigma), field("drift", s.drift),
        field("informative_layer", s.informative_layer), field("seed", s.seed)}},
      {"model",
       {field("hidden", m.hidden), field("blocks", m.blocks), field("kernel", m.kernel), field("heads", m.heads)}},
      {"loss", {field("alpha", l.alpha), field("similarity_epsilon", l.similarity_epsilon), norm_field(l.norm)}},
      {"train",
       {field("epochs", t.epochs), field("learning_rate", t.learning_rate), field("batch_size", t.batch_size),
        field("clip_norm", t.clip_norm), field("val_fraction", t.val_fraction), field("workers", t.workers),
        field("min_segment_frames", t.min_segment_frames), field("resample_per_step", t.resample_per_step),
        field("fuzzy_radius", t.fuzzy_radius), field("merge_tolerance", t.merge_tolerance),
        field("seed", c.train_seed)}},
      {"detect", {field("threshold", d.threshold), field("min_gap", d.min_gap)}},
  };
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& doc) {
  RunConfig cfg;
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  auto secs = detail::sections(cfg);
  for (const auto& [name, body] : doc.items()) {
    auto sec = std::find_if(secs.begin(), secs.end(), [&](const detail::Section& s) { return s.name == name; });
    if (sec == secs.end()) throw ConfigError("unknown config key '" + name + "'");
    if (!body.is_object()) throw ConfigError("config section '" + name + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      const std::string path = name + "." + key;
      auto f = std::find_if(sec->fields.begin(), sec->fields.end(),
                            [&](const detail::Field& x) { return x.key == key; });
      if (f == sec->fields.end()) throw ConfigError("unknown config key '" + path + "'");
      f->read(value, path);
    }
  }
  cfg.validate();
  return cfg;
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_run_config(doc);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

inline nlohmann::json to_json(const RunConfig& c) {
  RunConfig copy = c;
  nlohmann::json out = nlohmann::json::object();
  for (const auto& sec : detail::sections(copy)) {
    nlohmann::json body = nlohmann::json::object();
    for (const auto& f : sec.fields) body[f.key] = f.write();
    out[sec.name] = body;
  }
  return out;
}

}  // namespace scdnet
