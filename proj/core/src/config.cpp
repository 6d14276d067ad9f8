// Copyright 2026 The pam50 Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pam50/config.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "pam50/errors.h"
#include "pam50/rng.h"

namespace pam50::pipeline {
namespace {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

/// Reads typed keys out of one JSON object and rejects leftovers.
class Section {
 public:
  Section(const Json* node, std::string name) : node_(node), name_(std::move(name)) {
    if (node_ != nullptr && !node_->is_object()) {
      throw Error(ErrorCode::kConfig, "'" + name_ + "' must be an object");
    }
  }

  template <typename T>
  void Get(const char* key, T& out) {
    seen_.insert(key);
    if (node_ == nullptr || !node_->contains(key)) return;
    try {
      out = node_->at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::kConfig, "'" + Path(key) + "' has the wrong type (" +
                                          node_->at(key).dump() + ")");
    }
  }

  void Finish() const {
    if (node_ == nullptr) return;
    for (const auto& item : node_->items()) {
      if (!seen_.count(item.key())) {
        throw Error(ErrorCode::kConfig, "unknown key '" + Path(item.key()) + "'");
      }
    }
  }

 private:
  std::string Path(const std::string& key) const {
    return name_.empty() ? key : name_ + "." + key;
  }

  const Json* node_;
  std::string name_;
  std::set<std::string> seen_;
};

const Json* Child(const Json& root, const char* key) {
  return root.contains(key) ? &root.at(key) : nullptr;
}

std::string LineOf(const std::string& text, size_t byte) {
  size_t start = text.rfind('\n', byte == 0 ? 0 : byte - 1);
  start = start == std::string::npos ? 0 : start + 1;
  size_t end = text.find('\n', start);
  if (end == std::string::npos) end = text.size();
  return text.substr(start, end - start);
}

}  // namespace

std::filesystem::path PipelineConfig::labels_path() const {
  if (!labels.empty()) return labels;
  return std::filesystem::path(slides_dir) / "labels.csv";
}

void PipelineConfig::Validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfig, m); };
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (slides_dir.empty() || work_dir.empty()) fail("paths must be nonempty");
  if (std::filesystem::path(slides_dir).lexically_normal() ==
      std::filesystem::path(work_dir).lexically_normal()) {
    fail("paths.slides_dir and paths.work_dir must differ");
  }
  if (!unit(qc.m_min) || qc.varl_min < 0) fail("qc thresholds out of range");
  if (!(train_fraction > 0 && val_fraction > 0) ||
      std::abs(train_fraction + val_fraction - 1.0) > 1e-9) {
    fail("split.train and split.val must be positive and sum to 1");
  }
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (embed_dim < 1) fail("embed_dim must be positive");
  if (mc_passes < 2) fail("mc.passes must be at least 2");
  if (k_min < 1) fail("ga.k_min must be at least 1");
  if (filter.kind == head::FilterPolicy::Kind::kKeepFraction &&
      !(filter.keep_fraction > 0 && filter.keep_fraction <= 1)) {
    fail("filter.keep_fraction must be in (0, 1]");
  }
  if (!(train.learning_rate > 0) || train.batch_size < 1 || train.max_epochs < 1 ||
      train.patience < 0 || train.hidden < 1 || !(train.dropout_rate >= 0) ||
      !(train.dropout_rate < 1) || train.feature_jitter < 0) {
    fail("train settings out of range");
  }
  if (!train.class_weights.empty() &&
      static_cast<int>(train.class_weights.size()) != num_classes) {
    fail("train.class_weights must have num_classes entries");
  }
  try {
    ga.Validate();
  } catch (const Error& e) {
    fail(std::string("ga: ") + e.what());
  }
  const auto& s = synthetic;
  if (s.slides_per_class < 1 || s.classes < 1 || s.grid_rows < 1 || s.grid_cols < 1 ||
      !(s.informative_fraction > 0 && s.informative_fraction <= 1) ||
      !unit(s.background_fraction) ||
      s.informative_fraction + s.background_fraction > 1 + 1e-12 ||
      !unit(s.two_slide_patients) || s.noise_level < 0 || s.signal_strength < 0) {
    fail("synthetic settings out of range");
  }
  if (ablation_seeds < 1) fail("synthetic.ablation_seeds must be at least 1");
}

PipelineConfig ParseConfig(const std::string& text, const std::string& source) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kConfig, source + ": " + e.what() + "\n  | " +
                                        LineOf(text, e.byte));
  }
  if (!root.is_object()) throw Error(ErrorCode::kConfig, source + ": expected an object");

  PipelineConfig c;
  try {
    Section top(&root, "");
    if (!root.contains("seed")) {
      throw Error(ErrorCode::kConfig, "'seed' is required (no clock-based default)");
    }
    top.Get("seed", c.seed);
    top.Get("num_classes", c.num_classes);
    top.Get("embed_dim", c.embed_dim);
    for (const char* s : {"paths", "qc", "stain", "train", "mc", "filter", "ga", "split",
                          "synthetic"}) {
      Json ignored;
      top.Get(s, ignored);
    }
    top.Finish();

    Section paths(Child(root, "paths"), "paths");
    paths.Get("slides_dir", c.slides_dir);
    paths.Get("work_dir", c.work_dir);
    paths.Get("labels", c.labels);
    paths.Finish();

    Section qc(Child(root, "qc"), "qc");
    qc.Get("m_min", c.qc.m_min);
    qc.Get("varl_min", c.qc.varl_min);
    qc.Get("border_filter", c.border_filter);
    qc.Finish();

    Section stain(Child(root, "stain"), "stain");
    stain.Get("enabled", c.stain_normalize);
    stain.Get("reference", c.stain_reference);
    stain.Finish();

    Section train(Child(root, "train"), "train");
    train.Get("learning_rate", c.train.learning_rate);
    train.Get("batch_size", c.train.batch_size);
    train.Get("max_epochs", c.train.max_epochs);
    train.Get("patience", c.train.patience);
    train.Get("hidden", c.train.hidden);
    train.Get("dropout_rate", c.train.dropout_rate);
    train.Get("class_weights", c.train.class_weights);
    train.Get("feature_jitter", c.train.feature_jitter);
    train.Finish();

    Section mc(Child(root, "mc"), "mc");
    mc.Get("passes", c.mc_passes);
    mc.Finish();

    Section filter(Child(root, "filter"), "filter");
    std::string policy = "keep_fraction";
    filter.Get("policy", policy);
    filter.Get("keep_fraction", c.filter.keep_fraction);
    filter.Get("tau", c.filter.tau);
    filter.Finish();
    if (policy == "keep_fraction") {
      c.filter.kind = head::FilterPolicy::Kind::kKeepFraction;
    } else if (policy == "absolute") {
      c.filter.kind = head::FilterPolicy::Kind::kAbsolute;
    } else {
      throw Error(ErrorCode::kConfig,
                  "filter.policy must be 'keep_fraction' or 'absolute', got '" + policy + "'");
    }

    Section ga(Child(root, "ga"), "ga");
    ga.Get("population", c.ga.population);
    ga.Get("generations", c.ga.generations);
    ga.Get("tournament_size", c.ga.tournament_size);
    ga.Get("crossover_prob", c.ga.crossover_prob);
    ga.Get("mutation_prob", c.ga.mutation_prob);
    ga.Get("init_density", c.ga.init_density);
    ga.Get("per_gene_mutation", c.ga.per_gene_mutation);
    ga.Get("k_min", c.k_min);
    ga.Finish();

    Section split(Child(root, "split"), "split");
    split.Get("train", c.train_fraction);
    split.Get("val", c.val_fraction);
    split.Finish();

    Section syn(Child(root, "synthetic"), "synthetic");
    syn.Get("slides_per_class", c.synthetic.slides_per_class);
    syn.Get("classes", c.synthetic.classes);
    syn.Get("grid_rows", c.synthetic.grid_rows);
    syn.Get("grid_cols", c.synthetic.grid_cols);
    syn.Get("informative_fraction", c.synthetic.informative_fraction);
    syn.Get("background_fraction", c.synthetic.background_fraction);
    syn.Get("signal_strength", c.synthetic.signal_strength);
    syn.Get("noise_level", c.synthetic.noise_level);
    syn.Get("two_slide_patients", c.synthetic.two_slide_patients);
    syn.Get("seed", c.synthetic.seed);
    syn.Get("ablation_seeds", c.ablation_seeds);
    syn.Finish();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, source + ": " + e.what());
  }
  c.Validate();
  return c;
}

PipelineConfig LoadConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseConfig(ss.str(), path.string());
}

std::string ConfigToJson(const PipelineConfig& c) {
  OrderedJson j;
  j["seed"] = c.seed;
  j["num_classes"] = c.num_classes;
  j["embed_dim"] = c.embed_dim;
  j["paths"] = {{"slides_dir", c.slides_dir}, {"work_dir", c.work_dir}, {"labels", c.labels}};
  j["qc"] = {{"m_min", c.qc.m_min}, {"varl_min", c.qc.varl_min},
             {"border_filter", c.border_filter}};
  j["stain"] = {{"enabled", c.stain_normalize}, {"reference", c.stain_reference}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"batch_size", c.train.batch_size},
                {"max_epochs", c.train.max_epochs},
                {"patience", c.train.patience},
                {"hidden", c.train.hidden},
                {"dropout_rate", c.train.dropout_rate},
                {"class_weights", c.train.class_weights},
                {"feature_jitter", c.train.feature_jitter}};
  j["mc"] = {{"passes", c.mc_passes}};
  j["filter"] = {
      {"policy", c.filter.kind == head::FilterPolicy::Kind::kAbsolute ? "absolute"
                                                                      : "keep_fraction"},
      {"keep_fraction", c.filter.keep_fraction},
      {"tau", c.filter.tau}};
  j["ga"] = {{"population", c.ga.population},
             {"generations", c.ga.generations},
             {"tournament_size", c.ga.tournament_size},
             {"crossover_prob", c.ga.crossover_prob},
             {"mutation_prob", c.ga.mutation_prob},
             {"init_density", c.ga.init_density},
             {"per_gene_mutation", c.ga.per_gene_mutation},
             {"k_min", c.k_min}};
  j["split"] = {{"train", c.train_fraction}, {"val", c.val_fraction}};
  const auto& s = c.synthetic;
  j["synthetic"] = {{"slides_per_class", s.slides_per_class},
                    {"classes", s.classes},
                    {"grid_rows", s.grid_rows},
                    {"grid_cols", s.grid_cols},
                    {"informative_fraction", s.informative_fraction},
                    {"background_fraction", s.background_fraction},
                    {"signal_strength", s.signal_strength},
                    {"noise_level", s.noise_level},
                    {"two_slide_patients", s.two_slide_patients},
                    {"seed", s.seed},
                    {"ablation_seeds", c.ablation_seeds}};
  return j.dump(2) + "\n";
}

uint64_t ConfigHash(const PipelineConfig& config) {
  return Fnv1a64(ConfigToJson(config));
}

std::string HexHash(uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace pam50::pipeline
