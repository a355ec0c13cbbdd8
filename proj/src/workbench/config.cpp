// SPDX-License-Identifier: Apache-2.0
#include "rkld/workbench/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rkld/errors.hpp"

namespace rkld::wb {

using json = nlohmann::ordered_json;
using unlearn::Method;
using unlearn::RetainMode;
using unlearn::UnlearnMethodSpec;

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.model.d_model = 64;
  cfg.model.n_layers = 2;
  cfg.model.n_heads = 4;
  cfg.model.ctx_len = 64;
  cfg.train.lr = 5e-3;
  cfg.train.epochs = 20;
  cfg.train.batch_size = 16;
  cfg.seeds = {1, 2, 3, 4, 5};
  auto spec = [](Method m, RetainMode r) {
    UnlearnMethodSpec s;
    s.method = m;
    s.retain_mode = r;
    // Refusal templates share their first token; 5e-3 leaves some answers blended.
    s.lr = m == Method::kIDK ? 1e-2 : 5e-3;
    return s;
  };
  for (Method m : {Method::kRKLD, Method::kFKLD, Method::kGA, Method::kNPO, Method::kIDK, Method::kTA}) {
    cfg.methods.push_back(spec(m, RetainMode::kNone));
  }
  for (Method m : {Method::kRKLD, Method::kGA, Method::kNPO}) cfg.methods.push_back(spec(m, RetainMode::kKL));
  return cfg;
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.name.empty() || cfg.name.find('/') != std::string::npos) {
    throw ContractError("experiment name must be a non-empty path component");
  }
  const int pct = cfg.corpus.forget_pct;
  if (pct != 1 && pct != 5 && pct != 10) throw ContractError("forget_pct must be one of 1, 5, 10");
  if (cfg.corpus.n_persons < 10 || cfg.corpus.qa_per_person < 4) {
    throw ContractError("corpus needs at least 10 persons and 4 questions per person");
  }
  if (cfg.seeds.empty()) throw ContractError("at least one seed is required");
  std::set<std::uint64_t> seen;
  for (auto s : cfg.seeds) {
    if (!seen.insert(s).second) throw ContractError("seed " + std::to_string(s) + " listed twice");
  }
  train::validate(cfg.train);
  if (cfg.strengthen_epochs < 1) throw ContractError("strengthen_epochs must be >= 1");
  if (cfg.strengthen_lr < 0) throw ContractError("strengthen_lr must be non-negative");
  std::set<std::string> labels;
  for (const auto& m : cfg.methods) {
    unlearn::validate(m);
    if (!labels.insert(m.label()).second) throw ContractError("method " + m.label() + " listed twice");
  }
}

namespace {

json spec_json(const UnlearnMethodSpec& s) {
  json j;
  j["method"] = unlearn::method_name(s.method);
  j["alpha"] = s.alpha;
  j["beta"] = s.beta;
  j["ta_lambda"] = s.ta_lambda;
  j["retain_mode"] = unlearn::retain_mode_name(s.retain_mode);
  j["retain_weight"] = s.retain_weight;
  j["epochs"] = s.epochs;
  j["lr"] = s.lr;
  j["batch_size"] = s.batch_size;
  j["warmup_epochs"] = s.warmup_epochs;
  j["weight_decay"] = s.weight_decay;
  j["grad_clip"] = s.grad_clip ? json(*s.grad_clip) : json(nullptr);
  return j;
}

// Reads the listed keys into place, rejecting anything else.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ContractError(where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    known_.insert(key);
    if (j_.contains(key)) out = j_.at(key).get<T>();
  }

  const nlohmann::json* sub(const char* key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!known_.count(k)) throw ContractError("unknown field '" + k + "' in " + where_);
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> known_;
};

UnlearnMethodSpec spec_from(const nlohmann::json& j) {
  UnlearnMethodSpec s;
  Reader r(j, "methods entry");
  std::string method = unlearn::method_name(s.method);
  std::string retain = unlearn::retain_mode_name(s.retain_mode);
  r.get("method", method);
  r.get("retain_mode", retain);
  s.method = unlearn::method_from_name(method);
  s.retain_mode = unlearn::retain_mode_from_name(retain);
  r.get("alpha", s.alpha);
  r.get("beta", s.beta);
  r.get("ta_lambda", s.ta_lambda);
  r.get("retain_weight", s.retain_weight);
  r.get("epochs", s.epochs);
  r.get("lr", s.lr);
  r.get("batch_size", s.batch_size);
  r.get("warmup_epochs", s.warmup_epochs);
  r.get("weight_decay", s.weight_decay);
  if (const auto* clip = r.sub("grad_clip"); clip && !clip->is_null()) s.grad_clip = clip->get<double>();
  r.finish();
  return s;
}

}  // namespace

std::string to_json(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["corpus"] = {{"seed", cfg.corpus.seed},
                 {"n_persons", cfg.corpus.n_persons},
                 {"qa_per_person", cfg.corpus.qa_per_person},
                 {"forget_pct", cfg.corpus.forget_pct}};
  j["model"] = {{"d_model", cfg.model.d_model},
                {"n_layers", cfg.model.n_layers},
                {"n_heads", cfg.model.n_heads},
                {"ctx_len", cfg.model.ctx_len}};
  j["train"] = {{"lr", cfg.train.lr},
                {"weight_decay", cfg.train.weight_decay},
                {"batch_size", cfg.train.batch_size},
                {"epochs", cfg.train.epochs},
                {"warmup_epochs", cfg.train.warmup_epochs},
                {"grad_clip", cfg.train.grad_clip ? json(*cfg.train.grad_clip) : json(nullptr)}};
  j["strengthen_epochs"] = cfg.strengthen_epochs;
  j["strengthen_lr"] = cfg.strengthen_lr;
  json methods = json::array();
  for (const auto& m : cfg.methods) methods.push_back(spec_json(m));
  j["methods"] = methods;
  j["seeds"] = cfg.seeds;
  j["eval"] = {{"retain_subset", cfg.eval.retain_subset}, {"max_new", cfg.eval.max_new}};
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ContractError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg = default_config();
  try {
    Reader r(j, "config");
    r.get("name", cfg.name);
    if (const auto* c = r.sub("corpus")) {
      Reader rc(*c, "corpus");
      rc.get("seed", cfg.corpus.seed);
      rc.get("n_persons", cfg.corpus.n_persons);
      rc.get("qa_per_person", cfg.corpus.qa_per_person);
      rc.get("forget_pct", cfg.corpus.forget_pct);
      rc.finish();
    }
    if (const auto* m = r.sub("model")) {
      Reader rm(*m, "model");
      rm.get("d_model", cfg.model.d_model);
      rm.get("n_layers", cfg.model.n_layers);
      rm.get("n_heads", cfg.model.n_heads);
      rm.get("ctx_len", cfg.model.ctx_len);
      rm.finish();
    }
    if (const auto* t = r.sub("train")) {
      Reader rt(*t, "train");
      rt.get("lr", cfg.train.lr);
      rt.get("weight_decay", cfg.train.weight_decay);
      rt.get("batch_size", cfg.train.batch_size);
      rt.get("epochs", cfg.train.epochs);
      rt.get("warmup_epochs", cfg.train.warmup_epochs);
      if (const auto* clip = rt.sub("grad_clip"); clip && !clip->is_null()) {
        cfg.train.grad_clip = clip->get<double>();
      }
      rt.finish();
    }
    r.get("strengthen_epochs", cfg.strengthen_epochs);
    r.get("strengthen_lr", cfg.strengthen_lr);
    if (const auto* ms = r.sub("methods")) {
      cfg.methods.clear();
      for (const auto& m : *ms) cfg.methods.push_back(spec_from(m));
    }
    r.get("seeds", cfg.seeds);
    if (const auto* e = r.sub("eval")) {
      Reader re(*e, "eval");
      re.get("retain_subset", cfg.eval.retain_subset);
      re.get("max_new", cfg.eval.max_new);
      re.finish();
    }
    r.finish();
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("config field has the wrong type: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

}  // namespace rkld::wb
