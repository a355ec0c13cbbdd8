// SPDX-License-Identifier: Apache-2.0
#include "rkld/workbench/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>
#include <zlib.h>

#include "rkld/errors.hpp"

namespace rkld::wb {

using json = nlohmann::ordered_json;
using eval::EvalReport;

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kSynth: return "synth";
    case Stage::kTrain: return "train";
    case Stage::kUnlearn: return "unlearn";
    case Stage::kEval: return "eval";
    case Stage::kReport: return "report";
  }
  return "?";
}

Stage stage_from_name(const std::string& name) {
  for (Stage s : kAllStages) {
    if (name == stage_name(s)) return s;
  }
  throw ContractError("unknown stage '" + name + "'");
}

std::size_t select_peak(std::span<const double> forget_quality) {
  if (forget_quality.empty()) throw ContractError("select_peak needs at least one epoch");
  return std::size_t(std::max_element(forget_quality.begin(), forget_quality.end()) -
                     forget_quality.begin()) + 1;
}

EvalReport mean_report(std::span<const EvalReport> reports) {
  if (reports.empty()) throw ContractError("mean_report of nothing");
  EvalReport m;
  for (const auto& r : reports) {
    m.forget_quality += r.forget_quality;
    m.model_utility += r.model_utility;
    for (std::size_t i = 0; i < m.components.size(); ++i) m.components[i] += r.components[i];
    m.forget_rouge_l += r.forget_rouge_l;
    m.forget_probability += r.forget_probability;
    m.forget_leakage += r.forget_leakage;
  }
  const double n = double(reports.size());
  m.forget_quality /= n;
  m.model_utility /= n;
  for (auto& c : m.components) c /= n;
  m.forget_rouge_l /= n;
  m.forget_probability /= n;
  m.forget_leakage /= n;
  return m;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string epoch_file(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%02zu", epoch);
  return buf;
}

bool needs_strengthened(const unlearn::UnlearnMethodSpec& s) {
  using unlearn::Method;
  return s.method == Method::kRKLD || s.method == Method::kFKLD || s.method == Method::kTA;
}

std::string crc_hex(const std::string& text) {
  const auto c = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(text.data()), uInt(text.size()));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(c));
  return buf;
}

struct SeedData {
  corpus::CorpusBundle bundle;
  lm::Tokenizer tok;
};

SeedData load_corpus(const fs::path& path) {
  SeedData d{corpus::from_json(read_file(path)), {}};
  d.tok = d.bundle.make_tokenizer();
  return d;
}

json report_json(const EvalReport& r) { return json::parse(eval::to_json(r)); }

EvalReport load_report(const fs::path& path) { return eval::report_from_json(read_file(path)); }

void csv_row(std::ostream& out, const std::string& method, const std::string& retain,
             int forget_pct, const std::string& seed, std::size_t peak, const EvalReport& r) {
  out << method << ',' << retain << ',' << forget_pct << ',' << seed << ',' << peak << ','
      << num(r.forget_quality) << ',' << num(r.model_utility);
  for (double c : r.components) out << ',' << num(c);
  out << ',' << num(r.forget_rouge_l) << ',' << num(r.forget_probability) << '\n';
}

}  // namespace

Pipeline::Pipeline(ExperimentConfig cfg, const fs::path& out_dir)
    : cfg_(std::move(cfg)), root_(out_dir / cfg_.name) {
  validate(cfg_);
}

fs::path Pipeline::seed_dir(std::uint64_t seed) const {
  return root_ / ("seed_" + std::to_string(seed));
}

fs::path Pipeline::require(const fs::path& artifact, Stage needed_by) const {
  if (!fs::exists(artifact)) {
    throw StageError(std::string(stage_name(needed_by)) + " stage needs missing artifact " +
                     artifact.string());
  }
  return artifact;
}

std::string Pipeline::stamp_text() const { return crc_hex(to_json(cfg_)) + "\n"; }

bool Pipeline::up_to_date(const fs::path& stamp) const {
  return fs::exists(stamp) && read_file(stamp) == stamp_text();
}

void Pipeline::mark_done(const fs::path& stamp) const { write_file(stamp, stamp_text()); }

void Pipeline::run_all() {
  for (Stage s : kAllStages) run_stage(s);
}

void Pipeline::run_stage(Stage stage) {
  write_file(root_ / "config.json", to_json(cfg_));
  if (stage == Stage::kReport) {
    report();
    return;
  }
  for (auto seed : cfg_.seeds) {
    switch (stage) {
      case Stage::kSynth: synth(seed); break;
      case Stage::kTrain: train(seed); break;
      case Stage::kUnlearn: unlearn(seed); break;
      case Stage::kEval: evaluate(seed); break;
      case Stage::kReport: break;
    }
  }
}

void Pipeline::synth(std::uint64_t seed) {
  const fs::path dir = seed_dir(seed);
  const fs::path stamp = dir / "stamps" / "synth";
  if (up_to_date(stamp) && fs::exists(dir / "corpus.json")) return;
  spdlog::info("[seed {}] synth", seed);
  const auto bundle = corpus::generate_corpus(cfg_.corpus.seed + seed, cfg_.corpus.n_persons,
                                              cfg_.corpus.qa_per_person, cfg_.corpus.forget_pct);
  write_file(dir / "corpus.json", corpus::to_json(bundle));
  mark_done(stamp);
}

void Pipeline::train(std::uint64_t seed) {
  const fs::path dir = seed_dir(seed);
  const fs::path stamp = dir / "stamps" / "train";
  if (up_to_date(stamp)) return;
  const auto data = load_corpus(require(dir / "corpus.json", Stage::kTrain));

  lm::LMConfig lc = cfg_.model;
  lc.vocab_size = data.tok.vocab_size();
  lc.seed = seed;
  train::TrainConfig tc = cfg_.train;
  tc.seed = seed;

  spdlog::info("[seed {}] finetune ({} epochs)", seed, tc.epochs);
  const auto original = train::finetune(data.bundle, data.tok, lc, tc);
  const auto parent = save_checkpoint((dir / "ckpt" / "original.ckpt").string(), original,
                                      {"finetune", tc.epochs, "", 0});
  spdlog::info("[seed {}] retrain", seed);
  const auto retrained = train::retrain(data.bundle, data.tok, lc, tc);
  save_checkpoint((dir / "ckpt" / "retrain.ckpt").string(), retrained, {"retrain", tc.epochs, "", 0});

  train::TrainConfig sc = tc;
  sc.epochs = cfg_.strengthen_epochs;
  if (cfg_.strengthen_lr > 0) sc.lr = cfg_.strengthen_lr;
  spdlog::info("[seed {}] strengthen ({} epochs on s_forget)", seed, sc.epochs);
  const auto strengthened = train::continued_train(original, data.bundle, data.tok, sc);
  save_checkpoint((dir / "ckpt" / "strengthened.ckpt").string(), strengthened,
                  {"strengthen", tc.epochs + sc.epochs, "", parent});
  mark_done(stamp);
}

void Pipeline::unlearn(std::uint64_t seed) {
  const fs::path dir = seed_dir(seed);
  const auto data = load_corpus(require(dir / "corpus.json", Stage::kUnlearn));
  const auto original = load_checkpoint(require(dir / "ckpt" / "original.ckpt", Stage::kUnlearn).string());
  std::optional<Checkpoint> strengthened;
  for (const auto& spec : cfg_.methods) {
    const std::string label = spec.label();
    const fs::path stamp = dir / "stamps" / ("unlearn_" + label);
    if (up_to_date(stamp)) continue;
    if (needs_strengthened(spec) && !strengthened) {
      strengthened = load_checkpoint(require(dir / "ckpt" / "strengthened.ckpt", Stage::kUnlearn).string());
    }
    spdlog::info("[seed {}] unlearn {}", seed, label);
    const auto result = unlearn::run_unlearn(original.model, strengthened ? &strengthened->model : nullptr,
                                             data.bundle, data.tok, spec, seed);
    json run;
    run["label"] = label;
    run["epoch_losses"] = result.epoch_losses;
    json paths = json::array();
    for (std::size_t e = 0; e < result.checkpoints.size(); ++e) {
      const fs::path rel = fs::path("ckpt") / label / (epoch_file(e + 1) + ".ckpt");
      save_checkpoint((dir / rel).string(), result.checkpoints[e],
                      {"unlearn", e + 1, label, original.checksum});
      paths.push_back(rel.generic_string());
    }
    run["checkpoints"] = paths;
    write_file(dir / "ckpt" / label / "run.json", run.dump(2) + "\n");
    mark_done(stamp);
  }
}

void Pipeline::evaluate(std::uint64_t seed) {
  const fs::path dir = seed_dir(seed);
  const auto data = load_corpus(require(dir / "corpus.json", Stage::kEval));
  const auto retrained = load_checkpoint(require(dir / "ckpt" / "retrain.ckpt", Stage::kEval).string());
  const auto reference = eval::truth_ratios(retrained.model, data.tok, data.bundle.s_forget);

  const fs::path base_stamp = dir / "stamps" / "eval_base";
  if (!up_to_date(base_stamp)) {
    spdlog::info("[seed {}] eval original and retrain", seed);
    const auto original = load_checkpoint(require(dir / "ckpt" / "original.ckpt", Stage::kEval).string());
    write_file(dir / "eval" / "original.json",
               eval::to_json(eval::evaluate(original.model, reference, data.bundle, data.tok, cfg_.eval)));
    write_file(dir / "eval" / "retrain.json",
               eval::to_json(eval::evaluate(retrained.model, reference, data.bundle, data.tok, cfg_.eval)));
    mark_done(base_stamp);
  }

  for (const auto& spec : cfg_.methods) {
    const std::string label = spec.label();
    const fs::path stamp = dir / "stamps" / ("eval_" + label);
    if (up_to_date(stamp)) continue;
    const fs::path run_path = require(dir / "ckpt" / label / "run.json", Stage::kEval);
    const auto run = json::parse(read_file(run_path));
    spdlog::info("[seed {}] eval {}", seed, label);
    std::vector<double> fq;
    json epochs = json::array();
    std::size_t e = 0;
    for (const auto& rel : run.at("checkpoints")) {
      ++e;
      const auto ck = load_checkpoint(require(dir / rel.get<std::string>(), Stage::kEval).string());
      const EvalReport r = eval::evaluate(ck.model, reference, data.bundle, data.tok, cfg_.eval);
      write_file(dir / "eval" / label / (epoch_file(e) + ".json"), eval::to_json(r));
      fq.push_back(r.forget_quality);
    }
    json summary;
    summary["label"] = label;
    summary["forget_quality"] = fq;
    summary["peak_epoch"] = select_peak(fq);
    write_file(dir / "eval" / label / "run.json", summary.dump(2) + "\n");
    mark_done(stamp);
  }
}

void Pipeline::report() {
  std::ostringstream csv;
  csv << "method,retain_mode,forget_pct,seed,peak_epoch,forget_quality,model_utility";
  for (const auto& n : EvalReport::component_names()) csv << ',' << n;
  csv << ",forget_rouge_l,forget_probability\n";

  const int pct = cfg_.corpus.forget_pct;
  json out;
  out["name"] = cfg_.name;
  out["forget_pct"] = pct;
  out["seeds"] = cfg_.seeds;
  out["significance"] = eval::kSignificance;

  json baselines;
  for (const char* base : {"original", "retrain"}) {
    std::vector<EvalReport> per_seed;
    json rows = json::array();
    for (auto seed : cfg_.seeds) {
      const auto r = load_report(require(seed_dir(seed) / "eval" / (std::string(base) + ".json"), Stage::kReport));
      per_seed.push_back(r);
      csv_row(csv, base, "none", pct, std::to_string(seed), 0, r);
      rows.push_back({{"seed", seed}, {"report", report_json(r)}});
    }
    const EvalReport mean = mean_report(per_seed);
    csv_row(csv, base, "none", pct, "mean", 0, mean);
    baselines[base] = {{"mean", report_json(mean)}, {"per_seed", rows}};
  }
  out["baselines"] = baselines;

  json methods = json::array();
  std::map<std::string, json> at_peak;
  for (const auto& spec : cfg_.methods) {
    const std::string label = spec.label();
    // reports[seed][epoch]
    std::vector<std::vector<EvalReport>> reports;
    json per_seed = json::array();
    for (auto seed : cfg_.seeds) {
      const fs::path edir = seed_dir(seed) / "eval" / label;
      const auto run = json::parse(read_file(require(edir / "run.json", Stage::kReport)));
      const std::size_t n_epochs = run.at("forget_quality").size();
      std::vector<EvalReport> curve;
      for (std::size_t e = 1; e <= n_epochs; ++e) {
        curve.push_back(load_report(require(edir / (epoch_file(e) + ".json"), Stage::kReport)));
      }
      const std::size_t peak = run.at("peak_epoch").get<std::size_t>();
      csv_row(csv, unlearn::method_name(spec.method), unlearn::retain_mode_name(spec.retain_mode), pct,
              std::to_string(seed), peak, curve[peak - 1]);
      per_seed.push_back({{"seed", seed}, {"peak_epoch", peak}, {"at_peak", report_json(curve[peak - 1])}});
      reports.push_back(std::move(curve));
    }
    const std::size_t n_epochs = reports.front().size();
    for (const auto& c : reports) {
      if (c.size() != n_epochs) throw StageError("seeds disagree on the epoch count of " + label);
    }
    std::vector<EvalReport> mean_curve;
    std::vector<double> fq;
    json curve = json::array();
    for (std::size_t e = 0; e < n_epochs; ++e) {
      std::vector<EvalReport> at_e;
      for (const auto& c : reports) at_e.push_back(c[e]);
      mean_curve.push_back(mean_report(at_e));
      fq.push_back(mean_curve.back().forget_quality);
      curve.push_back({{"epoch", e + 1}, {"report", report_json(mean_curve.back())}});
    }
    const std::size_t peak = select_peak(fq);
    const EvalReport& best = mean_curve[peak - 1];
    csv_row(csv, unlearn::method_name(spec.method), unlearn::retain_mode_name(spec.retain_mode), pct,
            "mean", peak, best);
    json m;
    m["label"] = label;
    m["method"] = unlearn::method_name(spec.method);
    m["retain_mode"] = unlearn::retain_mode_name(spec.retain_mode);
    m["peak_epoch"] = peak;
    m["at_peak"] = report_json(best);
    m["forgets"] = best.forgets();
    m["curve"] = curve;
    m["per_seed"] = per_seed;
    methods.push_back(m);
    at_peak[label] = m;
    spdlog::info("{:<10} peak epoch {:>2}  forget quality {:.4f}  model utility {:.4f}", label, peak,
                 best.forget_quality, best.model_utility);
  }
  out["methods"] = methods;

  // RKL vs FKL rows for every retain mode where both variants ran.
  json ablation = json::array();
  for (const char* mode : {"none", "rt", "kl"}) {
    const std::string suffix = std::string(mode) == "none" ? "" : std::string("+") + mode;
    const auto r = at_peak.find("rkld" + suffix), f = at_peak.find("fkld" + suffix);
    if (r == at_peak.end() || f == at_peak.end()) continue;
    for (const auto* m : {&r->second, &f->second}) {
      const json& peak = m->at("at_peak");
      ablation.push_back({{"label", m->at("label")},
                          {"peak_epoch", m->at("peak_epoch")},
                          {"forget_quality", peak.at("forget_quality")},
                          {"forget_rouge_l", peak.at("forget_rouge_l")},
                          {"forget_probability", peak.at("forget_probability")}});
    }
  }
  out["ablation"] = ablation;

  write_file(root_ / "report.csv", csv.str());
  write_file(root_ / "report.json", out.dump(2) + "\n");
}

}  // namespace rkld::wb
