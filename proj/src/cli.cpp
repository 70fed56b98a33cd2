#include "slmfuse/cli.hpp"

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "slmfuse/binio.hpp"
#include "slmfuse/error.hpp"
#include "slmfuse/evalmetrics.hpp"
#include "slmfuse/pipeline.hpp"

namespace slmfuse {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kLockVersion = 1;

enum class Kind { Int, Num, Str, Flag };

struct Field {
  std::string key;
  Kind kind;
  json def;  // null: no default (required) or profile-dependent
  std::string help;
  std::vector<std::string> choices = {};
  bool required = false;
  bool locked = true;  // recorded in run.lock
};

std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

// Options of one subcommand, resolved as defaults < config file < flags.
class Options {
 public:
  Options(CLI::App* app, std::vector<Field> fields) : app_(app), fields_(std::move(fields)) {
    for (const auto& f : fields_) {
      raw_[f.key];
      flags_[f.key] = false;
    }
    app_->add_option("--config", config_, "JSON file with any of this command's keys (or a run.lock)");
    for (const auto& f : fields_) {
      if (f.kind == Kind::Flag) {
        app_->add_flag(flag_name(f.key), flags_[f.key], f.help);
        continue;
      }
      auto* opt = app_->add_option(flag_name(f.key), raw_[f.key], f.help);
      if (!f.choices.empty() && f.choices.front() != "*") opt->check(CLI::IsMember(f.choices));
      if (f.kind == Kind::Int) opt->check(CLI::NonNegativeNumber);
      if (f.kind == Kind::Num) opt->check(CLI::Number);
    }
  }

  json resolve() const {
    json c = json::object();
    for (const auto& f : fields_) c[f.key] = f.def;
    if (!config_.empty()) merge_file(c);
    for (const auto& f : fields_) {
      const std::string flag = flag_name(f.key);
      if (f.kind == Kind::Flag) {
        if (flags_.at(f.key)) c[f.key] = true;
        continue;
      }
      if (app_->count(flag) == 0) continue;
      const std::string& s = raw_.at(f.key);
      try {
        if (f.kind == Kind::Int) c[f.key] = std::stoull(s);
        else if (f.kind == Kind::Num) c[f.key] = std::stod(s);
        else c[f.key] = s;
      } catch (const std::exception&) {
        throw ValidationError(flag + ": cannot parse '" + s + "'");
      }
    }
    for (const auto& f : fields_) {
      if (f.required && c[f.key].is_null()) {
        throw ValidationError("missing required option " + flag_name(f.key) + " (or config key '" + f.key + "')");
      }
    }
    return c;
  }

  json lock(const json& resolved) const {
    json out = json::object();
    for (const auto& f : fields_) {
      if (f.locked) out[f.key] = resolved.at(f.key);
    }
    return json{{"command", app_->get_name()}, {"version", kLockVersion}, {"config", out}};
  }

 private:
  void merge_file(json& c) const {
    json file;
    try {
      file = json::parse(read_file(config_));
    } catch (const json::exception& e) {
      throw ValidationError(config_ + ": not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw ValidationError(config_ + ": expected a JSON object");
    if (file.contains("command") && file.contains("config")) {
      if (file["command"] != app_->get_name()) {
        throw ValidationError(config_ + ": lock file is for '" + file["command"].dump() + "', not '" +
                              app_->get_name() + "'");
      }
      file = file["config"];
    }
    for (const auto& [key, value] : file.items()) {
      auto it = std::find_if(fields_.begin(), fields_.end(), [&](const Field& f) { return f.key == key; });
      if (it == fields_.end()) throw ValidationError(config_ + ": unknown key '" + key + "'");
      const Field& f = *it;
      bool ok = value.is_null() && (f.def.is_null() || f.required);
      if (!ok) {
        switch (f.kind) {
          case Kind::Int: ok = value.is_number_unsigned() || (value.is_number_integer() && value.get<long long>() >= 0); break;
          case Kind::Num: ok = value.is_number(); break;
          case Kind::Str: ok = value.is_string(); break;
          case Kind::Flag: ok = value.is_boolean(); break;
        }
        if (ok && f.kind == Kind::Str && !f.choices.empty() && f.choices.front() != "*") {
          ok = std::find(f.choices.begin(), f.choices.end(), value.get<std::string>()) != f.choices.end();
        }
      }
      if (!ok) throw ValidationError(config_ + ": bad value for key '" + key + "': " + value.dump());
      c[key] = value;
    }
  }

  CLI::App* app_;
  std::vector<Field> fields_;
  std::map<std::string, std::string> raw_;
  std::map<std::string, bool> flags_;
  std::string config_;
};

void write_lock(const fs::path& path, const json& lock) {
  write_file(path, lock.dump(2) + "\n");
}

fs::path sibling(const fs::path& file, const std::string& suffix) {
  return fs::path(file.string() + suffix);
}

// ------------------------------------------------------------------- gen

std::vector<Field> gen_fields() {
  return {
      {"out", Kind::Str, nullptr, "output dataset directory", {"*"}, true, false},
      {"profile", Kind::Str, "planted", "task profile", {"planted", "table1"}},
      {"scale", Kind::Num, 1.0, "table1: count scale factor in (0, 1]"},
      {"records", Kind::Int, 2000, "planted: number of records"},
      {"mode", Kind::Str, "latent", "payload mode", {"latent", "raw"}},
      {"sampled", Kind::Flag, false, "table1: sample labels at the cohort rates instead of exact counts"},
      {"noise_std", Kind::Num, nullptr, "observation noise std"},
      {"stay_p", Kind::Num, nullptr, "geometric stays-per-patient parameter"},
      {"patient_corr", Kind::Num, nullptr, "latent correlation between stays of a patient"},
      {"latent_per_source", Kind::Int, nullptr, "latent coordinates observed per source"},
      {"seed", Kind::Int, 0, "generation seed"},
  };
}

int run_gen(const Options& opts, std::ostream& out) {
  json c = opts.resolve();
  const std::string profile = c["profile"];
  GenConfig g = profile == "table1" ? table1_profile(c["scale"].get<double>())
                                    : planted_profile(c["records"].get<std::size_t>());
  if (profile == "table1" && c["sampled"].get<bool>()) g.exact_counts = false;
  g.mode = data_mode_from_string(c["mode"]);
  g.sources = desk_sources(g.mode);
  if (!c["noise_std"].is_null()) g.noise_std = c["noise_std"];
  if (!c["stay_p"].is_null()) g.stay_p = c["stay_p"];
  if (!c["patient_corr"].is_null()) g.patient_corr = c["patient_corr"];
  if (!c["latent_per_source"].is_null()) g.latent_per_source = c["latent_per_source"];
  g.seed = c["seed"];
  c["noise_std"] = g.noise_std;
  c["stay_p"] = g.stay_p;
  c["patient_corr"] = g.patient_corr;
  c["latent_per_source"] = g.latent_per_source;

  const Dataset data = generate(g);
  const fs::path dir = c["out"].get<std::string>();
  write_dataset(data, dir);
  write_lock(dir / "run.lock", opts.lock(c));
  out << "wrote " << data.size() << " records, " << data.num_tasks() << " tasks, " << data.sources.size()
      << " sources to " << dir.string() << "\n";
  for (std::size_t k = 0; k < data.num_tasks(); ++k) {
    const LabelCounts lc = count_labels(data, k);
    out << "  " << data.task_names[k] << ": " << lc.pos << " pos, " << lc.neg << " neg, " << lc.missing << " u\n";
  }
  return 0;
}

// ----------------------------------------------------------------- train

std::vector<Field> train_fields() {
  const TrainConfig d;
  return {
      {"data", Kind::Str, nullptr, "dataset directory", {"*"}, true},
      {"out", Kind::Str, nullptr, "output checkpoint directory", {"*"}, true, false},
      {"mode", Kind::Str, "joint", "training mode", {"joint", "isolated"}},
      {"loss", Kind::Str, "asl", "classification loss", {"asl", "avg"}},
      {"epochs", Kind::Int, d.epochs, "epochs"},
      {"batch", Kind::Int, d.batch, "batch size"},
      {"lr", Kind::Num, d.lr, "learning rate"},
      {"wd", Kind::Num, d.wd, "decoupled weight decay"},
      {"beta", Kind::Num, d.beta, "classification weight"},
      {"m", Kind::Num, d.asl.margin, "ASL probability margin"},
      {"gamma_neg", Kind::Num, d.asl.gamma_neg, "ASL negative focusing exponent"},
      {"threshold", Kind::Num, d.threshold, "decision threshold stored with the checkpoint"},
      {"d_model", Kind::Int, d.lm.d_model, "frozen LM width (token dim)"},
      {"n_layers", Kind::Int, d.lm.n_layers, "frozen LM layers"},
      {"n_heads", Kind::Int, d.lm.n_heads, "frozen LM attention heads"},
      {"vocab", Kind::Int, d.lm.vocab, "frozen LM vocabulary size"},
      {"max_seq", Kind::Int, d.lm.max_seq, "frozen LM maximum sequence length"},
      {"lm_seed", Kind::Int, d.lm.seed, "frozen LM init seed"},
      {"seed", Kind::Int, d.seed, "split, projector, shuffle and vocabulary seed"},
  };
}

TrainConfig train_config(const json& c) {
  TrainConfig t;
  t.mode = train_mode_from_string(c["mode"]);
  t.loss = loss_kind_from_string(c["loss"]);
  t.epochs = c["epochs"];
  t.batch = c["batch"];
  t.lr = c["lr"];
  t.wd = c["wd"];
  t.beta = c["beta"];
  t.asl.margin = c["m"];
  t.asl.gamma_neg = c["gamma_neg"];
  t.threshold = c["threshold"];
  t.lm.d_model = c["d_model"];
  t.lm.n_layers = c["n_layers"];
  t.lm.n_heads = c["n_heads"];
  t.lm.vocab = c["vocab"];
  t.lm.max_seq = c["max_seq"];
  t.lm.seed = c["lm_seed"];
  t.seed = c["seed"];
  validate(t);
  return t;
}

int run_train(const Options& opts, std::ostream& out) {
  const json c = opts.resolve();
  const TrainConfig cfg = train_config(c);
  const Dataset data = read_dataset(c["data"].get<std::string>());
  const DataSplits splits = make_splits(data, cfg.seed);
  out << "training " << to_string(cfg.mode) << " (" << to_string(cfg.loss) << ") on " << splits.fit.size()
      << " records, " << splits.val.size() << " validation, " << splits.test.size() << " test\n";
  const Checkpoint ck = train(data, splits.fit, cfg, [&](const std::string& label, std::size_t epoch, double loss) {
    out << label << " epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << loss << "\n";
  });
  const fs::path dir = c["out"].get<std::string>();
  save_checkpoint(ck, dir);
  write_lock(dir / "run.lock", opts.lock(c));
  out << "wrote checkpoint to " << dir.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ eval

std::vector<Field> eval_fields() {
  return {
      {"data", Kind::Str, nullptr, "dataset directory", {"*"}, true},
      {"ckpt", Kind::Str, nullptr, "checkpoint directory", {"*"}, true},
      {"mode", Kind::Str, "joint", "joint, iso-joint, bss or single:<source>", {"*"}},
      {"out", Kind::Str, nullptr, "metrics CSV path", {"*"}, true, false},
      {"threshold", Kind::Num, nullptr, "decision threshold (default: the checkpoint's)"},
      {"run", Kind::Str, nullptr, "run name in the metrics file (default: the mode)", {"*"}},
  };
}

int run_eval(const Options& opts, std::ostream& out) {
  json c = opts.resolve();
  const Dataset data = read_dataset(c["data"].get<std::string>());
  const Checkpoint ck = load_checkpoint(c["ckpt"].get<std::string>());
  const std::string mode = c["mode"];
  if (c["threshold"].is_null()) c["threshold"] = ck.config.threshold;
  if (c["run"].is_null()) c["run"] = mode;
  const double threshold = c["threshold"];
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must be in (0, 1)");

  const DataSplits splits = make_splits(data, ck.config.seed);
  Predictions pred;
  if (mode == "bss") {
    const BssSelection sel = bss_select(ck, data, splits.val);
    out << "best single source per task (validation F1):\n";
    for (std::size_t k = 0; k < sel.source.size(); ++k) {
      out << "  " << ck.task_names[k] << ": " << ck.sources[sel.source[k]].name
          << (sel.selectable[k] ? "" : " (unselectable, no labeled validation records)") << "\n";
    }
    pred = predict_bss(ck, data, splits.test, sel);
    for (std::size_t r = 0; r < pred.labels.size(); ++r)
      for (std::size_t k = 0; k < pred.labels[r].size(); ++k) pred.labels[r][k] = pred.phi.at(r, k) >= threshold;
  } else {
    pred = predict(ck, data, splits.test, parse_predict_mode(mode, ck.sources), threshold);
  }
  std::vector<LabelVector> labels;
  labels.reserve(splits.test.size());
  for (std::size_t i : splits.test) labels.push_back(data.labels[i]);
  const std::vector<RunMetrics> runs{{c["run"].get<std::string>(), evaluate_tasks(pred.labels, labels, ck.task_names)}};
  const fs::path path = c["out"].get<std::string>();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_metrics_csv(path, runs);
  write_lock(sibling(path, ".run.lock"), opts.lock(c));
  out << render_report_text(runs);
  return 0;
}

// ------------------------------------------------------------- gradcheck

int run_gradcheck(std::uint64_t seed, double tol, std::ostream& out) {
  if (!(tol > 0.0)) throw ValidationError("--tol must be positive");
  const GradCheckReport r = pipeline_gradcheck(seed, tol);
  for (const auto& e : r.entries) {
    out << (e.pass ? "ok   " : "FAIL ") << e.name << " max rel error " << e.max_rel_error;
    if (!e.pass) out << " at index " << e.worst_index << " (analytic " << e.analytic << ", numeric " << e.numeric << ")";
    out << "\n";
  }
  out << "max relative error " << r.max_rel_error << " (tol " << tol << "): " << (r.pass ? "pass" : "fail") << "\n";
  if (!r.pass) {
    std::ostringstream msg;
    msg << "gradient check failed: max relative error " << r.max_rel_error << " exceeds " << tol;
    throw NumericalError(msg.str());
  }
  return 0;
}

// ---------------------------------------------------------------- report

int run_report(const std::string& out_path, const std::vector<std::string>& inputs, std::ostream& out) {
  std::vector<RunMetrics> runs;
  for (const auto& in : inputs) {
    for (auto& r : read_metrics_csv(in)) {
      for (const auto& seen : runs) {
        if (seen.run == r.run) throw ValidationError(in + ": run '" + r.run + "' appears in more than one input");
      }
      runs.push_back(std::move(r));
    }
  }
  fs::path base(out_path);
  if (base.extension() == ".csv" || base.extension() == ".txt") base.replace_extension();
  const std::string text = render_report_text(runs);
  const std::string csv = render_report_csv(runs);
  if (base.has_parent_path()) fs::create_directories(base.parent_path());
  write_file(sibling(base, ".csv"), csv);
  write_file(sibling(base, ".txt"), text);
  json lock{{"command", "report"}, {"version", kLockVersion}, {"config", {{"metrics", inputs}}}};
  write_lock(sibling(base, ".run.lock"), lock);
  out << text;
  return 0;
}

}  // namespace

int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fuses multimodal embeddings through a frozen language model"};
  app.name("slmfuse");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand help for every subcommand");

  auto* gen = app.add_subcommand("gen", "Generate a synthetic multimodal dataset");
  const Options gen_opts(gen, gen_fields());

  auto* train_cmd = app.add_subcommand("train", "Train projectors against the frozen LM");
  const Options train_opts(train_cmd, train_fields());

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  const Options eval_opts(eval, eval_fields());

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the end-to-end gradients");
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  gradcheck->add_option("--seed", gc_seed, "seed")->capture_default_str();
  gradcheck->add_option("--tol", gc_tol, "max relative error")->capture_default_str();

  auto* report = app.add_subcommand("report", "Render metrics files as a per-task table");
  std::string report_out;
  std::vector<std::string> report_in;
  report->add_option("--out", report_out, "table path; .csv and .txt variants are written")->required();
  report->add_option("metrics", report_in, "metrics CSV files")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen(gen_opts, out);
    if (train_cmd->parsed()) return run_train(train_opts, out);
    if (eval->parsed()) return run_eval(eval_opts, out);
    if (gradcheck->parsed()) return run_gradcheck(gc_seed, gc_tol, out);
    if (report->parsed()) return run_report(report_out, report_in, out);
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace slmfuse
