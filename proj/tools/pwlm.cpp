// pwlm: command-line front end for corpus handling, training, guess-number
// estimation and strength-meter export.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "pwlm/checkpoint.hpp"
#include "pwlm/corpus.hpp"
#include "pwlm/error.hpp"
#include "pwlm/markov.hpp"
#include "pwlm/mc_estimator.hpp"
#include "pwlm/model_file.hpp"
#include "pwlm/psm.hpp"
#include "pwlm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Relative output paths land under $PWLM_OUTPUT_DIR when it is set.
fs::path output_path(const std::string& p) {
  fs::path out(p);
  if (const char* dir = std::getenv("PWLM_OUTPUT_DIR"); dir && *dir && out.is_relative()) {
    out = fs::path(dir) / out;
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw pwlm::IoError("cannot write " + path.string());
  f << text;
  if (!f) throw pwlm::IoError("error while writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw pwlm::IoError("cannot read " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void emit(const json& summary) { std::cout << summary.dump() << '\n'; }

pwlm::Corpus load(const std::string& path, const pwlm::FilterPolicy& policy = {}) {
  auto r = pwlm::load_corpus(path, policy);
  if (r.report.lines_read != r.report.kept) {
    std::cerr << "note: " << path << ": kept " << r.report.kept << " of " << r.report.lines_read
              << " lines\n";
  }
  return std::move(r.corpus);
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

// --- score files: "# manifest", header, then password \t log_prob \t guesses

std::vector<std::optional<double>> read_guess_column(const std::string& path,
                                                     const pwlm::Corpus& test) {
  std::istringstream in(read_text(path));
  std::string line;
  std::vector<std::optional<double>> out;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("password\t", 0) == 0) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw pwlm::FormatError(path + ": score records need a guesses column (run score with --est)");
    }
    const std::size_t i = out.size();
    if (i >= test.size() || line.substr(0, t1) != test[i]) {
      throw pwlm::FormatError(path + ": record " + std::to_string(i + 1) +
                              " does not match the test corpus");
    }
    const std::string g = line.substr(t2 + 1);
    if (g == "nan") out.emplace_back();
    else out.emplace_back(std::stod(g));
  }
  if (out.size() != test.size()) {
    throw pwlm::FormatError(path + ": has " + std::to_string(out.size()) + " records, test corpus has " +
                            std::to_string(test.size()));
  }
  return out;
}

std::vector<std::optional<double>> min_guess_oracle(const std::vector<std::string>& files,
                                                    const pwlm::Corpus& test) {
  std::vector<std::vector<std::optional<double>>> per;
  for (const auto& f : files) per.push_back(read_guess_column(f, test));
  return pwlm::min_guess(per);
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void collect_names(const CLI::App* app, std::vector<std::string>& names) {
  for (const auto* opt : app->get_options()) {
    for (const auto& l : opt->get_lnames()) names.push_back("--" + l);
  }
  for (const auto* sub : app->get_subcommands({})) {
    names.push_back(sub->get_name());
    collect_names(sub, names);
  }
}

std::string suggestion(const CLI::App& app, int argc, char** argv) {
  std::vector<std::string> names;
  collect_names(&app, names);
  std::string out;
  bool seen_command = false;
  for (int i = 1; i < argc; ++i) {
    std::string u = argv[i];
    if (u.rfind("--", 0) != 0) {
      // Only the first bare word can be a (mistyped) subcommand.
      if (seen_command || (i > 1 && std::string_view(argv[i - 1]).rfind("--", 0) == 0 &&
                           std::string_view(argv[i - 1]).find('=') == std::string_view::npos)) {
        continue;
      }
      seen_command = true;
    }
    u = u.substr(0, u.find('='));
    if (std::find(names.begin(), names.end(), u) != names.end()) continue;
    std::string best;
    std::size_t best_d = 4;
    for (const auto& n : names) {
      const std::size_t d = levenshtein(u, n);
      if (d < best_d) {
        best_d = d;
        best = n;
      }
    }
    if (!best.empty()) out += "did you mean '" + best + "' instead of '" + u + "'?\n";
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Password language models: training, guess-number estimation and strength meters", "pwlm"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config-file", "", "INI/TOML file supplying flags; command-line flags win");
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--threads", threads, "Worker threads for scoring, sampling and training")
      ->check(CLI::PositiveNumber);

  std::function<void()> action;
  auto on = [&](CLI::App* sub, std::function<void()> fn) {
    sub->callback([&action, fn = std::move(fn)] { action = fn; });
  };

  // ingest ------------------------------------------------------------------
  struct {
    std::string in, out;
    std::size_t min_len = 6, max_len = 30;
    bool dedup = false;
  } ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Filter a raw password list (length, printable ASCII)");
  c_ingest->add_option("--in", ingest.in, "Raw list, one password per line")->required();
  c_ingest->add_option("--out", ingest.out, "Filtered corpus")->required();
  c_ingest->add_option("--min-length", ingest.min_len, "Shortest kept password");
  c_ingest->add_option("--max-length", ingest.max_len, "Longest kept password");
  c_ingest->add_flag("--dedup", ingest.dedup, "Keep only the first occurrence of each password");
  on(c_ingest, [&] {
    pwlm::FilterPolicy policy{ingest.min_len, ingest.max_len};
    policy.validate();
    auto r = pwlm::load_corpus(ingest.in, policy);
    auto corpus = ingest.dedup ? r.corpus.deduplicated() : r.corpus;
    pwlm::save_corpus(corpus, output_path(ingest.out));
    auto j = json::parse(r.report.to_json());
    j["written"] = corpus.size();
    emit(j);
  });

  // sample ------------------------------------------------------------------
  struct {
    std::string in, out;
    std::size_t n = 0;
    std::uint64_t seed = 0;
  } sample;
  auto* c_sample = app.add_subcommand("sample", "Uniform sample without replacement");
  c_sample->add_option("--in", sample.in, "Corpus")->required();
  c_sample->add_option("--n", sample.n, "Sample size")->required();
  c_sample->add_option("--seed", sample.seed, "RNG seed");
  c_sample->add_option("--out", sample.out, "Sampled corpus")->required();
  on(c_sample, [&] {
    auto s = pwlm::sample_corpus(load(sample.in), sample.n, sample.seed);
    pwlm::save_corpus(s, output_path(sample.out));
    emit({{"written", s.size()}, {"seed", sample.seed}});
  });

  // split -------------------------------------------------------------------
  struct {
    std::string in, train_out, test_out;
    double fraction = 0.8;
    std::uint64_t seed = 0;
  } split;
  auto* c_split = app.add_subcommand("split", "Seeded train/test split");
  c_split->add_option("--in", split.in, "Corpus")->required();
  c_split->add_option("--train-fraction", split.fraction, "Share of passwords in the training part");
  c_split->add_option("--seed", split.seed, "RNG seed");
  c_split->add_option("--train-out", split.train_out, "Training part")->required();
  c_split->add_option("--test-out", split.test_out, "Test part")->required();
  on(c_split, [&] {
    auto [train, test] = pwlm::split_corpus(load(split.in), split.fraction, split.seed);
    pwlm::save_corpus(train, output_path(split.train_out));
    pwlm::save_corpus(test, output_path(split.test_out));
    emit({{"train", train.size()}, {"test", test.size()}, {"seed", split.seed}});
  });

  // jsd ---------------------------------------------------------------------
  struct {
    std::string a;
    std::vector<std::string> b;
  } jsd;
  auto* c_jsd = app.add_subcommand("jsd", "Jensen-Shannon divergence of 3-gram distributions (bits)");
  c_jsd->add_option("--a", jsd.a, "Target corpus")->required();
  c_jsd->add_option("--b", jsd.b, "Candidate corpus; repeat to rank several")->required();
  on(c_jsd, [&] {
    const auto target = pwlm::trigram_distribution(load(jsd.a));
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& b : jsd.b) ranked.emplace_back(pwlm::js_divergence(target, pwlm::trigram_distribution(load(b))), b);
    if (ranked.size() == 1) {
      emit({{"jsd", ranked[0].first}, {"a", jsd.a}, {"b", ranked[0].second}});
      return;
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });
    json rows = json::array();
    for (const auto& [d, b] : ranked) rows.push_back({{"b", b}, {"jsd", d}});
    emit({{"a", jsd.a}, {"ranking", rows}});
  });

  // pretrain / finetune -----------------------------------------------------
  struct TrainFlags {
    std::string data, out, report, eval, model_id;
    std::size_t epochs = 10, batch = 256, warmup = 0, log_every = 0;
    double lr = 5e-4;
    std::string schedule = "warmup-decay";
    std::uint64_t seed = 0;
  };
  auto add_train_flags = [](CLI::App* c, TrainFlags& f) {
    c->add_option("--data", f.data, "Training corpus")->required();
    c->add_option("--out", f.out, "Output checkpoint")->required();
    c->add_option("--epochs", f.epochs, "Passes over the data")->check(CLI::PositiveNumber);
    c->add_option("--batch", f.batch, "Passwords per optimizer step")->check(CLI::PositiveNumber);
    c->add_option("--lr", f.lr, "Peak learning rate")->check(CLI::PositiveNumber);
    c->add_option("--schedule", f.schedule, "warmup-decay or constant")
        ->check(CLI::IsMember({"warmup-decay", "constant"}));
    c->add_option("--warmup", f.warmup, "Warmup steps (0: 1% of all steps)");
    c->add_option("--seed", f.seed, "Initialization, shuffling and dropout seed");
    c->add_option("--report", f.report, "Write line-delimited training records here");
    c->add_option("--log-every", f.log_every, "Also record every Nth optimizer step");
    c->add_option("--eval", f.eval, "Held-out corpus for cross-entropy before/after");
    c->add_option("--model-id", f.model_id, "Identifier stored in the checkpoint (default: output stem)");
  };
  auto training_config = [&](const TrainFlags& f, pwlm::TrainingMode mode) {
    pwlm::TrainingConfig tc;
    tc.epochs = f.epochs;
    tc.batch_size = f.batch;
    tc.learning_rate = f.lr;
    tc.schedule = f.schedule == "constant" ? pwlm::LrSchedule::kConstant : pwlm::LrSchedule::kWarmupDecay;
    tc.warmup_steps = f.warmup;
    tc.seed = f.seed;
    tc.mode = mode;
    tc.threads = threads;
    tc.log_every = f.log_every;
    return tc;
  };
  auto finish_training = [](pwlm::TrainResult& r, const TrainFlags& f) {
    r.model.set_model_id(f.model_id.empty() ? stem_of(f.out) : f.model_id);
    const auto ckpt = output_path(f.out);
    pwlm::save_checkpoint(r.model, ckpt);
    r.report.checkpoint = ckpt.string();
    if (!f.report.empty()) write_text(output_path(f.report), r.report.to_jsonl());
    json s{{"checkpoint", ckpt.string()},
           {"model_id", r.model.model_id()},
           {"epochs", r.report.epochs.size()},
           {"initial_loss", r.report.initial_loss},
           {"final_loss", r.report.epochs.back().loss},
           {"wall_seconds", r.report.wall_seconds}};
    if (r.report.eval_loss_before) s["eval_loss_before"] = *r.report.eval_loss_before;
    if (r.report.eval_loss_after) s["eval_loss_after"] = *r.report.eval_loss_after;
    emit(s);
  };

  TrainFlags pre;
  struct {
    std::string preset = "toy";
    std::size_t layers = 0, embed = 0, inter = 0, heads = 0, max_pos = 0;
    double dropout = -1;
  } arch;
  auto* c_pre = app.add_subcommand("pretrain", "Train a decoder from scratch");
  c_pre->add_option("--config", arch.preset, "Model preset: toy, small or base")
      ->check(CLI::IsMember({"toy", "small", "base"}));
  c_pre->add_option("--layers", arch.layers, "Override the preset's layer count");
  c_pre->add_option("--embed-dim", arch.embed, "Override the embedding width");
  c_pre->add_option("--intermediate-dim", arch.inter, "Override the feed-forward width");
  c_pre->add_option("--heads", arch.heads, "Override the attention head count");
  c_pre->add_option("--max-positions", arch.max_pos, "Override the context length");
  c_pre->add_option("--dropout", arch.dropout, "Override the attention dropout");
  add_train_flags(c_pre, pre);
  on(c_pre, [&] {
    auto cfg = pwlm::ModelConfig::preset(arch.preset);
    if (arch.layers) cfg.layers = arch.layers;
    if (arch.embed) cfg.embed_dim = arch.embed;
    if (arch.inter) cfg.intermediate_dim = arch.inter;
    if (arch.heads) cfg.heads = arch.heads;
    if (arch.max_pos) cfg.max_positions = arch.max_pos;
    if (arch.dropout >= 0) cfg.attention_dropout = arch.dropout;
    cfg.validate();
    const auto data = load(pre.data);
    std::optional<pwlm::Corpus> eval;
    if (!pre.eval.empty()) eval = load(pre.eval);
    auto r = pwlm::pretrain(cfg, data, training_config(pre, pwlm::TrainingMode::kPretrain), eval ? &*eval : nullptr);
    finish_training(r, pre);
  });

  TrainFlags ft;
  ft.lr = 5e-5;
  std::string ft_base, ft_expect;
  auto* c_ft = app.add_subcommand("finetune", "Continue training a checkpoint on a new corpus");
  c_ft->add_option("--base", ft_base, "Pretrained checkpoint")->required();
  c_ft->add_option("--config", ft_expect, "Require the checkpoint to have this preset's shape")
      ->check(CLI::IsMember({"toy", "small", "base"}));
  add_train_flags(c_ft, ft);
  on(c_ft, [&] {
    const auto data = load(ft.data);
    std::optional<pwlm::Corpus> eval;
    if (!ft.eval.empty()) eval = load(ft.eval);
    std::optional<pwlm::ModelConfig> expect;
    if (!ft_expect.empty()) expect = pwlm::ModelConfig::preset(ft_expect);
    auto r = pwlm::finetune(ft_base, data, training_config(ft, pwlm::TrainingMode::kFinetune),
                            eval ? &*eval : nullptr, expect);
    finish_training(r, ft);
  });

  // ngram-train -------------------------------------------------------------
  struct {
    std::string data, out;
    pwlm::NgramOptions opts;
  } ng;
  auto* c_ng = app.add_subcommand("ngram-train", "Train the n-gram backoff baseline");
  c_ng->add_option("--data", ng.data, "Training corpus")->required();
  c_ng->add_option("--out", ng.out, "Output model")->required();
  c_ng->add_option("--order", ng.opts.order, "n (context is n-1 characters)");
  c_ng->add_option("--delta", ng.opts.delta, "Laplace add-delta");
  c_ng->add_option("--threshold", ng.opts.backoff_threshold, "Minimum context count before backing off");
  c_ng->add_option("--max-sample-length", ng.opts.max_sample_length, "Samples longer than this are truncated");
  on(c_ng, [&] {
    auto m = pwlm::train_ngram(load(ng.data), ng.opts);
    const auto out = output_path(ng.out);
    m.save(out);
    emit({{"model", out.string()}, {"order", ng.opts.order}, {"model_id", m.model_id()}});
  });

  // gen ---------------------------------------------------------------------
  struct {
    std::string model, out;
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    bool with_log_prob = false;
  } gen;
  auto* c_gen = app.add_subcommand("gen", "Sample passwords from a model");
  c_gen->add_option("--model", gen.model, "Checkpoint or n-gram model")->required();
  c_gen->add_option("--n", gen.n, "Number of draws");
  c_gen->add_option("--seed", gen.seed, "RNG seed");
  c_gen->add_option("--out", gen.out, "Generated passwords, one per line")->required();
  c_gen->add_flag("--with-log-prob", gen.with_log_prob, "Append a tab and the natural-log probability");
  on(c_gen, [&] {
    auto model = pwlm::load_guessing_model(gen.model, threads);
    std::size_t ok = 0, truncated = 0, invalid = 0;
    std::ostringstream text;
    text.precision(17);
    for (const auto& s : model->sample(gen.n, gen.seed)) {
      switch (s.status) {
        case pwlm::SampleStatus::kOk:
          ++ok;
          text << s.text;
          if (gen.with_log_prob) text << '\t' << s.log_prob;
          text << '\n';
          break;
        case pwlm::SampleStatus::kTruncated: ++truncated; break;
        case pwlm::SampleStatus::kInvalid: ++invalid; break;
      }
    }
    write_text(output_path(gen.out), text.str());
    emit({{"draws", gen.n}, {"ok", ok}, {"truncated", truncated}, {"invalid", invalid}, {"seed", gen.seed}});
  });

  // estimator ---------------------------------------------------------------
  struct {
    std::string model, out;
    std::size_t n = 10000;
    std::uint64_t seed = 0;
  } est;
  auto* c_est = app.add_subcommand("estimator", "Build a Monte Carlo guess-number estimator");
  c_est->add_option("--model", est.model, "Checkpoint or n-gram model")->required();
  c_est->add_option("--n", est.n, "Sample size (use at least 1000 for reported numbers)")
      ->check(CLI::PositiveNumber);
  c_est->add_option("--seed", est.seed, "RNG seed");
  c_est->add_option("--out", est.out, "Estimator file")->required();
  on(c_est, [&] {
    if (est.n < 1000) std::cerr << "warning: estimates from fewer than 1000 samples are very noisy\n";
    auto model = pwlm::load_guessing_model(est.model, threads);
    auto e = pwlm::MonteCarloEstimator::build(*model, est.n, est.seed);
    const auto out = output_path(est.out);
    e.save(out);
    emit({{"estimator", out.string()}, {"n", e.n()}, {"contributing", e.contributing()},
          {"model_id", e.model_id()}, {"seed", e.seed()}});
  });

  // score -------------------------------------------------------------------
  struct {
    std::string model, est, in, out;
  } score;
  auto* c_score = app.add_subcommand("score", "Log-probability (and guess number) per password");
  c_score->add_option("--model", score.model, "Checkpoint or n-gram model")->required();
  c_score->add_option("--in", score.in, "Passwords to score")->required();
  c_score->add_option("--est", score.est, "Estimator for guess numbers");
  c_score->add_option("--out", score.out, "Write records here instead of standard output");
  on(c_score, [&] {
    auto model = pwlm::load_guessing_model(score.model, threads);
    const auto test = load(score.in);
    std::optional<pwlm::MonteCarloEstimator> e;
    if (!score.est.empty()) e = pwlm::MonteCarloEstimator::load(score.est);
    std::ostringstream text;
    text.precision(17);
    text << "# " << json{{"model_id", model->model_id()}, {"test", score.in}}.dump() << '\n';
    text << (e ? "password\tlog_prob\tguesses\n" : "password\tlog_prob\n");
    std::size_t unscorable = 0;
    for (const auto& pw : test) {
      text << pw << '\t';
      if (!model->can_score(pw)) {
        ++unscorable;
        text << "nan" << (e ? "\tnan\n" : "\n");
        continue;
      }
      const double lp = model->log_prob(pw);
      text << lp;
      if (e) text << '\t' << e->guess_number(lp);
      text << '\n';
    }
    if (score.out.empty()) {
      std::cout << text.str();
    } else {
      write_text(output_path(score.out), text.str());
      emit({{"scored", test.size() - unscorable}, {"unscorable", unscorable}});
    }
  });

  // curve -------------------------------------------------------------------
  struct {
    std::vector<std::string> models, ests;
    std::string test, out;
    double gmax = 1e20;
    std::size_t points = 81;
  } curve;
  auto* c_curve = app.add_subcommand("curve", "Guessing curve; several models give their MinGuess curve");
  c_curve->add_option("--model", curve.models, "Model; repeat together with --est")->required();
  c_curve->add_option("--est", curve.ests, "Estimator for the matching --model")->required();
  c_curve->add_option("--test", curve.test, "Test corpus")->required();
  c_curve->add_option("--gmax", curve.gmax, "Largest guess number on the grid");
  c_curve->add_option("--points", curve.points, "Grid points, log-uniform from 1 to gmax");
  c_curve->add_option("--out", curve.out, "Curve file")->required();
  on(c_curve, [&] {
    if (curve.models.size() != curve.ests.size()) throw UsageError("give one --est per --model");
    const auto test = load(curve.test);
    const auto grid = pwlm::default_grid(curve.gmax, curve.points);
    std::vector<std::vector<std::optional<double>>> per;
    json ids = json::array();
    for (std::size_t i = 0; i < curve.models.size(); ++i) {
      auto model = pwlm::load_guessing_model(curve.models[i], threads);
      const auto e = pwlm::MonteCarloEstimator::load(curve.ests[i]);
      per.push_back(pwlm::estimate_guess_numbers(e, *model, test, threads));
      ids.push_back({{"model_id", model->model_id()}, {"n", e.n()}, {"seed", e.seed()}});
    }
    auto c = pwlm::curve_from_guess_numbers(per.size() == 1 ? per[0] : pwlm::min_guess(per), grid);
    c.manifest = {{"models", ids},
                  {"min_guess", per.size() > 1},
                  {"test", curve.test},
                  {"test_size", c.test_size},
                  {"unscorable", c.unscorable}};
    const auto out = output_path(curve.out);
    write_text(out, c.to_text());
    emit({{"curve", out.string()},
          {"coverage_at_gmax", c.points.back().coverage},
          {"test_size", c.test_size},
          {"unscorable", c.unscorable}});
  });

  // compare -----------------------------------------------------------------
  struct {
    std::string a, b;
    std::size_t points = 1000;
  } cmp;
  auto* c_cmp = app.add_subcommand("compare", "Mean and max coverage difference of two curves (a - b)");
  c_cmp->add_option("--a", cmp.a, "First curve file")->required();
  c_cmp->add_option("--b", cmp.b, "Second curve file")->required();
  c_cmp->add_option("--points", cmp.points, "Log-uniform comparison points")->check(CLI::PositiveNumber);
  on(c_cmp, [&] {
    const auto a = pwlm::GuessingCurve::from_text(read_text(cmp.a));
    const auto b = pwlm::GuessingCurve::from_text(read_text(cmp.b));
    const auto r = pwlm::compare_curves(a, b, cmp.points);
    emit({{"mean_difference", r.mean_difference},
          {"max_difference", r.max_difference},
          {"argmax_guesses", r.argmax_guesses},
          {"points", cmp.points}});
  });

  // psm-export --------------------------------------------------------------
  struct {
    std::string model, est, out, precision = "int8";
    bool zip = false;
    double factor = 1.0;
  } px;
  auto* c_px = app.add_subcommand("psm-export", "Quantize a checkpoint into a strength-meter bundle");
  c_px->add_option("--model", px.model, "Transformer checkpoint")->required();
  c_px->add_option("--est", px.est, "Estimator built from the same checkpoint")->required();
  c_px->add_option("--precision", px.precision, "fp32, fp16 or int8")->check(CLI::IsMember({"fp32", "fp16", "int8"}));
  c_px->add_flag("--zip", px.zip, "gzip the bundle");
  c_px->add_option("--factor", px.factor, "Scaling factor dividing guess numbers");
  c_px->add_option("--out", px.out, "Bundle file")->required();
  on(c_px, [&] {
    const auto model = pwlm::load_checkpoint(px.model);
    const auto e = pwlm::MonteCarloEstimator::load(px.est);
    if (e.model_id() != model.model_id()) {
      std::cerr << "warning: estimator was built from '" << e.model_id() << "', checkpoint is '"
                << model.model_id() << "'\n";
    }
    const auto b = pwlm::PsmBundle::create(model, e, {pwlm::precision_from_name(px.precision), px.zip}, px.factor);
    const auto bytes = b.serialize();
    const auto out = output_path(px.out);
    write_text(out, std::string(bytes.begin(), bytes.end()));
    emit({{"bundle", out.string()},
          {"bytes", bytes.size()},
          {"weight_bytes", b.weight_bytes()},
          {"precision", px.precision},
          {"zip", px.zip},
          {"scaling_factor", b.scaling_factor()}});
  });

  // psm-calibrate -----------------------------------------------------------
  struct {
    std::string bundle, test, out, reference_bundle;
    std::vector<std::string> oracle;
    long long reference_safe = -1;
  } pc;
  auto* c_pc = app.add_subcommand("psm-calibrate", "Pick the smallest scaling factor reaching a safe-error count");
  c_pc->add_option("--bundle", pc.bundle, "Bundle to calibrate")->required();
  c_pc->add_option("--test", pc.test, "Evaluation corpus")->required();
  c_pc->add_option("--oracle", pc.oracle, "score output with guesses; repeat for MinGuess")->required();
  auto* ref_n = c_pc->add_option("--reference-safe", pc.reference_safe, "Target safe-error count");
  auto* ref_b = c_pc->add_option("--reference-bundle", pc.reference_bundle, "Use this bundle's safe-error count as the target");
  ref_n->excludes(ref_b);
  c_pc->add_option("--out", pc.out, "Calibrated bundle")->required();
  on(c_pc, [&] {
    if (pc.reference_safe < 0 && pc.reference_bundle.empty()) {
      throw UsageError("give --reference-safe or --reference-bundle");
    }
    auto bundle = pwlm::PsmBundle::load(pc.bundle);
    bundle.set_threads(threads);
    const auto test = load(pc.test);
    const auto oracle = min_guess_oracle(pc.oracle, test);
    std::size_t target = 0;
    if (!pc.reference_bundle.empty()) {
      auto ref = pwlm::PsmBundle::load(pc.reference_bundle);
      ref.set_threads(threads);
      target = pwlm::safe_errors(pwlm::psm_raw_guesses(ref, test, threads), oracle, ref.scaling_factor());
    } else {
      target = static_cast<std::size_t>(pc.reference_safe);
    }
    const auto raw = pwlm::psm_raw_guesses(bundle, test, threads);
    const auto cal = pwlm::calibrate_scaling(raw, oracle, target);
    bundle.set_scaling_factor(cal.factor);
    const auto bytes = bundle.serialize();
    const auto out = output_path(pc.out);
    write_text(out, std::string(bytes.begin(), bytes.end()));
    emit({{"bundle", out.string()}, {"scaling_factor", cal.factor}, {"target_safe", target},
          {"safe", cal.safe_count}});
  });

  // psm-eval ----------------------------------------------------------------
  struct {
    std::string bundle, test, out;
    std::vector<std::string> oracle, passwords;
  } pe;
  auto* c_pe = app.add_subcommand("psm-eval", "Strength of single passwords, or an error matrix against MinGuess");
  c_pe->add_option("--bundle", pe.bundle, "Bundle")->required();
  c_pe->add_option("--password", pe.passwords, "Password to rate; repeatable");
  c_pe->add_option("--test", pe.test, "Evaluation corpus for the error matrix");
  c_pe->add_option("--oracle", pe.oracle, "score output with guesses; repeat for MinGuess");
  c_pe->add_option("--out", pe.out, "Write the error matrix here");
  on(c_pe, [&] {
    auto bundle = pwlm::PsmBundle::load(pe.bundle);
    bundle.set_threads(threads);
    if (pe.passwords.empty() && pe.test.empty()) throw UsageError("give --password or --test with --oracle");
    for (const auto& pw : pe.passwords) {
      const auto r = pwlm::psm_strength(bundle, pw);
      emit({{"password", pw},
            {"log_prob", r.log_prob},
            {"guesses", r.guesses},
            {"log10_guesses", r.log10_guesses},
            {"bin", r.bin},
            {"standard_error", r.standard_error}});
    }
    if (pe.test.empty()) return;
    if (pe.oracle.empty()) throw UsageError("--test needs at least one --oracle");
    const auto test = load(pe.test);
    const auto oracle = min_guess_oracle(pe.oracle, test);
    const auto raw = pwlm::psm_raw_guesses(bundle, test, threads);
    std::vector<double> scaled;
    for (double g : raw) scaled.push_back(pwlm::scale_guesses(g, bundle.scaling_factor()));
    const auto m = pwlm::error_matrix(scaled, oracle);
    auto j = m.to_json();
    j["scaling_factor"] = bundle.scaling_factor();
    j["oracle_models"] = pe.oracle;
    if (!pe.out.empty()) write_text(output_path(pe.out), j.dump(1) + "\n");
    emit({{"safe", m.safe}, {"unsafe", m.unsafe}, {"accurate", m.accurate}, {"total", m.total},
          {"unsafe_rate", m.unsafe_rate()}, {"scaling_factor", bundle.scaling_factor()}});
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n' << suggestion(app, argc, argv) << "run with --help for usage\n";
    return 2;
  }

  try {
    action();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const pwlm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
