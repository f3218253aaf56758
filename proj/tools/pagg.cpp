#include <algorithm>
#include <cstdio>
#include <iostream>
#include <limits>
#include <thread>

#include <CLI11.hpp>

#include "cli_support.hpp"
#include "pagg/pagg.hpp"

namespace fs = std::filesystem;
using namespace pagg;

namespace {

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

CohortFormat resolve_format(const std::string& flag, const fs::path& path) {
  if (flag == "binary") return CohortFormat::binary;
  if (flag == "csv") return CohortFormat::csv;
  return path.extension() == ".csv" ? CohortFormat::csv : CohortFormat::binary;
}

std::string g9(double v) {
  if (!std::isfinite(v)) return "";
  return detail::format_g9(v);
}

cli::RunManifest start_manifest(const CLI::App& sub, std::uint64_t seed) {
  cli::RunManifest m;
  m.command = sub.get_name();
  m.config = cli::options_snapshot(sub);
  m.seed = seed;
  return m;
}

// ---------------------------------------------------------------------------

struct GenerateOpts {
  std::size_t sets = 40;
  std::size_t d = 8;
  std::size_t components = 3;
  std::size_t classes = 2;
  std::size_t n_min = 50;
  std::size_t n_max = 200;
  double noise = 1.0;
  double spread = 3.0;
  double concentration = 1.0;
  std::uint64_t seed = 0;
  bool survival = false;
  double hazard_step = 1.0;
  double base_hazard = 0.1;
  double censor_rate = 0.02;
  bool no_coords = false;
  std::string id_prefix = "set";
  std::string format = "auto";
  std::string out;
};

void add_generate(CLI::App& app, GenerateOpts& o) {
  auto* s = app.add_subcommand("generate", "Draw a synthetic cohort from a random planted mixture");
  s->add_option("--sets", o.sets, "Number of sets")->capture_default_str();
  s->add_option("--d", o.d, "Feature dimension")->capture_default_str();
  s->add_option("--components", o.components, "Planted mixture components (K)")->capture_default_str();
  s->add_option("--classes", o.classes, "Classes (one proportion profile each)")->capture_default_str();
  s->add_option("--n-min", o.n_min, "Smallest set size")->capture_default_str();
  s->add_option("--n-max", o.n_max, "Largest set size")->capture_default_str();
  s->add_option("--noise", o.noise, "Noise scale on component standard deviations")->capture_default_str();
  s->add_option("--mean-spread", o.spread, "Standard deviation of planted means")->capture_default_str();
  s->add_option("--concentration", o.concentration, "Profile peakedness")->capture_default_str();
  s->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  s->add_flag("--survival", o.survival, "Attach survival targets instead of class labels");
  s->add_option("--hazard-step", o.hazard_step, "Log-hazard increment per class")->capture_default_str();
  s->add_option("--base-hazard", o.base_hazard, "Baseline event hazard")->capture_default_str();
  s->add_option("--censor-rate", o.censor_rate, "Censoring hazard")->capture_default_str();
  s->add_flag("--no-coords", o.no_coords, "Omit element grid coordinates");
  s->add_option("--id-prefix", o.id_prefix, "Set id prefix")->capture_default_str();
  s->add_option("--format", o.format, "auto|binary|csv")
      ->check(CLI::IsMember({"auto", "binary", "csv"}))
      ->capture_default_str();
  s->add_option("-o,--out", o.out, "Output cohort path")->required();
}

int run_generate(const CLI::App& sub, const GenerateOpts& o) {
  const cli::Stopwatch clock;
  if (o.components < 2) throw ValidationError("--components must be >= 2 (got " + std::to_string(o.components) + ")");
  if (o.classes < 1) throw ValidationError("--classes must be >= 1");
  if (o.d < 1) throw ValidationError("--d must be >= 1");
  SyntheticSpec spec;
  spec.num_sets = o.sets;
  spec.n_min = o.n_min;
  spec.n_max = o.n_max;
  spec.noise_sigma = o.noise;
  spec.seed = o.seed;
  spec.with_coords = !o.no_coords;
  spec.id_prefix = o.id_prefix;
  RandomMixtureOptions mix;
  mix.components = o.components;
  mix.d = o.d;
  mix.classes = o.classes;
  mix.mean_spread = o.spread;
  mix.profile_concentration = o.concentration;
  mix.seed = o.seed;
  plant_random_mixture(spec, mix);
  if (o.survival) {
    SurvivalPlan plan;
    for (std::size_t c = 0; c < o.classes; ++c) plan.log_hazard_per_class.push_back(o.hazard_step * static_cast<double>(c));
    plan.base_hazard = o.base_hazard;
    plan.censor_rate = o.censor_rate;
    spec.survival = plan;
  }
  const Cohort cohort = generate_synthetic_cohort(spec);
  save_cohort(cohort, o.out, resolve_format(o.format, o.out));

  auto m = start_manifest(sub, o.seed);
  m.outputs = {o.out};
  m.wall_time_seconds = clock.seconds();
  m.write(cli::sibling(o.out, ".manifest.json"));
  std::cout << "generated " << cohort.size() << " sets (d=" << cohort.dim() << ", "
            << cohort.total_elements() << " elements) -> " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct FitOpts {
  std::string cohort;
  std::string format = "auto";
  Index C = 16;
  std::uint64_t seed = 0;
  int max_iters = 100;
  double tol = 1e-4;
  std::string init = "kmeanspp";
  Index max_pooled = 0;
  std::string out;
};

void add_fit(CLI::App& app, FitOpts& o) {
  auto* s = app.add_subcommand("fit-prototypes", "K-means prototype bank over all pooled elements");
  s->add_option("--cohort", o.cohort, "Input cohort")->required();
  s->add_option("--format", o.format, "auto|binary|csv")
      ->check(CLI::IsMember({"auto", "binary", "csv"}))
      ->capture_default_str();
  s->add_option("--C", o.C, "Number of prototypes")->capture_default_str();
  s->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  s->add_option("--max-iters", o.max_iters, "Lloyd iteration cap")->capture_default_str();
  s->add_option("--tol", o.tol, "Stop when no centroid moves further than this")->capture_default_str();
  s->add_option("--init", o.init, "kmeanspp|random")
      ->check(CLI::IsMember({"kmeanspp", "random"}))
      ->capture_default_str();
  s->add_option("--max-pooled", o.max_pooled, "Subsample the pool to this many rows (0 = all)")
      ->capture_default_str();
  s->add_option("-o,--out", o.out, "Output bank path")->required();
}

int run_fit(const CLI::App& sub, const FitOpts& o) {
  const cli::Stopwatch clock;
  const Cohort cohort = load_cohort(o.cohort, resolve_format(o.format, o.cohort));
  KMeansConfig cfg;
  cfg.C = o.C;
  cfg.seed = o.seed;
  cfg.max_iters = o.max_iters;
  cfg.tol = o.tol;
  cfg.init = o.init == "random" ? KMeansInit::random_rows : KMeansInit::kmeanspp;
  cfg.max_pooled = o.max_pooled;
  const PrototypeBank bank = fit_prototypes(cohort, cfg);
  save_bank(bank, o.out);

  auto m = start_manifest(sub, o.seed);
  m.inputs = {o.cohort};
  m.outputs = {o.out};
  m.wall_time_seconds = clock.seconds();
  m.write(cli::sibling(o.out, ".manifest.json"));
  std::cout << "fitted " << bank.size() << " prototypes (d=" << bank.dim() << ") in "
            << bank.meta().iterations_run << " iterations, inertia " << g9(bank.meta().final_inertia)
            << " -> " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EmbedOpts {
  std::string cohort;
  std::string format = "auto";
  std::string bank;
  std::string method;
  int em_steps = 1;
  double var_floor = 1e-4;
  double eps = 0.0;
  double eps_relative = 0.1;
  int ot_max_iters = 200;
  bool require_ot_convergence = false;
  bool raw_counts = false;
  bool skip_errors = false;
  unsigned threads = default_threads();
  std::string out;
  std::string csv;
  CLI::Option* eps_opt = nullptr;
};

void add_embed(CLI::App& app, EmbedOpts& o) {
  auto* s = app.add_subcommand("embed", "Embed every set of a cohort against a prototype bank");
  s->add_option("--cohort", o.cohort, "Input cohort")->required();
  s->add_option("--format", o.format, "auto|binary|csv")
      ->check(CLI::IsMember({"auto", "binary", "csv"}))
      ->capture_default_str();
  s->add_option("--bank", o.bank, "Prototype bank (not needed for deepsets)");
  std::string methods;
  for (auto n : kMethodNames) methods += (methods.empty() ? "" : "|") + std::string(n);
  s->add_option("--method", o.method, methods)->required();
  s->add_option("--em-steps", o.em_steps, "EM iterations for panther_* methods")->capture_default_str();
  s->add_option("--var-floor", o.var_floor, "Variance floor for the M-step")->capture_default_str();
  o.eps_opt = s->add_option("--eps", o.eps, "Absolute Sinkhorn regularisation (default: relative)");
  s->add_option("--eps-relative", o.eps_relative, "Sinkhorn eps as a fraction of the median cost")
      ->capture_default_str();
  s->add_option("--ot-max-iters", o.ot_max_iters, "Sinkhorn iteration cap")->capture_default_str();
  s->add_flag("--require-ot-convergence", o.require_ot_convergence,
              "Treat a Sinkhorn run that hits the cap as a failure");
  s->add_flag("--raw-counts", o.raw_counts, "ProtoCounts without dividing by N");
  s->add_flag("--skip-errors", o.skip_errors, "Skip sets that fail instead of aborting");
  s->add_option("--threads", o.threads, "Worker threads")->capture_default_str();
  s->add_option("-o,--out", o.out, "Output embedding file")->required();
  s->add_option("--csv", o.csv, "Also write the embeddings as CSV");
}

int run_embed(const CLI::App& sub, const EmbedOpts& o) {
  const cli::Stopwatch clock;
  const auto method = method_from_string(o.method);
  if (!method) {
    std::string valid;
    for (auto n : kMethodNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
    throw ValidationError("unknown method '" + o.method + "'; valid methods: " + valid);
  }
  const Cohort cohort = load_cohort(o.cohort, resolve_format(o.format, o.cohort));
  std::optional<PrototypeBank> bank;
  if (!o.bank.empty()) {
    bank = load_bank(o.bank);
  } else if (*method == Method::deepsets) {
    // deepsets ignores the bank; a single placeholder row satisfies the dimension check
    bank = PrototypeBank(FeatureMatrix::Zero(1, cohort.dim()));
  } else {
    throw ValidationError("--bank is required for method " + o.method);
  }
  MethodConfig cfg;
  cfg.em.num_steps = o.em_steps;
  cfg.em.var_floor = o.var_floor;
  if (o.eps_opt->count() > 0) cfg.sinkhorn.eps = o.eps;
  cfg.sinkhorn.eps_relative = o.eps_relative;
  cfg.sinkhorn.max_iters = o.ot_max_iters;
  cfg.require_ot_convergence = o.require_ot_convergence;
  cfg.protocounts_normalize = !o.raw_counts;
  cfg.skip_errors = o.skip_errors;
  cfg.threads = std::max(1u, o.threads);
  const CohortEmbedding result = embed_cohort(cohort, *bank, *method, cfg);
  if (result.embeddings.empty()) throw NumericalError("every set failed; nothing written");
  save_embeddings(result.embeddings, o.out);

  auto m = start_manifest(sub, 0);
  m.inputs = {o.cohort};
  if (!o.bank.empty()) m.inputs.push_back(o.bank);
  m.outputs = {o.out};

  std::vector<std::string> ids;
  std::vector<Target> targets;
  bool have_targets = true;
  for (const auto& e : result.embeddings) {
    const auto* set = cohort.find(e.set_id);
    if (!set || !set->target()) {
      have_targets = false;
      break;
    }
    ids.push_back(e.set_id);
    targets.push_back(*set->target());
  }
  if (have_targets) {
    const auto path = cli::sibling(o.out, ".targets.csv");
    detail::write_file_text(path, cli::targets_csv(ids, targets));
    m.outputs.push_back(path.string());
  }
  if (!o.csv.empty()) {
    detail::write_file_text(o.csv, embeddings_to_csv(result.embeddings));
    m.outputs.push_back(o.csv);
  }
  m.wall_time_seconds = clock.seconds();
  m.write(cli::sibling(o.out, ".manifest.json"));

  const auto& e0 = result.embeddings.front();
  std::cout << "embedded " << result.embeddings.size() << " sets with " << o.method << " (length "
            << e0.values.size() << ") -> " << o.out << "\n";
  for (const auto& id : result.skipped) std::cerr << "skipped set '" << id << "'\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ProbeOpts {
  std::string train_emb;
  std::string train_targets;
  std::string val_emb;
  std::string val_targets;
  std::string head = "linear";
  bool structured = false;
  Index indiv_out_dim = 8;
  Index hidden_dim = 32;
  std::string loss = "ce";
  int epochs = 0;
  Index batch_size = 0;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  std::string schedule = "cosine";
  int patience = 10;
  std::uint64_t seed = 0;
  std::string out;
  std::string log;
};

void add_probe(CLI::App& app, ProbeOpts& o) {
  auto* s = app.add_subcommand("probe", "Train a predictor head on set embeddings");
  s->add_option("--train-emb", o.train_emb, "Training embeddings")->required();
  s->add_option("--targets", o.train_targets, "Training targets CSV (default: <train-emb>.targets.csv)");
  s->add_option("--val-emb", o.val_emb, "Validation embeddings (enables early stopping)");
  s->add_option("--val-targets", o.val_targets, "Validation targets CSV (default: <val-emb>.targets.csv)");
  s->add_option("--head", o.head, "linear|mlp")->check(CLI::IsMember({"linear", "mlp"}))->capture_default_str();
  s->add_flag("--structured", o.structured, "Apply a separate map to each prototype block first");
  s->add_option("--indiv-out-dim", o.indiv_out_dim, "Output width of each per-block map")->capture_default_str();
  s->add_option("--hidden-dim", o.hidden_dim, "Hidden units of MLP maps")->capture_default_str();
  s->add_option("--loss", o.loss, "ce|cox")->check(CLI::IsMember({"ce", "cox"}))->capture_default_str();
  s->add_option("--epochs", o.epochs, "Epochs (default 20 for ce, 50 for cox)");
  s->add_option("--batch-size", o.batch_size, "Batch size (default 32 for ce, 64 for cox)");
  s->add_option("--lr", o.lr, "Learning rate")->capture_default_str();
  s->add_option("--weight-decay", o.weight_decay, "Decoupled weight decay")->capture_default_str();
  s->add_option("--schedule", o.schedule, "cosine|constant")
      ->check(CLI::IsMember({"cosine", "constant"}))
      ->capture_default_str();
  s->add_option("--patience", o.patience, "Stop after this many epochs without a lower validation loss (0 = off)")
      ->capture_default_str();
  s->add_option("--seed", o.seed, "Seed for initialisation and shuffling")->capture_default_str();
  s->add_option("-o,--out", o.out, "Output head file")->required();
  s->add_option("--log", o.log, "Training log CSV (default: <out>.log.csv)");
}

struct Labeled {
  std::vector<SetEmbedding> embs;
  std::vector<Target> targets;
};

Labeled load_labeled(const std::string& emb_path, const std::string& targets_path) {
  Labeled l;
  l.embs = load_embeddings(emb_path);
  const fs::path tpath = targets_path.empty() ? cli::sibling(emb_path, ".targets.csv") : fs::path(targets_path);
  l.targets = cli::align_targets(l.embs, cli::read_targets_csv(tpath), tpath.string());
  return l;
}

void check_target_kind(const std::vector<Target>& targets, LossKind loss, const std::string& what) {
  for (const auto& t : targets) {
    if (loss == LossKind::cross_entropy && !t.class_label)
      throw ValidationError(what + ": target kind mismatch: --loss ce needs class labels but targets are survival");
    if (loss == LossKind::cox && (!t.time || !t.event))
      throw ValidationError(what + ": target kind mismatch: --loss cox needs survival targets but targets are class labels");
  }
}

// Training-set metric for the log: balanced accuracy (ce) or c-index (cox); NaN if undefined.
double probe_metric(const PredictorHead& head, const Labeled& data, LossKind loss) {
  if (loss == LossKind::cross_entropy) {
    std::vector<int> preds, labels;
    for (std::size_t i = 0; i < data.embs.size(); ++i) {
      preds.push_back(predict_class(head, data.embs[i]));
      labels.push_back(static_cast<int>(*data.targets[i].class_label));
    }
    return balanced_accuracy(preds, labels, static_cast<int>(head.spec().out_dim));
  }
  std::vector<double> risks, times;
  std::vector<bool> events;
  for (std::size_t i = 0; i < data.embs.size(); ++i) {
    risks.push_back(head.forward(data.embs[i])(0));
    times.push_back(*data.targets[i].time);
    events.push_back(*data.targets[i].event);
  }
  try {
    return concordance_index(risks, times, events).value;
  } catch (const ValidationError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

double probe_loss(const PredictorHead& head, const Labeled& data, LossKind loss) {
  try {
    return batch_loss_and_grad(head, make_batch(data.embs, data.targets), loss, false).loss;
  } catch (const ValidationError&) {
    return std::numeric_limits<double>::quiet_NaN();  // e.g. no events for cox
  }
}

int run_probe(const CLI::App& sub, const ProbeOpts& o) {
  const cli::Stopwatch clock;
  const LossKind loss = o.loss == "cox" ? LossKind::cox : LossKind::cross_entropy;
  const Labeled train_set = load_labeled(o.train_emb, o.train_targets);
  check_target_kind(train_set.targets, loss, o.train_emb);
  std::optional<Labeled> val_set;
  if (!o.val_emb.empty()) {
    val_set = load_labeled(o.val_emb, o.val_targets);
    check_target_kind(val_set->targets, loss, o.val_emb);
  }

  const MapKind kind = o.head == "mlp" ? MapKind::mlp : MapKind::linear;
  HeadSpec spec;
  spec.indiv_kind = o.structured ? kind : MapKind::identity;
  spec.pred_kind = o.structured ? MapKind::linear : kind;
  spec.indiv_out_dim = o.indiv_out_dim;
  spec.hidden_dim = o.hidden_dim;
  if (loss == LossKind::cross_entropy) {
    std::uint32_t max_label = 1;
    for (const auto& t : train_set.targets) max_label = std::max(max_label, *t.class_label);
    if (val_set)
      for (const auto& t : val_set->targets) max_label = std::max(max_label, *t.class_label);
    spec.out_dim = max_label + 1;
  } else {
    spec.out_dim = 1;
  }

  TrainConfig cfg;
  cfg.loss = loss;
  cfg.lr = o.lr;
  cfg.weight_decay = o.weight_decay;
  cfg.epochs = o.epochs > 0 ? o.epochs : (loss == LossKind::cox ? 50 : 20);
  cfg.batch_size = o.batch_size > 0 ? o.batch_size : (loss == LossKind::cox ? 64 : 32);
  cfg.lr_schedule = o.schedule == "constant" ? LrSchedule::constant : LrSchedule::cosine;
  cfg.seed = o.seed;

  const auto& e0 = train_set.embs.front();
  Trainer trainer(PredictorHead(spec, e0.variant, e0.C, e0.d, o.seed), train_set.embs, train_set.targets, cfg);
  if (val_set)
    for (const auto& e : val_set->embs) trainer.head().check_input(e);

  const std::string metric = loss == LossKind::cox ? "c_index" : "balanced_accuracy";
  std::ostringstream log;
  log << "epoch,train_loss,train_" << metric << ",val_loss,val_" << metric << "\n";
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  int epochs_run = 0;
  for (int ep = 0; ep < cfg.epochs; ++ep) {
    const double train_loss = trainer.run_epoch();
    ++epochs_run;
    const double train_metric = probe_metric(trainer.head(), train_set, loss);
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double val_metric = std::numeric_limits<double>::quiet_NaN();
    if (val_set) {
      val_loss = probe_loss(trainer.head(), *val_set, loss);
      val_metric = probe_metric(trainer.head(), *val_set, loss);
    }
    log << ep << ',' << g9(train_loss) << ',' << g9(train_metric) << ',' << g9(val_loss) << ','
        << g9(val_metric) << '\n';
    if (val_set && o.patience > 0 && std::isfinite(val_loss)) {
      if (val_loss < best_val) {
        best_val = val_loss;
        since_best = 0;
      } else if (++since_best >= o.patience) {
        break;
      }
    }
  }

  save_head(trainer.head(), o.out);
  const fs::path log_path = o.log.empty() ? cli::sibling(o.out, ".log.csv") : fs::path(o.log);
  detail::write_file_text(log_path, log.str());

  auto m = start_manifest(sub, o.seed);
  m.inputs = {o.train_emb};
  if (val_set) m.inputs.push_back(o.val_emb);
  m.outputs = {o.out, log_path.string()};
  m.wall_time_seconds = clock.seconds();
  m.write(cli::sibling(o.out, ".manifest.json"));

  std::cout << "trained " << to_string(spec.indiv_kind) << "/" << to_string(spec.pred_kind) << " head ("
            << trainer.head().num_params() << " parameters) for " << epochs_run << " epochs; final train loss "
            << g9(trainer.last_loss()) << ", train " << metric << " "
            << g9(probe_metric(trainer.head(), train_set, loss)) << " -> " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateOpts {
  std::string emb;
  std::string targets;
  std::string head;
  std::string metrics = "auto";
  std::string out;
  std::string csv;
};

void add_evaluate(CLI::App& app, EvaluateOpts& o) {
  auto* s = app.add_subcommand("evaluate", "Score a trained head on embeddings");
  s->add_option("--emb", o.emb, "Embeddings to score")->required();
  s->add_option("--targets", o.targets, "Targets CSV (default: <emb>.targets.csv)");
  s->add_option("--head", o.head, "Trained head file")->required();
  s->add_option("--metrics", o.metrics, "auto|classification|survival")
      ->check(CLI::IsMember({"auto", "classification", "survival"}))
      ->capture_default_str();
  s->add_option("-o,--out", o.out, "Report JSON path")->required();
  s->add_option("--csv", o.csv, "Also write a one-row CSV summary");
}

int run_evaluate(const CLI::App& sub, const EvaluateOpts& o) {
  const cli::Stopwatch clock;
  const Labeled data = load_labeled(o.emb, o.targets);
  const PredictorHead head = load_head(o.head);
  for (const auto& e : data.embs) head.check_input(e);

  bool survival = o.metrics == "survival";
  if (o.metrics == "auto") survival = head.spec().out_dim == 1 && data.targets.front().time.has_value();
  EvalReport report;
  if (survival) {
    check_target_kind(data.targets, LossKind::cox, o.emb);
    std::vector<double> risks, times;
    std::vector<bool> events;
    for (std::size_t i = 0; i < data.embs.size(); ++i) {
      risks.push_back(head.forward(data.embs[i])(0));
      times.push_back(*data.targets[i].time);
      events.push_back(*data.targets[i].event);
    }
    report = survival_report(risks, times, events);
  } else {
    check_target_kind(data.targets, LossKind::cross_entropy, o.emb);
    const int K = static_cast<int>(head.spec().out_dim);
    std::vector<int> preds, labels;
    for (std::size_t i = 0; i < data.embs.size(); ++i) {
      preds.push_back(predict_class(head, data.embs[i]));
      const int y = static_cast<int>(*data.targets[i].class_label);
      if (y >= K)
        throw ValidationError("set '" + data.embs[i].set_id + "' has label " + std::to_string(y) +
                              " but the head predicts " + std::to_string(K) + " classes");
      labels.push_back(y);
    }
    report = classification_report(preds, labels, K);
  }
  cli::write_atomically(o.out, report.to_json().dump(2) + "\n");
  auto m = start_manifest(sub, 0);
  m.inputs = {o.emb, o.head};
  m.outputs = {o.out};
  if (!o.csv.empty()) {
    detail::write_file_text(o.csv, report.to_csv());
    m.outputs.push_back(o.csv);
  }
  m.wall_time_seconds = clock.seconds();
  m.write(cli::sibling(o.out, ".manifest.json"));

  std::cout << "evaluated " << data.embs.size() << " sets\n";
  for (const auto& [k, v] : report.metrics) std::cout << "  " << k << " = " << g9(v) << "\n";
  if (report.n_comparable_pairs) std::cout << "  comparable pairs = " << *report.n_comparable_pairs << "\n";
  for (const auto& f : report.flags) std::cout << "  flag: " << f << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct InterpretOpts {
  std::string cohort;
  std::string format = "auto";
  std::string bank;
  std::vector<std::string> set_ids;
  std::vector<Index> heatmaps;
  int em_steps = 1;
  double var_floor = 1e-4;
  unsigned threads = default_threads();
  std::string out_dir;
};

void add_interpret(CLI::App& app, InterpretOpts& o) {
  auto* s = app.add_subcommand("interpret", "Prototype assignment maps, posterior rasters and mixture-weight table");
  s->add_option("--cohort", o.cohort, "Input cohort")->required();
  s->add_option("--format", o.format, "auto|binary|csv")
      ->check(CLI::IsMember({"auto", "binary", "csv"}))
      ->capture_default_str();
  s->add_option("--bank", o.bank, "Prototype bank")->required();
  s->add_option("--set-id", o.set_ids, "Sets to export (repeatable; default all)");
  s->add_option("--heatmap", o.heatmaps, "Prototype index whose posterior raster to export (repeatable)");
  s->add_option("--em-steps", o.em_steps, "EM iterations")->capture_default_str();
  s->add_option("--var-floor", o.var_floor, "Variance floor for the M-step")->capture_default_str();
  s->add_option("--threads", o.threads, "Worker threads")->capture_default_str();
  s->add_option("--out-dir", o.out_dir, "Output directory")->required();
}

int run_interpret(const CLI::App& sub, const InterpretOpts& o) {
  const cli::Stopwatch clock;
  const Cohort cohort = load_cohort(o.cohort, resolve_format(o.format, o.cohort));
  const PrototypeBank bank = load_bank(o.bank);
  if (cohort.dim() != bank.dim())
    throw ValidationError("cohort d=" + std::to_string(cohort.dim()) + " but bank d=" + std::to_string(bank.dim()));
  for (Index c : o.heatmaps)
    if (c < 0 || c >= bank.size())
      throw ValidationError("--heatmap " + std::to_string(c) + " out of range for C=" + std::to_string(bank.size()));

  std::vector<const EmbeddingSet*> chosen;
  if (o.set_ids.empty()) {
    for (const auto& s : cohort.sets()) chosen.push_back(&s);
  } else {
    for (const auto& id : o.set_ids) {
      const auto* s = cohort.find(id);
      if (!s) throw ValidationError("--set-id '" + id + "' not found in cohort");
      chosen.push_back(s);
    }
  }
  EmConfig em;
  em.num_steps = o.em_steps;
  em.var_floor = o.var_floor;
  em.validate();

  std::vector<AssignmentMap> maps(chosen.size());
  std::vector<std::string> errors(chosen.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < chosen.size(); i += stride) {
      try {
        const auto& s = *chosen[i];
        const SetFit fit = fit_set(s.features(), bank, em);
        maps[i] = assignment_map(s.features(), fit.posteriors, fit.params, s.coords(), s.id());
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(o.threads, static_cast<unsigned>(chosen.size())));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  for (std::size_t i = 0; i < chosen.size(); ++i)
    if (!errors[i].empty()) throw SetFailure(chosen[i]->id(), errors[i]);

  const fs::path dir = o.out_dir;
  fs::create_directories(dir);
  auto m = start_manifest(sub, 0);
  m.inputs = {o.cohort, o.bank};
  auto emit = [&](const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    detail::write_file_bytes(p, bytes);
    m.outputs.push_back(p.string());
  };
  const auto hi = static_cast<float>(bank.size() - 1);
  std::size_t rasters = 0;
  for (const auto& map : maps) {
    const std::string stem = cli::file_stem(map.set_id);
    const fs::path csv = dir / (stem + ".assign.csv");
    detail::write_file_text(csv, assignment_csv(map));
    m.outputs.push_back(csv.string());
    if (!map.coords) continue;
    const Raster r = assignment_raster(map);
    emit(dir / (stem + ".assign.pgm"), encode_pgm(r, -1.0f, hi));
    emit(dir / (stem + ".assign.f32"), encode_raw_f32(r));
    for (Index c : o.heatmaps) {
      const Raster q = posterior_raster(map, c);
      emit(dir / (stem + ".q" + std::to_string(c) + ".pgm"), encode_pgm(q, 0.0f, 1.0f));
      emit(dir / (stem + ".q" + std::to_string(c) + ".f32"), encode_raw_f32(q));
    }
    ++rasters;
  }
  std::optional<std::vector<std::int64_t>> labels = std::vector<std::int64_t>{};
  for (const auto* s : chosen) {
    if (!s->target() || !s->target()->class_label) {
      labels.reset();
      break;
    }
    labels->push_back(*s->target()->class_label);
  }
  const fs::path table = dir / "pi_table.csv";
  detail::write_file_text(table, cohort_pi_table(maps, labels).to_csv());
  m.outputs.push_back(table.string());
  m.wall_time_seconds = clock.seconds();
  m.write(dir / "manifest.json");

  std::cout << "interpreted " << maps.size() << " sets (" << rasters << " with rasters) -> " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-based set aggregation: cohorts, prototype banks, set embeddings, probes."};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kVersion));
  app.set_config("--config", "", "TOML or JSON file of option values; command-line flags win");

  GenerateOpts gen;
  FitOpts fit;
  EmbedOpts emb;
  ProbeOpts probe;
  EvaluateOpts eval;
  InterpretOpts interp;
  add_generate(app, gen);
  add_fit(app, fit);
  add_embed(app, emb);
  add_probe(app, probe);
  add_evaluate(app, eval);
  add_interpret(app, interp);

  std::string active;
  for (int i = 1; i < argc && active.empty(); ++i)
    for (const CLI::App* sub : app.get_subcommands({}))
      if (sub->get_name() == argv[i]) active = argv[i];
  app.config_formatter(std::make_shared<cli::SubcommandConfig>(active));

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    app.exit(e);
    return 1;
  }

  try {
    const CLI::App* sub = app.get_subcommands().front();
    const std::string& name = sub->get_name();
    if (name == "generate") return run_generate(*sub, gen);
    if (name == "fit-prototypes") return run_fit(*sub, fit);
    if (name == "embed") return run_embed(*sub, emb);
    if (name == "probe") return run_probe(*sub, probe);
    if (name == "evaluate") return run_evaluate(*sub, eval);
    if (name == "interpret") return run_interpret(*sub, interp);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
