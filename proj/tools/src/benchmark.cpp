#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include <nlohmann/json.hpp>

#include "command_support.hpp"
#include "lmattack/cli/commands.hpp"
#include "lmattack/rng.hpp"

namespace lmattack::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* variant_name(bool adaptive) { return adaptive ? "ATI-FGSM" : "TI-FGSM"; }

struct RunPlan {
  bool adaptive = true;
  double epsilon = 0.0;
  bool curve = false;  // dense trace for the convergence curves
};

struct Snapshot {
  int iteration = 0;
  AttackErrors errors;
};

struct RunRecord {
  std::vector<Snapshot> snapshots;  // every traced iteration, ascending
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double max_weight_mean_deviation = 0.0;
  std::size_t violations = 0;
  bool aborted = false;
};

struct AttemptRecord {
  std::size_t sample = 0;
  int attempt = 0;
  TargetSpec spec;
  std::vector<double> clean_errors;  // detection error of every landmark (mm)
  std::vector<RunRecord> runs;       // parallel to the run plan
};

std::vector<RunPlan> plan_runs(const BenchmarkOptions& b) {
  const double eps_max = *std::max_element(b.epsilon_grid.begin(), b.epsilon_grid.end());
  std::vector<RunPlan> plan;
  for (double eps : b.epsilon_grid) plan.push_back({b.adaptive, eps, b.compare_variants && eps == eps_max});
  if (b.compare_variants) plan.push_back({!b.adaptive, eps_max, true});
  return plan;
}

const Snapshot& snapshot_at(const RunRecord& run, int iteration) {
  for (const Snapshot& s : run.snapshots) {
    if (s.iteration == iteration) return s;
  }
  throw RuntimeFailure("no trace point at iteration " + std::to_string(iteration));
}

void validate_options(const BenchmarkOptions& b) {
  if (b.images <= 0 || b.attempts <= 0) throw InvalidInput("benchmark needs at least one image and one attempt");
  if (b.iteration_grid.empty() || b.epsilon_grid.empty()) throw InvalidInput("benchmark grids must not be empty");
  for (int it : b.iteration_grid) {
    if (it < 0) throw InvalidInput("iteration grid entries must be >= 0");
  }
  for (double eps : b.epsilon_grid) {
    if (!(eps >= 0.0)) throw InvalidInput("epsilon grid entries must be >= 0");
  }
  if (b.curve_every <= 0) throw InvalidInput("curve spacing must be positive");
  if (b.threads < 0) throw InvalidInput("thread count must be >= 0");
}

}  // namespace

BenchmarkOutcome cmd_benchmark(const RunConfig& config, std::ostream& log) {
  const BenchmarkOptions& opts = config.benchmark;
  validate_options(opts);
  const DetectorModel model = load_model(config);
  const PreparedData data = prepare_data(config);
  if (data.eval.empty()) throw InvalidInput("split '" + config.dataset.eval_split + "' is empty");
  check_model_matches(model, data.eval.front());
  const std::size_t n_images = std::min<std::size_t>(opts.images, data.eval.size());
  const int landmarks = model.arch().landmarks;
  const int max_iterations = *std::max_element(opts.iteration_grid.begin(), opts.iteration_grid.end());
  const std::vector<RunPlan> plan = plan_runs(opts);
  const double spacing = config.dataset.spacing_mm;

  BenchmarkOutcome out;
  out.run_dir = prepare_run_dir(config, log);

  std::vector<AttemptRecord> attempts(n_images * opts.attempts);
  for (std::size_t i = 0; i < n_images; ++i) {
    for (int a = 0; a < opts.attempts; ++a) {
      AttemptRecord& rec = attempts[i * opts.attempts + a];
      rec.sample = i;
      rec.attempt = a;
    }
  }

  std::atomic<std::size_t> next{0};
  std::atomic<int> done{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t t = next++; t < attempts.size(); t = next++) {
      AttemptRecord& rec = attempts[t];
      const PreprocessedSample& sample = data.eval[rec.sample];
      const LandmarkSet clean = predict_landmarks(model, sample.image);
      rec.clean_errors = radial_error(clean, sample.landmarks, spacing, sample.scale);
      // Each attempt owns its stream, so results do not depend on scheduling.
      auto rng = make_stream(config.seed, "targets/" + sample.image_id + "/" + std::to_string(rec.attempt));
      rec.spec = random_target_spec(rng, landmarks, TargetRect::scaled_to(sample.image.width, sample.image.height), clean);
      rec.spec.image_id = sample.image_id;
      for (const RunPlan& p : plan) {
        AttackConfig attack = config.attack;
        attack.alpha = model.train_config().alpha;
        attack.adaptive = p.adaptive;
        attack.epsilon = p.epsilon;
        attack.iterations = max_iterations;
        attack.trace_every = p.curve ? opts.curve_every : 0;
        attack.trace_at = opts.iteration_grid;
        const AttackResult r = run_attack(model, sample.image, rec.spec, attack, model.codec());
        RunRecord run;
        run.initial_loss = r.initial_loss;
        run.final_loss = r.final_loss;
        run.aborted = r.aborted.has_value();
        for (double m : r.weight_means) run.max_weight_mean_deviation = std::max(run.max_weight_mean_deviation, std::abs(m - 1.0));
        const ConstraintCheck check = check_constraints(r.adversarial, sample.image, attack.epsilon_normalized());
        run.violations = check.budget_violations + check.range_violations;
        for (const TracePoint& tp : r.trace) {
          run.snapshots.push_back({tp.iteration, attack_errors(tp.prediction, rec.spec, sample, spacing)});
        }
        rec.runs.push_back(std::move(run));
      }
      const int finished = ++done;
      std::lock_guard lock(log_mutex);
      log << "  attempt " << finished << '/' << attempts.size() << " (" << sample.image_id << ", "
          << rec.spec.targeted.size() << " targeted)\n";
    }
  };
  const int threads = opts.threads > 0 ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  log << "benchmark: " << attempts.size() << " attempts x " << plan.size() << " runs, " << threads << " thread(s)\n";
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }

  // Aggregation walks attempts in index order, independent of scheduling.
  out.attempts = static_cast<int>(attempts.size());
  std::vector<double> clean_all;
  for (const AttemptRecord& rec : attempts) {
    clean_all.insert(clean_all.end(), rec.clean_errors.begin(), rec.clean_errors.end());
    for (const RunRecord& run : rec.runs) {
      ++out.runs;
      out.constraint_violations += run.violations;
      if (run.final_loss < run.initial_loss) ++out.loss_decreased;
      if (run.aborted) ++out.aborted;
      out.max_weight_mean_deviation = std::max(out.max_weight_mean_deviation, run.max_weight_mean_deviation);
    }
  }
  out.clean = aggregate(clean_all);

  for (std::size_t p = 0; p < plan.size(); ++p) {
    for (int iteration : opts.iteration_grid) {
      std::vector<double> targeted, stationary;
      for (const AttemptRecord& rec : attempts) {
        const Snapshot& s = snapshot_at(rec.runs[p], iteration);
        targeted.insert(targeted.end(), s.errors.targeted.begin(), s.errors.targeted.end());
        stationary.insert(stationary.end(), s.errors.stationary.begin(), s.errors.stationary.end());
      }
      GridPoint g;
      g.adaptive = plan[p].adaptive;
      g.epsilon = plan[p].epsilon;
      g.iterations = iteration;
      g.targeted = aggregate(targeted);
      if (!stationary.empty()) g.stationary = aggregate(stationary);
      out.grid.push_back(g);
    }
  }

  std::map<int, std::array<double, 2>> curve_sum;
  std::map<int, std::array<std::size_t, 2>> curve_count;
  for (std::size_t p = 0; p < plan.size(); ++p) {
    if (!plan[p].curve) continue;
    const int slot = plan[p].adaptive ? 0 : 1;
    for (const AttemptRecord& rec : attempts) {
      for (const Snapshot& s : rec.runs[p].snapshots) {
        curve_sum[s.iteration][slot] += std::accumulate(s.errors.targeted.begin(), s.errors.targeted.end(), 0.0);
        curve_count[s.iteration][slot] += s.errors.targeted.size();
      }
    }
  }
  for (const auto& [iteration, sums] : curve_sum) {
    const auto& counts = curve_count[iteration];
    if (counts[0] == 0 || counts[1] == 0) continue;
    out.curves.push_back({iteration, sums[0] / counts[0], sums[1] / counts[1]});
  }

  // Outputs ---------------------------------------------------------------------------
  json grid = json::array();
  std::ofstream csv(out.run_dir / "sweep.csv");
  if (!csv) throw RuntimeFailure("cannot write sweep.csv");
  csv << "method,epsilon,iterations,cohort,count,mre_mm,medre_mm";
  for (double r : kSdrRadiiMm) csv << ",sdr_" << radius_key(r);
  csv << '\n';
  auto csv_row = [&](const GridPoint& g, const char* cohort, const Aggregate& a) {
    csv << variant_name(g.adaptive) << ',' << g.epsilon << ',' << g.iterations << ',' << cohort << ',' << a.count << ','
        << a.mre << ',' << a.medre;
    for (double s : a.sdr) csv << ',' << s;
    csv << '\n';
  };
  for (const GridPoint& g : out.grid) {
    json row{{"method", variant_name(g.adaptive)},
             {"epsilon", g.epsilon},
             {"iterations", g.iterations},
             {"targeted", aggregate_json(g.targeted)},
             {"stationary", g.stationary ? aggregate_json(*g.stationary) : json(nullptr)}};
    grid.push_back(row);
    csv_row(g, "targeted", g.targeted);
    if (g.stationary) csv_row(g, "stationary", *g.stationary);
  }
  json curves = json::array();
  for (const CurvePoint& c : out.curves) {
    curves.push_back({{"iteration", c.iteration}, {"ati_mean_mm", c.ati_mean}, {"ti_mean_mm", c.ti_mean}});
  }
  write_json(json{{"attempts", out.attempts},
                  {"landmarks", landmarks},
                  {"clean", aggregate_json(out.clean)},
                  {"grid", grid},
                  {"curves", curves},
                  {"runs", out.runs},
                  {"loss_decreased", out.loss_decreased},
                  {"aborted", out.aborted},
                  {"constraint_violations", out.constraint_violations},
                  {"max_weight_mean_deviation", out.max_weight_mean_deviation}},
             out.run_dir / "sweep.json");

  if (!out.curves.empty()) {
    PlotSeries ati{"ATI-FGSM", {0, 160, 0}, {}, {}};
    PlotSeries ti{"TI-FGSM", {0, 0, 220}, {}, {}};
    for (const CurvePoint& c : out.curves) {
      ati.x.push_back(c.iteration);
      ati.y.push_back(c.ati_mean);
      ti.x.push_back(c.iteration);
      ti.y.push_back(c.ti_mean);
    }
    write_line_plot({ati, ti}, "Targeted MRE vs iteration", "iteration", "MRE (mm)", out.run_dir / "ati_vs_ti.png");
  }

  // Reference cell (primary variant, largest epsilon, most iterations) for the
  // isolation analysis, plus the ground truth of every attacked image.
  const double eps_max = *std::max_element(opts.epsilon_grid.begin(), opts.epsilon_grid.end());
  std::size_t ref = 0;
  while (!(plan[ref].adaptive == opts.adaptive && plan[ref].epsilon == eps_max)) ++ref;
  EvalReport report;
  report.meta = {eps_max, max_iterations, opts.adaptive, config.seed, "benchmark reference"};
  json truth = json::array();
  for (std::size_t i = 0; i < n_images; ++i) {
    const PreprocessedSample& s = data.eval[i];
    const int w = static_cast<int>(std::lround(s.image.width * s.scale.sx));
    const int h = static_cast<int>(std::lround(s.image.height * s.scale.sy));
    truth.push_back({{"image_id", s.image_id}, {"landmarks", points_json(to_original_frame(s.landmarks, s.scale, w, h))}});
  }
  for (const AttemptRecord& rec : attempts) {
    const Snapshot& s = snapshot_at(rec.runs[ref], max_iterations);
    for (std::size_t j = 0; j < rec.spec.targeted.size(); ++j) {
      report.rows.push_back({rec.spec.image_id, rec.attempt, rec.spec.targeted[j].index + 1, Cohort::kTargeted,
                             s.errors.targeted[j]});
    }
    for (std::size_t j = 0; j < rec.spec.stationary.size(); ++j) {
      report.rows.push_back({rec.spec.image_id, rec.attempt, rec.spec.stationary[j] + 1, Cohort::kStationary,
                             s.errors.stationary[j]});
    }
  }
  report.write_csv(out.run_dir / "reference_errors.csv");
  report.write_summary_json(out.run_dir / "reference_summary.json");
  write_json(json{{"spacing_mm", spacing}, {"landmarks", landmarks}, {"images", truth}}, out.run_dir / "ground_truth.json");

  for (const GridPoint& g : out.grid) {
    log << "  " << variant_name(g.adaptive) << " eps " << g.epsilon << " it " << g.iterations << ": targeted MRE "
        << g.targeted.mre << " MedRE " << g.targeted.medre;
    if (g.stationary) log << " | stationary MedRE " << g.stationary->medre;
    log << '\n';
  }
  if (out.constraint_violations != 0) {
    throw RuntimeFailure(std::to_string(out.constraint_violations) + " constraint violations in the sweep");
  }
  return out;
}

IsolationOutcome cmd_isolation(const RunConfig& config, std::ostream& log) {
  if (config.benchmark_dir.empty()) throw InvalidInput("isolation needs --benchmark-dir");
  const fs::path src = config.benchmark_dir;
  const json truth = read_json(src / "ground_truth.json");
  const double spacing = truth.at("spacing_mm").get<double>();
  const int k = truth.at("landmarks").get<int>();

  std::vector<LandmarkSet> sets;
  for (const json& img : truth.at("images")) {
    LandmarkSet set = points_from_json(img.at("landmarks"), Frame::kOriginal, 0, 0);
    for (Point& p : set.points) p = {p.x * spacing, p.y * spacing};  // mm
    sets.push_back(std::move(set));
  }
  const std::vector<double> isolation = isolation_degree(sets);

  // Per-landmark attack MRE from the reference cell of the benchmark.
  std::vector<double> sum(k, 0.0);
  std::vector<int> count(k, 0);
  std::ifstream csv(src / "reference_errors.csv");
  if (!csv) throw InvalidInput("missing " + (src / "reference_errors.csv").string());
  std::string line;
  std::getline(csv, line);  // header
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() < 5) throw InvalidInput("malformed row in reference_errors.csv: " + line);
    const int landmark = std::stoi(cells[2]);
    const bool targeted = cells[3] == to_string(Cohort::kTargeted);
    if (landmark < 1 || landmark > k) throw InvalidInput("landmark out of range in reference_errors.csv");
    if (targeted || config.isolation_all_attempts) {
      sum[landmark - 1] += std::stod(cells[4]);
      count[landmark - 1] += 1;
    }
  }

  std::vector<double> iso_used, mre_used;
  IsolationOutcome out;
  for (int i = 0; i < k; ++i) {
    const double mre = count[i] > 0 ? sum[i] / count[i] : std::nan("");
    out.analysis.rows.push_back({i + 1, isolation[i], mre});
    if (count[i] > 0) {
      iso_used.push_back(isolation[i]);
      mre_used.push_back(mre);
    }
  }
  out.analysis.pearson = pearson(iso_used, mre_used);
  out.run_dir = prepare_run_dir(config, log);

  json rows = json::array();
  std::ofstream table(out.run_dir / "isolation.csv");
  if (!table) throw RuntimeFailure("cannot write isolation.csv");
  table << "landmark,isolation_mm,mre_mm\n";
  for (const IsolationRow& r : out.analysis.rows) {
    const bool has = !std::isnan(r.mre);
    rows.push_back({{"landmark", r.landmark}, {"isolation_mm", r.isolation}, {"mre_mm", has ? json(r.mre) : json(nullptr)}});
    table << r.landmark << ',' << r.isolation << ',';
    if (has) table << r.mre;
    table << '\n';
  }
  write_json(json{{"pearson", out.analysis.pearson ? json(*out.analysis.pearson) : json(nullptr)},
                  {"pearson_defined", out.analysis.pearson.has_value()},
                  {"mre_over", config.isolation_all_attempts ? "all attempts" : "targeted attempts"},
                  {"rows", rows}},
             out.run_dir / "isolation.json");

  std::vector<std::size_t> order(iso_used.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return iso_used[a] < iso_used[b]; });
  PlotSeries series{"landmarks", {200, 0, 0}, {}, {}};
  for (std::size_t i : order) {
    series.x.push_back(iso_used[i]);
    series.y.push_back(mre_used[i]);
  }
  if (!series.x.empty()) {
    write_line_plot({series}, "MRE vs degree of isolation", "isolation (mm)", "MRE (mm)", out.run_dir / "isolation.png");
  }
  if (out.analysis.pearson) {
    log << "isolation-MRE Pearson r = " << *out.analysis.pearson << '\n';
  } else {
    log << "isolation-MRE correlation undefined (zero variance)\n";
  }
  return out;
}

}  // namespace lmattack::cli
