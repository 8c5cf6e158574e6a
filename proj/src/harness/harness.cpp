#include "kdd/harness/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "kdd/error.hpp"
#include "kdd/numerics/matrix_io.hpp"
#include "kdd/parallel.hpp"

namespace kdd {

namespace {

std::size_t worker_count(const ExperimentConfig& config) {
  return config.threads ? config.threads : default_thread_count();
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) fields.push_back(f);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string run_stem(const RunRecord& r) {
  std::string name;
  for (char c : r.method) name += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return name + "_n" + std::to_string(r.input_size) + "_seed" + std::to_string(r.seed);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  RngStream s = RngStream(seed).split(stream).split(index);
  return s.next_u64();
}

World build_world_data(const ExperimentConfig& config, std::uint64_t seed) {
  World w;
  w.seed = seed;
  const RngStream root(seed);
  RngStream data_rng = root.split(0);
  const Dataset full = make_gaussian_mixture(config.dataset.classes, config.dataset.points_per_class,
                                             config.dataset.input_dim, config.dataset.spread, data_rng);
  RngStream split_rng = root.split(1);
  std::tie(w.train, w.holdout) = split_dataset(full, config.dataset.holdout_fraction, split_rng);
  return w;
}

namespace {

// Data and teachers of a world; no students yet.
World world_teachers(const ExperimentConfig& config, std::uint64_t seed, std::size_t threads) {
  World w = build_world_data(config, seed);

  const std::size_t num_teachers = config.teachers.size();
  w.teachers.resize(num_teachers);
  parallel_for(
      num_teachers,
      [&](std::size_t t) {
        TrainConfig tc = config.teacher_training;
        tc.seed = derive_seed(seed, 2, t);
        w.teachers[t] = train_classifier(config.architecture(config.teachers[t].architecture), w.train, tc);
      },
      threads);
  for (std::size_t t = 0; t < num_teachers; ++t)
    w.candidates.candidates.push_back({config.teachers[t].id, as_query(w.teachers[t])});
  return w;
}

void distill_grid(const ExperimentConfig& config, World& w, std::optional<double> lambda, std::size_t threads) {
  const std::size_t num_teachers = w.teachers.size();
  const std::size_t grid = config.student_architectures.size() * num_teachers;
  std::vector<ClassifierModel> students(grid);
  parallel_for(
      grid,
      [&](std::size_t i) {
        DistillConfig dc = config.distill;
        if (lambda) dc.lambda = *lambda;
        dc.train.seed = derive_seed(w.seed, 3, i);
        const std::string& arch = config.student_architectures[i / num_teachers];
        students[i] = distill_student(w.teachers[i % num_teachers], config.architecture(arch), w.train, dc);
      },
      threads);
  w.students.clear();
  w.student_architectures.clear();
  for (std::size_t i = 0; i < grid; ++i) {
    const std::string& arch = config.student_architectures[i / num_teachers];
    const std::size_t t = i % num_teachers;
    w.students.push_back({arch + "/" + config.teachers[t].id, std::make_shared<const ClassifierModel>(students[i]), t});
    w.student_architectures.push_back(arch);
  }
}

}  // namespace

World build_world(const ExperimentConfig& config, std::uint64_t seed, std::optional<double> lambda,
                  std::size_t threads) {
  config.validate();
  World w = world_teachers(config, seed, threads);
  distill_grid(config, w, lambda, threads);
  return w;
}

DetectSettings method_settings(const ExperimentConfig& config, const MethodSpec& method, std::size_t n,
                               const World& world) {
  DetectSettings s;
  s.source = method.source;
  s.n = n;
  s.filter = method.filter;
  s.ood_keep = config.ood_keep;
  s.mia = config.mia;
  s.synthesis = config.synthesis;
  s.latent_dim = config.generator.latent_dim;
  s.embed_dim = config.generator.embed_dim;
  s.generator_hidden = config.generator.hidden;
  s.score = config.score;
  s.oracle_data = &world.train;
  // Shared by every method so one generator per student serves them all.
  s.seed = derive_seed(world.seed, 4, 0);
  if (method.score == "mmd_fuse") {
    s.kind = ScoreKind::custom;
    s.custom = mmd_fuse_score(config.mmd);
    s.custom_name = "mmd_fuse";
  } else {
    s.kind = score_kind_from_string(method.score);
  }
  return s;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) throw InvalidInput("mean_std: no values");
  const double mean = mean_of(values);
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::vector<ReportRow> aggregate(const std::vector<RunRecord>& runs) {
  std::vector<std::pair<std::string, std::size_t>> order;
  std::map<std::pair<std::string, std::size_t>, std::vector<const RunRecord*>> groups;
  for (const RunRecord& r : runs) {
    if (!r.report.accuracy) continue;
    const auto key = std::make_pair(r.method, r.input_size);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  std::vector<ReportRow> rows;
  for (const auto& key : order) {
    std::vector<double> acc, auc;
    for (const RunRecord* r : groups[key]) {
      acc.push_back(*r->report.accuracy);
      if (r->report.auc) auc.push_back(*r->report.auc);
    }
    ReportRow row;
    row.method = key.first;
    row.input_size = key.second;
    std::tie(row.accuracy_mean, row.accuracy_std) = mean_std(acc);
    if (auc.size() == acc.size()) {
      const auto [m, s] = mean_std(auc);
      row.auc_mean = m;
      row.auc_std = s;
    }
    row.seeds = acc.size();
    rows.push_back(row);
  }
  return rows;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "method,input_size,accuracy_mean,accuracy_std,auc_mean,auc_std,seeds\n";
  for (const ReportRow& r : rows) {
    out += r.method + "," + std::to_string(r.input_size) + "," + format_double(r.accuracy_mean) + "," +
           format_double(r.accuracy_std) + "," + (r.auc_mean ? format_double(*r.auc_mean) : "") + "," +
           (r.auc_std ? format_double(*r.auc_std) : "") + "," + std::to_string(r.seeds) + "\n";
  }
  return out;
}

std::vector<ReportRow> report_rows_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "method,input_size,accuracy_mean,accuracy_std,auc_mean,auc_std,seeds")
    throw FormatError(0, "report: missing header");
  std::size_t offset = line.size() + 1;
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    const std::vector<std::string> f = split_line(line);
    if (f.size() != 7) throw FormatError(offset, "report: expected 7 fields");
    try {
      ReportRow r;
      r.method = f[0];
      r.input_size = std::stoull(f[1]);
      r.accuracy_mean = parse_double(f[2]);
      r.accuracy_std = parse_double(f[3]);
      if (!f[4].empty()) r.auc_mean = parse_double(f[4]);
      if (!f[5].empty()) r.auc_std = parse_double(f[5]);
      r.seeds = std::stoull(f[6]);
      rows.push_back(r);
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception&) {
      throw FormatError(offset, "report: bad field value");
    }
    offset += line.size() + 1;
  }
  return rows;
}

BinaryMetrics binary_metrics(const std::vector<PairwiseRecord>& records) {
  if (records.empty()) throw InvalidInput("binary_metrics: no records");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::vector<double> pos, neg;
  for (const PairwiseRecord& r : records) {
    if (r.positive) {
      (r.result.decision ? tp : fn) += 1;
      pos.push_back(r.result.p_value);
    } else {
      (r.result.decision ? fp : tn) += 1;
      neg.push_back(r.result.p_value);
    }
  }
  BinaryMetrics m;
  m.pairs = records.size();
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(records.size());
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  if (!pos.empty() && !neg.empty()) {
    // A smaller p-value ranks a pair as more likely distilled.
    double wins = 0.0;
    for (double p : pos)
      for (double q : neg) wins += p < q ? 1.0 : (p == q ? 0.5 : 0.0);
    m.auc = wins / static_cast<double>(pos.size() * neg.size());
  }
  return m;
}

std::string pairwise_csv(const std::vector<PairwiseRecord>& records) {
  std::string out = "seed,student,candidate,positive,statistic,p_value,decision\n";
  for (const PairwiseRecord& r : records)
    out += std::to_string(r.seed) + "," + r.student + "," + r.candidate + "," + (r.positive ? "1" : "0") + "," +
           format_double(r.result.statistic) + "," + format_double(r.result.p_value) + "," +
           (r.result.decision ? "1" : "0") + "\n";
  return out;
}

std::vector<PairwiseRecord> run_pairwise(const ExperimentConfig& config, const World& world, GeneratorCache* cache) {
  MethodSpec probe_method;
  probe_method.source = config.pairwise.source;
  DetectSettings settings = method_settings(config, probe_method, config.pairwise.n, world);
  const PairwiseConfig pc{config.pairwise.alpha, config.pairwise.permutations};
  const RngStream root(derive_seed(world.seed, 5, 0));
  std::vector<std::vector<PairwiseRecord>> per_student(world.students.size());
  parallel_for(
      world.students.size(),
      [&](std::size_t i) {
        const StudentEntry& s = world.students[i];
        RngStream rng = root.split(i);
        const InputSet probe = build_probe_set(*s.model, s.id, settings, rng, cache);
        for (std::size_t c = 0; c < world.candidates.size(); ++c) {
          RngStream test_rng = rng.split(c);
          const Candidate& cand = world.candidates.candidates[c];
          per_student[i].push_back(
              {world.seed, s.id, cand.id, s.truth == c, pairwise_detect(*s.model, *cand.model, probe, pc, test_rng)});
        }
      },
      worker_count(config));
  std::vector<PairwiseRecord> out;
  for (auto& v : per_student) out.insert(out.end(), v.begin(), v.end());
  return out;
}

BenchResult run_bench(const ExperimentConfig& config) {
  config.validate();
  const std::size_t threads = worker_count(config);
  BenchResult result;
  for (std::uint64_t seed : config.seeds) {
    spdlog::info("seed {}: training teachers and distilling students", seed);
    const World world = build_world(config, seed, {}, threads);
    GeneratorCache cache;
    for (const MethodSpec& method : config.methods) {
      for (std::size_t n : config.input_sizes) {
        DetectSettings settings = method_settings(config, method, n, world);
        settings.threads = threads;
        try {
          DetectionReport report = run_matrix(world.students, world.candidates, settings, &cache);
          report.method = method.name;
          spdlog::info("seed {} {} n={}: accuracy {:.3f}", seed, method.name, n, report.accuracy.value_or(0.0));
          result.runs.push_back({method.name, n, seed, std::move(report)});
        } catch (const Error& e) {
          result.errors.push_back(method.name + " n=" + std::to_string(n) + " seed=" + std::to_string(seed) + ": " +
                                  e.what());
          spdlog::error("{}", result.errors.back());
        }
      }
    }
    if (config.pairwise.enabled) {
      try {
        const std::vector<PairwiseRecord> recs = run_pairwise(config, world, &cache);
        result.pairwise.insert(result.pairwise.end(), recs.begin(), recs.end());
      } catch (const Error& e) {
        result.errors.push_back("pairwise seed=" + std::to_string(seed) + ": " + e.what());
        spdlog::error("{}", result.errors.back());
      }
    }
  }
  result.rows = aggregate(result.runs);
  if (!result.pairwise.empty()) result.pairwise_metrics = binary_metrics(result.pairwise);
  return result;
}

void write_bench(const std::filesystem::path& dir, const BenchResult& result) {
  write_file(dir / "report.csv", report_csv(result.rows));
  for (const RunRecord& r : result.runs) write_report(dir / "runs", run_stem(r), r.report);
  if (!result.pairwise.empty()) {
    write_file(dir / "pairwise.csv", pairwise_csv(result.pairwise));
    const BinaryMetrics& m = *result.pairwise_metrics;
    const nlohmann::json j = {{"pairs", m.pairs},     {"accuracy", m.accuracy}, {"precision", m.precision},
                              {"recall", m.recall},   {"f1", m.f1},             {"auc", m.auc}};
    write_file(dir / "pairwise.json", j.dump(2) + "\n");
  }
  if (!result.errors.empty()) write_file(dir / "errors.json", nlohmann::json(result.errors).dump(2) + "\n");
}

SweepResult run_lambda_sweep(const ExperimentConfig& config) {
  config.validate();
  if (config.lambda_grid.empty()) throw ConfigError("lambda_grid", "at least one value required");
  const std::size_t threads = worker_count(config);
  const std::size_t n = *std::max_element(config.input_sizes.begin(), config.input_sizes.end());
  MethodSpec probe_method;
  SweepResult result;
  for (std::uint64_t seed : config.seeds) {
    // Independent models share the students' architectures and training
    // recipe but never see a teacher.
    const World base = world_teachers(config, seed, threads);
    std::vector<ClassifierModel> independent(config.student_architectures.size());
    parallel_for(
        independent.size(),
        [&](std::size_t a) {
          TrainConfig tc = config.distill.train;
          tc.seed = derive_seed(seed, 6, a);
          independent[a] = train_classifier(config.architecture(config.student_architectures[a]), base.train, tc);
        },
        threads);
    for (double lambda : config.lambda_grid) {
      spdlog::info("seed {} lambda {}", seed, lambda);
      World w = base;
      distill_grid(config, w, lambda, threads);
      const DetectSettings settings = method_settings(config, probe_method, n, w);
      const RngStream root(derive_seed(seed, 7, 0));
      std::vector<SweepRun> runs(w.students.size());
      parallel_for(
          w.students.size(),
          [&](std::size_t i) {
            const StudentEntry& s = w.students[i];
            RngStream rng = root.split(i);
            const Matrix probe_inputs = config.sweep_inputs == "holdout"
                                            ? w.holdout.features
                                            : build_probe_set(*s.model, s.id, settings, rng).inputs;
            const InputSet probe{probe_inputs, {}, InputSource::oracle, std::nullopt};
            const Matrix so = evaluate(*s.model, probe.inputs);
            const Matrix to = w.candidates.candidates[*s.truth].model->query(probe.inputs);
            const Matrix io = evaluate(independent[i / w.candidates.size()], probe.inputs);
            SweepRun& r = runs[i];
            r.lambda = lambda;
            r.seed = seed;
            r.student = s.id;
            r.kl_teacher = mean_of(point_distances(so, to, PointDelta::kl));
            r.kl_independent = mean_of(point_distances(so, io, PointDelta::kl));
            r.acs_teacher = acs(so, to);
            r.acs_independent = acs(so, io);
            r.point_teacher = point_score(so, to, config.score.point);
            r.point_independent = point_score(so, io, config.score.point);
          },
          threads);
      result.runs.insert(result.runs.end(), runs.begin(), runs.end());
    }
  }
  for (double lambda : config.lambda_grid) {
    std::vector<double> kt, ki, at, ai;
    for (const SweepRun& r : result.runs) {
      if (r.lambda != lambda) continue;
      kt.push_back(r.kl_teacher);
      ki.push_back(r.kl_independent);
      at.push_back(1.0 - r.acs_teacher);
      ai.push_back(1.0 - r.acs_independent);
    }
    result.points.push_back({lambda, mean_of(kt), mean_of(ki), mean_of(at), mean_of(ai)});
  }
  return result;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::string out = "lambda,kl_teacher,kl_independent,one_minus_acs_teacher,one_minus_acs_independent\n";
  for (const SweepPoint& p : points)
    out += format_double(p.lambda) + "," + format_double(p.kl_teacher) + "," + format_double(p.kl_independent) +
           "," + format_double(p.one_minus_acs_teacher) + "," + format_double(p.one_minus_acs_independent) + "\n";
  return out;
}

std::string sweep_runs_csv(const std::vector<SweepRun>& runs) {
  std::string out =
      "lambda,seed,student,kl_teacher,kl_independent,acs_teacher,acs_independent,point_teacher,point_independent\n";
  for (const SweepRun& r : runs)
    out += format_double(r.lambda) + "," + std::to_string(r.seed) + "," + r.student + "," +
           format_double(r.kl_teacher) + "," + format_double(r.kl_independent) + "," + format_double(r.acs_teacher) +
           "," + format_double(r.acs_independent) + "," + format_double(r.point_teacher) + "," +
           format_double(r.point_independent) + "\n";
  return out;
}

std::string sweep_svg(const std::vector<SweepPoint>& points) {
  constexpr double kPanelW = 300, kPanelH = 200, kLeft = 60, kTop = 40, kGap = 90;
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  double x_lo = 0.0, x_hi = 1.0;
  if (!points.empty()) {
    x_lo = points.front().lambda;
    x_hi = points.back().lambda;
    for (const SweepPoint& p : points) x_lo = std::min(x_lo, p.lambda), x_hi = std::max(x_hi, p.lambda);
  }
  if (x_hi <= x_lo) x_hi = x_lo + 1.0;

  std::ostringstream svg;
  const double width = 2 * kPanelW + kLeft * 2 + kGap;
  const double height = kPanelH + kTop + 70;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  struct Panel {
    const char* title;
    double SweepPoint::*teacher;
    double SweepPoint::*independent;
  };
  const Panel panels[] = {{"KL divergence", &SweepPoint::kl_teacher, &SweepPoint::kl_independent},
                          {"1 - ACS", &SweepPoint::one_minus_acs_teacher, &SweepPoint::one_minus_acs_independent}};
  for (std::size_t k = 0; k < 2; ++k) {
    const Panel& panel = panels[k];
    const double x0 = kLeft + static_cast<double>(k) * (kPanelW + kGap);
    double y_hi = 0.0;
    for (const SweepPoint& p : points) y_hi = std::max({y_hi, p.*panel.teacher, p.*panel.independent});
    y_hi = y_hi > 0.0 ? 1.1 * y_hi : 1.0;
    auto px = [&](double v) { return x0 + (v - x_lo) / (x_hi - x_lo) * kPanelW; };
    auto py = [&](double v) { return kTop + kPanelH - std::max(0.0, v) / y_hi * kPanelH; };

    svg << "<text x=\"" << num(x0 + kPanelW / 2) << "\" y=\"" << num(kTop - 15) << "\" text-anchor=\"middle\">"
        << panel.title << "</text>\n";
    svg << "<line x1=\"" << num(x0) << "\" y1=\"" << num(kTop + kPanelH) << "\" x2=\"" << num(x0 + kPanelW)
        << "\" y2=\"" << num(kTop + kPanelH) << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << num(x0) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(x0) << "\" y2=\""
        << num(kTop + kPanelH) << "\" stroke=\"black\"/>\n";
    for (const SweepPoint& p : points)
      svg << "<text x=\"" << num(px(p.lambda)) << "\" y=\"" << num(kTop + kPanelH + 16)
          << "\" text-anchor=\"middle\">" << num(p.lambda) << "</text>\n";
    for (double f : {0.0, 0.5, 1.0})
      svg << "<text x=\"" << num(x0 - 6) << "\" y=\"" << num(py(f * y_hi) + 4) << "\" text-anchor=\"end\">"
          << num(f * y_hi) << "</text>\n";
    svg << "<text x=\"" << num(x0 + kPanelW / 2) << "\" y=\"" << num(kTop + kPanelH + 36)
        << "\" text-anchor=\"middle\">distillation weight lambda</text>\n";

    for (int series = 0; series < 2; ++series) {
      const auto member = series == 0 ? panel.teacher : panel.independent;
      svg << "<polyline fill=\"none\" stroke=\"" << (series == 0 ? "#1f77b4" : "#d62728") << "\" stroke-width=\"2\""
          << (series == 0 ? "" : " stroke-dasharray=\"6 4\"") << " points=\"";
      for (std::size_t i = 0; i < points.size(); ++i)
        svg << (i ? " " : "") << num(px(points[i].lambda)) << "," << num(py(points[i].*member));
      svg << "\"/>\n";
    }
  }
  const double ly = height - 12;
  svg << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(kLeft + 30) << "\" y2=\""
      << num(ly - 4) << "\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n";
  svg << "<text x=\"" << num(kLeft + 36) << "\" y=\"" << num(ly) << "\">student vs teacher</text>\n";
  svg << "<line x1=\"" << num(kLeft + 200) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(kLeft + 230)
      << "\" y2=\"" << num(ly - 4) << "\" stroke=\"#d62728\" stroke-width=\"2\" stroke-dasharray=\"6 4\"/>\n";
  svg << "<text x=\"" << num(kLeft + 236) << "\" y=\"" << num(ly) << "\">student vs independent model</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

void write_sweep(const std::filesystem::path& dir, const SweepResult& result) {
  write_file(dir / "sweep.csv", sweep_csv(result.points));
  write_file(dir / "sweep_runs.csv", sweep_runs_csv(result.runs));
  write_file(dir / "sweep.svg", sweep_svg(result.points));
}

}  // namespace kdd
