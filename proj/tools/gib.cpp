// Command-line front end for the curation pipeline.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gib/baselines.hpp"
#include "gib/bed.hpp"
#include "gib/config.hpp"
#include "gib/csv.hpp"
#include "gib/dataset.hpp"
#include "gib/encoder.hpp"
#include "gib/error.hpp"
#include "gib/pipeline.hpp"
#include "gib/policy.hpp"
#include "gib/scoring.hpp"
#include "gib/segmentation.hpp"
#include "gib/svg.hpp"
#include "gib/synthgym.hpp"

namespace fs = std::filesystem;
using namespace gib;

namespace {

std::string join(const fs::path& dir, const char* name) { return (dir / name).string(); }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

std::vector<long long> parse_list(const std::string& text, const char* what) {
  std::vector<long long> out;
  for (const auto& part : csv::split(text, ',')) {
    try {
      out.push_back(csv::parse_int(part, 0));
    } catch (const Error&) {
      throw ValidationError(std::string("malformed ") + what + " list '" + text + "'");
    }
  }
  if (out.empty()) throw ValidationError(std::string("empty ") + what + " list");
  return out;
}

// Segment count per trajectory unless --k is given.
int infer_k(const std::map<std::string, std::vector<int>>& bounds, int k_flag) {
  if (k_flag > 0) return k_flag;
  int k = 1;
  for (const auto& [id, b] : bounds) k = std::max(k, static_cast<int>(b.size()) + 1);
  return k;
}

int mask_subtask_count(const SubtaskMask& m) {
  int k = 1;
  for (const auto& e : m.entries) k = std::max(k, e.subtask_index + 1);
  return k;
}

std::vector<SubtaskSegmentation> read_segs(const std::string& path, const Dataset& d, int k_flag) {
  return load_segmentations(path, d, infer_k(load_boundaries(path), k_flag));
}

// --- gen --------------------------------------------------------------------

struct GenArgs {
  std::string scenario, errors, out;
  int good = 0, bad = 0;
  std::uint64_t seed = 0;
};

void run_gen(const GenArgs& a) {
  const auto scenario = synth::parse_scenario(a.scenario);
  const auto specs = synth::parse_error_specs(a.errors);
  const auto g = synth::generate_dataset(scenario, a.good, a.bad, specs, a.seed);
  ensure_dir(a.out);
  save_dataset(g.data.data, join(a.out, "dataset.jsonl"));
  csv::write_file(join(a.out, "truth.csv"), synth::serialize_truth_sidecar(g.data));
  std::vector<SubtaskSegmentation> ann;
  const int k = synth::subtask_count(scenario);
  for (std::size_t i = 0; i < g.data.data.size(); ++i) {
    ann.push_back(segment_from_annotation(g.data.data[i], g.data.truth[i]->boundaries, k));
  }
  save_segmentations(ann, join(a.out, "annotations.csv"));
}

// --- train-bed --------------------------------------------------------------

struct TrainBedArgs {
  std::string data, config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> m;
};

void run_train_bed(const TrainBedArgs& a) {
  const Dataset d = load_dataset(a.data);
  BedConfig cfg = a.config.empty() ? BedConfig{} : config::bed_from_json(config::read_json(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.m) cfg.m = *a.m;
  const auto r = train_bed(d, cfg);
  ensure_dir(a.out);
  save_params(r.params, join(a.out, "encoder.bin"));
  save_weights(r.weights, join(a.out, "weights.csv"));
  csv::write_file(join(a.out, "bed_log.csv"), serialize_bed_log(r.log));
}

// --- segment ----------------------------------------------------------------

struct SegmentArgs {
  std::string data, annotations, out;
  int k = 0;
  double height_threshold = 0.3;
};

void run_segment(const SegmentArgs& a) {
  const Dataset d = load_dataset(a.data);
  std::vector<SubtaskSegmentation> segs;
  if (!a.annotations.empty()) {
    segs = load_segmentations(a.annotations, d, a.k);
  } else {
    SegmentationOptions opt;
    opt.height_threshold = a.height_threshold;
    segs = segment_dataset(d, a.k, opt);
  }
  save_segmentations(segs, a.out);
}

// --- score ------------------------------------------------------------------

struct ScoreArgs {
  std::string data, encoder, weights, segs, out;
  int k = 0;
};

void run_score(const ScoreArgs& a) {
  const Dataset d = load_dataset(a.data);
  const auto p = load_params(a.encoder);
  const auto w = load_weights(a.weights);
  const auto segs = read_segs(a.segs, d, a.k);
  const auto r = analyze_subtasks(p, w, d, segs);
  ensure_dir(a.out);
  csv::write_file(join(a.out, "scores.csv"), serialize_scores(r.scores.scores));
  csv::write_file(join(a.out, "traces.csv"), serialize_traces(r.scores.traces));
  csv::write_file(join(a.out, "features.csv"), serialize_features(r.features, absent_layout(segs)));
}

// --- mask -------------------------------------------------------------------

struct MaskArgs {
  std::string scores, method = "gib", out;
  int rho = 0, k_neighbors = 10;
  std::uint64_t seed = 0;
};

void run_mask(const MaskArgs& a) {
  SubtaskMask m;
  if (a.method == "gib") {
    m = build_mask(load_scores(a.scores), a.rho, "gib");
  } else {
    const auto f = load_features(a.scores);
    m = baseline_mask(f.features, f.absent, a.method == "lof" ? BaselineMethod::kLof : BaselineMethod::kKnn,
                      a.k_neighbors, a.rho, a.seed);
  }
  save_mask(m, a.out);
}

// --- train-policy -----------------------------------------------------------

struct TrainPolicyArgs {
  std::string data, mask, segs, config, out;
  int k = 0;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
};

void run_train_policy(const TrainPolicyArgs& a) {
  const Dataset d = load_dataset(a.data);
  PolicyConfig cfg = a.config.empty() ? PolicyConfig{} : config::policy_from_json(config::read_json(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  const auto mask = load_mask(a.mask);
  const auto segs = a.segs.empty() ? segment_dataset(d, a.k > 0 ? a.k : mask_subtask_count(mask)) : read_segs(a.segs, d, a.k);
  const auto r = train_policy(d, segs, mask, cfg);
  ensure_dir(a.out);
  save_params(r.params, join(a.out, "policy.bin"));
  csv::write_file(join(a.out, "policy_log.csv"), serialize_policy_log(r.log));
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string policy, scenario, method, out;
  int rollouts = 50, horizon = 0;
  std::uint64_t seed = 0;
};

void run_eval(const EvalArgs& a) {
  const auto p = load_params(a.policy);
  const auto scenario = synth::parse_scenario(a.scenario);
  if (p.dims().s_dim != synth::kStateDim || p.dims().a_dim != synth::kActionDim) {
    throw ValidationError("policy dimensions do not match the scenario");
  }
  const int horizon = a.horizon > 0 ? a.horizon : synth::default_horizon(scenario);
  const auto r = synth::evaluate_policy(as_policy(p), scenario, a.rollouts, horizon, a.seed);
  if (r.non_finite > 0) {
    std::cerr << "warning: " << r.non_finite << " rollouts produced non-finite actions (counted as failures)\n";
  }
  const std::string method = a.method.empty() ? fs::path(a.policy).parent_path().filename().string() : a.method;
  csv::write_file(a.out, serialize_eval_rows({{method.empty() ? "policy" : method, r.subtask_success, r.full, a.seed}}));
}

// --- plot-trace -------------------------------------------------------------

struct PlotArgs {
  std::string trace, traj, segs, out;
};

void run_plot_trace(const PlotArgs& a) {
  const auto traces = load_traces(a.trace);
  const auto it = std::find_if(traces.begin(), traces.end(), [&](const auto& t) { return t.trajectory_id == a.traj; });
  if (it == traces.end()) throw ValidationError("trajectory '" + a.traj + "' is not in " + a.trace);
  svg::Series s;
  s.label = "Mahalanobis distance";
  for (const auto& r : it->records) {
    s.x.push_back(r.t);
    s.y.push_back(r.distance);
  }
  svg::Plot plot;
  plot.title = "Deviation trace: " + a.traj;
  plot.x_label = "timestep";
  plot.y_label = "distance";
  plot.series.push_back(std::move(s));
  const auto bounds = load_boundaries(a.segs);
  if (const auto b = bounds.find(a.traj); b != bounds.end()) {
    for (int x : b->second) plot.separators.push_back(x - 0.5);
  }
  csv::write_file(a.out, svg::render(plot));
}

// --- sweep-rho --------------------------------------------------------------

struct SweepArgs {
  std::string data, scores, segs, rhos, seeds, scenario = "drawer3", config, bed_config, out;
  int rollouts = 50, k = 0;
};

void run_sweep(const SweepArgs& a) {
  const Dataset d = load_dataset(a.data);
  const auto scenario = synth::parse_scenario(a.scenario);
  const int k = a.k > 0 ? a.k : synth::subtask_count(scenario);
  const auto segs = a.segs.empty() ? segment_dataset(d, k) : read_segs(a.segs, d, a.k);
  std::vector<SubtaskScore> scores;
  if (!a.scores.empty()) {
    scores = load_scores(a.scores);
  } else {
    // No score table given: learn weights and score subtasks here.
    const BedConfig bc = a.bed_config.empty() ? BedConfig{} : config::bed_from_json(config::read_json(a.bed_config));
    const auto bed = train_bed(d, bc);
    scores = analyze_subtasks(bed.params, bed.weights, d, segs).scores.scores;
  }
  PolicyConfig base = a.config.empty() ? PolicyConfig{} : config::policy_from_json(config::read_json(a.config));
  const auto rhos = parse_list(a.rhos, "rho");
  const auto seeds = parse_list(a.seeds, "seed");

  std::string table = "rho,seed,sub1,sub2,sub3,full\n";
  svg::Series mean_line;
  mean_line.label = "mean full-task success";
  for (auto rho : rhos) {
    const auto mask = build_mask(scores, static_cast<int>(rho), "gib");
    double total = 0.0;
    for (auto seed : seeds) {
      PolicyConfig cfg = base;
      cfg.seed = static_cast<std::uint64_t>(seed);
      const auto r = train_and_evaluate(d, segs, mask, cfg, scenario, a.rollouts, static_cast<std::uint64_t>(seed));
      table += std::to_string(rho) + ',' + std::to_string(seed);
      for (std::size_t j = 0; j < 3; ++j) {
        table += ',';
        if (j < r.subtask_success.size()) table += csv::format_real(r.subtask_success[j]);
      }
      table += ',' + csv::format_real(r.full) + '\n';
      total += r.full;
    }
    mean_line.x.push_back(static_cast<double>(rho));
    mean_line.y.push_back(total / static_cast<double>(seeds.size()));
  }
  csv::write_file(a.out, table);
  svg::Plot plot;
  plot.title = "Success vs rho";
  plot.x_label = "rho (pruned subtasks)";
  plot.y_label = "full-task success";
  plot.series.push_back(std::move(mean_line));
  csv::write_file(fs::path(a.out).replace_extension(".svg").string(), svg::render(plot));
}

// --- report -----------------------------------------------------------------

struct ReportArgs {
  std::string dir, out;
};

std::string fmt3(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3f", v);
  return b;
}

void run_report(const ReportArgs& a) {
  const fs::path dir(a.dir);
  if (!fs::is_directory(dir)) throw ValidationError("'" + a.dir + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  const auto truth_it = std::find_if(files.begin(), files.end(), [](const fs::path& f) { return f.filename() == "truth.csv"; });
  if (truth_it == files.end()) throw ValidationError("report needs a truth.csv under " + a.dir);
  const fs::path truth_path = *truth_it;
  const auto truth = synth::load_truth_sidecar(truth_path.string());
  std::map<std::string, const synth::TruthRow*> by_id;
  std::map<std::string, std::vector<int>> bad;
  for (const auto& t : truth) {
    by_id[t.trajectory_id] = &t;
    if (!t.bad_subtasks.empty()) bad[t.trajectory_id] = t.bad_subtasks;
  }

  std::ostringstream md;
  md << "# Curation report\n\n";
  md << "Trajectories: " << truth.size() << ", corrupted: " << bad.size() << "\n\n";

  md << "## Trajectory weights\n\n| file | accuracy | precision (bad) | recall (bad) |\n|---|---|---|---|\n";
  for (const auto& f : files) {
    if (f.filename() != "weights.csv") continue;
    const auto w = load_weights(f.string());
    int correct = 0, tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < w.ids.size(); ++i) {
      const auto it = by_id.find(w.ids[i]);
      if (it == by_id.end()) throw ValidationError("weights refer to unknown trajectory '" + w.ids[i] + "'");
      const bool truly_bad = !it->second->good, flagged = w.binary[i] == 0;
      correct += truly_bad == flagged;
      tp += truly_bad && flagged;
      fp += !truly_bad && flagged;
      fn += truly_bad && !flagged;
    }
    md << "| " << fs::relative(f, dir).string() << " | " << fmt3(correct / static_cast<double>(w.ids.size()))
       << " | " << fmt3(tp + fp ? tp / static_cast<double>(tp + fp) : 1.0) << " | "
       << fmt3(tp + fn ? tp / static_cast<double>(tp + fn) : 1.0) << " |\n";
  }

  md << "\n## Subtask masks\n\n| file | method | rho | precision | recall |\n|---|---|---|---|---|\n";
  for (const auto& f : files) {
    const auto t = csv::read_table(f.string());
    if (std::find(t.header.begin(), t.header.end(), "beta") == t.header.end()) continue;
    const auto m = load_mask(f.string());
    const auto det = detection_against_truth(m, bad);
    md << "| " << fs::relative(f, dir).string() << " | " << (m.method.empty() ? "-" : m.method) << " | " << m.rho
       << " | " << fmt3(det.precision()) << " | " << fmt3(det.recall()) << " |\n";
  }

  md << "\n## Policy success\n\n| file | method | seed | sub1 | sub2 | sub3 | full |\n|---|---|---|---|---|---|---|\n";
  for (const auto& f : files) {
    const auto t = csv::read_table(f.string());
    if (t.header.empty() || t.header[0] != "method") continue;
    for (const auto& r : load_eval_rows(f.string())) {
      md << "| " << fs::relative(f, dir).string() << " | " << r.method << " | " << r.seed;
      for (std::size_t j = 0; j < 3; ++j) md << " | " << (j < r.subtask_success.size() ? fmt3(r.subtask_success[j]) : "-");
      md << " | " << fmt3(r.full) << " |\n";
    }
  }
  csv::write_file(a.out, md.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gib: demonstration curation with learned trajectory weights and subtask masking"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen", "generate a synthetic demonstration dataset");
  c_gen->add_option("--scenario", gen.scenario, "drawer3 | twostep | multimodal2")->required();
  c_gen->add_option("--good", gen.good, "number of good demonstrations")->required();
  c_gen->add_option("--bad", gen.bad, "number of corrupted demonstrations");
  c_gen->add_option("--errors", gen.errors, "kind[:magnitude[:fraction]],...");
  c_gen->add_option("--seed", gen.seed);
  c_gen->add_option("--out", gen.out, "output directory")->required();

  TrainBedArgs tb;
  auto* c_tb = app.add_subcommand("train-bed", "learn trajectory weights and the latent encoder");
  c_tb->add_option("--data", tb.data)->required();
  c_tb->add_option("--config", tb.config, "JSON config");
  c_tb->add_option("--out", tb.out, "output directory")->required();
  c_tb->add_option("--seed", tb.seed);
  c_tb->add_option("--epochs", tb.epochs);
  c_tb->add_option("--m", tb.m, "expected fraction of good demonstrations");

  SegmentArgs sg;
  auto* c_sg = app.add_subcommand("segment", "split trajectories into subtasks");
  c_sg->add_option("--data", sg.data)->required();
  c_sg->add_option("--k", sg.k, "expected subtask count")->required();
  c_sg->add_option("--annotations", sg.annotations, "boundary CSV to use instead of the heuristic");
  c_sg->add_option("--height-threshold", sg.height_threshold);
  c_sg->add_option("--out", sg.out)->required();

  ScoreArgs sc;
  auto* c_sc = app.add_subcommand("score", "score subtasks by latent Mahalanobis distance");
  c_sc->add_option("--data", sc.data)->required();
  c_sc->add_option("--encoder", sc.encoder)->required();
  c_sc->add_option("--weights", sc.weights)->required();
  c_sc->add_option("--segs", sc.segs)->required();
  c_sc->add_option("--k", sc.k, "expected subtask count (default: inferred from --segs)");
  c_sc->add_option("--out", sc.out, "output directory")->required();

  MaskArgs mk;
  auto* c_mk = app.add_subcommand("mask", "prune the rho most anomalous subtasks");
  c_mk->add_option("--scores", mk.scores, "scores.csv (gib) or features.csv (lof, knn)")->required();
  c_mk->add_option("--rho", mk.rho)->required();
  c_mk->add_option("--method", mk.method)->check(CLI::IsMember({"gib", "lof", "knn"}));
  c_mk->add_option("--k-neighbors", mk.k_neighbors);
  c_mk->add_option("--seed", mk.seed);
  c_mk->add_option("--out", mk.out)->required();

  TrainPolicyArgs tp;
  auto* c_tp = app.add_subcommand("train-policy", "weighted behaviour cloning on masked data");
  c_tp->add_option("--data", tp.data)->required();
  c_tp->add_option("--mask", tp.mask)->required();
  c_tp->add_option("--segs", tp.segs, "boundaries CSV (default: heuristic segmentation)");
  c_tp->add_option("--k", tp.k);
  c_tp->add_option("--config", tp.config, "JSON config");
  c_tp->add_option("--seed", tp.seed);
  c_tp->add_option("--epochs", tp.epochs);
  c_tp->add_option("--out", tp.out, "output directory")->required();

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "roll out a policy in a scenario");
  c_ev->add_option("--policy", ev.policy)->required();
  c_ev->add_option("--scenario", ev.scenario)->required();
  c_ev->add_option("--rollouts", ev.rollouts);
  c_ev->add_option("--horizon", ev.horizon);
  c_ev->add_option("--seed", ev.seed);
  c_ev->add_option("--method", ev.method, "label for the report row");
  c_ev->add_option("--out", ev.out)->required();

  PlotArgs pl;
  auto* c_pl = app.add_subcommand("plot-trace", "plot a deviation trace as SVG");
  c_pl->add_option("--trace", pl.trace)->required();
  c_pl->add_option("--traj", pl.traj)->required();
  c_pl->add_option("--segs", pl.segs)->required();
  c_pl->add_option("--out", pl.out)->required();

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep-rho", "policy success as a function of rho");
  c_sw->add_option("--data", sw.data)->required();
  c_sw->add_option("--scores", sw.scores, "scores.csv (default: run weight learning and scoring)");
  c_sw->add_option("--segs", sw.segs, "boundaries CSV (default: heuristic segmentation)");
  c_sw->add_option("--bed-config", sw.bed_config, "JSON config for the internal weight learning");
  c_sw->add_option("--k", sw.k);
  c_sw->add_option("--rhos", sw.rhos)->required();
  c_sw->add_option("--seeds", sw.seeds)->required();
  c_sw->add_option("--scenario", sw.scenario);
  c_sw->add_option("--config", sw.config, "policy JSON config");
  c_sw->add_option("--rollouts", sw.rollouts);
  c_sw->add_option("--out", sw.out)->required();

  ReportArgs rp;
  auto* c_rp = app.add_subcommand("report", "markdown summary against the truth sidecar");
  c_rp->add_option("--dir", rp.dir)->required();
  c_rp->add_option("--out", rp.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (*c_gen) run_gen(gen);
    else if (*c_tb) run_train_bed(tb);
    else if (*c_sg) run_segment(sg);
    else if (*c_sc) run_score(sc);
    else if (*c_mk) run_mask(mk);
    else if (*c_tp) run_train_policy(tp);
    else if (*c_ev) run_eval(ev);
    else if (*c_pl) run_plot_trace(pl);
    else if (*c_sw) run_sweep(sw);
    else if (*c_rp) run_report(rp);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kFailure);
  }
  return 0;
}
