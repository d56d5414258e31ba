// pcgrpo: dataset generation, training, evaluation, consistency monitoring,
// benchmark auditing, and metric plotting.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pcgrpo/auditor.hpp"
#include "pcgrpo/checkpoint.hpp"
#include "pcgrpo/dataset.hpp"
#include "pcgrpo/io.hpp"
#include "pcgrpo/parallel.hpp"
#include "pcgrpo/plot.hpp"
#include "pcgrpo/rac.hpp"
#include "pcgrpo/trainer.hpp"

namespace {

using namespace pcgrpo;
namespace fs = std::filesystem;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

/// "jigsaw=15,patchfit=15,rotation=10" in the given order.
std::vector<std::pair<PuzzleKind, std::size_t>> parse_mix(const std::string& text) {
  std::vector<std::pair<PuzzleKind, std::size_t>> out;
  for (const auto& part : split(text, ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ValidationError("--mix entries must look like kind=count");
    const std::string count = part.substr(eq + 1);
    if (count.empty() || count.find_first_not_of("0123456789") != std::string::npos)
      throw ValidationError("--mix count must be a non-negative integer: '" + count + "'");
    out.emplace_back(parse_kind(part.substr(0, eq)), std::stoull(count));
  }
  return out;
}

std::string with_suffix(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  p.replace_extension();
  return p.string() + suffix;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string kind;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string source_dir;
  std::string mix;
  std::optional<int> rows, cols, decoys;
};

int cmd_gen(const GenArgs& a) {
  std::vector<GenRequest> requests;
  if (a.kind == "mix") {
    if (a.mix.empty()) throw ValidationError("--kind mix needs --mix jigsaw=a,patchfit=b,rotation=c");
    if (a.rows || a.cols || a.decoys) throw ValidationError("--rows/--cols/--decoys do not apply to --kind mix");
    for (const auto& [kind, n] : parse_mix(a.mix)) requests.push_back({kind, n, std::nullopt});
  } else {
    if (!a.mix.empty()) throw ValidationError("--mix requires --kind mix");
    const PuzzleKind kind = parse_kind(a.kind);
    GenRequest req{kind, a.count, std::nullopt};
    if (kind == PuzzleKind::Jigsaw && (a.rows || a.cols)) {
      if (!a.rows || !a.cols) throw ValidationError("--rows and --cols go together");
      validate_jigsaw_grid(*a.rows, *a.cols);
      req.fixed = PuzzleParams{kind, *a.rows, *a.cols, 0};
    } else if (kind == PuzzleKind::PatchFit && a.decoys) {
      validate_decoys(*a.decoys);
      req.fixed = PuzzleParams{kind, 0, 0, *a.decoys};
    } else if (a.rows || a.cols || a.decoys) {
      throw ValidationError("--rows/--cols apply to jigsaw and --decoys to patchfit");
    }
    requests.push_back(req);
  }
  const RasterSource source = a.source_dir.empty() ? synthetic_source(a.seed) : directory_source(a.source_dir);
  const auto items = generate_dataset(requests, a.seed, source);
  save_dataset(a.out, items);
  std::cout << "wrote " << items.size() << " instances to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& resume) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(config_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + config_path + ": " + e.what());
  }
  RunConfig cfg = run_config_from_json(j);
  if (!resume.empty()) cfg.resume_from = resume;
  if (cfg.threads == 0) cfg.threads = threads_from_env();
  const auto res = run(cfg);
  std::cout << "steps " << res.state.step;
  if (!res.metrics.empty()) std::cout << " final_reward_mean " << res.metrics.back().reward_mean;
  std::cout << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_eval(const std::string& ckpt, const std::string& dataset, int samples, std::uint64_t seed,
             double temperature, const std::string& out) {
  if (samples < 1) throw ValidationError("--samples must be >= 1");
  if (!(temperature > 0.0)) throw ValidationError("--temperature must be positive");
  const auto policies = checkpoint::load(ckpt);
  const auto data = load_dataset(dataset);
  nlohmann::json report = nlohmann::json::object();
  for (const auto& [kind, e] : evaluate(policies, data, samples, seed, temperature))
    report[kind] = {{"items", e.items}, {"greedy_reward", e.greedy_reward}, {"sampled_reward", e.sampled_reward}};
  const std::string text = report.dump(2) + "\n";
  if (!out.empty()) atomic_write(out, text);
  std::cout << text;
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_rac(const std::string& records_path, const std::string& judge, const std::string& endpoint,
            std::string tmpl, std::size_t window, const std::string& out) {
  if (window < 1) throw ValidationError("--window must be >= 1");
  auto records = rac::records_from_jsonl(read_file(records_path));
  std::stable_sort(records.begin(), records.end(),
                   [](const rac::RolloutRecord& a, const rac::RolloutRecord& b) { return a.step < b.step; });
  std::vector<rac::StepVerdict> verdicts;
  if (judge == "heuristic") {
    for (const auto& r : records) verdicts.push_back({r.step, rac::judge_heuristic(r).consistent});
  } else {
    if (endpoint.empty()) throw ValidationError("--judge external needs --endpoint");
    if (tmpl.empty()) throw ValidationError("--judge external needs --template");
    if (tmpl.front() == '@') tmpl = read_file(tmpl.substr(1));
    if (!records.empty()) {
      rac::JudgeChannel channel(endpoint);
      for (const auto& r : records) verdicts.push_back({r.step, rac::judge_external(r, channel, tmpl).consistent});
    }
  }
  std::string csv = "step,rac\n";
  for (const auto& [step, v] : rac::rac_series(verdicts, window)) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%ld,%.17g\n", step, v);
    csv += buf;
  }
  if (out.empty()) {
    std::cout << csv;
  } else {
    atomic_write(out, csv);
    std::cout << "wrote " << verdicts.size() << " verdicts to " << out << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_audit(const std::string& items_path, const std::string& pool_spec, double lambda, const std::string& out,
              std::string kept_path, std::string removed_path) {
  const auto items = audit::items_from_jsonl(read_file(items_path));
  std::vector<std::string> pool;
  if (pool_spec.empty()) {
    std::set<std::string> names;
    for (const auto& it : items)
      for (const auto& [m, _] : it.model_answers) names.insert(m);
    pool.assign(names.begin(), names.end());
  } else {
    pool = split(pool_spec, ',');
  }
  const auto best = audit::optimize(pool, items, lambda);
  const auto cleaned = audit::clean(items, best.config);
  if (kept_path.empty()) kept_path = with_suffix(out, ".kept.jsonl");
  if (removed_path.empty()) removed_path = with_suffix(out, ".removed.jsonl");
  const std::string report = audit::report_json(best, cleaned.noise_ratio).dump(2) + "\n";
  atomic_write(kept_path, audit::items_to_jsonl(cleaned.kept));
  atomic_write(removed_path, audit::items_to_jsonl(cleaned.removed));
  atomic_write(out, report);
  std::cout << report;
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_plot(const std::string& metrics, std::size_t window, const std::string& out, std::string smoothed) {
  if (window < 1) throw ValidationError("--window must be >= 1");
  const auto table = plot::parse_csv(read_file(metrics));
  const auto sm = plot::smooth(table, window);
  if (smoothed.empty()) smoothed = with_suffix(out, ".csv");
  atomic_write(smoothed, plot::to_csv(sm));
  atomic_write(out, plot::render_svg(sm, fs::path(metrics).filename().string() + " (window " +
                                             std::to_string(window) + ")"));
  std::cout << "wrote " << out << " and " << smoothed << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Puzzle RL training, consistency monitoring and benchmark auditing"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a puzzle dataset (JSON lines)");
  g->add_option("--kind", gen.kind, "jigsaw, rotation, patchfit or mix")
      ->required()
      ->check(CLI::IsMember({"jigsaw", "rotation", "patchfit", "mix"}));
  g->add_option("--count", gen.count, "Number of instances (single kind)");
  g->add_option("--seed", gen.seed, "Generation seed");
  g->add_option("--out", gen.out, "Output file")->required();
  g->add_option("--source-dir", gen.source_dir, "Directory of .ppm source images");
  g->add_option("--mix", gen.mix, "Counts per kind, e.g. jigsaw=15,patchfit=15,rotation=10");
  g->add_option("--rows", gen.rows, "Fixed Jigsaw grid rows");
  g->add_option("--cols", gen.cols, "Fixed Jigsaw grid columns");
  g->add_option("--decoys", gen.decoys, "Fixed PatchFit decoy count (3, 5 or 7)");

  std::string config, resume;
  auto* t = app.add_subcommand("train", "Train policies from a JSON run config");
  t->add_option("--config", config, "Run configuration (JSON)")->required();
  t->add_option("--resume", resume, "Checkpoint to resume from");

  std::string ckpt, dataset, eval_out;
  int samples = 8;
  std::uint64_t eval_seed = 0;
  double eval_temp = 1.0;
  auto* e = app.add_subcommand("eval", "Mean reward per puzzle kind");
  e->add_option("--checkpoint", ckpt, "Policy checkpoint")->required();
  e->add_option("--dataset", dataset, "Dataset (JSON lines)")->required();
  e->add_option("--samples", samples, "Sampled answers per item");
  e->add_option("--seed", eval_seed, "Sampling seed");
  e->add_option("--temperature", eval_temp, "Sampling temperature");
  e->add_option("--out", eval_out, "Also write the report here");

  std::string records, judge = "heuristic", endpoint, tmpl, rac_out;
  std::size_t rac_window = 100;
  auto* r = app.add_subcommand("rac", "Reasoning-answer consistency series");
  r->add_option("--records", records, "Rollout records (JSON lines)")->required();
  r->add_option("--judge", judge, "heuristic or external")->check(CLI::IsMember({"heuristic", "external"}));
  r->add_option("--endpoint", endpoint, "tcp:HOST:PORT or exec:COMMAND");
  r->add_option("--template", tmpl, "Judge prompt with {question} {rationale} {answer}; @file reads a file");
  r->add_option("--window", rac_window, "Moving-average window");
  r->add_option("--out", rac_out, "Output CSV (step,rac)");

  std::string items, pool, audit_out, kept, removed;
  double lambda = audit::kDefaultLambda;
  auto* a = app.add_subcommand("audit", "Select a committee and clean a benchmark");
  a->add_option("--items", items, "Audit items (JSON lines)")->required();
  a->add_option("--pool", pool, "Comma-separated model names (default: all models in the items)");
  a->add_option("--lambda", lambda, "Weight of 1 - FOR in the objective");
  a->add_option("--out", audit_out, "Report (JSON)")->required();
  a->add_option("--kept", kept, "Kept items (default: <out>.kept.jsonl)");
  a->add_option("--removed", removed, "Removed items (default: <out>.removed.jsonl)");

  std::string metrics, plot_out, smoothed;
  std::size_t plot_window = 100;
  auto* p = app.add_subcommand("plot", "Smooth a metrics CSV and draw it as SVG");
  p->add_option("--metrics", metrics, "Metrics CSV")->required();
  p->add_option("--window", plot_window, "Moving-average window");
  p->add_option("--out", plot_out, "Output SVG")->required();
  p->add_option("--smoothed", smoothed, "Smoothed CSV (default: <out>.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);
    std::cerr << "error: " << err.what() << "\n\n";
    const CLI::App* failing = &app;
    for (const auto* sub : app.get_subcommands()) failing = sub;
    std::cerr << failing->help();
    return kExitUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(config, resume);
    if (*e) return cmd_eval(ckpt, dataset, samples, eval_seed, eval_temp, eval_out);
    if (*r) return cmd_rac(records, judge, endpoint, tmpl, rac_window, rac_out);
    if (*a) return cmd_audit(items, pool, lambda, audit_out, kept, removed);
    if (*p) return cmd_plot(metrics, plot_window, plot_out, smoothed);
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const IoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
