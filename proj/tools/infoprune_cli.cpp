// Command-line front end: inspect | score | plan | apply | report | verify |
// diagnose, plus `synth` to generate synthetic archives.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "infoprune/infoprune.hpp"

namespace ip = infoprune;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitValidation = 2;
constexpr int kExitVerification = 3;

ip::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ip::Error(ip::ErrorKind::io, "missing file: " + path);
  try {
    return ip::json::parse(in);
  } catch (const ip::json::parse_error& e) {
    ip::fail(path + ": parse error: " + e.what());
  }
}

void emit_json(const ip::json& j, const std::string& out) {
  const auto text = j.dump(2) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  ip::detail::write_file(out, text);
}

std::optional<std::int64_t> parse_m_nearest(const std::string& s) {
  if (s == "exact") return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoll(s, &used);
    ip::require(used == s.size() && v >= 1, "");
    return v;
  } catch (...) {
    ip::fail("--m-nearest must be a positive integer or 'exact', got '" + s + "'");
  }
}

std::vector<ip::Activation> random_inputs(const ip::Shape& shape, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<ip::Activation> xs;
  for (int i = 0; i < count; ++i) {
    ip::Activation a(shape);
    for (auto& v : a.values) v = normal(rng);
    xs.push_back(std::move(a));
  }
  return xs;
}

struct Options {
  std::string archive;
  std::string out;
  std::string rates_file;
  std::optional<double> rate;
  double sigma = 0.8;
  std::string m_nearest = "exact";
  std::string metric = "euclidean";
  std::string strategy = "least";
  std::uint64_t seed = 0;
  std::vector<std::string> protect;
  std::string plan;
  std::string pruned;
  unsigned workers = 1;
  int inputs = 10;
  double tolerance = 1e-4;
  std::string layer;
  int samples = 8;
  double alpha = 2.0;
  std::string model = "toy";
};

ip::ScoringConfig scoring_config(const Options& o) {
  ip::ScoringConfig c;
  c.sigma = o.sigma;
  c.m_nearest = parse_m_nearest(o.m_nearest);
  c.metric = ip::parse_distance_metric(o.metric);
  c.validate();
  return c;
}

int cmd_inspect(const Options& o) {
  const auto a = ip::load_archive(o.archive);
  const auto g = ip::analyze(a.manifest);
  std::map<std::string, std::size_t> group_of;
  for (std::size_t k = 0; k < a.manifest.coupling_groups.size(); ++k)
    for (const auto& id : a.manifest.coupling_groups[k].layer_ids) group_of[id] = k;
  std::printf("archive      %s\n", o.archive.c_str());
  std::printf("fingerprint  %s\n", ip::archive_fingerprint(a.manifest, a.tensors).c_str());
  std::printf("input        %s\n", ip::shape_str(a.manifest.input_shape).c_str());
  std::printf("layers       %zu (%zu coupling groups)\n\n", a.manifest.layers.size(),
              a.manifest.coupling_groups.size());
  std::printf("%-24s %-12s %-16s %-9s %s\n", "id", "kind", "output", "prunable", "group");
  std::size_t prunable = 0;
  for (auto i : g.order) {
    const auto& l = a.manifest.layers[i];
    prunable += l.prunable;
    auto it = group_of.find(l.id);
    std::printf("%-24s %-12s %-16s %-9s %s\n", l.id.c_str(), ip::to_string(l.kind),
                ip::shape_str(g.out_shapes[i]).c_str(), l.prunable ? "yes" : "no",
                it == group_of.end() ? "-" : std::to_string(it->second).c_str());
  }
  const auto costs = ip::count_costs(a.manifest);
  std::printf("\nprunable layers %zu, params %lld, FLOPs %lld\n", prunable,
              static_cast<long long>(costs.params), static_cast<long long>(costs.flops));
  return 0;
}

int cmd_score(const Options& o) {
  const auto a = ip::load_archive(o.archive);
  const auto table = ip::score_model(a.manifest, a.tensors, scoring_config(o), o.workers);
  auto j = ip::to_json(table);
  j["provenance"] = {{"archive_fingerprint", ip::archive_fingerprint(a.manifest, a.tensors)},
                     {"config", ip::to_json(table.config)}};
  emit_json(j, o.out);
  return 0;
}

ip::PruningPlan make_plan(const Options& o, const ip::Archive& a) {
  ip::PruningRates rates;
  if (!o.rates_file.empty()) rates = ip::rates_from_json(read_json(o.rates_file));
  if (o.rate) rates.global = *o.rate;
  if (!o.protect.empty()) rates.protected_layers = std::set<std::string>(o.protect.begin(), o.protect.end());
  const auto table = ip::score_model(a.manifest, a.tensors, scoring_config(o), o.workers);
  ip::PlanOptions opts{ip::parse_strategy(o.strategy), o.seed, ip::archive_fingerprint(a.manifest, a.tensors)};
  return ip::build_plan(a.manifest, table, rates, opts);
}

int cmd_plan(const Options& o) {
  const auto a = ip::load_archive(o.archive);
  emit_json(ip::to_json(make_plan(o, a)), o.out);
  return 0;
}

int cmd_apply(const Options& o) {
  ip::require(!o.out.empty(), "apply: --out <directory> is required");
  const auto a = ip::load_archive(o.archive);
  const auto plan = ip::plan_from_json(read_json(o.plan));
  const auto pruned = ip::apply_plan(a.manifest, a.tensors, plan, o.workers);
  ip::save_pruned(pruned, o.out);
  const auto before = ip::count_costs(a.manifest), after = ip::count_costs(pruned.manifest);
  std::printf("wrote %s: params %lld -> %lld, FLOPs %lld -> %lld\n", o.out.c_str(),
              static_cast<long long>(before.params), static_cast<long long>(after.params),
              static_cast<long long>(before.flops), static_cast<long long>(after.flops));
  return 0;
}

int cmd_report(const Options& o) {
  const auto a = ip::load_archive(o.archive);
  std::optional<ip::PruningPlan> plan;
  const auto fingerprint = ip::archive_fingerprint(a.manifest, a.tensors);
  if (!o.plan.empty()) {
    plan = ip::plan_from_json(read_json(o.plan));
    ip::require(plan->source_fingerprint == fingerprint,
                "plan/archive mismatch: plan was built for archive " + plan->source_fingerprint);
  }
  const auto report = ip::evaluate_plan_costs(a.manifest, plan ? &*plan : nullptr);
  std::cout << ip::format_cost_table(report);
  if (!o.out.empty()) {
    auto j = ip::to_json(report);
    j["provenance"] = {{"archive_fingerprint", fingerprint}};
    if (plan) {
      j["provenance"]["plan_hash"] = ip::plan_hash(*plan);
      j["provenance"]["config"] = ip::to_json(*plan)["config"];
    }
    emit_json(j, o.out);
  }
  return 0;
}

int cmd_verify(const Options& o) {
  const auto a = ip::load_archive(o.archive);
  const auto plan = ip::plan_from_json(read_json(o.plan));
  ip::PrunedModel pruned;
  if (o.pruned.empty()) {
    pruned = ip::apply_plan(a.manifest, a.tensors, plan, o.workers);
  } else {
    const auto p = ip::load_archive(o.pruned);
    pruned.manifest = p.manifest;
    pruned.tensors = p.tensors;
    const auto prov = ip::fs::path(o.pruned) / "provenance.json";
    if (ip::fs::exists(prov))
      ip::require(read_json(prov.string()).value("plan_hash", "") == ip::plan_hash(plan),
                  "plan/archive mismatch: pruned archive was produced by a different plan");
    ip::require(pruned.manifest == ip::planned_manifest(a.manifest, plan),
                "plan/archive mismatch: pruned archive shapes do not follow the plan");
  }
  const auto xs = random_inputs(a.manifest.input_shape, o.inputs, o.seed);
  const double dev =
      ip::masked_equivalence_deviation(a.manifest, a.tensors, plan, pruned.manifest, pruned.tensors, xs);
  const bool ok = dev <= o.tolerance;
  std::printf("max |delta| = %.3e over %d inputs (tolerance %.1e): %s\n", dev, o.inputs, o.tolerance,
              ok ? "PASS" : "FAIL");
  return ok ? 0 : kExitVerification;
}

int cmd_diagnose(const Options& o) {
  const auto a = ip::load_archive(o.archive);
  const auto g = ip::analyze(a.manifest);
  ip::ScoringConfig cfg = scoring_config(o);
  const auto xs = random_inputs(a.manifest.input_shape, o.samples, o.seed);

  ip::json layers = ip::json::array();
  for (auto i : g.order) {
    const auto& l = a.manifest.layers[i];
    if (l.kind != ip::LayerKind::conv2d || (!o.layer.empty() && l.id != o.layer)) continue;
    const auto maps = ip::capture_feature_maps(a.manifest, a.tensors, xs, l.id);
    const auto view = ip::layer_view(a.tensors.at(l.conv().weight));
    std::vector<double> filter_h, map_h;
    std::vector<std::int64_t> ranks;
    for (std::int64_t c = 0; c < view.count; ++c) {
      filter_h.push_back(ip::filter_sim_entropy(view.filter(c), cfg.m_nearest));
      map_h.push_back(ip::renyi_matrix_entropy(maps[static_cast<std::size_t>(c)], o.alpha));
      ranks.push_back(ip::feature_rank(maps[static_cast<std::size_t>(c)]));
    }
    ip::json jl = {{"id", l.id}, {"filter_entropy", filter_h}, {"feature_map_entropy", map_h}, {"rank", ranks}};
    try {
      jl["pearson_r"] = ip::correlate(filter_h, map_h);
    } catch (const ip::Error& e) {
      jl["pearson_r"] = nullptr;
      jl["pearson_note"] = e.what();
    }
    layers.push_back(std::move(jl));
  }
  ip::require(!o.layer.empty() ? !layers.empty() : true, "diagnose: unknown conv2d layer '" + o.layer + "'");
  ip::json j = {{"config",
                 {{"samples", o.samples}, {"seed", o.seed}, {"alpha", o.alpha}, {"kernel_width", "median"},
                  {"rank_tolerance", 1e-6}, {"scoring", ip::to_json(cfg)}}},
                {"archive_fingerprint", ip::archive_fingerprint(a.manifest, a.tensors)},
                {"layers", layers}};
  emit_json(j, o.out);
  return 0;
}

int cmd_synth(const Options& o) {
  ip::require(!o.out.empty(), "synth: --out <directory> is required");
  ip::ModelManifest m;
  if (o.model == "vgg16") m = ip::vgg16_cifar();
  else if (o.model == "resnet56") m = ip::resnet_cifar(56);
  else if (o.model == "resnet20") m = ip::resnet_cifar(20);
  else if (o.model == "toy") m = ip::toy_chain();
  else ip::fail("synth: unknown model '" + o.model + "' (toy | vgg16 | resnet20 | resnet56)");
  ip::save_archive(m, ip::random_tensors(m, o.seed), o.out);
  std::printf("wrote %s (%zu layers)\n", o.out.c_str(), m.layers.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Filter pruning by information capacity and independence"};
  app.require_subcommand(1);
  Options o;

  auto add_archive = [&](CLI::App* c) { c->add_option("--archive", o.archive, "model archive directory")->required(); };
  auto add_scoring = [&](CLI::App* c) {
    c->add_option("--sigma", o.sigma, "capacity weight in [0,1]")->capture_default_str();
    c->add_option("--m-nearest", o.m_nearest, "nearest kernels per kernel, or 'exact'")->capture_default_str();
    c->add_option("--metric", o.metric, "filter distance")
        ->check(CLI::IsMember({"euclidean", "manhattan", "chebyshev", "cosine"}))
        ->capture_default_str();
    c->add_option("--workers", o.workers, "scoring threads")->capture_default_str();
  };

  auto* inspect = app.add_subcommand("inspect", "print a manifest summary");
  add_archive(inspect);

  auto* score = app.add_subcommand("score", "write the score table as JSON");
  add_archive(score);
  add_scoring(score);
  score->add_option("--out", o.out, "output file (default stdout)");

  auto* plan = app.add_subcommand("plan", "write a pruning plan as JSON");
  add_archive(plan);
  add_scoring(plan);
  plan->add_option("--rates", o.rates_file, "rates JSON file");
  plan->add_option("--rate", o.rate, "global pruning rate in [0,1)");
  plan->add_option("--strategy", o.strategy, "least | most | random")
      ->check(CLI::IsMember({"least", "most", "random"}))
      ->capture_default_str();
  plan->add_option("--seed", o.seed, "seed for the random strategy")->capture_default_str();
  plan->add_option("--protect", o.protect, "layer kept whole (repeatable; replaces the default)");
  plan->add_option("--out", o.out, "output file (default stdout)");

  auto* apply = app.add_subcommand("apply", "write the pruned archive");
  add_archive(apply);
  apply->add_option("--plan", o.plan, "plan JSON")->required();
  apply->add_option("--out", o.out, "output archive directory")->required();
  apply->add_option("--workers", o.workers, "slicing threads")->capture_default_str();

  auto* report = app.add_subcommand("report", "FLOPs / params before and after a plan");
  add_archive(report);
  report->add_option("--plan", o.plan, "plan JSON");
  report->add_option("--out", o.out, "also write the report as JSON");

  auto* verify = app.add_subcommand("verify", "check pruned == masked original on random inputs");
  add_archive(verify);
  verify->add_option("--plan", o.plan, "plan JSON")->required();
  verify->add_option("--pruned", o.pruned, "pruned archive (default: apply the plan in memory)");
  verify->add_option("--inputs", o.inputs, "number of random inputs")->capture_default_str();
  verify->add_option("--seed", o.seed, "input seed")->capture_default_str();
  verify->add_option("--tolerance", o.tolerance, "max allowed |delta|")->capture_default_str();
  verify->add_option("--workers", o.workers, "slicing threads")->capture_default_str();

  auto* diagnose = app.add_subcommand("diagnose", "feature-map entropy / rank vs filter entropy");
  add_archive(diagnose);
  add_scoring(diagnose);
  diagnose->add_option("--layer", o.layer, "only this conv2d layer");
  diagnose->add_option("--samples", o.samples, "number of random input images")->capture_default_str();
  diagnose->add_option("--seed", o.seed, "input seed")->capture_default_str();
  diagnose->add_option("--alpha", o.alpha, "Renyi order")->capture_default_str();
  diagnose->add_option("--out", o.out, "output file (default stdout)");

  auto* synth = app.add_subcommand("synth", "write a randomly initialised reference archive");
  synth->add_option("--model", o.model, "toy | vgg16 | resnet20 | resnet56")->capture_default_str();
  synth->add_option("--seed", o.seed, "weight seed")->capture_default_str();
  synth->add_option("--out", o.out, "output archive directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*inspect) return cmd_inspect(o);
    if (*score) return cmd_score(o);
    if (*plan) return cmd_plan(o);
    if (*apply) return cmd_apply(o);
    if (*report) return cmd_report(o);
    if (*verify) return cmd_verify(o);
    if (*diagnose) return cmd_diagnose(o);
    if (*synth) return cmd_synth(o);
  } catch (const ip::Error& e) {
    const char* kind = e.kind() == ip::ErrorKind::validation     ? "validation"
                       : e.kind() == ip::ErrorKind::verification ? "verification"
                                                                 : "io";
    std::cerr << ip::json{{"error", kind}, {"message", e.what()}}.dump() << "\n";
    if (e.kind() == ip::ErrorKind::validation) return kExitValidation;
    if (e.kind() == ip::ErrorKind::verification) return kExitVerification;
    return kExitOther;
  } catch (const std::exception& e) {
    std::cerr << ip::json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
