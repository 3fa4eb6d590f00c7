#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "infoprune/archive.hpp"
#include "infoprune/parallel.hpp"
#include "infoprune/planner.hpp"

namespace infoprune {

struct PrunedModel {
  ModelManifest manifest;
  TensorMap tensors;
  json provenance;
};

/// Gathers the listed indices along each axis of a row-major tensor; a null
/// entry (or a missing trailing one) keeps that axis whole.
inline Tensor gather_axes(const Tensor& t, const std::vector<const IndexSet*>& keep_per_axis) {
  const std::size_t rank = t.shape.size();
  std::vector<IndexSet> idx(rank);
  Shape out_shape(rank);
  for (std::size_t a = 0; a < rank; ++a) {
    if (a < keep_per_axis.size() && keep_per_axis[a]) {
      idx[a] = *keep_per_axis[a];
    } else {
      idx[a].resize(static_cast<std::size_t>(t.shape[a]));
      std::iota(idx[a].begin(), idx[a].end(), 0);
    }
    out_shape[a] = static_cast<std::int64_t>(idx[a].size());
  }
  std::vector<std::int64_t> stride(rank, 1);
  for (std::size_t a = rank; a-- > 1;) stride[a - 1] = stride[a] * t.shape[a];

  Tensor out(t.name, out_shape);
  std::vector<std::size_t> pos(rank, 0);
  for (std::size_t o = 0; o < out.data.size(); ++o) {
    std::int64_t src = 0;
    for (std::size_t a = 0; a < rank; ++a) src += idx[a][pos[a]] * stride[a];
    out.data[o] = t.data[static_cast<std::size_t>(src)];
    for (std::size_t a = rank; a-- > 0;) {
      if (++pos[a] < idx[a].size()) break;
      pos[a] = 0;
    }
  }
  return out;
}

/// Structurally removes the planned filters: output rows of pruned layers,
/// input columns of their consumers, and the matching bias / batch-norm
/// entries. Tensors the plan does not touch are copied unchanged.
inline PrunedModel apply_plan(const ModelManifest& m, const TensorMap& tensors, const PruningPlan& plan,
                              unsigned workers = 1) {
  validate_archive(m, tensors);
  require(plan.source_fingerprint == archive_fingerprint(m, tensors),
          "plan/archive mismatch: plan was built for archive " + plan.source_fingerprint);

  PrunedModel out;
  out.manifest = planned_manifest(m, plan);

  struct Job {
    const Tensor* src;
    std::vector<const IndexSet*> keep;
  };
  std::vector<Job> jobs;
  for (const auto& l : m.layers) {
    const auto* lk = plan.find_layer(l.id);
    const auto* d = plan.find_derived(l.id);
    const IndexSet* kept_out = lk ? &lk->kept : nullptr;
    const IndexSet* kept_in = d ? &d->kept : nullptr;
    switch (l.kind) {
      case LayerKind::conv2d:
        jobs.push_back({&tensors.at(l.conv().weight), {kept_out, kept_in}});
        if (l.conv().has_bias) jobs.push_back({&tensors.at(l.conv().bias), {kept_out}});
        break;
      case LayerKind::linear:
        jobs.push_back({&tensors.at(l.linear().weight), {kept_out, kept_in}});
        if (l.linear().has_bias) jobs.push_back({&tensors.at(l.linear().bias), {kept_out}});
        break;
      case LayerKind::batchnorm2d:
        for (const auto* name : {&l.bn().gamma, &l.bn().beta, &l.bn().mean, &l.bn().var})
          jobs.push_back({&tensors.at(*name), {kept_in}});
        break;
      default:
        break;
    }
  }

  std::vector<Tensor> sliced(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t k) {
    const auto& job = jobs[k];
    const bool untouched = std::all_of(job.keep.begin(), job.keep.end(), [](auto* p) { return !p; });
    sliced[k] = untouched ? *job.src : gather_axes(*job.src, job.keep);
  });
  for (auto& t : sliced) out.tensors.emplace(t.name, std::move(t));

  validate_archive(out.manifest, out.tensors);
  out.provenance = {{"plan_hash", plan_hash(plan)},
                    {"source_fingerprint", plan.source_fingerprint},
                    {"pruned_fingerprint", archive_fingerprint(out.manifest, out.tensors)},
                    {"config", to_json(plan)["config"]}};
  return out;
}

/// Writes the pruned archive plus provenance.json.
inline void save_pruned(const PrunedModel& p, const fs::path& dir) {
  save_archive(p.manifest, p.tensors, dir);
  detail::write_file(dir / "provenance.json", p.provenance.dump(2) + "\n");
}

}  // namespace infoprune
