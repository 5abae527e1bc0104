#include "cus3d/pipeline.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "cus3d/error.hpp"
#include "cus3d/semantics.hpp"

namespace cus3d {

void validate_options(const OdpOptions& opts) {
  if (!(opts.beta >= 0.0 && opts.beta < 1.0)) throw Error(ErrorKind::InvalidArgument, "must be in [0, 1)", "beta");
  if (!(opts.eps_depth > 0.0) || !std::isfinite(opts.eps_depth)) {
    throw Error(ErrorKind::InvalidArgument, "must be > 0", "eps_depth");
  }
  if (!(opts.radius > 0.0) || !std::isfinite(opts.radius)) throw Error(ErrorKind::InvalidArgument, "must be > 0", "radius");
  if (opts.frame_stride == 0) throw Error(ErrorKind::InvalidArgument, "must be positive", "frame_stride");
  if (opts.threads < 1) throw Error(ErrorKind::InvalidArgument, "must be at least 1", "threads");
}

namespace {

std::vector<FrameObservation> used_frames(const SceneBundle& bundle, std::size_t stride) {
  std::vector<FrameObservation> out;
  for (std::size_t k = 0; k < bundle.frames.size(); k += stride) out.push_back(bundle.frames[k]);
  return out;
}

}  // namespace

std::vector<PixelFeatureField> assign_frames(const SceneBundle& bundle, const OdpOptions& opts) {
  validate_options(opts);
  std::vector<PixelFeatureField> fields;
  for (std::size_t k = 0; k < bundle.frames.size(); k += opts.frame_stride) {
    const auto& f = bundle.frames[k];
    fields.push_back(opts.filter_2d ? assign_pixel_features(f, bundle.text, opts.beta, opts.threads)
                                    : assign_pixel_features_unfiltered(f, bundle.text, opts.beta, opts.threads));
  }
  return fields;
}

RawPointFeatures gather(const SceneBundle& bundle, const OdpOptions& opts) {
  const auto fields = assign_frames(bundle, opts);
  if (opts.frame_stride == 1) {
    return gather_raw_features(bundle.points, bundle.frames, fields, opts.eps_depth, opts.threads);
  }
  const auto frames = used_frames(bundle, opts.frame_stride);
  auto raw = gather_raw_features(bundle.points, frames, fields, opts.eps_depth, opts.threads);
  // Report bundle frame indices, not positions in the strided list.
  for (auto& k : raw.frame) k *= static_cast<std::uint32_t>(opts.frame_stride);
  return raw;
}

PointFeatureField run_odp(const SceneBundle& bundle, const OdpOptions& opts) {
  const auto raw = gather(bundle, opts);
  if (!opts.filter_3d) return aggregate_unfiltered(raw, bundle.text, opts.threads);
  const auto masks = build_object_masks(bundle.points, opts.radius);
  return aggregate(bundle.points, masks, raw, bundle.text, opts.threads);
}

std::vector<AblationCell> ablation_matrix(const AblationConfig& cfg) {
  validate_config(cfg.synth);
  validate_options(cfg.odp);
  if (cfg.seeds.empty()) throw Error(ErrorKind::InvalidArgument, "need at least one seed", "seeds");
  if (cfg.student_axis) validate_config(cfg.student);

  std::vector<AblationCell> cells;
  for (int g = 0; g < 4; ++g) {
    for (int s = 0; s < (cfg.student_axis ? 2 : 1); ++s) {
      AblationCell c;
      c.filter_2d = (g & 1) != 0;
      c.filter_3d = (g & 2) != 0;
      c.student = s == 1;
      cells.push_back(c);
    }
  }

  for (auto seed : cfg.seeds) {
    SynthConfig sc = cfg.synth;
    sc.seed = seed;
    const SceneBundle bundle = synthesize(sc);
    if (!bundle.gt) throw Error(ErrorKind::Validation, "synthetic bundle lacks gt", "gt");
    const auto C = bundle.text.count();
    std::size_t row = 0;
    for (int g = 0; g < 4; ++g) {
      OdpOptions o = cfg.odp;
      o.filter_2d = (g & 1) != 0;
      o.filter_3d = (g & 2) != 0;
      const auto teacher = run_odp(bundle, o);
      const auto record = [&](const PointFeatureField& field) {
        const auto pred = classify_points(field, bundle.text, o.threads);
        const auto rep = evaluate(pred, *bundle.gt, C);
        cells[row].miou_per_seed.push_back(rep.miou);
        cells[row].acc_per_seed.push_back(rep.acc);
        ++row;
      };
      record(teacher);
      if (cfg.student_axis) {
        StudentConfig st = cfg.student;
        st.seed = seed;
        const auto trained = train(bundle, teacher, st);
        record(predict(trained.model, bundle.points.coords, bundle.text));
      }
    }
  }
  for (auto& c : cells) {
    double m = 0.0;
    double a = 0.0;
    for (double x : c.miou_per_seed) m += x;
    for (double x : c.acc_per_seed) a += x;
    c.miou = m / static_cast<double>(c.miou_per_seed.size());
    c.acc = a / static_cast<double>(c.acc_per_seed.size());
  }
  return cells;
}

std::string ablation_csv(const std::vector<AblationCell>& cells) {
  std::ostringstream out;
  out.precision(10);
  out << "filter_2d,filter_3d,student,miou,acc\n";
  for (const auto& c : cells) {
    out << int(c.filter_2d) << ',' << int(c.filter_3d) << ',' << int(c.student) << ',' << c.miou << ',' << c.acc
        << '\n';
  }
  return out.str();
}

std::string ablation_json(const std::vector<AblationCell>& cells, const AblationConfig& cfg) {
  using nlohmann::json;
  json j;
  j["seeds"] = cfg.seeds;
  j["p2d"] = cfg.synth.p2d;
  j["p3d"] = cfg.synth.p3d;
  j["beta"] = cfg.odp.beta;
  j["eps_depth"] = cfg.odp.eps_depth;
  j["radius"] = cfg.odp.radius;
  json rows = json::array();
  for (const auto& c : cells) {
    rows.push_back({{"filter_2d", c.filter_2d},
                    {"filter_3d", c.filter_3d},
                    {"student", c.student},
                    {"miou", c.miou},
                    {"acc", c.acc},
                    {"miou_per_seed", c.miou_per_seed},
                    {"acc_per_seed", c.acc_per_seed}});
  }
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

}  // namespace cus3d
