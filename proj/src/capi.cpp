#include "cus3d/cus3d.h"

#include <cmath>
#include <cstring>
#include <new>
#include <string>

#include <json.hpp>

#include "cus3d/bundle_io.hpp"
#include "cus3d/distiller.hpp"
#include "cus3d/error.hpp"
#include "cus3d/pipeline.hpp"
#include "cus3d/semantics.hpp"
#include "cus3d/synthgen.hpp"

struct cus3d_bundle {
  cus3d::SceneBundle value;
};
struct cus3d_point_field {
  cus3d::PointFeatureField value;
};
struct cus3d_model {
  cus3d::StudentModel value;
  std::vector<cus3d::EpochLoss> curve;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_field;

cus3d_status status_of(cus3d::ErrorKind kind) {
  switch (kind) {
    case cus3d::ErrorKind::InvalidArgument: return CUS3D_INVALID_ARGUMENT;
    case cus3d::ErrorKind::Io: return CUS3D_IO;
    case cus3d::ErrorKind::Format: return CUS3D_FORMAT;
    case cus3d::ErrorKind::Validation: return CUS3D_VALIDATION;
    case cus3d::ErrorKind::Numeric: return CUS3D_NUMERIC;
  }
  return CUS3D_INTERNAL;
}

cus3d_status fail(cus3d_status s, std::string message, std::string field = {}) {
  g_error = std::move(message);
  g_field = std::move(field);
  return s;
}

// Runs fn, translating exceptions into status codes.
template <typename Fn>
cus3d_status guard(Fn&& fn) {
  try {
    g_error.clear();
    g_field.clear();
    fn();
    return CUS3D_OK;
  } catch (const cus3d::Error& e) {
    return fail(status_of(e.kind()), e.what(), e.field());
  } catch (const std::bad_alloc&) {
    return fail(CUS3D_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(CUS3D_INTERNAL, e.what());
  }
}

void require(const void* p, const char* name) {
  if (!p) throw cus3d::Error(cus3d::ErrorKind::InvalidArgument, "null pointer", name);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

cus3d::SynthConfig to_cpp(const cus3d_synth_config& c) {
  cus3d::SynthConfig s;
  s.categories = c.categories;
  s.dim = c.dim;
  s.objects = c.objects;
  s.points_per_object = c.points_per_object;
  s.frames = c.frames;
  s.width = c.width;
  s.height = c.height;
  s.p2d = c.p2d;
  s.p3d = c.p3d;
  s.sigma = c.sigma;
  s.masks_per_object = c.masks_per_object;
  s.cluster_offsets = c.cluster_offsets != 0;
  s.arena = c.arena;
  s.seed = c.seed;
  return s;
}

cus3d::OdpOptions to_cpp(const cus3d_odp_options& o) {
  cus3d::OdpOptions r;
  r.beta = o.beta;
  r.eps_depth = o.eps_depth;
  r.radius = o.radius;
  r.filter_2d = o.filter_2d != 0;
  r.filter_3d = o.filter_3d != 0;
  r.frame_stride = o.frame_stride;
  r.threads = o.threads;
  return r;
}

cus3d::StudentConfig to_cpp(const cus3d_student_config& c) {
  if (c.encoder_layers > CUS3D_MAX_ENCODER_LAYERS) {
    throw cus3d::Error(cus3d::ErrorKind::InvalidArgument, "too many encoder layers", "encoder_widths");
  }
  cus3d::StudentConfig s;
  s.encoder_widths.assign(c.encoder_widths, c.encoder_widths + c.encoder_layers);
  s.head_width = c.head_width;
  s.activation = cus3d::activation_from_string(c.activation ? c.activation : "relu");
  s.lr0 = c.lr0;
  s.momentum = c.momentum;
  s.epochs = c.epochs;
  s.batch_size = c.batch_size;
  s.lambda_feature = c.lambda_feature;
  s.lambda_label = c.lambda_label;
  s.tau = c.tau;
  s.seed = c.seed;
  s.unseen_excluded_from_feature_loss = c.unseen_excluded_from_feature_loss != 0;
  return s;
}

std::span<const std::int32_t> span_of(const int32_t* p, size_t n) {
  if (n > 0) require(p, "unseen");
  return {p, p ? n : 0};
}

}  // namespace

extern "C" {

const char* cus3d_version(void) { return "0.1.0"; }
const char* cus3d_last_error(void) { return g_error.c_str(); }
const char* cus3d_last_error_field(void) { return g_field.c_str(); }

const char* cus3d_status_name(cus3d_status status) {
  switch (status) {
    case CUS3D_OK: return "ok";
    case CUS3D_INVALID_ARGUMENT: return "invalid_argument";
    case CUS3D_IO: return "io";
    case CUS3D_FORMAT: return "format";
    case CUS3D_VALIDATION: return "validation";
    case CUS3D_NUMERIC: return "numeric";
    case CUS3D_INTERNAL: return "internal";
  }
  return "unknown";
}

void cus3d_string_free(char* s) { std::free(s); }

void cus3d_synth_config_default(cus3d_synth_config* cfg) {
  if (!cfg) return;
  const cus3d::SynthConfig d;
  cfg->categories = static_cast<uint32_t>(d.categories);
  cfg->dim = static_cast<uint32_t>(d.dim);
  cfg->objects = static_cast<uint32_t>(d.objects);
  cfg->points_per_object = static_cast<uint32_t>(d.points_per_object);
  cfg->frames = static_cast<uint32_t>(d.frames);
  cfg->width = d.width;
  cfg->height = d.height;
  cfg->p2d = d.p2d;
  cfg->p3d = d.p3d;
  cfg->sigma = d.sigma;
  cfg->masks_per_object = static_cast<uint32_t>(d.masks_per_object);
  cfg->cluster_offsets = d.cluster_offsets ? 1 : 0;
  cfg->arena = d.arena;
  cfg->seed = d.seed;
}

cus3d_status cus3d_synth_warnings(const cus3d_synth_config* cfg, char** text) {
  return guard([&] {
    require(cfg, "cfg");
    require(text, "text");
    const auto c = to_cpp(*cfg);
    cus3d::validate_config(c);
    std::string out;
    for (const auto& w : cus3d::config_warnings(c)) out += w + "\n";
    *text = dup_string(out);
  });
}

cus3d_status cus3d_synthesize(const cus3d_synth_config* cfg, cus3d_bundle** out) {
  return guard([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = new cus3d_bundle{cus3d::synthesize(to_cpp(*cfg))};
  });
}

void cus3d_noise_config_default(cus3d_noise_config* cfg) {
  if (!cfg) return;
  const cus3d::NoiseConfig d;
  cfg->p2d = d.p2d;
  cfg->p3d = d.p3d;
  cfg->sigma = d.sigma;
  cfg->beta = d.beta;
  cfg->eps_depth = d.eps_depth;
  cfg->seed = d.seed;
}

cus3d_status cus3d_inject_noise(const cus3d_bundle* in, const cus3d_noise_config* cfg, cus3d_bundle** out) {
  return guard([&] {
    require(in, "bundle");
    require(cfg, "cfg");
    require(out, "out");
    cus3d::NoiseConfig n;
    n.p2d = cfg->p2d;
    n.p3d = cfg->p3d;
    n.sigma = cfg->sigma;
    n.beta = cfg->beta;
    n.eps_depth = cfg->eps_depth;
    n.seed = cfg->seed;
    *out = new cus3d_bundle{cus3d::inject_noise(in->value, n)};
  });
}

cus3d_status cus3d_bundle_load(const char* dir, cus3d_bundle** out) {
  return guard([&] {
    require(dir, "dir");
    require(out, "out");
    *out = new cus3d_bundle{cus3d::load_bundle(dir)};
  });
}

cus3d_status cus3d_bundle_save(const cus3d_bundle* bundle, const char* dir) {
  return guard([&] {
    require(bundle, "bundle");
    require(dir, "dir");
    cus3d::save_bundle(bundle->value, dir);
  });
}

cus3d_status cus3d_bundle_validate(const cus3d_bundle* bundle, char** json) {
  return guard([&] {
    require(bundle, "bundle");
    require(json, "json");
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : cus3d::validate_bundle(bundle->value)) {
      arr.push_back({{"field", v.field}, {"message", v.message}});
    }
    *json = dup_string(arr.dump());
  });
}

void cus3d_bundle_free(cus3d_bundle* bundle) { delete bundle; }
size_t cus3d_bundle_point_count(const cus3d_bundle* b) { return b ? b->value.points.size() : 0; }
size_t cus3d_bundle_frame_count(const cus3d_bundle* b) { return b ? b->value.frames.size() : 0; }
size_t cus3d_bundle_category_count(const cus3d_bundle* b) { return b ? b->value.text.count() : 0; }
size_t cus3d_bundle_dim(const cus3d_bundle* b) { return b ? b->value.dim : 0; }
int cus3d_bundle_has_gt(const cus3d_bundle* b) { return b && b->value.gt ? 1 : 0; }

const char* cus3d_bundle_category_name(const cus3d_bundle* b, size_t index) {
  if (!b || index >= b->value.text.names.size()) return nullptr;
  return b->value.text.names[index].c_str();
}

int32_t cus3d_bundle_category_index(const cus3d_bundle* b, const char* name) {
  if (!b || !name) return -1;
  const auto& names = b->value.text.names;
  for (size_t c = 0; c < names.size(); ++c) {
    if (names[c] == name) return static_cast<int32_t>(c);
  }
  return -1;
}

cus3d_status cus3d_bundle_text(const cus3d_bundle* bundle, float* out, size_t capacity) {
  return guard([&] {
    require(bundle, "bundle");
    require(out, "out");
    const auto& data = bundle->value.text.rows.data;
    if (capacity < data.size()) throw cus3d::Error(cus3d::ErrorKind::InvalidArgument, "buffer too small", "capacity");
    std::copy(data.begin(), data.end(), out);
  });
}

int cus3d_bundle_equal(const cus3d_bundle* a, const cus3d_bundle* b) {
  return a && b && cus3d::bitwise_equal(a->value, b->value) ? 1 : 0;
}

void cus3d_odp_options_default(cus3d_odp_options* opts) {
  if (!opts) return;
  const cus3d::OdpOptions d;
  opts->beta = d.beta;
  opts->eps_depth = d.eps_depth;
  opts->radius = d.radius;
  opts->filter_2d = d.filter_2d ? 1 : 0;
  opts->filter_3d = d.filter_3d ? 1 : 0;
  opts->frame_stride = static_cast<uint32_t>(d.frame_stride);
  opts->threads = d.threads;
}

cus3d_status cus3d_project(const cus3d_bundle* bundle, const cus3d_odp_options* opts, cus3d_point_field** out) {
  return guard([&] {
    require(bundle, "bundle");
    require(opts, "opts");
    require(out, "out");
    *out = new cus3d_point_field{cus3d::run_odp(bundle->value, to_cpp(*opts))};
  });
}

cus3d_status cus3d_dump_raw(const cus3d_bundle* bundle, const cus3d_odp_options* opts, const char* dir) {
  return guard([&] {
    require(bundle, "bundle");
    require(opts, "opts");
    require(dir, "dir");
    cus3d::save_raw_features(cus3d::gather(bundle->value, to_cpp(*opts)), dir);
  });
}

cus3d_status cus3d_point_field_save(const cus3d_point_field* field, const char* dir) {
  return guard([&] {
    require(field, "field");
    require(dir, "dir");
    cus3d::save_feature_field(field->value, dir);
  });
}

cus3d_status cus3d_point_field_load(const char* dir, cus3d_point_field** out) {
  return guard([&] {
    require(dir, "dir");
    require(out, "out");
    *out = new cus3d_point_field{cus3d::load_feature_field(dir)};
  });
}

void cus3d_point_field_free(cus3d_point_field* field) { delete field; }
size_t cus3d_point_field_size(const cus3d_point_field* f) { return f ? f->value.size() : 0; }
size_t cus3d_point_field_dim(const cus3d_point_field* f) { return f ? f->value.dim() : 0; }
size_t cus3d_point_field_valid_count(const cus3d_point_field* f) { return f ? f->value.valid_count() : 0; }

cus3d_status cus3d_point_field_labels(const cus3d_point_field* field, int32_t* out, size_t capacity) {
  return guard([&] {
    require(field, "field");
    require(out, "out");
    const auto& l = field->value.labels;
    if (capacity < l.size()) throw cus3d::Error(cus3d::ErrorKind::InvalidArgument, "buffer too small", "capacity");
    std::copy(l.begin(), l.end(), out);
  });
}

cus3d_status cus3d_point_field_features(const cus3d_point_field* field, float* out, size_t capacity) {
  return guard([&] {
    require(field, "field");
    require(out, "out");
    const auto& d = field->value.features.data;
    if (capacity < d.size()) throw cus3d::Error(cus3d::ErrorKind::InvalidArgument, "buffer too small", "capacity");
    std::copy(d.begin(), d.end(), out);
  });
}

int cus3d_point_field_equal(const cus3d_point_field* a, const cus3d_point_field* b) {
  return a && b && cus3d::bitwise_equal(a->value, b->value) ? 1 : 0;
}

void cus3d_student_config_default(cus3d_student_config* cfg) {
  if (!cfg) return;
  const cus3d::StudentConfig d;
  std::memset(cfg->encoder_widths, 0, sizeof cfg->encoder_widths);
  cfg->encoder_layers = static_cast<uint32_t>(d.encoder_widths.size());
  for (size_t k = 0; k < d.encoder_widths.size(); ++k) cfg->encoder_widths[k] = static_cast<uint32_t>(d.encoder_widths[k]);
  cfg->head_width = static_cast<uint32_t>(d.head_width);
  cfg->activation = cus3d::to_string(d.activation);
  cfg->lr0 = d.lr0;
  cfg->momentum = d.momentum;
  cfg->epochs = static_cast<uint32_t>(d.epochs);
  cfg->batch_size = static_cast<uint32_t>(d.batch_size);
  cfg->lambda_feature = d.lambda_feature;
  cfg->lambda_label = d.lambda_label;
  cfg->tau = d.tau;
  cfg->seed = d.seed;
  cfg->unseen_excluded_from_feature_loss = d.unseen_excluded_from_feature_loss ? 1 : 0;
}

cus3d_status cus3d_distill(const cus3d_bundle* bundle, const cus3d_point_field* teacher,
                           const cus3d_student_config* cfg, const int32_t* unseen, size_t unseen_count,
                           cus3d_model** out) {
  return guard([&] {
    require(bundle, "bundle");
    require(teacher, "teacher");
    require(cfg, "cfg");
    require(out, "out");
    auto r = cus3d::train(bundle->value, teacher->value, to_cpp(*cfg), span_of(unseen, unseen_count));
    *out = new cus3d_model{std::move(r.model), std::move(r.curve)};
  });
}

cus3d_status cus3d_model_save(const cus3d_model* model, const char* dir) {
  return guard([&] {
    require(model, "model");
    require(dir, "dir");
    cus3d::save_model(model->value, dir);
  });
}

cus3d_status cus3d_model_load(const char* dir, cus3d_model** out) {
  return guard([&] {
    require(dir, "dir");
    require(out, "out");
    *out = new cus3d_model{cus3d::load_model(dir), {}};
  });
}

void cus3d_model_free(cus3d_model* model) { delete model; }

cus3d_status cus3d_model_predict(const cus3d_model* model, const cus3d_bundle* bundle, cus3d_point_field** out) {
  return guard([&] {
    require(model, "model");
    require(bundle, "bundle");
    require(out, "out");
    *out = new cus3d_point_field{cus3d::predict(model->value, bundle->value.points.coords, bundle->value.text)};
  });
}

cus3d_status cus3d_model_loss_curve_csv(const cus3d_model* model, char** csv) {
  return guard([&] {
    require(model, "model");
    require(csv, "csv");
    *csv = dup_string(cus3d::loss_curve_csv(model->curve));
  });
}

int cus3d_model_equal(const cus3d_model* a, const cus3d_model* b) { return a && b && a->value == b->value ? 1 : 0; }

cus3d_status cus3d_evaluate(const cus3d_bundle* bundle, const cus3d_point_field* field, const int32_t* unseen,
                            size_t unseen_count, char** json, double* miou, double* acc) {
  return guard([&] {
    require(bundle, "bundle");
    require(field, "field");
    const auto& b = bundle->value;
    if (!b.gt) throw cus3d::Error(cus3d::ErrorKind::InvalidArgument, "bundle has no ground truth", "gt");
    if (field->value.dim() != b.text.dim()) {
      throw cus3d::Error(cus3d::ErrorKind::InvalidArgument, "field dimension differs from text", "field");
    }
    const auto pred = cus3d::classify_points(field->value, b.text);
    auto rep = cus3d::evaluate(pred, *b.gt, b.text.count());
    if (unseen_count > 0) cus3d::attach_split(rep, span_of(unseen, unseen_count));
    if (miou) *miou = rep.miou;
    if (acc) *acc = rep.acc;
    if (json) *json = dup_string(cus3d::report_to_json(rep, b.text.names));
  });
}

cus3d_status cus3d_hiou(double miou_seen, double miou_unseen, double* out) {
  return guard([&] {
    require(out, "out");
    *out = cus3d::hiou(miou_seen, miou_unseen);
  });
}

cus3d_status cus3d_query_similarity(const cus3d_point_field* field, const float* query, size_t dim, float* out,
                                    size_t capacity) {
  return guard([&] {
    require(field, "field");
    require(query, "query");
    require(out, "out");
    if (capacity < field->value.size()) {
      throw cus3d::Error(cus3d::ErrorKind::InvalidArgument, "buffer too small", "capacity");
    }
    const auto s = cus3d::query_similarity(field->value, {query, dim});
    std::copy(s.begin(), s.end(), out);
  });
}

cus3d_status cus3d_ablate(const cus3d_ablation_config* cfg, char** csv, char** json) {
  return guard([&] {
    require(cfg, "cfg");
    cus3d::AblationConfig a;
    a.synth = to_cpp(cfg->synth);
    if (cfg->seed_count > 0) require(cfg->seeds, "seeds");
    a.seeds.assign(cfg->seeds, cfg->seeds + cfg->seed_count);
    a.odp = to_cpp(cfg->odp);
    a.student_axis = cfg->student_axis != 0;
    a.student = to_cpp(cfg->student);
    const auto cells = cus3d::ablation_matrix(a);
    if (csv) *csv = dup_string(cus3d::ablation_csv(cells));
    if (json) *json = dup_string(cus3d::ablation_json(cells, a));
  });
}

}  // extern "C"
