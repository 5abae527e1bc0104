// cus3d command-line front end. Talks to the library only through cus3d.h.
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cus3d/cus3d.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 2, kInvalidBundle = 3, kRuntime = 4 };

// Thrown after a C API call fails; carries the exit code and JSON payload.
struct Failure {
  int code;
  std::string kind;
  std::string message;
  std::string field;
};

void check(cus3d_status s) {
  if (s == CUS3D_OK) return;
  const int code = (s == CUS3D_VALIDATION || s == CUS3D_FORMAT) ? kInvalidBundle : kRuntime;
  throw Failure{code, cus3d_status_name(s), cus3d_last_error(), cus3d_last_error_field()};
}

[[noreturn]] void usage_error(const std::string& message) { throw Failure{kUsage, "usage", message, {}}; }

std::string take(char* s) {
  std::string out = s ? s : "";
  cus3d_string_free(s);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Failure{kRuntime, "io", "cannot write file", path.string()};
  out << text;
}

void write_floats(const fs::path& path, const std::vector<float>& v) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Failure{kRuntime, "io", "cannot write file", path.string()};
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::vector<float> read_floats(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{kRuntime, "io", "cannot read file", path.string()};
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % sizeof(float) != 0) throw Failure{kRuntime, "format", "size is not a multiple of 4", path.string()};
  std::vector<float> v(bytes.size() / sizeof(float));
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
  T** out() { return &p; }
  T* get() const { return p; }
};
using Bundle = Handle<cus3d_bundle, cus3d_bundle_free>;
using Field = Handle<cus3d_point_field, cus3d_point_field_free>;
using Model = Handle<cus3d_model, cus3d_model_free>;

struct SynthFlags {
  cus3d_synth_config cfg{};
  SynthFlags() { cus3d_synth_config_default(&cfg); }
  void add(CLI::App* sub) {
    sub->add_option("--seed", cfg.seed, "Scene seed");
    sub->add_option("--categories", cfg.categories, "Number of categories C")->check(CLI::PositiveNumber);
    sub->add_option("--dim", cfg.dim, "Embedding dimension d")->check(CLI::PositiveNumber);
    sub->add_option("--objects", cfg.objects, "Objects per scene")->check(CLI::PositiveNumber);
    sub->add_option("--points-per-object", cfg.points_per_object)->check(CLI::PositiveNumber);
    sub->add_option("--frames", cfg.frames)->check(CLI::PositiveNumber);
    sub->add_option("--width", cfg.width)->check(CLI::Range(2, 4096));
    sub->add_option("--height", cfg.height)->check(CLI::Range(2, 4096));
    sub->add_option("--p2d", cfg.p2d, "2D wrong-mask rate")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--p3d", cfg.p3d, "3D cross-frame corruption rate")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--sigma", cfg.sigma, "Mask embedding noise")->check(CLI::NonNegativeNumber);
    sub->add_option("--masks-per-object", cfg.masks_per_object)->check(CLI::PositiveNumber);
    sub->add_flag("--cluster-offsets", cfg.cluster_offsets, "Emit offsets instead of cluster ids");
    sub->add_option("--arena", cfg.arena, "Floor half extent (m)")->check(CLI::Range(0.5, 1000.0));
  }
};

struct OdpFlags {
  cus3d_odp_options opts{};
  bool no_2d = false;
  bool no_3d = false;
  OdpFlags() { cus3d_odp_options_default(&opts); }
  void add(CLI::App* sub, bool toggles) {
    sub->add_option("--beta", opts.beta, "Mask probability gate")->check(CLI::Range(0.0, 0.999999));
    sub->add_option("--eps-depth", opts.eps_depth, "Depth consistency tolerance (m)")->check(CLI::PositiveNumber);
    sub->add_option("--radius", opts.radius, "Offset grouping radius (m)")->check(CLI::PositiveNumber);
    sub->add_option("--frame-stride", opts.frame_stride)->check(CLI::PositiveNumber);
    sub->add_option("--threads", opts.threads, "Worker threads")->check(CLI::Range(1, 256));
    if (toggles) {
      sub->add_flag("--no-2d", no_2d, "Disable the 2D mask-feature filter");
      sub->add_flag("--no-3d", no_3d, "Disable the 3D object-mask filter");
    }
  }
  cus3d_odp_options resolved() const {
    auto o = opts;
    o.filter_2d = no_2d ? 0 : 1;
    o.filter_3d = no_3d ? 0 : 1;
    return o;
  }
};

struct StudentFlags {
  cus3d_student_config cfg{};
  std::vector<std::uint32_t> widths;
  std::string activation;
  bool keep_unseen = false;
  StudentFlags() {
    cus3d_student_config_default(&cfg);
    widths.assign(cfg.encoder_widths, cfg.encoder_widths + cfg.encoder_layers);
    activation = cfg.activation;
  }
  void add(CLI::App* sub, bool with_seed) {
    sub->add_option("--encoder-widths", widths, "Encoder hidden widths")->delimiter(',')->check(CLI::PositiveNumber);
    sub->add_option("--head-width", cfg.head_width)->check(CLI::PositiveNumber);
    sub->add_option("--activation", activation)->check(CLI::IsMember({"relu", "tanh", "identity"}));
    sub->add_option("--lr0", cfg.lr0, "Initial learning rate")->check(CLI::PositiveNumber);
    sub->add_option("--momentum", cfg.momentum)->check(CLI::Range(0.0, 0.999999));
    sub->add_option("--epochs", cfg.epochs);
    sub->add_option("--batch-size", cfg.batch_size)->check(CLI::PositiveNumber);
    sub->add_option("--lambda-feature", cfg.lambda_feature, "Feature loss weight")->check(CLI::NonNegativeNumber);
    sub->add_option("--lambda-label", cfg.lambda_label, "Label loss weight")->check(CLI::NonNegativeNumber);
    sub->add_option("--tau", cfg.tau, "Softmax temperature")->check(CLI::PositiveNumber);
    if (with_seed) sub->add_option("--seed", cfg.seed, "Student seed");
    sub->add_flag("--keep-unseen-in-feature-loss", keep_unseen,
                  "Keep unseen-labelled points in the feature term");
  }
  cus3d_student_config resolved() {
    if (widths.size() > CUS3D_MAX_ENCODER_LAYERS) usage_error("--encoder-widths: at most 8 layers");
    auto c = cfg;
    c.encoder_layers = static_cast<std::uint32_t>(widths.size());
    for (std::size_t k = 0; k < widths.size(); ++k) c.encoder_widths[k] = widths[k];
    c.activation = activation.c_str();
    c.unseen_excluded_from_feature_loss = keep_unseen ? 0 : 1;
    return c;
  }
};

struct UnseenFlags {
  std::vector<std::string> names;
  std::size_t count = 0;
  void add(CLI::App* sub) {
    auto* n = sub->add_option("--unseen", names, "Unseen category names")->delimiter(',');
    sub->add_option("--unseen-count", count, "Withhold the last k categories (e.g. 6 or 10)")->excludes(n);
  }
  std::vector<std::int32_t> resolve(const cus3d_bundle* b) const {
    std::vector<std::int32_t> out;
    const std::size_t C = cus3d_bundle_category_count(b);
    if (count > 0) {
      if (count >= C) usage_error("--unseen-count must be below the category count " + std::to_string(C));
      for (std::size_t c = C - count; c < C; ++c) out.push_back(static_cast<std::int32_t>(c));
    }
    for (const auto& name : names) {
      const auto idx = cus3d_bundle_category_index(b, name.c_str());
      if (idx < 0) usage_error("--unseen: unknown category '" + name + "'");
      out.push_back(idx);
    }
    return out;
  }
};

// Every option of the subcommand with its resolved value.
json resolved_flags(const CLI::App* sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_name();
    if (name.empty() || name == "--help" || name == "-h") continue;
    const std::string key = name.substr(name.find_first_not_of('-'));
    if (opt->get_expected_min() == 0) {
      j[key] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto& r = opt->results();
      j[key] = r.size() == 1 ? json(r[0]) : json(r);
    } else {
      j[key] = opt->get_default_str();
    }
  }
  return j;
}

void write_manifest(const fs::path& dir, const std::string& sub, const std::vector<std::string>& args,
                    const json& resolved) {
  json m;
  m["tool"] = "cus3d";
  m["version"] = cus3d_version();
  m["subcommand"] = sub;
  m["argv"] = args;
  m["resolved"] = resolved;
  write_text(dir / "run_manifest.json", m.dump(2) + "\n");
}

// Any failure to read a bundle is reported as an invalid bundle.
void load_bundle(const std::string& dir, Bundle& b) {
  const auto s = cus3d_bundle_load(dir.c_str(), b.out());
  if (s == CUS3D_OK) return;
  throw Failure{kInvalidBundle, cus3d_status_name(s), cus3d_last_error(), cus3d_last_error_field()};
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{kRuntime, "io", "cannot create directory: " + ec.message(), dir.string()};
}

int run(const std::vector<std::string>& args);

int dispatch(CLI::App& app, const std::vector<std::string>& args) {
  SynthFlags synth;
  OdpFlags odp;
  StudentFlags student;
  UnseenFlags unseen;
  std::string bundle_dir, out_dir, features_dir, model_dir, teacher_dir, category, query_blob, manifest_path, dump_raw;
  std::size_t seeds = 5;
  std::uint64_t base_seed = 0;
  bool no_student = false;

  auto* s_synth = app.add_subcommand("synth", "Generate a synthetic scene bundle (with noise injection)");
  synth.add(s_synth);
  s_synth->add_option("--out", out_dir, "Bundle directory")->required();

  auto* s_project = app.add_subcommand("project", "Run object-level denoising projection");
  s_project->add_option("--bundle", bundle_dir)->required();
  s_project->add_option("--out", out_dir, "Point feature field directory")->required();
  s_project->add_option("--dump-raw", dump_raw, "Also write raw per-point features here");
  odp.add(s_project, true);

  auto* s_distill = app.add_subcommand("distill", "Distil a student network from a teacher field");
  s_distill->add_option("--bundle", bundle_dir)->required();
  s_distill->add_option("--teacher", teacher_dir, "Teacher point feature field")->required();
  s_distill->add_option("--out", out_dir, "Checkpoint directory")->required();
  student.add(s_distill, true);
  unseen.add(s_distill);

  auto* s_eval = app.add_subcommand("eval", "Classify and score a field or student against gt");
  s_eval->add_option("--bundle", bundle_dir)->required();
  auto* o_feat = s_eval->add_option("--features", features_dir, "Point feature field");
  s_eval->add_option("--model", model_dir, "Student checkpoint")->excludes(o_feat);
  s_eval->add_option("--out", out_dir, "Report directory")->required();
  unseen.add(s_eval);

  auto* s_ablate = app.add_subcommand("ablate", "2D/3D filter (and student) ablation over seeds");
  synth.add(s_ablate);
  s_ablate->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
  s_ablate->add_option("--base-seed", base_seed, "First seed");
  s_ablate->add_flag("--no-student", no_student, "Skip the student-network axis (4 rows)");
  s_ablate->add_option("--out", out_dir)->required();
  odp.add(s_ablate, false);
  student.add(s_ablate, false);

  auto* s_query = app.add_subcommand("query", "Per-point similarity to a category or embedding");
  auto* q_feat = s_query->add_option("--features", features_dir, "Point feature field");
  s_query->add_option("--model", model_dir, "Student checkpoint")->excludes(q_feat);
  s_query->add_option("--bundle", bundle_dir)->required();
  auto* q_cat = s_query->add_option("--category", category, "Category name");
  s_query->add_option("--query-blob", query_blob, "float32 d-vector")->excludes(q_cat);
  s_query->add_option("--out", out_dir)->required();

  auto* s_replay = app.add_subcommand("replay", "Re-run a recorded run_manifest.json");
  s_replay->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  s_replay->add_option("--out", out_dir, "Override the output directory");

  app.require_subcommand(1);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    const CLI::App* where = &app;
    for (auto* sub : app.get_subcommands()) where = sub;
    throw Failure{kUsage, "usage", std::string(e.what()) + "\n" + where->help(), {}};
  }

  const auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  if (name == "replay") {
    std::ifstream in(manifest_path);
    json m;
    try {
      m = json::parse(in);
    } catch (const json::exception& e) {
      throw Failure{kUsage, "usage", std::string("bad manifest: ") + e.what(), manifest_path};
    }
    auto argv = m.at("argv").get<std::vector<std::string>>();
    if (!out_dir.empty()) {
      for (std::size_t i = 0; i + 1 < argv.size(); ++i) {
        if (argv[i] == "--out") argv[i + 1] = out_dir;
      }
    }
    if (!argv.empty() && argv[0] == "replay") usage_error("refusing to replay a replay");
    return run(argv);
  }

  make_dir(out_dir);
  const json resolved = resolved_flags(sub);

  if (name == "synth") {
    char* w = nullptr;
    check(cus3d_synth_warnings(&synth.cfg, &w));
    const std::string warnings = take(w);
    if (!warnings.empty()) std::cerr << warnings;
    Bundle b;
    check(cus3d_synthesize(&synth.cfg, b.out()));
    check(cus3d_bundle_save(b.get(), out_dir.c_str()));
    std::cout << "wrote bundle " << out_dir << " (" << cus3d_bundle_point_count(b.get()) << " points, "
              << cus3d_bundle_frame_count(b.get()) << " frames)\n";
  } else if (name == "project") {
    Bundle b;
    load_bundle(bundle_dir, b);
    const auto o = odp.resolved();
    Field f;
    check(cus3d_project(b.get(), &o, f.out()));
    check(cus3d_point_field_save(f.get(), out_dir.c_str()));
    if (!dump_raw.empty()) check(cus3d_dump_raw(b.get(), &o, dump_raw.c_str()));
    std::cout << "projected " << cus3d_point_field_valid_count(f.get()) << "/" << cus3d_point_field_size(f.get())
              << " points\n";
  } else if (name == "distill") {
    Bundle b;
    load_bundle(bundle_dir, b);
    Field teacher;
    check(cus3d_point_field_load(teacher_dir.c_str(), teacher.out()));
    const auto ids = unseen.resolve(b.get());
    const auto cfg = student.resolved();
    Model m;
    check(cus3d_distill(b.get(), teacher.get(), &cfg, ids.data(), ids.size(), m.out()));
    check(cus3d_model_save(m.get(), out_dir.c_str()));
    char* csv = nullptr;
    check(cus3d_model_loss_curve_csv(m.get(), &csv));
    write_text(fs::path(out_dir) / "loss_curve.csv", take(csv));
    std::cout << "trained student -> " << out_dir << "\n";
  } else if (name == "eval") {
    Bundle b;
    load_bundle(bundle_dir, b);
    Field f;
    if (!model_dir.empty()) {
      Model m;
      check(cus3d_model_load(model_dir.c_str(), m.out()));
      check(cus3d_model_predict(m.get(), b.get(), f.out()));
    } else if (!features_dir.empty()) {
      check(cus3d_point_field_load(features_dir.c_str(), f.out()));
    } else {
      usage_error("eval needs --features or --model");
    }
    const auto ids = unseen.resolve(b.get());
    char* report = nullptr;
    double miou = 0.0;
    double acc = 0.0;
    check(cus3d_evaluate(b.get(), f.get(), ids.data(), ids.size(), &report, &miou, &acc));
    const std::string text = take(report);
    write_text(fs::path(out_dir) / "report.json", text);
    std::printf("mIoU %.6f  Acc %.6f\n", miou, acc);
    const json r = json::parse(text);
    if (r.contains("split") && !r["split"]["hiou"].is_null()) {
      std::printf("seen mIoU %.6f  unseen mIoU %.6f  hIoU %.6f\n", r["split"]["miou_seen"].get<double>(),
                  r["split"]["miou_unseen"].get<double>(), r["split"]["hiou"].get<double>());
    }
  } else if (name == "ablate") {
    std::vector<std::uint64_t> seed_list;
    for (std::size_t k = 0; k < seeds; ++k) seed_list.push_back(base_seed + k);
    cus3d_ablation_config cfg{};
    cfg.synth = synth.cfg;
    cfg.seeds = seed_list.data();
    cfg.seed_count = seed_list.size();
    cfg.odp = odp.resolved();
    cfg.student_axis = no_student ? 0 : 1;
    cfg.student = student.resolved();
    char* csv = nullptr;
    char* js = nullptr;
    check(cus3d_ablate(&cfg, &csv, &js));
    const std::string table = take(csv);
    write_text(fs::path(out_dir) / "ablation.csv", table);
    write_text(fs::path(out_dir) / "ablation.json", take(js));
    std::cout << table;
  } else if (name == "query") {
    Bundle b;
    load_bundle(bundle_dir, b);
    Field f;
    if (!model_dir.empty()) {
      Model m;
      check(cus3d_model_load(model_dir.c_str(), m.out()));
      check(cus3d_model_predict(m.get(), b.get(), f.out()));
    } else if (!features_dir.empty()) {
      check(cus3d_point_field_load(features_dir.c_str(), f.out()));
    } else {
      usage_error("query needs --features or --model");
    }
    std::vector<float> q;
    if (!category.empty()) {
      const auto idx = cus3d_bundle_category_index(b.get(), category.c_str());
      if (idx < 0) usage_error("--category: unknown category '" + category + "'");
      const std::size_t d = cus3d_bundle_dim(b.get());
      std::vector<float> text(cus3d_bundle_category_count(b.get()) * d);
      check(cus3d_bundle_text(b.get(), text.data(), text.size()));
      q.assign(text.begin() + static_cast<std::ptrdiff_t>(idx * d), text.begin() + static_cast<std::ptrdiff_t>((idx + 1) * d));
    } else if (!query_blob.empty()) {
      q = read_floats(query_blob);
    } else {
      usage_error("query needs --category or --query-blob");
    }
    std::vector<float> sim(cus3d_point_field_size(f.get()));
    check(cus3d_query_similarity(f.get(), q.data(), q.size(), sim.data(), sim.size()));
    write_floats(fs::path(out_dir) / "similarity.bin", sim);
    std::cout << "wrote " << sim.size() << " similarities\n";
  }
  write_manifest(out_dir, name, args, resolved);
  return kOk;
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"cus3d: object-level denoising projection and distillation toolkit", "cus3d"};
  app.set_version_flag("--version", std::string(cus3d_version()));
  app.option_defaults()->always_capture_default();
  try {
    return dispatch(app, args);
  } catch (const Failure& f) {
    json e{{"kind", f.kind}, {"message", f.message.substr(0, f.message.find('\n'))}};
    if (!f.field.empty()) e["field"] = f.field;
    std::cerr << json{{"error", e}}.dump() << "\n";
    if (f.code == kUsage && f.message.find('\n') != std::string::npos) {
      std::cerr << f.message.substr(f.message.find('\n') + 1);
    }
    return f.code;
  } catch (const CLI::Error& e) {
    std::cerr << json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    return kRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}
