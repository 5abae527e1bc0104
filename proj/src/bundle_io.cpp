#include "cus3d/bundle_io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cus3d/error.hpp"

namespace cus3d {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kBundleFormat = "cus3d.scene_bundle";
constexpr const char* kFieldFormat = "cus3d.point_field";
constexpr int kFormatVersion = 1;

std::string frame_field(std::size_t k, const char* name) {
  return "frames[" + std::to_string(k) + "]." + name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open for writing", path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed", path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "missing file", path.filename().string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("malformed JSON: ") + e.what(), path.filename().string());
  }
}

json tensor_entry(const std::string& file, std::vector<std::size_t> shape) {
  return json{{"file", file}, {"shape", shape}};
}

struct TensorRef {
  std::string file;
  std::vector<std::size_t> shape;
};

TensorRef parse_tensor(const json& j, const std::string& field, std::size_t rank) {
  try {
    TensorRef t{j.at("file").get<std::string>(), j.at("shape").get<std::vector<std::size_t>>()};
    if (t.shape.size() != rank) {
      throw Error(ErrorKind::Format,
                  "expected rank " + std::to_string(rank) + ", manifest declares rank " +
                      std::to_string(t.shape.size()),
                  field);
    }
    if (t.file.find('/') != std::string::npos || t.file.find('\\') != std::string::npos) {
      throw Error(ErrorKind::Format, "blob name must be a plain filename", field);
    }
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("bad tensor entry: ") + e.what(), field);
  }
}

void expect_shape(const TensorRef& t, std::vector<std::size_t> expected, const std::string& field) {
  if (t.shape != expected) {
    std::ostringstream msg;
    msg << "shape mismatch: manifest declares [";
    for (std::size_t i = 0; i < t.shape.size(); ++i) msg << (i ? "," : "") << t.shape[i];
    msg << "], expected [";
    for (std::size_t i = 0; i < expected.size(); ++i) msg << (i ? "," : "") << expected[i];
    msg << "]";
    throw Error(ErrorKind::Format, msg.str(), field);
  }
}

Matrix load_matrix(const fs::path& dir, const TensorRef& t, std::size_t rows, std::size_t cols,
                   const std::string& field) {
  Matrix m;
  m.rows = rows;
  m.cols = cols;
  m.data = read_blob(dir / t.file, rows * cols, field);
  return m;
}

bool all_finite(std::span<const float> v) {
  for (float x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void check_pose(const CameraModel& cam, const std::string& field, std::vector<Violation>& out) {
  const auto& p = cam.pose;
  if (!all_finite(p)) {
    out.push_back({field, "non-finite entry"});
    return;
  }
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += double(p[k * 4 + i]) * double(p[k * 4 + j]);
      worst = std::max(worst, std::abs(s - (i == j ? 1.0 : 0.0)));
    }
  }
  const double det = double(p[0]) * (double(p[5]) * p[10] - double(p[6]) * p[9]) -
                     double(p[1]) * (double(p[4]) * p[10] - double(p[6]) * p[8]) +
                     double(p[2]) * (double(p[4]) * p[9] - double(p[5]) * p[8]);
  const bool bottom = p[12] == 0.0f && p[13] == 0.0f && p[14] == 0.0f && p[15] == 1.0f;
  if (!(worst < 1e-6) || det <= 0.0 || !bottom) {
    std::ostringstream msg;
    msg << "not a rigid transform (|R^T R - I|_inf = " << worst << ", det = " << det
        << (bottom ? "" : ", bottom row not [0 0 0 1]") << ")";
    out.push_back({field, msg.str()});
  }
}

}  // namespace

void write_blob(const fs::path& path, std::span<const float> values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(values[i]);
    bytes[4 * i + 0] = static_cast<char>(u & 0xFFu);
    bytes[4 * i + 1] = static_cast<char>((u >> 8) & 0xFFu);
    bytes[4 * i + 2] = static_cast<char>((u >> 16) & 0xFFu);
    bytes[4 * i + 3] = static_cast<char>((u >> 24) & 0xFFu);
  }
  write_text(path, bytes);
}

std::vector<float> read_blob(const fs::path& path, std::size_t expected_count, const std::string& field) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error(ErrorKind::Io, "missing file " + path.filename().string(), field);
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size != expected_count * 4) {
    throw Error(ErrorKind::Format,
                "shape mismatch: " + path.filename().string() + " holds " + std::to_string(size / 4) +
                    (size % 4 ? "+ partial" : "") + " floats, manifest implies " +
                    std::to_string(expected_count),
                field);
  }
  in.seekg(0);
  std::string bytes(size, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(size));
  if (!in) throw Error(ErrorKind::Io, "read failed for " + path.filename().string(), field);
  std::vector<float> values(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    const auto* b = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * i);
    const std::uint32_t u = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
                            (std::uint32_t(b[3]) << 24);
    values[i] = std::bit_cast<float>(u);
  }
  return values;
}

std::vector<float> to_float_blob(std::span<const std::int32_t> values) {
  return {values.begin(), values.end()};
}

std::vector<std::int32_t> from_float_blob(std::span<const float> values, const std::string& field) {
  std::vector<std::int32_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values[i];
    if (!std::isfinite(v) || v != std::floor(v) || std::abs(v) > 16777216.0f) {
      throw Error(ErrorKind::Format, "entry " + std::to_string(i) + " is not an integer", field);
    }
    out[i] = static_cast<std::int32_t>(v);
  }
  return out;
}

std::vector<Violation> validate_bundle(const SceneBundle& b) {
  std::vector<Violation> out;
  const std::size_t d = b.dim;
  if (d == 0) out.push_back({"meta.d", "embedding dimension must be positive"});

  const auto& pts = b.points;
  const std::size_t n = pts.size();
  if (n == 0) out.push_back({"points", "point set is empty"});
  if (pts.coords.cols != 3 || pts.coords.data.size() != n * 3) {
    out.push_back({"points", "coordinates must be N x 3"});
  } else if (!all_finite(pts.coords.data)) {
    out.push_back({"points", "non-finite coordinate"});
  }

  if (pts.cluster_ids.has_value() == pts.cluster_offsets.has_value()) {
    out.push_back({"clusters", "exactly one of cluster_ids / cluster_offsets must be present"});
  }
  if (pts.cluster_ids) {
    if (pts.cluster_ids->size() != n) {
      out.push_back({"cluster_ids", "length differs from point count"});
    } else {
      for (auto id : *pts.cluster_ids) {
        if (id < -1) {
          out.push_back({"cluster_ids", "id below -1"});
          break;
        }
      }
    }
  }
  if (pts.cluster_offsets &&
      (pts.cluster_offsets->rows != n || pts.cluster_offsets->cols != 3 ||
       pts.cluster_offsets->data.size() != n * 3)) {
    out.push_back({"cluster_offsets", "offsets must be N x 3"});
  }

  const auto& text = b.text;
  const std::size_t c = text.count();
  if (c == 0) out.push_back({"text", "at least one category required"});
  if (text.rows.cols != d || text.rows.data.size() != c * d) {
    out.push_back({"text", "prototype rows must have dimension d"});
  } else if (!all_finite(text.rows.data)) {
    out.push_back({"text", "non-finite entry"});
  } else {
    for (std::size_t i = 0; i < c; ++i) {
      if (norm(text.rows.row(i)) == 0.0) {
        out.push_back({"text", "prototype " + std::to_string(i) + " has zero norm"});
        break;
      }
    }
  }
  if (text.names.size() != c) out.push_back({"categories", "name count differs from prototype count"});

  if (b.gt) {
    if (b.gt->size() != n) {
      out.push_back({"gt", "length differs from point count"});
    } else {
      for (auto l : *b.gt) {
        if (l < -1 || l >= static_cast<std::int32_t>(c)) {
          out.push_back({"gt", "label outside {-1, ..., C-1}"});
          break;
        }
      }
    }
  }

  for (std::size_t k = 0; k < b.frames.size(); ++k) {
    const auto& f = b.frames[k];
    const auto& cam = f.camera;
    if (!(cam.fx > 0.0f) || !(cam.fy > 0.0f) || !std::isfinite(cam.fx) || !std::isfinite(cam.fy) ||
        cam.width < 1 || cam.height < 1 || !(cam.cx >= 0.0f) || !(cam.cx < float(cam.width)) ||
        !(cam.cy >= 0.0f) || !(cam.cy < float(cam.height))) {
      out.push_back({frame_field(k, "intrinsics"),
                     "require fx, fy > 0, 0 <= cx < width, 0 <= cy < height"});
    }
    check_pose(cam, frame_field(k, "pose"), out);

    const std::size_t npix = cam.width > 0 && cam.height > 0 ? cam.pixel_count() : 0;
    if (f.depth.rows != static_cast<std::size_t>(std::max(0, cam.height)) ||
        f.depth.cols != static_cast<std::size_t>(std::max(0, cam.width)) || f.depth.data.size() != npix) {
      out.push_back({frame_field(k, "depth"), "depth map must be height x width"});
    } else {
      for (float z : f.depth.data) {
        if (!std::isfinite(z) || z < 0.0f) {
          out.push_back({frame_field(k, "depth"), "depth must be finite and >= 0"});
          break;
        }
      }
    }

    const std::size_t m = f.mask_embeddings.rows;
    if (f.mask_probs.rows != npix || f.mask_probs.cols != m || f.mask_probs.data.size() != npix * m) {
      out.push_back({frame_field(k, "mask_probs"), "must be (width*height) x m"});
    } else {
      for (float p : f.mask_probs.data) {
        if (!(p >= 0.0f && p <= 1.0f)) {
          out.push_back({frame_field(k, "mask_probs"), "probability outside [0, 1]"});
          break;
        }
      }
    }
    if (f.mask_embeddings.cols != d || f.mask_embeddings.data.size() != m * d) {
      out.push_back({frame_field(k, "mask_embeddings"), "embeddings must have dimension d"});
    } else if (!all_finite(f.mask_embeddings.data)) {
      out.push_back({frame_field(k, "mask_embeddings"), "non-finite entry"});
    } else {
      for (std::size_t j = 0; j < m; ++j) {
        if (norm(f.mask_embeddings.row(j)) == 0.0) {
          out.push_back({frame_field(k, "mask_embeddings"), "mask " + std::to_string(j) + " has zero norm"});
          break;
        }
      }
    }
  }
  return out;
}

void save_bundle(const SceneBundle& b, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory: " + ec.message(), dir.string());

  const std::size_t n = b.points.size();
  const std::size_t c = b.text.count();
  json manifest;
  manifest["format"] = kBundleFormat;
  manifest["version"] = kFormatVersion;
  manifest["scene_id"] = b.scene_id;
  manifest["seed"] = b.seed;
  manifest["d"] = b.dim;
  manifest["C"] = c;
  manifest["N"] = n;
  manifest["categories"] = b.text.names;

  write_blob(dir / "points.bin", b.points.coords.data);
  manifest["points"] = tensor_entry("points.bin", {n, 3});
  write_blob(dir / "text.bin", b.text.rows.data);
  manifest["text"] = tensor_entry("text.bin", {c, b.dim});
  if (b.gt) {
    write_blob(dir / "gt.bin", to_float_blob(*b.gt));
    manifest["gt"] = tensor_entry("gt.bin", {n});
  } else {
    manifest["gt"] = nullptr;
  }
  if (b.points.cluster_ids) {
    write_blob(dir / "cluster_ids.bin", to_float_blob(*b.points.cluster_ids));
    manifest["clusters"] = {{"kind", "ids"}, {"file", "cluster_ids.bin"}, {"shape", {n}}};
  } else if (b.points.cluster_offsets) {
    write_blob(dir / "cluster_offsets.bin", b.points.cluster_offsets->data);
    manifest["clusters"] = {{"kind", "offsets"}, {"file", "cluster_offsets.bin"}, {"shape", {n, 3}}};
  } else {
    throw Error(ErrorKind::Validation, "exactly one of cluster_ids / cluster_offsets must be present",
                "clusters");
  }

  json frames = json::array();
  for (std::size_t k = 0; k < b.frames.size(); ++k) {
    const auto& f = b.frames[k];
    const auto& cam = f.camera;
    const std::string prefix = "frame_" + std::to_string(k) + "_";
    const std::size_t h = static_cast<std::size_t>(cam.height);
    const std::size_t w = static_cast<std::size_t>(cam.width);
    const std::size_t m = f.mask_count();
    write_blob(dir / (prefix + "depth.bin"), f.depth.data);
    write_blob(dir / (prefix + "maskprobs.bin"), f.mask_probs.data);
    write_blob(dir / (prefix + "maskemb.bin"), f.mask_embeddings.data);
    write_blob(dir / (prefix + "pose.bin"), cam.pose);
    const float intr[6] = {cam.fx, cam.fy, cam.cx, cam.cy, float(cam.width), float(cam.height)};
    write_blob(dir / (prefix + "intrinsics.bin"), intr);
    frames.push_back({
        {"depth", tensor_entry(prefix + "depth.bin", {h, w})},
        {"maskprobs", tensor_entry(prefix + "maskprobs.bin", {h * w, m})},
        {"maskemb", tensor_entry(prefix + "maskemb.bin", {m, b.dim})},
        {"pose", tensor_entry(prefix + "pose.bin", {4, 4})},
        {"intrinsics", tensor_entry(prefix + "intrinsics.bin", {6})},
    });
  }
  manifest["frames"] = std::move(frames);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

SceneBundle load_bundle(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  SceneBundle b;
  std::size_t n = 0;
  std::size_t c = 0;
  json frames;
  try {
    if (manifest.at("format").get<std::string>() != kBundleFormat) {
      throw Error(ErrorKind::Format, "not a scene bundle manifest", "format");
    }
    if (manifest.at("version").get<int>() != kFormatVersion) {
      throw Error(ErrorKind::Format, "unsupported version", "version");
    }
    b.scene_id = manifest.at("scene_id").get<std::string>();
    b.seed = manifest.at("seed").get<std::uint64_t>();
    b.dim = manifest.at("d").get<std::size_t>();
    c = manifest.at("C").get<std::size_t>();
    n = manifest.at("N").get<std::size_t>();
    b.text.names = manifest.at("categories").get<std::vector<std::string>>();
    frames = manifest.at("frames");
    if (!frames.is_array()) throw Error(ErrorKind::Format, "must be an array", "frames");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("bad manifest: ") + e.what(), "manifest.json");
  }
  const std::size_t d = b.dim;

  const auto member = [&](const json& j, const char* key, const std::string& field) -> const json& {
    if (!j.contains(key)) throw Error(ErrorKind::Format, "missing manifest entry", field);
    return j.at(key);
  };

  auto pts = parse_tensor(member(manifest, "points", "points"), "points", 2);
  expect_shape(pts, {n, 3}, "points");
  b.points.coords = load_matrix(dir, pts, n, 3, "points");

  auto txt = parse_tensor(member(manifest, "text", "text"), "text", 2);
  expect_shape(txt, {c, d}, "text");
  b.text.rows = load_matrix(dir, txt, c, d, "text");

  if (manifest.contains("gt") && !manifest.at("gt").is_null()) {
    auto gt = parse_tensor(manifest.at("gt"), "gt", 1);
    expect_shape(gt, {n}, "gt");
    b.gt = from_float_blob(read_blob(dir / gt.file, n, "gt"), "gt");
  }

  const json& clusters = member(manifest, "clusters", "clusters");
  std::string kind;
  try {
    kind = clusters.at("kind").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("bad cluster entry: ") + e.what(), "clusters");
  }
  if (kind == "ids") {
    auto t = parse_tensor(clusters, "cluster_ids", 1);
    expect_shape(t, {n}, "cluster_ids");
    b.points.cluster_ids = from_float_blob(read_blob(dir / t.file, n, "cluster_ids"), "cluster_ids");
  } else if (kind == "offsets") {
    auto t = parse_tensor(clusters, "cluster_offsets", 2);
    expect_shape(t, {n, 3}, "cluster_offsets");
    b.points.cluster_offsets = load_matrix(dir, t, n, 3, "cluster_offsets");
  } else {
    throw Error(ErrorKind::Format, "kind must be \"ids\" or \"offsets\"", "clusters");
  }

  for (std::size_t k = 0; k < frames.size(); ++k) {
    const json& jf = frames[k];
    FrameObservation f;
    auto intr_ref = parse_tensor(member(jf, "intrinsics", frame_field(k, "intrinsics")),
                                 frame_field(k, "intrinsics"), 1);
    expect_shape(intr_ref, {6}, frame_field(k, "intrinsics"));
    const auto intr = read_blob(dir / intr_ref.file, 6, frame_field(k, "intrinsics"));
    for (int i = 4; i < 6; ++i) {
      if (!std::isfinite(intr[i]) || intr[i] != std::floor(intr[i]) || intr[i] < 1.0f || intr[i] > 1e6f) {
        throw Error(ErrorKind::Format, "width/height must be positive integers", frame_field(k, "intrinsics"));
      }
    }
    f.camera.fx = intr[0];
    f.camera.fy = intr[1];
    f.camera.cx = intr[2];
    f.camera.cy = intr[3];
    f.camera.width = static_cast<std::int32_t>(intr[4]);
    f.camera.height = static_cast<std::int32_t>(intr[5]);
    const std::size_t w = static_cast<std::size_t>(f.camera.width);
    const std::size_t h = static_cast<std::size_t>(f.camera.height);

    auto pose_ref = parse_tensor(member(jf, "pose", frame_field(k, "pose")), frame_field(k, "pose"), 2);
    expect_shape(pose_ref, {4, 4}, frame_field(k, "pose"));
    const auto pose = read_blob(dir / pose_ref.file, 16, frame_field(k, "pose"));
    std::copy(pose.begin(), pose.end(), f.camera.pose.begin());

    auto depth_ref = parse_tensor(member(jf, "depth", frame_field(k, "depth")), frame_field(k, "depth"), 2);
    expect_shape(depth_ref, {h, w}, frame_field(k, "depth"));
    f.depth = load_matrix(dir, depth_ref, h, w, frame_field(k, "depth"));

    auto emb_ref =
        parse_tensor(member(jf, "maskemb", frame_field(k, "mask_embeddings")), frame_field(k, "mask_embeddings"), 2);
    if (emb_ref.shape[1] != d) {
      expect_shape(emb_ref, {emb_ref.shape[0], d}, frame_field(k, "mask_embeddings"));
    }
    const std::size_t m = emb_ref.shape[0];
    f.mask_embeddings = load_matrix(dir, emb_ref, m, d, frame_field(k, "mask_embeddings"));

    auto probs_ref =
        parse_tensor(member(jf, "maskprobs", frame_field(k, "mask_probs")), frame_field(k, "mask_probs"), 2);
    expect_shape(probs_ref, {h * w, m}, frame_field(k, "mask_probs"));
    f.mask_probs = load_matrix(dir, probs_ref, h * w, m, frame_field(k, "mask_probs"));

    b.frames.push_back(std::move(f));
  }

  const auto violations = validate_bundle(b);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw Error(ErrorKind::Validation, v.message, v.field);
  }
  return b;
}

void save_feature_field(const FeatureField& field, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory: " + ec.message(), dir.string());
  const std::size_t n = field.size();
  write_blob(dir / "pointfeat.bin", field.features.data);
  write_blob(dir / "pointlabels.bin", to_float_blob(field.labels));
  std::vector<float> valid(field.valid.begin(), field.valid.end());
  write_blob(dir / "pointvalid.bin", valid);
  json j;
  j["format"] = kFieldFormat;
  j["version"] = kFormatVersion;
  j["N"] = n;
  j["d"] = field.dim();
  j["features"] = tensor_entry("pointfeat.bin", {n, field.dim()});
  j["labels"] = tensor_entry("pointlabels.bin", {n});
  j["valid"] = tensor_entry("pointvalid.bin", {n});
  write_text(dir / "pointfield.json", j.dump(2) + "\n");
}

FeatureField load_feature_field(const fs::path& dir) {
  const json j = read_json(dir / "pointfield.json");
  std::size_t n = 0;
  std::size_t d = 0;
  try {
    if (j.at("format").get<std::string>() != kFieldFormat) {
      throw Error(ErrorKind::Format, "not a point field manifest", "format");
    }
    n = j.at("N").get<std::size_t>();
    d = j.at("d").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("bad manifest: ") + e.what(), "pointfield.json");
  }
  FeatureField f(n, d);
  auto feat = parse_tensor(j.at("features"), "features", 2);
  expect_shape(feat, {n, d}, "features");
  f.features.data = read_blob(dir / feat.file, n * d, "features");
  if (!all_finite(f.features.data)) throw Error(ErrorKind::Validation, "non-finite entry", "features");
  auto lab = parse_tensor(j.at("labels"), "labels", 1);
  expect_shape(lab, {n}, "labels");
  f.labels = from_float_blob(read_blob(dir / lab.file, n, "labels"), "labels");
  auto val = parse_tensor(j.at("valid"), "valid", 1);
  expect_shape(val, {n}, "valid");
  const auto valid = from_float_blob(read_blob(dir / val.file, n, "valid"), "valid");
  for (std::size_t i = 0; i < n; ++i) {
    if (valid[i] != 0 && valid[i] != 1) throw Error(ErrorKind::Format, "flags must be 0 or 1", "valid");
    f.valid[i] = static_cast<std::uint8_t>(valid[i]);
    if (!f.valid[i] && f.labels[i] != kIgnoreLabel) {
      throw Error(ErrorKind::Validation, "invalid point carries a label", "labels");
    }
  }
  return f;
}

}  // namespace cus3d
