#include "cus3d/projector.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "cus3d/bundle_io.hpp"
#include "cus3d/error.hpp"
#include "cus3d/parallel.hpp"

namespace cus3d {

std::optional<std::size_t> project_point(const std::array<double, 3>& p, const CameraModel& cam,
                                         const Matrix& depth, double eps_depth) {
  const auto& T = cam.pose;
  const double x = T[0] * p[0] + T[1] * p[1] + T[2] * p[2] + T[3];
  const double y = T[4] * p[0] + T[5] * p[1] + T[6] * p[2] + T[7];
  const double z = T[8] * p[0] + T[9] * p[1] + T[10] * p[2] + T[11];
  if (!(z > 0.0)) return std::nullopt;
  // std::round rounds half away from zero.
  const double u = std::round(double(cam.fx) * x / z + double(cam.cx));
  const double v = std::round(double(cam.fy) * y / z + double(cam.cy));
  if (!(u >= 0.0 && u < double(cam.width) && v >= 0.0 && v < double(cam.height))) return std::nullopt;
  const auto ui = static_cast<std::size_t>(u);
  const auto vi = static_cast<std::size_t>(v);
  const double recorded = depth(vi, ui);
  if (recorded == 0.0 || std::abs(recorded - z) > eps_depth) return std::nullopt;
  return vi * static_cast<std::size_t>(cam.width) + ui;
}

RawPointFeatures gather_raw_features(const PointSet& points, std::span<const FrameObservation> frames,
                                     std::span<const PixelFeatureField> fields, double eps_depth, int threads) {
  if (frames.size() != fields.size()) {
    throw Error(ErrorKind::InvalidArgument,
                "got " + std::to_string(fields.size()) + " pixel fields for " + std::to_string(frames.size()) +
                    " frames",
                "fields");
  }
  std::size_t d = 0;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (fields[k].size() != frames[k].camera.pixel_count()) {
      throw Error(ErrorKind::InvalidArgument, "pixel field size differs from frame", "fields");
    }
    if (k == 0) d = fields[k].dim();
    if (fields[k].dim() != d) throw Error(ErrorKind::InvalidArgument, "pixel field dimensions differ", "fields");
  }

  const std::size_t n = points.size();
  // Pass 1: per-point (frame, pixel) hits. Each point is independent.
  std::vector<std::vector<std::pair<std::uint32_t, std::size_t>>> hits(n);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto c = points.coords.row(i);
      const std::array<double, 3> p{c[0], c[1], c[2]};
      for (std::size_t k = 0; k < frames.size(); ++k) {
        const auto pix = project_point(p, frames[k].camera, frames[k].depth, eps_depth);
        if (pix && fields[k].valid[*pix]) hits[i].emplace_back(static_cast<std::uint32_t>(k), *pix);
      }
    }
  });

  RawPointFeatures raw;
  raw.offsets.resize(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) raw.offsets[i + 1] = raw.offsets[i] + hits[i].size();
  const std::size_t total = raw.offsets[n];
  raw.frame.resize(total);
  raw.features = Matrix(total, d);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::size_t e = raw.offsets[i];
      for (const auto& [k, pix] : hits[i]) {
        raw.frame[e] = k;
        const auto src = fields[k].features.row(pix);
        std::copy(src.begin(), src.end(), raw.features.row(e).begin());
        ++e;
      }
    }
  });
  return raw;
}

void save_raw_features(const RawPointFeatures& raw, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory: " + ec.message(), dir.string());
  const std::size_t n = raw.point_count();
  const std::size_t entries = raw.frame.size();
  write_blob(dir / "rawfeat.bin", raw.features.data);
  std::vector<float> frames(raw.frame.begin(), raw.frame.end());
  write_blob(dir / "rawframes.bin", frames);
  std::vector<float> offsets(raw.offsets.begin(), raw.offsets.end());
  write_blob(dir / "rawindex.bin", offsets);
  nlohmann::json j;
  j["format"] = "cus3d.raw_point_features";
  j["version"] = 1;
  j["N"] = n;
  j["entries"] = entries;
  j["d"] = raw.features.cols;
  j["features"] = {{"file", "rawfeat.bin"}, {"shape", {entries, raw.features.cols}}};
  j["frames"] = {{"file", "rawframes.bin"}, {"shape", {entries}}};
  j["index"] = {{"file", "rawindex.bin"}, {"shape", {n + 1}}};
  std::ofstream out(dir / "rawfeat.json", std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open for writing", (dir / "rawfeat.json").string());
  out << j.dump(2) << "\n";
}

RawPointFeatures load_raw_features(const std::filesystem::path& dir) {
  std::ifstream in(dir / "rawfeat.json", std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "missing file", "rawfeat.json");
  std::size_t n = 0, entries = 0, d = 0;
  try {
    const auto j = nlohmann::json::parse(in);
    n = j.at("N").get<std::size_t>();
    entries = j.at("entries").get<std::size_t>();
    d = j.at("d").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("bad sidecar: ") + e.what(), "rawfeat.json");
  }
  RawPointFeatures raw;
  raw.features.rows = entries;
  raw.features.cols = d;
  raw.features.data = read_blob(dir / "rawfeat.bin", entries * d, "rawfeat");
  const auto frames = from_float_blob(read_blob(dir / "rawframes.bin", entries, "rawframes"), "rawframes");
  const auto offsets = from_float_blob(read_blob(dir / "rawindex.bin", n + 1, "rawindex"), "rawindex");
  raw.frame.assign(frames.begin(), frames.end());
  raw.offsets.assign(offsets.begin(), offsets.end());
  if (raw.offsets.front() != 0 || raw.offsets.back() != entries) {
    throw Error(ErrorKind::Format, "offsets do not span the entries", "rawindex");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (raw.offsets[i + 1] < raw.offsets[i]) throw Error(ErrorKind::Format, "offsets not monotone", "rawindex");
  }
  return raw;
}

}  // namespace cus3d
