#include "prodat/pc_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace prodat::io {

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::size_t byte_offset,
                             const std::string& what) {
  throw ParseError(path + ": " + what + " (byte " +
                   std::to_string(byte_offset) + ")");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

float read_f32le(const char* p) {
  std::uint32_t u = 0;
  std::memcpy(&u, p, 4);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

void write_f32le(std::string& out, float f) {
  char buf[4];
  std::memcpy(buf, &f, 4);
  out.append(buf, 4);
}

struct PlyProperty {
  std::string type;
  std::string name;
};

std::size_t ply_type_size(const std::string& t, const std::string& path,
                          std::size_t off) {
  if (t == "float" || t == "float32" || t == "int" || t == "int32" ||
      t == "uint" || t == "uint32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  parse_fail(path, off, "unsupported PLY property type '" + t + "'");
}

PointCloud load_ply(const std::string& path) {
  const std::string buf = read_file(path);
  std::size_t pos = 0;
  auto next_line = [&](std::string& line) -> bool {
    if (pos >= buf.size()) return false;
    std::size_t end = buf.find('\n', pos);
    if (end == std::string::npos) end = buf.size();
    line = buf.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = end + 1;
    return true;
  };

  std::string line;
  if (!next_line(line) || line != "ply") parse_fail(path, 0, "missing 'ply' magic");
  bool binary = false;
  bool saw_format = false;
  std::size_t vertex_count = 0;
  bool in_vertex_element = false;
  bool saw_vertex = false;
  std::vector<PlyProperty> vertex_props;
  bool header_done = false;
  while (next_line(line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment" || tok.empty()) continue;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii")
        binary = false;
      else if (fmt == "binary_little_endian")
        binary = true;
      else
        parse_fail(path, pos, "unsupported PLY format '" + fmt + "'");
      saw_format = true;
    } else if (tok == "element") {
      std::string name;
      std::size_t count;
      ls >> name >> count;
      in_vertex_element = (name == "vertex");
      if (in_vertex_element) {
        vertex_count = count;
        saw_vertex = true;
      }
    } else if (tok == "property") {
      if (!in_vertex_element) continue;
      PlyProperty p;
      ls >> p.type >> p.name;
      if (p.type == "list") parse_fail(path, pos, "list property in vertex element");
      vertex_props.push_back(p);
    } else if (tok == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) parse_fail(path, pos, "missing end_header");
  if (!saw_format) parse_fail(path, pos, "missing format line");
  if (!saw_vertex) parse_fail(path, pos, "missing vertex element");
  if (vertex_count == 0) parse_fail(path, pos, "zero points");

  int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
  for (std::size_t i = 0; i < vertex_props.size(); ++i) {
    const auto& n = vertex_props[i].name;
    if (n == "x") ix = static_cast<int>(i);
    if (n == "y") iy = static_cast<int>(i);
    if (n == "z") iz = static_cast<int>(i);
    if (n == "nx") inx = static_cast<int>(i);
    if (n == "ny") iny = static_cast<int>(i);
    if (n == "nz") inz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0)
    parse_fail(path, pos, "vertex element lacks x/y/z properties");
  const bool has_n = inx >= 0 && iny >= 0 && inz >= 0;

  PointCloud pc;
  pc.source_id = path;
  pc.coords.reserve(vertex_count);
  if (has_n) pc.normals.reserve(vertex_count);

  if (!binary) {
    for (std::size_t v = 0; v < vertex_count; ++v) {
      const std::size_t line_off = pos;
      if (!next_line(line))
        parse_fail(path, line_off, "truncated: expected vertex " + std::to_string(v));
      std::istringstream ls(line);
      std::vector<double> vals(vertex_props.size());
      for (std::size_t i = 0; i < vertex_props.size(); ++i) {
        if (!(ls >> vals[i]))
          parse_fail(path, line_off, "malformed vertex record " + std::to_string(v));
      }
      pc.coords.push_back({vals[ix], vals[iy], vals[iz]});
      if (has_n) pc.normals.push_back({vals[inx], vals[iny], vals[inz]});
    }
  } else {
    std::size_t rec_size = 0;
    std::vector<std::size_t> offsets(vertex_props.size());
    for (std::size_t i = 0; i < vertex_props.size(); ++i) {
      offsets[i] = rec_size;
      rec_size += ply_type_size(vertex_props[i].type, path, pos);
    }
    auto get = [&](const char* rec, int i) -> double {
      const auto& t = vertex_props[static_cast<std::size_t>(i)].type;
      const char* p = rec + offsets[static_cast<std::size_t>(i)];
      if (t == "float" || t == "float32") return read_f32le(p);
      if (t == "double" || t == "float64") {
        double d;
        std::memcpy(&d, p, 8);
        return d;
      }
      parse_fail(path, pos, "coordinate property must be float32 or float64");
    };
    for (std::size_t v = 0; v < vertex_count; ++v) {
      if (pos + rec_size > buf.size())
        parse_fail(path, pos, "truncated record " + std::to_string(v));
      const char* rec = buf.data() + pos;
      pc.coords.push_back({get(rec, ix), get(rec, iy), get(rec, iz)});
      if (has_n) pc.normals.push_back({get(rec, inx), get(rec, iny), get(rec, inz)});
      pos += rec_size;
    }
  }
  return pc;
}

PointCloud load_kitti_bin(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.empty()) parse_fail(path, 0, "zero points");
  if (buf.size() % 16 != 0)
    parse_fail(path, buf.size() - buf.size() % 16, "truncated record");
  PointCloud pc;
  pc.source_id = path;
  const std::size_t n = buf.size() / 16;
  pc.coords.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const char* rec = buf.data() + i * 16;
    // x, y, z, intensity; intensity discarded.
    pc.coords.push_back({read_f32le(rec), read_f32le(rec + 4), read_f32le(rec + 8)});
  }
  return pc;
}

PointCloud load_csv(const std::string& path) {
  const std::string buf = read_file(path);
  PointCloud pc;
  pc.source_id = path;
  std::size_t pos = 0;
  std::size_t lineno = 0;
  while (pos < buf.size()) {
    std::size_t end = buf.find('\n', pos);
    if (end == std::string::npos) end = buf.size();
    std::string line = buf.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++lineno;
    if (!line.empty()) {
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ls(line);
      Vec3 p;
      if (!(ls >> p[0] >> p[1] >> p[2]))
        parse_fail(path, pos, "malformed csv line " + std::to_string(lineno));
      pc.coords.push_back(p);
    }
    pos = end + 1;
  }
  if (pc.coords.empty()) parse_fail(path, 0, "zero points");
  return pc;
}

void save_ply(const PointCloud& pc, const std::string& path, bool binary) {
  std::ostringstream h;
  h << "ply\nformat " << (binary ? "binary_little_endian" : "ascii")
    << " 1.0\nelement vertex " << pc.size() << "\n"
    << "property float x\nproperty float y\nproperty float z\n";
  if (pc.has_normals())
    h << "property float nx\nproperty float ny\nproperty float nz\n";
  h << "end_header\n";
  std::string out = h.str();
  if (binary) {
    for (std::size_t i = 0; i < pc.size(); ++i) {
      for (int a = 0; a < 3; ++a) write_f32le(out, static_cast<float>(pc.coords[i][a]));
      if (pc.has_normals())
        for (int a = 0; a < 3; ++a) write_f32le(out, static_cast<float>(pc.normals[i][a]));
    }
  } else {
    std::ostringstream body;
    body.precision(9);
    for (std::size_t i = 0; i < pc.size(); ++i) {
      body << pc.coords[i][0] << " " << pc.coords[i][1] << " " << pc.coords[i][2];
      if (pc.has_normals())
        body << " " << pc.normals[i][0] << " " << pc.normals[i][1] << " "
             << pc.normals[i][2];
      body << "\n";
    }
    out += body.str();
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

void save_kitti_bin(const PointCloud& pc, const std::string& path) {
  std::string out;
  out.reserve(pc.size() * 16);
  for (const auto& p : pc.coords) {
    write_f32le(out, static_cast<float>(p[0]));
    write_f32le(out, static_cast<float>(p[1]));
    write_f32le(out, static_cast<float>(p[2]));
    write_f32le(out, 0.0f);  // intensity placeholder
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

void save_csv(const PointCloud& pc, const std::string& path) {
  std::ostringstream out;
  out.precision(9);
  for (const auto& p : pc.coords)
    out << p[0] << "," << p[1] << "," << p[2] << "\n";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << out.str();
}

}  // namespace

CloudFormat format_from_name(const std::string& name) {
  if (name == "ply_ascii") return CloudFormat::ply_ascii;
  if (name == "ply_binary_le") return CloudFormat::ply_binary_le;
  if (name == "kitti_bin") return CloudFormat::kitti_bin;
  if (name == "csv_xyz") return CloudFormat::csv_xyz;
  throw ArgumentError("unknown cloud format '" + name + "'");
}

std::string format_name(CloudFormat fmt) {
  switch (fmt) {
    case CloudFormat::ply_ascii: return "ply_ascii";
    case CloudFormat::ply_binary_le: return "ply_binary_le";
    case CloudFormat::kitti_bin: return "kitti_bin";
    case CloudFormat::csv_xyz: return "csv_xyz";
  }
  throw ArgumentError("bad format enum");
}

CloudFormat guess_format(const std::string& path) {
  auto ends = [&](const char* s) {
    const std::size_t n = std::strlen(s);
    return path.size() >= n && path.compare(path.size() - n, n, s) == 0;
  };
  if (ends(".ply")) return CloudFormat::ply_ascii;  // header decides on load
  if (ends(".bin")) return CloudFormat::kitti_bin;
  if (ends(".csv") || ends(".xyz")) return CloudFormat::csv_xyz;
  throw ArgumentError("cannot guess format of " + path);
}

PointCloud load_pointcloud(const std::string& path, CloudFormat format) {
  switch (format) {
    case CloudFormat::ply_ascii:
    case CloudFormat::ply_binary_le:
      return load_ply(path);  // header-driven, accepts either
    case CloudFormat::kitti_bin:
      return load_kitti_bin(path);
    case CloudFormat::csv_xyz:
      return load_csv(path);
  }
  throw ArgumentError("bad format enum");
}

void save_pointcloud(const PointCloud& pc, const std::string& path,
                     CloudFormat format) {
  switch (format) {
    case CloudFormat::ply_ascii: save_ply(pc, path, false); return;
    case CloudFormat::ply_binary_le: save_ply(pc, path, true); return;
    case CloudFormat::kitti_bin: save_kitti_bin(pc, path); return;
    case CloudFormat::csv_xyz: save_csv(pc, path); return;
  }
  throw ArgumentError("bad format enum");
}

std::pair<PointCloud, NormalizeTransform> normalize_to_unit_cube(
    const PointCloud& pc, double padding) {
  if (pc.size() == 0) throw ArgumentError("empty cloud");
  if (padding < 0.0 || padding > 0.49)
    throw ArgumentError("padding must be in [0, 0.49]");
  const BoundingBox bb = BoundingBox::of(pc);
  const Vec3 extent = bb.p_max - bb.p_min;
  const double longest = std::max({extent[0], extent[1], extent[2]});
  NormalizeTransform t;
  t.padding = padding;
  const double inner = 1.0 - 2.0 * padding;
  t.scale = longest > 0.0 ? inner / longest : 1.0;
  for (int a = 0; a < 3; ++a) {
    // Center each axis inside the padded cube; zero-extent axes land at 0.5.
    t.offset[a] =
        padding - bb.p_min[a] * t.scale + 0.5 * (inner - extent[a] * t.scale);
  }
  PointCloud out = pc;
  for (auto& p : out.coords) p = t.apply(p);
  return {std::move(out), t};
}

PointCloud voxelize_quantize(const PointCloud& pc, int bits) {
  if (bits < 1 || bits > 16) throw ArgumentError("bits must be in [1,16]");
  const double levels = static_cast<double>((1u << bits) - 1);
  PointCloud out;
  out.source_id = pc.source_id;
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(pc.size() * 2);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Vec3& p = pc.coords[i];
    Vec3 g;
    for (int a = 0; a < 3; ++a) {
      if (!(p[a] >= 0.0 && p[a] <= 1.0))
        throw ArgumentError("coordinate outside [0,1] at point " + std::to_string(i));
      g[a] = std::round(p[a] * levels);
    }
    const std::uint64_t key = static_cast<std::uint64_t>(g[0]) |
                              (static_cast<std::uint64_t>(g[1]) << 16) |
                              (static_cast<std::uint64_t>(g[2]) << 32);
    if (seen.insert(key).second) out.coords.push_back(g);
  }
  return out;
}

PointCloud dequantize_grid(const PointCloud& pc, int bits) {
  const double levels = static_cast<double>((1u << bits) - 1);
  PointCloud out = pc;
  for (auto& p : out.coords)
    for (int a = 0; a < 3; ++a) p[a] /= levels;
  return out;
}

PointCloud filter_outliers_percentile(const PointCloud& pc, double percentile) {
  if (pc.size() == 0) throw ArgumentError("empty cloud");
  Vec3 c{0, 0, 0};
  for (const auto& p : pc.coords) c = c + p;
  c = c * (1.0 / static_cast<double>(pc.size()));
  std::vector<double> d(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) d[i] = sq_dist(pc.coords[i], c);
  std::vector<double> sorted = d;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(percentile / 100.0 * static_cast<double>(sorted.size())));
  const double cutoff = sorted[std::min(sorted.size() - 1, rank == 0 ? 0 : rank - 1)];
  PointCloud out;
  out.source_id = pc.source_id;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    if (d[i] <= cutoff) {
      out.coords.push_back(pc.coords[i]);
      if (pc.has_normals()) out.normals.push_back(pc.normals[i]);
    }
  }
  return out;
}

SyntheticShape shape_from_name(const std::string& name) {
  if (name == "sphere_surface") return SyntheticShape::sphere_surface;
  if (name == "plane") return SyntheticShape::plane;
  if (name == "gaussian_clusters") return SyntheticShape::gaussian_clusters;
  throw ArgumentError("unknown synthetic shape '" + name + "'");
}

PointCloud generate_synthetic(SyntheticShape shape, std::size_t n,
                              double density_contrast, std::uint64_t seed) {
  if (n < 8) throw ArgumentError("need n >= 8");
  if (density_contrast < 1.0) throw ArgumentError("density_contrast must be >= 1");
  Rng rng(seed);
  PointCloud pc;
  pc.coords.reserve(n);
  // The dense sub-region always covers 1/4 of the shape's measure, so
  // p_dense = contrast / (contrast + 3) reduces to uniform at contrast 1.
  const double p_dense = density_contrast / (density_contrast + 3.0);
  switch (shape) {
    case SyntheticShape::sphere_surface: {
      pc.source_id = "synthetic:sphere";
      for (std::size_t i = 0; i < n; ++i) {
        const bool dense = rng.uniform() < p_dense;
        // Polar cap cos(theta) in [0.5, 1] has 1/4 of the sphere's area.
        const double ct = dense ? rng.uniform(0.5, 1.0) : rng.uniform(-1.0, 0.5);
        const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
        const double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        pc.coords.push_back({0.5 + 0.5 * st * std::cos(phi),
                             0.5 + 0.5 * st * std::sin(phi), 0.5 + 0.5 * ct});
      }
      break;
    }
    case SyntheticShape::plane: {
      pc.source_id = "synthetic:plane";
      for (std::size_t i = 0; i < n; ++i) {
        const bool dense = rng.uniform() < p_dense;
        double x = rng.uniform();
        double y = rng.uniform();
        if (dense) {
          x *= 0.5;
          y *= 0.5;
        }
        pc.coords.push_back({x, y, 0.5});
      }
      break;
    }
    case SyntheticShape::gaussian_clusters: {
      pc.source_id = "synthetic:clusters";
      const Vec3 centers[4] = {{0.25, 0.25, 0.25},
                               {0.75, 0.3, 0.6},
                               {0.3, 0.75, 0.7},
                               {0.7, 0.7, 0.3}};
      const double sigma = 0.06;
      for (std::size_t i = 0; i < n; ++i) {
        const bool dense = rng.uniform() < p_dense;
        const std::size_t c =
            dense ? 0 : 1 + static_cast<std::size_t>(rng.uniform_index(3));
        Vec3 p;
        for (int a = 0; a < 3; ++a)
          p[a] = std::clamp(centers[c][a] + sigma * rng.normal(), 0.0, 1.0);
        pc.coords.push_back(p);
      }
      break;
    }
  }
  return pc;
}

}  // namespace prodat::io
