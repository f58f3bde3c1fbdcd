#include "sdn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "sdn/error.hpp"

namespace sdn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string::size_type start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

bool try_parse_double(const std::string& text, double& out) {
  const char* b = text.data();
  const char* e = b + text.size();
  if (b != e && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e && b != e;
}

int parse_int(const std::string& text, const std::string& what, int line) {
  int v = 0;
  const std::string t = trim(text);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw NumberError("bad integer '" + text + "' for " + what, line);
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

double parse_double(const std::string& text) {
  double v = 0;
  if (!try_parse_double(trim(text), v)) throw ValidationError("not a number: '" + text + "'");
  return v;
}

BBox BBox::parse(const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != 4) throw ValidationError("bounding box must be x,y,w,h: '" + text + "'");
  BBox b;
  double* fields[] = {&b.x, &b.y, &b.w, &b.h};
  for (std::size_t i = 0; i < 4; ++i)
    if (!try_parse_double(trim(parts[i]), *fields[i]) || !std::isfinite(*fields[i]))
      throw ValidationError("bounding box must be x,y,w,h: '" + text + "'");
  if (b.w <= 0 || b.h <= 0) throw ValidationError("bounding box needs w > 0 and h > 0: '" + text + "'");
  return b;
}

// ---------------------------------------------------------------------------
// pts

LandmarkSet parse_pts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pts file " + path.string());

  int declared = -1;
  bool in_body = false, closed = false;
  std::vector<Eigen::Vector2d> pts;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (closed) throw HeaderError("content after closing brace", line_no);
    if (!in_body) {
      if (line == "{") {
        if (declared < 0) throw HeaderError("missing n_points before '{'", line_no);
        in_body = true;
      } else if (line.rfind("version:", 0) == 0) {
        // value is informational
      } else if (line.rfind("n_points:", 0) == 0) {
        declared = parse_int(line.substr(9), "n_points", line_no);
        if (declared < 1) throw HeaderError("n_points must be >= 1", line_no);
      } else {
        throw HeaderError("unexpected header line '" + line + "'", line_no);
      }
      continue;
    }
    if (line == "}") {
      closed = true;
      continue;
    }
    std::istringstream fields(line);
    std::string xs, ys, extra;
    fields >> xs >> ys;
    double x = 0, y = 0;
    if (!try_parse_double(xs, x) || !try_parse_double(ys, y) || (fields >> extra))
      throw NumberError("expected 'x y', got '" + line + "'", line_no);
    pts.emplace_back(x, y);
  }
  if (!in_body) throw HeaderError("missing '{'", line_no);
  if (!closed) throw HeaderError("missing closing '}'", line_no);
  if (static_cast<int>(pts.size()) != declared)
    throw CountMismatchError("n_points is " + std::to_string(declared) + " but " + std::to_string(pts.size()) +
                                 " points follow",
                             line_no);

  LandmarkSet set;
  set.points.resize(2, declared);
  for (int i = 0; i < declared; ++i) set.points.col(i) = pts[static_cast<std::size_t>(i)];
  return set;
}

void write_pts(const std::filesystem::path& path, const LandmarkSet& landmarks) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "version: 1\nn_points: " << landmarks.size() << "\n{\n";
  for (int i = 0; i < landmarks.size(); ++i)
    out << format_double(landmarks.points(0, i)) << " " << format_double(landmarks.points(1, i)) << "\n";
  out << "}\n";
}

// ---------------------------------------------------------------------------
// Crops

Eigen::Affine2d crop_transform_for(const FaceSample& sample, const BBox& box) {
  Eigen::Affine2d box_map = Eigen::Affine2d::Identity();
  box_map.translate(Eigen::Vector2d(box.x, box.y)).scale(Eigen::Vector2d(box.w, box.h));
  return sample.warp * box_map;
}

NormalizedInput load_gray_crop(const FaceSample& sample, const BBox& box, int side) {
  if (box.w <= 0 || box.h <= 0) throw ValidationError("crop box of " + sample.id + " has zero area");
  std::shared_ptr<const GrayImage> image = sample.image;
  if (!image) image = std::make_shared<const GrayImage>(read_image(sample.image_path));

  NormalizedInput out;
  out.crop_transform = crop_transform_for(sample, box);

  // The box must overlap the image somewhere.
  Eigen::Matrix<double, 2, 4> corners;
  corners << 0, 1, 0, 1, 0, 0, 1, 1;
  const Eigen::Matrix<double, 2, 4> mapped = out.crop_transform * corners;
  const double x0 = std::max(0.0, mapped.row(0).minCoeff());
  const double x1 = std::min(double(image->cols()), mapped.row(0).maxCoeff());
  const double y0 = std::max(0.0, mapped.row(1).minCoeff());
  const double y1 = std::min(double(image->rows()), mapped.row(1).maxCoeff());
  if (!(x1 > x0 && y1 > y0)) throw ValidationError("crop box of " + sample.id + " does not intersect its image");

  out.pixels = Tensor({1, side, side});
  double sum = 0.0;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const Eigen::Vector2d p = out.crop_transform * Eigen::Vector2d((c + 0.5) / side, (r + 0.5) / side);
      const float v = sample_bilinear(*image, p.x(), p.y());
      out.pixels.at(0, r, c) = v;
      sum += v;
    }
  out.subtracted_mean = static_cast<float>(sum / (double(side) * side));
  out.pixels.values().array() -= out.subtracted_mean;
  return out;
}

LandmarkSet to_crop_frame(const LandmarkSet& landmarks, const Eigen::Affine2d& crop_transform) {
  if (landmarks.frame != CoordinateFrame::ImagePixels)
    throw ValidationError("to_crop_frame expects landmarks in image pixels");
  return {crop_transform.inverse(Eigen::Affine) * landmarks.points, CoordinateFrame::CropUnit};
}

LandmarkSet from_crop_frame(const LandmarkSet& landmarks, const Eigen::Affine2d& crop_transform) {
  if (landmarks.frame != CoordinateFrame::CropUnit)
    throw ValidationError("from_crop_frame expects crop-relative landmarks");
  return {crop_transform * landmarks.points, CoordinateFrame::ImagePixels};
}

BBox tight_box(const LandmarkSet& landmarks, double margin) {
  if (landmarks.size() < 1) throw ValidationError("tight_box needs at least one landmark");
  const Eigen::Vector2d lo = landmarks.points.rowwise().minCoeff();
  const Eigen::Vector2d hi = landmarks.points.rowwise().maxCoeff();
  const double w = std::max(hi.x() - lo.x(), 1.0), h = std::max(hi.y() - lo.y(), 1.0);
  return {lo.x() - margin * w, lo.y() - margin * h, w * (1 + 2 * margin), h * (1 + 2 * margin)};
}

// ---------------------------------------------------------------------------
// Manifest

std::vector<int> DatasetManifest::permutation() const {
  if (!mirror_perm.empty()) return mirror_perm;
  std::vector<int> id(static_cast<std::size_t>(n_landmarks));
  for (int i = 0; i < n_landmarks; ++i) id[static_cast<std::size_t>(i)] = i;
  return id;
}

std::filesystem::path DatasetManifest::resolve(const std::string& path) const {
  std::filesystem::path p(path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

void DatasetManifest::validate() const {
  if (n_landmarks < 1) throw ValidationError("manifest: n_landmarks must be >= 1");
  if (left_eye < 0 || left_eye >= n_landmarks || right_eye < 0 || right_eye >= n_landmarks)
    throw ValidationError("manifest: eye indices must be < n_landmarks");
  if (left_eye == right_eye) throw ValidationError("manifest: left_eye and right_eye must differ");
  if (!mirror_perm.empty()) {
    if (static_cast<int>(mirror_perm.size()) != n_landmarks)
      throw ValidationError("manifest: mirror_perm has " + std::to_string(mirror_perm.size()) +
                            " entries, n_landmarks is " + std::to_string(n_landmarks));
    for (int i = 0; i < n_landmarks; ++i) {
      const int j = mirror_perm[static_cast<std::size_t>(i)];
      if (j < 0 || j >= n_landmarks) throw ValidationError("manifest: mirror_perm index out of range");
      if (mirror_perm[static_cast<std::size_t>(j)] != i)
        throw ValidationError("manifest: mirror_perm is not an involution at index " + std::to_string(i));
    }
  }
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.id).second) throw ValidationError("manifest: duplicate sample id '" + e.id + "'");
    if (e.landmarks.size() != n_landmarks)
      throw ValidationError("manifest: entry '" + e.id + "' has " + std::to_string(e.landmarks.size()) +
                            " landmarks, expected " + std::to_string(n_landmarks));
  }
}

namespace {

std::string format_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

Eigen::Affine2d parse_warp(const std::string& text, int line) {
  const auto parts = split(text, ',');
  if (parts.size() != 6) throw NumberError("warp needs 6 numbers", line);
  Eigen::Affine2d w = Eigen::Affine2d::Identity();
  for (int i = 0; i < 6; ++i) {
    double v = 0;
    if (!try_parse_double(parts[static_cast<std::size_t>(i)], v)) throw NumberError("bad warp value", line);
    w.matrix()(i / 3, i % 3) = v;
  }
  return w;
}

LandmarkSet parse_inline(const std::string& text, int line) {
  const auto pts = split(text, ';');
  LandmarkSet set;
  set.points.resize(2, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto xy = split(pts[i], ',');
    double x = 0, y = 0;
    if (xy.size() != 2 || !try_parse_double(xy[0], x) || !try_parse_double(xy[1], y))
      throw NumberError("bad inline landmark '" + pts[i] + "'", line);
    set.points.col(static_cast<Eigen::Index>(i)) << x, y;
  }
  return set;
}

}  // namespace

DatasetManifest read_manifest(const std::filesystem::path& path, const ManifestReadOptions& options,
                              std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  bool have_n = false;
  std::set<std::string> ids;

  auto missing = [&](const std::string& what) {
    if (!options.lenient) throw ValidationError(what);
    if (warnings) warnings->push_back(what);
  };

  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (trim(raw).empty()) continue;
    if (raw[0] == '#') {
      const auto eq = raw.find('=');
      if (eq == std::string::npos) continue;  // comment
      const std::string key = raw.substr(1, eq - 1), value = raw.substr(eq + 1);
      if (key == "n_landmarks") {
        m.n_landmarks = parse_int(value, key, line_no);
        have_n = true;
      } else if (key == "left_eye") {
        m.left_eye = parse_int(value, key, line_no);
      } else if (key == "right_eye") {
        m.right_eye = parse_int(value, key, line_no);
      } else if (key == "mirror_perm") {
        m.mirror_perm.clear();
        for (const auto& item : split(value, ',')) m.mirror_perm.push_back(parse_int(item, key, line_no));
      }
      continue;
    }

    const auto cols = split(raw, '\t');
    if (cols.size() != 5) throw HeaderError("manifest record needs 5 tab-separated fields", line_no);
    FaceSample s;
    s.id = cols[0];
    s.image_path = cols[1];
    try {
      s.bbox = BBox::parse(cols[2]);
    } catch (const ValidationError& e) {
      throw NumberError(e.what(), line_no);
    }
    if (!ids.insert(s.id).second)
      throw ValidationError("manifest " + path.string() + ": duplicate sample id '" + s.id + "' (line " +
                            std::to_string(line_no) + ")");

    if (cols[4] != "-") {
      for (const auto& kv : split(cols[4], ';')) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw HeaderError("tag '" + kv + "' is not key=value", line_no);
        const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
        if (key == "warp") s.warp = parse_warp(value, line_no);
        else s.tags[key] = value;
      }
    }

    if (options.check_images && !s.image && !std::filesystem::exists(m.resolve(s.image_path))) {
      missing("manifest entry '" + s.id + "': image " + s.image_path + " not found");
      continue;
    }
    if (cols[3].rfind("inline:", 0) == 0) {
      s.landmarks = parse_inline(cols[3].substr(7), line_no);
    } else {
      s.landmark_path = cols[3];
      const auto pts = m.resolve(s.landmark_path);
      if (!std::filesystem::exists(pts)) {
        missing("manifest entry '" + s.id + "': landmark file " + s.landmark_path + " not found");
        continue;
      }
      s.landmarks = parse_pts(pts);
    }
    m.entries.push_back(std::move(s));
  }
  if (!have_n) throw HeaderError("manifest is missing #n_landmarks", line_no);
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  manifest.validate();
  std::ostringstream os;
  os << "#n_landmarks=" << manifest.n_landmarks << "\n"
     << "#left_eye=" << manifest.left_eye << "\n"
     << "#right_eye=" << manifest.right_eye << "\n";
  if (!manifest.mirror_perm.empty()) os << "#mirror_perm=" << format_list(manifest.mirror_perm) << "\n";

  auto check_field = [](const std::string& v, const std::string& what) {
    if (v.empty() || v.find_first_of("\t\n\r") != std::string::npos)
      throw ValidationError("manifest: " + what + " '" + v + "' is empty or contains tabs/newlines");
  };
  for (const auto& s : manifest.entries) {
    check_field(s.id, "sample id");
    check_field(s.image_path, "image path");
    os << s.id << "\t" << s.image_path << "\t" << format_double(s.bbox.x) << "," << format_double(s.bbox.y) << ","
       << format_double(s.bbox.w) << "," << format_double(s.bbox.h) << "\t";
    if (!s.landmark_path.empty()) {
      check_field(s.landmark_path, "landmark path");
      os << s.landmark_path;
    } else {
      os << "inline:";
      for (int i = 0; i < s.landmarks.size(); ++i)
        os << (i ? ";" : "") << format_double(s.landmarks.points(0, i)) << ","
           << format_double(s.landmarks.points(1, i));
    }
    os << "\t";
    std::string tags;
    if (!s.warp.matrix().isIdentity(0.0)) {
      tags = "warp=";
      for (int i = 0; i < 6; ++i) tags += (i ? "," : "") + format_double(s.warp.matrix()(i / 3, i % 3));
    }
    for (const auto& [k, v] : s.tags) {
      if (k.empty() || k == "warp" || (k + v).find_first_of(";=\t\n\r") != std::string::npos)
        throw ValidationError("manifest: tag '" + k + "=" + v + "' of '" + s.id + "' cannot be serialized");
      tags += (tags.empty() ? "" : ";") + k + "=" + v;
    }
    os << (tags.empty() ? "-" : tags) << "\n";
  }

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    const std::string text = os.str();
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void attach_images(DatasetManifest& manifest, ImageCache& cache) {
  for (auto& s : manifest.entries)
    if (!s.image) s.image = cache.get(manifest.resolve(s.image_path));
}

std::vector<int> mirror_permutation_68() {
  std::vector<int> p(68);
  for (int i = 0; i < 68; ++i) p[static_cast<std::size_t>(i)] = i;
  auto swap = [&](int a, int b) {
    p[static_cast<std::size_t>(a)] = b;
    p[static_cast<std::size_t>(b)] = a;
  };
  for (int i = 0; i < 8; ++i) swap(i, 16 - i);         // jaw
  for (int i = 0; i < 5; ++i) swap(17 + i, 26 - i);    // brows
  swap(31, 35), swap(32, 34);                          // nostrils
  swap(36, 45), swap(37, 44), swap(38, 43), swap(39, 42), swap(40, 47), swap(41, 46);  // eyes
  swap(48, 54), swap(49, 53), swap(50, 52), swap(55, 59), swap(56, 58);                // outer lip
  swap(60, 64), swap(61, 63), swap(65, 67);                                            // inner lip
  return p;
}

}  // namespace sdn
