#include "sdn/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <vector>

#include "sdn/error.hpp"

#ifdef SDN_HAVE_OPENCV
#include <opencv2/imgcodecs.hpp>
#endif

namespace sdn {

namespace {

// Netpbm header tokens are whitespace separated; '#' starts a comment.
int read_header_int(std::istream& in, const std::filesystem::path& path) {
  int c = in.peek();
  while (in && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int v = -1;
  if (!(in >> v) || v < 0) throw IoError("bad netpbm header in " + path.string());
  return v;
}

GrayImage read_netpbm(std::ifstream& in, const std::filesystem::path& path) {
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '2' && magic[1] != '3' && magic[1] != '5' && magic[1] != '6'))
    throw IoError("not a PGM/PPM file: " + path.string());
  const bool color = magic[1] == '3' || magic[1] == '6';
  const bool binary = magic[1] == '5' || magic[1] == '6';
  const int width = read_header_int(in, path);
  const int height = read_header_int(in, path);
  const int maxval = read_header_int(in, path);
  if (width < 1 || height < 1 || maxval < 1 || maxval > 65535)
    throw IoError("bad netpbm dimensions in " + path.string());

  const int channels = color ? 3 : 1;
  const std::size_t count = std::size_t(width) * height * channels;
  std::vector<float> raw(count);
  if (binary) {
    in.get();  // single whitespace after maxval
    const int bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> buf(count * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw IoError("truncated pixel data in " + path.string());
    for (std::size_t i = 0; i < count; ++i)
      raw[i] = bytes == 1 ? buf[i] : float((buf[2 * i] << 8) | buf[2 * i + 1]);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      int v;
      if (!(in >> v)) throw IoError("truncated pixel data in " + path.string());
      raw[i] = float(v);
    }
  }

  GrayImage img(height, width);
  const float scale = 1.0f / float(maxval);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const std::size_t i = (std::size_t(r) * width + c) * channels;
      img(r, c) = color ? gray_from_rgb(raw[i] * scale, raw[i + 1] * scale, raw[i + 2] * scale) : raw[i] * scale;
    }
  return img;
}

}  // namespace

GrayImage read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  if (in.peek() == 'P') return read_netpbm(in, path);
#ifdef SDN_HAVE_OPENCV
  in.close();
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image " + path.string());
  GrayImage img(bgr.rows, bgr.cols);
  for (int r = 0; r < bgr.rows; ++r)
    for (int c = 0; c < bgr.cols; ++c) {
      const auto px = bgr.at<cv::Vec3b>(r, c);
      img(r, c) = gray_from_rgb(px[2] / 255.0f, px[1] / 255.0f, px[0] / 255.0f);
    }
  return img;
#else
  throw IoError("unsupported image format (only PGM/PPM without OpenCV): " + path.string());
#endif
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(image.size()));
  for (Eigen::Index i = 0; i < image.size(); ++i)
    buf[static_cast<std::size_t>(i)] =
        static_cast<unsigned char>(std::lround(std::clamp(image.data()[i], 0.0f, 1.0f) * 255.0f));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

float sample_bilinear(const GrayImage& image, double x, double y) {
  const Eigen::Index h = image.rows(), w = image.cols();
  // Index space: pixel centers at integers.
  const double fx = x - 0.5, fy = y - 0.5;
  const double x0f = std::floor(fx), y0f = std::floor(fy);
  const double ax = fx - x0f, ay = fy - y0f;
  auto clamp_index = [](double v, Eigen::Index n) {
    return static_cast<Eigen::Index>(std::clamp(v, 0.0, double(n - 1)));
  };
  const Eigen::Index x0 = clamp_index(x0f, w), x1 = clamp_index(x0f + 1, w);
  const Eigen::Index y0 = clamp_index(y0f, h), y1 = clamp_index(y0f + 1, h);
  const double top = (1 - ax) * image(y0, x0) + ax * image(y0, x1);
  const double bottom = (1 - ax) * image(y1, x0) + ax * image(y1, x1);
  return static_cast<float>((1 - ay) * top + ay * bottom);
}

std::shared_ptr<const GrayImage> ImageCache::get(const std::filesystem::path& path) {
  const std::string key = path.lexically_normal().string();
  {
    std::lock_guard lock(mutex_);
    if (auto it = images_.find(key); it != images_.end()) return it->second;
  }
  auto img = std::make_shared<const GrayImage>(read_image(path));
  std::lock_guard lock(mutex_);
  return images_.emplace(key, std::move(img)).first->second;
}

std::size_t ImageCache::size() const {
  std::lock_guard lock(mutex_);
  return images_.size();
}

}  // namespace sdn
