#include "advq/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace advq {

namespace {

uint32_t crc32_table_entry(uint32_t i) {
  uint32_t c = i;
  for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
  return c;
}

uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0xffffffffu) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) table[i] = crc32_table_entry(i);
    init = true;
  }
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc;
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(v >> 24);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back(v & 0xff);
}

void put_chunk(std::ofstream& os, const char type[4], const std::vector<uint8_t>& payload) {
  std::vector<uint8_t> buf;
  put_be32(buf, static_cast<uint32_t>(payload.size()));
  buf.insert(buf.end(), type, type + 4);
  buf.insert(buf.end(), payload.begin(), payload.end());
  const uint32_t crc = ~crc32(buf.data() + 4, buf.size() - 4);
  put_be32(buf, crc);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

// zlib stream with stored (uncompressed) deflate blocks
std::vector<uint8_t> zlib_stored(const std::vector<uint8_t>& raw) {
  std::vector<uint8_t> out;
  out.push_back(0x78);  // CMF
  out.push_back(0x01);  // FLG (no preset dict, fastest)
  size_t pos = 0;
  while (pos < raw.size() || raw.empty()) {
    const size_t take = std::min<size_t>(65535, raw.size() - pos);
    const bool last = pos + take >= raw.size();
    out.push_back(last ? 1 : 0);
    out.push_back(take & 0xff);
    out.push_back((take >> 8) & 0xff);
    out.push_back(~take & 0xff);
    out.push_back((~take >> 8) & 0xff);
    out.insert(out.end(), raw.begin() + pos, raw.begin() + pos + take);
    pos += take;
    if (last) break;
  }
  uint32_t a = 1, b = 0;
  for (uint8_t v : raw) {
    a = (a + v) % 65521;
    b = (b + a) % 65521;
  }
  put_be32(out, (b << 16) | a);
  return out;
}

}  // namespace

void write_png_gray(const std::string& path, const std::vector<uint8_t>& pixels, int width,
                    int height) {
  if (width < 1 || height < 1 || pixels.size() != static_cast<size_t>(width) * height) {
    throw Error("png-invalid", "pixel buffer does not match " + std::to_string(width) + "x" +
                                   std::to_string(height));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("io", "cannot open " + path + " for writing");
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr;
  put_be32(ihdr, static_cast<uint32_t>(width));
  put_be32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // no interlace
  put_chunk(os, "IHDR", ihdr);

  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(height) * (width + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter none
    raw.insert(raw.end(), pixels.begin() + static_cast<size_t>(y) * width,
               pixels.begin() + static_cast<size_t>(y + 1) * width);
  }
  put_chunk(os, "IDAT", zlib_stored(raw));
  put_chunk(os, "IEND", {});
  if (!os) throw Error("io", "png write failed: " + path);
}

void write_image_grid(const std::string& path, const Tensor& images, const Normalization& norm,
                      int columns, int separator) {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != 1) {
    throw Error("png-invalid", "write_image_grid expects [n,1,h,w], got " + Tensor::shape_str(s));
  }
  Tensor raw = denormalize(images, norm);
  const int n = s[0], h = s[2], w = s[3];
  const int cols = std::min(columns, n);
  const int rows = (n + cols - 1) / cols;
  const int gw = cols * w + (cols - 1) * separator;
  const int gh = rows * h + (rows - 1) * separator;
  std::vector<uint8_t> grid(static_cast<size_t>(gw) * gh, 32);
  auto p = raw.data();
  for (int i = 0; i < n; ++i) {
    const int gx = (i % cols) * (w + separator);
    const int gy = (i / cols) * (h + separator);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = std::clamp(p[(static_cast<int64_t>(i) * h + y) * w + x], 0.0, 1.0);
        grid[static_cast<size_t>(gy + y) * gw + gx + x] = static_cast<uint8_t>(std::lround(v * 255));
      }
  }
  write_png_gray(path, grid, gw, gh);
}

void write_activation_grid(const std::string& path, const Tensor& activation, int columns) {
  const auto& s = activation.shape();
  int c = 1, h = 1, w = 1;
  if (s.size() == 3) {
    c = s[0];
    h = s[1];
    w = s[2];
  } else if (s.size() == 4 && s[0] == 1) {
    c = s[1];
    h = s[2];
    w = s[3];
  } else if (s.size() == 2 && s[0] == 1) {
    c = 1;
    h = 1;
    w = s[1];
  } else {
    throw Error("png-invalid", "write_activation_grid expects [c,h,w], got " + Tensor::shape_str(s));
  }
  auto p = activation.data();
  double lo = p[0], hi = p[0];
  for (double v : p) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
  const int cols = std::min(columns, c);
  const int rows = (c + cols - 1) / cols;
  const int sep = 2;
  const int gw = cols * w + (cols - 1) * sep;
  const int gh = rows * h + (rows - 1) * sep;
  std::vector<uint8_t> grid(static_cast<size_t>(gw) * gh, 32);
  for (int i = 0; i < c; ++i) {
    const int gx = (i % cols) * (w + sep);
    const int gy = (i / cols) * (h + sep);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = (p[(static_cast<int64_t>(i) * h + y) * w + x] - lo) / span;
        grid[static_cast<size_t>(gy + y) * gw + gx + x] = static_cast<uint8_t>(std::lround(v * 255));
      }
  }
  write_png_gray(path, grid, gw, gh);
}

void SvgChart::add_series(const std::string& name, const std::vector<double>& xs,
                          const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.empty()) {
    throw Error("chart-invalid", "series '" + name + "' needs matching non-empty x/y");
  }
  series_.push_back({name, xs, ys});
}

void SvgChart::write(const std::string& path) const {
  if (series_.empty()) throw Error("chart-invalid", "no series to plot");
  const int W = 640, H = 400, ml = 60, mr = 150, mt = 40, mb = 50;
  double x0 = series_[0].xs[0], x1 = x0, y0 = series_[0].ys[0], y1 = y0;
  for (const auto& s : series_) {
    for (double v : s.xs) {
      x0 = std::min(x0, v);
      x1 = std::max(x1, v);
    }
    for (double v : s.ys) {
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
  }
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) y1 = y0 + 1;
  const double xpad = 0.04 * (x1 - x0), ypad = 0.08 * (y1 - y0);
  x0 -= xpad; x1 += xpad; y0 -= ypad; y1 += ypad;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ofstream os(path);
  if (!os) throw Error("io", "cannot open " + path + " for writing");
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title_ << "</text>\n";
  // axes
  os << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
     << "' stroke='black'/>\n";
  os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
     << "' stroke='black'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    char bx[32], by[32];
    std::snprintf(bx, sizeof bx, "%.3g", xv);
    std::snprintf(by, sizeof by, "%.3g", yv);
    os << "<text x='" << px(xv) << "' y='" << H - mb + 18 << "' text-anchor='middle' font-size='11'>"
       << bx << "</text>\n";
    os << "<text x='" << ml - 6 << "' y='" << py(yv) + 4 << "' text-anchor='end' font-size='11'>"
       << by << "</text>\n";
  }
  os << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 12
     << "' text-anchor='middle' font-size='12'>" << x_label_ << "</text>\n";
  os << "<text x='16' y='" << (mt + H - mb) / 2 << "' text-anchor='middle' font-size='12' "
     << "transform='rotate(-90 16 " << (mt + H - mb) / 2 << ")'>" << y_label_ << "</text>\n";
  for (size_t si = 0; si < series_.size(); ++si) {
    const auto& s = series_[si];
    const char* color = colors[si % 6];
    os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.8' points='";
    for (size_t i = 0; i < s.xs.size(); ++i) os << px(s.xs[i]) << "," << py(s.ys[i]) << " ";
    os << "'/>\n";
    for (size_t i = 0; i < s.xs.size(); ++i) {
      os << "<circle cx='" << px(s.xs[i]) << "' cy='" << py(s.ys[i]) << "' r='2.6' fill='" << color
         << "'/>\n";
    }
    const int ly = mt + 16 + static_cast<int>(si) * 18;
    os << "<line x1='" << W - mr + 10 << "' y1='" << ly << "' x2='" << W - mr + 34 << "' y2='" << ly
       << "' stroke='" << color << "' stroke-width='2'/>\n";
    os << "<text x='" << W - mr + 40 << "' y='" << ly + 4 << "' font-size='12'>" << s.name
       << "</text>\n";
  }
  os << "</svg>\n";
  if (!os) throw Error("io", "svg write failed: " + path);
}

}  // namespace advq
