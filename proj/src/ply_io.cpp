#include "imf/ply_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace imf {

void atomic_write(const std::string& path, const std::string& contents) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    require(out.good(), ErrorCategory::io, "cannot open ", tmp, " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    require(out.good(), ErrorCategory::io, "short write to ", tmp);
  }
  std::filesystem::rename(tmp, path);
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, int64_t offset,
                             const std::string& what) {
  raise(ErrorCategory::parse, path, ": ", what, " at byte ", offset);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCategory::io, "cannot open ", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Cursor {
  const std::string& data;
  const std::string& path;
  int64_t pos = 0;

  bool eof() const { return pos >= static_cast<int64_t>(data.size()); }
  // Next whitespace-delimited token.
  std::string token() {
    while (!eof() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (eof()) parse_fail(path, pos, "unexpected end of file");
    int64_t start = pos;
    while (!eof() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(start, pos - start);
  }
  std::string line() {
    int64_t start = pos;
    while (!eof() && data[pos] != '\n') ++pos;
    std::string s = data.substr(start, pos - start);
    if (!eof()) ++pos;
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
  }
};

}  // namespace

PointCloud ply_read(const std::string& path) {
  std::string data = read_file(path);
  Cursor cur{data, path};

  if (cur.line() != "ply") parse_fail(path, 0, "missing 'ply' magic");
  int64_t n_vertices = -1;
  std::vector<std::string> props;
  bool in_vertex_element = false;
  bool format_seen = false;
  while (true) {
    int64_t line_start = cur.pos;
    if (cur.eof()) parse_fail(path, line_start, "header without end_header");
    std::string line = cur.line();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "comment" || word.empty()) continue;
    if (word == "format") {
      std::string fmt, ver;
      ls >> fmt >> ver;
      if (fmt != "ascii" || ver != "1.0")
        parse_fail(path, line_start, "unsupported format '" + line + "'");
      format_seen = true;
    } else if (word == "element") {
      std::string kind;
      ls >> kind;
      if (kind == "vertex") {
        if (!(ls >> n_vertices) || n_vertices < 0)
          parse_fail(path, line_start, "bad vertex count");
        in_vertex_element = true;
      } else {
        in_vertex_element = false;
      }
    } else if (word == "property") {
      if (!in_vertex_element) continue;
      std::string type, name;
      ls >> type >> name;
      bool float_prop = type == "float" || type == "double" || type == "float32";
      bool uchar_prop = type == "uchar" || type == "uint8";
      bool coord = name == "x" || name == "y" || name == "z";
      bool color = name == "red" || name == "green" || name == "blue";
      if (!((float_prop && coord) || (uchar_prop && color)))
        parse_fail(path, line_start, "unsupported property '" + line + "'");
      props.push_back(name);
    } else if (word == "end_header") {
      break;
    } else {
      parse_fail(path, line_start, "unknown header keyword '" + word + "'");
    }
  }
  if (!format_seen) parse_fail(path, 0, "missing format line");
  if (n_vertices < 0) parse_fail(path, 0, "missing vertex element");
  for (const char* need : {"x", "y", "z", "red", "green", "blue"})
    if (std::find(props.begin(), props.end(), need) == props.end())
      parse_fail(path, 0, std::string("missing vertex property '") + need + "'");

  PointCloud cloud;
  cloud.xyz.resize(n_vertices);
  cloud.rgb.resize(n_vertices);
  for (int64_t i = 0; i < n_vertices; ++i) {
    for (const std::string& name : props) {
      int64_t tok_at = cur.pos;
      std::string tok = cur.token();
      char* end = nullptr;
      double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size())
        parse_fail(path, tok_at, "bad numeric value '" + tok + "'");
      if (name == "x") cloud.xyz[i][0] = v;
      else if (name == "y") cloud.xyz[i][1] = v;
      else if (name == "z") cloud.xyz[i][2] = v;
      else {
        if (v < 0 || v > 255 || v != std::floor(v))
          parse_fail(path, tok_at, "color out of range '" + tok + "'");
        int c = name == "red" ? 0 : name == "green" ? 1 : 2;
        cloud.rgb[i][c] = static_cast<uint8_t>(v);
      }
    }
  }
  return cloud;
}

void ply_write(const std::string& path, const PointCloud& cloud) {
  std::ostringstream out;
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << cloud.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  char buf[96];
  for (int64_t i = 0; i < cloud.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %d %d %d\n",
                  cloud.xyz[i][0], cloud.xyz[i][1], cloud.xyz[i][2],
                  cloud.rgb[i][0], cloud.rgb[i][1], cloud.rgb[i][2]);
    out << buf;
  }
  atomic_write(path, out.str());
}

Image ppm_read(const std::string& path) {
  std::string data = read_file(path);
  Cursor cur{data, path};
  // header tokens may be separated by whitespace and '#' comments
  auto header_token = [&]() {
    while (!cur.eof()) {
      char c = data[cur.pos];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++cur.pos;
      } else if (c == '#') {
        cur.line();
      } else {
        break;
      }
    }
    if (cur.eof()) parse_fail(path, cur.pos, "unexpected end of header");
    int64_t start = cur.pos;
    while (!cur.eof() && !std::isspace(static_cast<unsigned char>(data[cur.pos])))
      ++cur.pos;
    return data.substr(start, cur.pos - start);
  };

  if (header_token() != "P6") parse_fail(path, 0, "not a P6 PPM");
  auto to_int = [&](const std::string& tok, int64_t at) {
    char* end = nullptr;
    long v = std::strtol(tok.c_str(), &end, 10);
    if (end != tok.c_str() + tok.size() || v <= 0)
      parse_fail(path, at, "bad header integer '" + tok + "'");
    return static_cast<int>(v);
  };
  int64_t at = cur.pos;
  int w = to_int(header_token(), at);
  at = cur.pos;
  int h = to_int(header_token(), at);
  at = cur.pos;
  int maxval = to_int(header_token(), at);
  if (maxval != 255) parse_fail(path, at, "maxval must be 255");
  ++cur.pos;  // single whitespace after maxval

  int64_t need = static_cast<int64_t>(w) * h * 3;
  if (static_cast<int64_t>(data.size()) - cur.pos < need)
    parse_fail(path, data.size(), "truncated pixel data");

  require(w >= 8 && h >= 8, ErrorCategory::contract,
          "ppm_read: image smaller than 8x8");
  int w8 = w - w % 8, h8 = h - h % 8;
  int x0 = (w - w8) / 2, y0 = (h - h8) / 2;
  Image img;
  img.width = w8;
  img.height = h8;
  img.pixels.resize(static_cast<size_t>(w8) * h8 * 3);
  for (int y = 0; y < h8; ++y)
    for (int x = 0; x < w8; ++x)
      for (int c = 0; c < 3; ++c) {
        unsigned char byte = static_cast<unsigned char>(
            data[cur.pos + (static_cast<int64_t>(y + y0) * w + (x + x0)) * 3 + c]);
        img.at(y, x, c) = byte / 255.0;
      }
  return img;
}

void ppm_write(const std::string& path, const Image& img) {
  std::ostringstream out;
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (double v : img.pixels) {
    int byte = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out.put(static_cast<char>(byte));
  }
  atomic_write(path, out.str());
}

}  // namespace imf
