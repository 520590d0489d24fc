#ifndef PYRABOX_ANNOTATIONS_HPP_
#define PYRABOX_ANNOTATIONS_HPP_

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pyrabox/box.hpp"
#include "pyrabox/errors.hpp"

namespace pyrabox {

struct SampleRecord {
  std::string path;
  std::vector<BoxPx> faces;
};

namespace detail {

inline std::string fmt_real(double v) {
  // shortest representation that round-trips
  for (int prec = 0; prec <= 17; ++prec) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    if (std::stod(os.str()) == v) return os.str();
  }
  return std::to_string(v);
}

}  // namespace detail

// WIDER-style annotation text: repeated blocks of
//   <image path>
//   <face count>
//   count lines of "x y w h [attributes...]"
// A count of 0 still consumes one placeholder line. Attribute columns are
// parsed past and dropped.
inline std::vector<SampleRecord> parse_annotations(std::istream& in,
                                                   const std::string& origin = "<stream>") {
  std::vector<SampleRecord> out;
  std::string line;
  int lineno = 0;
  auto next_line = [&](std::string& dst) {
    while (std::getline(in, dst)) {
      ++lineno;
      if (!dst.empty() && dst.back() == '\r') dst.pop_back();
      return true;
    }
    return false;
  };
  while (next_line(line)) {
    if (line.empty()) continue;
    SampleRecord rec;
    rec.path = line;
    int path_line = lineno;
    std::string count_line;
    if (!next_line(count_line))
      throw parse_error(origin + ":" + std::to_string(path_line) + ": missing face count after image path");
    long count = -1;
    try {
      size_t pos = 0;
      count = std::stol(count_line, &pos);
      while (pos < count_line.size() && std::isspace(static_cast<unsigned char>(count_line[pos]))) ++pos;
      if (pos != count_line.size()) count = -1;
    } catch (const std::exception&) {
      count = -1;
    }
    if (count < 0)
      throw parse_error(origin + ":" + std::to_string(lineno) + ": malformed face count '" + count_line + "'");
    long to_read = count == 0 ? 1 : count;  // de-facto format: zero-face blocks carry one placeholder line
    for (long i = 0; i < to_read; ++i) {
      std::string face_line;
      if (!next_line(face_line))
        throw parse_error(origin + ":" + std::to_string(lineno) + ": truncated block, expected " +
                          std::to_string(to_read) + " face lines for '" + rec.path + "'");
      if (count == 0) break;
      std::istringstream fs(face_line);
      BoxPx b;
      if (!(fs >> b.x >> b.y >> b.w >> b.h))
        throw parse_error(origin + ":" + std::to_string(lineno) + ": malformed face line '" + face_line + "'");
      if (b.w < 0 || b.h < 0)
        throw parse_error(origin + ":" + std::to_string(lineno) + ": negative box extents in '" + face_line + "'");
      if (b.w == 0 || b.h == 0)
        throw parse_error(origin + ":" + std::to_string(lineno) + ": zero-area box in '" + face_line + "'");
      rec.faces.push_back(b);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<SampleRecord> parse_annotations_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw parse_error(path + ": cannot open");
  return parse_annotations(f, path);
}

inline void serialize_annotations(std::ostream& out, const std::vector<SampleRecord>& recs) {
  for (const auto& rec : recs) {
    out << rec.path << "\n" << rec.faces.size() << "\n";
    if (rec.faces.empty()) {
      out << "0 0 0 0\n";
      continue;
    }
    for (const auto& b : rec.faces)
      out << detail::fmt_real(b.x) << " " << detail::fmt_real(b.y) << " "
          << detail::fmt_real(b.w) << " " << detail::fmt_real(b.h) << "\n";
  }
}

inline void serialize_annotations_file(const std::string& path, const std::vector<SampleRecord>& recs) {
  std::ofstream f(path);
  if (!f) throw parse_error(path + ": cannot open for writing");
  serialize_annotations(f, recs);
}

}  // namespace pyrabox

#endif  // PYRABOX_ANNOTATIONS_HPP_
