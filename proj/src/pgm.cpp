#include "psal/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "psal/error.hpp"

namespace psal {

std::uint8_t quantize(double u) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(u, 0.0, 1.0))); }

void write_pgm(const std::filesystem::path& path, const Grid& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << image.size() << " " << image.size() << "\n255\n";
  std::vector<char> bytes(image.numel());
  std::transform(image.values().begin(), image.values().end(), bytes.begin(),
                 [](double v) { return static_cast<char>(quantize(v)); });
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

// Header tokenizer that skips whitespace and '#' comments.
class HeaderReader {
 public:
  HeaderReader(const std::string& buf, const std::filesystem::path& path) : buf_(buf), path_(path) {}

  std::string token() {
    skip();
    const std::size_t start = pos_;
    while (pos_ < buf_.size() && !std::isspace(static_cast<unsigned char>(buf_[pos_]))) ++pos_;
    if (start == pos_) throw CorruptionError(path_.string() + ": truncated PGM header");
    return buf_.substr(start, pos_ - start);
  }

  long number() {
    const auto t = token();
    if (!std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      throw CorruptionError(path_.string() + ": bad PGM header field '" + t + "'");
    return std::stol(t);
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }

 private:
  void skip() {
    while (pos_ < buf_.size()) {
      if (buf_[pos_] == '#') {
        while (pos_ < buf_.size() && buf_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(buf_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& buf_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

Grid read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  HeaderReader header(buf, path);
  const auto magic = header.token();
  if (magic != "P5" && magic != "P2") throw CorruptionError(path.string() + ": not a PGM file (magic " + magic + ")");
  const long width = header.number(), height = header.number(), maxval = header.number();
  if (width <= 0 || height <= 0) throw CorruptionError(path.string() + ": non-positive image dimensions");
  if (maxval <= 0 || maxval > 255) throw CompatibilityError(path.string() + ": only 8-bit PGM is supported");
  if (width != height)
    throw DimensionError(path.string() + ": expected a square image, got " + std::to_string(width) + "x" +
                         std::to_string(height));

  const auto count = static_cast<std::size_t>(width * height);
  std::vector<double> values(count);
  const double scale = static_cast<double>(maxval);
  if (magic == "P5") {
    header.advance();  // the single whitespace byte after maxval
    if (buf.size() < header.pos() + count) throw CorruptionError(path.string() + ": truncated pixel data");
    for (std::size_t i = 0; i < count; ++i)
      values[i] = static_cast<unsigned char>(buf[header.pos() + i]) / scale;
  } else {
    for (auto& v : values) {
      const long p = header.number();
      if (p > maxval) throw CorruptionError(path.string() + ": pixel exceeds maxval");
      v = static_cast<double>(p) / scale;
    }
  }
  return Grid(static_cast<std::size_t>(width), std::move(values));
}

}  // namespace psal
