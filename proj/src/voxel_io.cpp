#include "mrisr/voxel_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mrisr {
namespace fs = std::filesystem;

namespace {

fs::path with_suffix(const fs::path& base, const char* suffix) {
  return fs::path(base.string() + suffix);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + p.string());
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + p.string());
}

void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32le(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void LabelVolume::validate() const {
  if (static_cast<std::int64_t>(labels.size()) != size())
    throw ValidationError("label count does not match label grid shape");
  for (std::uint16_t l : labels)
    if (l >= n_classes)
      throw ValidationError("label " + std::to_string(l) + " out of range for " + std::to_string(n_classes) +
                            " classes");
}

Volume normalize_minmax(const Volume& v) {
  Volume out = v;
  if (v.size() == 0) return out;
  const float lo = v.data.minCoeff();
  const float hi = v.data.maxCoeff();
  if (!(hi > lo)) {
    out.data.setZero();
    return out;
  }
  out.data = (v.data - lo) / (hi - lo);
  return out;
}

bool bitwise_equal(const Volume& a, const Volume& b) {
  if (a.shape != b.shape || a.spacing != b.spacing || a.data.size() != b.data.size()) return false;
  return std::memcmp(a.data.data(), b.data.data(), sizeof(float) * static_cast<std::size_t>(a.data.size())) == 0;
}

fs::path volume_base_path(const fs::path& p) {
  const std::string s = p.string();
  for (const char* suffix : {".labels.raw", ".meta", ".raw"}) {
    const std::size_t n = std::strlen(suffix);
    if (s.size() > n && s.compare(s.size() - n, n, suffix) == 0) return fs::path(s.substr(0, s.size() - n));
  }
  return p;
}

void write_volume(const Volume& vol, const fs::path& base) {
  if (vol.data.size() != vol.size())
    throw ValidationError("volume payload length does not match its shape");
  if (!vol.all_finite()) throw ValidationError("refusing to write non-finite volume to " + base.string());

  std::string raw;
  raw.reserve(static_cast<std::size_t>(vol.size()) * 4);
  for (Eigen::Index i = 0; i < vol.data.size(); ++i) put_u32le(raw, std::bit_cast<std::uint32_t>(vol.data[i]));

  std::ostringstream meta;
  meta << "version=" << kVolumeFormatVersion << "\n";
  meta << "shape=" << vol.shape[0] << "," << vol.shape[1] << "," << vol.shape[2] << "\n";
  meta << "spacing=" << format_double(vol.spacing[0]) << "," << format_double(vol.spacing[1]) << ","
       << format_double(vol.spacing[2]) << "\n";
  meta << "dtype=" << kVolumeDtype << "\n";

  write_file(with_suffix(base, ".raw"), raw);
  write_file(with_suffix(base, ".meta"), meta.str());
}

VolumeHeader read_volume_header(const fs::path& base) {
  const fs::path meta_path = with_suffix(base, ".meta");
  const std::string text = read_file(meta_path);
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(meta_path.string() + ": malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key : {"version", "shape", "spacing", "dtype"})
    if (!kv.count(key)) throw FormatError(meta_path.string() + ": missing key '" + key + "'");
  if (kv["version"] != kVolumeFormatVersion)
    throw UnsupportedFormatError(meta_path.string() + ": unsupported version '" + kv["version"] + "'");
  if (kv["dtype"] != kVolumeDtype)
    throw UnsupportedFormatError(meta_path.string() + ": unsupported dtype '" + kv["dtype"] + "'");

  VolumeHeader h;
  const auto shape = split(kv["shape"], ',');
  const auto spacing = split(kv["spacing"], ',');
  if (shape.size() != 3 || spacing.size() != 3) throw FormatError(meta_path.string() + ": expected 3 extents");
  try {
    for (int i = 0; i < 3; ++i) {
      std::size_t used = 0;
      h.shape[i] = std::stoi(shape[i], &used);
      if (used != shape[i].size() || h.shape[i] <= 0) throw FormatError("bad extent");
      h.spacing[i] = std::stod(spacing[i], &used);
      if (used != spacing[i].size() || !(h.spacing[i] > 0.0)) throw FormatError("bad spacing");
    }
  } catch (const std::logic_error&) {
    throw FormatError(meta_path.string() + ": unparsable shape or spacing");
  } catch (const FormatError& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
  return h;
}

Volume read_volume(const fs::path& base) {
  const VolumeHeader h = read_volume_header(base);
  const fs::path raw_path = with_suffix(base, ".raw");
  const std::string raw = read_file(raw_path);
  const std::int64_t n = voxel_count(h.shape);
  if (static_cast<std::int64_t>(raw.size()) != n * 4)
    throw FormatError(raw_path.string() + ": expected " + std::to_string(n * 4) + " bytes, found " +
                      std::to_string(raw.size()));
  Volume vol(h.shape, h.spacing);
  for (std::int64_t i = 0; i < n; ++i) vol.data[i] = std::bit_cast<float>(get_u32le(raw.data() + 4 * i));
  return vol;
}

void write_labels(const LabelVolume& labels, const fs::path& base) {
  labels.validate();
  std::string raw;
  raw.reserve(labels.labels.size() * 2);
  for (std::uint16_t l : labels.labels) {
    raw.push_back(static_cast<char>(l & 0xFF));
    raw.push_back(static_cast<char>(l >> 8));
  }
  write_file(with_suffix(base, ".labels.raw"), raw);
}

LabelVolume read_labels(const fs::path& base, int n_classes) {
  const VolumeHeader h = read_volume_header(base);
  const fs::path raw_path = with_suffix(base, ".labels.raw");
  const std::string raw = read_file(raw_path);
  const std::int64_t n = voxel_count(h.shape);
  if (static_cast<std::int64_t>(raw.size()) != n * 2)
    throw FormatError(raw_path.string() + ": expected " + std::to_string(n * 2) + " bytes, found " +
                      std::to_string(raw.size()));
  LabelVolume out(h.shape, n_classes);
  for (std::int64_t i = 0; i < n; ++i) {
    out.labels[i] = static_cast<std::uint16_t>(static_cast<unsigned char>(raw[2 * i]) |
                                               (static_cast<unsigned char>(raw[2 * i + 1]) << 8));
  }
  out.validate();
  return out;
}

}  // namespace mrisr
