#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mrisr/autograd/paramset.hpp"

namespace mrisr::ag {
namespace fs = std::filesystem;

namespace {
constexpr const char* kMagic = "mrisr-paramset 1";

Shape parse_shape(const std::string& s) {
  Shape out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v <= 0) throw FormatError("bad tensor extent '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw FormatError("empty tensor shape");
  return out;
}
}  // namespace

void save_paramset(const ParamSet<float>& params, const fs::path& path) {
  std::ostringstream head;
  head << kMagic << "\n";
  for (const auto& [k, v] : params.meta) {
    if (k.find_first_of(" \n=") != std::string::npos || v.find('\n') != std::string::npos)
      throw ValidationError("metadata entry '" + k + "' cannot be serialized");
    head << "meta " << k << "=" << v << "\n";
  }
  std::int64_t offset = 0;
  for (const auto& e : params.entries()) {
    head << "tensor " << e.name << " " << (e.trainable ? 1 : 0) << " ";
    for (std::size_t i = 0; i < e.tensor.shape().size(); ++i) head << (i ? "," : "") << e.tensor.shape()[i];
    head << " " << offset << " " << e.tensor.numel() << "\n";
    offset += e.tensor.numel();
  }
  head << "end\n";

  std::string bytes = head.str();
  bytes.reserve(bytes.size() + static_cast<std::size_t>(offset) * 4);
  for (const auto& e : params.entries()) {
    if (!e.tensor.values().allFinite()) throw ValidationError("parameter '" + e.name + "' is not finite");
    for (std::int64_t i = 0; i < e.tensor.numel(); ++i) {
      const auto u = std::bit_cast<std::uint32_t>(e.tensor[i]);
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((u >> (8 * b)) & 0xFFu));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

ParamSet<float> load_paramset(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();

  struct Record {
    std::string name;
    bool trainable;
    Shape shape;
    std::int64_t offset, count;
  };
  std::vector<Record> records;
  ParamSet<float> out;
  std::size_t pos = 0;
  auto next_line = [&]() {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError(path.string() + ": truncated manifest");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  const std::string magic = next_line();
  if (magic.rfind("mrisr-paramset ", 0) != 0) throw FormatError(path.string() + ": not a parameter container");
  if (magic != kMagic) throw UnsupportedFormatError(path.string() + ": unsupported container version");
  try {
    for (;;) {
      const std::string line = next_line();
      if (line == "end") break;
      if (line.rfind("meta ", 0) == 0) {
        const std::string kv = line.substr(5);
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw FormatError("malformed meta line");
        out.meta[kv.substr(0, eq)] = kv.substr(eq + 1);
      } else if (line.rfind("tensor ", 0) == 0) {
        std::istringstream ls(line.substr(7));
        Record r;
        int flag = 0;
        std::string shape;
        if (!(ls >> r.name >> flag >> shape >> r.offset >> r.count)) throw FormatError("malformed tensor line");
        r.trainable = flag != 0;
        r.shape = parse_shape(shape);
        if (numel(r.shape) != r.count) throw FormatError("tensor '" + r.name + "' count does not match shape");
        records.push_back(std::move(r));
      } else {
        throw FormatError("unexpected manifest line '" + line + "'");
      }
    }
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": unparsable manifest number");
  }

  std::int64_t total = 0;
  for (const auto& r : records) {
    if (r.offset != total) throw FormatError(path.string() + ": non-contiguous tensor offsets");
    total += r.count;
  }
  if (static_cast<std::int64_t>(bytes.size() - pos) != total * 4)
    throw FormatError(path.string() + ": payload size does not match manifest");
  for (const auto& r : records) {
    Eigen::ArrayXf v(r.count);
    for (std::int64_t i = 0; i < r.count; ++i) {
      std::uint32_t u = 0;
      const char* p = bytes.data() + pos + 4 * (r.offset + i);
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
      v[i] = std::bit_cast<float>(u);
    }
    out.add(r.name, Tensor<float>(r.shape, std::move(v)), r.trainable);
  }
  return out;
}

}  // namespace mrisr::ag
