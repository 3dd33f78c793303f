#include "mrisr/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace mrisr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int r = std::stoi(v, &used);
    if (used == v.size()) return r;
  } catch (const std::logic_error&) {
  }
  throw ValidationError("config key '" + key + "' expects an integer, got '" + v + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto r = std::stoull(v, &used);
    if (used == v.size() && v.find('-') == std::string::npos) return r;
  } catch (const std::logic_error&) {
  }
  throw ValidationError("config key '" + key + "' expects an unsigned integer, got '" + v + "'");
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used == v.size()) return r;
  } catch (const std::logic_error&) {
  }
  throw ValidationError("config key '" + key + "' expects a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ValidationError("config key '" + key + "' expects true or false, got '" + v + "'");
}

}  // namespace

Extent3 parse_extent(const std::string& s) {
  Extent3 e{};
  std::istringstream in(s);
  std::string tok;
  int i = 0;
  while (std::getline(in, tok, ',')) {
    if (i >= 3) throw ValidationError("expected D,H,W, got '" + s + "'");
    e[static_cast<std::size_t>(i++)] = to_int("extent", trim(tok));
  }
  if (i != 3) throw ValidationError("expected D,H,W, got '" + s + "'");
  for (int v : e)
    if (v <= 0) throw ValidationError("extents must be positive, got '" + s + "'");
  return e;
}

std::vector<int> parse_axes(const std::string& s) {
  std::vector<int> axes;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    if (tok == "d" || tok == "D" || tok == "0")
      axes.push_back(0);
    else if (tok == "h" || tok == "H" || tok == "1")
      axes.push_back(1);
    else if (tok == "w" || tok == "W" || tok == "2")
      axes.push_back(2);
    else
      throw ValidationError("unknown axis '" + tok + "' (expected d, h or w)");
  }
  if (axes.empty()) throw ValidationError("no axes given");
  return axes;
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig c;
  auto& t = c.train;
  auto& g = c.generator;
  auto& d = c.discriminator;
  auto& p = c.parcel;
  auto& pt = c.parcel_train;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"lambda_D", [&](auto& k, auto& v) { t.lambda_D = to_double(k, v); }},
      {"lambda_g", [&](auto& k, auto& v) { t.lambda_g = to_double(k, v); }},
      {"n_critic", [&](auto& k, auto& v) { t.n_critic = to_int(k, v); }},
      {"gp_form", [&](auto&, auto& v) { t.gp_form = train::parse_gp_form(v); }},
      {"gamma_per", [&](auto&, auto& v) { t.gamma_per = train::parse_gamma_per(v); }},
      {"lr", [&](auto& k, auto& v) { t.adam.lr = to_double(k, v); }},
      {"beta1", [&](auto& k, auto& v) { t.adam.beta1 = t.disc_adam.beta1 = to_double(k, v); }},
      {"beta2", [&](auto& k, auto& v) { t.adam.beta2 = t.disc_adam.beta2 = to_double(k, v); }},
      {"eps", [&](auto& k, auto& v) { t.adam.eps = t.disc_adam.eps = to_double(k, v); }},
      {"disc_lr", [&](auto& k, auto& v) { t.disc_adam.lr = to_double(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { t.batch_size = to_int(k, v); }},
      {"steps", [&](auto& k, auto& v) { t.steps = to_int(k, v); }},
      {"seed", [&](auto& k, auto& v) { t.seed = to_u64(k, v); }},
      {"patch", [&](auto&, auto& v) { t.patch = parse_extent(v); }},
      {"checkpointing", [&](auto& k, auto& v) { t.checkpointing = to_bool(k, v); }},
      {"bn_momentum", [&](auto& k, auto& v) { t.bn_momentum = to_double(k, v); }},
      {"n_c", [&](auto& k, auto& v) { g.n_c = to_int(k, v); }},
      {"n_f", [&](auto& k, auto& v) { g.n_f = to_int(k, v); }},
      {"k", [&](auto& k, auto& v) { g.k = to_int(k, v); }},
      {"beta", [&](auto& k, auto& v) { g.beta = to_double(k, v); }},
      {"layers_per_dense_block", [&](auto& k, auto& v) { g.layers_per_dense_block = to_int(k, v); }},
      {"norm", [&](auto&, auto& v) { g.norm = nets::parse_norm(v); }},
      {"leaky_slope", [&](auto& k, auto& v) { g.leaky_slope = to_double(k, v); }},
      {"disc_base_channels", [&](auto& k, auto& v) { d.base_channels = to_int(k, v); }},
      {"disc_n_plain_blocks", [&](auto& k, auto& v) { d.n_plain_blocks = to_int(k, v); }},
      {"disc_norm", [&](auto&, auto& v) { d.norm = nets::parse_norm(v); }},
      {"disc_leaky_slope", [&](auto& k, auto& v) { d.leaky_slope = to_double(k, v); }},
      {"parcel_classes", [&](auto& k, auto& v) { p.n_classes = to_int(k, v); }},
      {"parcel_channels", [&](auto& k, auto& v) { p.channels = to_int(k, v); }},
      {"parcel_steps", [&](auto& k, auto& v) { pt.steps = to_int(k, v); }},
      {"parcel_lr", [&](auto& k, auto& v) { pt.lr = to_double(k, v); }},
      {"parcel_batch_size", [&](auto& k, auto& v) { pt.batch_size = to_int(k, v); }},
      {"parcel_patch", [&](auto&, auto& v) { pt.patch = parse_extent(v); }},
      {"parcel_seed", [&](auto& k, auto& v) { pt.seed = to_u64(k, v); }},
      {"degrade_axes", [&](auto&, auto& v) { c.degrade.axes = parse_axes(v); }},
      {"degrade_factor", [&](auto& k, auto& v) { c.degrade.factor = to_int(k, v); }},
  };

  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(where + "expected key=value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ValidationError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ValidationError(where + "key '" + key + "' given twice");
    try {
      it->second(key, value);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  t.validate();
  g.validate();
  d.validate();
  p.validate();
  pt.validate();
  if (c.degrade.factor < 1) throw ValidationError(source + ": degrade_factor must be >= 1");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

}  // namespace mrisr
