#include "msp/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace msp {

namespace {

// Reads a PNM header token, skipping whitespace and '#' comments.
std::string pnm_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (std::isspace(ch)) continue;
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    tok.push_back(static_cast<char>(ch));
    while ((ch = is.get()) != EOF && !std::isspace(ch))
      tok.push_back(static_cast<char>(ch));
    return tok;
  }
  throw DataError("PNM: truncated header");
}

}  // namespace

Tensor load_pnm(const std::string& path, const std::vector<double>& channel_means) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open image file " + path);
  std::string magic = pnm_token(is);
  int channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw DataError("PNM: unsupported magic '" + magic + "' in " + path);
  const int w = std::stoi(pnm_token(is));
  const int h = std::stoi(pnm_token(is));
  const int maxval = std::stoi(pnm_token(is));
  if (w <= 0 || h <= 0) throw DataError("PNM: bad dimensions in " + path);
  if (maxval != 255) throw DataError("PNM: only maxval 255 supported in " + path);
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size())
    throw DataError("PNM: truncated payload in " + path);
  if (!channel_means.empty() &&
      channel_means.size() != static_cast<std::size_t>(channels))
    throw DataError("load_pnm: channel mean count does not match image channels");
  Tensor t(Shape{1, channels, h, w});
  for (int c = 0; c < channels; ++c) {
    const double mean = channel_means.empty() ? 0.0 : channel_means[static_cast<std::size_t>(c)];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        t.at(0, c, y, x) =
            raw[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0 - mean;
  }
  return t;
}

void write_pgm(const std::string& path, const std::vector<unsigned char>& pixels,
               int width, int height) {
  if (pixels.size() != static_cast<std::size_t>(width) * height)
    throw Error("write_pgm: pixel count mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << "P5\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()),
           static_cast<std::streamsize>(pixels.size()));
}

void write_ppm(const std::string& path, const std::vector<unsigned char>& rgb,
               int width, int height) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw Error("write_ppm: pixel count mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << "P6\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()),
           static_cast<std::streamsize>(rgb.size()));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_detections_csv(const std::string& path,
                          const std::vector<Detection>& dets) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "image_id,class_id,score,x_min,y_min,x_max,y_max\n";
  for (const Detection& d : dets)
    os << d.image_id << "," << d.class_id << "," << fmt6(d.score) << ","
       << fmt6(d.box.x_min) << "," << fmt6(d.box.y_min) << ","
       << fmt6(d.box.x_max) << "," << fmt6(d.box.y_max) << "\n";
}

std::vector<Detection> read_detections_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open detections file " + path);
  std::vector<Detection> out;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("image_id", 0) == 0) continue;
    }
    auto f = split_csv_line(line);
    if (f.size() != 7) throw DataError("detections CSV: bad line '" + line + "'");
    Detection d;
    d.image_id = f[0];
    d.class_id = std::stoi(f[1]);
    d.score = std::stod(f[2]);
    d.box = {std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stod(f[6])};
    out.push_back(std::move(d));
  }
  return out;
}

void write_gt_csv(const std::string& path, const std::vector<GroundTruth>& gts) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "image_id,class_id,x_min,y_min,x_max,y_max,view\n";
  for (const GroundTruth& g : gts)
    os << g.image_id << "," << g.class_id << "," << fmt6(g.box.x_min) << ","
       << fmt6(g.box.y_min) << "," << fmt6(g.box.x_max) << ","
       << fmt6(g.box.y_max) << "," << g.view << "\n";
}

std::vector<GroundTruth> read_gt_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open ground-truth file " + path);
  std::vector<GroundTruth> out;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("image_id", 0) == 0) continue;
    }
    auto f = split_csv_line(line);
    if (f.size() < 6 || f.size() > 7)
      throw DataError("ground-truth CSV: bad line '" + line + "'");
    GroundTruth g;
    g.image_id = f[0];
    g.class_id = std::stoi(f[1]);
    g.box = {std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5])};
    if (f.size() == 7) g.view = f[6];
    if (!g.box.valid())
      throw DataError("ground-truth CSV: degenerate box in '" + line + "'");
    out.push_back(std::move(g));
  }
  return out;
}

DatasetIndex load_dataset(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + dir);
  auto gts = read_gt_csv((root / "gt.csv").string());

  DatasetIndex idx;
  std::map<std::string, std::size_t> by_id;
  for (const auto& entry : fs::directory_iterator(root / "images")) {
    if (!entry.is_regular_file()) continue;
    const fs::path p = entry.path();
    if (p.extension() != ".pgm" && p.extension() != ".ppm") continue;
    DatasetItem item;
    item.image_id = p.stem().string();
    item.path = p.string();
    by_id[item.image_id] = idx.items.size();
    idx.items.push_back(std::move(item));
  }
  std::sort(idx.items.begin(), idx.items.end(),
            [](const DatasetItem& a, const DatasetItem& b) { return a.image_id < b.image_id; });
  by_id.clear();
  for (std::size_t i = 0; i < idx.items.size(); ++i) by_id[idx.items[i].image_id] = i;

  for (GroundTruth& g : gts) {
    auto it = by_id.find(g.image_id);
    if (it == by_id.end())
      throw DataError("gt.csv references missing image " + g.image_id);
    idx.num_classes = std::max(idx.num_classes, g.class_id);
    if (!g.view.empty()) idx.items[it->second].view = g.view;
    idx.items[it->second].gts.push_back(std::move(g));
  }
  return idx;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_string(ss.str());
}

Config Config::parse_string(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw DataError("config line " + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw DataError("config line " + std::to_string(lineno) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.kv_.count(full))
      throw DataError("config: duplicate key " + full);
    cfg.kv_[full] = val;
  }
  return cfg;
}

bool Config::has(const std::string& key) const { return kv_.count(key) != 0; }

std::string Config::get(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stod(it->second);
}

int Config::get_int(const std::string& key, int fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stoi(it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw DataError("config: bad boolean for " + key + ": " + it->second);
}

std::vector<double> Config::get_doubles(const std::string& key,
                                        const std::vector<double>& fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(trim(tok)));
  return out;
}

void Config::require_known(const std::vector<std::string>& known) const {
  for (const auto& [k, v] : kv_) {
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw DataError("config: unknown key '" + k + "'");
  }
}

}  // namespace msp
