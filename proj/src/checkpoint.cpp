#include "lgc/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "lgc/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint files are raw little-endian doubles");

namespace lgc::ad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sanitize(const std::string& name) {
  std::string out;
  out.reserve(name.size());
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-' || c == '.';
    out.push_back(ok ? c : '_');
  }
  return out;
}

void write_raw(const fs::path& path, const std::vector<double>& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!f) throw IoError("short write to " + path.string());
}

std::vector<double> read_raw(const fs::path& path, long count) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<double> data(static_cast<std::size_t>(count));
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (f.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double)))
    throw IoError(path.string() + " is shorter than the " + std::to_string(count) +
                  " values the manifest promises");
  return data;
}

}  // namespace

void save_checkpoint(const std::string& dir, const ParameterStore& store,
                     const CheckpointMeta& meta) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "lgc-checkpoint-v1";
  manifest["epoch"] = meta.epoch;
  manifest["seed"] = meta.seed;
  if (!meta.extra.is_null()) manifest["extra"] = meta.extra;

  std::set<std::string> used;
  json params = json::array();
  for (const std::string& name : store.names()) {
    const auto& e = store.entry(name);
    std::string file = sanitize(name);
    if (!used.insert(file).second)
      throw Error("save_checkpoint: parameters '" + name +
                  "' and another entry sanitize to the same file name '" + file + "'");
    json p;
    p["name"] = name;
    p["file"] = file;
    p["shape"] = e.value.shape;
    p["group"] = e.group == ParamGroup::Latent ? "latent" : "network";
    p["step"] = e.step;
    params.push_back(std::move(p));

    const fs::path base = fs::path(dir) / file;
    write_raw(base.string() + ".f64", e.value.data);
    write_raw(base.string() + ".m.f64", e.m.data);
    write_raw(base.string() + ".v.f64", e.v.data);
  }
  manifest["params"] = std::move(params);

  // Write-then-rename so a crash cannot leave a truncated manifest behind.
  const fs::path tmp = fs::path(dir) / "manifest.json.tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << manifest.dump(2) << "\n";
  }
  fs::rename(tmp, fs::path(dir) / "manifest.json");
}

CheckpointMeta load_checkpoint(const std::string& dir, ParameterStore& store) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream f(mpath);
  if (!f) throw IoError("cannot read " + mpath.string());
  json manifest;
  try {
    f >> manifest;
  } catch (const json::exception& e) {
    throw IoError(mpath.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "lgc-checkpoint-v1")
    throw IoError(mpath.string() + ": not a recognized checkpoint manifest");

  CheckpointMeta meta;
  meta.epoch = manifest.at("epoch").get<long>();
  meta.seed = manifest.at("seed").get<std::uint64_t>();
  if (manifest.contains("extra")) meta.extra = manifest["extra"];

  store.raw().clear();
  for (const json& p : manifest.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    const std::string file = p.at("file").get<std::string>();
    if (file.find('/') != std::string::npos || file.find("..") != std::string::npos)
      throw IoError(mpath.string() + ": refusing file entry '" + file + "'");
    const Shape shape = p.at("shape").get<Shape>();
    const long count = shape_numel(shape);
    const ParamGroup group =
        p.at("group").get<std::string>() == "latent" ? ParamGroup::Latent : ParamGroup::Network;
    const fs::path base = fs::path(dir) / file;
    store.add(name, Tensor(shape, read_raw(base.string() + ".f64", count)), group);
    auto& e = store.entry(name);
    e.m = Tensor(shape, read_raw(base.string() + ".m.f64", count));
    e.v = Tensor(shape, read_raw(base.string() + ".v.f64", count));
    e.step = p.at("step").get<long>();
  }
  return meta;
}

}  // namespace lgc::ad
