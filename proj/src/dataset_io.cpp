#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "pegnn/errors.hpp"
#include "pegnn/nbody.hpp"

namespace pegnn {

static_assert(std::endian::native == std::endian::little,
              "dataset and checkpoint payloads are written in native little-endian order");

namespace {

nlohmann::ordered_json sim_config_to_json(const SimConfig& c) {
  nlohmann::ordered_json j;
  j["n_particles"] = c.n_particles;
  j["charge_values"] = c.charge_values;
  j["dt"] = c.dt;
  j["n_steps"] = c.n_steps;
  j["softening"] = c.softening;
  j["box_init_scale"] = c.box_init_scale;
  j["vel_init_scale"] = c.vel_init_scale;
  j["min_pair_distance"] = c.min_pair_distance;
  j["seed"] = c.seed;
  return j;
}

SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig c;
  c.n_particles = j.at("n_particles").get<int>();
  c.charge_values = j.at("charge_values").get<std::vector<double>>();
  c.dt = j.at("dt").get<double>();
  c.n_steps = j.at("n_steps").get<int>();
  c.softening = j.at("softening").get<double>();
  c.box_init_scale = j.at("box_init_scale").get<double>();
  c.vel_init_scale = j.at("vel_init_scale").get<double>();
  c.min_pair_distance = j.at("min_pair_distance").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

Split split_from_name(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw IoError("unknown dataset split '" + s + "'");
}

}  // namespace

std::string sim_config_json(const SimConfig& config) { return sim_config_to_json(config).dump(); }

void write_dataset(const std::filesystem::path& path, const SimConfig& config, Split split,
                   const std::vector<GraphSample>& samples) {
  const int n = config.n_particles;
  nlohmann::ordered_json header;
  header["format"] = "pegnn-dataset";
  header["schema_version"] = kDatasetSchemaVersion;
  header["split"] = split_name(split);
  header["n_samples"] = samples.size();
  header["n_particles"] = n;
  header["floats_per_sample"] = 10 * n;
  header["config"] = sim_config_to_json(config);

  std::vector<float> payload;
  payload.reserve(samples.size() * static_cast<std::size_t>(10 * n));
  for (const auto& s : samples) {
    if (s.input.size() != n || s.target_positions.rows() != n) {
      throw IoError("write_dataset: sample particle count differs from config.n_particles");
    }
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) payload.push_back(static_cast<float>(s.input.positions(i, a)));
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) payload.push_back(static_cast<float>(s.input.velocities(i, a)));
    for (int i = 0; i < n; ++i) payload.push_back(static_cast<float>(s.input.charges[i]));
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) payload.push_back(static_cast<float>(s.target_positions(i, a)));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

DatasetFile read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("dataset '" + path.string() + "' has no header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset '" + path.string() + "': malformed header: " + e.what());
  }
  DatasetFile file;
  std::size_t n_samples = 0;
  int n = 0;
  try {
    if (header.at("format") != "pegnn-dataset") throw IoError("not a pegnn dataset");
    if (header.at("schema_version").get<int>() != kDatasetSchemaVersion) {
      throw IoError("unsupported dataset schema_version");
    }
    file.config = sim_config_from_json(header.at("config"));
    file.split = split_from_name(header.at("split").get<std::string>());
    n_samples = header.at("n_samples").get<std::size_t>();
    n = header.at("n_particles").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset '" + path.string() + "': bad header field: " + e.what());
  }

  const std::size_t per = static_cast<std::size_t>(10 * n);
  std::vector<float> payload(per * n_samples);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != payload.size() * sizeof(float)) {
    throw IoError("dataset '" + path.string() + "': payload shorter than header declares");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IoError("dataset '" + path.string() + "': trailing bytes after payload");
  }

  file.samples.reserve(n_samples);
  const float* p = payload.data();
  for (std::size_t s = 0; s < n_samples; ++s) {
    GraphSample g;
    g.input.positions.resize(n, 3);
    g.input.velocities.resize(n, 3);
    g.input.charges.resize(n);
    g.target_positions.resize(n, 3);
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) g.input.positions(i, a) = *p++;
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) g.input.velocities(i, a) = *p++;
    for (int i = 0; i < n; ++i) g.input.charges[i] = *p++;
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) g.target_positions(i, a) = *p++;
    file.samples.push_back(std::move(g));
  }
  return file;
}

}  // namespace pegnn
