#include "pegnn/checkpoint.hpp"

#include <fstream>
#include <json.hpp>

#include "pegnn/errors.hpp"

namespace pegnn {

namespace {

nlohmann::ordered_json config_to_json(const EgnnConfig& c) {
  nlohmann::ordered_json j;
  j["n_layers"] = c.n_layers;
  j["hidden"] = c.hidden;
  j["noise_dim"] = c.noise_dim;
  j["activation"] = c.activation;
  return j;
}

}  // namespace

std::string egnn_config_json(const EgnnConfig& config) { return config_to_json(config).dump(); }

void write_checkpoint(const std::filesystem::path& path, const EgnnConfig& config,
                      const ad::ParamVector& params, const CheckpointMeta& meta) {
  if (!params.same_layout(make_param_layout(config))) {
    throw CompatibilityError("write_checkpoint: parameters do not follow the configured layout");
  }
  nlohmann::ordered_json header;
  header["format"] = "pegnn-checkpoint";
  header["ordering_version"] = kParamOrderingVersion;
  header["config"] = config_to_json(config);
  header["param_count"] = params.size();
  header["mode"] = meta.mode;
  header["seed"] = meta.seed;
  header["member"] = meta.member;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.write(reinterpret_cast<const char*>(params.values().data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("checkpoint '" + path.string() + "' has no header");
  Checkpoint ck;
  std::size_t declared = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("format") != "pegnn-checkpoint") throw IoError("not a pegnn checkpoint");
    if (header.at("ordering_version").get<int>() != kParamOrderingVersion) {
      throw CompatibilityError("checkpoint '" + path.string() + "' uses an unsupported parameter ordering");
    }
    const auto& c = header.at("config");
    ck.config.n_layers = c.at("n_layers").get<int>();
    ck.config.hidden = c.at("hidden").get<int>();
    ck.config.noise_dim = c.at("noise_dim").get<int>();
    ck.config.activation = c.at("activation").get<std::string>();
    declared = header.at("param_count").get<std::size_t>();
    ck.meta.mode = header.at("mode").get<std::string>();
    ck.meta.seed = header.at("seed").get<std::uint64_t>();
    ck.meta.member = header.at("member").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path.string() + "': malformed header: " + e.what());
  }
  ck.params = make_param_layout(ck.config);
  if (ck.params.size() != declared) {
    throw CompatibilityError("checkpoint '" + path.string() + "' declares " + std::to_string(declared) +
                             " parameters but its configuration requires " +
                             std::to_string(ck.params.size()));
  }
  in.read(reinterpret_cast<char*>(ck.params.values().data()),
          static_cast<std::streamsize>(declared * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != declared * sizeof(double)) {
    throw IoError("checkpoint '" + path.string() + "': payload shorter than declared");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IoError("checkpoint '" + path.string() + "': trailing bytes after payload");
  }
  return ck;
}

}  // namespace pegnn
