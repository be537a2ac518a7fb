#include "mmreg/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

#include "mmreg/error.hpp"

namespace mmreg {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'R', 'G', 'C', 'K', 'P', 'T'};

nlohmann::json config_to_json(const NetworkConfig& cfg) {
  return {
      {"backbone", to_string(cfg.backbone)},
      {"fine_tune_last", cfg.fine_tune_last},
      {"alpha", cfg.alpha},
      {"correlation_mode",
       cfg.correlation_mode == nn::CorrelationMode::pearson ? "pearson" : "cosine"},
  };
}

NetworkConfig config_from_json(const nlohmann::json& j) {
  NetworkConfig cfg;
  cfg.backbone = backbone_from_string(j.at("backbone").get<std::string>());
  cfg.fine_tune_last = j.at("fine_tune_last").get<bool>();
  cfg.alpha = j.at("alpha").get<double>();
  const std::string mode = j.at("correlation_mode").get<std::string>();
  if (mode == "pearson") {
    cfg.correlation_mode = nn::CorrelationMode::pearson;
  } else if (mode == "cosine") {
    cfg.correlation_mode = nn::CorrelationMode::cosine;
  } else {
    throw ConfigError("checkpoint: unknown correlation_mode '" + mode + "'");
  }
  return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, RegistrationModel& model,
                     const CheckpointMeta& meta) {
  auto tensors = model.state_tensors();
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["network_config"] = config_to_json(model.config());
  header["init_seed"] = model.init_seed();
  header["seed"] = meta.seed;
  header["fold_id"] = meta.fold_id;
  header["epoch"] = meta.epoch;
  header["dtype"] = "float32";
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    nlohmann::json e;
    e["name"] = t.name;
    e["shape"] = t.tensor->shape();
    e["offset"] = offset;
    e["count"] = t.tensor->size();
    dir.push_back(e);
    offset += t.tensor->size();
  }
  header["tensors"] = dir;
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = header_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header_str.data(), static_cast<std::streamsize>(hlen));
  for (const auto& t : tensors) {
    out.write(reinterpret_cast<const char*>(t.tensor->data()),
              static_cast<std::streamsize>(t.tensor->size() * sizeof(float)));
  }
  if (!out) throw DataError("short write on checkpoint: " + path);
}

std::unique_ptr<RegistrationModel> load_checkpoint(const std::string& path,
                                                   CheckpointMeta* meta_out,
                                                   const NetworkConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError("truncated checkpoint header: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const std::exception& e) {
    throw DataError("malformed checkpoint header in " + path + ": " + e.what());
  }
  const int version = header.at("format_version").get<int>();
  if (version != kCheckpointFormatVersion) {
    throw DataError("checkpoint " + path + ": unsupported format version " +
                    std::to_string(version));
  }
  const NetworkConfig cfg = config_from_json(header.at("network_config"));
  if (expected && !(cfg == *expected)) {
    throw ConfigError("checkpoint " + path + ": NetworkConfig does not match the requested one");
  }
  if (meta_out) {
    meta_out->format_version = version;
    meta_out->seed = header.at("seed").get<std::uint64_t>();
    meta_out->fold_id = header.at("fold_id").get<int>();
    meta_out->epoch = header.at("epoch").get<int>();
  }

  auto model = std::make_unique<RegistrationModel>(
      cfg, header.at("init_seed").get<std::uint64_t>());
  auto tensors = model->state_tensors();
  const auto& dir = header.at("tensors");
  if (dir.size() != tensors.size()) {
    throw DataError("checkpoint " + path + ": tensor directory size mismatch");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& e = dir[i];
    if (e.at("name").get<std::string>() != tensors[i].name ||
        e.at("count").get<std::uint64_t>() != tensors[i].tensor->size()) {
      throw DataError("checkpoint " + path + ": tensor '" + tensors[i].name +
                      "' does not match the model layout");
    }
    in.read(reinterpret_cast<char*>(tensors[i].tensor->data()),
            static_cast<std::streamsize>(tensors[i].tensor->size() * sizeof(float)));
  }
  if (!in) throw DataError("truncated checkpoint data: " + path);
  return model;
}

}  // namespace mmreg
