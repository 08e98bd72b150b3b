#include "alchemy/alchemy.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "alchemy/chemistry.hpp"
#include "alchemy/error.hpp"
#include "alchemy/experiment.hpp"
#include "alchemy/model.hpp"

struct alc_chemistry {
  alchemy::Chemistry chem;
};

struct alc_model {
  explicit alc_model(alchemy::Transformer m) : model(std::move(m)) {}
  alchemy::Transformer model;
};

namespace {

thread_local std::string g_last_error;

using json = nlohmann::json;

alc_status fail(alc_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <class F>
alc_status guarded(F&& f) {
  g_last_error.clear();
  try {
    return f();
  } catch (const alchemy::Error& e) {
    return fail(static_cast<alc_status>(static_cast<int>(e.code())), e.what());
  } catch (const json::exception& e) {
    return fail(ALC_INVALID_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(ALC_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(ALC_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json parse_request(const char* request_json) {
  if (request_json == nullptr || *request_json == '\0') return json::object();
  try {
    json j = json::parse(request_json);
    if (!j.is_object()) throw alchemy::Error(alchemy::ErrorCode::kInvalidArgument, "request must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw alchemy::Error(alchemy::ErrorCode::kInvalidArgument, std::string("malformed request: ") + e.what());
  }
}

/// Config object from "config" or "config_path", with "overrides" applied.
json request_config(const json& req) {
  json cfg;
  if (req.contains("config")) cfg = req["config"];
  else if (req.contains("config_path")) cfg = alchemy::read_config_file(req["config_path"].get<std::string>());
  else cfg = json::object();
  if (req.contains("overrides")) {
    for (const auto& [path, value] : req["overrides"].items()) alchemy::apply_override(cfg, path, value);
  }
  return cfg;
}

alchemy::TrainOptions train_options(const json& req) {
  alchemy::TrainOptions o;
  o.fresh = req.value("fresh", false);
  o.verbose = req.value("verbose", false);
  return o;
}

alc_status respond(char** response, const nlohmann::ordered_json& out) {
  if (response != nullptr) *response = dup_string(out.dump(2));
  return ALC_OK;
}

}  // namespace

extern "C" {

const char* alc_version(void) { return alchemy::kVersion.data(); }

const char* alc_last_error(void) { return g_last_error.c_str(); }

const char* alc_status_string(alc_status status) {
  switch (status) {
    case ALC_OK: return "ok";
    case ALC_INVALID_ARGUMENT: return "invalid-argument";
    case ALC_NOT_APPLICABLE: return "not-applicable";
    case ALC_GENERATION_EXHAUSTED: return "generation-exhausted";
    case ALC_PARSE_ERROR: return "parse-error";
    case ALC_IO_ERROR: return "io-failure";
    case ALC_INVALID_CONFIG: return "invalid-config";
    case ALC_DIVERGENCE: return "divergence-detected";
    case ALC_EPISODE_TOO_LONG: return "episode-too-long";
    case ALC_MISSING_METRIC: return "missing-metric";
    case ALC_INCOMPATIBLE_KIND: return "incompatible-kind";
    case ALC_MISSING_ORACLE_CONTEXT: return "missing-oracle-context";
    case ALC_SHAPE_MISMATCH: return "shape-mismatch";
    case ALC_EMPTY_POOL: return "empty-pool";
    case ALC_INTERNAL: return "internal";
  }
  return "unknown";
}

void alc_string_free(char* s) { std::free(s); }

alc_status alc_chemistry_generate(uint64_t seed, alc_chemistry** out) {
  return guarded([&] {
    if (out == nullptr) return fail(ALC_INVALID_ARGUMENT, "out is null");
    *out = new alc_chemistry{alchemy::generate_chemistry(seed)};
    return ALC_OK;
  });
}

alc_status alc_chemistry_from_json(const char* line, alc_chemistry** out) {
  return guarded([&] {
    if (line == nullptr || out == nullptr) return fail(ALC_INVALID_ARGUMENT, "null argument");
    *out = new alc_chemistry{alchemy::chemistry_from_json_line(line)};
    return ALC_OK;
  });
}

alc_status alc_chemistry_to_json(const alc_chemistry* chem, char** out) {
  return guarded([&] {
    if (chem == nullptr || out == nullptr) return fail(ALC_INVALID_ARGUMENT, "null argument");
    *out = dup_string(alchemy::chemistry_to_json_line(chem->chem));
    return ALC_OK;
  });
}

alc_status alc_chemistry_stone(const alc_chemistry* chem, int vertex, alc_stone* out) {
  return guarded([&] {
    if (chem == nullptr || out == nullptr) return fail(ALC_INVALID_ARGUMENT, "null argument");
    if (vertex < 0 || vertex >= alchemy::kNumVertices) return fail(ALC_INVALID_ARGUMENT, "vertex out of range");
    const auto s = chem->chem.stone(static_cast<alchemy::Vertex>(vertex));
    *out = alc_stone{s.color, s.size, s.roundness, s.reward_level};
    return ALC_OK;
  });
}

alc_status alc_chemistry_apply(const alc_chemistry* chem, int vertex, const int* potions, size_t n, int* out_vertex) {
  return guarded([&] {
    if (chem == nullptr || out_vertex == nullptr || (n > 0 && potions == nullptr)) {
      return fail(ALC_INVALID_ARGUMENT, "null argument");
    }
    if (vertex < 0 || vertex >= alchemy::kNumVertices) return fail(ALC_INVALID_ARGUMENT, "vertex out of range");
    std::vector<alchemy::PotionColor> seq;
    for (size_t i = 0; i < n; ++i) {
      if (potions[i] < 0 || potions[i] >= alchemy::kNumPotionColors) {
        return fail(ALC_INVALID_ARGUMENT, "potion colour out of range");
      }
      seq.push_back(static_cast<alchemy::PotionColor>(potions[i]));
    }
    *out_vertex = alchemy::apply_sequence(chem->chem, static_cast<alchemy::Vertex>(vertex), seq);
    return ALC_OK;
  });
}

alc_status alc_reachable_set(int vertex, int k, uint8_t* out_mask) {
  return guarded([&] {
    if (out_mask == nullptr) return fail(ALC_INVALID_ARGUMENT, "out_mask is null");
    if (vertex < 0 || vertex >= alchemy::kNumVertices) return fail(ALC_INVALID_ARGUMENT, "vertex out of range");
    *out_mask = alchemy::reachable_set(static_cast<alchemy::Vertex>(vertex), k).mask();
    return ALC_OK;
  });
}

alc_status alc_chemistry_validate(const alc_chemistry* chem, int* out_violations) {
  return guarded([&] {
    if (chem == nullptr || out_violations == nullptr) return fail(ALC_INVALID_ARGUMENT, "null argument");
    *out_violations = static_cast<int>(alchemy::validate_chemistry(chem->chem).violations.size());
    return ALC_OK;
  });
}

void alc_chemistry_free(alc_chemistry* chem) { delete chem; }

alc_status alc_stone_index(alc_stone stone, int* out_index) {
  return guarded([&] {
    if (out_index == nullptr) return fail(ALC_INVALID_ARGUMENT, "out_index is null");
    const alchemy::Stone s{stone.color, stone.size, stone.roundness, stone.reward_level};
    if (!s.valid()) return fail(ALC_INVALID_ARGUMENT, "stone levels out of range");
    *out_index = alchemy::stone_index(s);
    return ALC_OK;
  });
}

alc_status alc_stone_decode(int index, alc_stone* out) {
  return guarded([&] {
    if (out == nullptr) return fail(ALC_INVALID_ARGUMENT, "out is null");
    const auto s = alchemy::stone_from_index(index);
    *out = alc_stone{s.color, s.size, s.roundness, s.reward_level};
    return ALC_OK;
  });
}

alc_status alc_model_create(const char* config_json, uint64_t seed, alc_model** out) {
  return guarded([&] {
    if (out == nullptr) return fail(ALC_INVALID_ARGUMENT, "out is null");
    alchemy::ModelConfig cfg;
    if (config_json != nullptr && *config_json != '\0') {
      json j;
      try {
        j = json::parse(config_json);
      } catch (const json::parse_error& e) {
        return fail(ALC_INVALID_CONFIG, std::string("model config: ") + e.what());
      }
      cfg = alchemy::ModelConfig::from_json(j);
    }
    *out = new alc_model(alchemy::Transformer(cfg, seed));
    return ALC_OK;
  });
}

alc_status alc_model_parameter_count(const alc_model* model, size_t* out) {
  return guarded([&] {
    if (model == nullptr || out == nullptr) return fail(ALC_INVALID_ARGUMENT, "null argument");
    *out = model->model.parameter_count();
    return ALC_OK;
  });
}

alc_status alc_model_forward(const alc_model* model, const int32_t* tokens, size_t batch, size_t seq_len,
                             float* logits, size_t logits_len) {
  return guarded([&] {
    if (model == nullptr || tokens == nullptr || logits == nullptr) return fail(ALC_INVALID_ARGUMENT, "null argument");
    const auto classes = static_cast<size_t>(model->model.config().n_classes);
    if (logits_len != batch * seq_len * classes) return fail(ALC_SHAPE_MISMATCH, "logits buffer has the wrong size");
    std::vector<std::vector<alchemy::TokenId>> seqs(batch);
    for (size_t b = 0; b < batch; ++b) seqs[b].assign(tokens + b * seq_len, tokens + (b + 1) * seq_len);
    const auto out = model->model.forward(seqs);
    std::memcpy(logits, out.data(), out.size() * sizeof(float));
    return ALC_OK;
  });
}

void alc_model_free(alc_model* model) { delete model; }

alc_status alc_cmd_generate(const char* request_json, char** response) {
  if (response != nullptr) *response = nullptr;
  return guarded([&] {
    const json req = parse_request(request_json);
    const auto cfg = alchemy::RunConfig::from_json(request_config(req));
    return respond(response, alchemy::cmd_generate(cfg));
  });
}

alc_status alc_cmd_train(const char* request_json, char** response) {
  if (response != nullptr) *response = nullptr;
  return guarded([&] {
    const json req = parse_request(request_json);
    const auto cfg = alchemy::RunConfig::from_json(request_config(req));
    const auto out = alchemy::cmd_train(cfg, train_options(req));
    respond(response, out);
    for (const auto& run : out["runs"]) {
      if (run.value("status", "") != "completed") return fail(ALC_DIVERGENCE, "one or more runs failed");
    }
    return ALC_OK;
  });
}

alc_status alc_cmd_sweep(const char* request_json, char** response) {
  if (response != nullptr) *response = nullptr;
  return guarded([&] {
    const json req = parse_request(request_json);
    const auto out = alchemy::cmd_sweep(request_config(req), train_options(req));
    respond(response, out);
    for (const auto& child : out["children"]) {
      if (child.contains("error")) return fail(ALC_DIVERGENCE, "one or more sweep points failed");
      for (const auto& run : child["runs"]) {
        if (run.value("status", "") != "completed") return fail(ALC_DIVERGENCE, "one or more runs failed");
      }
    }
    return ALC_OK;
  });
}

alc_status alc_cmd_evaluate(const char* request_json, char** response) {
  if (response != nullptr) *response = nullptr;
  return guarded([&] {
    const json req = parse_request(request_json);
    alchemy::EvaluateRequest r;
    r.episodes = req.at("episodes").get<std::string>();
    r.chemistries = req.at("chemistries").get<std::string>();
    if (req.contains("chance") && !req["chance"].is_null()) r.chance = req["chance"].get<std::string>();
    else r.predictions = req.at("predictions").get<std::string>();
    return respond(response, alchemy::cmd_evaluate(r));
  });
}

alc_status alc_cmd_export_plots(const char* request_json, char** response) {
  if (response != nullptr) *response = nullptr;
  return guarded([&] {
    const json req = parse_request(request_json);
    alchemy::ExportRequest r;
    for (const auto& p : req.at("runs")) r.runs.emplace_back(p.get<std::string>());
    r.out_dir = req.at("out_dir").get<std::string>();
    r.split = req.value("split", "val");
    if (req.contains("metrics") && !req["metrics"].is_null()) r.metrics = req["metrics"].get<std::vector<std::string>>();
    return respond(response, alchemy::cmd_export_plots(r));
  });
}

alc_status alc_cmd_validate(const char* request_json, char** response) {
  if (response != nullptr) *response = nullptr;
  return guarded([&] {
    const json req = parse_request(request_json);
    std::optional<std::filesystem::path> chems;
    if (req.contains("chemistries") && !req["chemistries"].is_null()) chems = req["chemistries"].get<std::string>();
    const auto out = alchemy::cmd_validate(req.at("path").get<std::string>(), chems);
    respond(response, out);
    if (!out["passed"].get<bool>()) {
      return fail(ALC_INVALID_ARGUMENT, std::to_string(out["violation_count"].get<long>()) + " violation(s) found");
    }
    return ALC_OK;
  });
}

}  // extern "C"
