/*
 * Copyright 2026 The Karula Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#include "karula/karula.h"

#include <cstdio>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include <json.hpp>

#include "core/config.hpp"
#include "core/io.hpp"
#include "core/otcore.hpp"
#include "core/pipeline.hpp"

struct karula_config {
  karula::config::RunConfig cfg;
};

namespace {

thread_local std::string g_last_error;

karula_status fail(karula_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

// Maps exceptions escaping the core onto status codes.
template <typename Fn>
karula_status guarded(Fn fn) {
  g_last_error.clear();
  try {
    return fn();
  } catch (const karula::ConfigError& e) {
    return fail(KARULA_ERR_CONFIG, e.what());
  } catch (const karula::InvalidArgument& e) {
    return fail(KARULA_ERR_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(KARULA_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(KARULA_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(KARULA_ERR_RUNTIME, "unknown error");
  }
}

karula_status wrap(karula::config::RunConfig cfg, karula_config_t** out) {
  *out = new karula_config{std::move(cfg)};
  return KARULA_OK;
}

}  // namespace

extern "C" {

const char* karula_version(void) { return KARULA_VERSION; }

const char* karula_last_error(void) { return g_last_error.c_str(); }

karula_status karula_config_default(const char* experiment, karula_config_t** out) {
  if (!out) return fail(KARULA_ERR_ARGUMENT, "out must not be null");
  return guarded([&] { return wrap(karula::config::default_config(experiment ? experiment : "default"), out); });
}

karula_status karula_config_load(const char* path, karula_config_t** out) {
  if (!path || !out) return fail(KARULA_ERR_ARGUMENT, "path and out must not be null");
  return guarded([&] { return wrap(karula::config::load_config(path), out); });
}

karula_status karula_config_parse(const char* text, const char* origin, karula_config_t** out) {
  if (!text || !out) return fail(KARULA_ERR_ARGUMENT, "text and out must not be null");
  return guarded([&] { return wrap(karula::config::parse_config(text, origin ? origin : "<string>", {}), out); });
}

void karula_config_free(karula_config_t* cfg) { delete cfg; }

karula_status karula_config_set(karula_config_t* cfg, const char* key, const char* json_value) {
  if (!cfg || !key || !json_value) return fail(KARULA_ERR_ARGUMENT, "cfg, key and value must not be null");
  return guarded([&] {
    // Apply to a copy so a rejected override leaves the handle untouched.
    karula::config::RunConfig next = cfg->cfg;
    karula::config::apply_override(next, key, json_value);
    cfg->cfg = std::move(next);
    return KARULA_OK;
  });
}

karula_status karula_config_validate(const karula_config_t* cfg) {
  if (!cfg) return fail(KARULA_ERR_ARGUMENT, "cfg must not be null");
  return guarded([&] {
    karula::config::validate(cfg->cfg);
    return KARULA_OK;
  });
}

karula_status karula_config_hash(const karula_config_t* cfg, char* buf, size_t len) {
  if (!cfg || !buf) return fail(KARULA_ERR_ARGUMENT, "cfg and buf must not be null");
  return guarded([&] {
    const std::string h = karula::config::config_hash(cfg->cfg);
    if (len < h.size() + 1) return fail(KARULA_ERR_ARGUMENT, "hash buffer needs " + std::to_string(h.size() + 1) + " bytes");
    std::memcpy(buf, h.c_str(), h.size() + 1);
    return KARULA_OK;
  });
}

karula_status karula_config_dump(const karula_config_t* cfg, char* buf, size_t len, size_t* needed) {
  if (!cfg) return fail(KARULA_ERR_ARGUMENT, "cfg must not be null");
  return guarded([&] {
    const std::string text = karula::config::to_json(cfg->cfg).dump(2) + "\n";
    if (needed) *needed = text.size() + 1;
    if (!buf) return KARULA_OK;
    if (len < text.size() + 1) return fail(KARULA_ERR_ARGUMENT, "dump buffer too small");
    std::memcpy(buf, text.c_str(), text.size() + 1);
    return KARULA_OK;
  });
}

void karula_run_options_init(karula_run_options* opts) {
  if (!opts) return;
  opts->out_root = nullptr;
  opts->check = 0;
  opts->threads = 1;
  opts->has_seed = 0;
  opts->seed = 0;
}

karula_status karula_run_stage(const karula_config_t* cfg, const char* stage, const karula_run_options* opts) {
  if (!cfg || !stage) return fail(KARULA_ERR_ARGUMENT, "cfg and stage must not be null");
  return guarded([&] {
    karula::pipeline::RunOptions o;
    if (opts) {
      if (opts->out_root) o.out_root = opts->out_root;
      o.check = opts->check != 0;
      o.threads = opts->threads;
      if (opts->has_seed) o.only_seed = opts->seed;
    }
    const karula::pipeline::Outcome outcome =
        karula::pipeline::run_stage(cfg->cfg, karula::pipeline::parse_stage(stage), o);
    if (outcome.code == KARULA_OK) return KARULA_OK;
    return fail(static_cast<karula_status>(outcome.code), outcome.message);
  });
}

karula_status karula_project_test(const char* input_path, const char* output_path) {
  if (!input_path) return fail(KARULA_ERR_ARGUMENT, "input_path must not be null");
  return guarded([&] {
    nlohmann::json input;
    try {
      input = nlohmann::json::parse(karula::io::read_text(input_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw karula::ConfigError(std::string(input_path) + ": " + e.what());
    }
    const std::string text = karula::pipeline::project_test(input).dump(2) + "\n";
    if (output_path) {
      karula::io::write_text(output_path, text);
    } else {
      std::fwrite(text.data(), 1, text.size(), stdout);
      std::fflush(stdout);
    }
    return KARULA_OK;
  });
}

karula_status karula_wasserstein1(const double* a, size_t na, const double* b, size_t nb, size_t dim,
                                  double* out) {
  if (!a || !b || !out) return fail(KARULA_ERR_ARGUMENT, "a, b and out must not be null");
  if (na == 0 || nb == 0 || dim == 0) return fail(KARULA_ERR_ARGUMENT, "measures must be non-empty");
  return guarded([&] {
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto rows = [dim](const double* p, size_t n) {
      return karula::ot::Dataset{karula::Matrix(Eigen::Map<const RowMajor>(
          p, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim)))};
    };
    *out = karula::ot::wasserstein1(rows(a, na), rows(b, nb));
    return KARULA_OK;
  });
}

}  // extern "C"
