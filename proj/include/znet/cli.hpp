// Copyright 2026 The ZNet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "znet/data.hpp"
#include "znet/error.hpp"
#include "znet/phantom.hpp"
#include "znet/train.hpp"

namespace znet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Shape errors come from volumes that do not fit a policy or a checkpoint
/// that does not fit an architecture, so they count as data errors.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return kExitUsage;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return kExitData;
  return kExitData;
}

/// Seed default: ZNET_SEED when set, else 0.
inline std::uint64_t default_seed() {
  const char* env = std::getenv("ZNET_SEED");
  if (env == nullptr || *env == '\0') return 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0' || env[0] == '-') throw UsageError(std::string("ZNET_SEED is not an unsigned integer: ") + env);
  return v;
}

// ---------------------------------------------------------------------------
// Run configuration file
//
// {
//   "seed": 0,
//   "arch":   {"name": "zunet-v2", "levels": 3, "base_channels": 8},
//   "policy": {"name": "patch512"},
//   "train":  {"lr0": 0.05, "momentum": 0.9, "epochs": 4, "batch_size": 2,
//              "augment": true, "threads": 1, "lr_sweep": false},
//   "data":   {"dir": "phantoms", "scheme": "manifest", "fold": 1}
// }

struct DataConfig {
  std::string dir;
  /// "manifest" uses the splits stored in the manifest; otherwise a
  /// data::SplitScheme name.
  std::string scheme = "manifest";
  std::size_t fold = 1;
};

struct RunConfig {
  train::TrainConfig train;
  DataConfig data;
  bool lr_sweep = false;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw UsageError(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const auto& k : known) ok = ok || k == item.key();
    if (!ok) throw UsageError("unknown key '" + item.key() + "' in " + where);
  }
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig rc;
  rc.train.seed = default_seed();
  detail::reject_unknown(j, {"seed", "arch", "policy", "train", "data"}, "config");
  try {
    rc.train.seed = j.value("seed", rc.train.seed);
    if (j.contains("arch")) {
      const auto& a = j["arch"];
      detail::reject_unknown(a, {"name", "levels", "base_channels"}, "arch");
      rc.train.arch = a.value("name", rc.train.arch);
      rc.train.levels = a.value("levels", rc.train.levels);
      rc.train.base_channels = a.value("base_channels", rc.train.base_channels);
    }
    if (j.contains("policy")) {
      const auto& p = j["policy"];
      detail::reject_unknown(p, {"name"}, "policy");
      rc.train.policy = p.value("name", rc.train.policy);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      detail::reject_unknown(t, {"lr0", "momentum", "epochs", "batch_size", "augment", "threads", "lr_sweep"},
                             "train");
      rc.train.lr0 = t.value("lr0", rc.train.lr0);
      rc.train.momentum = t.value("momentum", rc.train.momentum);
      rc.train.epochs = t.value("epochs", rc.train.epochs);
      rc.train.batch_size = t.value("batch_size", rc.train.batch_size);
      rc.train.augment = t.value("augment", rc.train.augment);
      rc.train.threads = t.value("threads", rc.train.threads);
      rc.lr_sweep = t.value("lr_sweep", rc.lr_sweep);
    }
    if (j.contains("data")) {
      const auto& d = j["data"];
      detail::reject_unknown(d, {"dir", "scheme", "fold"}, "data");
      rc.data.dir = d.value("dir", rc.data.dir);
      rc.data.scheme = d.value("scheme", rc.data.scheme);
      rc.data.fold = d.value("fold", rc.data.fold);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed config: ") + e.what());
  }
  return rc;
}

inline nlohmann::ordered_json config_to_json(const RunConfig& rc) {
  const auto& t = rc.train;
  return {{"seed", t.seed},
          {"arch", {{"name", t.arch}, {"levels", t.levels}, {"base_channels", t.base_channels}}},
          {"policy", {{"name", t.policy}}},
          {"train",
           {{"lr0", t.lr0},
            {"momentum", t.momentum},
            {"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"augment", t.augment},
            {"threads", t.threads},
            {"lr_sweep", rc.lr_sweep}}},
          {"data", {{"dir", rc.data.dir}, {"scheme", rc.data.scheme}, {"fold", rc.data.fold}}}};
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid JSON in " + path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const nlohmann::ordered_json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Phantom sets and their manifest

struct Manifest {
  std::vector<std::string> ids;
  /// Optional explicit split; empty when the set is meant for a fold scheme.
  std::optional<data::Fold> split;
};

inline std::string manifest_path(const std::string& dir) {
  return (std::filesystem::path(dir) / "manifest.json").string();
}

inline std::string phantom_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom_%03zu", i);
  return buf;
}

/// Parses "train,val,test" counts such as "16,2,4".
inline std::array<std::size_t, 3> parse_split_counts(const std::string& s) {
  std::vector<std::string> parts{""};
  for (char ch : s) {
    if (ch == ',')
      parts.emplace_back();
    else
      parts.back() += ch;
  }
  std::array<std::size_t, 3> out{};
  if (parts.size() != 3) throw UsageError("split must have exactly three counts, got '" + s + "'");
  for (std::size_t k = 0; k < 3; ++k) {
    if (parts[k].empty() || parts[k].find_first_not_of("0123456789") != std::string::npos)
      throw UsageError("split must look like train,val,test counts, got '" + s + "'");
    out[k] = std::stoull(parts[k]);
  }
  return out;
}

/// Writes `count` phantoms with seeds spec.seed, spec.seed+1, ... plus a
/// manifest. With split counts, the first ids train, the next validate and
/// the rest test.
inline Manifest write_phantom_set(const phantom::PhantomSpec& spec, std::size_t count, const std::string& dir,
                                  const std::optional<std::array<std::size_t, 3>>& split) {
  if (count == 0) throw UsageError("phantom count must be positive");
  if (split && (*split)[0] + (*split)[1] + (*split)[2] != count)
    throw UsageError("split counts must add up to the phantom count");
  std::filesystem::create_directories(dir);
  Manifest m;
  for (std::size_t i = 0; i < count; ++i) {
    phantom::PhantomSpec s = spec;
    s.seed = spec.seed + i;
    const std::string id = phantom_id(i);
    const phantom::PhantomPair pair = phantom::generate(s, id);
    data::write_volume(train::image_header(dir, id), pair.image);
    data::write_volume(train::label_header(dir, id), pair.label);
    m.ids.push_back(id);
  }
  nlohmann::ordered_json j;
  j["ids"] = m.ids;
  if (split) {
    data::Fold f;
    const auto a = m.ids.begin();
    const auto b = a + static_cast<std::ptrdiff_t>((*split)[0]);
    const auto c = b + static_cast<std::ptrdiff_t>((*split)[1]);
    f.train.assign(a, b);
    f.val.assign(b, c);
    f.test.assign(c, m.ids.end());
    j["split"] = {{"train", f.train}, {"val", f.val}, {"test", f.test}};
    m.split = f;
  }
  j["kind"] = spec.kind == phantom::Kind::tube ? "tube" : "blob";
  j["base_seed"] = spec.seed;
  write_json_file(manifest_path(dir), j);
  return m;
}

inline Manifest read_manifest(const std::string& dir) {
  const nlohmann::json j = read_json_file(manifest_path(dir));
  Manifest m;
  try {
    m.ids = j.at("ids").get<std::vector<std::string>>();
    if (j.contains("split")) {
      const auto& s = j["split"];
      m.split = data::Fold{s.at("train").get<std::vector<std::string>>(), s.at("val").get<std::vector<std::string>>(),
                           s.at("test").get<std::vector<std::string>>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest: " + std::string(e.what()));
  }
  if (m.ids.empty()) throw DataError("manifest lists no volumes");
  return m;
}

/// Resolves the train/val/test ids of the configured fold (1-based).
inline data::Fold select_fold(const Manifest& m, const DataConfig& dc, std::uint64_t seed) {
  if (dc.scheme == "manifest") {
    if (!m.split) throw DataError("manifest has no split; pick a split scheme instead");
    if (dc.fold != 1) throw UsageError("a manifest split has exactly one fold");
    return *m.split;
  }
  const auto folds = data::split_folds(m.ids, seed, data::parse_scheme(dc.scheme));
  if (dc.fold < 1 || dc.fold > folds.size())
    throw UsageError("fold must lie in 1.." + std::to_string(folds.size()));
  return folds[dc.fold - 1];
}

inline std::vector<train::Case> load_cases(const std::string& dir, const std::vector<std::string>& ids) {
  std::vector<train::Case> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(train::load_case(dir, id));
  return out;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = s.find(',', pos);
    const std::string part = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!part.empty()) out.push_back(part);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace znet::cli
