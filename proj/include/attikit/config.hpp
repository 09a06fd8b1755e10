#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <string>

#include <json.hpp>

#include "attikit/error.hpp"
#include "attikit/sim.hpp"

namespace attikit {

using Json = nlohmann::json;

namespace cfgdetail {

inline void require_object(const Json& j, const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
}

inline void reject_unknown_keys(const Json& j, const std::string& ctx,
                                std::initializer_list<const char*> allowed) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw ConfigError(ctx + ": unknown key \"" + key + "\"");
  }
}

inline const Json& require_key(const Json& j, const std::string& ctx, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(ctx + ": missing required key \"" + key + "\"");
  return *it;
}

inline double get_number(const Json& j, const std::string& ctx, const char* key) {
  const Json& v = require_key(j, ctx, key);
  if (!v.is_number()) throw ConfigError(ctx + "." + key + ": expected a number");
  return v.get<double>();
}

inline double get_number_or(const Json& j, const std::string& ctx, const char* key,
                            double fallback) {
  if (!j.contains(key)) return fallback;
  return get_number(j, ctx, key);
}

inline Vec3 get_vec3(const Json& j, const std::string& ctx, const char* key) {
  const Json& v = require_key(j, ctx, key);
  if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() ||
      !v[2].is_number())
    throw ConfigError(ctx + "." + key + ": expected an array of 3 numbers");
  return Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
}

inline Vec3 get_vec3_or(const Json& j, const std::string& ctx, const char* key,
                        const Vec3& fallback) {
  if (!j.contains(key)) return fallback;
  return get_vec3(j, ctx, key);
}

inline Mat3 get_mat3(const Json& j, const std::string& ctx, const char* key) {
  const Json& v = require_key(j, ctx, key);
  if (!v.is_array() || v.size() != 3) throw ConfigError(ctx + "." + key + ": expected 3 rows");
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    const Json& row = v[r];
    if (!row.is_array() || row.size() != 3)
      throw ConfigError(ctx + "." + key + ": expected 3 columns per row");
    for (int c = 0; c < 3; ++c) {
      if (!row[c].is_number())
        throw ConfigError(ctx + "." + key + ": expected numeric entries");
      m(r, c) = row[c].get<double>();
    }
  }
  return m;
}

inline OmegaProfile parse_profile(const Json& j) {
  const std::string ctx = "omega_profile";
  require_object(j, ctx);
  const Json& tj = require_key(j, ctx, "type");
  if (!tj.is_string()) throw ConfigError(ctx + ".type: expected a string");
  const std::string type = tj.get<std::string>();
  if (type == "constant") {
    reject_unknown_keys(j, ctx, {"type", "omega_rad_s"});
    return OmegaProfile::constant(get_vec3(j, ctx, "omega_rad_s"));
  }
  if (type == "sinusoid") {
    reject_unknown_keys(j, ctx, {"type", "amplitude_rad_s", "freq_hz"});
    return OmegaProfile::sinusoid(get_vec3(j, ctx, "amplitude_rad_s"),
                                  get_number(j, ctx, "freq_hz"));
  }
  if (type == "piecewise") {
    reject_unknown_keys(j, ctx, {"type", "segments"});
    const Json& segs = require_key(j, ctx, "segments");
    if (!segs.is_array() || segs.empty())
      throw ConfigError(ctx + ".segments: expected a non-empty array");
    std::vector<std::pair<double, Vec3>> out;
    for (size_t i = 0; i < segs.size(); ++i) {
      const std::string sctx = ctx + ".segments[" + std::to_string(i) + "]";
      require_object(segs[i], sctx);
      reject_unknown_keys(segs[i], sctx, {"t_start_s", "omega_rad_s"});
      out.emplace_back(get_number(segs[i], sctx, "t_start_s"),
                       get_vec3(segs[i], sctx, "omega_rad_s"));
    }
    return OmegaProfile::piecewise(std::move(out));
  }
  throw ConfigError(ctx + ".type: unknown profile type \"" + type + "\"");
}

inline ObservationModel parse_observations(const Json& j) {
  if (!j.is_array() || j.empty())
    throw ConfigError("observations: expected a non-empty array");
  ObservationModel model;
  for (size_t i = 0; i < j.size(); ++i) {
    const std::string ctx = "observations[" + std::to_string(i) + "]";
    require_object(j[i], ctx);
    reject_unknown_keys(j[i], ctx, {"direction", "weight_k", "sigma_v"});
    VectorObservation obs;
    obs.dir_inertial = get_vec3(j[i], ctx, "direction");
    obs.weight = get_number_or(j[i], ctx, "weight_k", 1.0);
    obs.sigma = get_number_or(j[i], ctx, "sigma_v", 0.0);
    if (!(obs.weight > 0.0)) throw ConfigError(ctx + ".weight_k: must be > 0");
    if (obs.sigma < 0.0) throw ConfigError(ctx + ".sigma_v: must be >= 0");
    const double norm = obs.dir_inertial.norm();
    if (!(norm > 1e-12)) throw ConfigError(ctx + ".direction: must be nonzero");
    obs.dir_inertial /= norm;  // directions are normalized on ingest
    model.vectors.push_back(obs);
  }
  return model;
}

inline FilterKind parse_filter(const Json& j, Scenario& sc) {
  const std::string ctx = "filter";
  require_object(j, ctx);
  const Json& tj = require_key(j, ctx, "type");
  if (!tj.is_string()) throw ConfigError(ctx + ".type: expected a string");
  const std::string type = tj.get<std::string>();

  if (type == "mahony") {
    reject_unknown_keys(j, ctx, {"type", "kp", "ki"});
    const double kp = get_number(j, ctx, "kp");
    const double ki = get_number(j, ctx, "ki");
    if (!(kp > 0.0)) throw ConfigError(ctx + ".kp: must be > 0");
    if (ki < 0.0) throw ConfigError(ctx + ".ki: must be >= 0");
    sc.gains = GainSchedule::scalar(kp, ki);
    return FilterKind::kMahony;
  }
  if (type == "generalized") {
    reject_unknown_keys(j, ctx, {"type", "kp_mat", "ki_mat", "kp_diag", "ki_diag"});
    Mat3 kp, ki;
    if (j.contains("kp_mat"))
      kp = get_mat3(j, ctx, "kp_mat");
    else
      kp = get_vec3(j, ctx, "kp_diag").asDiagonal();
    if (j.contains("ki_mat"))
      ki = get_mat3(j, ctx, "ki_mat");
    else
      ki = get_vec3(j, ctx, "ki_diag").asDiagonal();
    sc.gains = GainSchedule::constant(kp, ki);
    return FilterKind::kGeneralized;
  }
  if (type == "bias_free_mekf") {
    reject_unknown_keys(j, ctx, {"type", "p0_att_diag"});
    sc.p0_att = Vec3(get_vec3_or(j, ctx, "p0_att_diag", Vec3::Ones())).asDiagonal();
    return FilterKind::kBiasFreeMekf;
  }
  if (type == "full_mekf") {
    reject_unknown_keys(j, ctx, {"type", "p0_diag"});
    sc.p0 = Mat6::Identity();
    if (j.contains("p0_diag")) {
      const Json& v = j["p0_diag"];
      if (!v.is_array() || v.size() != 6)
        throw ConfigError(ctx + ".p0_diag: expected an array of 6 numbers");
      for (int i = 0; i < 6; ++i) {
        if (!v[i].is_number()) throw ConfigError(ctx + ".p0_diag: expected numbers");
        sc.p0(i, i) = v[i].get<double>();
      }
    }
    return FilterKind::kFullMekf;
  }
  if (type == "constant_gain_mekf") {
    reject_unknown_keys(j, ctx, {"type"});
    return FilterKind::kConstantGainMekf;
  }
  throw ConfigError(ctx + ".type: unknown filter type \"" + type + "\"");
}

}  // namespace cfgdetail

// Declarative mirror of Scenario plus the optional output directory.
struct RunConfig {
  Scenario scenario;
  std::string out_dir;
  Json echo;  // normalized configuration document, echoed into meta.json
};

/// Parses and validates a configuration document. Unknown keys are
/// rejected anywhere in the tree; all physical quantities are SI with the
/// unit suffix in the key name.
inline RunConfig parse_config(const Json& j) {
  using namespace cfgdetail;
  require_object(j, "config");
  reject_unknown_keys(j, "config",
                      {"duration_s", "dt_s", "seed", "out_dir", "omega_profile", "truth",
                       "estimate", "observations", "gyro", "filter"});

  RunConfig cfg;
  Scenario& sc = cfg.scenario;
  sc.duration = get_number(j, "config", "duration_s");
  sc.dt = get_number(j, "config", "dt_s");
  if (!(sc.dt > 0.0)) throw ConfigError("config.dt_s: must be > 0");
  if (!(sc.duration >= sc.dt)) throw ConfigError("config.duration_s: must be >= dt_s");

  if (j.contains("seed")) {
    const Json& s = j["seed"];
    if (!s.is_number_unsigned()) throw ConfigError("config.seed: expected an unsigned integer");
    sc.seed = s.get<std::uint64_t>();
  }
  if (j.contains("out_dir")) {
    if (!j["out_dir"].is_string()) throw ConfigError("config.out_dir: expected a string");
    cfg.out_dir = j["out_dir"].get<std::string>();
  }

  sc.profile = parse_profile(require_key(j, "config", "omega_profile"));

  if (j.contains("truth")) {
    const Json& t = j["truth"];
    require_object(t, "truth");
    reject_unknown_keys(t, "truth", {"attitude_rotvec_rad", "bias_rad_s"});
    sc.c0 = exp_map(get_vec3_or(t, "truth", "attitude_rotvec_rad", Vec3::Zero()));
    sc.b0 = get_vec3_or(t, "truth", "bias_rad_s", Vec3::Zero());
  }
  if (j.contains("estimate")) {
    const Json& e = j["estimate"];
    require_object(e, "estimate");
    reject_unknown_keys(e, "estimate", {"attitude_rotvec_rad", "bias_rad_s"});
    sc.c_hat0 = exp_map(get_vec3_or(e, "estimate", "attitude_rotvec_rad", Vec3::Zero()));
    sc.b_hat0 = get_vec3_or(e, "estimate", "bias_rad_s", Vec3::Zero());
  }

  sc.model = parse_observations(require_key(j, "config", "observations"));

  if (j.contains("gyro")) {
    const Json& g = j["gyro"];
    require_object(g, "gyro");
    reject_unknown_keys(g, "gyro", {"sigma_omega_rad_s", "sigma_b_rad_s"});
    sc.gyro.sigma_omega = get_number_or(g, "gyro", "sigma_omega_rad_s", 0.0);
    sc.gyro.sigma_b = get_number_or(g, "gyro", "sigma_b_rad_s", 0.0);
    if (sc.gyro.sigma_omega < 0.0) throw ConfigError("gyro.sigma_omega_rad_s: must be >= 0");
    if (sc.gyro.sigma_b < 0.0) throw ConfigError("gyro.sigma_b_rad_s: must be >= 0");
  }
  sc.gyro.b0 = sc.b0;
  sc.noise.sigma_omega = sc.gyro.sigma_omega;
  sc.noise.sigma_b = sc.gyro.sigma_b;

  sc.filter = parse_filter(require_key(j, "config", "filter"), sc);

  try {
    sc.validate();
  } catch (const InvalidModel& e) {
    throw ConfigError(e.what());
  }

  cfg.echo = j;
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path.string());
  Json j;
  try {
    j = Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return parse_config(j);
}

}  // namespace attikit
