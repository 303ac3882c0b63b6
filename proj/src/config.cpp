#include "quadtrack/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace quadtrack {

namespace {

using nlohmann::json;

// Reads known keys from an object and complains about the rest.
class Fields {
 public:
  Fields(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j.is_object()) throw ConfigError(context_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(context_ + "." + key + ": " + e.what());
    }
  }

  void get(const char* key, Eigen::Vector3d& out) {
    std::vector<double> v;
    const bool present = j_.contains(key);
    get(key, v);
    if (!present) return;
    if (v.size() != 3) throw ConfigError(context_ + "." + key + ": expected 3 numbers");
    out = Eigen::Vector3d(v[0], v[1], v[2]);
  }

  void get(const char* key, Eigen::Vector4d& out) {
    std::vector<double> v;
    const bool present = j_.contains(key);
    get(key, v);
    if (!present) return;
    if (v.size() != 4) throw ConfigError(context_ + "." + key + ": expected 4 numbers");
    out = Eigen::Vector4d(v[0], v[1], v[2], v[3]);
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(context_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json dr_to_json(const DrMode& m) { return {{"mode", std::string(to_string(m.kind))}, {"fraction", m.fraction}}; }

DrMode dr_from_json(const json& j, DrMode base, const std::string& ctx) {
  Fields f(j, ctx);
  std::string mode(to_string(base.kind));
  f.get("mode", mode);
  f.get("fraction", base.fraction);
  f.finish();
  base.kind = dr_kind_from_string(mode);
  return base;
}

std::string layer_norm_name(LayerNormPlacement p) {
  return p == LayerNormPlacement::AfterFirst ? "after_first" : "after_second";
}

LayerNormPlacement layer_norm_from_name(const std::string& s) {
  if (s == "after_first") return LayerNormPlacement::AfterFirst;
  if (s == "after_second") return LayerNormPlacement::AfterSecond;
  throw ConfigError("unknown layer_norm placement: " + s);
}

}  // namespace

json to_json(const Params& p) {
  json rotors = json::array();
  for (int j = 0; j < 4; ++j) rotors.push_back({p.rotor_pos(j, 0), p.rotor_pos(j, 1), p.rotor_pos(j, 2)});
  return {{"mass", p.mass},
          {"inertia_diag", vec(p.inertia_diag)},
          {"rotor_pos", rotors},
          {"rotor_spin_dir", vec(p.rotor_spin_dir)},
          {"k_f", p.k_f},
          {"k_m", p.k_m},
          {"motor_rate", p.motor_rate},
          {"omega_max", p.omega_max},
          {"gravity", vec(p.gravity)}};
}

Params params_from_json(const json& j, Params p) {
  Fields f(j, "vehicle");
  f.get("mass", p.mass);
  f.get("inertia_diag", p.inertia_diag);
  if (const json* arm = f.sub("arm_length")) {
    if (!arm->is_number()) throw ConfigError("vehicle.arm_length: expected a number");
    p.rotor_pos = Params::x_layout(arm->get<double>());
  }
  if (const json* rp = f.sub("rotor_pos")) {
    if (!rp->is_array() || rp->size() != 4) throw ConfigError("vehicle.rotor_pos: expected 4 rows");
    for (int r = 0; r < 4; ++r) {
      const auto& row = (*rp)[r];
      if (!row.is_array() || row.size() != 3) throw ConfigError("vehicle.rotor_pos: expected rows of 3 numbers");
      for (int c = 0; c < 3; ++c) p.rotor_pos(r, c) = row[c].get<double>();
    }
  }
  f.get("rotor_spin_dir", p.rotor_spin_dir);
  f.get("k_f", p.k_f);
  f.get("k_m", p.k_m);
  f.get("motor_rate", p.motor_rate);
  f.get("omega_max", p.omega_max);
  f.get("gravity", p.gravity);
  f.finish();
  p.validate();
  return p;
}

json to_json(const EnvConfig& c) {
  return {{"lambda", c.lambda},
          {"smoothness", std::string(to_string(c.smoothness))},
          {"smoothness_scale", c.smoothness_scale},
          {"c_pos", c.c_pos},
          {"episode_len", c.episode_len},
          {"dt", c.dt},
          {"dr",
           {{"mass", dr_to_json(c.dr.mass)},
            {"inertia", dr_to_json(c.dr.inertia)},
            {"motor_time_constant", dr_to_json(c.dr.motor_time_constant)},
            {"k_f", dr_to_json(c.dr.k_f)}}},
          {"polynomial_weight", c.polynomial_weight},
          {"zigzag_weight", c.zigzag_weight},
          {"observation",
           {{"window", c.obs.window},
            {"spacing", c.obs.spacing},
            {"include_velocity", c.obs.include_velocity},
            {"attitude", c.obs.attitude == AttitudeRepr::RotationMatrix ? "rotation_matrix" : "quaternion"},
            {"include_prev_action", c.obs.include_prev_action},
            {"actor_time_vector", c.obs.actor_time_vector},
            {"critic_time_vector", c.obs.critic_time_vector},
            {"time_vector_k", c.obs.time_vector_k}}},
          {"init_pos_sigma", c.init_pos_sigma},
          {"init_vel_sigma", c.init_vel_sigma},
          {"init_att_sigma", c.init_att_sigma},
          {"crash_distance", c.crash_distance},
          {"crash_tilt_deg", c.crash_tilt_deg},
          {"lpf_alpha", c.lpf_alpha},
          {"action_clip", c.action_clip},
          {"max_accel", c.bounds.max_accel},
          {"max_body_rate", c.bounds.max_body_rate},
          {"kp_rate", vec(c.gains.kp_rate)},
          {"polynomial",
           {{"min_segment", c.polynomial.min_segment},
            {"max_segment", c.polynomial.max_segment},
            {"max_speed", c.polynomial.max_speed},
            {"height", c.polynomial.height}}},
          {"zigzag",
           {{"half_width", c.zigzag.half_width},
            {"min_interval", c.zigzag.min_interval},
            {"max_interval", c.zigzag.max_interval},
            {"max_speed", c.zigzag.max_speed},
            {"height", c.zigzag.height}}}};
}

EnvConfig env_config_from_json(const json& j, EnvConfig c) {
  Fields f(j, "env");
  f.get("lambda", c.lambda);
  std::string smooth(to_string(c.smoothness));
  f.get("smoothness", smooth);
  c.smoothness = smoothness_kind_from_string(smooth);
  f.get("smoothness_scale", c.smoothness_scale);
  f.get("c_pos", c.c_pos);
  f.get("episode_len", c.episode_len);
  f.get("dt", c.dt);
  if (const json* dr = f.sub("dr")) {
    Fields d(*dr, "env.dr");
    if (const json* m = d.sub("mass")) c.dr.mass = dr_from_json(*m, c.dr.mass, "env.dr.mass");
    if (const json* m = d.sub("inertia")) c.dr.inertia = dr_from_json(*m, c.dr.inertia, "env.dr.inertia");
    if (const json* m = d.sub("motor_time_constant")) {
      c.dr.motor_time_constant = dr_from_json(*m, c.dr.motor_time_constant, "env.dr.motor_time_constant");
    }
    if (const json* m = d.sub("k_f")) c.dr.k_f = dr_from_json(*m, c.dr.k_f, "env.dr.k_f");
    d.finish();
  }
  f.get("polynomial_weight", c.polynomial_weight);
  f.get("zigzag_weight", c.zigzag_weight);
  if (const json* o = f.sub("observation")) {
    Fields ob(*o, "env.observation");
    ob.get("window", c.obs.window);
    ob.get("spacing", c.obs.spacing);
    ob.get("include_velocity", c.obs.include_velocity);
    std::string att = c.obs.attitude == AttitudeRepr::RotationMatrix ? "rotation_matrix" : "quaternion";
    ob.get("attitude", att);
    if (att == "rotation_matrix") {
      c.obs.attitude = AttitudeRepr::RotationMatrix;
    } else if (att == "quaternion") {
      c.obs.attitude = AttitudeRepr::Quaternion;
    } else {
      throw ConfigError("env.observation.attitude: unknown value " + att);
    }
    ob.get("include_prev_action", c.obs.include_prev_action);
    ob.get("actor_time_vector", c.obs.actor_time_vector);
    ob.get("critic_time_vector", c.obs.critic_time_vector);
    ob.get("time_vector_k", c.obs.time_vector_k);
    ob.finish();
  }
  f.get("init_pos_sigma", c.init_pos_sigma);
  f.get("init_vel_sigma", c.init_vel_sigma);
  f.get("init_att_sigma", c.init_att_sigma);
  f.get("crash_distance", c.crash_distance);
  f.get("crash_tilt_deg", c.crash_tilt_deg);
  f.get("lpf_alpha", c.lpf_alpha);
  f.get("action_clip", c.action_clip);
  f.get("max_accel", c.bounds.max_accel);
  f.get("max_body_rate", c.bounds.max_body_rate);
  f.get("kp_rate", c.gains.kp_rate);
  if (const json* p = f.sub("polynomial")) {
    Fields pf(*p, "env.polynomial");
    pf.get("min_segment", c.polynomial.min_segment);
    pf.get("max_segment", c.polynomial.max_segment);
    pf.get("max_speed", c.polynomial.max_speed);
    pf.get("height", c.polynomial.height);
    pf.finish();
  }
  if (const json* z = f.sub("zigzag")) {
    Fields zf(*z, "env.zigzag");
    zf.get("half_width", c.zigzag.half_width);
    zf.get("min_interval", c.zigzag.min_interval);
    zf.get("max_interval", c.zigzag.max_interval);
    zf.get("max_speed", c.zigzag.max_speed);
    zf.get("height", c.zigzag.height);
    zf.finish();
  }
  f.finish();
  c.validate();
  return c;
}

json to_json(const NetworkConfig& c) {
  return {{"width", c.width},
          {"layer_norm", layer_norm_name(c.layer_norm)},
          {"log_std_init", c.log_std_init},
          {"encoder_gain", c.encoder_gain},
          {"policy_gain", c.policy_gain},
          {"value_gain", c.value_gain}};
}

NetworkConfig network_config_from_json(const json& j, NetworkConfig c) {
  Fields f(j, "train.network");
  f.get("width", c.width);
  std::string ln = layer_norm_name(c.layer_norm);
  f.get("layer_norm", ln);
  c.layer_norm = layer_norm_from_name(ln);
  f.get("log_std_init", c.log_std_init);
  f.get("encoder_gain", c.encoder_gain);
  f.get("policy_gain", c.policy_gain);
  f.get("value_gain", c.value_gain);
  f.finish();
  if (c.width < 1) throw ConfigError("train.network.width must be positive");
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"gamma", c.gamma},
          {"gae_lambda", c.gae_lambda},
          {"clip_eps", c.clip_eps},
          {"learning_rate", c.learning_rate},
          {"update_epochs", c.update_epochs},
          {"minibatches", c.minibatches},
          {"n_envs", c.n_envs},
          {"horizon", c.horizon},
          {"iterations", c.iterations},
          {"entropy_coef", c.entropy_coef},
          {"value_coef", c.value_coef},
          {"max_grad_norm", c.max_grad_norm},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"workers", c.workers},
          {"log_wall_time", c.log_wall_time},
          {"network", to_json(c.network)}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  Fields f(j, "train");
  f.get("gamma", c.gamma);
  f.get("gae_lambda", c.gae_lambda);
  f.get("clip_eps", c.clip_eps);
  f.get("learning_rate", c.learning_rate);
  f.get("update_epochs", c.update_epochs);
  f.get("minibatches", c.minibatches);
  f.get("n_envs", c.n_envs);
  f.get("horizon", c.horizon);
  f.get("iterations", c.iterations);
  f.get("entropy_coef", c.entropy_coef);
  f.get("value_coef", c.value_coef);
  f.get("max_grad_norm", c.max_grad_norm);
  f.get("seed", c.seed);
  f.get("checkpoint_every", c.checkpoint_every);
  f.get("workers", c.workers);
  f.get("log_wall_time", c.log_wall_time);
  if (const json* n = f.sub("network")) c.network = network_config_from_json(*n, c.network);
  f.finish();
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  return {{"train", to_json(c.train)}, {"env", to_json(c.env)}, {"vehicle", to_json(c.vehicle)}};
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  Fields f(j, "config");
  if (const json* t = f.sub("train")) c.train = train_config_from_json(*t, c.train);
  if (const json* e = f.sub("env")) c.env = env_config_from_json(*e, c.env);
  if (const json* v = f.sub("vehicle")) c.vehicle = params_from_json(*v, c.vehicle);
  f.finish();
  return c;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from_json(read_json_file(path)); }

std::string config_hash(const json& j) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace quadtrack
