#include <set>
#include <stdexcept>

#include "madiff/pipeline.hpp"

namespace madiff::pipeline {

using nlohmann::json;

namespace {

template <class E, std::size_t N>
E parse_enum(const std::string& what, const std::string& s, const std::array<std::pair<const char*, E>, N>& table) {
  for (const auto& [name, value] : table)
    if (s == name) return value;
  std::string options;
  for (const auto& [name, _] : table) options += std::string(options.empty() ? "" : ", ") + name;
  throw std::invalid_argument("unknown " + what + " '" + s + "' (expected one of: " + options + ")");
}

template <class E, std::size_t N>
std::string enum_name(E v, const std::array<std::pair<const char*, E>, N>& table) {
  for (const auto& [name, value] : table)
    if (v == value) return name;
  throw std::logic_error("unnamed enum value");
}

constexpr std::array<std::pair<const char*, MotionMode>, 4> kMotion{{{"none", MotionMode::none},
                                                                    {"concat", MotionMode::concat},
                                                                    {"sum", MotionMode::sum},
                                                                    {"fused-input", MotionMode::fused_input}}};
constexpr std::array<std::pair<const char*, ssm::ScanDirection>, 2> kScan{
    {{"forward", ssm::ScanDirection::forward}, {"bidirectional", ssm::ScanDirection::bidirectional}}};
constexpr std::array<std::pair<const char*, FutureSemantic>, 2> kFutureSem{
    {{"tile-last", FutureSemantic::tile_last}, {"zeros", FutureSemantic::zeros}}};
constexpr std::array<std::pair<const char*, FutureMotion>, 2> kFutureMotion{
    {{"actual", FutureMotion::actual}, {"tile-last", FutureMotion::tile_last}}};
constexpr std::array<std::pair<const char*, HomographySource>, 2> kHomSource{
    {{"exact", HomographySource::exact}, {"ransac", HomographySource::ransac}}};

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& what) {
  if (!j.is_object()) throw std::invalid_argument(what + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("unknown key '" + key + "' in " + what);
}

template <class T>
void read(const json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(field);
  } catch (const json::exception&) {
    throw std::invalid_argument("key '" + std::string(key) + "' has the wrong type");
  }
}

std::string read_string(const json& j, const char* key) {
  std::string s;
  read(j, key, s);
  return s;
}

}  // namespace

std::string to_string(MotionMode m) { return enum_name(m, kMotion); }
MotionMode motion_from_string(const std::string& s) { return parse_enum("motion mode", s, kMotion); }
std::string to_string(ssm::ScanDirection d) { return enum_name(d, kScan); }
ssm::ScanDirection scan_from_string(const std::string& s) { return parse_enum("scan direction", s, kScan); }
std::string to_string(FutureSemantic f) { return enum_name(f, kFutureSem); }
FutureSemantic future_semantic_from_string(const std::string& s) {
  return parse_enum("future semantic mode", s, kFutureSem);
}
std::string to_string(FutureMotion f) { return enum_name(f, kFutureMotion); }
FutureMotion future_motion_from_string(const std::string& s) {
  return parse_enum("future motion mode", s, kFutureMotion);
}
std::string to_string(HomographySource h) { return enum_name(h, kHomSource); }
HomographySource homography_source_from_string(const std::string& s) {
  return parse_enum("homography source", s, kHomSource);
}

ssm::SsmDims ModelConfig::ssm_dims() const {
  ssm::SsmDims d;
  d.d_model = d_model;
  d.d_state = d_state;
  d.d_motion = d_motion;
  d.d_conv = d_conv;
  d.expand = expand;
  return d;
}

void ModelConfig::validate() const {
  ssm_dims().validate();
  if (d_sem == 0) throw std::invalid_argument("d_sem must be positive");
  if (d_model < 2) throw std::invalid_argument("d_model must be at least 2");
  if (diffusion_steps < 1) throw std::invalid_argument("diffusion_steps must be at least 1");
  if (inference_steps < 1) throw std::invalid_argument("inference_steps must be at least 1");
  if (!(schedule_offset > 0.0 && schedule_offset < 1.0)) throw std::invalid_argument("schedule_offset must lie in (0, 1)");
  if (n_past < 2) throw std::invalid_argument("n_past must be at least 2");
  if (n_future < 1) throw std::invalid_argument("n_future must be at least 1");
  if (width < 1 || height < 1) throw std::invalid_argument("canvas resolution must be positive");
  weights.validate();
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be nonnegative");
  if (grad_clip < 0.0) throw std::invalid_argument("grad_clip must be nonnegative");
}

Preset toy_preset() {
  Preset p;
  p.model.weights.vlb = 0.01;
  p.train.lr = 3e-3;
  return p;
}

Preset paper_preset() {
  Preset p;
  p.model.d_model = 256;
  p.model.d_motion = 64;
  p.model.blocks = 6;
  p.model.diffusion_steps = 1000;
  p.model.inference_steps = 1000;
  p.train.lr = 1e-4;
  p.train.epochs = 400;
  return p;
}

Preset preset_from_string(const std::string& name) {
  if (name == "toy") return toy_preset();
  if (name == "paper") return paper_preset();
  throw std::invalid_argument("unknown preset '" + name + "' (expected toy or paper)");
}

json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"d_sem", c.d_sem},
          {"d_motion", c.d_motion},
          {"d_state", c.d_state},
          {"d_conv", c.d_conv},
          {"expand", c.expand},
          {"blocks", c.blocks},
          {"diffusion_steps", c.diffusion_steps},
          {"schedule_offset", c.schedule_offset},
          {"inference_steps", c.inference_steps},
          {"weights",
           {{"vlb", c.weights.vlb},
            {"dis", c.weights.dis},
            {"reg", c.weights.reg},
            {"angle", c.weights.angle},
            {"len", c.weights.len}}},
          {"n_past", c.n_past},
          {"n_future", c.n_future},
          {"width", c.width},
          {"height", c.height},
          {"motion", to_string(c.motion)},
          {"scan", to_string(c.scan)},
          {"cdc", c.cdc},
          {"future_semantic", to_string(c.future_semantic)}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"grad_clip", c.grad_clip},
          {"prior_every", c.prior_every},
          {"future_motion", to_string(c.future_motion)},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  reject_unknown(j,
                 {"d_model", "d_sem", "d_motion", "d_state", "d_conv", "expand", "blocks", "diffusion_steps",
                  "schedule_offset", "inference_steps", "weights", "n_past", "n_future", "width", "height", "motion",
                  "scan", "cdc", "future_semantic"},
                 "model config");
  read(j, "d_model", c.d_model);
  read(j, "d_sem", c.d_sem);
  read(j, "d_motion", c.d_motion);
  read(j, "d_state", c.d_state);
  read(j, "d_conv", c.d_conv);
  read(j, "expand", c.expand);
  read(j, "blocks", c.blocks);
  read(j, "diffusion_steps", c.diffusion_steps);
  read(j, "schedule_offset", c.schedule_offset);
  read(j, "inference_steps", c.inference_steps);
  read(j, "n_past", c.n_past);
  read(j, "n_future", c.n_future);
  read(j, "width", c.width);
  read(j, "height", c.height);
  read(j, "cdc", c.cdc);
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    reject_unknown(w, {"vlb", "dis", "reg", "angle", "len"}, "loss weights");
    read(w, "vlb", c.weights.vlb);
    read(w, "dis", c.weights.dis);
    read(w, "reg", c.weights.reg);
    read(w, "angle", c.weights.angle);
    read(w, "len", c.weights.len);
  }
  if (j.contains("motion")) c.motion = motion_from_string(read_string(j, "motion"));
  if (j.contains("scan")) c.scan = scan_from_string(read_string(j, "scan"));
  if (j.contains("future_semantic")) c.future_semantic = future_semantic_from_string(read_string(j, "future_semantic"));
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  reject_unknown(j, {"epochs", "batch_size", "lr", "weight_decay", "grad_clip", "prior_every", "future_motion", "seed"},
                 "train config");
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "lr", c.lr);
  read(j, "weight_decay", c.weight_decay);
  read(j, "grad_clip", c.grad_clip);
  read(j, "prior_every", c.prior_every);
  read(j, "seed", c.seed);
  if (j.contains("future_motion")) c.future_motion = future_motion_from_string(read_string(j, "future_motion"));
  c.validate();
  return c;
}

}  // namespace madiff::pipeline
