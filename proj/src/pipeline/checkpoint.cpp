#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "madiff/pipeline.hpp"

namespace madiff::pipeline {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'M', 'A', 'D', 'F'};

template <class U>
void put_le(std::ostream& out, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <class U>
U get_le(std::istream& in, const char* what) {
  unsigned char b[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(U)))
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

void put_doubles(std::ostream& out, const std::vector<double>& data) {
  for (double d : data) put_le(out, std::bit_cast<std::uint64_t>(d));
}

std::vector<double> get_doubles(std::istream& in, std::size_t n, const std::string& what) {
  std::vector<double> data(n);
  for (auto& d : data) d = std::bit_cast<double>(get_le<std::uint64_t>(in, what.c_str()));
  return data;
}

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::vector<double> tensor_data(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

Checkpoint make_checkpoint(const Model& model, const TrainConfig& train, std::uint64_t seed,
                           const dg::AdamWState* optimizer) {
  Checkpoint ck;
  ck.model = model.config();
  ck.train = train;
  ck.seed = seed;
  for (const auto& p : model.params()) ck.params.push_back({p.name, p.value.shape(), tensor_data(p.value)});
  if (optimizer) {
    ck.optimizer = *optimizer;
    ck.step = optimizer->step;
  }
  return ck;
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ck) {
  auto model = std::make_unique<Model>(ck.model, ck.seed);
  auto& params = model->params();
  if (params.size() != ck.params.size())
    throw CheckpointError("checkpoint holds " + std::to_string(ck.params.size()) + " arrays; the model has " +
                          std::to_string(params.size()));
  std::size_t i = 0;
  for (auto& p : params) {
    const auto& a = ck.params[i++];
    if (a.name != p.name) throw CheckpointError("checkpoint array '" + a.name + "' where '" + p.name + "' was expected");
    if (a.shape != p.value.shape())
      throw CheckpointError("checkpoint array '" + a.name + "' has shape " + dg::shape_str(a.shape) + "; expected " +
                            dg::shape_str(p.value.shape()));
    p.value = Tensor(a.shape, a.data);
  }
  if (ck.optimizer) {
    const auto& st = *ck.optimizer;
    if (st.first_moment.size() != params.size() || st.second_moment.size() != params.size())
      throw CheckpointError("optimizer state does not match the parameter list");
  }
  return model;
}

void save_checkpoint(const Checkpoint& ck, std::ostream& out) {
  json arrays = json::array();
  for (const auto& a : ck.params) arrays.push_back({{"name", a.name}, {"shape", a.shape}});
  json header{{"model", to_json(ck.model)},
              {"train", to_json(ck.train)},
              {"seed", ck.seed},
              {"step", ck.step},
              {"dtype", "f64le"},
              {"arrays", arrays},
              {"optimizer", nullptr}};
  if (ck.optimizer) {
    const auto& o = ck.optimizer->options;
    header["optimizer"] = {{"step", ck.optimizer->step},
                           {"options",
                            {{"lr", o.lr},
                             {"beta1", o.beta1},
                             {"beta2", o.beta2},
                             {"eps", o.eps},
                             {"weight_decay", o.weight_decay}}}};
  }
  const std::string text = header.dump();
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : ck.params) {
    if (a.data.size() != element_count(a.shape)) throw CheckpointError("array '" + a.name + "' size mismatch");
    put_doubles(out, a.data);
  }
  if (ck.optimizer) {
    for (const auto& m : ck.optimizer->first_moment) put_doubles(out, tensor_data(m));
    for (const auto& m : ck.optimizer->second_moment) put_doubles(out, tensor_data(m));
  }
  if (!out) throw CheckpointError("failed to write checkpoint");
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp + " for writing");
    save_checkpoint(ck, out);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw CheckpointError("checkpoint truncated while reading magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError("not a checkpoint file (bad magic)");
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version > kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is newer than supported version " +
                          std::to_string(kCheckpointVersion));
  if (version == 0) throw CheckpointError("invalid checkpoint version 0");
  const auto len = get_le<std::uint64_t>(in, "header length");
  if (len > (1ULL << 30)) throw CheckpointError("checkpoint header too large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError("checkpoint truncated in header");

  Checkpoint ck;
  try {
    const json h = json::parse(text);
    if (h.at("dtype") != "f64le") throw CheckpointError("unsupported dtype " + h.at("dtype").dump());
    ck.model = model_config_from_json(h.at("model"));
    ck.train = train_config_from_json(h.at("train"));
    ck.seed = h.at("seed").get<std::uint64_t>();
    ck.step = h.at("step").get<std::uint64_t>();
    for (const auto& a : h.at("arrays"))
      ck.params.push_back({a.at("name").get<std::string>(), a.at("shape").get<std::vector<std::size_t>>(), {}});
    if (!h.at("optimizer").is_null()) {
      dg::AdamWState st;
      const auto& o = h.at("optimizer");
      st.step = o.at("step").get<std::uint64_t>();
      const auto& op = o.at("options");
      st.options.lr = op.at("lr");
      st.options.beta1 = op.at("beta1");
      st.options.beta2 = op.at("beta2");
      st.options.eps = op.at("eps");
      st.options.weight_decay = op.at("weight_decay");
      ck.optimizer = std::move(st);
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("invalid configuration in checkpoint: ") + e.what());
  }

  for (auto& a : ck.params) a.data = get_doubles(in, element_count(a.shape), "array " + a.name);
  if (ck.optimizer) {
    for (auto* moments : {&ck.optimizer->first_moment, &ck.optimizer->second_moment})
      for (const auto& a : ck.params)
        moments->push_back(Tensor(a.shape, get_doubles(in, element_count(a.shape), "moments of " + a.name)));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after checkpoint payload");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace madiff::pipeline
