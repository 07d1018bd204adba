// SPDX-License-Identifier: Apache-2.0
#include "labelcon/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace labelcon {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian hosts");

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'L', 'C', 'O', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw LoadError("checkpoint truncated");
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

json body_json(const BodyConfig& b) {
  return {{"kind", to_string(b.kind)},
          {"in_dim", b.in_dim},
          {"out_dim", b.out_dim},
          {"hidden_dims", b.hidden_dims},
          {"activation", to_string(b.activation)}};
}

BodyConfig body_from(const json& j) {
  BodyConfig b;
  b.kind = parse_body_kind(j.at("kind").get<std::string>());
  b.in_dim = j.at("in_dim").get<std::size_t>();
  b.out_dim = j.at("out_dim").get<std::size_t>();
  b.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  b.activation = parse_activation(j.at("activation").get<std::string>());
  return b;
}

json head_json(const HeadConfig& h) {
  return {{"in_dim", h.in_dim},
          {"hidden", h.hidden},
          {"out_dim", h.out_dim},
          {"dropout_rate", h.dropout_rate},
          {"activation", to_string(h.activation)}};
}

HeadConfig head_from(const json& j) {
  HeadConfig h;
  h.in_dim = j.at("in_dim").get<std::size_t>();
  h.hidden = j.at("hidden").get<std::size_t>();
  h.out_dim = j.at("out_dim").get<std::size_t>();
  h.dropout_rate = j.at("dropout_rate").get<double>();
  h.activation = parse_activation(j.at("activation").get<std::string>());
  return h;
}


}  // namespace

std::string serialize_tensors(const std::vector<Tensor>& tensors) {
  std::string out;
  for (const auto& t : tensors) {
    out += t.name;
    out.push_back('\0');
    put<std::uint64_t>(out, t.value.rows());
    put<std::uint64_t>(out, t.value.cols());
    for (double v : t.value.data()) put<double>(out, v);
  }
  return out;
}

std::string encode_checkpoint(const Checkpoint& ck) {
  const auto& p = ck.params;
  const auto& o = ck.optimizer;
  json header;
  header["body"] = body_json(p.body);
  header["head"] = head_json(p.head);
  header["body_frozen"] = p.body_frozen;
  header["head_frozen"] = p.head_frozen;
  header["optimizer"] = {{"kind", to_string(o.config.kind)},
                         {"lr_head", o.config.lr_head},
                         {"lr_body", o.config.lr_body},
                         {"beta1", o.config.beta1},
                         {"beta2", o.config.beta2},
                         {"eps", o.config.eps},
                         {"step_count", o.step_count},
                         {"body_steps", o.body_steps},
                         {"head_steps", o.head_steps}};
  header["seeds"] = ck.seeds;

  json tensors = json::array();
  std::string blobs;
  auto add = [&](const std::string& group, const std::string& name, const Matrix& m) {
    tensors.push_back({{"group", group}, {"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    for (double v : m.data()) put<double>(blobs, v);
  };
  for (const auto& t : p.body_tensors) add("body", t.name, t.value);
  for (const auto& t : p.head_tensors) add("head", t.name, t.value);
  for (std::size_t i = 0; i < o.m_body.size(); ++i) {
    add("m_body", p.body_tensors.at(i).name, o.m_body[i]);
    add("v_body", p.body_tensors.at(i).name, o.v_body[i]);
  }
  for (std::size_t i = 0; i < o.m_head.size(); ++i) {
    add("m_head", p.head_tensors.at(i).name, o.m_head[i]);
    add("v_head", p.head_tensors.at(i).name, o.v_head[i]);
  }
  header["tensors"] = tensors;

  const std::string text = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  out += blobs;
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw LoadError("not a checkpoint file (bad magic)");
  }
  std::size_t pos = sizeof kMagic;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kVersion) throw LoadError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = take<std::uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw LoadError("checkpoint truncated");

  Checkpoint ck;
  try {
    const json header = json::parse(bytes.substr(pos, header_len));
    pos += header_len;
    auto& p = ck.params;
    p.body = body_from(header.at("body"));
    p.head = head_from(header.at("head"));
    p.body_frozen = header.at("body_frozen").get<bool>();
    p.head_frozen = header.at("head_frozen").get<bool>();
    const auto& oj = header.at("optimizer");
    auto& o = ck.optimizer;
    o.config.kind = parse_optimizer_kind(oj.at("kind").get<std::string>());
    o.config.lr_head = oj.at("lr_head").get<double>();
    o.config.lr_body = oj.at("lr_body").get<double>();
    o.config.beta1 = oj.at("beta1").get<double>();
    o.config.beta2 = oj.at("beta2").get<double>();
    o.config.eps = oj.at("eps").get<double>();
    o.step_count = oj.at("step_count").get<std::uint64_t>();
    o.body_steps = oj.at("body_steps").get<std::uint64_t>();
    o.head_steps = oj.at("head_steps").get<std::uint64_t>();
    ck.seeds = header.at("seeds").get<std::map<std::string, std::uint64_t>>();

    for (const auto& tj : header.at("tensors")) {
      const auto rows = tj.at("rows").get<std::size_t>();
      const auto cols = tj.at("cols").get<std::size_t>();
      std::vector<double> values(rows * cols);
      for (auto& v : values) v = take<double>(bytes, pos);
      Matrix m(rows, cols, std::move(values));
      const auto group = tj.at("group").get<std::string>();
      const auto name = tj.at("name").get<std::string>();
      if (group == "body") p.body_tensors.push_back({name, std::move(m)});
      else if (group == "head") p.head_tensors.push_back({name, std::move(m)});
      else if (group == "m_body") o.m_body.push_back(std::move(m));
      else if (group == "v_body") o.v_body.push_back(std::move(m));
      else if (group == "m_head") o.m_head.push_back(std::move(m));
      else if (group == "v_head") o.v_head.push_back(std::move(m));
      else throw LoadError("unknown tensor group '" + group + "'");
    }
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed checkpoint header: ") + e.what());
  }
  if (pos != bytes.size()) throw LoadError("trailing bytes after checkpoint data");
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  const auto bytes = encode_checkpoint(checkpoint);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace labelcon
