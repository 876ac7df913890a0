#include "c2freg/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace c2freg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointMagic = "C2FREG-CHECKPOINT 1";

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

fs::path payload_path_for(const fs::path& sidecar) {
  fs::path p = sidecar;
  p.replace_extension(".raw");
  return p;
}

void write_sidecar(const fs::path& path, const VolumeHeader& h) {
  json j;
  j["dims"] = {h.dims.h, h.dims.w, h.dims.d};
  j["spacing"] = {h.spacing[0], h.spacing[1], h.spacing[2]};
  j["dtype"] = dtype_name(h.dtype);
  j["byte_order"] = "little";
  j["kind"] = h.kind == VolumeKind::Image ? "image" : "labels";
  j["payload"] = h.payload;
  if (h.kind == VolumeKind::Labels) j["num_structures"] = h.num_structures;
  write_file(path, j.dump(2) + "\n");
}

std::string read_payload(const fs::path& sidecar, const VolumeHeader& h) {
  const std::string bytes = read_file(sidecar.parent_path() / h.payload);
  const std::size_t expect = h.dims.count() * dtype_size(h.dtype);
  if (bytes.size() != expect)
    throw PayloadLengthError(sidecar.string() + ": payload has " + std::to_string(bytes.size()) +
                             " bytes, expected " + std::to_string(expect));
  return bytes;
}

}  // namespace

std::string dtype_name(DType t) {
  switch (t) {
    case DType::F32: return "f32";
    case DType::F64: return "f64";
    case DType::U16: return "u16";
  }
  return "?";
}

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  if (s == "u16") return DType::U16;
  throw UnknownDTypeError("unknown dtype '" + s + "' (expected f32|f64|u16)");
}

std::size_t dtype_size(DType t) { return t == DType::F64 ? 8 : t == DType::F32 ? 4 : 2; }

void write_volume(const fs::path& path, const Volume3D& v, DType dtype) {
  std::string bytes;
  bytes.reserve(v.values().size() * dtype_size(dtype));
  for (double x : v.values()) {
    switch (dtype) {
      case DType::F64: put_le<double>(bytes, x); break;
      case DType::F32: put_le<float>(bytes, static_cast<float>(x)); break;
      case DType::U16:
        if (!(x >= 0.0 && x <= 65535.0) || x != std::floor(x))
          throw std::invalid_argument("write_volume: value not representable as u16");
        put_le<std::uint16_t>(bytes, static_cast<std::uint16_t>(x));
        break;
    }
  }
  const fs::path payload = payload_path_for(path);
  write_file(payload, bytes);
  write_sidecar(path, {v.dims(), v.spacing(), dtype, VolumeKind::Image, payload.filename().string(), 0});
}

void write_labels(const fs::path& path, const LabelVolume& lv) {
  std::string bytes;
  bytes.reserve(lv.labels().size() * 2);
  for (Label l : lv.labels()) put_le<std::uint16_t>(bytes, l);
  const fs::path payload = payload_path_for(path);
  write_file(payload, bytes);
  write_sidecar(path, {lv.dims(), lv.spacing(), DType::U16, VolumeKind::Labels,
                       payload.filename().string(), lv.num_structures()});
}

VolumeHeader read_volume_header(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw MalformedSidecarError(path.string() + ": " + e.what());
  }
  VolumeHeader h;
  std::string dtype;
  try {
    const auto dims = j.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw MalformedSidecarError(path.string() + ": dims must have 3 entries");
    h.dims = {dims[0], dims[1], dims[2]};
    if (j.contains("spacing")) {
      const auto sp = j.at("spacing").get<std::vector<double>>();
      if (sp.size() != 3) throw MalformedSidecarError(path.string() + ": spacing must have 3 entries");
      h.spacing = {sp[0], sp[1], sp[2]};
    }
    dtype = j.at("dtype").get<std::string>();
    const std::string order = j.value("byte_order", "little");
    if (order != "little") throw MalformedSidecarError(path.string() + ": unsupported byte order " + order);
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "image") h.kind = VolumeKind::Image;
    else if (kind == "labels") h.kind = VolumeKind::Labels;
    else throw MalformedSidecarError(path.string() + ": unknown kind '" + kind + "'");
    h.payload = j.at("payload").get<std::string>();
    h.num_structures = j.value("num_structures", std::size_t{0});
  } catch (const json::exception& e) {
    throw MalformedSidecarError(path.string() + ": " + e.what());
  }
  h.dtype = parse_dtype(dtype);
  return h;
}

Volume3D read_volume(const fs::path& path) {
  const VolumeHeader h = read_volume_header(path);
  if (h.kind != VolumeKind::Image)
    throw KindMismatchError(path.string() + ": expected an image, sidecar says labels");
  const std::string bytes = read_payload(path, h);
  std::vector<double> v(h.dims.count());
  const std::size_t sz = dtype_size(h.dtype);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const char* p = bytes.data() + i * sz;
    switch (h.dtype) {
      case DType::F64: v[i] = get_le<double>(p); break;
      case DType::F32: v[i] = get_le<float>(p); break;
      case DType::U16: v[i] = get_le<std::uint16_t>(p); break;
    }
  }
  return Volume3D(h.dims, std::move(v), h.spacing);
}

LabelVolume read_labels(const fs::path& path) {
  const VolumeHeader h = read_volume_header(path);
  if (h.kind != VolumeKind::Labels)
    throw KindMismatchError(path.string() + ": expected labels, sidecar says image");
  if (h.dtype != DType::U16)
    throw MalformedSidecarError(path.string() + ": labels must be stored as u16");
  const std::string bytes = read_payload(path, h);
  std::vector<Label> v(h.dims.count());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = get_le<std::uint16_t>(bytes.data() + 2 * i);
  return LabelVolume(h.dims, std::move(v), h.num_structures, h.spacing);
}

void write_affine(const fs::path& path, const AffineFile& a) {
  json j;
  j["matrix"] = a.matrix.values();
  if (a.params) j["params"] = a.params->flat();
  if (a.pivot) j["pivot"] = *a.pivot;
  j["convention"] = a.convention;
  j["note"] = a.note;
  write_file(path, j.dump(2) + "\n");
}

AffineFile read_affine(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  AffineFile a;
  try {
    const auto m = j.at("matrix").get<std::vector<double>>();
    if (m.size() != 16) throw FormatError(path.string() + ": matrix needs 16 numbers");
    std::array<double, 16> arr;
    std::copy(m.begin(), m.end(), arr.begin());
    try {
      a.matrix = AffineMatrix(arr);
    } catch (const std::invalid_argument& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
    if (j.contains("params")) {
      const auto p = j.at("params").get<std::vector<double>>();
      if (p.size() != 12) throw FormatError(path.string() + ": params needs 12 numbers");
      a.params = GeometricParams::from_flat(p);
    }
    if (j.contains("pivot")) {
      const auto c = j.at("pivot").get<std::vector<double>>();
      if (c.size() != 3) throw FormatError(path.string() + ": pivot needs 3 numbers");
      a.pivot = Vec3{c[0], c[1], c[2]};
    }
    a.convention = j.value("convention", "");
    a.note = j.value("note", "");
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (a.params) {
    const AffineMatrix re = recenter(compose(*a.params), a.pivot.value_or(Vec3{0.0, 0.0, 0.0}));
    if (max_abs_diff(re, a.matrix) > 1e-9)
      throw FormatError(path.string() + ": params do not re-compose to the matrix");
  }
  return a;
}

namespace {

json config_to_json(const ModelConfig& c) {
  return {{"stages", c.stages},         {"blocks", c.blocks},
          {"embed_dim", c.embed_dim},   {"heads", c.heads},
          {"token_grid", c.token_grid}, {"mlp_dim", c.mlp_dim},
          {"head_mode", head_mode_name(c.head_mode)},
          {"input_dims", {c.input_dims.h, c.input_dims.w, c.input_dims.d}},
          {"progressive", c.progressive}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.stages = j.at("stages");
  c.blocks = j.at("blocks");
  c.embed_dim = j.at("embed_dim");
  c.heads = j.at("heads");
  c.token_grid = j.at("token_grid");
  c.mlp_dim = j.at("mlp_dim");
  c.head_mode = parse_head_mode(j.at("head_mode"));
  const auto d = j.at("input_dims").get<std::vector<std::size_t>>();
  if (d.size() != 3) throw FormatError("checkpoint: input_dims needs 3 entries");
  c.input_dims = {d[0], d[1], d[2]};
  c.progressive = j.at("progressive");
  c.validate();
  return c;
}

}  // namespace

void save_checkpoint(const fs::path& path, const TrainingState& state) {
  json header;
  header["config"] = config_to_json(state.config);
  header["adam"] = {{"step", state.adam.step},
                    {"lr", state.adam.cfg.lr},
                    {"beta1", state.adam.cfg.beta1},
                    {"beta2", state.adam.cfg.beta2},
                    {"eps", state.adam.cfg.eps}};
  json entries = json::array();
  std::string payload;
  std::size_t offset = 0;
  auto add = [&](const std::string& group, const std::map<std::string, NdArray>& arrays) {
    for (const auto& [name, a] : arrays) {
      entries.push_back({{"group", group}, {"name", name}, {"shape", a.shape()}, {"offset", offset}});
      for (double v : a.data()) put_le<double>(payload, v);
      offset += a.size();
    }
  };
  add("param", state.model.params);
  add("adam.m", state.adam.m);
  add("adam.v", state.adam.v);
  header["entries"] = entries;
  header["count"] = offset;
  write_file(path, std::string(kCheckpointMagic) + "\n" + header.dump() + "\n" + payload);
}

TrainingState load_checkpoint(const fs::path& path) {
  const std::string bytes = read_file(path);
  const std::size_t l1 = bytes.find('\n');
  if (l1 == std::string::npos || bytes.compare(0, l1, kCheckpointMagic) != 0)
    throw FormatError(path.string() + ": not a checkpoint");
  const std::size_t l2 = bytes.find('\n', l1 + 1);
  if (l2 == std::string::npos) throw FormatError(path.string() + ": truncated header");
  TrainingState st;
  try {
    const json header = json::parse(bytes.substr(l1 + 1, l2 - l1 - 1));
    st.config = config_from_json(header.at("config"));
    const json& ad = header.at("adam");
    st.adam.step = ad.at("step");
    st.adam.cfg = {ad.at("lr"), ad.at("beta1"), ad.at("beta2"), ad.at("eps")};
    const std::size_t count = header.at("count");
    const char* data = bytes.data() + l2 + 1;
    if (bytes.size() - (l2 + 1) != count * 8)
      throw PayloadLengthError(path.string() + ": payload length does not match header");
    for (const json& e : header.at("entries")) {
      const Shape shape = e.at("shape").get<Shape>();
      const std::size_t off = e.at("offset");
      const std::size_t n = shape_numel(shape);
      if (off + n > count) throw FormatError(path.string() + ": entry exceeds payload");
      std::vector<double> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = get_le<double>(data + 8 * (off + i));
      const std::string group = e.at("group");
      auto& target = group == "param" ? st.model.params : group == "adam.m" ? st.adam.m : st.adam.v;
      target.emplace(e.at("name").get<std::string>(), NdArray(shape, std::move(v)));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const auto expect = parameter_shapes(st.config);
  if (expect.size() != st.model.params.size())
    throw FormatError(path.string() + ": parameter set does not match the config");
  for (const auto& [name, shape] : expect) {
    auto it = st.model.params.find(name);
    if (it == st.model.params.end() || it->second.shape() != shape)
      throw FormatError(path.string() + ": parameter '" + name + "' missing or misshapen");
  }
  return st;
}

}  // namespace c2freg
