#include "intact/snapshot.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "intact/error.hpp"

namespace intact {

namespace {

constexpr std::array<char, 8> kMagic = {'I', 'N', 'T', 'A', 'C', 'T', 'C', 'K'};
constexpr int kFormatVersion = 1;

void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), 8);
}

std::uint64_t get_u64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), 8);
  require(is.gcount() == 8, ErrorCode::TruncatedFile, "checkpoint ended inside a length field");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

nlohmann::json layer_json(const LayerKind& kind) {
  nlohmann::json j;
  j["kind"] = kind_name(kind);
  std::visit(
      [&](const auto& k) {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, Affine>) {
          j["in"] = k.in;
          j["out"] = k.out;
        } else if constexpr (std::is_same_v<T, ReLU>) {
          j["dim"] = k.dim;
        } else if constexpr (std::is_same_v<T, Conv2d>) {
          j["in_ch"] = k.in_ch;
          j["out_ch"] = k.out_ch;
          j["kernel"] = k.kernel;
          j["in_h"] = k.in_h;
          j["in_w"] = k.in_w;
        } else {
          j["channels"] = k.channels;
          j["spatial"] = k.spatial;
          j["eps"] = k.eps;
        }
      },
      kind);
  return j;
}

LayerKind layer_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "affine") return Affine{j.at("in").get<Eigen::Index>(), j.at("out").get<Eigen::Index>()};
  if (kind == "relu") return ReLU{j.at("dim").get<Eigen::Index>()};
  if (kind == "conv2d")
    return Conv2d{j.at("in_ch").get<Eigen::Index>(), j.at("out_ch").get<Eigen::Index>(),
                  j.at("kernel").get<Eigen::Index>(), j.at("in_h").get<Eigen::Index>(),
                  j.at("in_w").get<Eigen::Index>()};
  if (kind == "batchnorm")
    return BatchNormAffine{j.at("channels").get<Eigen::Index>(), j.at("spatial").get<Eigen::Index>(),
                           j.at("eps").get<double>()};
  fail(ErrorCode::BadCheckpoint, "unknown layer kind '" + kind + "'");
}

void write_tensors(std::ostream& os, const ParamSet& p) {
  for (const auto& layer : p.layers)
    for (const auto& t : layer)
      for (Eigen::Index k = 0; k < t.size(); ++k) put_u64(os, std::bit_cast<std::uint64_t>(t.data()[k]));
}

void read_tensors(std::istream& is, ParamSet& p) {
  for (auto& layer : p.layers)
    for (auto& t : layer)
      for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = std::bit_cast<double>(get_u64(is));
}

}  // namespace

ParamSnapshot::ParamSnapshot(const Network& net, int task_index) : net_(net), task_index_(task_index) {}

LayerDelta delta_params(const Network& net, const ParamSnapshot& snap, int layer_index) {
  require(snap.network().num_layers() == net.num_layers(), ErrorCode::MissingLayer,
          "snapshot has a different layer count");
  const auto& spec = net.layer(layer_index);
  require(is_parametric(spec.kind), ErrorCode::MissingLayer,
          "layer " + std::to_string(layer_index) + " has no parameters");
  const auto k = static_cast<std::size_t>(layer_index - 1);
  const auto& cur = net.params().layers[k];
  const auto& old = snap.params().layers[k];
  require(cur.size() == old.size() && cur[0].rows() == old[0].rows() && cur[0].cols() == old[0].cols(),
          ErrorCode::ShapeMismatch, "snapshot layer shape differs");
  return {cur[0] - old[0], (cur[1] - old[1]).col(0)};
}

BatchNormDelta batchnorm_effective_delta(const Network& net, const ParamSnapshot& snap, int layer_index) {
  const auto* bn = std::get_if<BatchNormAffine>(&net.layer(layer_index).kind);
  require(bn != nullptr, ErrorCode::MissingLayer, "layer " + std::to_string(layer_index) + " is not batchnorm");
  const auto k = static_cast<std::size_t>(layer_index - 1);
  const auto& buf = net.buffers().layers[k];
  const auto& old = snap.buffers().layers[k];
  require(buf[0] == old[0] && buf[1] == old[1], ErrorCode::StatsDrift,
          "running statistics changed since the snapshot");
  const LayerDelta d = delta_params(net, snap, layer_index);
  BatchNormDelta out;
  out.mean = buf[0].col(0);
  out.inv_std = (buf[1].col(0).array() + bn->eps).rsqrt().matrix();
  out.dW_eff = d.dW.col(0).cwiseProduct(out.inv_std);
  out.db_eff = d.db - out.dW_eff.cwiseProduct(out.mean);
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net, int task_index) {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["task_index"] = task_index;
  header["layers"] = nlohmann::json::array();
  for (const auto& spec : net.layers()) header["layers"].push_back(layer_json(spec.kind));
  auto shapes = [](const ParamSet& p) {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& layer : p.layers) {
      nlohmann::json l = nlohmann::json::array();
      for (const auto& t : layer) l.push_back({t.rows(), t.cols()});
      s.push_back(l);
    }
    return s;
  };
  header["param_shapes"] = shapes(net.params());
  header["buffer_shapes"] = shapes(net.buffers());
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::Io, "cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_tensors(os, net.params());
  write_tensors(os, net.buffers());
  require(static_cast<bool>(os), ErrorCode::Io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::Io, "cannot open " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  require(is.gcount() == 8, ErrorCode::TruncatedFile, "checkpoint shorter than its magic");
  require(magic == kMagic, ErrorCode::BadMagic, path.string() + " is not a checkpoint");
  const std::uint64_t len = get_u64(is);
  require(len < (std::uint64_t{1} << 32), ErrorCode::BadCheckpoint, "implausible header length");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  require(static_cast<std::uint64_t>(is.gcount()) == len, ErrorCode::TruncatedFile, "checkpoint header truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadCheckpoint, std::string("header: ") + e.what());
  }
  try {
    require(header.at("format_version").get<int>() == kFormatVersion, ErrorCode::BadCheckpoint,
            "unsupported checkpoint version");
    std::vector<LayerKind> kinds;
    for (const auto& l : header.at("layers")) kinds.push_back(layer_from_json(l));
    Network net(std::move(kinds));
    read_tensors(is, net.mutable_params());
    read_tensors(is, net.mutable_buffers());
    require(is.peek() == std::char_traits<char>::eof(), ErrorCode::BadCheckpoint, "trailing bytes in checkpoint");
    return {std::move(net), header.at("task_index").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadCheckpoint, std::string("header: ") + e.what());
  }
}

std::uint64_t hash_params(const ParamSet& p) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& layer : p.layers)
    for (const auto& t : layer) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
      for (std::size_t i = 0; i < static_cast<std::size_t>(t.size()) * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    }
  return h;
}

}  // namespace intact
