#pragma once

// JSON checkpoints:
//   {"version":1, "input_shape":[h,w,c], "class_count":C,
//    "arch":[{"type":"dense","in":64,"out":256}, {"type":"relu"}, ...],
//    "params":[[...], [], ...]}
// params[i] belongs to arch[i] (weight row-major, then bias; empty for
// parameter-free layers). Values are shortest decimal forms of float32.

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "seamforge/error.hpp"
#include "seamforge/nn.hpp"

namespace seamforge {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

// Double whose conversion back to float is exactly f, printed as short as
// possible by the JSON writer.
inline double float_json_value(float f) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), f);
  const double d = std::strtod(std::string(buf, res.ptr).c_str(), nullptr);
  if (static_cast<float>(d) == f) return d;
  return static_cast<double>(f);
}

inline nlohmann::json layer_json(const Layer<float>& l) {
  return std::visit(
      [](const auto& v) -> nlohmann::json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, layer::Dense<float>>) {
          return {{"type", "dense"}, {"in", v.in_dim}, {"out", v.out_dim}};
        } else if constexpr (std::is_same_v<T, layer::Conv2d<float>>) {
          return {{"type", "conv2d"},
                  {"kernel", {v.kernel_h, v.kernel_w}},
                  {"in_channels", v.in_channels},
                  {"out_channels", v.out_channels},
                  {"stride", v.stride}};
        } else if constexpr (std::is_same_v<T, layer::Relu>) {
          return {{"type", "relu"}};
        } else if constexpr (std::is_same_v<T, layer::Flatten>) {
          return {{"type", "flatten"}};
        } else {
          return {{"type", "softmax"}};
        }
      },
      l);
}

inline std::vector<float> read_floats(const nlohmann::json& arr, std::size_t expect,
                                      const std::string& where) {
  if (!arr.is_array() || arr.size() != expect) {
    throw FormatError(where + ": expected " + std::to_string(expect) + " parameters, found " +
                      (arr.is_array() ? std::to_string(arr.size()) : std::string("non-array")));
  }
  std::vector<float> out;
  out.reserve(expect);
  for (const auto& v : arr) {
    if (!v.is_number()) throw FormatError(where + ": non-numeric parameter");
    out.push_back(static_cast<float>(v.get<double>()));
  }
  return out;
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const Network<float>& net) {
  nlohmann::json arch = nlohmann::json::array();
  nlohmann::json params = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    arch.push_back(detail::layer_json(l));
    nlohmann::json p = nlohmann::json::array();
    auto put = [&](const auto& m) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) p.push_back(detail::float_json_value(m(r, c)));
    };
    if (auto* d = std::get_if<layer::Dense<float>>(&l)) {
      put(d->weight);
      put(d->bias);
    } else if (auto* c = std::get_if<layer::Conv2d<float>>(&l)) {
      put(c->weight);
      put(c->bias);
    }
    params.push_back(std::move(p));
  }
  const auto& s = net.input_shape();
  return {{"version", kCheckpointVersion},
          {"input_shape", {s.height, s.width, s.channels}},
          {"class_count", net.class_count()},
          {"arch", std::move(arch)},
          {"params", std::move(params)}};
}

inline Network<float> checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("checkpoint: document is not a JSON object");
  if (!j.contains("version")) throw FormatError("checkpoint: missing version");
  if (!j["version"].is_number_integer() || j["version"].get<int>() != kCheckpointVersion) {
    throw VersionError("checkpoint: unsupported version " + j["version"].dump() + " (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  try {
    const auto shape = j.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw FormatError("checkpoint: input_shape must be [h,w,c]");
    const int classes = j.at("class_count").get<int>();
    const auto& arch = j.at("arch");
    const auto& params = j.at("params");
    if (!arch.is_array() || !params.is_array() || arch.size() != params.size()) {
      throw FormatError("checkpoint: arch and params must be arrays of equal length");
    }
    std::vector<Layer<float>> layers;
    for (std::size_t i = 0; i < arch.size(); ++i) {
      const auto& a = arch[i];
      const auto type = a.at("type").get<std::string>();
      const std::string where = "checkpoint: layer " + std::to_string(i) + " (" + type + ")";
      auto fill = [&](Matrix<float>& w, Vector<float>& b) {
        const auto v = detail::read_floats(params[i], static_cast<std::size_t>(w.size() + b.size()),
                                           where);
        std::size_t k = 0;
        for (Eigen::Index r = 0; r < w.rows(); ++r)
          for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = v[k++];
        for (Eigen::Index r = 0; r < b.size(); ++r) b[r] = v[k++];
      };
      if (type == "dense") {
        layer::Dense<float> d;
        d.in_dim = a.at("in").get<int>();
        d.out_dim = a.at("out").get<int>();
        if (d.in_dim < 1 || d.out_dim < 1) throw FormatError(where + ": bad dimensions");
        d.weight.resize(d.out_dim, d.in_dim);
        d.bias.resize(d.out_dim);
        fill(d.weight, d.bias);
        layers.emplace_back(std::move(d));
      } else if (type == "conv2d") {
        layer::Conv2d<float> c;
        const auto k = a.at("kernel").get<std::vector<int>>();
        if (k.size() != 2) throw FormatError(where + ": kernel must be [h,w]");
        c.kernel_h = k[0];
        c.kernel_w = k[1];
        c.in_channels = a.at("in_channels").get<int>();
        c.out_channels = a.at("out_channels").get<int>();
        c.stride = a.value("stride", 1);
        if (c.kernel_h < 1 || c.kernel_w < 1 || c.in_channels < 1 || c.out_channels < 1) {
          throw FormatError(where + ": bad dimensions");
        }
        c.weight.resize(c.out_channels, c.kernel_h * c.kernel_w * c.in_channels);
        c.bias.resize(c.out_channels);
        fill(c.weight, c.bias);
        layers.emplace_back(std::move(c));
      } else if (type == "relu" || type == "flatten" || type == "softmax") {
        if (!params[i].is_array() || !params[i].empty()) {
          throw FormatError(where + ": parameter-free layer carries parameters");
        }
        if (type == "relu") layers.emplace_back(layer::Relu{});
        if (type == "flatten") layers.emplace_back(layer::Flatten{});
        if (type == "softmax") layers.emplace_back(layer::Softmax{});
      } else {
        throw FormatError(where + ": unknown layer type");
      }
    }
    try {
      return Network<float>({shape[0], shape[1], shape[2]}, std::move(layers), classes);
    } catch (const ShapeError& e) {
      throw FormatError(std::string("checkpoint: inconsistent architecture: ") + e.what());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const Network<float>& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(net).dump() << '\n';
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

inline Network<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": malformed checkpoint: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace seamforge
