#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "flagrank/error.hpp"
#include "flagrank/numkernel.hpp"

namespace flagrank {

using json = nlohmann::json;

inline json matrix_to_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}};
}

inline Matrix matrix_from_json(const json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

inline json stack_to_json(const LayerStack& s) {
  json arr = json::array();
  for (const auto& l : s) arr.push_back(json{{"W", matrix_to_json(l.W)}, {"b", matrix_to_json(l.b)}});
  return arr;
}

inline LayerStack stack_from_json(const json& j) {
  LayerStack s;
  for (const auto& l : j) s.push_back(LayerParams{matrix_from_json(l.at("W")), matrix_from_json(l.at("b"))});
  return s;
}

inline json adam_to_json(const AdamState& st) {
  json m = json::array(), v = json::array();
  for (const auto& x : st.m) m.push_back(matrix_to_json(x));
  for (const auto& x : st.v) v.push_back(matrix_to_json(x));
  return json{{"t", st.t}, {"m", m}, {"v", v}};
}

inline AdamState adam_from_json(const json& j) {
  AdamState st;
  st.t = j.at("t").get<std::int64_t>();
  for (const auto& x : j.at("m")) st.m.push_back(matrix_from_json(x));
  for (const auto& x : j.at("v")) st.v.push_back(matrix_from_json(x));
  return st;
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open '" + path + "' for writing");
  out << j.dump() << '\n';
  require(static_cast<bool>(out), ErrorKind::io, "write failed for '" + path + "'");
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, "'" + path + "': " + e.what());
  }
}

}  // namespace flagrank
