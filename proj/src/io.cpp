/*
 * Copyright 2026 The TabForest Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "treeprior/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

namespace treeprior {

namespace {

using nlohmann::json;

// ---- little-endian primitives ----------------------------------------------

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  Reader(std::string_view bytes, const char* what) : bytes_(bytes), what_(what) {}

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string(what_) + ": truncated file");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::uint16_t u16() {
    const auto s = take(2);
    return static_cast<std::uint16_t>(static_cast<unsigned char>(s[0]) | (static_cast<unsigned char>(s[1]) << 8));
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
  const char* what_;
};

void put_header(std::string& out, const char* magic, std::uint32_t version, const json& header) {
  out.append(magic, 4);
  put_u32(out, version);
  const std::string h = header.dump();
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
}

json take_header(Reader& in, const char* magic, std::uint32_t version, const char* what) {
  if (in.take(4) != std::string_view(magic, 4)) throw FormatError(std::string(what) + ": bad magic");
  const std::uint32_t v = in.u32();
  if (v != version) throw FormatError(std::string(what) + ": unsupported version " + std::to_string(v));
  const std::uint32_t len = in.u32();
  try {
    return json::parse(in.take(len));
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": bad header: " + e.what());
  }
}

json model_config_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},   {"n_heads", c.n_heads},
          {"d_token", c.d_token},     {"ffn_multiplier", c.ffn_multiplier},
          {"d_features", c.d_features}, {"n_outputs", c.n_outputs},
          {"activation", std::string(activation_name(c.activation))}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_token = j.at("d_token").get<std::size_t>();
  c.ffn_multiplier = j.at("ffn_multiplier").get<std::size_t>();
  c.d_features = j.at("d_features").get<std::size_t>();
  c.n_outputs = j.at("n_outputs").get<std::size_t>();
  c.activation = parse_activation(j.at("activation").get<std::string>());
  return c;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---- CSV ---------------------------------------------------------------------

std::vector<std::vector<std::string>> split_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        cell.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell.push_back(ch);
      }
      continue;
    }
    if (ch == '"') {
      quoted = true;
      any = true;
    } else if (ch == ',') {
      row.push_back(std::move(cell));
      cell.clear();
      any = true;
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !cell.empty()) {
        row.push_back(std::move(cell));
        rows.push_back(std::move(row));
      }
      row.clear();
      cell.clear();
      any = false;
    } else {
      cell.push_back(ch);
      any = true;
    }
  }
  if (quoted) throw FormatError("csv: unterminated quote");
  if (any || !cell.empty()) {
    row.push_back(std::move(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

// ---- checkpoints -------------------------------------------------------------

std::string pretrain_digest(const PretrainConfig& c) {
  const auto& f = c.source.forest;
  const auto& n = c.source.neural;
  const json j = {
      {"steps", c.steps},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"grad_clip", c.grad_clip},
      {"caps", {c.caps.max_support, c.caps.max_query}},
      {"p_forest", c.source.policy.p_forest},
      {"forest",
       {f.base_size.lo, f.base_size.hi, f.dataset_size.lo, f.dataset_size.hi, f.tree_depth.lo, f.tree_depth.hi,
        f.n_features.lo, f.n_features.hi, f.n_classes.lo, f.n_classes.hi, f.categorical_ratio.lo,
        f.categorical_ratio.hi}},
      {"neural",
       {n.dataset_size.lo, n.dataset_size.hi, n.n_features.lo, n.n_features.hi, n.n_classes.lo, n.n_classes.hi,
        n.hidden_layers.lo, n.hidden_layers.hi, n.hidden_width.lo, n.hidden_width.hi, n.noise_scale.lo,
        n.noise_scale.hi}},
      {"limits", {c.source.limits.max_attempts, c.source.limits.class_balance_tolerance}},
      {"seed", c.seed},
      {"optimizer",
       {c.optimizer.beta1, c.optimizer.beta2, c.optimizer.eps, c.optimizer.weight_decay, c.optimizer.max_grad_norm}},
  };
  // FNV-1a over the canonical dump.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  const auto specs = parameter_specs(ckpt.params.config);
  if (specs.size() != ckpt.params.tensors.size()) throw ConfigMismatchError("checkpoint: tensor count does not match config");
  std::size_t n_scalars = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].second != ckpt.params.tensors[i].shape()) {
      throw ConfigMismatchError("checkpoint: shape of " + specs[i].first + " does not match config");
    }
    n_scalars += ckpt.params.tensors[i].size();
  }
  const json header = {{"model", model_config_json(ckpt.params.config)},
                       {"seed", ckpt.seed},
                       {"step", ckpt.step},
                       {"pretrain_digest", ckpt.pretrain_digest},
                       {"n_scalars", n_scalars}};
  std::string out;
  put_header(out, "TFPN", kCheckpointVersion, header);
  out.reserve(out.size() + 4 * n_scalars);
  for (const auto& t : ckpt.params.tensors)
    for (float v : t.values()) put_f32(out, v);
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes, "checkpoint");
  const json header = take_header(in, "TFPN", kCheckpointVersion, "checkpoint");
  Checkpoint ck;
  std::size_t declared = 0;
  try {
    ck.params.config = model_config_from_json(header.at("model"));
    ck.params.config.validate();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.step = header.at("step").get<std::int64_t>();
    ck.pretrain_digest = header.at("pretrain_digest").get<std::string>();
    declared = header.at("n_scalars").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header field: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigMismatchError(std::string("checkpoint: ") + e.what());
  }
  std::size_t expected = 0;
  const auto specs = parameter_specs(ck.params.config);
  for (const auto& [name, shape] : specs) expected += shape_numel(shape);
  if (declared != expected) {
    throw ConfigMismatchError("checkpoint: header declares " + std::to_string(declared) + " values, config needs " +
                              std::to_string(expected));
  }
  for (const auto& [name, shape] : specs) {
    Tensor<float> t(shape);
    for (float& v : t.storage()) v = in.f32();
    ck.params.tensors.push_back(std::move(t));
  }
  if (!in.done()) throw ConfigMismatchError("checkpoint: trailing bytes after the parameter blob");
  return ck;
}

// ---- episode files -----------------------------------------------------------

EpisodeFile episode_from_dataset(const RawDataset& ds, std::uint64_t seed, std::string generator) {
  EpisodeFile ep;
  ep.X_support = ds.X;
  ep.y_support = ds.y;
  ep.X_query = Matrix(0, ds.X.cols());
  ep.n_classes = ds.n_classes;
  ep.categorical_mask = ds.categorical_mask;
  if (ep.categorical_mask.empty()) ep.categorical_mask.assign(ds.X.cols(), false);
  ep.seed = seed;
  ep.generator = std::move(generator);
  return ep;
}

std::string encode_episode(const EpisodeFile& ep) {
  const std::size_t d = ep.X_support.cols();
  if (ep.X_query.cols() != d && ep.X_query.rows() > 0) throw std::invalid_argument("episode file: width mismatch");
  if (ep.y_support.size() != ep.X_support.rows() || ep.y_query.size() != ep.X_query.rows()) {
    throw std::invalid_argument("episode file: label count mismatch");
  }
  if (ep.categorical_mask.size() != d) throw std::invalid_argument("episode file: categorical mask width");
  std::vector<int> mask(ep.categorical_mask.begin(), ep.categorical_mask.end());
  const json header = {{"n_support", ep.X_support.rows()}, {"n_query", ep.X_query.rows()},
                       {"n_features_raw", d},              {"n_classes", ep.n_classes},
                       {"categorical_mask", mask},         {"seed", ep.seed},
                       {"generator", ep.generator}};
  std::string out;
  put_header(out, "TFEP", kEpisodeFileVersion, header);
  for (double v : ep.X_support.data()) put_f32(out, static_cast<float>(v));
  for (double v : ep.X_query.data()) put_f32(out, static_cast<float>(v));
  for (const auto* ys : {&ep.y_support, &ep.y_query}) {
    for (int y : *ys) {
      if (y < 0 || y >= ep.n_classes) throw std::invalid_argument("episode file: label outside [0, n_classes)");
      put_u16(out, static_cast<std::uint16_t>(y));
    }
  }
  return out;
}

EpisodeFile decode_episode(std::string_view bytes) {
  Reader in(bytes, "episode file");
  const json h = take_header(in, "TFEP", kEpisodeFileVersion, "episode file");
  EpisodeFile ep;
  std::size_t ns = 0, nq = 0, d = 0;
  try {
    ns = h.at("n_support").get<std::size_t>();
    nq = h.at("n_query").get<std::size_t>();
    d = h.at("n_features_raw").get<std::size_t>();
    ep.n_classes = h.at("n_classes").get<int>();
    for (int m : h.at("categorical_mask").get<std::vector<int>>()) ep.categorical_mask.push_back(m != 0);
    ep.seed = h.at("seed").get<std::uint64_t>();
    ep.generator = h.at("generator").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("episode file: bad header field: ") + e.what());
  }
  if (ep.categorical_mask.size() != d) throw FormatError("episode file: categorical mask width");
  if (ep.n_classes < 1 || ep.n_classes > kMaxClasses) throw FormatError("episode file: n_classes out of range");
  ep.X_support = Matrix(ns, d);
  ep.X_query = Matrix(nq, d);
  for (double& v : ep.X_support.data()) v = in.f32();
  for (double& v : ep.X_query.data()) v = in.f32();
  for (auto [ys, n] : {std::pair{&ep.y_support, ns}, std::pair{&ep.y_query, nq}}) {
    ys->resize(n);
    for (int& y : *ys) {
      y = in.u16();
      if (y >= ep.n_classes) throw FormatError("episode file: label outside [0, n_classes)");
    }
  }
  if (!in.done()) throw FormatError("episode file: trailing bytes");
  return ep;
}

// ---- CSV ---------------------------------------------------------------------

CsvTable read_csv(std::string_view text, const std::string& target, const CsvSchema* schema) {
  const auto rows = split_csv(text);
  if (rows.empty()) throw FormatError("csv: missing header row");
  const auto& header = rows[0];
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != header.size()) {
      throw FormatError("csv: row " + std::to_string(r + 1) + " has " + std::to_string(rows[r].size()) +
                        " cells, header has " + std::to_string(header.size()));
    }
  }
  std::vector<std::string> names;
  for (const auto& h : header) names.emplace_back(trim(h));
  const auto target_it = std::find(names.begin(), names.end(), target);
  const bool has_target = target_it != names.end();
  if (!has_target && !schema) throw MissingColumnError("csv: no target column '" + target + "'");
  const std::size_t target_col = has_target ? static_cast<std::size_t>(target_it - names.begin()) : names.size();

  CsvTable out;
  out.has_target = has_target;
  std::vector<std::size_t> feature_cols;
  if (schema) {
    for (const auto& name : schema->feature_names) {
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) throw MissingColumnError("csv: no column '" + name + "'");
      feature_cols.push_back(static_cast<std::size_t>(it - names.begin()));
    }
    out.schema = *schema;
  } else {
    for (std::size_t c = 0; c < names.size(); ++c) {
      if (c != target_col) {
        feature_cols.push_back(c);
        out.schema.feature_names.push_back(names[c]);
      }
    }
    out.schema.target = target;
    out.schema.categories.resize(feature_cols.size());
  }

  const std::size_t n = rows.size() - 1, d = feature_cols.size();
  Matrix X(n, d);
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t c = feature_cols[j];
    auto& cats = out.schema.categories[j];
    bool categorical = !cats.empty();
    if (!schema) {
      for (std::size_t r = 0; r < n && !categorical; ++r) {
        const auto cell = trim(rows[r + 1][c]);
        if (!cell.empty() && !parse_number(cell)) categorical = true;
      }
    }
    for (std::size_t r = 0; r < n; ++r) {
      const std::string cell(trim(rows[r + 1][c]));
      double v = std::numeric_limits<double>::quiet_NaN();
      if (cell.empty()) {
      } else if (categorical) {
        const auto it = std::find(cats.begin(), cats.end(), cell);
        if (it != cats.end()) {
          v = static_cast<double>(it - cats.begin());
        } else if (!schema) {
          cats.push_back(cell);
          v = static_cast<double>(cats.size() - 1);
        }
      } else if (const auto num = parse_number(cell)) {
        v = *num;
      }
      X(r, j) = v;
    }
  }

  std::vector<int> y;
  if (has_target) {
    std::vector<std::string> labels;
    for (std::size_t r = 0; r < n; ++r) {
      std::string cell(trim(rows[r + 1][target_col]));
      if (cell.empty()) throw FormatError("csv: empty target at row " + std::to_string(r + 2));
      labels.push_back(std::move(cell));
    }
    if (!schema) {
      std::vector<std::string> classes;
      for (const auto& l : labels)
        if (std::find(classes.begin(), classes.end(), l) == classes.end()) classes.push_back(l);
      const bool numeric = std::all_of(classes.begin(), classes.end(), [](const std::string& s) { return parse_number(s).has_value(); });
      if (numeric) {
        std::stable_sort(classes.begin(), classes.end(),
                         [](const std::string& a, const std::string& b) { return *parse_number(a) < *parse_number(b); });
      }
      if (classes.size() > static_cast<std::size_t>(kMaxClasses)) {
        throw FormatError("csv: target has " + std::to_string(classes.size()) + " classes, at most " +
                          std::to_string(kMaxClasses) + " are supported");
      }
      out.schema.classes = std::move(classes);
    }
    const auto& classes = out.schema.classes;
    for (const auto& l : labels) {
      auto it = std::find(classes.begin(), classes.end(), l);
      if (it == classes.end()) {
        // Numeric labels may be spelled differently ("1" vs "1.0").
        const auto num = parse_number(l);
        it = std::find_if(classes.begin(), classes.end(), [&](const std::string& c) {
          const auto cn = parse_number(c);
          return num && cn && *num == *cn;
        });
      }
      if (it == classes.end()) throw FormatError("csv: label '" + l + "' not seen in training data");
      y.push_back(static_cast<int>(it - classes.begin()));
    }
  }

  out.data.X = std::move(X);
  out.data.y = std::move(y);
  out.data.n_classes = static_cast<int>(out.schema.classes.size());
  out.data.categorical_mask.resize(d);
  for (std::size_t j = 0; j < d; ++j) out.data.categorical_mask[j] = !out.schema.categories[j].empty();
  return out;
}

CsvTable read_csv_file(const std::filesystem::path& path, const std::string& target, const CsvSchema* schema) {
  return read_csv(read_file(path), target, schema);
}

std::string dataset_to_csv(const RawDataset& ds) {
  std::string out;
  for (std::size_t c = 0; c < ds.X.cols(); ++c) out += "x" + std::to_string(c) + ",";
  out += "y\n";
  for (std::size_t r = 0; r < ds.X.rows(); ++r) {
    for (std::size_t c = 0; c < ds.X.cols(); ++c) {
      const double v = ds.X(r, c);
      if (!std::isnan(v)) out += format_double(v);
      out += ',';
    }
    out += std::to_string(ds.y[r]) + "\n";
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace treeprior
