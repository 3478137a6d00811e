#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tprobe/layers.hpp"
#include "tprobe/rng.hpp"
#include "tprobe/tensor.hpp"

namespace tprobe {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ScorerKind { mlp, attention, segmented_attention };

NLOHMANN_JSON_SERIALIZE_ENUM(ScorerKind, {{ScorerKind::mlp, "mlp"},
                                          {ScorerKind::attention, "attention"},
                                          {ScorerKind::segmented_attention, "segmented_attention"}})

inline std::string to_string(ScorerKind k) { return nlohmann::json(k).get<std::string>(); }

struct ScorerConfig {
  ScorerKind kind = ScorerKind::mlp;
  std::size_t input_dim = 1024;
  bool use_positional_encoding = false;
  double dropout_rate = 0.5;
  std::size_t attention_dim = 1024;
  std::size_t ffn_dim = 1024;
  std::size_t heads = 1;
  std::size_t local_heads = 4;
  std::size_t global_heads = 8;
  std::size_t segments = 4;
  double pe_frequency = 10000.0;
  std::vector<std::size_t> hidden_dims{1024, 512};

  friend bool operator==(const ScorerConfig&, const ScorerConfig&) = default;

  /// "mlp", "attention(+PE)", "attention(-PE)", ... for report tables.
  std::string label() const {
    if (kind == ScorerKind::mlp) return "mlp";
    return to_string(kind) + (use_positional_encoding ? "(+PE)" : "(-PE)");
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (input_dim == 0) fail("input_dim must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0,1)");
    if (kind == ScorerKind::mlp) {
      for (auto h : hidden_dims)
        if (h == 0) fail("hidden_dims must be positive");
      return;
    }
    if (attention_dim == 0 || ffn_dim == 0) fail("attention_dim and ffn_dim must be positive");
    if (pe_frequency <= 0.0) fail("pe_frequency must be positive");
    if (use_positional_encoding && input_dim % 2 != 0) fail("positional encoding needs an even input_dim");
    if (kind == ScorerKind::attention) {
      if (heads == 0 || attention_dim % heads != 0)
        fail("attention_dim " + std::to_string(attention_dim) + " not divisible by heads " + std::to_string(heads));
    } else {
      if (segments == 0) fail("segments must be at least 1");
      if (local_heads == 0 || attention_dim % local_heads != 0)
        fail("attention_dim not divisible by local_heads " + std::to_string(local_heads));
      if (global_heads == 0 || attention_dim % global_heads != 0)
        fail("attention_dim not divisible by global_heads " + std::to_string(global_heads));
    }
  }
};

inline void to_json(nlohmann::json& j, const ScorerConfig& c) {
  j = {{"kind", c.kind},
       {"input_dim", c.input_dim},
       {"use_positional_encoding", c.use_positional_encoding},
       {"dropout_rate", c.dropout_rate},
       {"attention_dim", c.attention_dim},
       {"ffn_dim", c.ffn_dim},
       {"heads", c.heads},
       {"local_heads", c.local_heads},
       {"global_heads", c.global_heads},
       {"segments", c.segments},
       {"pe_frequency", c.pe_frequency},
       {"hidden_dims", c.hidden_dims}};
}

inline void from_json(const nlohmann::json& j, ScorerConfig& c) {
  ScorerConfig d;
  if (!j.contains("kind")) throw ConfigError("model config: missing 'kind'");
  c.kind = j.at("kind").get<ScorerKind>();
  if (j.at("kind").get<std::string>() != to_string(c.kind))
    throw ConfigError("model config: unknown kind '" + j.at("kind").get<std::string>() + "'");
  c.input_dim = j.value("input_dim", d.input_dim);
  c.use_positional_encoding = j.value("use_positional_encoding", d.use_positional_encoding);
  c.dropout_rate = j.value("dropout_rate", d.dropout_rate);
  c.attention_dim = j.value("attention_dim", d.attention_dim);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  c.heads = j.value("heads", d.heads);
  c.local_heads = j.value("local_heads", d.local_heads);
  c.global_heads = j.value("global_heads", d.global_heads);
  c.segments = j.value("segments", d.segments);
  c.pe_frequency = j.value("pe_frequency", d.pe_frequency);
  c.hidden_dims = j.value("hidden_dims", d.hidden_dims);
}

/// [begin, end) frame ranges of `segments` consecutive blocks of length
/// n/segments; the remainder goes to the final block. Leading blocks are
/// empty when n < segments.
inline std::vector<std::pair<std::size_t, std::size_t>> segment_ranges(std::size_t n, std::size_t segments) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t len = n / segments;
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t b = s * len;
    const std::size_t e = (s + 1 == segments) ? n : b + len;
    out.emplace_back(b, e);
  }
  return out;
}

/// Frame-importance scorer: maps an N×D feature sequence to N scores in
/// (0,1). Holds every layer the three kinds need; only those of
/// `config().kind` are populated.
template <typename T>
class ScorerModel {
 public:
  struct Cache {
    Tensor<T> input;  // features (+ positional encoding)
    // mlp
    std::vector<Tensor<T>> layer_inputs;
    std::vector<Tensor<T>> activations;
    std::vector<DropoutMask<T>> masks;
    // attention kinds
    typename SelfAttention<T>::Cache global;
    std::vector<typename SelfAttention<T>::Cache> local;
    typename LayerNorm<T>::Cache norm;
    Tensor<T> normed;
    Tensor<T> hidden;  // relu output of the regressor
    DropoutMask<T> hidden_mask;
    Tensor<T> regressor_in;
    Tensor<T> scores;
  };

  ScorerModel() = default;
  ScorerModel(const ScorerConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng = make_rng(seed);
    const std::size_t d = config_.input_dim;
    switch (config_.kind) {
      case ScorerKind::mlp: {
        std::size_t in = d;
        for (std::size_t i = 0; i < config_.hidden_dims.size(); ++i) {
          mlp_.emplace_back("mlp." + std::to_string(i), in, config_.hidden_dims[i], rng);
          in = config_.hidden_dims[i];
        }
        out_ = Dense<T>("out", in, 1, rng);
        break;
      }
      case ScorerKind::attention:
        global_ = SelfAttention<T>("attention", d, config_.attention_dim, config_.heads, rng);
        build_regressor(rng);
        break;
      case ScorerKind::segmented_attention:
        global_ = SelfAttention<T>("global", d, config_.attention_dim, config_.global_heads, rng);
        for (std::size_t s = 0; s < config_.segments; ++s)
          local_.emplace_back("local." + std::to_string(s), d, config_.attention_dim, config_.local_heads, rng);
        build_regressor(rng);
        break;
    }
  }

  const ScorerConfig& config() const { return config_; }

  /// Forward pass. `rng` drives dropout and is required when train is true.
  Tensor<T> forward(const Tensor<T>& features, bool train, Rng* rng, Cache& cache) const {
    if (features.rank() != 2 || features.cols() != config_.input_dim)
      throw ShapeError("scorer: feature width " + std::to_string(features.cols()) + " expected " +
                       std::to_string(config_.input_dim));
    if (features.rows() == 0) throw ShapeError("scorer: empty sequence");
    const std::size_t n = features.rows();
    cache.input = features;
    if (config_.kind != ScorerKind::mlp && config_.use_positional_encoding)
      add_inplace(cache.input, positional_encoding<T>(n, config_.input_dim, config_.pe_frequency));

    Tensor<T> logits;
    if (config_.kind == ScorerKind::mlp) {
      cache.layer_inputs.clear();
      cache.activations.clear();
      cache.masks.assign(mlp_.size(), {});
      Tensor<T> h = cache.input;
      for (std::size_t i = 0; i < mlp_.size(); ++i) {
        cache.layer_inputs.push_back(h);
        Tensor<T> a = relu_forward(mlp_[i].forward(h));
        cache.activations.push_back(a);
        h = dropout_forward(std::move(a), config_.dropout_rate, train, rng, cache.masks[i]);
      }
      cache.regressor_in = h;
      logits = out_.forward(h);
    } else {
      Tensor<T> mixed = global_.forward(cache.input, cache.global);
      if (config_.kind == ScorerKind::segmented_attention) {
        cache.local.assign(local_.size(), {});
        const auto ranges = segment_ranges(n, local_.size());
        for (std::size_t s = 0; s < local_.size(); ++s) {
          const auto [b, e] = ranges[s];
          if (b == e) continue;
          add_into_rows(mixed, local_[s].forward(slice_rows(cache.input, b, e - b), cache.local[s]), b);
        }
      }
      add_inplace(mixed, cache.input);
      cache.normed = norm_.forward(mixed, cache.norm);
      cache.hidden = relu_forward(ffn_.forward(cache.normed));
      cache.regressor_in = dropout_forward(cache.hidden, config_.dropout_rate, train, rng, cache.hidden_mask);
      logits = out_.forward(cache.regressor_in);
    }
    cache.scores = sigmoid_forward(Tensor<T>(Shape{n}, std::move(logits.values())));
    return cache.scores;
  }

  /// Eval-mode scores; safe to call concurrently on a shared model.
  Tensor<T> score(const Tensor<T>& features) const {
    Cache cache;
    return forward(features, false, nullptr, cache);
  }

  /// Accumulates parameter gradients for dL/dscores.
  void backward(const Cache& cache, const Tensor<T>& dscores) {
    const std::size_t n = cache.scores.size();
    require(dscores.size() == n, "scorer backward: gradient length");
    Tensor<T> dlogits = sigmoid_backward(cache.scores, dscores);
    dlogits = Tensor<T>({n, 1}, std::move(dlogits.values()));
    Tensor<T> dh = out_.backward(cache.regressor_in, dlogits);
    if (config_.kind == ScorerKind::mlp) {
      for (std::size_t i = mlp_.size(); i-- > 0;) {
        dh = dropout_backward(cache.masks[i], std::move(dh));
        dh = relu_backward(cache.activations[i], std::move(dh));
        dh = mlp_[i].backward(cache.layer_inputs[i], dh);
      }
      return;
    }
    dh = dropout_backward(cache.hidden_mask, std::move(dh));
    dh = relu_backward(cache.hidden, std::move(dh));
    dh = ffn_.backward(cache.normed, dh);
    const Tensor<T> dmixed = norm_.backward(cache.norm, dh);
    global_.backward(cache.global, dmixed);
    if (config_.kind == ScorerKind::segmented_attention) {
      const auto ranges = segment_ranges(n, local_.size());
      for (std::size_t s = 0; s < local_.size(); ++s) {
        const auto [b, e] = ranges[s];
        if (b == e) continue;
        local_[s].backward(cache.local[s], slice_rows(dmixed, b, e - b));
      }
    }
  }

  ParamRefs<T> parameters() {
    ParamRefs<T> out;
    for (auto& l : mlp_) l.collect(out);
    if (config_.kind != ScorerKind::mlp) {
      global_.collect(out);
      for (auto& l : local_) l.collect(out);
      norm_.collect(out);
      ffn_.collect(out);
    }
    out_.collect(out);
    return out;
  }

  std::vector<const Parameter<T>*> parameters() const {
    auto refs = const_cast<ScorerModel*>(this)->parameters();
    return {refs.begin(), refs.end()};
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto* p : parameters()) total += p->size();
    return total;
  }

 private:
  void build_regressor(Rng& rng) {
    norm_ = LayerNorm<T>("norm", config_.input_dim);
    ffn_ = Dense<T>("ffn", config_.input_dim, config_.ffn_dim, rng);
    out_ = Dense<T>("out", config_.ffn_dim, 1, rng);
  }

  ScorerConfig config_;
  std::vector<Dense<T>> mlp_;
  SelfAttention<T> global_;
  std::vector<SelfAttention<T>> local_;
  LayerNorm<T> norm_;
  Dense<T> ffn_;
  Dense<T> out_;
};

/// Weights uniform in ±sqrt(6/(fan_in+fan_out)), biases zero, layer-norm
/// gain one; identical for identical (config, seed).
template <typename T = float>
ScorerModel<T> build_model(const ScorerConfig& config, std::uint64_t seed) {
  return ScorerModel<T>(config, seed);
}

/// Eval-mode scores unless train_mode is set, in which case dropout draws
/// from `rng`.
template <typename T>
Tensor<T> score_frames(const ScorerModel<T>& model, const Tensor<T>& features, bool train_mode = false,
                       Rng* rng = nullptr) {
  typename ScorerModel<T>::Cache cache;
  return model.forward(features, train_mode, rng, cache);
}

template <typename T>
std::vector<Tensor<T>> snapshot_weights(const ScorerModel<T>& model) {
  std::vector<Tensor<T>> out;
  for (const auto* p : model.parameters()) out.push_back(p->value);
  return out;
}

template <typename T>
void restore_weights(ScorerModel<T>& model, const std::vector<Tensor<T>>& weights) {
  auto params = model.parameters();
  require(params.size() == weights.size(), "restore_weights: block count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i]->shape() == weights[i].shape(), "restore_weights: shape of " + params[i]->name);
    params[i]->value = weights[i];
  }
}

// ---------------------------------------------------------------------------
// Weight files: <stem>.bin holds little-endian float32 values of every block
// back to back; <stem>.json holds the config and a {name, shape, offset}
// index into the blob.

inline std::filesystem::path weights_index_path(std::filesystem::path stem) {
  return stem.replace_extension(".json");
}

template <typename T>
void save_weights(const ScorerModel<T>& model, const std::filesystem::path& stem) {
  static_assert(std::endian::native == std::endian::little, "weight files are little-endian");
  auto bin = stem;
  bin.replace_extension(".bin");
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + bin.string());
  nlohmann::json blocks = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto* p : model.parameters()) {
    std::vector<float> buf(p->value.values().begin(), p->value.values().end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    blocks.push_back({{"name", p->name}, {"shape", p->shape()}, {"offset", offset}});
    offset += buf.size();
  }
  if (!out) throw std::runtime_error("failed writing " + bin.string());
  nlohmann::json index = {{"format", "tprobe-weights"},
                          {"version", 1},
                          {"dtype", "float32"},
                          {"blob", bin.filename().string()},
                          {"config", model.config()},
                          {"count", offset},
                          {"blocks", blocks}};
  std::ofstream idx(weights_index_path(stem));
  if (!idx) throw std::runtime_error("cannot write " + weights_index_path(stem).string());
  idx << index.dump(2) << '\n';
}

/// Loads a model from either the .json index or the .bin blob path.
template <typename T = float>
ScorerModel<T> load_weights(const std::filesystem::path& path) {
  const auto index_path = weights_index_path(path);
  std::ifstream idx(index_path);
  if (!idx) throw std::runtime_error("cannot open weight index " + index_path.string());
  const auto index = nlohmann::json::parse(idx);
  auto model = build_model<T>(index.at("config").get<ScorerConfig>(), 0);
  const auto bin = index_path.parent_path() / index.at("blob").get<std::string>();
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weight blob " + bin.string());
  std::vector<float> blob(index.at("count").get<std::size_t>());
  in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(blob.size() * sizeof(float)))
    throw std::runtime_error("weight blob " + bin.string() + " is truncated");
  auto params = model.parameters();
  const auto& blocks = index.at("blocks");
  if (blocks.size() != params.size()) throw std::runtime_error("weight index block count does not match config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& b = blocks[i];
    if (b.at("name").get<std::string>() != params[i]->name || b.at("shape").get<Shape>() != params[i]->shape())
      throw std::runtime_error("weight block " + std::to_string(i) + " does not match config");
    const auto off = b.at("offset").get<std::size_t>();
    if (off + params[i]->size() > blob.size()) throw std::runtime_error("weight block out of range");
    for (std::size_t k = 0; k < params[i]->size(); ++k) params[i]->value[k] = static_cast<T>(blob[off + k]);
  }
  return model;
}

}  // namespace tprobe
