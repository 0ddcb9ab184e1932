#pragma once

#include <cctype>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "srpvqa/attention.hpp"

namespace srpvqa {

struct Token {
  std::string surface;
  std::size_t id = 0;

  friend bool operator==(const Token&, const Token&) = default;
};

// 64-bit FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline bool is_split_punctuation(char c) {
  return c == '.' || c == ',' || c == '?' || c == '!' || c == ';' || c == ':';
}

/// Whitespace split with sentence punctuation emitted as standalone tokens.
/// Case is preserved; ids are hash buckets in [0, vocab_size).
inline std::vector<Token> tokenize(std::string_view text, std::size_t vocab_size = 4096) {
  if (vocab_size == 0) throw std::invalid_argument("tokenize: vocab_size must be positive");
  std::vector<Token> out;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    out.push_back(Token{word, static_cast<std::size_t>(fnv1a(word) % vocab_size)});
    word.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_split_punctuation(c)) {
      flush();
      word.push_back(c);
      flush();
    } else {
      word.push_back(c);
    }
  }
  flush();
  if (out.empty()) throw std::invalid_argument("tokenize: empty text");
  return out;
}

/// Anything that maps a token sequence to one feature row per token.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  virtual std::size_t width() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual Tensor encode(const std::vector<Token>& tokens) const = 0;
};

struct TextEncoderParams {
  std::size_t vocab_size = 4096;
  std::size_t max_length = 32;
  bool positional = true;
  Tensor embedding;   // vocab_size x width
  Tensor positions;   // max_length x width
  EncoderLayerParams layer;

  static TextEncoderParams init(std::size_t vocab_size, std::size_t width, std::size_t heads, std::uint64_t seed,
                                bool positional = true, std::size_t max_length = 32) {
    Rng rng(seed);
    TextEncoderParams p;
    p.vocab_size = vocab_size;
    p.max_length = max_length;
    p.positional = positional;
    p.embedding = random_normal(vocab_size, width, 1.0, rng);
    p.positions = random_normal(max_length, width, 0.5, rng);
    p.layer = EncoderLayerParams::init(width, heads, 2 * width, rng);
    return p;
  }

  std::size_t width() const { return embedding.cols(); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".embedding", embedding);
    f(prefix + ".positions", positions);
    layer.visit(prefix + ".layer", f);
  }
};

/// Embedding lookup (+ positional rows) followed by one encoder layer.
inline Var encode_text(Tape& tape, const TextEncoderParams& params, const std::vector<Token>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("encode_text: no tokens");
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const Token& t : tokens) {
    if (t.id >= params.vocab_size) throw DimensionError("encode_text: token id outside vocabulary");
    ids.push_back(t.id);
  }
  Var x = ops::gather_rows(tape.bind(params.embedding), ids);
  if (params.positional) {
    if (tokens.size() > params.max_length) throw DimensionError("encode_text: sequence longer than max_length");
    std::vector<std::size_t> pos(tokens.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    x = ops::add(x, ops::gather_rows(tape.bind(params.positions), pos));
  }
  return encoder_layer_forward(tape, params.layer, x);
}

inline Tensor encode_text(const TextEncoderParams& params, const std::vector<Token>& tokens) {
  Tape tape(false);
  return encode_text(tape, params, tokens).value();
}

/// Toy contextual encoder used in place of a pretrained language model.
class ToyTextEncoder final : public SentenceEncoder {
 public:
  explicit ToyTextEncoder(TextEncoderParams params) : params_(std::move(params)) {}

  std::size_t width() const override { return params_.width(); }
  std::size_t vocab_size() const override { return params_.vocab_size; }
  Tensor encode(const std::vector<Token>& tokens) const override { return encode_text(params_, tokens); }

  const TextEncoderParams& params() const { return params_; }
  TextEncoderParams& params() { return params_; }

 private:
  TextEncoderParams params_;
};

/// Row-wise concatenation of features with normalized box coordinates.
/// Visual rows carry one box (4 values), relationship rows carry two (8 values).
inline Tensor ground_with_boxes(const Tensor& features, const Tensor& boxes) {
  const std::size_t k = features.rank() == 2 ? features.rows() : (features.empty() ? 0 : 1);
  const std::size_t kb = boxes.rank() == 2 ? boxes.rows() : (boxes.empty() ? 0 : 1);
  if (k != kb) {
    throw DimensionError("ground_with_boxes: " + std::to_string(k) + " feature rows vs " + std::to_string(kb) +
                         " box rows");
  }
  const std::size_t d = features.cols();
  const std::size_t nb = boxes.cols();
  if (k > 0 && nb != 4 && nb != 8) throw DimensionError("ground_with_boxes: boxes must have 4 or 8 columns");
  for (double c : boxes.data()) {
    if (!(c >= 0.0 && c <= 1.0)) throw std::domain_error("ground_with_boxes: box coordinate outside [0,1]");
  }
  Tensor out = Tensor::zeros(k, d + nb);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < d; ++j) out(i, j) = features(i, j);
    for (std::size_t j = 0; j < nb; ++j) out(i, d + j) = boxes(i, j);
  }
  return out;
}

}  // namespace srpvqa
