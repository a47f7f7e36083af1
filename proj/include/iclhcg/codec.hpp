#pragma once

// Token layout of one episode:
//
//   prefix  = L fixed-width slots of 3n+2 tokens
//     filled: x_0 y ; x_1 y ; ... x_{n-1} y > z P
//     blank : N ... N (3n+1 times) P
//   query   = x y ; x y ; ... x y >          (3K tokens)
//   target  = z of the true hypothesis       (1 token)
//
// L = 0 is the prefix-free variant: no slots, no index tokens and no target,
// so the sequence is the bare context query.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "iclhcg/error.hpp"
#include "iclhcg/hypothesis.hpp"
#include "iclhcg/rng.hpp"

namespace iclhcg {

using Token = std::int32_t;

inline constexpr std::uint32_t kVocabVersion = 1;

enum class TokenKind { Input, Label, Index, Pad, Separator, Empty, Query };

/// Token ids: inputs [0, n), labels n and n+1, index tokens [n+2, n+2+L),
/// then P ; N >.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(int n, int prefix_slots) : n_(n), slots_(prefix_slots) {}

  int input_size() const { return n_; }
  int prefix_slots() const { return slots_; }
  int size() const { return n_ + 2 + slots_ + 4; }

  Token input(int x) const { return x; }
  Token label(int y) const { return n_ + y; }
  Token index(int i) const { return n_ + 2 + i; }
  Token pad() const { return n_ + 2 + slots_; }
  Token separator() const { return pad() + 1; }
  Token empty() const { return pad() + 2; }
  Token query() const { return pad() + 3; }

  bool valid(Token t) const { return t >= 0 && t < size(); }

  TokenKind kind(Token t) const {
    if (!valid(t)) throw BoundsError("token id " + std::to_string(t) + " outside vocabulary");
    if (t < n_) return TokenKind::Input;
    if (t < n_ + 2) return TokenKind::Label;
    if (t < pad()) return TokenKind::Index;
    if (t == pad()) return TokenKind::Pad;
    if (t == separator()) return TokenKind::Separator;
    if (t == empty()) return TokenKind::Empty;
    return TokenKind::Query;
  }

  /// Input index, label value or index number of a token.
  int value(Token t) const {
    switch (kind(t)) {
      case TokenKind::Input: return t;
      case TokenKind::Label: return t - n_;
      case TokenKind::Index: return t - n_ - 2;
      default: return -1;
    }
  }

  std::string glyph(Token t) const {
    switch (kind(t)) {
      case TokenKind::Input: return "x" + std::to_string(t);
      case TokenKind::Label: return std::to_string(t - n_);
      case TokenKind::Index: {
        const int i = t - n_ - 2;
        if (i < 26) return std::string(1, static_cast<char>('A' + i));
        return "I" + std::to_string(i);
      }
      case TokenKind::Pad: return "P";
      case TokenKind::Separator: return ";";
      case TokenKind::Empty: return "N";
      case TokenKind::Query: return ">";
    }
    return "?";
  }

  Token from_glyph(const std::string& g) const {
    for (Token t = 0; t < size(); ++t) {
      if (glyph(t) == g) return t;
    }
    throw BoundsError("unknown glyph '" + g + "'");
  }

  int slot_width() const { return 3 * n_ + 2; }
  int prefix_length() const { return slots_ * slot_width(); }

  /// L(3n+2) + 3K + 1, or 3K for the prefix-free variant.
  std::size_t episode_length(int K) const {
    const auto query_len = static_cast<std::size_t>(3 * K);
    if (slots_ == 0) return query_len;
    return static_cast<std::size_t>(prefix_length()) + query_len + 1;
  }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  int n_ = 0;
  int slots_ = 0;
};

inline Vocabulary build_vocabulary(int n, int prefix_slots) {
  if (n < 1 || n > kMaxInputSize) throw BoundsError("input-space size out of range");
  if (prefix_slots < 0) throw BoundsError("prefix capacity must be nonnegative");
  return Vocabulary(n, prefix_slots);
}

/// index_of[i] is the index-token number given to the class member in slot i.
struct IndexAssignment {
  std::vector<int> index_of;

  friend bool operator==(const IndexAssignment&, const IndexAssignment&) = default;
};

inline IndexAssignment sample_assignment(std::size_t class_size, int prefix_slots, CounterRng& rng) {
  if (class_size > static_cast<std::size_t>(prefix_slots)) {
    throw CapacityError("class of " + std::to_string(class_size) + " does not fit " +
                        std::to_string(prefix_slots) + " prefix slots");
  }
  std::vector<int> pool(static_cast<std::size_t>(prefix_slots));
  for (int i = 0; i < prefix_slots; ++i) pool[static_cast<std::size_t>(i)] = i;
  // Partial Fisher-Yates: the first class_size entries are a draw without replacement.
  for (std::size_t i = 0; i < class_size; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(class_size);
  return IndexAssignment{std::move(pool)};
}

struct EpisodeTruth {
  HypothesisClass cls;  // in prefix slot order
  HypothesisId target = 0;
  ObservationList context;
};

struct EncodedEpisode {
  std::vector<Token> tokens;
  std::vector<std::size_t> y_positions;
  std::optional<std::size_t> z_position;
  IndexAssignment assignment;
  EpisodeTruth truth;

  int context_length() const { return static_cast<int>(y_positions.size()); }
};

inline void validate_assignment(const IndexAssignment& a, std::size_t class_size, int prefix_slots) {
  if (a.index_of.size() != class_size) throw ConfigError("assignment size does not match class size");
  std::vector<bool> used(static_cast<std::size_t>(prefix_slots), false);
  for (int z : a.index_of) {
    if (z < 0 || z >= prefix_slots) throw BoundsError("index token outside the prefix pool");
    if (used[static_cast<std::size_t>(z)]) throw ConfigError("index assignment is not injective");
    used[static_cast<std::size_t>(z)] = true;
  }
}

inline std::vector<Token> encode_prefix(const HypothesisClass& cls, const IndexAssignment& assignment,
                                        const Vocabulary& vocab) {
  const int L = vocab.prefix_slots();
  if (cls.size() > static_cast<std::size_t>(L)) {
    throw CapacityError("class of " + std::to_string(cls.size()) + " exceeds prefix capacity " +
                        std::to_string(L));
  }
  if (cls.n() != vocab.input_size()) throw ConfigError("class and vocabulary disagree on n");
  validate_assignment(assignment, cls.size(), L);
  const int n = vocab.input_size();
  std::vector<Token> out;
  out.reserve(static_cast<std::size_t>(vocab.prefix_length()));
  for (std::size_t slot = 0; slot < static_cast<std::size_t>(L); ++slot) {
    if (slot < cls.size()) {
      const auto h = cls[slot];
      for (int x = 0; x < n; ++x) {
        out.push_back(vocab.input(x));
        out.push_back(vocab.label(label_of(h, x)));
        out.push_back(x + 1 < n ? vocab.separator() : vocab.query());
      }
      out.push_back(vocab.index(assignment.index_of[slot]));
    } else {
      out.insert(out.end(), static_cast<std::size_t>(3 * n + 1), vocab.empty());
    }
    out.push_back(vocab.pad());
  }
  return out;
}

inline std::vector<Token> encode_query(std::span<const Observation> context, const Vocabulary& vocab) {
  if (context.empty()) throw BoundsError("context query needs at least one pair");
  std::vector<Token> out;
  out.reserve(3 * context.size());
  for (std::size_t k = 0; k < context.size(); ++k) {
    const auto& o = context[k];
    if (o.x < 0 || o.x >= vocab.input_size()) throw BoundsError("context input index out of range");
    if (o.y != 0 && o.y != 1) throw BoundsError("context label must be 0 or 1");
    out.push_back(vocab.input(o.x));
    out.push_back(vocab.label(o.y));
    out.push_back(k + 1 < context.size() ? vocab.separator() : vocab.query());
  }
  return out;
}

/// Encodes with an explicit assignment. The class is encoded in its given
/// member order.
inline EncodedEpisode encode_episode(const HypothesisClass& cls, HypothesisId target,
                                     std::span<const Observation> context, const IndexAssignment& assignment,
                                     const Vocabulary& vocab) {
  const auto slot = cls.position_of(target);
  if (!slot) throw MembershipError("target hypothesis is not a class member");
  for (const auto& o : context) {
    if (o.x < 0 || o.x >= cls.n()) throw BoundsError("context input index out of range");
    if (label_of(target, o.x) != o.y) {
      throw InconsistencyError("context label at x" + std::to_string(o.x) + " disagrees with the target");
    }
  }
  EncodedEpisode ep;
  ep.assignment = assignment;
  ep.truth = EpisodeTruth{cls, target, ObservationList(context.begin(), context.end())};
  if (vocab.prefix_slots() > 0) ep.tokens = encode_prefix(cls, assignment, vocab);
  const std::size_t query_start = ep.tokens.size();
  const auto query = encode_query(context, vocab);
  ep.tokens.insert(ep.tokens.end(), query.begin(), query.end());
  for (std::size_t k = 0; k < context.size(); ++k) ep.y_positions.push_back(query_start + 3 * k + 1);
  if (vocab.prefix_slots() > 0) {
    ep.tokens.push_back(vocab.index(assignment.index_of[*slot]));
    ep.z_position = ep.tokens.size() - 1;
  }
  return ep;
}

/// Encodes with an index assignment drawn without replacement from `rng`.
inline EncodedEpisode encode_episode(const HypothesisClass& cls, HypothesisId target,
                                     std::span<const Observation> context, const Vocabulary& vocab,
                                     CounterRng& rng) {
  if (!cls.contains(target)) throw MembershipError("target hypothesis is not a class member");
  IndexAssignment assignment;
  if (vocab.prefix_slots() > 0) assignment = sample_assignment(cls.size(), vocab.prefix_slots(), rng);
  return encode_episode(cls, target, context, assignment, vocab);
}

struct DecodedEpisode {
  HypothesisClass cls;  // slot order
  IndexAssignment assignment;
  ObservationList context;
  std::optional<Token> final_index;
  std::optional<HypothesisId> target;  // class member bound to final_index
};

namespace detail {

class TokenReader {
 public:
  TokenReader(std::span<const Token> tokens, const Vocabulary& vocab) : tokens_(tokens), vocab_(vocab) {}

  std::size_t position() const { return pos_; }
  bool done() const { return pos_ >= tokens_.size(); }

  Token next(const char* expected) {
    if (done()) throw ParseError(std::string("sequence truncated, expected ") + expected, pos_);
    const Token t = tokens_[pos_];
    if (!vocab_.valid(t)) throw ParseError("token id outside vocabulary", pos_);
    ++pos_;
    return t;
  }

  Token expect(TokenKind kind, const char* expected) {
    const Token t = next(expected);
    if (vocab_.kind(t) != kind) throw ParseError(std::string("expected ") + expected, pos_ - 1);
    return t;
  }

  TokenKind peek_kind() const {
    if (done()) throw ParseError("sequence truncated", pos_);
    if (!vocab_.valid(tokens_[pos_])) throw ParseError("token id outside vocabulary", pos_);
    return vocab_.kind(tokens_[pos_]);
  }

 private:
  std::span<const Token> tokens_;
  const Vocabulary& vocab_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline DecodedEpisode decode_episode(std::span<const Token> tokens, const Vocabulary& vocab) {
  const int n = vocab.input_size();
  const int L = vocab.prefix_slots();
  const auto prefix_len = static_cast<std::size_t>(vocab.prefix_length());
  const std::size_t tail = L > 0 ? 1 : 0;
  if (tokens.size() < prefix_len + 3 + tail) throw ParseError("sequence truncated", tokens.size());
  if ((tokens.size() - prefix_len - tail) % 3 != 0) {
    throw ParseError("sequence length does not match the episode layout", tokens.size());
  }

  detail::TokenReader in(tokens, vocab);
  std::vector<HypothesisId> members;
  IndexAssignment assignment;
  std::vector<bool> index_used(static_cast<std::size_t>(L), false);
  bool blank_seen = false;
  for (int slot = 0; slot < L; ++slot) {
    if (in.peek_kind() == TokenKind::Empty) {
      blank_seen = true;
      for (int i = 0; i < 3 * n + 1; ++i) in.expect(TokenKind::Empty, "empty token N");
      in.expect(TokenKind::Pad, "padding token P");
      continue;
    }
    if (blank_seen) throw ParseError("filled slot after a blank slot", in.position());
    HypothesisId h = 0;
    for (int x = 0; x < n; ++x) {
      const Token xt = in.expect(TokenKind::Input, "input token");
      if (vocab.value(xt) != x) throw ParseError("prefix inputs out of order", in.position() - 1);
      const Token yt = in.expect(TokenKind::Label, "label token");
      if (vocab.value(yt) == 1) h |= HypothesisId{1} << x;
      if (x + 1 < n) {
        in.expect(TokenKind::Separator, "separator ;");
      } else {
        in.expect(TokenKind::Query, "query token >");
      }
    }
    const Token zt = in.expect(TokenKind::Index, "index token");
    const int z = vocab.value(zt);
    if (index_used[static_cast<std::size_t>(z)]) throw ParseError("index token reused", in.position() - 1);
    index_used[static_cast<std::size_t>(z)] = true;
    in.expect(TokenKind::Pad, "padding token P");
    if (std::find(members.begin(), members.end(), h) != members.end()) {
      throw ParseError("duplicate hypothesis in prefix", in.position() - 1);
    }
    members.push_back(h);
    assignment.index_of.push_back(z);
  }
  if (L > 0 && members.empty()) throw ParseError("prefix holds no hypotheses", prefix_len);

  DecodedEpisode out;
  const std::size_t pairs = (tokens.size() - prefix_len - tail) / 3;
  for (std::size_t k = 0; k < pairs; ++k) {
    const Token xt = in.expect(TokenKind::Input, "query input token");
    const Token yt = in.expect(TokenKind::Label, "query label token");
    out.context.push_back({vocab.value(xt), vocab.value(yt)});
    if (k + 1 < pairs) {
      in.expect(TokenKind::Separator, "separator ;");
    } else {
      in.expect(TokenKind::Query, "query token >");
    }
  }
  if (L > 0) {
    const std::size_t pos = in.position();
    const Token zt = in.next("final index token");
    if (vocab.kind(zt) != TokenKind::Index) throw ParseError("final token is not an index token", pos);
    const int z = vocab.value(zt);
    auto it = std::find(assignment.index_of.begin(), assignment.index_of.end(), z);
    if (it == assignment.index_of.end()) throw ParseError("final index names no hypothesis", pos);
    out.final_index = zt;
    out.target = members[static_cast<std::size_t>(it - assignment.index_of.begin())];
    out.cls = HypothesisClass(n, std::move(members));
  }
  out.assignment = std::move(assignment);
  return out;
}

inline std::string render_text(std::span<const Token> tokens, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.glyph(tokens[i]);
  }
  return out;
}

inline std::vector<Token> parse_text(const std::string& line, const Vocabulary& vocab) {
  std::istringstream in(line);
  std::vector<Token> out;
  std::string g;
  while (in >> g) out.push_back(vocab.from_glyph(g));
  return out;
}

// Binary episode file: "ICLHCGEP", u32 format version, u32 vocab version,
// u32 n, u32 L, u32 K, u64 count, then count * length little-endian u16 ids.
inline constexpr char kEpisodeMagic[8] = {'I', 'C', 'L', 'H', 'C', 'G', 'E', 'P'};
inline constexpr std::uint32_t kEpisodeFormatVersion = 1;

struct EpisodeFileHeader {
  int n = 0;
  int prefix_slots = 0;
  int context_length = 0;
  std::uint64_t count = 0;
};

namespace detail {

template <typename U>
void write_le(std::ostream& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.put(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename U>
U read_le(std::istream& in) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = in.get();
    if (c == EOF) throw LoadError("unexpected end of file");
    value |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(c)) << (8 * i));
  }
  return value;
}

}  // namespace detail

inline void write_episodes(std::ostream& out, const Vocabulary& vocab, int K,
                           std::span<const EncodedEpisode> episodes) {
  out.write(kEpisodeMagic, sizeof(kEpisodeMagic));
  detail::write_le<std::uint32_t>(out, kEpisodeFormatVersion);
  detail::write_le<std::uint32_t>(out, kVocabVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(vocab.input_size()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(vocab.prefix_slots()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(K));
  detail::write_le<std::uint64_t>(out, episodes.size());
  const auto length = vocab.episode_length(K);
  for (const auto& ep : episodes) {
    if (ep.tokens.size() != length) throw ConfigError("episode length differs from the file header");
    for (Token t : ep.tokens) detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(t));
  }
}

struct EpisodeFile {
  EpisodeFileHeader header;
  std::vector<std::vector<Token>> sequences;
};

inline EpisodeFile read_episodes(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kEpisodeMagic)) {
    throw LoadError("not an episode file");
  }
  if (detail::read_le<std::uint32_t>(in) != kEpisodeFormatVersion) throw LoadError("unsupported episode format");
  if (detail::read_le<std::uint32_t>(in) != kVocabVersion) throw LoadError("unsupported vocabulary version");
  EpisodeFile file;
  file.header.n = static_cast<int>(detail::read_le<std::uint32_t>(in));
  file.header.prefix_slots = static_cast<int>(detail::read_le<std::uint32_t>(in));
  file.header.context_length = static_cast<int>(detail::read_le<std::uint32_t>(in));
  file.header.count = detail::read_le<std::uint64_t>(in);
  const Vocabulary vocab(file.header.n, file.header.prefix_slots);
  const auto length = vocab.episode_length(file.header.context_length);
  file.sequences.reserve(file.header.count);
  for (std::uint64_t e = 0; e < file.header.count; ++e) {
    std::vector<Token> seq(length);
    for (auto& t : seq) t = static_cast<Token>(detail::read_le<std::uint16_t>(in));
    file.sequences.push_back(std::move(seq));
  }
  return file;
}

}  // namespace iclhcg
