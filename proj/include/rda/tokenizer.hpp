#pragma once

#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "rda/types.hpp"

namespace rda::tok {

// Reserved ids are fixed.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kSot = 3;
inline constexpr int kEot = 4;
inline constexpr std::size_t kMaxVocab = 1024;

inline const std::array<std::string_view, 5> kReserved = {"<PAD>", "<BOS>", "<EOS>", "<SOT>", "<EOT>"};

// Marks a piece that was preceded by a space in the source text.
inline constexpr std::string_view kSpace = "▁";

class VocabError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EncodeError : public std::runtime_error {
 public:
  EncodeError(std::string word)
      : std::runtime_error("word not in vocabulary: '" + word + "'"), word_(std::move(word)) {}
  const std::string& word() const { return word_; }

 private:
  std::string word_;
};

// Splits canonical text (single spaces) into vocabulary pieces: reserved
// markers, letter/underscore runs, single digits, single punctuation marks.
// A piece preceded by whitespace is prefixed with kSpace.
inline std::vector<std::string> split_pieces(std::string_view text) {
  std::vector<std::string> out;
  bool space = false;
  std::size_t i = 0;
  auto is_word = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; };
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      ++i;
      continue;
    }
    if (c == '<') {
      bool matched = false;
      for (auto r : kReserved) {
        if (text.substr(i, r.size()) == r) {
          out.emplace_back(r);  // reserved markers never carry the space flag
          i += r.size();
          matched = true;
          break;
        }
      }
      if (matched) {
        space = false;
        continue;
      }
    }
    std::string piece = space ? std::string(kSpace) : std::string();
    if (is_word(c)) {
      std::size_t j = i;
      while (j < text.size() && is_word(text[j])) ++j;
      piece += text.substr(i, j - i);
      i = j;
    } else {
      piece += c;
      ++i;
    }
    out.push_back(std::move(piece));
    space = false;
  }
  return out;
}

class Vocab {
 public:
  Vocab() {
    for (auto r : kReserved) insert(std::string(r));
  }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw EncodeError(token);
    return it->second;
  }
  std::optional<int> find(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int insert(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    ids_.emplace(token, id);
    tokens_.push_back(token);
    return id;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
    return j;
  }

  static Vocab from_json(const nlohmann::json& j) {
    std::vector<std::string> by_id(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto id = it.value().get<std::size_t>();
      if (id >= by_id.size() || !by_id[id].empty()) throw VocabError("vocab ids are not a bijection");
      by_id[id] = it.key();
    }
    for (std::size_t i = 0; i < kReserved.size(); ++i) {
      if (i >= by_id.size() || by_id[i] != kReserved[i]) {
        throw VocabError("reserved token " + std::string(kReserved[i]) + " must have id " +
                         std::to_string(i));
      }
    }
    Vocab v;
    for (std::size_t i = kReserved.size(); i < by_id.size(); ++i) v.insert(by_id[i]);
    return v;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::map<std::string, int> ids_;
  std::vector<std::string> tokens_;
};

// Reserved tokens, then digits and number punctuation (both spacing variants),
// then template pieces in order of first appearance.
inline Vocab build_vocab(const std::vector<std::string>& corpus) {
  if (corpus.empty()) throw VocabError("empty template corpus");
  Vocab v;
  for (std::string_view sym : {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9", ".", ",", "(", ")", "-"}) {
    v.insert(std::string(sym));
    v.insert(std::string(kSpace) + std::string(sym));
  }
  for (const auto& text : corpus) {
    for (auto& piece : split_pieces(text)) v.insert(piece);
  }
  if (v.size() > kMaxVocab) {
    throw VocabError("template corpus yields " + std::to_string(v.size()) + " tokens (max " +
                     std::to_string(kMaxVocab) + ")");
  }
  return v;
}

inline void save_vocab(const Vocab& v, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write vocab to " + path);
  os << v.to_json().dump(1) << '\n';
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read vocab from " + path);
  return Vocab::from_json(nlohmann::json::parse(is));
}

inline std::vector<int> encode_text(std::string_view text, const Vocab& vocab) {
  std::vector<int> ids;
  for (auto& piece : split_pieces(text)) ids.push_back(vocab.id(piece));
  return ids;
}

inline std::string decode(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& t = vocab.token(id);
    if (t.starts_with(kSpace)) {
      out += ' ';
      out += t.substr(kSpace.size());
    } else {
      out += t;
    }
  }
  return out;
}

struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
  friend bool operator==(const Range&, const Range&) = default;
};

struct TurnSpan {
  Range prompt;
  Range response;
  friend bool operator==(const TurnSpan&, const TurnSpan&) = default;
};

using Turn = std::pair<std::string, std::string>;  // (prompt, response)

// <BOS> p1 r1 ... pn rn <EOS>. The first prompt range holds <BOS>, the last
// response range holds <EOS>; the loss mask is true on response ranges only.
struct TokenStream {
  std::vector<int> ids;
  std::vector<bool> loss_mask;
  std::vector<TurnSpan> turn_spans;

  std::size_t size() const { return ids.size(); }
  std::size_t supervised_count() const {
    std::size_t n = 0;
    for (bool m : loss_mask) n += m;
    return n;
  }
  friend bool operator==(const TokenStream&, const TokenStream&) = default;
};

// Builds a stream from already-tokenized segments.
inline TokenStream assemble_stream(const std::vector<std::pair<std::vector<int>, std::vector<int>>>& turns) {
  TokenStream s;
  s.ids.push_back(kBos);
  s.loss_mask.push_back(false);
  for (std::size_t t = 0; t < turns.size(); ++t) {
    TurnSpan span;
    span.prompt.begin = t == 0 ? 0 : s.ids.size();
    for (int id : turns[t].first) {
      s.ids.push_back(id);
      s.loss_mask.push_back(false);
    }
    span.prompt.end = s.ids.size();
    span.response.begin = s.ids.size();
    for (int id : turns[t].second) {
      s.ids.push_back(id);
      s.loss_mask.push_back(true);
    }
    if (t + 1 == turns.size()) {
      s.ids.push_back(kEos);
      s.loss_mask.push_back(true);
    }
    span.response.end = s.ids.size();
    s.turn_spans.push_back(span);
  }
  if (turns.empty()) {
    s.ids.push_back(kEos);
    s.loss_mask.push_back(true);
  }
  return s;
}

inline TokenStream encode_conversation(const std::vector<Turn>& turns, const Vocab& vocab) {
  std::vector<std::pair<std::vector<int>, std::vector<int>>> seg;
  seg.reserve(turns.size());
  for (const auto& [p, r] : turns) seg.emplace_back(encode_text(p, vocab), encode_text(r, vocab));
  return assemble_stream(seg);
}

// Segments recovered from a stream, without <BOS>/<EOS>/<PAD>.
inline std::vector<Turn> decode_turns(const TokenStream& s, const Vocab& vocab) {
  std::vector<Turn> out;
  auto strip = [&](Range r) {
    std::vector<int> ids;
    for (std::size_t i = r.begin; i < r.end; ++i) {
      const int id = s.ids[i];
      if (id != kBos && id != kEos && id != kPad) ids.push_back(id);
    }
    return decode(ids, vocab);
  };
  for (const auto& span : s.turn_spans) out.emplace_back(strip(span.prompt), strip(span.response));
  return out;
}

// Segments joined by single spaces.
inline std::string conversation_text(const std::vector<Turn>& turns) {
  std::string out;
  for (const auto& [p, r] : turns) {
    for (const std::string* seg : {&p, &r}) {
      if (seg->empty()) continue;
      if (!out.empty()) out += ' ';
      out += *seg;
    }
  }
  return out;
}

inline std::string decode(const TokenStream& s, const Vocab& vocab) {
  return conversation_text(decode_turns(s, vocab));
}

inline TokenStream padded(TokenStream s, std::size_t length) {
  while (s.ids.size() < length) {
    s.ids.push_back(kPad);
    s.loss_mask.push_back(false);
  }
  return s;
}

// ---- trajectory text --------------------------------------------------------

class TrajectoryFormatError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string format_fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", round2(v));
  return buf;
}

inline std::string serialize_trajectory(const Trajectory& t) {
  if (t.size() != kWaypoints) {
    throw TrajectoryFormatError("trajectory must have " + std::to_string(kWaypoints) +
                                " waypoints, got " + std::to_string(t.size()));
  }
  std::string out = "<SOT>";
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) out += ',';
    out += '(' + format_fixed2(t[i].x) + ',' + format_fixed2(t[i].y) + ')';
  }
  out += "<EOT>";
  return out;
}

enum class ParseErrorKind { missing_marker, waypoint_count, bad_number };

struct TrajectoryParseError {
  ParseErrorKind kind;
  std::size_t waypoint_count = 0;  // set for waypoint_count
  std::string detail;

  std::string message() const {
    switch (kind) {
      case ParseErrorKind::missing_marker: return "MissingMarker: " + detail;
      case ParseErrorKind::waypoint_count: return "WaypointCount(" + std::to_string(waypoint_count) + ")";
      case ParseErrorKind::bad_number: return "BadNumber: " + detail;
    }
    return detail;
  }
};

class TrajectoryParseException : public std::runtime_error {
 public:
  explicit TrajectoryParseException(TrajectoryParseError e)
      : std::runtime_error(e.message()), error_(std::move(e)) {}
  const TrajectoryParseError& error() const { return error_; }

 private:
  TrajectoryParseError error_;
};

using ParseResult = std::variant<Trajectory, TrajectoryParseError>;

// Reads the first <SOT> ... <EOT> span.
inline ParseResult try_parse_trajectory(std::string_view text) {
  const auto sot = text.find("<SOT>");
  if (sot == std::string_view::npos) return TrajectoryParseError{ParseErrorKind::missing_marker, 0, "no <SOT>"};
  const auto eot = text.find("<EOT>", sot + 5);
  if (eot == std::string_view::npos) return TrajectoryParseError{ParseErrorKind::missing_marker, 0, "no <EOT>"};
  std::string_view body = text.substr(sot + 5, eot - sot - 5);

  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
  };
  auto bad = [&](std::string what) {
    return TrajectoryParseError{ParseErrorKind::bad_number, 0, std::move(what)};
  };
  auto number = [&](double& out) -> bool {
    skip_ws();
    std::size_t j = i;
    if (j < body.size() && (body[j] == '-' || body[j] == '+')) ++j;
    while (j < body.size() && (std::isdigit(static_cast<unsigned char>(body[j])) || body[j] == '.')) ++j;
    const char* first = body.data() + i;
    const char* last = body.data() + j;
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last || !std::isfinite(out)) return false;
    i = j;
    return true;
  };

  Trajectory t;
  skip_ws();
  while (i < body.size()) {
    if (!t.points.empty()) {
      if (body[i] != ',') return bad("expected ',' between waypoints");
      ++i;
      skip_ws();
    }
    if (i >= body.size() || body[i] != '(') return bad("expected '('");
    ++i;
    Waypoint w;
    if (!number(w.x)) return bad("unparseable x in waypoint " + std::to_string(t.size() + 1));
    skip_ws();
    if (i >= body.size() || body[i] != ',') return bad("expected ',' inside waypoint");
    ++i;
    if (!number(w.y)) return bad("unparseable y in waypoint " + std::to_string(t.size() + 1));
    skip_ws();
    if (i >= body.size() || body[i] != ')') return bad("expected ')'");
    ++i;
    t.points.push_back(w);
    skip_ws();
  }
  if (t.size() != kWaypoints) {
    return TrajectoryParseError{ParseErrorKind::waypoint_count, t.size(), ""};
  }
  return t;
}

inline Trajectory parse_trajectory(std::string_view text) {
  auto r = try_parse_trajectory(text);
  if (auto* e = std::get_if<TrajectoryParseError>(&r)) throw TrajectoryParseException(*e);
  return std::get<Trajectory>(std::move(r));
}

}  // namespace rda::tok
