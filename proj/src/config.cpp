#include "microform/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "microform/util.hpp"

namespace microform {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string SourceSpan::to_string() const {
  return file + ":" + std::to_string(line) + ":" + std::to_string(column);
}

ConfigError::ConfigError(SourceSpan span, const std::string& message)
    : Error(span.to_string() + ": " + message), span_(std::move(span)), detail_(message) {}

std::string_view token_kind_name(TokenKind kind) {
  switch (kind) {
    case TokenKind::Ident: return "identifier";
    case TokenKind::String: return "string";
    case TokenKind::Number: return "number";
    case TokenKind::LBrace: return "'{'";
    case TokenKind::RBrace: return "'}'";
    case TokenKind::LBracket: return "'['";
    case TokenKind::RBracket: return "']'";
    case TokenKind::Equals: return "'='";
    case TokenKind::Comma: return "','";
    case TokenKind::Dot: return "'.'";
  }
  return "?";
}

namespace {

bool is_ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
bool is_ident_char(char c) { return is_ident_start(c) || (c >= '0' && c <= '9') || c == '-'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_identifier(std::string_view s) {
  if (s.empty() || !is_ident_start(s[0])) return false;
  return std::all_of(s.begin() + 1, s.end(), is_ident_char);
}

}  // namespace

std::vector<Token> tokenize(std::string_view src, const std::string& file) {
  std::vector<Token> out;
  std::size_t i = 0;
  int line = 1;
  int col = 1;
  auto advance = [&](std::size_t n = 1) {
    for (std::size_t k = 0; k < n && i < src.size(); ++k, ++i) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };
  while (i < src.size()) {
    char c = src[i];
    SourceSpan span{file, line, col};
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      advance();
    } else if (c == '#') {
      while (i < src.size() && src[i] != '\n') advance();
    } else if (is_ident_start(c)) {
      std::size_t start = i;
      while (i < src.size() && is_ident_char(src[i])) advance();
      out.push_back({TokenKind::Ident, std::string(src.substr(start, i - start)), span});
    } else if (is_digit(c) || (c == '-' && i + 1 < src.size() && is_digit(src[i + 1]))) {
      std::size_t start = i;
      advance();
      while (i < src.size() && is_digit(src[i])) advance();
      if (i + 1 < src.size() && src[i] == '.' && is_digit(src[i + 1])) {
        advance();
        while (i < src.size() && is_digit(src[i])) advance();
      }
      if (i < src.size() && (src[i] == 'e' || src[i] == 'E')) {
        std::size_t save = i;
        int save_col = col;
        advance();
        if (i < src.size() && (src[i] == '+' || src[i] == '-')) advance();
        if (i < src.size() && is_digit(src[i])) {
          while (i < src.size() && is_digit(src[i])) advance();
        } else {
          i = save;
          col = save_col;
        }
      }
      if (i < src.size() && is_ident_char(src[i]))
        throw ConfigError(span, "malformed number");
      out.push_back({TokenKind::Number, std::string(src.substr(start, i - start)), span});
    } else if (c == '"') {
      advance();
      std::string text;
      bool closed = false;
      while (i < src.size()) {
        char d = src[i];
        if (d == '"') {
          advance();
          closed = true;
          break;
        }
        if (d == '\n') break;
        if (d == '\\') {
          if (i + 1 >= src.size()) break;
          char e = src[i + 1];
          switch (e) {
            case 'n': text += '\n'; break;
            case 't': text += '\t'; break;
            case 'r': text += '\r'; break;
            case '"': text += '"'; break;
            case '\\': text += '\\'; break;
            default:
              throw ConfigError(SourceSpan{file, line, col}, std::string("invalid escape '\\") + e + "'");
          }
          advance(2);
          continue;
        }
        text += d;
        advance();
      }
      if (!closed) throw ConfigError(span, "unterminated string");
      out.push_back({TokenKind::String, std::move(text), span});
    } else {
      TokenKind kind;
      switch (c) {
        case '{': kind = TokenKind::LBrace; break;
        case '}': kind = TokenKind::RBrace; break;
        case '[': kind = TokenKind::LBracket; break;
        case ']': kind = TokenKind::RBracket; break;
        case '=': kind = TokenKind::Equals; break;
        case ',': kind = TokenKind::Comma; break;
        case '.': kind = TokenKind::Dot; break;
        default: {
          std::string shown = (static_cast<unsigned char>(c) < 0x20) ? "\\x" + std::to_string(c) : std::string(1, c);
          throw ConfigError(span, "illegal character '" + shown + "'");
        }
      }
      out.push_back({kind, std::string(1, c), span});
      advance();
    }
  }
  return out;
}

Expression Expression::make_literal(Value v, SourceSpan span) {
  Expression e;
  e.kind = Kind::Literal;
  e.literal = std::move(v);
  e.span = std::move(span);
  return e;
}

Expression Expression::make_reference(std::vector<std::string> path, SourceSpan span) {
  Expression e;
  e.kind = Kind::Reference;
  e.path = std::move(path);
  e.span = std::move(span);
  return e;
}

bool Expression::operator==(const Expression& o) const {
  if (kind != o.kind) return false;
  switch (kind) {
    case Kind::Literal: return literal == o.literal;
    case Kind::List: return items == o.items;
    case Kind::Map: return entries == o.entries;
    case Kind::Reference: return path == o.path;
    case Kind::Template: return parts == o.parts;
  }
  return false;
}

const Attribute* Block::find(std::string_view name) const {
  for (const auto& a : body)
    if (a.name == name) return &a;
  return nullptr;
}

namespace {

void check_reference_path(const std::vector<std::string>& path, const SourceSpan& span) {
  if (path.size() < 2) throw ConfigError(span, "reference needs at least two segments");
  if (path[0] == "var" && path.size() != 2)
    throw ConfigError(span, "variable reference must be var.<name>");
  if (path[0] == "data" && path.size() < 3)
    throw ConfigError(span, "data reference must be data.<type>.<name>");
}

std::vector<std::string> split_reference(std::string_view text, const SourceSpan& span) {
  std::vector<std::string> path;
  std::size_t b = text.find_first_not_of(" \t");
  std::size_t e = text.find_last_not_of(" \t");
  if (b == std::string_view::npos) throw ConfigError(span, "empty interpolation");
  text = text.substr(b, e - b + 1);
  std::size_t start = 0;
  while (true) {
    auto dot = text.find('.', start);
    auto seg = text.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start);
    if (!is_identifier(seg))
      throw ConfigError(span, "invalid reference '" + std::string(text) + "' in interpolation");
    path.emplace_back(seg);
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  check_reference_path(path, span);
  return path;
}

}  // namespace

/// Turns decoded string contents into a literal, reference or template.
Expression string_expression(const std::string& raw, const SourceSpan& span) {
  std::vector<TemplatePart> parts;
  std::string text;
  bool has_ref = false;
  std::size_t i = 0;
  while (i < raw.size()) {
    if (raw.compare(i, 3, "$${") == 0) {
      text += "${";
      i += 3;
    } else if (raw.compare(i, 2, "${") == 0) {
      auto close = raw.find('}', i + 2);
      if (close == std::string::npos) throw ConfigError(span, "unclosed '${' in string");
      if (!text.empty()) parts.push_back(TemplatePart{false, std::move(text), {}});
      text.clear();
      parts.push_back(TemplatePart{true, {}, split_reference(std::string_view(raw).substr(i + 2, close - i - 2), span)});
      has_ref = true;
      i = close + 1;
    } else {
      text += raw[i++];
    }
  }
  if (!has_ref) return Expression::make_literal(Value(text), span);
  if (!text.empty()) parts.push_back(TemplatePart{false, std::move(text), {}});
  if (parts.size() == 1) return Expression::make_reference(parts[0].path, span);
  Expression e;
  e.kind = Expression::Kind::Template;
  e.parts = std::move(parts);
  e.span = span;
  return e;
}

namespace {

class Parser {
 public:
  explicit Parser(const std::vector<Token>& tokens) : toks_(tokens) {}

  std::vector<Block> config() {
    std::vector<Block> blocks;
    while (!at_end()) {
      const Token& t = expect(TokenKind::Ident);
      blocks.push_back(block(t, true));
    }
    return blocks;
  }

  Expression lone_expression() {
    Expression e = expr();
    if (!at_end()) throw ConfigError(peek().span, "unexpected " + describe(peek()));
    return e;
  }

 private:
  bool at_end() const { return pos_ >= toks_.size(); }
  const Token& peek() const { return toks_[pos_]; }
  bool peek_is(TokenKind k, std::size_t ahead = 0) const {
    return pos_ + ahead < toks_.size() && toks_[pos_ + ahead].kind == k;
  }

  SourceSpan end_span() const {
    if (toks_.empty()) return SourceSpan{};
    auto s = toks_.back().span;
    s.column += static_cast<int>(toks_.back().text.size());
    return s;
  }

  static std::string describe(const Token& t) {
    if (t.kind == TokenKind::Ident || t.kind == TokenKind::Number)
      return std::string(token_kind_name(t.kind)) + " '" + t.text + "'";
    if (t.kind == TokenKind::String) return "string \"" + t.text + "\"";
    return std::string(token_kind_name(t.kind));
  }

  const Token& expect(TokenKind k) {
    if (at_end())
      throw ConfigError(end_span(), "unexpected end of input, expected " + std::string(token_kind_name(k)));
    const Token& t = toks_[pos_];
    if (t.kind != k)
      throw ConfigError(t.span, "unexpected " + describe(t) + ", expected " + std::string(token_kind_name(k)));
    ++pos_;
    return t;
  }

  Block block(const Token& kind_tok, bool top_level) {
    Block b;
    b.kind = kind_tok.text;
    b.span = kind_tok.span;
    while (peek_is(TokenKind::String)) {
      const Token& l = toks_[pos_++];
      if (!is_identifier(l.text)) throw ConfigError(l.span, "invalid label \"" + l.text + "\"");
      b.labels.push_back(l.text);
    }
    if (b.labels.size() > 2) throw ConfigError(b.span, "block '" + b.kind + "' has more than two labels");
    if (top_level) {
      int want = -1;
      if (b.kind == "resource" || b.kind == "data") want = 2;
      else if (b.kind == "provider" || b.kind == "variable" || b.kind == "output") want = 1;
      else if (b.kind == "terraform") want = 0;
      else throw ConfigError(b.span, "unknown block kind '" + b.kind + "'");
      if (static_cast<int>(b.labels.size()) != want)
        throw ConfigError(b.span, "block '" + b.kind + "' requires " + std::to_string(want) +
                                      " label(s), got " + std::to_string(b.labels.size()));
    }
    expect(TokenKind::LBrace);
    body(b);
    return b;
  }

  void body(Block& b) {
    std::set<std::string> seen;
    while (true) {
      if (at_end()) throw ConfigError(end_span(), "unexpected end of input, expected '}'");
      if (peek_is(TokenKind::RBrace)) {
        ++pos_;
        return;
      }
      const Token& name = expect(TokenKind::Ident);
      if (peek_is(TokenKind::Equals)) {
        ++pos_;
        if (!seen.insert(name.text).second)
          throw ConfigError(name.span, "duplicate attribute '" + name.text + "'");
        b.body.push_back(Attribute{name.text, expr(), name.span});
      } else if (peek_is(TokenKind::String) || peek_is(TokenKind::LBrace)) {
        b.nested.push_back(block(name, false));
      } else if (at_end()) {
        throw ConfigError(end_span(), "unexpected end of input after '" + name.text + "'");
      } else {
        throw ConfigError(peek().span, "unexpected " + describe(peek()) + " after '" + name.text + "'");
      }
    }
  }

  Expression expr() {
    if (at_end()) throw ConfigError(end_span(), "unexpected end of input, expected expression");
    const Token& t = toks_[pos_];
    switch (t.kind) {
      case TokenKind::String: ++pos_; return string_expression(t.text, t.span);
      case TokenKind::Number: ++pos_; return Expression::make_literal(number(t), t.span);
      case TokenKind::LBracket: return list();
      case TokenKind::LBrace: return map();
      case TokenKind::Ident: {
        ++pos_;
        if (t.text == "true" || t.text == "false")
          return Expression::make_literal(Value(t.text == "true"), t.span);
        std::vector<std::string> path{t.text};
        while (peek_is(TokenKind::Dot)) {
          ++pos_;
          path.push_back(expect(TokenKind::Ident).text);
        }
        check_reference_path(path, t.span);
        return Expression::make_reference(std::move(path), t.span);
      }
      default: throw ConfigError(t.span, "unexpected " + describe(t) + ", expected expression");
    }
  }

  static Value number(const Token& t) {
    const std::string& s = t.text;
    if (s.find_first_of(".eE") == std::string::npos) {
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError(t.span, "integer out of range: " + s);
      return Value(v);
    }
    double d = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(t.span, "invalid number: " + s);
    return Value(d);
  }

  Expression list() {
    const Token& open = expect(TokenKind::LBracket);
    Expression e;
    e.kind = Expression::Kind::List;
    e.span = open.span;
    while (true) {
      if (peek_is(TokenKind::RBracket)) {
        ++pos_;
        return e;
      }
      e.items.push_back(expr());
      if (peek_is(TokenKind::Comma)) {
        ++pos_;
      } else if (!peek_is(TokenKind::RBracket)) {
        if (at_end()) throw ConfigError(end_span(), "unexpected end of input, expected ']'");
        throw ConfigError(peek().span, "unexpected " + describe(peek()) + ", expected ',' or ']'");
      }
    }
  }

  Expression map() {
    const Token& open = expect(TokenKind::LBrace);
    Expression e;
    e.kind = Expression::Kind::Map;
    e.span = open.span;
    std::set<std::string> seen;
    while (true) {
      if (at_end()) throw ConfigError(end_span(), "unexpected end of input, expected '}'");
      if (peek_is(TokenKind::RBrace)) {
        ++pos_;
        return e;
      }
      const Token& key = toks_[pos_];
      if (key.kind != TokenKind::Ident && key.kind != TokenKind::String)
        throw ConfigError(key.span, "unexpected " + describe(key) + ", expected map key");
      ++pos_;
      expect(TokenKind::Equals);
      if (!seen.insert(key.text).second) throw ConfigError(key.span, "duplicate map key '" + key.text + "'");
      e.entries.push_back(MapEntry{key.text, expr()});
      if (peek_is(TokenKind::Comma)) ++pos_;
    }
  }

  const std::vector<Token>& toks_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<Block> parse(const std::vector<Token>& tokens) { return Parser(tokens).config(); }

std::vector<Block> parse_source(std::string_view source, const std::string& file) {
  return parse(tokenize(source, file));
}

Expression parse_expression(std::string_view text) {
  auto tokens = tokenize(text, "<expr>");
  return Parser(tokens).lone_expression();
}

// ---------------------------------------------------------------------------
// Canonical formatter

namespace {

std::string escape_string(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      case '$':
        if (i + 1 < s.size() && s[i + 1] == '{') {
          out += "$${";
          ++i;
        } else {
          out += c;
        }
        break;
      default: out += c;
    }
  }
  return out;
}

std::string join_path(const std::vector<std::string>& path) {
  std::string out;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i) out += '.';
    out += path[i];
  }
  return out;
}

std::string format_literal(const Value& v) {
  if (v.is_string()) return "\"" + escape_string(v.as_string()) + "\"";
  if (v.is_bool()) return v.as_bool() ? "true" : "false";
  if (v.is_int()) return std::to_string(v.as_int());
  if (v.is_float()) return format_float(v.as_float());
  throw Error("literal of kind " + v.kind_name() + " cannot be formatted");
}

std::string escape_interpolation(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '$' && i + 1 < s.size() && s[i + 1] == '{') {
      out += "$${";
      ++i;
    } else {
      out += s[i];
    }
  }
  return out;
}

/// Native form escapes quotes and control characters too; JSON leaves that
/// to the JSON encoder.
std::string template_text(const std::vector<TemplatePart>& parts, bool native = true) {
  std::string out;
  for (const auto& p : parts) {
    if (p.is_reference)
      out += "${" + join_path(p.path) + "}";
    else
      out += native ? escape_string(p.text) : escape_interpolation(p.text);
  }
  return out;
}

void format_block(const Block& b, int depth, std::string& out) {
  std::string indent(static_cast<std::size_t>(depth) * 2, ' ');
  out += indent + b.kind;
  for (const auto& l : b.labels) out += " \"" + l + "\"";
  out += " {\n";
  for (const auto& a : b.body) out += indent + "  " + a.name + " = " + format_expression(a.expr) + "\n";
  for (const auto& n : b.nested) format_block(n, depth + 1, out);
  out += indent + "}\n";
}

}  // namespace

std::string format_expression(const Expression& e) {
  switch (e.kind) {
    case Expression::Kind::Literal: return format_literal(e.literal);
    case Expression::Kind::Reference: return join_path(e.path);
    case Expression::Kind::Template: return "\"" + template_text(e.parts) + "\"";
    case Expression::Kind::List: {
      std::string out = "[";
      for (std::size_t i = 0; i < e.items.size(); ++i) {
        if (i) out += ", ";
        out += format_expression(e.items[i]);
      }
      return out + "]";
    }
    case Expression::Kind::Map: {
      if (e.entries.empty()) return "{}";
      std::string out = "{ ";
      for (std::size_t i = 0; i < e.entries.size(); ++i) {
        if (i) out += ", ";
        const auto& k = e.entries[i].key;
        out += (is_identifier(k) && k != "true" && k != "false") ? k : "\"" + escape_string(k) + "\"";
        out += " = " + format_expression(e.entries[i].value);
      }
      return out + " }";
    }
  }
  return {};
}

std::string format_blocks(const std::vector<Block>& blocks) {
  std::string out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i) out += "\n";
    format_block(blocks[i], 0, out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON form

namespace {

SourceSpan json_span(const std::string& file) { return SourceSpan{file, 1, 1}; }

Expression json_expression(const ojson& j, const std::string& file) {
  auto span = json_span(file);
  switch (j.type()) {
    case ojson::value_t::string: return string_expression(j.get<std::string>(), span);
    case ojson::value_t::boolean: return Expression::make_literal(Value(j.get<bool>()), span);
    case ojson::value_t::number_integer:
    case ojson::value_t::number_unsigned: return Expression::make_literal(Value(j.get<std::int64_t>()), span);
    case ojson::value_t::number_float: return Expression::make_literal(Value(j.get<double>()), span);
    case ojson::value_t::array: {
      Expression e;
      e.kind = Expression::Kind::List;
      e.span = span;
      for (const auto& item : j) e.items.push_back(json_expression(item, file));
      return e;
    }
    case ojson::value_t::object: {
      Expression e;
      e.kind = Expression::Kind::Map;
      e.span = span;
      for (const auto& [k, v] : j.items()) e.entries.push_back(MapEntry{k, json_expression(v, file)});
      return e;
    }
    default: throw ConfigError(span, "null values are not supported");
  }
}

Block json_block(const std::string& kind, std::vector<std::string> labels, const ojson& body,
                 const std::string& file, bool objects_are_blocks) {
  auto span = json_span(file);
  if (!body.is_object())
    throw ConfigError(span, "body of '" + kind + "' block must be a JSON object");
  Block b;
  b.kind = kind;
  b.labels = std::move(labels);
  b.span = span;
  for (const auto& l : b.labels)
    if (!is_identifier(l)) throw ConfigError(span, "invalid label \"" + l + "\"");
  for (const auto& [k, v] : body.items()) {
    if (!is_identifier(k)) throw ConfigError(span, "invalid attribute name \"" + k + "\"");
    if (objects_are_blocks && v.is_object())
      b.nested.push_back(json_block(k, {}, v, file, false));
    else
      b.body.push_back(Attribute{k, json_expression(v, file), span});
  }
  return b;
}

SourceSpan offset_span(std::string_view doc, std::size_t offset, const std::string& file) {
  SourceSpan s{file, 1, 1};
  for (std::size_t i = 0; i < offset && i < doc.size(); ++i) {
    if (doc[i] == '\n') {
      ++s.line;
      s.column = 1;
    } else {
      ++s.column;
    }
  }
  return s;
}

}  // namespace

std::vector<Block> load_json(std::string_view document, const std::string& file) {
  ojson root;
  try {
    root = ojson::parse(document);
  } catch (const ojson::parse_error& e) {
    throw ConfigError(offset_span(document, e.byte > 0 ? e.byte - 1 : 0, file), "malformed JSON");
  }
  auto span = json_span(file);
  if (!root.is_object()) throw ConfigError(span, "top level of a .tf.json file must be an object");
  std::vector<Block> blocks;
  for (const auto& [kind, value] : root.items()) {
    if (std::find(std::begin(kBlockKinds), std::end(kBlockKinds), kind) == std::end(kBlockKinds))
      throw ConfigError(span, "unknown block kind '" + kind + "'");
    if (!value.is_object()) throw ConfigError(span, "'" + kind + "' must map to a JSON object");
    if (kind == "terraform") {
      blocks.push_back(json_block(kind, {}, value, file, true));
    } else if (kind == "resource" || kind == "data") {
      for (const auto& [type, names] : value.items()) {
        if (!names.is_object())
          throw ConfigError(span, "'" + kind + "." + type + "' must map names to bodies");
        for (const auto& [name, body] : names.items()) {
          if (!body.is_object())
            throw ConfigError(span, "'" + kind + "." + type + "." + name + "' must be a body object");
          blocks.push_back(json_block(kind, {type, name}, body, file, false));
        }
      }
    } else {
      for (const auto& [label, body] : value.items()) {
        if (!body.is_object())
          throw ConfigError(span, "'" + kind + "." + label + "' must be a body object");
        blocks.push_back(json_block(kind, {label}, body, file, false));
      }
    }
  }
  return blocks;
}

namespace {

ojson expression_json(const Expression& e) {
  switch (e.kind) {
    case Expression::Kind::Literal: {
      const Value& v = e.literal;
      if (v.is_string()) return escape_interpolation(v.as_string());
      if (v.is_bool()) return v.as_bool();
      if (v.is_int()) return v.as_int();
      if (v.is_float()) return v.as_float();
      throw Error("literal cannot be translated");
    }
    case Expression::Kind::Reference: return "${" + join_path(e.path) + "}";
    case Expression::Kind::Template: return template_text(e.parts, false);
    case Expression::Kind::List: {
      auto j = ojson::array();
      for (const auto& i : e.items) j.push_back(expression_json(i));
      return j;
    }
    case Expression::Kind::Map: {
      auto j = ojson::object();
      for (const auto& en : e.entries) j[en.key] = expression_json(en.value);
      return j;
    }
  }
  return {};
}

ojson body_json(const Block& b) {
  auto j = ojson::object();
  for (const auto& a : b.body) j[a.name] = expression_json(a.expr);
  for (const auto& n : b.nested) {
    if (!n.labels.empty())
      throw ConfigError(n.span, "labelled nested blocks have no JSON form");
    j[n.kind] = body_json(n);
  }
  return j;
}

}  // namespace

std::vector<Block> canonical_block_order(const std::vector<Block>& blocks) {
  // kind → first index, (kind,type) → first index; stable grouping
  std::vector<std::string> kinds;
  std::vector<std::pair<std::string, std::string>> types;
  for (const auto& b : blocks) {
    if (std::find(kinds.begin(), kinds.end(), b.kind) == kinds.end()) kinds.push_back(b.kind);
    std::pair<std::string, std::string> kt{b.kind, b.labels.size() == 2 ? b.labels[0] : std::string()};
    if (std::find(types.begin(), types.end(), kt) == types.end()) types.push_back(kt);
  }
  std::vector<Block> out;
  for (const auto& kind : kinds) {
    if (kind == "terraform") {
      // All terraform blocks collapse into one JSON object.
      Block merged;
      merged.kind = kind;
      for (const auto& b : blocks) {
        if (b.kind != kind) continue;
        for (const auto& a : b.body) merged.body.push_back(a);
        for (const auto& n : b.nested) merged.nested.push_back(n);
      }
      out.push_back(std::move(merged));
      continue;
    }
    for (const auto& [k, type] : types) {
      if (k != kind) continue;
      for (const auto& b : blocks)
        if (b.kind == kind && (b.labels.size() == 2 ? b.labels[0] : std::string()) == type) out.push_back(b);
    }
  }
  return out;
}

std::string translate_to_json(const std::vector<Block>& blocks) {
  auto root = ojson::object();
  for (const auto& b : canonical_block_order(blocks)) {
    if (b.kind == "terraform") {
      root["terraform"] = body_json(b);
    } else if (b.labels.size() == 2) {
      if (b.nested.size()) throw ConfigError(b.span, "nested blocks in '" + b.kind + "' have no JSON form");
      root[b.kind][b.labels[0]][b.labels[1]] = body_json(b);
    } else {
      if (b.nested.size()) throw ConfigError(b.span, "nested blocks in '" + b.kind + "' have no JSON form");
      root[b.kind][b.labels.at(0)] = body_json(b);
    }
  }
  return root.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Document

std::vector<const Block*> ConfigDocument::resources() const {
  std::vector<const Block*> out;
  for (const auto& b : blocks)
    if (b.kind == "resource" || b.kind == "data") out.push_back(&b);
  return out;
}

const Block* ConfigDocument::provider(std::string_view name) const {
  for (const auto& b : blocks)
    if (b.kind == "provider" && b.labels.at(0) == name) return &b;
  return nullptr;
}

std::vector<std::string> ConfigDocument::provider_names() const {
  std::vector<std::string> out;
  for (const auto& b : blocks)
    if (b.kind == "provider") out.push_back(b.labels.at(0));
  return out;
}

std::string block_address(const Block& b) {
  if (b.kind == "data") return "data." + b.labels.at(0) + "." + b.labels.at(1);
  return b.labels.at(0) + "." + b.labels.at(1);
}

std::string provider_for_type(std::string_view type) {
  auto us = type.find('_');
  return std::string(type.substr(0, us));
}

void collect_references(const Expression& e, std::vector<Reference>& out) {
  switch (e.kind) {
    case Expression::Kind::Literal: return;
    case Expression::Kind::Reference: out.push_back(Reference{e.path, e.span}); return;
    case Expression::Kind::Template:
      for (const auto& p : e.parts)
        if (p.is_reference) out.push_back(Reference{p.path, e.span});
      return;
    case Expression::Kind::List:
      for (const auto& i : e.items) collect_references(i, out);
      return;
    case Expression::Kind::Map:
      for (const auto& en : e.entries) collect_references(en.value, out);
      return;
  }
}

std::vector<Reference> block_references(const Block& block) {
  std::vector<Reference> out;
  for (const auto& a : block.body) collect_references(a.expr, out);
  for (const auto& n : block.nested) {
    auto inner = block_references(n);
    out.insert(out.end(), inner.begin(), inner.end());
  }
  return out;
}

std::optional<std::string> referenced_address(const std::vector<std::string>& path) {
  if (path.size() < 2 || path[0] == "var") return std::nullopt;
  if (path[0] == "data") return path.size() >= 3 ? std::optional(join_path({path[0], path[1], path[2]})) : std::nullopt;
  return path[0] + "." + path[1];
}

Value parse_var_value(std::string_view text) {
  if (text == "true") return Value(true);
  if (text == "false") return Value(false);
  std::string s(text);
  if (!s.empty()) {
    std::int64_t i = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), i);
    if (ec == std::errc() && p == s.data() + s.size()) return Value(i);
    if (s.find_first_of(".eE") != std::string::npos && s.find_first_not_of("0123456789.eE+-") == std::string::npos) {
      double d = 0;
      auto [q, ec2] = std::from_chars(s.data(), s.data() + s.size(), d);
      if (ec2 == std::errc() && q == s.data() + s.size()) return Value(d);
    }
  }
  return Value(s);
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error("cannot read " + p.string());
  return ss.str();
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void merge_attributes(Block& into, const Block& from) {
  for (const auto& a : from.body) {
    auto it = std::find_if(into.body.begin(), into.body.end(), [&](const Attribute& x) { return x.name == a.name; });
    if (it != into.body.end())
      *it = a;
    else
      into.body.push_back(a);
  }
  for (const auto& n : from.nested) into.nested.push_back(n);
}

}  // namespace

ConfigDocument load_directory(const fs::path& root, const std::map<std::string, Value>& var_overrides) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw Error("configuration directory not found: " + root.string());

  std::vector<std::pair<std::string, fs::path>> files;
  for (auto it = fs::recursive_directory_iterator(root, ec); it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) throw Error("cannot traverse " + root.string() + ": " + ec.message());
    if (!it->is_regular_file()) continue;
    auto name = it->path().filename().string();
    if (ends_with(name, ".tf") || ends_with(name, ".tf.json"))
      files.emplace_back(fs::relative(it->path(), root).generic_string(), it->path());
  }
  if (ec) throw Error("cannot traverse " + root.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());

  ConfigDocument doc;
  std::map<std::string, SourceSpan> seen;
  for (const auto& [rel, full] : files) {
    std::string content = read_file(full);
    doc.source_files.push_back(SourceFile{rel, sha256_hex(content)});
    auto blocks = ends_with(rel, ".tf.json") ? load_json(content, rel) : parse_source(content, rel);
    for (auto& b : blocks) {
      if (b.kind == "provider" || b.kind == "terraform") {
        auto it = std::find_if(doc.blocks.begin(), doc.blocks.end(),
                               [&](const Block& x) { return x.kind == b.kind && x.labels == b.labels; });
        if (it != doc.blocks.end()) {
          merge_attributes(*it, b);
          continue;
        }
      } else {
        std::string key = b.kind == "resource" || b.kind == "data" ? block_address(b) : b.kind + "." + b.labels.at(0);
        auto [pos, fresh] = seen.emplace(key, b.span);
        if (!fresh)
          throw ConfigError(b.span, "duplicate " + b.kind + " '" + key + "' (first declared at " +
                                        pos->second.to_string() + ")");
      }
      doc.blocks.push_back(std::move(b));
    }
  }

  // Variables: defaults, then overrides.
  for (const auto& b : doc.blocks) {
    if (b.kind != "variable") continue;
    const auto& name = b.labels.at(0);
    if (const Attribute* def = b.find("default")) {
      if (def->expr.kind != Expression::Kind::Literal)
        throw ConfigError(def->span, "variable default must be a string, number or bool literal");
      doc.variables[name] = def->expr.literal;
    }
  }
  for (const auto& [name, value] : var_overrides) {
    if (!seen.contains("variable." + name)) throw Error("value given for undeclared variable '" + name + "'");
    if (value.is_list() || value.is_map() || value.is_unknown())
      throw Error("variable '" + name + "' must be a string, number or bool");
    doc.variables[name] = value;
  }

  auto providers = doc.provider_names();
  for (const auto& b : doc.blocks) {
    if (b.kind == "resource" || b.kind == "data") {
      auto p = provider_for_type(b.labels.at(0));
      if (std::find(providers.begin(), providers.end(), p) == providers.end())
        throw ConfigError(b.span, "resource type '" + b.labels.at(0) + "' needs a provider \"" + p +
                                      "\" block");
    }
    for (const auto& ref : block_references(b)) {
      if (ref.path[0] != "var") continue;
      const auto& name = ref.path[1];
      if (!seen.contains("variable." + name))
        throw ConfigError(ref.span, "reference to undeclared variable '" + name + "'");
      if (!doc.variables.contains(name))
        throw ConfigError(ref.span, "variable '" + name + "' has no default and no value was given");
    }
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

std::string stringify(const Value& v, const SourceSpan& span) {
  if (v.is_string()) return v.as_string();
  if (v.is_int()) return std::to_string(v.as_int());
  if (v.is_float()) return format_float(v.as_float());
  if (v.is_bool()) return v.as_bool() ? "true" : "false";
  throw ConfigError(span, "cannot interpolate a " + v.kind_name() + " value into a string");
}

Value lookup(const std::vector<std::string>& path, const SourceSpan& span, const EvalContext& ctx) {
  if (path[0] == "var") {
    auto it = ctx.variables.find(path[1]);
    if (it == ctx.variables.end()) throw ConfigError(span, "undefined variable '" + path[1] + "'");
    return it->second;
  }
  auto addr = *referenced_address(path);
  auto it = ctx.objects.find(addr);
  if (it == ctx.objects.end()) throw ConfigError(span, "reference to undeclared resource '" + addr + "'");
  std::size_t first_attr = path[0] == "data" ? 3 : 2;
  if (path.size() == first_attr) return Value(it->second);
  const AttributeMap* m = &it->second;
  Value cur;
  for (std::size_t i = first_attr; i < path.size(); ++i) {
    if (m == nullptr) {
      if (cur.is_unknown()) return cur;
      throw ConfigError(span, "'" + join_path(path) + "': cannot index a " + cur.kind_name() + " value");
    }
    auto at = m->find(path[i]);
    if (at == m->end())
      throw ConfigError(span, "'" + addr + "' has no attribute '" + join_path({path.begin() + static_cast<long>(first_attr), path.begin() + static_cast<long>(i) + 1}) + "'");
    cur = at->second;
    m = cur.is_map() ? &cur.as_map() : nullptr;
  }
  return cur;
}

}  // namespace

Value evaluate(const Expression& e, const EvalContext& ctx) {
  switch (e.kind) {
    case Expression::Kind::Literal: return e.literal;
    case Expression::Kind::Reference: {
      Value v = lookup(e.path, e.span, ctx);
      if (v.contains_unknown()) return Value(Unknown{join_path(e.path)});
      return v;
    }
    case Expression::Kind::Template: {
      std::vector<TemplatePart> residual;
      bool unknown = false;
      for (const auto& p : e.parts) {
        if (!p.is_reference) {
          if (!residual.empty() && !residual.back().is_reference)
            residual.back().text += p.text;
          else
            residual.push_back(p);
          continue;
        }
        Value v = lookup(p.path, e.span, ctx);
        if (v.contains_unknown()) {
          unknown = true;
          residual.push_back(p);
          continue;
        }
        auto s = stringify(v, e.span);
        if (!residual.empty() && !residual.back().is_reference)
          residual.back().text += s;
        else
          residual.push_back(TemplatePart{false, s, {}});
      }
      if (!unknown) return Value(residual.empty() ? std::string() : residual.front().text);
      if (residual.size() == 1) return Value(Unknown{join_path(residual.front().path)});
      return Value(Unknown{"\"" + template_text(residual) + "\""});
    }
    case Expression::Kind::List: {
      Value::List l;
      for (const auto& i : e.items) l.push_back(evaluate(i, ctx));
      return Value(std::move(l));
    }
    case Expression::Kind::Map: {
      Value::Map m;
      for (const auto& en : e.entries) m[en.key] = evaluate(en.value, ctx);
      return Value(std::move(m));
    }
  }
  return {};
}

}  // namespace microform
