#pragma once

// Configuration language: lexer, parser, JSON form, directory loader and
// expression evaluation.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "microform/value.hpp"

namespace microform {

struct SourceSpan {
  std::string file;
  int line = 1;
  int column = 1;

  std::string to_string() const;
  bool operator==(const SourceSpan&) const = default;
};

/// Error located in a configuration file.
class ConfigError : public Error {
 public:
  ConfigError(SourceSpan span, const std::string& message);
  const SourceSpan& span() const { return span_; }
  const std::string& detail() const { return detail_; }

 private:
  SourceSpan span_;
  std::string detail_;
};

enum class TokenKind { Ident, String, Number, LBrace, RBrace, LBracket, RBracket, Equals, Comma, Dot };

std::string_view token_kind_name(TokenKind kind);

struct Token {
  TokenKind kind;
  /// Identifier or number text; decoded contents for strings (template
  /// markers left in place); the punctuation character otherwise.
  std::string text;
  SourceSpan span;
};

std::vector<Token> tokenize(std::string_view source, const std::string& file);

struct MapEntry;

/// A segment of a `"...${ref}..."` string: literal text or a reference path.
struct TemplatePart {
  bool is_reference = false;
  std::string text;
  std::vector<std::string> path;
  bool operator==(const TemplatePart&) const = default;
};

/// Configuration expression. Equality ignores source spans.
struct Expression {
  enum class Kind { Literal, List, Map, Reference, Template };

  Kind kind = Kind::Literal;
  Value literal;
  std::vector<Expression> items;
  std::vector<MapEntry> entries;
  std::vector<std::string> path;
  std::vector<TemplatePart> parts;
  SourceSpan span;

  static Expression make_literal(Value v, SourceSpan span = {});
  static Expression make_reference(std::vector<std::string> path, SourceSpan span = {});

  bool operator==(const Expression& other) const;
};

struct MapEntry {
  std::string key;
  Expression value;
  bool operator==(const MapEntry&) const = default;
};

struct Attribute {
  std::string name;
  Expression expr;
  SourceSpan span;
  bool operator==(const Attribute& o) const { return name == o.name && expr == o.expr; }
};

/// One `kind "label"... { ... }` block. Equality ignores source spans.
struct Block {
  std::string kind;
  std::vector<std::string> labels;
  std::vector<Attribute> body;
  std::vector<Block> nested;
  SourceSpan span;

  const Attribute* find(std::string_view name) const;
  bool operator==(const Block& o) const {
    return kind == o.kind && labels == o.labels && body == o.body && nested == o.nested;
  }
};

/// Top-level block kinds the language accepts.
inline constexpr std::string_view kBlockKinds[] = {"terraform", "provider", "variable",
                                                    "resource",  "data",     "output"};

std::vector<Block> parse(const std::vector<Token>& tokens);
std::vector<Block> parse_source(std::string_view source, const std::string& file);

/// Parses a standalone expression in native syntax (used for Unknown origins).
Expression parse_expression(std::string_view text);

/// Canonical native formatter; `parse_source(format_blocks(b))` == b.
std::string format_blocks(const std::vector<Block>& blocks);
std::string format_expression(const Expression& expr);

/// Parses the `.tf.json` form.
std::vector<Block> load_json(std::string_view document, const std::string& file = "<json>");

/// Mechanical native → JSON translation. Blocks are grouped by kind, then
/// type, in order of first appearance; `canonical_block_order` applies the
/// same grouping to a native block list so the two can be compared.
std::string translate_to_json(const std::vector<Block>& blocks);
std::vector<Block> canonical_block_order(const std::vector<Block>& blocks);

struct SourceFile {
  std::string path;
  std::string sha256;
  bool operator==(const SourceFile&) const = default;
};

struct ConfigDocument {
  std::vector<Block> blocks;
  std::vector<SourceFile> source_files;
  /// Resolved variable values (defaults, then overrides).
  std::map<std::string, Value> variables;

  /// Resource and data blocks in document order.
  std::vector<const Block*> resources() const;
  const Block* provider(std::string_view name) const;
  std::vector<std::string> provider_names() const;

  bool operator==(const ConfigDocument&) const = default;
};

/// Canonical address of a resource/data block: `type.name` or `data.type.name`.
std::string block_address(const Block& block);

/// Provider name implied by a resource type (text before the first '_').
std::string provider_for_type(std::string_view type);

ConfigDocument load_directory(const std::filesystem::path& root,
                              const std::map<std::string, Value>& var_overrides = {});

/// Parses a `-var` value: bool or number when unambiguous, else string.
Value parse_var_value(std::string_view text);

struct Reference {
  std::vector<std::string> path;
  SourceSpan span;
};

void collect_references(const Expression& expr, std::vector<Reference>& out);
std::vector<Reference> block_references(const Block& block);

/// Address a reference points at, or nullopt for `var.*`.
std::optional<std::string> referenced_address(const std::vector<std::string>& path);

struct EvalContext {
  std::map<std::string, Value> variables;
  /// Canonical address → attribute map; values may be Unknown.
  std::map<std::string, AttributeMap> objects;
};

Value evaluate(const Expression& expr, const EvalContext& ctx);

}  // namespace microform
