#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "../support/fixtures.hpp"
#include "microform/config.hpp"

using namespace microform;
using namespace microform::testing;

namespace {

std::vector<std::pair<TokenKind, std::string>> kinds(const std::vector<Token>& toks) {
  std::vector<std::pair<TokenKind, std::string>> out;
  for (const auto& t : toks) out.emplace_back(t.kind, t.text);
  return out;
}

std::vector<fs::path> corpus_files() {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(fixture_path("corpus"))) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

template <class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Tokenize, ResourceHeader) {
  auto toks = tokenize(R"(resource "memcloud_vpc" "main" {})", "t.tf");
  std::vector<std::pair<TokenKind, std::string>> want = {{TokenKind::Ident, "resource"},
                                                         {TokenKind::String, "memcloud_vpc"},
                                                         {TokenKind::String, "main"},
                                                         {TokenKind::LBrace, "{"},
                                                         {TokenKind::RBrace, "}"}};
  EXPECT_EQ(kinds(toks), want);
}

TEST(Tokenize, EmptyInput) { EXPECT_TRUE(tokenize("", "t.tf").empty()); }

TEST(Tokenize, CommentDiscarded) {
  auto toks = tokenize(R"(cidr = "10.0.0.0/16" # net)", "t.tf");
  std::vector<std::pair<TokenKind, std::string>> want = {
      {TokenKind::Ident, "cidr"}, {TokenKind::Equals, "="}, {TokenKind::String, "10.0.0.0/16"}};
  EXPECT_EQ(kinds(toks), want);
}

TEST(Tokenize, SpansAreOneBased) {
  auto toks = tokenize("a = 1\n  b = \"x\"", "f.tf");
  ASSERT_EQ(toks.size(), 6u);
  EXPECT_EQ(toks[0].span, (SourceSpan{"f.tf", 1, 1}));
  EXPECT_EQ(toks[3].span, (SourceSpan{"f.tf", 2, 3}));
  EXPECT_EQ(toks[5].span, (SourceSpan{"f.tf", 2, 7}));
}

TEST(Tokenize, UnterminatedStringReportsPosition) {
  try {
    tokenize("a = 1\nb = \"open", "bad.tf");
    FAIL() << "expected an error";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.span().file, "bad.tf");
    EXPECT_EQ(e.span().line, 2);
    EXPECT_EQ(e.span().column, 5);
  }
}

TEST(Tokenize, IllegalCharacterReportsPosition) {
  try {
    tokenize("a = @", "bad.tf");
    FAIL() << "expected an error";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.span().line, 1);
    EXPECT_EQ(e.span().column, 5);
  }
}

TEST(Parse, ProviderBlock) {
  auto blocks = parse_source(R"(provider "memcloud" { endpoint = "http://localhost:8790" })", "t.tf");
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_EQ(blocks[0].kind, "provider");
  EXPECT_EQ(blocks[0].labels, std::vector<std::string>{"memcloud"});
  ASSERT_EQ(blocks[0].body.size(), 1u);
  EXPECT_EQ(blocks[0].body[0].name, "endpoint");
  EXPECT_EQ(blocks[0].body[0].expr, Expression::make_literal(Value("http://localhost:8790")));
}

TEST(Parse, ReferenceAttribute) {
  auto blocks = parse_source(R"(resource "memcloud_subnet" "a" { vpc_id = memcloud_vpc.main.id })", "t.tf");
  ASSERT_EQ(blocks.size(), 1u);
  const auto* attr = blocks[0].find("vpc_id");
  ASSERT_NE(attr, nullptr);
  EXPECT_EQ(attr->expr, Expression::make_reference({"memcloud_vpc", "main", "id"}));
}

TEST(Parse, VariableBlock) {
  auto blocks = parse_source(R"(variable "region" { default = "us-west" })", "t.tf");
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_EQ(blocks[0].kind, "variable");
  EXPECT_EQ(blocks[0].labels, std::vector<std::string>{"region"});
}

TEST(Parse, NestedBlocksAndOrderPreserved) {
  auto blocks = parse_source("terraform {\n  required_providers {\n    memcloud = { source = \"x\" }\n  }\n}\n"
                             "resource \"a_b\" \"c\" {\n  z = 1\n  a = 2\n}\n",
                             "t.tf");
  ASSERT_EQ(blocks.size(), 2u);
  ASSERT_EQ(blocks[0].nested.size(), 1u);
  EXPECT_EQ(blocks[0].nested[0].kind, "required_providers");
  EXPECT_EQ(blocks[1].body[0].name, "z");
  EXPECT_EQ(blocks[1].body[1].name, "a");
}

TEST(Parse, LiteralKinds) {
  auto blocks = parse_source("variable \"v\" {\n  a = 42\n  b = -7\n  c = 2.5\n  d = true\n  e = [1, \"x\"]\n  f = { k = false }\n}",
                             "t.tf");
  const auto& b = blocks.at(0);
  EXPECT_EQ(b.find("a")->expr.literal, Value(std::int64_t{42}));
  EXPECT_EQ(b.find("b")->expr.literal, Value(std::int64_t{-7}));
  EXPECT_EQ(b.find("c")->expr.literal, Value(2.5));
  EXPECT_EQ(b.find("d")->expr.literal, Value(true));
  EXPECT_EQ(b.find("e")->expr.kind, Expression::Kind::List);
  EXPECT_EQ(b.find("f")->expr.kind, Expression::Kind::Map);
}

TEST(Parse, Errors) {
  EXPECT_THROW(parse_source(R"(resource "only_one" {})", "t.tf"), ConfigError);
  EXPECT_THROW(parse_source(R"(terraform "x" {})", "t.tf"), ConfigError);
  EXPECT_THROW(parse_source(R"(widget "x" {})", "t.tf"), ConfigError);
  EXPECT_THROW(parse_source(R"(resource "a_b" "c" { x = 1 x = 2 })", "t.tf"), ConfigError);
  EXPECT_THROW(parse_source(R"(resource "a_b" "9bad" {})", "t.tf"), ConfigError);
  EXPECT_THROW(parse_source(R"(resource "a_b" "c" { x = "${open" })", "t.tf"), ConfigError);
  EXPECT_THROW(parse_source(R"(resource "a_b" "c" { x = })", "t.tf"), ConfigError);
  EXPECT_THROW(parse_source(R"(resource "a_b" "c" { x = y })", "t.tf"), ConfigError);
}

TEST(Parse, TemplateWithoutReferenceIsLiteral) {
  auto blocks = parse_source(R"(variable "v" { default = "plain $${x}" })", "t.tf");
  const auto& e = blocks[0].find("default")->expr;
  EXPECT_EQ(e.kind, Expression::Kind::Literal);
  EXPECT_EQ(e.literal, Value("plain ${x}"));
}

TEST(Parse, EveryErrorSpanPointsInsideFile) {
  const std::vector<std::string> bad = {
      "resource \"a_b\" {}",      "resource \"a_b\" \"c\" {\n  x = \n}", "a = \"unterminated",
      "provider \"p\" { x = [1, }", "\n\n  }",                          "resource \"a_b\" \"c\" { x = 1\n",
      "output { }",               "variable \"v\" { default = {a = 1 a = 2} }"};
  for (const auto& src : bad) {
    int lines = static_cast<int>(std::count(src.begin(), src.end(), '\n')) + 1;
    try {
      parse_source(src, "in.tf");
      ADD_FAILURE() << "no error for: " << src;
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.span().file, "in.tf") << src;
      EXPECT_GE(e.span().line, 1) << src;
      EXPECT_LE(e.span().line, lines) << src;
      EXPECT_GE(e.span().column, 1) << src;
    }
  }
}

TEST(LoadJson, ResourceMatchesNative) {
  auto json = load_json(R"({"resource":{"memcloud_vpc":{"main":{"cidr":"10.0.0.0/16"}}}})");
  auto native = parse_source(R"(resource "memcloud_vpc" "main" { cidr = "10.0.0.0/16" })", "t.tf");
  EXPECT_EQ(json, native);
}

TEST(LoadJson, EmptyProvider) {
  auto blocks = load_json(R"({"provider":{"localfs":{}}})");
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_EQ(blocks[0].kind, "provider");
  EXPECT_EQ(blocks[0].labels, std::vector<std::string>{"localfs"});
  EXPECT_TRUE(blocks[0].body.empty());
}

TEST(LoadJson, UnknownKind) {
  auto msg = error_of([] { load_json(R"({"widget":{}})"); });
  EXPECT_NE(msg.find("unknown block kind"), std::string::npos) << msg;
}

TEST(LoadJson, MalformedAndWrongDepth) {
  EXPECT_THROW(load_json("{\"resource\": "), ConfigError);
  EXPECT_THROW(load_json(R"({"resource":{"memcloud_vpc":"x"}})"), ConfigError);
  EXPECT_THROW(load_json(R"({"provider":"x"})"), ConfigError);
  EXPECT_THROW(load_json(R"([1])"), ConfigError);
}

TEST(LoadJson, ReferencesAndTemplates) {
  auto json = load_json(R"({"resource":{"a_b":{"c":{"x":"${a_b.d.id}","y":"p-${var.v}-q"}}}})");
  auto native = parse_source(R"(resource "a_b" "c" {
  x = a_b.d.id
  y = "p-${var.v}-q"
})",
                             "t.tf");
  EXPECT_EQ(json, native);
}

TEST(LoadJson, HandWrittenFig3MatchesNative) {
  auto json = load_json(read_file(fixture_path("json/fig3.tf.json")));
  auto native = parse_source(read_file(fixture_path("corpus/fig3.tf")), "fig3.tf");
  EXPECT_EQ(json, canonical_block_order(native));
}

TEST(Corpus, RoundTripThroughFormatter) {
  for (const auto& f : corpus_files()) {
    auto blocks = parse_source(read_file(f), f.filename().string());
    auto printed = format_blocks(blocks);
    EXPECT_EQ(parse_source(printed, "printed.tf"), blocks) << f;
    EXPECT_EQ(format_blocks(parse_source(printed, "printed.tf")), printed) << f;
  }
}

TEST(Corpus, NativeJsonEquivalence) {
  for (const auto& f : corpus_files()) {
    auto blocks = parse_source(read_file(f), f.filename().string());
    auto json = translate_to_json(blocks);
    EXPECT_EQ(load_json(json), canonical_block_order(blocks)) << f << "\n" << json;
  }
}

TEST(LoadDirectory, TraversesSubdirectories) {
  TempDir dir;
  write_file(dir / "a.tf", "provider \"memcloud\" { endpoint = \"x\" }\nresource \"memcloud_vpc\" \"main\" { cidr = \"10.0.0.0/16\" }\n");
  write_file(dir / "sub/b.tf.json",
             R"({"resource":{"memcloud_subnet":{"s":{"vpc_id":"${memcloud_vpc.main.id}","cidr":"10.0.1.0/24"}}}})");
  write_file(dir / "sub/ignored.json", "{}");
  write_file(dir / "notes.tf.bak", "garbage");
  auto doc = load_directory(dir.path());
  EXPECT_EQ(doc.resources().size(), 2u);
  ASSERT_EQ(doc.source_files.size(), 2u);
  EXPECT_EQ(doc.source_files[0].path, "a.tf");
  EXPECT_EQ(doc.source_files[1].path, "sub/b.tf.json");
  EXPECT_EQ(doc.source_files[0].sha256.size(), 64u);
}

TEST(LoadDirectory, EmptyDirectory) {
  TempDir dir;
  auto doc = load_directory(dir.path());
  EXPECT_TRUE(doc.blocks.empty());
}

TEST(LoadDirectory, DuplicateAddressNamesBothFiles) {
  TempDir dir;
  write_file(dir / "a.tf", "provider \"memcloud\" { endpoint = \"x\" }\nresource \"memcloud_vpc\" \"main\" { cidr = \"1\" }\n");
  write_file(dir / "b.tf", "resource \"memcloud_vpc\" \"main\" { cidr = \"2\" }\n");
  auto msg = error_of([&] { load_directory(dir.path()); });
  EXPECT_NE(msg.find("a.tf"), std::string::npos) << msg;
  EXPECT_NE(msg.find("b.tf"), std::string::npos) << msg;
}

TEST(LoadDirectory, VariablesDefaultsAndOverrides) {
  TempDir dir;
  write_file(dir / "main.tf", "variable \"region\" { default = \"us-west\" }\nvariable \"n\" { default = 1 }\n");
  auto doc = load_directory(dir.path(), {{"n", Value(std::int64_t{5})}});
  EXPECT_EQ(doc.variables.at("region"), Value("us-west"));
  EXPECT_EQ(doc.variables.at("n"), Value(std::int64_t{5}));
  EXPECT_THROW(load_directory(dir.path(), {{"missing", Value("x")}}), Error);
}

TEST(LoadDirectory, UndefinedVariableReference) {
  TempDir dir;
  write_file(dir / "main.tf",
             "variable \"r\" {}\nprovider \"memcloud\" { endpoint = \"x\" }\nresource \"memcloud_vpc\" \"v\" { cidr = var.r }\n");
  EXPECT_THROW(load_directory(dir.path()), ConfigError);
  auto doc = load_directory(dir.path(), {{"r", Value("10.0.0.0/8")}});
  EXPECT_EQ(doc.variables.at("r"), Value("10.0.0.0/8"));

  write_file(dir / "main.tf", "provider \"memcloud\" { endpoint = \"x\" }\nresource \"memcloud_vpc\" \"v\" { cidr = var.nope }\n");
  EXPECT_THROW(load_directory(dir.path()), ConfigError);
}

TEST(LoadDirectory, ProviderPrefixMustBeDeclared) {
  TempDir dir;
  write_file(dir / "main.tf", "resource \"memcloud_vpc\" \"v\" { cidr = \"x\" }\n");
  EXPECT_THROW(load_directory(dir.path()), ConfigError);
}

TEST(LoadDirectory, LaterProviderBlockOverridesAttributeWise) {
  TempDir dir;
  write_file(dir / "a.tf", "provider \"localfs\" {\n  root = \"one\"\n}\n");
  write_file(dir / "b.tf", "provider \"localfs\" {\n  root = \"two\"\n}\n");
  auto doc = load_directory(dir.path());
  const Block* p = doc.provider("localfs");
  ASSERT_NE(p, nullptr);
  EXPECT_EQ(p->find("root")->expr.literal, Value("two"));
  EXPECT_EQ(doc.provider_names(), std::vector<std::string>{"localfs"});
}

TEST(LoadDirectory, DeterministicAcrossCreationOrder) {
  std::vector<std::pair<std::string, std::string>> files = {
      {"z.tf", "provider \"memcloud\" { endpoint = \"x\" }\n"},
      {"a.tf", "resource \"memcloud_vpc\" \"a\" { cidr = \"1\" }\n"},
      {"m/b.tf", "resource \"memcloud_vpc\" \"b\" { cidr = \"2\" }\n"},
      {"m/a.tf.json", R"({"resource":{"memcloud_vpc":{"c":{"cidr":"3"}}}})"},
      {"k.tf", "variable \"v\" { default = 1 }\n"},
  };
  std::optional<ConfigDocument> first;
  std::mt19937_64 rng(7);
  for (int round = 0; round < 8; ++round) {
    std::shuffle(files.begin(), files.end(), rng);
    TempDir dir;
    for (const auto& [name, text] : files) write_file(dir / name, text);
    auto doc = load_directory(dir.path());
    if (!first)
      first = doc;
    else
      EXPECT_EQ(doc, *first) << "round " << round;
  }
}

TEST(Evaluate, Literal) {
  EXPECT_EQ(evaluate(Expression::make_literal(Value("10.0.0.0/16")), {}), Value("10.0.0.0/16"));
}

TEST(Evaluate, UnknownPropagates) {
  EvalContext ctx;
  ctx.objects["memcloud_vpc.main"]["id"] = Value(Unknown{});
  auto v = evaluate(Expression::make_reference({"memcloud_vpc", "main", "id"}), ctx);
  EXPECT_TRUE(v.is_unknown());

  auto tmpl = parse_expression("\"x-${memcloud_vpc.main.id}\"");
  EXPECT_TRUE(evaluate(tmpl, ctx).is_unknown());

  auto list = parse_expression("[memcloud_vpc.main.id, \"k\"]");
  auto lv = evaluate(list, ctx);
  ASSERT_TRUE(lv.is_list());
  EXPECT_TRUE(lv.as_list()[0].is_unknown());
  EXPECT_EQ(lv.as_list()[1], Value("k"));
}

TEST(Evaluate, Errors) {
  EvalContext ctx;
  ctx.objects["memcloud_vpc.main"]["id"] = Value("vpc-1");
  EXPECT_THROW(evaluate(parse_expression("memcloud_vpc.other.id"), ctx), ConfigError);
  EXPECT_THROW(evaluate(parse_expression("memcloud_vpc.main.nope"), ctx), ConfigError);
  EXPECT_THROW(evaluate(parse_expression("var.missing"), ctx), ConfigError);
}

// Oracle: textual substitution of every `${var.X}` in the raw template,
// independent of the tokenizer and evaluator.
TEST(Evaluate, TemplateMatchesSubstitutionOracle) {
  const std::vector<std::string> names = {"a", "b", "c"};
  const std::vector<std::string> values = {"x", "", "us-west"};
  const std::vector<std::string> segments = {"lb-", "${var.a}", "${var.b}", "${var.c}", "/"};
  std::vector<std::string> templates;
  for (const auto& s1 : segments)
    for (const auto& s2 : segments)
      for (const auto& s3 : segments) templates.push_back(s1 + s2 + s3);
  int checked = 0;
  for (int combo = 0; combo < 27; ++combo) {
    std::map<std::string, std::string> env;
    for (int k = 0, c = combo; k < 3; ++k, c /= 3) env[names[k]] = values[c % 3];
    EvalContext ctx;
    for (const auto& [n, v] : env) ctx.variables[n] = Value(v);
    for (const auto& t : templates) {
      std::string expected = t;
      for (const auto& [n, v] : env) {
        std::string marker = "${var." + n + "}";
        for (auto pos = expected.find(marker); pos != std::string::npos; pos = expected.find(marker, pos + v.size()))
          expected.replace(pos, marker.size(), v);
      }
      auto got = evaluate(parse_expression("\"" + t + "\""), ctx);
      ASSERT_TRUE(got.is_string()) << t;
      EXPECT_EQ(got.as_string(), expected) << t;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 27 * 125);
}

TEST(Evaluate, TemplateStringifiesScalars) {
  EvalContext ctx;
  ctx.variables["n"] = Value(std::int64_t{3});
  ctx.variables["on"] = Value(true);
  EXPECT_EQ(evaluate(parse_expression("\"n=${var.n} on=${var.on}\""), ctx), Value("n=3 on=true"));
}

TEST(ParseVarValue, TypedWhenUnambiguous) {
  EXPECT_EQ(parse_var_value("true"), Value(true));
  EXPECT_EQ(parse_var_value("12"), Value(std::int64_t{12}));
  EXPECT_EQ(parse_var_value("1.5"), Value(1.5));
  EXPECT_EQ(parse_var_value("us-west"), Value("us-west"));
  EXPECT_EQ(parse_var_value("12abc"), Value("12abc"));
}
