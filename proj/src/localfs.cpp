#include <fstream>
#include <sstream>

#include "microform/provider.hpp"
#include "microform/util.hpp"

namespace microform {

namespace fs = std::filesystem;

namespace {

using Kind = ProviderError::Kind;

TypeSchema file_schema() {
  return {
      {"path", ValueKind::String, AttrMode::Required, true, std::nullopt},
      {"content", ValueKind::String, AttrMode::Required, false, std::nullopt},
      {"checksum", ValueKind::String, AttrMode::Computed, false, std::nullopt},
      {"id", ValueKind::String, AttrMode::Computed, false, std::nullopt},
  };
}

TypeSchema dir_schema() {
  return {
      {"path", ValueKind::String, AttrMode::Required, true, std::nullopt},
      {"id", ValueKind::String, AttrMode::Computed, false, std::nullopt},
  };
}

TypeSchema file_data_schema() {
  return {
      {"path", ValueKind::String, AttrMode::Required, false, std::nullopt},
      {"content", ValueKind::String, AttrMode::Computed, false, std::nullopt},
      {"checksum", ValueKind::String, AttrMode::Computed, false, std::nullopt},
      {"id", ValueKind::String, AttrMode::Computed, false, std::nullopt},
  };
}

class LocalFsProvider : public Provider {
 public:
  explicit LocalFsProvider(fs::path base) : base_(std::move(base)), root_(base_) {}

  ProviderSchema schema() const override {
    ProviderSchema s;
    s.provider_name = "localfs";
    s.config_attrs = {{"root", ValueKind::String, AttrMode::Optional, false, Value(".")}};
    s.resource_types = {{"localfs_file", file_schema()}, {"localfs_dir", dir_schema()}};
    s.data_types = {{"localfs_file", file_data_schema()}};
    return s;
  }

  void configure(const AttributeMap& config) override {
    auto it = config.find("root");
    fs::path root = (it != config.end() && it->second.is_string()) ? fs::path(it->second.as_string()) : fs::path(".");
    root_ = root.is_absolute() ? root : base_ / root;
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (!fs::is_directory(root_)) throw ProviderError(Kind::Unavailable, "root " + root_.string() + " is not a directory");
  }

  CreateResult create(const std::string& type, const AttributeMap& attrs) override {
    auto rel = relative_path(attrs);
    auto full = root_ / rel;
    std::error_code ec;
    if (type == "localfs_file") {
      const auto& content = string_attr(attrs, "content");
      if (full.has_parent_path()) fs::create_directories(full.parent_path(), ec);
      write_file(full, content);
      return {rel, file_attrs(rel, content)};
    }
    if (type == "localfs_dir") {
      fs::create_directories(full, ec);
      if (ec || !fs::is_directory(full))
        throw ProviderError(Kind::Internal, "cannot create directory " + rel + ": " + ec.message());
      return {rel, AttributeMap{{"path", rel}, {"id", rel}}};
    }
    throw unsupported(type);
  }

  std::optional<AttributeMap> read(const std::string& type, const std::string& id) override {
    auto full = root_ / confine(id);
    if (type == "localfs_file") {
      if (!fs::is_regular_file(full)) return std::nullopt;
      return file_attrs(id, read_file(full));
    }
    if (type == "localfs_dir") {
      if (!fs::is_directory(full)) return std::nullopt;
      return AttributeMap{{"path", id}, {"id", id}};
    }
    throw unsupported(type);
  }

  AttributeMap update(const std::string& type, const std::string& id, const AttributeMap& attrs) override {
    auto rel = relative_path(attrs);
    if (rel != id) throw ProviderError(Kind::Validation, "path: cannot change in place");
    auto full = root_ / rel;
    if (type == "localfs_file") {
      if (!fs::is_regular_file(full)) throw ProviderError(Kind::NotFound, "file " + rel + " does not exist");
      const auto& content = string_attr(attrs, "content");
      write_file(full, content);
      return file_attrs(rel, content);
    }
    if (type == "localfs_dir") {
      if (!fs::is_directory(full)) throw ProviderError(Kind::NotFound, "directory " + rel + " does not exist");
      return AttributeMap{{"path", rel}, {"id", rel}};
    }
    throw unsupported(type);
  }

  void remove(const std::string& type, const std::string& id) override {
    if (type != "localfs_file" && type != "localfs_dir") throw unsupported(type);
    auto full = root_ / confine(id);
    std::error_code ec;
    fs::remove(full, ec);
    if (ec && ec != std::errc::no_such_file_or_directory)
      throw ProviderError(Kind::Conflict, "cannot remove " + id + ": " + ec.message());
  }

  AttributeMap read_data(const std::string& type, const AttributeMap& attrs) override {
    if (type != "localfs_file") throw unsupported(type);
    auto rel = relative_path(attrs);
    auto full = root_ / rel;
    if (!fs::is_regular_file(full)) throw ProviderError(Kind::NotFound, "file " + rel + " does not exist");
    return file_attrs(rel, read_file(full));
  }

 private:
  static ProviderError unsupported(const std::string& type) {
    return ProviderError(Kind::Validation, "localfs does not support '" + type + "'");
  }

  static const std::string& string_attr(const AttributeMap& attrs, const std::string& name) {
    auto it = attrs.find(name);
    if (it == attrs.end() || !it->second.is_string())
      throw ProviderError(Kind::Validation, name + ": required string attribute missing");
    return it->second.as_string();
  }

  /// Normalized root-relative path; rejects anything escaping the root.
  static std::string confine(const std::string& path) {
    fs::path p = fs::path(path).lexically_normal();
    if (path.empty() || p.is_absolute() || p.empty() || *p.begin() == ".." || p == ".")
      throw ProviderError(Kind::Validation, "path: '" + path + "' escapes the provider root");
    return p.generic_string();
  }

  static std::string relative_path(const AttributeMap& attrs) {
    const auto& path = string_attr(attrs, "path");
    auto c = confine(path);
    if (c != path) throw ProviderError(Kind::Validation, "path: '" + path + "' is not normalized (use '" + c + "')");
    return c;
  }

  static AttributeMap file_attrs(const std::string& rel, const std::string& content) {
    return AttributeMap{{"path", rel}, {"content", content}, {"checksum", sha256_hex(content)}, {"id", rel}};
  }

  static std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ProviderError(Kind::Internal, "cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  static void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw ProviderError(Kind::Internal, "cannot write " + p.string());
    out << content;
    if (!out.flush()) throw ProviderError(Kind::Internal, "cannot write " + p.string());
  }

  fs::path base_;
  fs::path root_;
};

}  // namespace

std::unique_ptr<Provider> make_localfs_provider(fs::path base_dir) {
  return std::make_unique<LocalFsProvider>(std::move(base_dir));
}

}  // namespace microform
