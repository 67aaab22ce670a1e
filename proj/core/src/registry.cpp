#include "idlora/registry.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include "idlora/errors.hpp"

namespace idlora {

namespace {

ArchitectureDescriptor make_llama_like(std::string name, std::size_t layers, std::size_t hidden,
                                       std::size_t kv_dim, std::size_t intermediate) {
  ArchitectureDescriptor arch;
  arch.name = std::move(name);
  arch.layers = layers;
  arch.sites = {
      {"q", hidden, hidden},       {"k", kv_dim, hidden},      {"v", kv_dim, hidden},
      {"o", hidden, hidden},       {"gate", intermediate, hidden},
      {"up", intermediate, hidden}, {"down", hidden, intermediate},
  };
  return arch;
}

}  // namespace

const std::vector<ArchitectureDescriptor>& builtin_architectures() {
  static const std::vector<ArchitectureDescriptor> archs = {
      make_llama_like("llama3-8b", 32, 4096, 1024, 14336),
      make_llama_like("mistral-7b", 32, 4096, 1024, 14336),
      make_llama_like("llama3.2-3b", 28, 3072, 1024, 8192),
  };
  return archs;
}

const ArchitectureDescriptor& find_architecture(std::string_view name) {
  for (const auto& arch : builtin_architectures()) {
    if (arch.name == name) return arch;
  }
  throw ConfigError("unknown architecture '" + std::string(name) + "'");
}

ArchitectureDescriptor parse_architecture(std::istream& in) {
  ArchitectureDescriptor arch;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    std::string eq;
    if (!(ls >> eq) || eq != "=") {
      throw FormatError("architecture line " + std::to_string(line_no) + ": expected 'key = ...'");
    }
    if (key == "name") {
      if (!(ls >> arch.name)) {
        throw FormatError("architecture line " + std::to_string(line_no) + ": missing name");
      }
    } else if (key == "layers") {
      long long layers = 0;
      if (!(ls >> layers) || layers < 1) {
        throw FormatError("architecture line " + std::to_string(line_no) + ": bad layer count");
      }
      arch.layers = static_cast<std::size_t>(layers);
    } else if (key == "site") {
      SiteShape site;
      long long d_out = 0, d_in = 0;
      if (!(ls >> site.name >> d_out >> d_in) || d_out < 1 || d_in < 1) {
        throw FormatError("architecture line " + std::to_string(line_no) +
                          ": expected 'site = <name> <d_out> <d_in>'");
      }
      site.d_out = static_cast<std::size_t>(d_out);
      site.d_in = static_cast<std::size_t>(d_in);
      arch.sites.push_back(std::move(site));
    } else {
      throw FormatError("architecture line " + std::to_string(line_no) + ": unknown key '" +
                        key + "'");
    }
  }
  if (arch.name.empty()) throw FormatError("architecture: missing 'name'");
  if (arch.layers == 0) throw FormatError("architecture: missing 'layers'");
  if (arch.sites.empty()) throw FormatError("architecture: no sites");
  return arch;
}

ArchitectureDescriptor load_architecture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open architecture file '" + path + "'");
  return parse_architecture(in);
}

}  // namespace idlora
