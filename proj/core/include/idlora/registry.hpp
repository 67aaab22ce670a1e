#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace idlora {

// One adapted weight matrix within a transformer block.
struct SiteShape {
  std::string name;
  std::size_t d_out = 0;
  std::size_t d_in = 0;
};

struct ArchitectureDescriptor {
  std::string name;
  std::size_t layers = 0;
  std::vector<SiteShape> sites;  // per layer
};

// Descriptors compiled in: llama3-8b, mistral-7b, llama3.2-3b.
const std::vector<ArchitectureDescriptor>& builtin_architectures();

// Throws ConfigError for unknown names.
const ArchitectureDescriptor& find_architecture(std::string_view name);

// Text format: "name = <id>", "layers = <n>", and one "site = <name> <d_out>
// <d_in>" line per adapted matrix. '#' starts a comment.
ArchitectureDescriptor parse_architecture(std::istream& in);
ArchitectureDescriptor load_architecture(const std::string& path);

}  // namespace idlora
