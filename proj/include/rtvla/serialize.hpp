#pragma once

// JSON (de)serialization for graphs, with strict schema checking: unknown
// fields are rejected so a typo'd document fails loudly instead of silently
// dropping information. parse -> serialize -> parse is the identity.

#include "rtvla/graph.hpp"

#include <stdexcept>
#include <string>

namespace rtvla {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kSchemaVersion = 1;

std::string serialize_graph(const Graph& g);
Graph parse_graph(const std::string& text);

// Atomic file helpers (write to a temp file in the target directory, then
// rename over the destination).
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace rtvla
