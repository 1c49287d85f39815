#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fpwc/util.hpp"

namespace fpwc::wm {

// Canonical key for vertex names and action phrases: case-folded, internal
// whitespace collapsed, surrounding quotes stripped. Model output varies in
// quoting and casing; exact-match keying would duplicate vertices.
std::string normalize_name(std::string_view raw);

struct VertexSpec {
  std::string name;
  std::string description;
  bool can_self_act = false;
  bool imagined = false;

  std::string key() const { return normalize_name(name); }
};

struct EdgeSpec {
  std::string source;
  std::string action;
  std::string target;
  std::string comment;
  bool imagined = false;

  // Equality used for removal matching: source/action/target only, normalized.
  // Comments and the imagined flag are ignored; model-emitted removals often
  // misquote comments.
  bool same_transition(const EdgeSpec& other) const;
};

struct ParseWarning {
  int line = 0;
  std::string message;
};

struct WorldModelGraph {
  std::vector<VertexSpec> vertices;  // insertion order preserved
  std::vector<EdgeSpec> edges;       // insertion order preserved
  std::vector<ParseWarning> warnings;

  const VertexSpec* find_vertex(std::string_view name) const;
  bool has_vertex(std::string_view name) const;

  // Adds or replaces (by normalized name). Returns true when it replaced.
  bool upsert_vertex(VertexSpec v);

  // Edges whose endpoints name no known vertex. Dangling is legal; model
  // output is imperfect.
  std::vector<EdgeSpec> dangling_edges() const;

  bool structurally_equal(const WorldModelGraph& other) const;
};

struct GraphDiff {
  std::vector<VertexSpec> removed_vertices;
  std::vector<VertexSpec> added_vertices;
  std::vector<EdgeSpec> removed_edges;
  std::vector<EdgeSpec> added_edges;
  std::vector<ParseWarning> warnings;

  bool empty() const {
    return removed_vertices.empty() && added_vertices.empty() &&
           removed_edges.empty() && added_edges.empty();
  }
  GraphDiff inverse() const;
};

struct ApplyReport {
  std::vector<std::string> unmatched_removals;
  std::vector<std::string> replaced_vertices;
  std::vector<std::string> duplicate_edge_adds;
  std::vector<EdgeSpec> dangling_after;

  bool clean() const {
    return unmatched_removals.empty() && replaced_vertices.empty() &&
           duplicate_edge_adds.empty();
  }
};

// "Vertices: / Edges:" block format. Well-formed lines are kept, malformed
// lines become warnings. Throws ParseError only when neither block header can
// be located.
WorldModelGraph parse_graph(const std::string& text);

// Canonical text form; parse_graph(serialize_graph(g)) == g structurally.
std::string serialize_graph(const WorldModelGraph& graph);

// Parses the four Removed/Added sections of a refinement response. A missing
// header leaves that list empty and records a warning.
GraphDiff parse_diff(const std::string& text);

// Removals first (all matches), then additions. Never throws; mismatches and
// replacements land in the report.
std::pair<WorldModelGraph, ApplyReport> apply_diff(const WorldModelGraph& graph,
                                                   const GraphDiff& diff);

// All edges with matching normalized source, optionally filtered by
// normalized action. Total: never errors.
std::vector<EdgeSpec> lookup_edges(const WorldModelGraph& graph,
                                   std::string_view vertex,
                                   std::optional<std::string_view> action = {});

// One text file per app name under the store directory.
class GraphStore {
public:
  explicit GraphStore(std::string root_dir) : root_(std::move(root_dir)) {}

  void save(const WorldModelGraph& graph, const std::string& app_name) const;
  std::optional<WorldModelGraph> load(const std::string& app_name) const;
  std::string path_for(const std::string& app_name) const;

private:
  std::string root_;
};

// Parses a single vertex / edge line; nullopt when malformed.
std::optional<VertexSpec> parse_vertex_line(const std::string& line,
                                            std::vector<ParseWarning>* warnings,
                                            int line_no);
std::optional<EdgeSpec> parse_edge_line(const std::string& line,
                                        std::vector<ParseWarning>* warnings,
                                        int line_no);
std::string serialize_vertex(const VertexSpec& v);
std::string serialize_edge(const EdgeSpec& e);

}  // namespace fpwc::wm
