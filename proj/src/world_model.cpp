#include "fpwc/world_model.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fpwc {
namespace util {

namespace {

// UTF-8 typographic quote glyphs.
const std::string kLeftDouble = "\xe2\x80\x9c";   // U+201C
const std::string kRightDouble = "\xe2\x80\x9d";  // U+201D
const std::string kLeftSingle = "\xe2\x80\x98";   // U+2018
const std::string kRightSingle = "\xe2\x80\x99";  // U+2019

size_t quote_run_len(std::string_view s, size_t pos) {
  if (pos >= s.size()) return 0;
  char c = s[pos];
  if (c == '"') return 1;
  if (c == '`') return s.substr(pos).find_first_not_of('`') == 1 ? 1 : 2;
  for (const auto& q : {kLeftDouble, kRightDouble, kLeftSingle, kRightSingle}) {
    if (s.substr(pos, q.size()) == q) {
      // Doubled single quotes act as one double quote.
      if ((q == kLeftSingle || q == kRightSingle) &&
          s.substr(pos + q.size(), q.size()) == q)
        return 2 * q.size();
      return q.size();
    }
  }
  return 0;
}

size_t quote_run_len_back(std::string_view s) {
  // Length of a quote run ending at s.end().
  for (size_t len : {6, 3, 2, 1}) {
    if (s.size() >= len && quote_run_len(s, s.size() - len) == len) return len;
  }
  return 0;
}

}  // namespace

std::string strip_quotes(std::string_view s) {
  std::string t = trim(s);
  size_t front = quote_run_len(t, 0);
  if (front == 0 || front >= t.size()) return t;
  size_t back = quote_run_len_back(std::string_view(t).substr(front));
  if (back == 0) return t;
  return trim(std::string_view(t).substr(front, t.size() - front - back));
}

std::string fnv1a_hex(std::string_view s) {
  static const char* digits = "0123456789abcdef";
  uint64_t h = fnv1a(s);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace util

namespace wm {

using util::collapse_ws;
using util::istarts_with;
using util::split_lines;
using util::strip_quotes;
using util::to_lower;
using util::trim;

std::string normalize_name(std::string_view raw) {
  return to_lower(collapse_ws(strip_quotes(raw)));
}

bool EdgeSpec::same_transition(const EdgeSpec& other) const {
  return normalize_name(source) == normalize_name(other.source) &&
         normalize_name(action) == normalize_name(other.action) &&
         normalize_name(target) == normalize_name(other.target);
}

const VertexSpec* WorldModelGraph::find_vertex(std::string_view name) const {
  std::string key = normalize_name(name);
  for (const auto& v : vertices)
    if (v.key() == key) return &v;
  return nullptr;
}

bool WorldModelGraph::has_vertex(std::string_view name) const {
  return find_vertex(name) != nullptr;
}

bool WorldModelGraph::upsert_vertex(VertexSpec v) {
  std::string key = v.key();
  for (auto& existing : vertices) {
    if (existing.key() == key) {
      existing = std::move(v);
      return true;
    }
  }
  vertices.push_back(std::move(v));
  return false;
}

std::vector<EdgeSpec> WorldModelGraph::dangling_edges() const {
  std::vector<EdgeSpec> out;
  for (const auto& e : edges)
    if (!has_vertex(e.source) || !has_vertex(e.target)) out.push_back(e);
  return out;
}

bool WorldModelGraph::structurally_equal(const WorldModelGraph& other) const {
  if (vertices.size() != other.vertices.size()) return false;
  if (edges.size() != other.edges.size()) return false;
  for (size_t i = 0; i < vertices.size(); ++i) {
    const auto& a = vertices[i];
    const auto& b = other.vertices[i];
    if (a.key() != b.key() || trim(a.description) != trim(b.description) ||
        a.can_self_act != b.can_self_act || a.imagined != b.imagined)
      return false;
  }
  for (size_t i = 0; i < edges.size(); ++i) {
    const auto& a = edges[i];
    const auto& b = other.edges[i];
    if (!a.same_transition(b) || trim(a.comment) != trim(b.comment) ||
        a.imagined != b.imagined)
      return false;
  }
  return true;
}

GraphDiff GraphDiff::inverse() const {
  GraphDiff inv;
  inv.removed_vertices = added_vertices;
  inv.added_vertices = removed_vertices;
  inv.removed_edges = added_edges;
  inv.added_edges = removed_edges;
  return inv;
}

namespace {

constexpr std::string_view kActionTypes[] = {"tap", "swipe", "long_press",
                                             "type", "back", "keycode"};

bool known_action_type(std::string_view action) {
  std::string norm = normalize_name(action);
  std::string first = norm.substr(0, norm.find(' '));
  for (auto t : kActionTypes)
    if (first == t) return true;
  return false;
}

void warn(std::vector<ParseWarning>* warnings, int line_no, std::string msg) {
  if (warnings) warnings->push_back({line_no, std::move(msg)});
}

// Reads a possibly-quoted token starting at pos. Unquoted tokens run until
// one of `delims`. Returns the token with quotes stripped; advances pos past
// the closing quote (not past the delimiter).
std::optional<std::string> read_token(const std::string& s, size_t& pos,
                                      std::string_view delims) {
  while (pos < s.size() && util::is_space(s[pos])) ++pos;
  size_t open = util::quote_run_len(s, pos);
  if (open > 0) {
    size_t start = pos + open;
    size_t scan = start;
    while (scan < s.size()) {
      size_t close = util::quote_run_len(s, scan);
      if (close > 0) {
        std::string inner = s.substr(start, scan - start);
        pos = scan + close;
        return trim(inner);
      }
      ++scan;
    }
    return std::nullopt;  // unterminated quote
  }
  size_t end = pos;
  while (end < s.size() && delims.find(s[end]) == std::string_view::npos) ++end;
  std::string tok = trim(std::string_view(s).substr(pos, end - pos));
  pos = end;
  if (tok.empty()) return std::nullopt;
  return tok;
}

void skip_ws(const std::string& s, size_t& pos) {
  while (pos < s.size() && util::is_space(s[pos])) ++pos;
}

// Optional trailing "imagined: True" marker on vertex/edge lines.
bool take_imagined_marker(std::string& rest) {
  std::string t = trim(rest);
  if (istarts_with(t, "imagined:")) {
    std::string v = to_lower(trim(t.substr(9)));
    rest.clear();
    return v == "true";
  }
  return false;
}

bool parse_bool_token(std::string_view s, bool* out) {
  std::string v = to_lower(trim(s));
  if (v == "true") {
    *out = true;
    return true;
  }
  if (v == "false") {
    *out = false;
    return true;
  }
  return false;
}

size_t ifind(const std::string& hay, const std::string& needle, size_t from = 0) {
  std::string h = to_lower(hay), n = to_lower(needle);
  return h.find(n, from);
}

}  // namespace

std::optional<VertexSpec> parse_vertex_line(const std::string& line,
                                            std::vector<ParseWarning>* warnings,
                                            int line_no) {
  if (!istarts_with(trim(line), "name:")) return std::nullopt;
  std::string body = trim(line);
  body = trim(body.substr(5));

  size_t desc_pos = ifind(body, "description:");
  if (desc_pos == std::string::npos) {
    warn(warnings, line_no, "vertex line missing 'Description:'");
    return std::nullopt;
  }
  VertexSpec v;
  v.name = strip_quotes(std::string_view(body).substr(0, desc_pos));
  if (normalize_name(v.name).empty()) {
    warn(warnings, line_no, "vertex line with empty name");
    return std::nullopt;
  }
  std::string rest = body.substr(desc_pos + 12);

  size_t csa_pos = ifind(rest, "can-self-act:");
  std::string tail;
  if (csa_pos == std::string::npos) {
    v.description = trim(rest);
    warn(warnings, line_no,
         "vertex '" + v.name + "' missing 'can-self-act:'; defaulting to False");
  } else {
    v.description = trim(rest.substr(0, csa_pos));
    tail = trim(rest.substr(csa_pos + 13));
    size_t word_end = 0;
    while (word_end < tail.size() && !util::is_space(tail[word_end])) ++word_end;
    if (!parse_bool_token(tail.substr(0, word_end), &v.can_self_act)) {
      warn(warnings, line_no,
           "vertex '" + v.name + "' has non-boolean can-self-act; defaulting to False");
    }
    tail = trim(tail.substr(word_end));
  }
  if (!tail.empty()) v.imagined = take_imagined_marker(tail);
  return v;
}

std::optional<EdgeSpec> parse_edge_line(const std::string& line,
                                        std::vector<ParseWarning>* warnings,
                                        int line_no) {
  std::string body = trim(line);
  if (!istarts_with(body, "edge:")) return std::nullopt;
  body = trim(body.substr(5));

  size_t pos = 0;
  if (!(util::starts_with(body, "E(") || istarts_with(body, "e("))) {
    warn(warnings, line_no, "edge line missing 'E('");
    return std::nullopt;
  }
  pos = 2;
  EdgeSpec e;
  auto src = read_token(body, pos, ",)");
  if (!src) {
    warn(warnings, line_no, "edge line with unreadable source");
    return std::nullopt;
  }
  e.source = *src;
  skip_ws(body, pos);
  if (pos >= body.size() || body[pos] != ',') {
    warn(warnings, line_no, "edge line missing ',' after source");
    return std::nullopt;
  }
  ++pos;
  auto act = read_token(body, pos, ",)");
  if (!act) {
    warn(warnings, line_no, "edge line with unreadable action");
    return std::nullopt;
  }
  e.action = *act;
  skip_ws(body, pos);
  if (pos >= body.size() || body[pos] != ')') {
    warn(warnings, line_no, "edge line missing ')' after action");
    return std::nullopt;
  }
  ++pos;
  skip_ws(body, pos);
  // Arrow: "->", tolerate "- >" and a stray ">".
  if (util::starts_with(std::string_view(body).substr(pos), "->")) {
    pos += 2;
  } else if (pos < body.size() && body[pos] == '-') {
    ++pos;
    skip_ws(body, pos);
    if (pos < body.size() && body[pos] == '>') ++pos;
  } else {
    warn(warnings, line_no, "edge line missing '->'");
    return std::nullopt;
  }
  auto tgt = read_token(body, pos, "#");
  if (!tgt) {
    warn(warnings, line_no, "edge line with unreadable target");
    return std::nullopt;
  }
  e.target = *tgt;
  skip_ws(body, pos);
  std::string tail = body.substr(pos);
  // Optional imagined marker sits between the target and the comment.
  if (istarts_with(trim(tail), "imagined:")) {
    std::string t = trim(tail);
    size_t hash = t.find('#');
    std::string marker = hash == std::string::npos ? t : t.substr(0, hash);
    e.imagined = take_imagined_marker(marker);
    tail = hash == std::string::npos ? "" : t.substr(hash);
  }
  std::string ttail = trim(tail);
  if (!ttail.empty() && ttail[0] == '#') e.comment = trim(ttail.substr(1));

  if (!known_action_type(e.action)) {
    warn(warnings, line_no,
         "edge action '" + e.action + "' does not start with a known action type");
  }
  return e;
}

WorldModelGraph parse_graph(const std::string& text) {
  WorldModelGraph g;
  bool saw_header = false;
  std::vector<size_t> missing_csa_warning_idx;  // warnings to maybe retract
  std::vector<std::string> missing_csa_vertex;

  auto lines = split_lines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    int line_no = static_cast<int>(i + 1);
    std::string t = trim(lines[i]);
    if (t.empty() || t[0] == '#') continue;
    std::string lower = to_lower(t);
    if (lower == "vertices:" || lower == "vertices" || lower == "edges:" ||
        lower == "edges") {
      saw_header = true;
      continue;
    }
    if (istarts_with(t, "name:")) {
      size_t before = g.warnings.size();
      if (auto v = parse_vertex_line(t, &g.warnings, line_no)) {
        bool missing_csa = false;
        for (size_t w = before; w < g.warnings.size(); ++w) {
          if (g.warnings[w].message.find("missing 'can-self-act:'") !=
              std::string::npos) {
            missing_csa = true;
            missing_csa_warning_idx.push_back(w);
            missing_csa_vertex.push_back(v->key());
          }
        }
        (void)missing_csa;
        if (g.has_vertex(v->name)) {
          warn(&g.warnings, line_no,
               "duplicate vertex '" + v->name + "'; replacing earlier description");
        }
        g.upsert_vertex(std::move(*v));
      }
    } else if (istarts_with(t, "edge:")) {
      if (auto e = parse_edge_line(t, &g.warnings, line_no))
        g.edges.push_back(std::move(*e));
    }
    // Anything else (prose, "...") is ignored.
  }

  if (!saw_header)
    throw ParseError("graph text contains neither a 'Vertices:' nor an 'Edges:' block");

  // A self-edge implies can-self-act for a vertex that omitted the field.
  for (size_t k = 0; k < missing_csa_vertex.size(); ++k) {
    const std::string& key = missing_csa_vertex[k];
    bool has_self_edge = false;
    for (const auto& e : g.edges) {
      if (normalize_name(e.source) == key && normalize_name(e.target) == key) {
        has_self_edge = true;
        break;
      }
    }
    if (has_self_edge) {
      for (auto& v : g.vertices)
        if (v.key() == key) v.can_self_act = true;
      g.warnings[missing_csa_warning_idx[k]].line = -1;  // mark retracted
    }
  }
  g.warnings.erase(std::remove_if(g.warnings.begin(), g.warnings.end(),
                                  [](const ParseWarning& w) { return w.line == -1; }),
                   g.warnings.end());
  return g;
}

std::string serialize_vertex(const VertexSpec& v) {
  std::ostringstream os;
  os << "Name: \"" << v.name << "\" Description: " << trim(v.description)
     << " can-self-act: " << (v.can_self_act ? "True" : "False");
  if (v.imagined) os << " imagined: True";
  return os.str();
}

std::string serialize_edge(const EdgeSpec& e) {
  std::ostringstream os;
  os << "Edge: E(\"" << e.source << "\", \"" << e.action << "\") -> \""
     << e.target << "\"";
  if (e.imagined) os << " imagined: True";
  if (!trim(e.comment).empty()) os << " #" << trim(e.comment);
  return os.str();
}

std::string serialize_graph(const WorldModelGraph& graph) {
  std::ostringstream os;
  os << "Vertices:\n";
  for (const auto& v : graph.vertices) os << serialize_vertex(v) << "\n";
  os << "\nEdges:\n";
  for (const auto& e : graph.edges) os << serialize_edge(e) << "\n";
  return os.str();
}

namespace {

enum class DiffSection { None, RemovedV, AddedV, RemovedE, AddedE };

// Headers that terminate a diff section inside a full refinement response.
bool is_foreign_header(const std::string& lower) {
  static const char* kOthers[] = {
      "current vertex",  "successful and expected action",
      "ineffective",     "revised plan",
      "remind",          "added functions for other apps",
      "observation",     "thoughts",
      "impact"};
  for (auto* h : kOthers)
    if (util::starts_with(lower, h)) return true;
  return false;
}

}  // namespace

GraphDiff parse_diff(const std::string& text) {
  GraphDiff d;
  DiffSection section = DiffSection::None;
  bool seen[4] = {false, false, false, false};

  auto lines = split_lines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    int line_no = static_cast<int>(i + 1);
    std::string t = trim(lines[i]);
    if (t.empty()) continue;
    std::string lower = to_lower(t);
    if (util::starts_with(lower, "removed vertices")) {
      section = DiffSection::RemovedV;
      seen[0] = true;
      continue;
    }
    if (util::starts_with(lower, "added vertices")) {
      section = DiffSection::AddedV;
      seen[1] = true;
      continue;
    }
    if (util::starts_with(lower, "removed edges")) {
      section = DiffSection::RemovedE;
      seen[2] = true;
      continue;
    }
    if (util::starts_with(lower, "added edges")) {
      section = DiffSection::AddedE;
      seen[3] = true;
      continue;
    }
    if (is_foreign_header(lower)) {
      section = DiffSection::None;
      continue;
    }
    if (section == DiffSection::None) continue;
    if (t == "..." || t[0] == '(') continue;

    if (istarts_with(t, "name:")) {
      if (auto v = parse_vertex_line(t, &d.warnings, line_no)) {
        if (section == DiffSection::RemovedV)
          d.removed_vertices.push_back(std::move(*v));
        else if (section == DiffSection::AddedV)
          d.added_vertices.push_back(std::move(*v));
        else
          warn(&d.warnings, line_no, "vertex line inside an edges section; ignored");
      }
    } else if (istarts_with(t, "edge:")) {
      if (auto e = parse_edge_line(t, &d.warnings, line_no)) {
        if (section == DiffSection::RemovedE)
          d.removed_edges.push_back(std::move(*e));
        else if (section == DiffSection::AddedE)
          d.added_edges.push_back(std::move(*e));
        else
          warn(&d.warnings, line_no, "edge line inside a vertices section; ignored");
      }
    }
  }

  static const char* kHeaders[4] = {"Removed vertices:", "Added vertices:",
                                    "Removed edges:", "Added edges:"};
  for (int i = 0; i < 4; ++i) {
    if (!seen[i])
      warn(&d.warnings, 0,
           std::string("missing '") + kHeaders[i] + "' header; treating as empty");
  }
  return d;
}

std::pair<WorldModelGraph, ApplyReport> apply_diff(const WorldModelGraph& graph,
                                                   const GraphDiff& diff) {
  WorldModelGraph out = graph;
  out.warnings.clear();
  ApplyReport report;

  for (const auto& rv : diff.removed_vertices) {
    std::string key = rv.key();
    size_t before = out.vertices.size();
    out.vertices.erase(std::remove_if(out.vertices.begin(), out.vertices.end(),
                                      [&](const VertexSpec& v) { return v.key() == key; }),
                       out.vertices.end());
    if (out.vertices.size() == before)
      report.unmatched_removals.push_back("vertex: " + rv.name);
  }
  for (const auto& re : diff.removed_edges) {
    size_t before = out.edges.size();
    out.edges.erase(std::remove_if(out.edges.begin(), out.edges.end(),
                                   [&](const EdgeSpec& e) { return e.same_transition(re); }),
                    out.edges.end());
    if (out.edges.size() == before)
      report.unmatched_removals.push_back("edge: E(\"" + re.source + "\", \"" +
                                          re.action + "\") -> \"" + re.target + "\"");
  }
  for (const auto& av : diff.added_vertices) {
    if (out.upsert_vertex(av)) report.replaced_vertices.push_back(av.name);
  }
  for (const auto& ae : diff.added_edges) {
    bool dup = std::any_of(out.edges.begin(), out.edges.end(),
                           [&](const EdgeSpec& e) { return e.same_transition(ae); });
    if (dup)
      report.duplicate_edge_adds.push_back("E(\"" + ae.source + "\", \"" + ae.action +
                                           "\") -> \"" + ae.target + "\"");
    out.edges.push_back(ae);
  }
  report.dangling_after = out.dangling_edges();
  return {std::move(out), std::move(report)};
}

std::vector<EdgeSpec> lookup_edges(const WorldModelGraph& graph,
                                   std::string_view vertex,
                                   std::optional<std::string_view> action) {
  std::vector<EdgeSpec> out;
  std::string vkey = normalize_name(vertex);
  std::string akey = action ? normalize_name(*action) : std::string();
  for (const auto& e : graph.edges) {
    if (normalize_name(e.source) != vkey) continue;
    if (action && normalize_name(e.action) != akey) continue;
    out.push_back(e);
  }
  return out;
}

std::string GraphStore::path_for(const std::string& app_name) const {
  std::string key = normalize_name(app_name);
  for (char& c : key)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  return (std::filesystem::path(root_) / (key + ".graph.txt")).string();
}

void GraphStore::save(const WorldModelGraph& graph, const std::string& app_name) const {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) throw StorageError("cannot create graph store directory '" + root_ + "': " + ec.message());
  std::string path = path_for(app_name);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot open graph file for writing: " + path);
  out << serialize_graph(graph);
  if (!out) throw StorageError("write failed for graph file: " + path);
}

std::optional<WorldModelGraph> GraphStore::load(const std::string& app_name) const {
  std::string path = path_for(app_name);
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open graph file for reading: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw StorageError("read failed for graph file: " + path);
  return parse_graph(buf.str());
}

}  // namespace wm
}  // namespace fpwc
