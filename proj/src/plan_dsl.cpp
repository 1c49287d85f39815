#include "fpwc/plan_dsl.hpp"

#include <algorithm>
#include <cassert>
#include <sstream>

namespace fpwc::plan {

using util::istarts_with;
using util::split_lines;
using util::to_lower;
using util::trim;

bool StringTemplate::is_literal() const {
  return std::none_of(segments.begin(), segments.end(),
                      [](const Segment& s) { return s.is_slot; });
}

std::string StringTemplate::literal_text() const {
  std::string out;
  for (const auto& s : segments) out += s.text;
  return out;
}

std::string value_to_string(const Value& v) {
  if (std::holds_alternative<int64_t>(v)) return std::to_string(std::get<int64_t>(v));
  if (std::holds_alternative<bool>(v)) return std::get<bool>(v) ? "True" : "False";
  return std::get<std::string>(v);
}

std::string interpolate(const StringTemplate& tmpl, const Env& env) {
  std::string out;
  for (const auto& seg : tmpl.segments) {
    if (!seg.is_slot) {
      out += seg.text;
      continue;
    }
    auto it = env.find(seg.text);
    if (it == env.end())
      throw Error("unbound variable '" + seg.text + "' in string interpolation");
    out += value_to_string(it->second);
  }
  return out;
}

std::string effect_to_string(const Effect& e) {
  std::ostringstream os;
  if (auto* d = std::get_if<DoEdge>(&e)) {
    os << "E(\"" << d->source << "\", \"" << d->action << "\""
       << (d->imagined ? ", imagined=True" : "") << ")";
  } else if (auto* q = std::get_if<QueryTrue>(&e)) {
    os << "isTRUE(\"" << q->statement << "\""
       << (q->compare_screen ? ", compare_screen=True" : "") << ")";
  } else if (std::holds_alternative<DoWait>(e)) {
    os << "wait()";
  } else if (auto* s = std::get_if<SpawnSubAgent>(&e)) {
    os << "other_app_function(\"" << s->app_name << "\", \"" << s->sub_task << "\")";
  } else if (auto* f = std::get_if<Finished>(&e)) {
    os << "finished(\"" << f->message << "\")";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

namespace {

struct Token {
  enum class Kind { Ident, Int, Str, Op, End };
  Kind kind = Kind::End;
  std::string text;           // ident name or operator spelling
  int64_t int_value = 0;
  StringTemplate str;
  int col = 0;
};

struct LineSyntaxError {
  int col;
  std::string message;
};

StringTemplate scan_string_body(const std::string& body, int col) {
  StringTemplate tmpl;
  std::string current;
  size_t i = 0;
  while (i < body.size()) {
    char c = body[i];
    if (c == '{') {
      size_t close = body.find('}', i + 1);
      if (close == std::string::npos)
        throw LineSyntaxError{col + static_cast<int>(i), "unterminated '{' in string"};
      std::string name = trim(body.substr(i + 1, close - i - 1));
      if (name.empty())
        throw LineSyntaxError{col + static_cast<int>(i), "empty interpolation slot"};
      if (!current.empty()) {
        tmpl.segments.push_back({current, false});
        current.clear();
      }
      tmpl.segments.push_back({name, true});
      i = close + 1;
      continue;
    }
    current.push_back(c);
    ++i;
  }
  if (!current.empty() || tmpl.segments.empty())
    tmpl.segments.push_back({current, false});
  return tmpl;
}

std::vector<Token> tokenize_line(const std::string& line) {
  std::vector<Token> toks;
  size_t i = 0;
  auto push_op = [&](std::string op, size_t at) {
    toks.push_back({Token::Kind::Op, std::move(op), 0, {}, static_cast<int>(at + 1)});
  };
  while (i < line.size()) {
    char c = line[i];
    if (util::is_space(c)) {
      ++i;
      continue;
    }
    if (c == '#') break;  // comment to end of line
    int col = static_cast<int>(i + 1);
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t j = i;
      while (j < line.size() && (std::isalnum(static_cast<unsigned char>(line[j])) ||
                                 line[j] == '_'))
        ++j;
      std::string word = line.substr(i, j - i);
      // f-string prefix
      if ((word == "f" || word == "F") && j < line.size() &&
          (line[j] == '"' || line[j] == '\'')) {
        i = j;
        continue;  // fall through to string scan on next iteration
      }
      toks.push_back({Token::Kind::Ident, word, 0, {}, col});
      i = j;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t j = i;
      while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
      Token t;
      t.kind = Token::Kind::Int;
      t.int_value = std::stoll(line.substr(i, j - i));
      t.col = col;
      toks.push_back(std::move(t));
      i = j;
      continue;
    }
    if (c == '"' || c == '\'') {
      size_t close = line.find(c, i + 1);
      if (close == std::string::npos)
        throw LineSyntaxError{col, "unterminated string literal"};
      Token t;
      t.kind = Token::Kind::Str;
      t.str = scan_string_body(line.substr(i + 1, close - i - 1), col + 1);
      t.col = col;
      toks.push_back(std::move(t));
      i = close + 1;
      continue;
    }
    // Typographic quote styles that model output sometimes uses: doubled or
    // single left quotes / backticks open, right quote or plain '"' closes.
    {
      std::string_view open;
      for (std::string_view m : {std::string_view("‘‘"),
                                 std::string_view("“"), std::string_view("``"),
                                 std::string_view("‘")}) {
        if (line.compare(i, m.size(), m) == 0) {
          open = m;
          break;
        }
      }
      if (!open.empty()) {
        size_t body = i + open.size();
        size_t close = std::string::npos, close_len = 0;
        for (size_t j = body; j < line.size() && close == std::string::npos; ++j) {
          for (std::string_view m : {std::string_view("”"),
                                     std::string_view("’’"),
                                     std::string_view("\""),
                                     std::string_view("''")}) {
            if (line.compare(j, m.size(), m) == 0) {
              close = j;
              close_len = m.size();
              break;
            }
          }
        }
        if (close == std::string::npos)
          throw LineSyntaxError{col, "unterminated string literal"};
        Token t;
        t.kind = Token::Kind::Str;
        t.str = scan_string_body(line.substr(body, close - body), col + 1);
        t.col = col;
        toks.push_back(std::move(t));
        i = close + close_len;
        continue;
      }
    }
    // multi-char operators first
    std::string two = line.substr(i, 2);
    if (two == "==" || two == "!=" || two == "<=" || two == ">=" || two == "+=") {
      push_op(two, i);
      i += 2;
      continue;
    }
    if (line.substr(i, 3) == "...") {
      push_op("...", i);
      i += 3;
      continue;
    }
    if (std::string("()=,<>+:").find(c) != std::string::npos) {
      push_op(std::string(1, c), i);
      ++i;
      continue;
    }
    throw LineSyntaxError{col, std::string("unexpected character '") + c + "'"};
  }
  toks.push_back({Token::Kind::End, "", 0, {}, static_cast<int>(line.size() + 1)});
  return toks;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct LogicalLine {
  int indent = 0;
  int line_no = 0;
  std::string text;  // without indentation
  bool comment_only = false;
};

int measure_indent(const std::string& line, size_t* content_start) {
  int indent = 0;
  size_t i = 0;
  for (; i < line.size(); ++i) {
    if (line[i] == ' ')
      ++indent;
    else if (line[i] == '\t')
      indent += 4;  // tabs normalized to the 4-space canonical indent
    else
      break;
  }
  *content_start = i;
  return indent;
}

class Parser {
public:
  explicit Parser(const std::string& text) : source_(text) {}

  ParseResult run() {
    collect_lines();
    ParseResult result;
    size_t pos = 0;
    // Skip anything before the def line (prose, labels, fences).
    while (pos < lines_.size() && !istarts_with(lines_[pos].text, "def ") &&
           !istarts_with(lines_[pos].text, "def("))
      ++pos;
    if (pos == lines_.size()) {
      errors_.push_back({1, 1, "no function definition ('def new_plan():') found"});
      result.errors = errors_;
      return result;
    }
    auto program = std::make_shared<PlanProgram>();
    program->source_text = source_;
    parse_def_line(lines_[pos], &program->name);
    int def_indent = lines_[pos].indent;
    ++pos;
    program->body = parse_block(&pos, def_indent, /*loop_depth=*/0);
    if (pos < lines_.size()) {
      errors_.push_back({lines_[pos].line_no, 1,
                         "unexpected content after the plan body (only one function "
                         "definition is supported)"});
    }
    if (count_statements(program->body) == 0 && errors_.empty())
      errors_.push_back({lines_.empty() ? 1 : lines_.back().line_no, 1,
                         "plan body is empty"});
    result.errors = errors_;
    if (errors_.empty()) result.program = std::move(program);
    return result;
  }

private:
  void collect_lines() {
    auto raw = split_lines(source_);
    for (size_t i = 0; i < raw.size(); ++i) {
      size_t start = 0;
      int indent = measure_indent(raw[i], &start);
      std::string content = raw[i].substr(start);
      // trailing whitespace
      while (!content.empty() && util::is_space(content.back())) content.pop_back();
      if (content.empty()) continue;
      if (util::starts_with(content, "```")) continue;  // stray code fences
      LogicalLine ll;
      ll.indent = indent;
      ll.line_no = static_cast<int>(i + 1);
      ll.text = content;
      ll.comment_only = content[0] == '#';
      lines_.push_back(std::move(ll));
    }
  }

  void parse_def_line(const LogicalLine& ll, std::string* name) {
    try {
      auto toks = tokenize_line(ll.text);
      size_t t = 0;
      expect_ident(toks, &t, "def", ll.line_no);
      if (toks[t].kind != Token::Kind::Ident)
        throw LineSyntaxError{toks[t].col, "expected function name after 'def'"};
      *name = toks[t].text;
      ++t;
      expect_op(toks, &t, "(", ll.line_no);
      expect_op(toks, &t, ")", ll.line_no);
      expect_op(toks, &t, ":", ll.line_no);
      expect_end(toks, t, ll.line_no);
    } catch (const LineSyntaxError& e) {
      errors_.push_back({ll.line_no, e.col, e.message});
    }
  }

  Block parse_block(size_t* pos, int parent_indent, int loop_depth) {
    Block block;
    if (*pos >= lines_.size()) return block;
    int body_indent = -1;
    while (*pos < lines_.size()) {
      const LogicalLine& ll = lines_[*pos];
      if (ll.indent <= parent_indent) break;
      if (body_indent < 0) body_indent = ll.indent;
      if (ll.indent < body_indent) break;  // dedent to an outer block
      if (ll.indent > body_indent && !ll.comment_only) {
        errors_.push_back({ll.line_no, ll.indent + 1, "unexpected indentation"});
        ++(*pos);
        continue;
      }
      if (ll.comment_only) {
        block.push_back({ll.line_no, PassStmt{}});
        ++(*pos);
        continue;
      }
      parse_statement(pos, body_indent, loop_depth, &block);
    }
    return block;
  }

  void parse_statement(size_t* pos, int indent, int loop_depth, Block* out) {
    const LogicalLine& ll = lines_[*pos];
    try {
      auto toks = tokenize_line(ll.text);
      size_t t = 0;
      const Token& first = toks[t];
      if (first.kind == Token::Kind::Op && first.text == "...") {
        out->push_back({ll.line_no, PassStmt{}});
        ++(*pos);
        return;
      }
      if (first.kind != Token::Kind::Ident)
        throw LineSyntaxError{first.col, "expected a statement"};

      const std::string& kw = first.text;
      if (kw == "if") {
        parse_if_chain(pos, indent, loop_depth, out);
        return;
      }
      if (kw == "elif" || kw == "else")
        throw LineSyntaxError{first.col, "'" + kw + "' without a matching 'if'"};
      if (kw == "while") {
        ++t;
        ExprPtr cond = parse_expr(toks, &t, ll.line_no);
        expect_op(toks, &t, ":", ll.line_no);
        expect_end(toks, t, ll.line_no);
        ++(*pos);
        WhileStmt w;
        w.condition = cond;
        w.body = parse_block(pos, indent, loop_depth + 1);
        out->push_back({ll.line_no, std::move(w)});
        return;
      }
      if (kw == "break" || kw == "continue") {
        ++t;
        expect_end(toks, t, ll.line_no);
        if (loop_depth == 0)
          throw LineSyntaxError{first.col, "'" + kw + "' outside of a loop"};
        ++(*pos);
        if (kw == "break")
          out->push_back({ll.line_no, BreakStmt{}});
        else
          out->push_back({ll.line_no, ContinueStmt{}});
        return;
      }
      if (kw == "return") {
        ++t;
        ReturnStmt r;
        if (toks[t].kind == Token::Kind::End) {
          auto e = std::make_shared<Expr>();
          e->kind = Expr::Kind::Str;
          e->str.segments.push_back({"", false});
          r.value = e;
        } else {
          r.value = parse_expr(toks, &t, ll.line_no);
          expect_end(toks, t, ll.line_no);
        }
        ++(*pos);
        out->push_back({ll.line_no, std::move(r)});
        return;
      }
      if (kw == "pass") {
        ++t;
        expect_end(toks, t, ll.line_no);
        ++(*pos);
        out->push_back({ll.line_no, PassStmt{}});
        return;
      }
      if (kw == "def")
        throw LineSyntaxError{first.col, "nested function definitions are not supported"};
      if (kw == "for" || kw == "import" || kw == "from")
        throw LineSyntaxError{first.col, "'" + kw + "' is not supported in plans"};

      // Call statement or assignment.
      if (toks[t + 1].kind == Token::Kind::Op && toks[t + 1].text == "(") {
        out->push_back({ll.line_no, parse_call_stmt(toks, &t, ll.line_no)});
        expect_end(toks, t, ll.line_no);
        ++(*pos);
        return;
      }
      if (toks[t + 1].kind == Token::Kind::Op &&
          (toks[t + 1].text == "=" || toks[t + 1].text == "+=")) {
        AssignStmt a;
        a.var = first.text;
        bool augmented = toks[t + 1].text == "+=";
        t += 2;
        ExprPtr rhs = parse_expr(toks, &t, ll.line_no);
        expect_end(toks, t, ll.line_no);
        if (augmented) {
          auto var = std::make_shared<Expr>();
          var->kind = Expr::Kind::Var;
          var->var_name = a.var;
          var->line = ll.line_no;
          auto add = std::make_shared<Expr>();
          add->kind = Expr::Kind::Add;
          add->lhs = var;
          add->rhs = rhs;
          add->line = ll.line_no;
          a.value = add;
        } else {
          a.value = rhs;
        }
        ++(*pos);
        out->push_back({ll.line_no, std::move(a)});
        return;
      }
      throw LineSyntaxError{first.col, "unsupported statement '" + kw + "'"};
    } catch (const LineSyntaxError& e) {
      errors_.push_back({ll.line_no, e.col, e.message});
      ++(*pos);
      skip_nested(pos, indent);
    }
  }

  void skip_nested(size_t* pos, int indent) {
    while (*pos < lines_.size() && lines_[*pos].indent > indent) ++(*pos);
  }

  void parse_if_chain(size_t* pos, int indent, int loop_depth, Block* out) {
    IfStmt stmt;
    int first_line = lines_[*pos].line_no;
    bool saw_else = false;
    while (*pos < lines_.size()) {
      const LogicalLine& ll = lines_[*pos];
      if (ll.indent != indent) break;
      std::string head;
      {
        size_t sp = ll.text.find_first_of(" (:");
        head = ll.text.substr(0, sp);
      }
      bool is_if = head == "if" && stmt.branches.empty();
      bool is_elif = head == "elif" && !stmt.branches.empty() && !saw_else;
      bool is_else = head == "else" && !stmt.branches.empty() && !saw_else;
      if (!is_if && !is_elif && !is_else) break;

      auto toks = tokenize_line(ll.text);
      size_t t = 1;  // past the keyword
      if (is_else) {
        expect_op(toks, &t, ":", ll.line_no);
        expect_end(toks, t, ll.line_no);
        ++(*pos);
        stmt.else_body = parse_block(pos, indent, loop_depth);
        saw_else = true;
        break;
      }
      ExprPtr cond = parse_expr(toks, &t, ll.line_no);
      expect_op(toks, &t, ":", ll.line_no);
      expect_end(toks, t, ll.line_no);
      ++(*pos);
      IfStmt::Branch branch;
      branch.condition = cond;
      branch.body = parse_block(pos, indent, loop_depth);
      stmt.branches.push_back(std::move(branch));
    }
    out->push_back({first_line, std::move(stmt)});
  }

  // --- calls ---

  struct CallArgs {
    std::vector<ExprPtr> positional;
    std::vector<std::pair<std::string, ExprPtr>> keyword;
  };

  CallArgs parse_call_args(const std::vector<Token>& toks, size_t* t, int line) {
    CallArgs args;
    expect_op(toks, t, "(", line);
    if (toks[*t].kind == Token::Kind::Op && toks[*t].text == ")") {
      ++(*t);
      return args;
    }
    while (true) {
      if (toks[*t].kind == Token::Kind::Ident && toks[*t + 1].kind == Token::Kind::Op &&
          toks[*t + 1].text == "=") {
        std::string name = toks[*t].text;
        *t += 2;
        args.keyword.emplace_back(name, parse_expr(toks, t, line));
      } else {
        args.positional.push_back(parse_expr(toks, t, line));
      }
      if (toks[*t].kind == Token::Kind::Op && toks[*t].text == ",") {
        ++(*t);
        continue;
      }
      break;
    }
    expect_op(toks, t, ")", line);
    return args;
  }

  static bool literal_bool(const ExprPtr& e, bool* out) {
    if (e && e->kind == Expr::Kind::BoolLit) {
      *out = e->bool_value;
      return true;
    }
    return false;
  }

  std::variant<EdgeCallStmt, IsTrueCallStmt, WaitStmt, OtherAppCallStmt, AssignStmt,
               IfStmt, WhileStmt, BreakStmt, ContinueStmt, ReturnStmt, PassStmt>
  parse_call_stmt(const std::vector<Token>& toks, size_t* t, int line) {
    const Token& name_tok = toks[*t];
    std::string name = name_tok.text;
    std::string lname = to_lower(name);
    ++(*t);
    CallArgs args = parse_call_args(toks, t, line);

    if (name == "E" || name == "e") {
      if (args.positional.size() != 2)
        throw LineSyntaxError{name_tok.col, "E() takes exactly two positional arguments"};
      EdgeCallStmt call;
      call.source = args.positional[0];
      call.action = args.positional[1];
      for (auto& [k, v] : args.keyword) {
        bool b = false;
        if (to_lower(k) == "imagined" && literal_bool(v, &b))
          call.imagined = b;
        else
          throw LineSyntaxError{name_tok.col, "unsupported keyword argument '" + k +
                                                  "' for E()"};
      }
      return call;
    }
    if (lname == "istrue") {
      if (args.positional.size() != 1)
        throw LineSyntaxError{name_tok.col, "isTRUE() takes exactly one positional argument"};
      IsTrueCallStmt call;
      call.statement = args.positional[0];
      for (auto& [k, v] : args.keyword) {
        bool b = false;
        if (to_lower(k) == "compare_screen" && literal_bool(v, &b))
          call.compare_screen = b;
        else
          throw LineSyntaxError{name_tok.col, "unsupported keyword argument '" + k +
                                                  "' for isTRUE()"};
      }
      return call;
    }
    if (lname == "wait") {
      if (!args.positional.empty() || !args.keyword.empty())
        throw LineSyntaxError{name_tok.col, "wait() takes no arguments"};
      return WaitStmt{};
    }
    if (lname == "other_app_function" || lname == "other_app_agent") {
      if (args.positional.size() != 2 || !args.keyword.empty())
        throw LineSyntaxError{name_tok.col,
                              "other_app_function() takes exactly two arguments"};
      OtherAppCallStmt call;
      call.app_name = args.positional[0];
      call.sub_task = args.positional[1];
      return call;
    }
    throw LineSyntaxError{name_tok.col, "unknown function '" + name + "'"};
  }

  // --- expressions (precedence climbing) ---

  ExprPtr parse_expr(const std::vector<Token>& toks, size_t* t, int line) {
    return parse_or(toks, t, line);
  }

  ExprPtr parse_or(const std::vector<Token>& toks, size_t* t, int line) {
    ExprPtr lhs = parse_and(toks, t, line);
    while (toks[*t].kind == Token::Kind::Ident && toks[*t].text == "or") {
      int col = toks[*t].col;
      ++(*t);
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::Or;
      e->lhs = lhs;
      e->rhs = parse_and(toks, t, line);
      e->line = line;
      e->col = col;
      lhs = e;
    }
    return lhs;
  }

  ExprPtr parse_and(const std::vector<Token>& toks, size_t* t, int line) {
    ExprPtr lhs = parse_not(toks, t, line);
    while (toks[*t].kind == Token::Kind::Ident && toks[*t].text == "and") {
      int col = toks[*t].col;
      ++(*t);
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::And;
      e->lhs = lhs;
      e->rhs = parse_not(toks, t, line);
      e->line = line;
      e->col = col;
      lhs = e;
    }
    return lhs;
  }

  ExprPtr parse_not(const std::vector<Token>& toks, size_t* t, int line) {
    if (toks[*t].kind == Token::Kind::Ident && toks[*t].text == "not") {
      int col = toks[*t].col;
      ++(*t);
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::Not;
      e->lhs = parse_not(toks, t, line);
      e->line = line;
      e->col = col;
      return e;
    }
    return parse_comparison(toks, t, line);
  }

  ExprPtr parse_comparison(const std::vector<Token>& toks, size_t* t, int line) {
    ExprPtr lhs = parse_additive(toks, t, line);
    if (toks[*t].kind == Token::Kind::Op) {
      const std::string& op = toks[*t].text;
      if (op == "==" || op == "!=" || op == "<" || op == "<=" || op == ">" ||
          op == ">=") {
        int col = toks[*t].col;
        ++(*t);
        auto e = std::make_shared<Expr>();
        e->kind = Expr::Kind::Compare;
        e->compare_op = op;
        e->lhs = lhs;
        e->rhs = parse_additive(toks, t, line);
        e->line = line;
        e->col = col;
        return e;
      }
    }
    return lhs;
  }

  ExprPtr parse_additive(const std::vector<Token>& toks, size_t* t, int line) {
    ExprPtr lhs = parse_primary(toks, t, line);
    while (toks[*t].kind == Token::Kind::Op && toks[*t].text == "+") {
      int col = toks[*t].col;
      ++(*t);
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::Add;
      e->lhs = lhs;
      e->rhs = parse_primary(toks, t, line);
      e->line = line;
      e->col = col;
      lhs = e;
    }
    return lhs;
  }

  ExprPtr parse_primary(const std::vector<Token>& toks, size_t* t, int line) {
    const Token& tok = toks[*t];
    auto e = std::make_shared<Expr>();
    e->line = line;
    e->col = tok.col;
    switch (tok.kind) {
      case Token::Kind::Int:
        e->kind = Expr::Kind::IntLit;
        e->int_value = tok.int_value;
        ++(*t);
        return e;
      case Token::Kind::Str:
        e->kind = Expr::Kind::Str;
        e->str = tok.str;
        ++(*t);
        return e;
      case Token::Kind::Ident: {
        if (tok.text == "True" || tok.text == "False") {
          e->kind = Expr::Kind::BoolLit;
          e->bool_value = tok.text == "True";
          ++(*t);
          return e;
        }
        if (toks[*t + 1].kind == Token::Kind::Op && toks[*t + 1].text == "(") {
          std::string lname = to_lower(tok.text);
          if (lname != "istrue")
            throw LineSyntaxError{tok.col,
                                  "only isTRUE() may be called inside an expression"};
          size_t pos = *t + 1;
          ++(*t);
          CallArgs args = parse_call_args(toks, t, line);
          (void)pos;
          if (args.positional.size() != 1)
            throw LineSyntaxError{tok.col, "isTRUE() takes exactly one positional argument"};
          e->kind = Expr::Kind::IsTrue;
          e->lhs = args.positional[0];
          for (auto& [k, v] : args.keyword) {
            bool b = false;
            if (to_lower(k) == "compare_screen" && literal_bool(v, &b))
              e->compare_screen = b;
            else
              throw LineSyntaxError{tok.col, "unsupported keyword argument '" + k +
                                                 "' for isTRUE()"};
          }
          return e;
        }
        e->kind = Expr::Kind::Var;
        e->var_name = tok.text;
        ++(*t);
        return e;
      }
      case Token::Kind::Op:
        if (tok.text == "(") {
          ++(*t);
          ExprPtr inner = parse_expr(toks, t, line);
          expect_op(toks, t, ")", line);
          return inner;
        }
        break;
      default:
        break;
    }
    throw LineSyntaxError{tok.col, "expected an expression"};
  }

  // --- token helpers ---

  static void expect_op(const std::vector<Token>& toks, size_t* t, const std::string& op,
                        int) {
    if (toks[*t].kind != Token::Kind::Op || toks[*t].text != op)
      throw LineSyntaxError{toks[*t].col, "expected '" + op + "'"};
    ++(*t);
  }
  static void expect_ident(const std::vector<Token>& toks, size_t* t,
                           const std::string& word, int) {
    if (toks[*t].kind != Token::Kind::Ident || toks[*t].text != word)
      throw LineSyntaxError{toks[*t].col, "expected '" + word + "'"};
    ++(*t);
  }
  static void expect_end(const std::vector<Token>& toks, size_t t, int) {
    if (toks[t].kind != Token::Kind::End)
      throw LineSyntaxError{toks[t].col, "unexpected trailing tokens"};
  }

  const std::string& source_;
  std::vector<LogicalLine> lines_;
  std::vector<SyntaxError> errors_;
};

}  // namespace

ParseResult parse_plan(const std::string& text) { return Parser(text).run(); }

int count_statements(const Block& block) {
  int n = 0;
  for (const auto& s : block) {
    if (std::holds_alternative<PassStmt>(s.node)) continue;
    ++n;
    if (auto* i = std::get_if<IfStmt>(&s.node)) {
      for (const auto& b : i->branches) n += count_statements(b.body);
      n += count_statements(i->else_body);
    } else if (auto* w = std::get_if<WhileStmt>(&s.node)) {
      n += count_statements(w->body);
    }
  }
  return n;
}

// ---------------------------------------------------------------------------
// Interpreter
// ---------------------------------------------------------------------------

namespace {

struct NeedEffectSignal {
  Effect effect;
};
struct RuntimeSignal {
  int line;
  std::string message;
};

struct EvalCtx {
  const Env& env;
  const std::vector<bool>& memo;
  size_t cursor = 0;
  int line = 0;
};

Value eval_expr(const ExprPtr& expr, EvalCtx& ctx);

std::string eval_string(const ExprPtr& expr, EvalCtx& ctx) {
  Value v = eval_expr(expr, ctx);
  return value_to_string(v);
}

bool eval_bool(const ExprPtr& expr, EvalCtx& ctx) {
  Value v = eval_expr(expr, ctx);
  if (!std::holds_alternative<bool>(v))
    throw RuntimeSignal{expr->line, "condition did not evaluate to a boolean"};
  return std::get<bool>(v);
}

Value eval_expr(const ExprPtr& expr, EvalCtx& ctx) {
  switch (expr->kind) {
    case Expr::Kind::IntLit:
      return expr->int_value;
    case Expr::Kind::BoolLit:
      return expr->bool_value;
    case Expr::Kind::Str: {
      try {
        return interpolate(expr->str, ctx.env);
      } catch (const Error& e) {
        throw RuntimeSignal{expr->line, e.what()};
      }
    }
    case Expr::Kind::Var: {
      auto it = ctx.env.find(expr->var_name);
      if (it == ctx.env.end())
        throw RuntimeSignal{expr->line, "unbound variable '" + expr->var_name + "'"};
      return it->second;
    }
    case Expr::Kind::Not:
      return !eval_bool(expr->lhs, ctx);
    case Expr::Kind::And: {
      if (!eval_bool(expr->lhs, ctx)) return false;
      return eval_bool(expr->rhs, ctx);
    }
    case Expr::Kind::Or: {
      if (eval_bool(expr->lhs, ctx)) return true;
      return eval_bool(expr->rhs, ctx);
    }
    case Expr::Kind::Compare: {
      Value a = eval_expr(expr->lhs, ctx);
      Value b = eval_expr(expr->rhs, ctx);
      const std::string& op = expr->compare_op;
      auto cmp = [&](auto x, auto y) -> bool {
        if (op == "==") return x == y;
        if (op == "!=") return x != y;
        if (op == "<") return x < y;
        if (op == "<=") return x <= y;
        if (op == ">") return x > y;
        return x >= y;
      };
      if (std::holds_alternative<int64_t>(a) && std::holds_alternative<int64_t>(b))
        return cmp(std::get<int64_t>(a), std::get<int64_t>(b));
      if (std::holds_alternative<std::string>(a) && std::holds_alternative<std::string>(b))
        return cmp(std::get<std::string>(a), std::get<std::string>(b));
      if (std::holds_alternative<bool>(a) && std::holds_alternative<bool>(b)) {
        if (op == "==") return std::get<bool>(a) == std::get<bool>(b);
        if (op == "!=") return std::get<bool>(a) != std::get<bool>(b);
        throw RuntimeSignal{expr->line, "ordering comparison of booleans"};
      }
      throw RuntimeSignal{expr->line, "type mismatch in comparison"};
    }
    case Expr::Kind::Add: {
      Value a = eval_expr(expr->lhs, ctx);
      Value b = eval_expr(expr->rhs, ctx);
      if (std::holds_alternative<int64_t>(a) && std::holds_alternative<int64_t>(b))
        return std::get<int64_t>(a) + std::get<int64_t>(b);
      if (std::holds_alternative<std::string>(a) && std::holds_alternative<std::string>(b))
        return std::get<std::string>(a) + std::get<std::string>(b);
      throw RuntimeSignal{expr->line, "type mismatch in '+'"};
    }
    case Expr::Kind::IsTrue: {
      std::string statement = eval_string(expr->lhs, ctx);
      if (ctx.cursor < ctx.memo.size()) return ctx.memo[ctx.cursor++];
      throw NeedEffectSignal{QueryTrue{statement, expr->compare_screen}};
    }
  }
  throw RuntimeSignal{expr->line, "internal: unknown expression kind"};
}

}  // namespace

ExecState make_exec_state(PlanProgramPtr program) {
  ExecState st;
  st.program = std::move(program);
  st.frames.push_back({&st.program->body, 0, false});
  return st;
}

namespace {

void advance(ExecState& st) {
  st.istrue_memo.clear();
  if (!st.frames.empty()) ++st.frames.back().index;
}

// Pops frames until and including the innermost loop body. Returns false when
// there is no enclosing loop.
bool pop_to_loop(ExecState& st) {
  while (!st.frames.empty()) {
    bool was_loop = st.frames.back().is_loop_body;
    st.frames.pop_back();
    if (was_loop) return true;
  }
  return false;
}

}  // namespace

std::pair<ExecState, std::optional<Effect>> step(ExecState st,
                                                 std::optional<EffectResult> result) {
  if (st.poisoned) throw Error("stepping a discarded plan execution state");
  if (st.done()) return {std::move(st), std::nullopt};

  if (st.status == ExecStatus::AwaitingEffectResult) {
    if (!result.has_value())
      throw Error("step() called without the pending effect result");
    if (st.pending == ExecState::Pending::AdvanceOnResult) {
      advance(st);
    } else if (st.pending == ExecState::Pending::ExprQuery) {
      if (!std::holds_alternative<bool>(*result))
        throw Error("isTRUE effect requires a boolean result");
      st.istrue_memo.push_back(std::get<bool>(*result));
    }
    st.pending = ExecState::Pending::None;
    st.status = ExecStatus::Running;
  }

  int64_t pure_budget = kPureStepBudget;

  while (true) {
    if (st.frames.empty()) {
      st.status = ExecStatus::Finished;
      st.finish_message = "plan exhausted";
      return {std::move(st), std::nullopt};
    }
    ExecState::Frame& frame = st.frames.back();
    if (frame.index >= frame.block->size()) {
      bool was_loop = frame.is_loop_body;
      st.frames.pop_back();
      if (!was_loop) {
        if (st.frames.empty()) {
          st.status = ExecStatus::Finished;
          st.finish_message = "plan exhausted";
          return {std::move(st), std::nullopt};
        }
        advance(st);
      }
      continue;
    }

    if (--pure_budget < 0) {
      st.status = ExecStatus::Failed;
      st.error = RuntimeError{0, "pure-step budget exceeded (possible effect-free loop)"};
      return {std::move(st), std::nullopt};
    }

    const Stmt& stmt = (*frame.block)[frame.index];
    ++st.steps_taken;

    try {
      EvalCtx ctx{st.env, st.istrue_memo, 0, stmt.line};

      if (std::holds_alternative<PassStmt>(stmt.node)) {
        advance(st);
        continue;
      }
      if (auto* a = std::get_if<AssignStmt>(&stmt.node)) {
        Value v = eval_expr(a->value, ctx);
        st.env[a->var] = std::move(v);
        advance(st);
        continue;
      }
      if (auto* e = std::get_if<EdgeCallStmt>(&stmt.node)) {
        DoEdge eff{eval_string(e->source, ctx), eval_string(e->action, ctx), e->imagined};
        st.status = ExecStatus::AwaitingEffectResult;
        st.pending = ExecState::Pending::AdvanceOnResult;
        return {std::move(st), Effect{std::move(eff)}};
      }
      if (auto* q = std::get_if<IsTrueCallStmt>(&stmt.node)) {
        if (ctx.cursor < ctx.memo.size()) {
          // Result arrived; a statement-level isTRUE discards it.
          advance(st);
          continue;
        }
        QueryTrue eff{eval_string(q->statement, ctx), q->compare_screen};
        st.status = ExecStatus::AwaitingEffectResult;
        st.pending = ExecState::Pending::ExprQuery;
        return {std::move(st), Effect{std::move(eff)}};
      }
      if (std::holds_alternative<WaitStmt>(stmt.node)) {
        st.status = ExecStatus::AwaitingEffectResult;
        st.pending = ExecState::Pending::AdvanceOnResult;
        return {std::move(st), Effect{DoWait{}}};
      }
      if (auto* o = std::get_if<OtherAppCallStmt>(&stmt.node)) {
        SpawnSubAgent eff{eval_string(o->app_name, ctx), eval_string(o->sub_task, ctx)};
        st.status = ExecStatus::AwaitingEffectResult;
        st.pending = ExecState::Pending::AdvanceOnResult;
        return {std::move(st), Effect{std::move(eff)}};
      }
      if (auto* i = std::get_if<IfStmt>(&stmt.node)) {
        const Block* chosen = nullptr;
        for (const auto& branch : i->branches) {
          if (eval_bool(branch.condition, ctx)) {
            chosen = &branch.body;
            break;
          }
        }
        if (!chosen && !i->else_body.empty()) chosen = &i->else_body;
        st.istrue_memo.clear();
        if (chosen && !chosen->empty()) {
          st.frames.push_back({chosen, 0, false});
        } else {
          advance(st);
        }
        continue;
      }
      if (auto* w = std::get_if<WhileStmt>(&stmt.node)) {
        bool cond = eval_bool(w->condition, ctx);
        st.istrue_memo.clear();
        if (cond) {
          st.frames.push_back({&w->body, 0, true});
        } else {
          advance(st);
        }
        continue;
      }
      if (std::holds_alternative<BreakStmt>(stmt.node)) {
        if (!pop_to_loop(st)) throw RuntimeSignal{stmt.line, "'break' outside of a loop"};
        advance(st);  // past the while statement
        continue;
      }
      if (std::holds_alternative<ContinueStmt>(stmt.node)) {
        if (!pop_to_loop(st))
          throw RuntimeSignal{stmt.line, "'continue' outside of a loop"};
        // parent index still points at the while; it re-tests on dispatch
        st.istrue_memo.clear();
        continue;
      }
      if (auto* r = std::get_if<ReturnStmt>(&stmt.node)) {
        std::string msg = eval_string(r->value, ctx);
        st.istrue_memo.clear();
        st.status = ExecStatus::Finished;
        st.finish_message = std::move(msg);
        return {std::move(st), std::nullopt};
      }
      throw RuntimeSignal{stmt.line, "internal: unknown statement kind"};
    } catch (const NeedEffectSignal& sig) {
      st.status = ExecStatus::AwaitingEffectResult;
      st.pending = ExecState::Pending::ExprQuery;
      return {std::move(st), sig.effect};
    } catch (const RuntimeSignal& sig) {
      st.status = ExecStatus::Failed;
      st.error = RuntimeError{sig.line ? sig.line : stmt.line, sig.message};
      return {std::move(st), std::nullopt};
    }
  }
}

// ---------------------------------------------------------------------------
// validate_plan
// ---------------------------------------------------------------------------

namespace {

std::optional<std::string> literal_of(const ExprPtr& e) {
  if (e && e->kind == Expr::Kind::Str && e->str.is_literal())
    return e->str.literal_text();
  return std::nullopt;
}

void validate_block(const Block& block, const wm::WorldModelGraph& graph,
                    std::vector<Diagnostic>* out) {
  for (const auto& s : block) {
    if (auto* e = std::get_if<EdgeCallStmt>(&s.node)) {
      auto src = literal_of(e->source);
      auto act = literal_of(e->action);
      if (e->imagined) {
        out->push_back({Diagnostic::Severity::ImaginedInfo, s.line,
                        "imagined E() call; exempt from graph checking"});
      } else if (!src || !act) {
        out->push_back({Diagnostic::Severity::Dynamic, s.line,
                        "unchecked (dynamic): interpolated E() arguments"});
      } else if (lookup_edges(graph, *src, std::string_view(*act)).empty()) {
        out->push_back({Diagnostic::Severity::MissingEdge, s.line,
                        "no edge E(\"" + *src + "\", \"" + *act + "\") in the graph"});
      }
    } else if (auto* i = std::get_if<IfStmt>(&s.node)) {
      for (const auto& b : i->branches) validate_block(b.body, graph, out);
      validate_block(i->else_body, graph, out);
    } else if (auto* w = std::get_if<WhileStmt>(&s.node)) {
      validate_block(w->body, graph, out);
    }
  }
}

}  // namespace

std::vector<Diagnostic> validate_plan(const PlanProgram& program,
                                      const wm::WorldModelGraph& graph) {
  std::vector<Diagnostic> out;
  validate_block(program.body, graph, &out);
  return out;
}

}  // namespace fpwc::plan
