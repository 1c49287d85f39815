#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fpwc/world_model.hpp"

namespace fpwc::plan {

// ---------------------------------------------------------------------------
// Abstract syntax
// ---------------------------------------------------------------------------

// A string literal with brace-delimited interpolation slots:
// "tap the {i}-th Wi-Fi network".
struct StringTemplate {
  struct Segment {
    std::string text;  // literal text, or the slot's variable name
    bool is_slot = false;
  };
  std::vector<Segment> segments;

  bool is_literal() const;
  std::string literal_text() const;  // only valid when is_literal()
};

using Value = std::variant<int64_t, bool, std::string>;
using Env = std::map<std::string, Value>;

std::string value_to_string(const Value& v);

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  enum class Kind { IntLit, BoolLit, Str, Var, Not, And, Or, Compare, Add, IsTrue };
  Kind kind = Kind::IntLit;
  int line = 0;
  int col = 0;

  int64_t int_value = 0;
  bool bool_value = false;
  StringTemplate str;
  std::string var_name;
  std::string compare_op;  // == != < <= > >=
  ExprPtr lhs, rhs;        // And/Or/Compare/Add; Not uses lhs

  // IsTrue: lhs holds the statement string expression.
  bool compare_screen = false;
};

struct Stmt;
using Block = std::vector<Stmt>;

struct EdgeCallStmt {
  ExprPtr source;
  ExprPtr action;
  bool imagined = false;
};
struct IsTrueCallStmt {
  ExprPtr statement;
  bool compare_screen = false;
};
struct WaitStmt {};
struct OtherAppCallStmt {
  ExprPtr app_name;
  ExprPtr sub_task;
};
struct AssignStmt {
  std::string var;
  ExprPtr value;  // for "+=", value is Add(var, rhs)
};
struct IfStmt {
  struct Branch {
    ExprPtr condition;
    Block body;
  };
  std::vector<Branch> branches;
  Block else_body;
};
struct WhileStmt {
  ExprPtr condition;
  Block body;
};
struct BreakStmt {};
struct ContinueStmt {};
struct ReturnStmt {
  ExprPtr value;
};
struct PassStmt {};  // comments and "..." continuation lines

struct Stmt {
  int line = 0;
  std::variant<EdgeCallStmt, IsTrueCallStmt, WaitStmt, OtherAppCallStmt, AssignStmt,
               IfStmt, WhileStmt, BreakStmt, ContinueStmt, ReturnStmt, PassStmt>
      node;
};

struct PlanProgram {
  std::string name;  // "new_plan", or "plan" from older prompt wording
  Block body;
  std::string source_text;
};

using PlanProgramPtr = std::shared_ptr<const PlanProgram>;

struct SyntaxError {
  int line = 0;
  int col = 0;
  std::string message;
};

struct ParseResult {
  PlanProgramPtr program;  // null when errors is non-empty or body empty
  std::vector<SyntaxError> errors;
  bool ok() const { return program != nullptr; }
};

// Parses a model-emitted plan. Unsupported constructs become positioned
// syntax errors, never a partial silent parse.
ParseResult parse_plan(const std::string& text);

// Statements excluding no-ops (comments, "..."), counted recursively.
int count_statements(const Block& block);
inline int count_statements(const PlanProgram& p) { return count_statements(p.body); }

// ---------------------------------------------------------------------------
// Effects
// ---------------------------------------------------------------------------

struct DoEdge {
  std::string source;
  std::string action;
  bool imagined = false;
};
struct QueryTrue {
  std::string statement;
  bool compare_screen = false;
};
struct DoWait {};
struct SpawnSubAgent {
  std::string app_name;
  std::string sub_task;
};
struct Finished {
  std::string message;
};

using Effect = std::variant<DoEdge, QueryTrue, DoWait, SpawnSubAgent, Finished>;

// monostate: success token for DoEdge/DoWait; bool: QueryTrue answer;
// string: sub-agent outcome message.
using EffectResult = std::variant<std::monostate, bool, std::string>;

std::string effect_to_string(const Effect& e);

// ---------------------------------------------------------------------------
// Stepping interpreter
// ---------------------------------------------------------------------------

enum class ExecStatus { Running, AwaitingEffectResult, Finished, Failed };

struct RuntimeError {
  int line = 0;
  std::string message;
};

// Value type: copy freely, step() returns a new state. Frames point into the
// shared immutable program AST.
struct ExecState {
  PlanProgramPtr program;

  struct Frame {
    const Block* block = nullptr;
    size_t index = 0;
    bool is_loop_body = false;
  };
  std::vector<Frame> frames;
  Env env;
  int64_t steps_taken = 0;

  ExecStatus status = ExecStatus::Running;
  std::string finish_message;
  std::optional<RuntimeError> error;

  // Suspension bookkeeping for effectful expressions (isTRUE inside a
  // condition): resolved answers for the current statement, in evaluation
  // order.
  enum class Pending { None, AdvanceOnResult, ExprQuery };
  Pending pending = Pending::None;
  std::vector<bool> istrue_memo;

  // Set when a plan swap discards this state; stepping it again is a bug.
  bool poisoned = false;

  bool done() const {
    return status == ExecStatus::Finished || status == ExecStatus::Failed;
  }
};

ExecState make_exec_state(PlanProgramPtr program);

// Advances through pure statements and yields at most one Effect. When the
// previous step yielded, the matching result must be supplied.
std::pair<ExecState, std::optional<Effect>> step(
    ExecState state, std::optional<EffectResult> pending_result = std::nullopt);

// Never executes more than this many pure statements between two yielded
// effects; guards `while True:` bodies that touch no effect.
constexpr int64_t kPureStepBudget = 10000;

// ---------------------------------------------------------------------------
// Static checks and interpolation
// ---------------------------------------------------------------------------

struct Diagnostic {
  enum class Severity { MissingEdge, Dynamic, ImaginedInfo };
  Severity severity;
  int line = 0;
  std::string message;
};

// Flags non-imagined E() calls whose literal (source, action) pair has no
// edge in the graph. Interpolated calls are reported as dynamic, imagined
// calls as informational.
std::vector<Diagnostic> validate_plan(const PlanProgram& program,
                                      const wm::WorldModelGraph& graph);

// Throws Error naming the variable on an unbound slot.
std::string interpolate(const StringTemplate& tmpl, const Env& env);

}  // namespace fpwc::plan
