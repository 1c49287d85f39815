#pragma once

// A second, structurally different plan evaluator used to cross-check the
// production stepping interpreter. It walks the AST recursively and resolves
// every effect synchronously through a handler callback, with none of the
// frame/suspension machinery of the production code.

#include <functional>
#include <string>
#include <variant>

#include "fpwc/plan_dsl.hpp"

namespace refeval {

namespace plan = fpwc::plan;

struct Outcome {
  std::string status;   // "finished" | "failed"
  std::string message;  // finish message or error message
  plan::Env env;
};

class Evaluator {
public:
  using Handler = std::function<plan::EffectResult(const plan::Effect&)>;

  explicit Evaluator(Handler handler) : handler_(std::move(handler)) {}

  Outcome run(const plan::PlanProgram& program) {
    env_.clear();
    return_message_.clear();
    try {
      Flow f = exec_block(program.body);
      if (f == Flow::Return) return {"finished", return_message_, env_};
      return {"finished", "plan exhausted", env_};
    } catch (const Abort& a) {
      return {"failed", a.message, env_};
    }
  }

private:
  enum class Flow { Normal, Break, Continue, Return };
  struct Abort {
    std::string message;
  };

  Flow exec_block(const plan::Block& block) {
    for (const auto& stmt : block) {
      Flow f = exec_stmt(stmt);
      if (f != Flow::Normal) return f;
    }
    return Flow::Normal;
  }

  Flow exec_stmt(const plan::Stmt& stmt) {
    using namespace plan;
    if (std::holds_alternative<PassStmt>(stmt.node)) return Flow::Normal;
    if (auto* a = std::get_if<AssignStmt>(&stmt.node)) {
      env_[a->var] = eval(*a->value);
      return Flow::Normal;
    }
    if (auto* e = std::get_if<EdgeCallStmt>(&stmt.node)) {
      handler_(Effect{DoEdge{str_of(*e->source), str_of(*e->action), e->imagined}});
      return Flow::Normal;
    }
    if (auto* q = std::get_if<IsTrueCallStmt>(&stmt.node)) {
      // Statement-level query: the answer is requested but discarded.
      handler_(Effect{QueryTrue{str_of(*q->statement), q->compare_screen}});
      return Flow::Normal;
    }
    if (std::holds_alternative<WaitStmt>(stmt.node)) {
      handler_(Effect{DoWait{}});
      return Flow::Normal;
    }
    if (auto* o = std::get_if<OtherAppCallStmt>(&stmt.node)) {
      handler_(Effect{SpawnSubAgent{str_of(*o->app_name), str_of(*o->sub_task)}});
      return Flow::Normal;
    }
    if (auto* i = std::get_if<IfStmt>(&stmt.node)) {
      for (const auto& branch : i->branches)
        if (truth(*branch.condition)) return exec_block(branch.body);
      return exec_block(i->else_body);
    }
    if (auto* w = std::get_if<WhileStmt>(&stmt.node)) {
      while (truth(*w->condition)) {
        Flow f = exec_block(w->body);
        if (f == Flow::Break) break;
        if (f == Flow::Return) return Flow::Return;
      }
      return Flow::Normal;
    }
    if (std::holds_alternative<BreakStmt>(stmt.node)) return Flow::Break;
    if (std::holds_alternative<ContinueStmt>(stmt.node)) return Flow::Continue;
    if (auto* r = std::get_if<ReturnStmt>(&stmt.node)) {
      return_message_ = str_of(*r->value);
      return Flow::Return;
    }
    throw Abort{"unknown statement kind"};
  }

  plan::Value eval(const plan::Expr& e) {
    using plan::Expr;
    switch (e.kind) {
      case Expr::Kind::IntLit:
        return e.int_value;
      case Expr::Kind::BoolLit:
        return e.bool_value;
      case Expr::Kind::Str:
        try {
          return plan::interpolate(e.str, env_);
        } catch (const fpwc::Error& err) {
          throw Abort{err.what()};
        }
      case Expr::Kind::Var: {
        auto it = env_.find(e.var_name);
        if (it == env_.end()) throw Abort{"unbound variable '" + e.var_name + "'"};
        return it->second;
      }
      case Expr::Kind::Not:
        return !truth(*e.lhs);
      case Expr::Kind::And:
        if (!truth(*e.lhs)) return false;
        return truth(*e.rhs);
      case Expr::Kind::Or:
        if (truth(*e.lhs)) return true;
        return truth(*e.rhs);
      case Expr::Kind::Compare: {
        plan::Value a = eval(*e.lhs);
        plan::Value b = eval(*e.rhs);
        return compare(a, b, e.compare_op);
      }
      case Expr::Kind::Add: {
        plan::Value a = eval(*e.lhs);
        plan::Value b = eval(*e.rhs);
        if (std::holds_alternative<int64_t>(a) && std::holds_alternative<int64_t>(b))
          return std::get<int64_t>(a) + std::get<int64_t>(b);
        if (std::holds_alternative<std::string>(a) &&
            std::holds_alternative<std::string>(b))
          return std::get<std::string>(a) + std::get<std::string>(b);
        throw Abort{"type mismatch in '+'"};
      }
      case Expr::Kind::IsTrue: {
        std::string statement = str_of(*e.lhs);
        plan::EffectResult r =
            handler_(plan::Effect{plan::QueryTrue{statement, e.compare_screen}});
        if (!std::holds_alternative<bool>(r)) throw Abort{"non-boolean query answer"};
        return std::get<bool>(r);
      }
    }
    throw Abort{"unknown expression kind"};
  }

  bool truth(const plan::Expr& e) {
    plan::Value v = eval(e);
    if (!std::holds_alternative<bool>(v))
      throw Abort{"condition did not evaluate to a boolean"};
    return std::get<bool>(v);
  }

  std::string str_of(const plan::Expr& e) { return plan::value_to_string(eval(e)); }

  static bool compare(const plan::Value& a, const plan::Value& b, const std::string& op) {
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
      throw Abort{"ordering comparison of booleans"};
    }
    throw Abort{"type mismatch in comparison"};
  }

  Handler handler_;
  plan::Env env_;
  std::string return_message_;
};

// Drives the production stepping interpreter to completion with the same
// synchronous handler, for comparison against Evaluator::run.
inline Outcome run_production(plan::PlanProgramPtr program,
                              const Evaluator::Handler& handler) {
  plan::ExecState st = plan::make_exec_state(std::move(program));
  std::optional<plan::EffectResult> pending;
  while (true) {
    auto [next, effect] = plan::step(std::move(st), pending);
    st = std::move(next);
    pending.reset();
    if (effect) {
      pending = handler(*effect);
      continue;
    }
    if (st.status == plan::ExecStatus::Finished)
      return {"finished", st.finish_message, st.env};
    if (st.status == plan::ExecStatus::Failed)
      return {"failed", st.error ? st.error->message : "unknown", st.env};
  }
}

// Deterministic effect oracle shared by both evaluation routes. Answers are a
// pure function of the statement text and the running call index, so two
// routes that issue the same effect sequence receive the same answers.
struct ScriptedEffects {
  uint64_t seed = 0;
  int calls = 0;
  std::vector<std::string> log;

  plan::EffectResult operator()(const plan::Effect& e) {
    log.push_back(plan::effect_to_string(e));
    ++calls;
    if (auto* q = std::get_if<plan::QueryTrue>(&e)) {
      uint64_t h = fpwc::util::fnv1a(q->statement) ^
                   (seed + static_cast<uint64_t>(calls) * 1315423911ull);
      return plan::EffectResult{(h % 3) != 0};
    }
    if (std::get_if<plan::SpawnSubAgent>(&e))
      return plan::EffectResult{std::string("sub-task done")};
    return plan::EffectResult{std::monostate{}};
  }
};

}  // namespace refeval
