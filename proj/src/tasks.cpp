#include "bgpo/tasks.hpp"

#include <algorithm>
#include <bit>
#include <map>

namespace bgpo {

namespace {

constexpr const char* kOps = "+-*";

TaskInstance make_copy(Rng& rng) {
  TaskInstance inst;
  inst.task = "copy";
  const std::size_t len = 3 + rng.below(4);
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<char>('a' + rng.below(8)));
  inst.expected = std::string(s.rbegin(), s.rend());
  inst.prompt = TokenSeq{Vocabulary::standard().encode("C" + s + "="), SeqRole::prompt};
  return inst;
}

TaskInstance make_parity(Rng& rng) {
  TaskInstance inst;
  inst.task = "parity";
  const std::size_t len = 4 + rng.below(5);
  std::string s;
  int ones = 0;
  for (std::size_t i = 0; i < len; ++i) {
    const bool bit = rng.bernoulli(0.5);
    ones += bit ? 1 : 0;
    s.push_back(bit ? '1' : '0');
  }
  inst.expected = ones % 2 == 1 ? "1" : "0";
  inst.prompt = TokenSeq{Vocabulary::standard().encode("P" + s + "="), SeqRole::prompt};
  return inst;
}

TaskInstance make_countdown(Rng& rng) {
  TaskInstance inst;
  inst.task = "countdown";
  while (true) {
    std::vector<int> nums(3);
    for (int& n : nums) n = 1 + static_cast<int>(rng.below(9));
    std::string expr;
    expr += static_cast<char>('0' + nums[0]);
    expr += kOps[rng.below(3)];
    expr += static_cast<char>('0' + nums[1]);
    expr += kOps[rng.below(3)];
    expr += static_cast<char>('0' + nums[2]);
    const long v = parse_expr(expr).value();
    if (v < 1 || v > kCountdownMaxTarget) continue;
    inst.numbers = nums;
    inst.target = static_cast<int>(v);
    inst.expected = expr;
    break;
  }
  std::string p = "N";
  for (int n : inst.numbers) p += static_cast<char>('0' + n);
  p += '>';
  p += static_cast<char>('0' + inst.target / 10);
  p += static_cast<char>('0' + inst.target % 10);
  p += '=';
  inst.prompt = TokenSeq{Vocabulary::standard().encode(p), SeqRole::prompt};
  return inst;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  ExprAst run() {
    if (text_.empty()) throw ParseError(0, "empty expression");
    ast_.root = expr();
    if (pos_ != text_.size()) fail("unexpected symbol");
    return std::move(ast_);
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    if (pos_ < text_.size()) throw ParseError(pos_, what + " '" + text_[pos_] + "'");
    throw ParseError(pos_, what + " (end of input)");
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  int node(char op, long value, int l, int r) {
    ast_.nodes.push_back({op, value, l, r});
    return static_cast<int>(ast_.nodes.size()) - 1;
  }

  int binary(char op, int l, int r) {
    const long a = ast_.nodes[l].value;
    const long b = ast_.nodes[r].value;
    const long v = op == '+' ? a + b : op == '-' ? a - b : a * b;
    return node(op, v, l, r);
  }

  int expr() {
    int lhs = term();
    while (peek() == '+' || peek() == '-') {
      const char op = text_[pos_++];
      lhs = binary(op, lhs, term());
    }
    return lhs;
  }

  int term() {
    int lhs = factor();
    while (peek() == '*') {
      ++pos_;
      lhs = binary('*', lhs, factor());
    }
    return lhs;
  }

  int factor() {
    const char c = peek();
    if (c >= '0' && c <= '9') {
      ++pos_;
      ast_.operands.push_back(c - '0');
      return node(0, c - '0', -1, -1);
    }
    if (c == '(') {
      ++pos_;
      const int inner = expr();
      if (peek() != ')') fail("expected ')'");
      ++pos_;
      return inner;
    }
    fail("expected a digit or '('");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  ExprAst ast_;
};

void parenthesize(const ExprAst& ast, int id, std::string& out) {
  const auto& n = ast.nodes[id];
  if (n.op == 0) {
    out += std::to_string(n.value);
    return;
  }
  out += '(';
  parenthesize(ast, n.left, out);
  out += n.op;
  parenthesize(ast, n.right, out);
  out += ')';
}

bool within_multiset(const std::vector<int>& used, const std::vector<int>& allowed) {
  std::map<int, int> count;
  for (int a : allowed) ++count[a];
  for (int u : used) {
    if (--count[u] < 0) return false;
  }
  return true;
}

}  // namespace

std::string ExprAst::parenthesized() const {
  std::string out;
  parenthesize(*this, root, out);
  return out;
}

ExprAst parse_expr(std::string_view text) { return Parser(text).run(); }

ExprAst parse_expr(std::string_view text, const std::vector<int>& numbers) {
  ExprAst ast = parse_expr(text);
  if (!within_multiset(ast.operands, numbers)) {
    throw ParseError(0, "operands exceed the given numbers");
  }
  return ast;
}

std::set<long> countdown_reachable(const std::vector<int>& numbers) {
  const std::size_t n = numbers.size();
  if (n == 0 || n > 6) throw std::invalid_argument("countdown_reachable needs 1..6 numbers");
  std::vector<std::set<long>> vals(std::size_t{1} << n);
  for (std::uint32_t m = 1; m < vals.size(); ++m) {
    if ((m & (m - 1)) == 0) {
      vals[m].insert(numbers[std::countr_zero(m)]);
      continue;
    }
    for (std::uint32_t a = (m - 1) & m; a > 0; a = (a - 1) & m) {
      const std::uint32_t b = m ^ a;
      for (long x : vals[a]) {
        for (long y : vals[b]) {
          vals[m].insert(x + y);
          vals[m].insert(x - y);
          vals[m].insert(x * y);
        }
      }
    }
  }
  std::set<long> all;
  for (const auto& s : vals) all.insert(s.begin(), s.end());
  return all;
}

std::string random_expression(const std::vector<int>& numbers, bool shuffle, Rng& rng) {
  std::vector<int> order = numbers;
  if (shuffle) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::string out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0) out += kOps[rng.below(3)];
    out += static_cast<char>('0' + order[i]);
  }
  return out;
}

const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names{"copy", "parity", "countdown"};
  return names;
}

TaskInstance gen_instance(std::string_view task, Rng& rng) {
  if (task == "copy") return make_copy(rng);
  if (task == "parity") return make_parity(rng);
  if (task == "countdown") return make_countdown(rng);
  throw std::invalid_argument("unknown task '" + std::string(task) +
                              "' (expected copy, parity or countdown)");
}

std::string answer_text(const TokenSeq& response) {
  const Vocabulary& v = Vocabulary::standard();
  std::string out;
  for (TokenId id : response.ids) {
    if (id == v.pad_id()) break;
    out.push_back(v.symbol(id));
  }
  return out;
}

double reward(const TaskInstance& inst, std::string_view answer, const RewardOptions& opts) {
  if (inst.task != "countdown") return answer == inst.expected ? 1.0 : 0.0;
  try {
    const ExprAst ast = parse_expr(answer, inst.numbers);
    if (ast.value() == inst.target) return 1.0;
    return opts.partial_credit ? 0.1 : 0.0;
  } catch (const ParseError&) {
    return 0.0;
  }
}

double reward(const TaskInstance& inst, const TokenSeq& response, const RewardOptions& opts) {
  return reward(inst, answer_text(response), opts);
}

std::string reference_answer(const TaskInstance& inst) { return inst.expected; }

std::string format_demo(const TaskInstance& inst, bool shuffle, Rng& rng) {
  if (inst.task == "countdown") return random_expression(inst.numbers, shuffle, rng);
  if (inst.task == "parity") return rng.bernoulli(0.5) ? "1" : "0";
  std::string s = inst.expected;
  for (std::size_t i = s.size(); i > 1; --i) std::swap(s[i - 1], s[rng.below(i)]);
  return s;
}

TokenSeq pad_response(std::string_view answer, std::size_t length) {
  const Vocabulary& v = Vocabulary::standard();
  if (answer.size() > length) throw std::invalid_argument("answer longer than the response");
  TokenSeq out{v.encode(answer), SeqRole::response};
  out.ids.resize(length, v.pad_id());
  return out;
}

}  // namespace bgpo
