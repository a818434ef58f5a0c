#pragma once

#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "bgpo/mdlm.hpp"

namespace bgpo {

struct TaskInstance {
  std::string task;
  TokenSeq prompt;
  /// copy / parity: the exact expected answer. countdown: the expression
  /// the target was generated from.
  std::string expected;
  /// countdown: the given numbers and the target.
  std::vector<int> numbers;
  int target = 0;
};

struct RewardOptions {
  /// countdown: 0.1 for an expression that parses and respects the operand
  /// multiset but misses the target.
  bool partial_credit = false;
};

/// Names accepted by gen_instance: copy, parity, countdown.
const std::vector<std::string>& task_names();

/// Throws std::invalid_argument for unknown task names.
TaskInstance gen_instance(std::string_view task, Rng& rng);

/// Answer text of a response: symbols before the first pad token.
std::string answer_text(const TokenSeq& response);

double reward(const TaskInstance& inst, const TokenSeq& response, const RewardOptions& opts = {});
double reward(const TaskInstance& inst, std::string_view answer, const RewardOptions& opts = {});

/// A correct answer for the instance.
std::string reference_answer(const TaskInstance& inst);

/// A well-formed answer that ignores the solution: a random letter
/// permutation for copy, a random bit for parity, random_expression over the
/// numbers for countdown.
std::string format_demo(const TaskInstance& inst, bool shuffle, Rng& rng);

/// Response of `length` tokens holding `answer` followed by pads.
TokenSeq pad_response(std::string_view answer, std::size_t length);

// ---------------------------------------------------------------------------
// Countdown expressions

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct ExprAst {
  struct Node {
    char op = 0;  // 0 for a number leaf, otherwise '+', '-' or '*'
    long value = 0;
    int left = -1;
    int right = -1;
  };
  std::vector<Node> nodes;
  int root = -1;
  /// Number leaves in source order.
  std::vector<int> operands;

  long value() const { return nodes.at(root).value; }
  /// Every binary operation wrapped in parentheses.
  std::string parenthesized() const;
};

/// expr := term (('+'|'-') term)* ; term := factor ('*' factor)* ;
/// factor := digit | '(' expr ')'. Digits are single operands.
ExprAst parse_expr(std::string_view text);
/// When `numbers` is given, also rejects operands outside that multiset.
ExprAst parse_expr(std::string_view text, const std::vector<int>& numbers);

/// Values of every expression over any nonempty sub-multiset of `numbers`,
/// with +, -, * and any parenthesization.
std::set<long> countdown_reachable(const std::vector<int>& numbers);

/// Flat expression using every number once with random operators; numbers
/// keep their order unless `shuffle` is set.
std::string random_expression(const std::vector<int>& numbers, bool shuffle, Rng& rng);

inline constexpr int kCountdownMaxTarget = 99;

}  // namespace bgpo
