#include <algorithm>

#include "ttm/error.hpp"
#include "ttm/numerics/rng.hpp"
#include "ttm/training.hpp"

namespace ttm {

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::arithmetic_chain: return "arithmetic_chain";
  }
  return "copy";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "copy") return TaskKind::copy;
  if (s == "reverse") return TaskKind::reverse;
  if (s == "arithmetic_chain") return TaskKind::arithmetic_chain;
  throw ConfigError("unknown task kind '" + std::string(s) + "'");
}

void TaskSpec::validate() const {
  if (alphabet < 2) throw ConfigError("task alphabet must have at least two symbols");
  if (count < 1) throw ConfigError("task count must be positive");
  const int min_length = kind == TaskKind::arithmetic_chain ? 4 : 1;
  if (length < min_length) throw ConfigError("task length too short for " + std::string(to_string(kind)));
}

int arithmetic_token(ArithOp op, int alphabet) { return alphabet + static_cast<int>(op); }

int task_vocab_size(const TaskSpec& spec) {
  return spec.kind == TaskKind::arithmetic_chain ? spec.alphabet + 6 : spec.alphabet;
}

int arithmetic_answer(std::span<const int> program, int alphabet) {
  const auto tok = [alphabet](ArithOp op) { return arithmetic_token(op, alphabet); };
  const auto number = [&](std::size_t i) {
    if (i >= program.size() || program[i] < 0 || program[i] >= alphabet) {
      throw FormatError("expected a number at program position " + std::to_string(i));
    }
    return program[i];
  };
  if (program.size() < 2 || program[0] != tok(ArithOp::init)) throw FormatError("program must start with INIT n");
  int value = number(1);
  std::size_t i = 2;
  while (i < program.size()) {
    const int t = program[i];
    if (t == tok(ArithOp::add)) {
      value += number(i + 1);
      i += 2;
    } else if (t == tok(ArithOp::sub)) {
      value -= number(i + 1);
      i += 2;
    } else if (t == tok(ArithOp::halve)) {
      value = value >= 0 ? value / 2 : -((-value + 1) / 2);
      i += 1;
    } else if (t == tok(ArithOp::twice)) {
      value *= 2;
      i += 1;
    } else if (t == tok(ArithOp::equals) && i + 1 == program.size()) {
      i += 1;
    } else {
      throw FormatError("unexpected token " + std::to_string(t) + " at program position " + std::to_string(i));
    }
  }
  return value;
}

namespace {

// One program whose running value stays inside [0, alphabet).
Example arithmetic_example(Rng& rng, int max_length, int alphabet) {
  const auto tok = [alphabet](ArithOp op) { return arithmetic_token(op, alphabet); };
  std::vector<int> prog{tok(ArithOp::init)};
  int value = static_cast<int>(rng.below(static_cast<std::uint64_t>(alphabet)));
  prog.push_back(value);
  int budget = max_length - 3;
  const int wanted = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, budget / 2))));
  for (int op = 0; op < wanted && budget > 0; ++op) {
    std::vector<ArithOp> options;
    if (budget >= 2 && value < alphabet - 1) options.push_back(ArithOp::add);
    if (budget >= 2 && value > 0) options.push_back(ArithOp::sub);
    if (value > 0) options.push_back(ArithOp::halve);
    if (2 * value < alphabet && value > 0) options.push_back(ArithOp::twice);
    if (options.empty()) break;
    const ArithOp pick = options[rng.below(options.size())];
    prog.push_back(tok(pick));
    switch (pick) {
      case ArithOp::add: {
        const int operand = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(alphabet - 1 - value)));
        prog.push_back(operand);
        value += operand;
        budget -= 2;
        break;
      }
      case ArithOp::sub: {
        const int operand = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(value)));
        prog.push_back(operand);
        value -= operand;
        budget -= 2;
        break;
      }
      case ArithOp::halve:
        value /= 2;
        budget -= 1;
        break;
      default:
        value *= 2;
        budget -= 1;
        break;
    }
  }
  prog.push_back(tok(ArithOp::equals));
  std::vector<int> target(prog.size(), -1);
  target.back() = value;
  return {prog, target};
}

}  // namespace

std::vector<Example> make_task(const TaskSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int e = 0; e < spec.count; ++e) {
    if (spec.kind == TaskKind::arithmetic_chain) {
      out.push_back(arithmetic_example(rng, spec.length, spec.alphabet));
      continue;
    }
    std::vector<int> seq(static_cast<std::size_t>(spec.length));
    for (auto& v : seq) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.alphabet)));
    std::vector<int> target = seq;
    if (spec.kind == TaskKind::reverse) std::reverse(target.begin(), target.end());
    out.push_back({std::move(seq), std::move(target)});
  }
  return out;
}

double exact_accuracy(const ModelParams& params, std::span<const Example> data, const ForwardOptions& opts) {
  if (data.empty()) throw ConfigError("accuracy needs at least one example");
  std::size_t correct = 0;
  for (const auto& ex : data) {
    const auto out = model_forward(params, ex.input, opts);
    bool all = true;
    for (const auto& [row, label] : labelled_positions(ex)) {
      Index best = 0;
      out.logits.row(row).maxCoeff(&best);
      all = all && best == label;
    }
    if (all) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace ttm
