#include "hybrid/diagnostics.hpp"

#include <cstdio>

namespace hybrid {

std::vector<GradcheckCase> gradcheck_matrix() {
  struct Shape {
    EncoderKind kind;
    std::size_t k, l;
  };
  const Shape shapes[] = {
      {EncoderKind::san, 0, 1},    {EncoderKind::san, 0, 2},    {EncoderKind::lstm, 1, 0},
      {EncoderKind::lstm, 2, 0},   {EncoderKind::onlstm, 1, 0}, {EncoderKind::onlstm, 2, 0},
      {EncoderKind::hybrid, 1, 1}, {EncoderKind::hybrid, 2, 1}, {EncoderKind::hybrid, 1, 2},
  };
  std::vector<GradcheckCase> out;
  for (const auto& s : shapes) {
    GradcheckCase c;
    EncoderConfig& e = c.model.encoder;
    e.kind = s.kind;
    e.recurrent_layers = s.k;
    e.attention_layers = s.l;
    e.dim = 8;
    e.heads = 2;
    e.ff_dim = 16;
    e.chunk = 2;
    e.dropout = 0;
    e.use_positional = s.kind == EncoderKind::san;
    e.use_short_cut = s.kind == EncoderKind::hybrid;
    c.model.classifier_hidden = 8;
    c.label = std::string(to_string(s.kind)) + " K=" + std::to_string(s.k) + " L=" + std::to_string(s.l);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<GradcheckCaseResult> run_gradcheck_matrix(double tolerance, std::uint64_t seed) {
  if (!kDoublePrecision) throw ConfigError("gradient checking needs the 64-bit build (hybrid64)");
  Rng rng = Rng(seed).substream("gradcheck");
  std::vector<logic::LabeledPair> pairs;
  for (int ops : {1, 3, 0, 2}) {
    pairs.push_back(logic::make_pair(logic::sample_expression(rng, ops), logic::sample_expression(rng, 2)));
  }
  std::vector<const logic::LabeledPair*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);

  std::vector<GradcheckCaseResult> results;
  for (const auto& c : gradcheck_matrix()) {
    PairModel model(c.model, seed);
    const PairBatch batch = make_batch(ptrs, c.model.keep_parentheses);
    auto loss = [&] { return cross_entropy(model.logits(batch), batch.labels); };
    results.push_back({c, gradient_check(model.params().items(), loss, tolerance)});
    GradTape::current().clear();
  }
  return results;
}

std::string format_gradcheck_report(std::span<const GradcheckCaseResult> results, double tolerance) {
  std::string out;
  char buf[256];
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%s %-18s worst %.3e\n", r.report.passed ? "PASS" : "FAIL", r.config.label.c_str(),
                  r.report.worst_relative_error());
    out += buf;
    if (!r.report.failure.empty()) out += "  " + r.report.failure + "\n";
    for (const auto& p : r.report.parameters) {
      std::snprintf(buf, sizeof buf, "  %-4s %-40s rel %.3e\n", p.passed ? "ok" : "BAD", p.name.c_str(),
                    p.relative_error);
      out += buf;
    }
    failed += !r.report.passed;
  }
  std::snprintf(buf, sizeof buf, "%zu of %zu cases within %.0e\n", results.size() - failed, results.size(), tolerance);
  out += buf;
  return out;
}

void trace_gates(const PairModel& model, std::span<const std::string> expressions, std::ostream& csv) {
  const RecurrentStack* stack = model.encoder().recurrent();
  if (stack == nullptr || stack->config().cell != CellKind::onlstm) {
    throw ConfigError("trace-gates needs a model with an ON-LSTM stage, this one is " +
                      std::string(to_string(model.config().encoder.kind)));
  }
  csv << "expr,layer,step,token,chunk,f_master,i_master\n";
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < expressions.size(); ++i) {
    const auto tokens = logic::token_ids(logic::parse_expression(expressions[i]), model.config().keep_parentheses);
    std::vector<std::string> text;
    for (int t : tokens) text.push_back(logic::token_text(t));
    EncoderDiagnostics diag;
    model.encoder().encode(tokens, SequenceLayout::single(tokens.size()), {}, &diag);
    write_gate_trace_csv(csv, i, diag.gates, text);
  }
}

}  // namespace hybrid
