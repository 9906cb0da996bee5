#include "hybrid/logic.hpp"

#include <cctype>

#include "hybrid/common.hpp"

namespace hybrid::logic {

namespace {

constexpr std::uint64_t kFull = ~std::uint64_t{0};

std::uint64_t atom_vector(int i) {
  std::uint64_t v = 0;
  for (int k = 0; k < 64; ++k) {
    if ((k >> i) & 1) v |= std::uint64_t{1} << k;
  }
  return v;
}

struct Token {
  std::string_view text;
  std::size_t offset;
};

std::vector<Token> lex(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char ch = static_cast<unsigned char>(s[i]);
    if (std::isspace(ch)) {
      ++i;
    } else if (ch == '(' || ch == ')') {
      out.push_back({s.substr(i, 1), i});
      ++i;
    } else if (std::isalpha(ch)) {
      const std::size_t start = i;
      while (i < s.size() && std::isalpha(static_cast<unsigned char>(s[i]))) ++i;
      out.push_back({s.substr(start, i - start), start});
    } else {
      throw ParseError("unexpected character '" + std::string(1, s[i]) + "'", i);
    }
  }
  return out;
}

class Parser {
 public:
  Parser(std::string_view text) : text_(text), tokens_(lex(text)) {}

  Expr parse() {
    Expr e = expression();
    if (pos_ != tokens_.size()) throw ParseError("trailing input '" + std::string(peek().text) + "'", peek().offset);
    return e;
  }

 private:
  const Token& peek() const {
    static const Token end{"", 0};
    return pos_ < tokens_.size() ? tokens_[pos_] : end;
  }
  std::size_t here() const { return pos_ < tokens_.size() ? tokens_[pos_].offset : text_.size(); }

  Token take(const char* expected) {
    if (pos_ >= tokens_.size()) throw ParseError(std::string("unexpected end of input, expected ") + expected, here());
    return tokens_[pos_++];
  }

  void expect(std::string_view what) {
    const std::size_t at = here();
    const Token t = take(std::string("'" + std::string(what) + "'").c_str());
    if (t.text != what) throw ParseError("expected '" + std::string(what) + "', got '" + std::string(t.text) + "'", at);
  }

  Expr expression() {
    const std::size_t at = here();
    const Token t = take("an expression");
    if (t.text == "(") {
      if (peek().text == "not") {
        ++pos_;
        Expr child = expression();
        expect(")");
        return Expr::negation(std::move(child));
      }
      Expr left = expression();
      expect("(");
      const std::size_t op_at = here();
      const Token op = take("'and' or 'or'");
      if (op.text != "and" && op.text != "or") {
        throw ParseError("expected 'and' or 'or', got '" + std::string(op.text) + "'", op_at);
      }
      Expr right = expression();
      expect(")");
      expect(")");
      return op.text == "and" ? Expr::conjunction(std::move(left), std::move(right))
                              : Expr::disjunction(std::move(left), std::move(right));
    }
    if (t.text.size() == 1 && t.text[0] >= 'a' && t.text[0] < 'a' + kAtomCount) return Expr::atom(t.text[0] - 'a');
    throw ParseError("expected an atom a-f or '(', got '" + std::string(t.text) + "'", at);
  }

  std::string_view text_;
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

void serialize_into(const Expr& e, std::string& out) {
  switch (e.kind()) {
    case Expr::Kind::atom:
      out += static_cast<char>('a' + e.atom_index());
      return;
    case Expr::Kind::negation:
      out += "( not ";
      serialize_into(e.child(), out);
      out += " )";
      return;
    case Expr::Kind::conjunction:
    case Expr::Kind::disjunction:
      out += "( ";
      serialize_into(e.left(), out);
      out += e.kind() == Expr::Kind::conjunction ? " ( and " : " ( or ";
      serialize_into(e.right(), out);
      out += " ) )";
      return;
  }
}

void tokens_into(const Expr& e, bool parens, std::vector<int>& out) {
  switch (e.kind()) {
    case Expr::Kind::atom:
      out.push_back(vocab::first_atom + e.atom_index());
      return;
    case Expr::Kind::negation:
      if (parens) out.push_back(vocab::open);
      out.push_back(vocab::op_not);
      tokens_into(e.child(), parens, out);
      if (parens) out.push_back(vocab::close);
      return;
    case Expr::Kind::conjunction:
    case Expr::Kind::disjunction:
      if (parens) out.push_back(vocab::open);
      tokens_into(e.left(), parens, out);
      if (parens) out.push_back(vocab::open);
      out.push_back(e.kind() == Expr::Kind::conjunction ? vocab::op_and : vocab::op_or);
      tokens_into(e.right(), parens, out);
      if (parens) {
        out.push_back(vocab::close);
        out.push_back(vocab::close);
      }
      return;
  }
}

}  // namespace

Expr Expr::atom(int index) {
  if (index < 0 || index >= kAtomCount) throw ContractError("atom index " + std::to_string(index) + " outside a..f");
  return Expr(std::make_shared<const Node>(Node{Kind::atom, index, {}}));
}

Expr Expr::negation(Expr child) {
  return Expr(std::make_shared<const Node>(Node{Kind::negation, 0, {std::move(child)}}));
}

Expr Expr::conjunction(Expr left, Expr right) {
  return Expr(std::make_shared<const Node>(Node{Kind::conjunction, 0, {std::move(left), std::move(right)}}));
}

Expr Expr::disjunction(Expr left, Expr right) {
  return Expr(std::make_shared<const Node>(Node{Kind::disjunction, 0, {std::move(left), std::move(right)}}));
}

bool operator==(const Expr& a, const Expr& b) {
  if (a.node_ == b.node_) return true;
  if (a.kind() != b.kind()) return false;
  if (a.kind() == Expr::Kind::atom) return a.atom_index() == b.atom_index();
  return a.node_->children == b.node_->children;
}

int operator_count(const Expr& e) {
  switch (e.kind()) {
    case Expr::Kind::atom: return 0;
    case Expr::Kind::negation: return 1 + operator_count(e.child());
    default: return 1 + operator_count(e.left()) + operator_count(e.right());
  }
}

std::uint64_t truth_vector(const Expr& e) {
  static const std::array<std::uint64_t, kAtomCount> atoms = [] {
    std::array<std::uint64_t, kAtomCount> a{};
    for (int i = 0; i < kAtomCount; ++i) a[i] = atom_vector(i);
    return a;
  }();
  switch (e.kind()) {
    case Expr::Kind::atom: return atoms[e.atom_index()];
    case Expr::Kind::negation: return ~truth_vector(e.child());
    case Expr::Kind::conjunction: return truth_vector(e.left()) & truth_vector(e.right());
    case Expr::Kind::disjunction: return truth_vector(e.left()) | truth_vector(e.right());
  }
  return 0;
}

Relation relate_vectors(std::uint64_t p, std::uint64_t h) {
  if (p == h) return Relation::equivalence;
  if ((p & ~h) == 0) return Relation::forward_entailment;
  if ((h & ~p) == 0) return Relation::reverse_entailment;
  const bool disjoint = (p & h) == 0;
  const bool exhaustive = (p | h) == kFull;
  if (disjoint) return exhaustive ? Relation::negation : Relation::alternation;
  if (exhaustive) return Relation::cover;
  return Relation::independence;
}

Relation relate(const Expr& premise, const Expr& hypothesis) {
  return relate_vectors(truth_vector(premise), truth_vector(hypothesis));
}

Relation converse(Relation r) {
  if (r == Relation::forward_entailment) return Relation::reverse_entailment;
  if (r == Relation::reverse_entailment) return Relation::forward_entailment;
  return r;
}

const char* relation_token(Relation r) {
  static const char* names[] = {"lt", "gt", "eq", "neg", "alt", "ind", "cov"};
  return names[static_cast<int>(r)];
}

const char* relation_symbol(Relation r) {
  static const char* names[] = {"⊏", "⊐", "≡", "∧", "|", "#", "⌣"};
  return names[static_cast<int>(r)];
}

Relation relation_from_string(std::string_view text) {
  static const char* ascii[] = {"<", ">", "=", "^", "|", "#", "v"};
  for (int i = 0; i < kRelationCount; ++i) {
    const auto r = static_cast<Relation>(i);
    if (text == relation_token(r) || text == relation_symbol(r) || text == ascii[i]) return r;
  }
  throw DataError("unknown relation label '" + std::string(text) + "'");
}

std::string serialize(const Expr& e) {
  std::string out;
  serialize_into(e, out);
  return out;
}

Expr parse_expression(std::string_view text) { return Parser(text).parse(); }

Expr sample_expression(Rng& rng, int op_count) {
  if (op_count < 0 || op_count > kMaxOperators) {
    throw ConfigError("operator count " + std::to_string(op_count) + " outside [0, " +
                      std::to_string(kMaxOperators) + "]");
  }
  if (op_count == 0) return Expr::atom(static_cast<int>(rng.below(kAtomCount)));
  const int rest = op_count - 1;
  switch (rng.below(3)) {
    case 0: return Expr::negation(sample_expression(rng, rest));
    case 1: {
      const int left = static_cast<int>(rng.below(static_cast<std::uint64_t>(rest) + 1));
      Expr l = sample_expression(rng, left);
      return Expr::conjunction(std::move(l), sample_expression(rng, rest - left));
    }
    default: {
      const int left = static_cast<int>(rng.below(static_cast<std::uint64_t>(rest) + 1));
      Expr l = sample_expression(rng, left);
      return Expr::disjunction(std::move(l), sample_expression(rng, rest - left));
    }
  }
}

std::vector<int> token_ids(const Expr& e, bool keep_parentheses) {
  std::vector<int> out;
  tokens_into(e, keep_parentheses, out);
  return out;
}

std::string token_text(int id) {
  switch (id) {
    case vocab::pad: return "<pad>";
    case vocab::open: return "(";
    case vocab::close: return ")";
    case vocab::op_not: return "not";
    case vocab::op_and: return "and";
    case vocab::op_or: return "or";
    default:
      if (id >= vocab::first_atom && id < vocab::first_atom + kAtomCount) {
        return std::string(1, static_cast<char>('a' + id - vocab::first_atom));
      }
      return "<unk>";
  }
}

}  // namespace hybrid::logic
