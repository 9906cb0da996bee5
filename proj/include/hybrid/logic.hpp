#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "hybrid/rng.hpp"

namespace hybrid::logic {

inline constexpr int kAtomCount = 6;
inline constexpr int kMaxOperators = 12;

/// Immutable propositional formula over the atoms a..f. Copies share nodes.
class Expr {
 public:
  enum class Kind { atom, negation, conjunction, disjunction };

  static Expr atom(int index);
  static Expr negation(Expr child);
  static Expr conjunction(Expr left, Expr right);
  static Expr disjunction(Expr left, Expr right);

  Kind kind() const { return node_->kind; }
  int atom_index() const { return node_->atom; }
  const Expr& child() const { return node_->children[0]; }
  const Expr& left() const { return node_->children[0]; }
  const Expr& right() const { return node_->children[1]; }

  friend bool operator==(const Expr& a, const Expr& b);

 private:
  struct Node {
    Kind kind = Kind::atom;
    int atom = 0;
    std::vector<Expr> children;
  };
  explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

/// Number of not, and, or nodes.
int operator_count(const Expr& e);

/// Bit k is the value of e when atom i is (k >> i) & 1.
std::uint64_t truth_vector(const Expr& e);

/// Codes are stable and used as class indices.
enum class Relation : int {
  forward_entailment = 0,   // ⊏
  reverse_entailment = 1,   // ⊐
  equivalence = 2,          // ≡
  negation = 3,             // ∧
  alternation = 4,          // |
  independence = 5,         // #
  cover = 6,                // ⌣
};
inline constexpr int kRelationCount = 7;

Relation relate(const Expr& premise, const Expr& hypothesis);
Relation relate_vectors(std::uint64_t premise, std::uint64_t hypothesis);
Relation converse(Relation r);

/// File token: lt gt eq neg alt ind cov.
const char* relation_token(Relation r);
/// Mathematical symbol, UTF-8.
const char* relation_symbol(Relation r);
/// Accepts file tokens, UTF-8 symbols and the ASCII forms < > = ^ | # v.
Relation relation_from_string(std::string_view text);

/// Canonical text: atoms as letters, "( not x )", "( x ( and y ) )".
std::string serialize(const Expr& e);

/// Parses the canonical grammar. Whitespace between tokens is optional.
/// Throws ParseError carrying the byte offset of the offending token.
Expr parse_expression(std::string_view text);

/// Uniform recursive sampler: operators uniform over not/and/or, binary
/// operators split the remaining budget uniformly, atoms uniform.
Expr sample_expression(Rng& rng, int op_count);

/// Model vocabulary.
namespace vocab {
inline constexpr int pad = 0;
inline constexpr int open = 1;
inline constexpr int close = 2;
inline constexpr int first_atom = 3;  // a..f are 3..8
inline constexpr int op_not = 9;
inline constexpr int op_and = 10;
inline constexpr int op_or = 11;
inline constexpr int size = 12;
}  // namespace vocab

/// Token ids of the canonical text, optionally without parentheses.
std::vector<int> token_ids(const Expr& e, bool keep_parentheses = true);
std::string token_text(int id);

}  // namespace hybrid::logic
