// Immutable symbolic expression trees: construction, canonicalization,
// differentiation, substitution and simplification.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace symdyn {

enum class ExprKind : std::uint8_t {
    Constant,
    Symbol,
    TimeFunction,
    Sin,
    Cos,
    Exp,
    Negate,
    Reciprocal,
    Power,
    Product,
    Sum,
};

/// Identifies a leaf variable: a plain symbol (order < 0) or a time
/// function of the given derivative order (order >= 0).
struct Slot {
    std::string name;
    int order = -1;

    bool is_time_function() const { return order >= 0; }

    friend bool operator==(const Slot& a, const Slot& b) {
        return a.order == b.order && a.name == b.name;
    }
    friend bool operator<(const Slot& a, const Slot& b) {
        if (a.name != b.name) return a.name < b.name;
        return a.order < b.order;
    }

    std::string label() const;
};

namespace detail {

inline std::uint64_t mix_hash(std::uint64_t h, std::uint64_t v) {
    // splitmix64-style combiner; content-only, stable across runs
    v += 0x9e3779b97f4a7c15ull + h;
    v = (v ^ (v >> 30)) * 0xbf58476d1ce4e5b9ull;
    v = (v ^ (v >> 27)) * 0x94d049bb133111ebull;
    return v ^ (v >> 31);
}

inline std::uint64_t hash_string(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline double normalize_zero(double v) { return v == 0.0 ? 0.0 : v; }

} // namespace detail

class Expr {
public:
    /// Default-constructs the constant 0.
    Expr() : Expr(constant(0.0)) {}

    // -- leaf factories -------------------------------------------------

    static Expr constant(double value);
    static Expr symbol(std::string name);
    static Expr time_function(std::string name, int order = 0);
    /// The time variable itself; d/dt of it is 1.
    static Expr time() { return symbol(time_name()); }
    static const std::string& time_name() {
        static const std::string n = "t";
        return n;
    }

    // -- canonicalizing composite factories ------------------------------

    static Expr sum(std::vector<Expr> ops);
    static Expr product(std::vector<Expr> ops);
    static Expr pow(const Expr& base, int exponent);
    static Expr sin(const Expr& a);
    static Expr cos(const Expr& a);
    static Expr exp(const Expr& a);
    static Expr negate(const Expr& a);
    static Expr reciprocal(const Expr& a);

    // -- observers -------------------------------------------------------

    ExprKind kind() const { return node_->kind; }
    double constant_value() const { return node_->value; }
    const std::string& name() const { return node_->name; }
    int order() const { return node_->iparam; }    // TimeFunction
    int exponent() const { return node_->iparam; } // Power
    const std::vector<Expr>& operands() const { return node_->args; }
    std::uint64_t hash() const { return node_->hash; }

    bool is_constant() const { return kind() == ExprKind::Constant; }
    bool is_constant(double v) const {
        return is_constant() && constant_value() == v;
    }

    Slot slot() const {
        if (kind() == ExprKind::Symbol) return Slot{name(), -1};
        if (kind() == ExprKind::TimeFunction) return Slot{name(), order()};
        throw std::logic_error("Expr::slot: node is not a leaf variable");
    }

    static Expr from_slot(const Slot& s) {
        return s.is_time_function() ? time_function(s.name, s.order)
                                    : symbol(s.name);
    }

    /// Tree node count (shared subtrees counted once per occurrence).
    std::size_t node_count() const;

    const void* identity() const { return node_.get(); }

    friend int struct_compare(const Expr& a, const Expr& b);
    friend bool struct_equal(const Expr& a, const Expr& b) {
        return struct_compare(a, b) == 0;
    }

private:
    struct Node {
        ExprKind kind;
        double value = 0.0;    // Constant
        std::string name;      // Symbol / TimeFunction
        int iparam = 0;        // TimeFunction order / Power exponent
        std::vector<Expr> args;
        std::uint64_t hash = 0;
    };

    explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

    static Expr make(Node&& n);

    std::shared_ptr<const Node> node_;
};

inline std::string Slot::label() const {
    if (order < 0) return name;
    std::string s = name;
    if (order >= 1 && order <= 2) s.append(order, '\'');
    else if (order > 2) s += "^(" + std::to_string(order) + ")";
    return s + "(t)";
}

// --------------------------------------------------------------------------
// construction
// --------------------------------------------------------------------------

inline Expr Expr::make(Node&& n) {
    std::uint64_t h = detail::mix_hash(0, static_cast<std::uint64_t>(n.kind));
    switch (n.kind) {
    case ExprKind::Constant:
        h = detail::mix_hash(h, std::bit_cast<std::uint64_t>(n.value));
        break;
    case ExprKind::Symbol:
        h = detail::mix_hash(h, detail::hash_string(n.name));
        break;
    case ExprKind::TimeFunction:
        h = detail::mix_hash(h, detail::hash_string(n.name));
        h = detail::mix_hash(h, static_cast<std::uint64_t>(n.iparam));
        break;
    case ExprKind::Power:
        h = detail::mix_hash(h, static_cast<std::uint64_t>(n.iparam));
        [[fallthrough]];
    default:
        for (const Expr& a : n.args) h = detail::mix_hash(h, a.hash());
        break;
    }
    n.hash = h;
    return Expr(std::make_shared<const Node>(std::move(n)));
}

inline Expr Expr::constant(double value) {
    Node n;
    n.kind = ExprKind::Constant;
    n.value = detail::normalize_zero(value);
    return make(std::move(n));
}

inline Expr Expr::symbol(std::string name) {
    if (name.empty()) throw std::invalid_argument("symbol: empty name");
    Node n;
    n.kind = ExprKind::Symbol;
    n.name = std::move(name);
    return make(std::move(n));
}

inline Expr Expr::time_function(std::string name, int order) {
    if (name.empty()) throw std::invalid_argument("time_function: empty name");
    if (order < 0) throw std::invalid_argument("time_function: negative order");
    Node n;
    n.kind = ExprKind::TimeFunction;
    n.name = std::move(name);
    n.iparam = order;
    return make(std::move(n));
}

// --------------------------------------------------------------------------
// total order
// --------------------------------------------------------------------------

inline int struct_compare(const Expr& a, const Expr& b) {
    if (a.node_ == b.node_) return 0;
    if (a.hash() != b.hash()) return a.hash() < b.hash() ? -1 : 1;
    if (a.kind() != b.kind())
        return static_cast<int>(a.kind()) < static_cast<int>(b.kind()) ? -1 : 1;
    switch (a.kind()) {
    case ExprKind::Constant: {
        const auto x = std::bit_cast<std::uint64_t>(a.constant_value());
        const auto y = std::bit_cast<std::uint64_t>(b.constant_value());
        return x == y ? 0 : (x < y ? -1 : 1);
    }
    case ExprKind::Symbol:
        return a.name().compare(b.name()) < 0   ? -1
               : a.name().compare(b.name()) > 0 ? 1
                                                : 0;
    case ExprKind::TimeFunction: {
        int c = a.name().compare(b.name());
        if (c != 0) return c < 0 ? -1 : 1;
        return a.order() == b.order() ? 0 : (a.order() < b.order() ? -1 : 1);
    }
    default: {
        if (a.kind() == ExprKind::Power && a.exponent() != b.exponent())
            return a.exponent() < b.exponent() ? -1 : 1;
        const auto& xa = a.operands();
        const auto& xb = b.operands();
        if (xa.size() != xb.size()) return xa.size() < xb.size() ? -1 : 1;
        for (std::size_t i = 0; i < xa.size(); ++i) {
            int c = struct_compare(xa[i], xb[i]);
            if (c != 0) return c;
        }
        return 0;
    }
    }
}

struct ExprLess {
    bool operator()(const Expr& a, const Expr& b) const {
        return struct_compare(a, b) < 0;
    }
};

inline std::size_t Expr::node_count() const {
    std::size_t n = 1;
    for (const Expr& a : operands()) n += a.node_count();
    return n;
}

// --------------------------------------------------------------------------
// canonicalizing factories
//
// Canonical form: Sum/Product operands flattened, sorted under the stable
// total order, constants folded into a single leading coefficient; products
// carry a positive constant factor with the sign pulled out into Negate;
// like terms and like factors are combined.
// --------------------------------------------------------------------------

namespace detail {

// term decomposition for sums: e == coeff * core
inline std::pair<double, Expr> split_coefficient(const Expr& e) {
    if (e.kind() == ExprKind::Negate) {
        auto [c, core] = split_coefficient(e.operands()[0]);
        return {-c, core};
    }
    if (e.kind() == ExprKind::Product && e.operands()[0].is_constant()) {
        const auto& ops = e.operands();
        double c = ops[0].constant_value();
        if (ops.size() == 2) return {c, ops[1]};
        std::vector<Expr> rest(ops.begin() + 1, ops.end());
        return {c, Expr::product(std::move(rest))};
    }
    return {1.0, e};
}

// factor decomposition for products: e == base ^ exponent
inline std::pair<Expr, int> split_power(const Expr& e) {
    if (e.kind() == ExprKind::Power) return {e.operands()[0], e.exponent()};
    if (e.kind() == ExprKind::Reciprocal) return {e.operands()[0], -1};
    return {e, 1};
}

inline double pow_int(double x, int n) {
    bool inv = n < 0;
    unsigned long long m =
        inv ? -static_cast<long long>(n) : static_cast<long long>(n);
    double acc = 1.0, base = x;
    while (m != 0) {
        if (m & 1ull) acc *= base;
        base *= base;
        m >>= 1;
    }
    return inv ? 1.0 / acc : acc;
}

} // namespace detail

inline Expr Expr::sum(std::vector<Expr> ops) {
    double acc = 0.0;
    std::map<Expr, double, ExprLess> terms;
    std::vector<Expr> stack(std::make_move_iterator(ops.rbegin()),
                            std::make_move_iterator(ops.rend()));
    while (!stack.empty()) {
        Expr e = std::move(stack.back());
        stack.pop_back();
        if (e.kind() == ExprKind::Sum) {
            const auto& a = e.operands();
            for (auto it = a.rbegin(); it != a.rend(); ++it) stack.push_back(*it);
            continue;
        }
        if (e.is_constant()) {
            acc += e.constant_value();
            continue;
        }
        auto [c, core] = detail::split_coefficient(e);
        terms[core] += c;
    }
    std::vector<Expr> out;
    out.reserve(terms.size() + 1);
    if (acc != 0.0) out.push_back(constant(acc));
    for (const auto& [core, c] : terms) {
        if (c == 0.0) continue;
        if (c == 1.0) out.push_back(core);
        else if (c == -1.0) out.push_back(negate(core));
        else out.push_back(product({constant(c), core}));
    }
    if (out.empty()) return constant(acc);
    if (out.size() == 1) return out[0];
    std::sort(out.begin(), out.end(), ExprLess{});
    Node n;
    n.kind = ExprKind::Sum;
    n.args = std::move(out);
    return make(std::move(n));
}

inline Expr Expr::product(std::vector<Expr> ops) {
    double coeff = 1.0;
    std::map<Expr, int, ExprLess> factors;
    std::vector<Expr> stack(std::make_move_iterator(ops.rbegin()),
                            std::make_move_iterator(ops.rend()));
    while (!stack.empty()) {
        Expr e = std::move(stack.back());
        stack.pop_back();
        if (e.kind() == ExprKind::Product) {
            const auto& a = e.operands();
            for (auto it = a.rbegin(); it != a.rend(); ++it) stack.push_back(*it);
            continue;
        }
        if (e.kind() == ExprKind::Negate) {
            coeff = -coeff;
            stack.push_back(e.operands()[0]);
            continue;
        }
        if (e.is_constant()) {
            coeff *= e.constant_value();
            continue;
        }
        auto [base, n] = detail::split_power(e);
        factors[base] += n;
    }
    if (coeff == 0.0) return constant(0.0);
    std::vector<Expr> out;
    out.reserve(factors.size() + 1);
    for (const auto& [base, n] : factors) {
        if (n == 0) continue; // x^0 -> 1
        if (n == 1) out.push_back(base);
        else out.push_back(pow(base, n));
    }
    const bool neg = coeff < 0.0;
    const double mag = neg ? -coeff : coeff;
    if (out.empty()) return constant(coeff);
    if (mag != 1.0) out.push_back(constant(mag));
    std::sort(out.begin(), out.end(), ExprLess{});
    Expr result = [&] {
        if (out.size() == 1) return out[0];
        Node n;
        n.kind = ExprKind::Product;
        n.args = std::move(out);
        return make(std::move(n));
    }();
    return neg ? negate(result) : result;
}

inline Expr Expr::pow(const Expr& base, int exponent) {
    if (exponent == 0) return constant(1.0);
    if (exponent == 1) return base;
    if (base.is_constant())
        return constant(detail::pow_int(base.constant_value(), exponent));
    switch (base.kind()) {
    case ExprKind::Power:
        return pow(base.operands()[0], base.exponent() * exponent);
    case ExprKind::Reciprocal:
        return pow(base.operands()[0], -exponent);
    case ExprKind::Negate: {
        Expr p = pow(base.operands()[0], exponent);
        return (exponent % 2 == 0) ? p : negate(p);
    }
    case ExprKind::Product: {
        std::vector<Expr> ops;
        ops.reserve(base.operands().size());
        for (const Expr& f : base.operands()) ops.push_back(pow(f, exponent));
        return product(std::move(ops));
    }
    default:
        break;
    }
    if (exponent == -1) {
        Node n;
        n.kind = ExprKind::Reciprocal;
        n.args = {base};
        return make(std::move(n));
    }
    Node n;
    n.kind = ExprKind::Power;
    n.iparam = exponent;
    n.args = {base};
    return make(std::move(n));
}

inline Expr Expr::negate(const Expr& a) {
    if (a.is_constant()) return constant(-a.constant_value());
    if (a.kind() == ExprKind::Negate) return a.operands()[0];
    Node n;
    n.kind = ExprKind::Negate;
    n.args = {a};
    return make(std::move(n));
}

inline Expr Expr::reciprocal(const Expr& a) {
    if (a.is_constant()) {
        if (a.constant_value() != 0.0) return constant(1.0 / a.constant_value());
        // leave 1/0 symbolic; evaluation yields inf
    } else {
        switch (a.kind()) {
        case ExprKind::Reciprocal:
            return a.operands()[0];
        case ExprKind::Power:
            return pow(a.operands()[0], -a.exponent());
        case ExprKind::Negate:
            return negate(reciprocal(a.operands()[0]));
        case ExprKind::Product: {
            std::vector<Expr> ops;
            ops.reserve(a.operands().size());
            for (const Expr& f : a.operands()) ops.push_back(reciprocal(f));
            return product(std::move(ops));
        }
        default:
            break;
        }
    }
    Node n;
    n.kind = ExprKind::Reciprocal;
    n.args = {a};
    return make(std::move(n));
}

inline Expr Expr::sin(const Expr& a) {
    if (a.is_constant()) return constant(std::sin(a.constant_value()));
    if (a.kind() == ExprKind::Negate) return negate(sin(a.operands()[0]));
    Node n;
    n.kind = ExprKind::Sin;
    n.args = {a};
    return make(std::move(n));
}

inline Expr Expr::cos(const Expr& a) {
    if (a.is_constant()) return constant(std::cos(a.constant_value()));
    if (a.kind() == ExprKind::Negate) return cos(a.operands()[0]);
    Node n;
    n.kind = ExprKind::Cos;
    n.args = {a};
    return make(std::move(n));
}

inline Expr Expr::exp(const Expr& a) {
    if (a.is_constant()) return constant(std::exp(a.constant_value()));
    Node n;
    n.kind = ExprKind::Exp;
    n.args = {a};
    return make(std::move(n));
}

// --------------------------------------------------------------------------
// operators
// --------------------------------------------------------------------------

inline Expr operator+(const Expr& a, const Expr& b) { return Expr::sum({a, b}); }
inline Expr operator-(const Expr& a, const Expr& b) {
    return Expr::sum({a, Expr::negate(b)});
}
inline Expr operator*(const Expr& a, const Expr& b) {
    return Expr::product({a, b});
}
inline Expr operator/(const Expr& a, const Expr& b) {
    return Expr::product({a, Expr::reciprocal(b)});
}
inline Expr operator-(const Expr& a) { return Expr::negate(a); }

inline Expr operator+(const Expr& a, double b) { return a + Expr::constant(b); }
inline Expr operator+(double a, const Expr& b) { return Expr::constant(a) + b; }
inline Expr operator-(const Expr& a, double b) { return a - Expr::constant(b); }
inline Expr operator-(double a, const Expr& b) { return Expr::constant(a) - b; }
inline Expr operator*(const Expr& a, double b) { return a * Expr::constant(b); }
inline Expr operator*(double a, const Expr& b) { return Expr::constant(a) * b; }
inline Expr operator/(const Expr& a, double b) { return a / Expr::constant(b); }
inline Expr operator/(double a, const Expr& b) { return Expr::constant(a) / b; }

// --------------------------------------------------------------------------
// free variables
// --------------------------------------------------------------------------

namespace detail {

inline void collect_slots(const Expr& e, std::set<Slot>& out,
                          std::set<const void*>& seen) {
    if (!seen.insert(e.identity()).second) return;
    if (e.kind() == ExprKind::Symbol || e.kind() == ExprKind::TimeFunction) {
        out.insert(e.slot());
        return;
    }
    for (const Expr& a : e.operands()) collect_slots(a, out, seen);
}

} // namespace detail

inline std::vector<Slot> free_slots(const Expr& e) {
    std::set<Slot> s;
    std::set<const void*> seen;
    detail::collect_slots(e, s, seen);
    return {s.begin(), s.end()};
}

inline std::vector<Slot> free_slots(std::span<const Expr> exprs) {
    std::set<Slot> s;
    std::set<const void*> seen;
    for (const Expr& e : exprs) detail::collect_slots(e, s, seen);
    return {s.begin(), s.end()};
}

// --------------------------------------------------------------------------
// substitution
// --------------------------------------------------------------------------

/// Simultaneous substitution map; unbound variables pass through.
using Bindings = std::map<Slot, Expr>;

inline void bind(Bindings& b, const Expr& var, const Expr& replacement) {
    b[var.slot()] = replacement;
}
inline void bind(Bindings& b, const Expr& var, double value) {
    b[var.slot()] = Expr::constant(value);
}

namespace detail {

inline Expr rebuild(const Expr& e, std::vector<Expr>&& args) {
    switch (e.kind()) {
    case ExprKind::Sum: return Expr::sum(std::move(args));
    case ExprKind::Product: return Expr::product(std::move(args));
    case ExprKind::Power: return Expr::pow(args[0], e.exponent());
    case ExprKind::Sin: return Expr::sin(args[0]);
    case ExprKind::Cos: return Expr::cos(args[0]);
    case ExprKind::Exp: return Expr::exp(args[0]);
    case ExprKind::Negate: return Expr::negate(args[0]);
    case ExprKind::Reciprocal: return Expr::reciprocal(args[0]);
    default: return e;
    }
}

inline Expr substitute_impl(const Expr& e, const Bindings& b,
                            std::unordered_map<const void*, Expr>& memo) {
    if (auto it = memo.find(e.identity()); it != memo.end()) return it->second;
    Expr result = [&] {
        switch (e.kind()) {
        case ExprKind::Constant:
            return e;
        case ExprKind::Symbol:
        case ExprKind::TimeFunction: {
            auto it = b.find(e.slot());
            return it != b.end() ? it->second : e;
        }
        default: {
            std::vector<Expr> args;
            args.reserve(e.operands().size());
            for (const Expr& a : e.operands())
                args.push_back(substitute_impl(a, b, memo));
            return rebuild(e, std::move(args));
        }
        }
    }();
    memo.emplace(e.identity(), result);
    return result;
}

} // namespace detail

inline Expr substitute(const Expr& e, const Bindings& b) {
    std::unordered_map<const void*, Expr> memo;
    return detail::substitute_impl(e, b, memo);
}

// --------------------------------------------------------------------------
// differentiation
// --------------------------------------------------------------------------

/// Differentiation variable: time itself, a plain symbol, or a time
/// function of a specific order treated as an independent variable.
class DiffVar {
public:
    static DiffVar time() { return DiffVar(Mode::Time, {}); }
    static DiffVar sym(std::string name) {
        return DiffVar(Mode::Symbol, Slot{std::move(name), -1});
    }
    static DiffVar tf(std::string name, int order) {
        return DiffVar(Mode::TimeFunc, Slot{std::move(name), order});
    }
    static DiffVar of(const Expr& v) {
        Slot s = v.slot();
        return s.is_time_function() ? tf(s.name, s.order) : sym(s.name);
    }

    bool is_time() const { return mode_ == Mode::Time; }
    const Slot& slot() const { return slot_; }
    bool matches_symbol(const std::string& n) const {
        return mode_ == Mode::Symbol && slot_.name == n;
    }
    bool matches_tf(const std::string& n, int order) const {
        return mode_ == Mode::TimeFunc && slot_.order == order &&
               slot_.name == n;
    }

private:
    enum class Mode { Time, Symbol, TimeFunc };
    DiffVar(Mode m, Slot s) : mode_(m), slot_(std::move(s)) {}
    Mode mode_;
    Slot slot_;
};

namespace detail {

inline Expr diff_impl(const Expr& e, const DiffVar& v,
                      std::unordered_map<const void*, Expr>& memo) {
    if (auto it = memo.find(e.identity()); it != memo.end()) return it->second;
    Expr result = [&]() -> Expr {
        switch (e.kind()) {
        case ExprKind::Constant:
            return Expr::constant(0.0);
        case ExprKind::Symbol:
            if (v.matches_symbol(e.name())) return Expr::constant(1.0);
            if (v.is_time() && e.name() == Expr::time_name())
                return Expr::constant(1.0);
            return Expr::constant(0.0);
        case ExprKind::TimeFunction:
            if (v.is_time())
                return Expr::time_function(e.name(), e.order() + 1);
            if (v.matches_tf(e.name(), e.order())) return Expr::constant(1.0);
            return Expr::constant(0.0);
        case ExprKind::Sum: {
            std::vector<Expr> parts;
            parts.reserve(e.operands().size());
            for (const Expr& a : e.operands())
                parts.push_back(diff_impl(a, v, memo));
            return Expr::sum(std::move(parts));
        }
        case ExprKind::Product: {
            const auto& ops = e.operands();
            std::vector<Expr> parts;
            parts.reserve(ops.size());
            for (std::size_t i = 0; i < ops.size(); ++i) {
                std::vector<Expr> f;
                f.reserve(ops.size());
                f.push_back(diff_impl(ops[i], v, memo));
                for (std::size_t j = 0; j < ops.size(); ++j)
                    if (j != i) f.push_back(ops[j]);
                parts.push_back(Expr::product(std::move(f)));
            }
            return Expr::sum(std::move(parts));
        }
        case ExprKind::Power: {
            const Expr& b = e.operands()[0];
            const int n = e.exponent();
            return Expr::product({Expr::constant(static_cast<double>(n)),
                                  Expr::pow(b, n - 1), diff_impl(b, v, memo)});
        }
        case ExprKind::Sin: {
            const Expr& a = e.operands()[0];
            return Expr::product({Expr::cos(a), diff_impl(a, v, memo)});
        }
        case ExprKind::Cos: {
            const Expr& a = e.operands()[0];
            return Expr::negate(
                Expr::product({Expr::sin(a), diff_impl(a, v, memo)}));
        }
        case ExprKind::Exp: {
            const Expr& a = e.operands()[0];
            return Expr::product({e, diff_impl(a, v, memo)});
        }
        case ExprKind::Negate:
            return Expr::negate(diff_impl(e.operands()[0], v, memo));
        case ExprKind::Reciprocal: {
            const Expr& a = e.operands()[0];
            return Expr::negate(Expr::product(
                {diff_impl(a, v, memo), Expr::pow(a, -2)}));
        }
        }
        throw std::logic_error("diff: unreachable");
    }();
    memo.emplace(e.identity(), result);
    return result;
}

} // namespace detail

inline Expr differentiate(const Expr& e, const DiffVar& v) {
    std::unordered_map<const void*, Expr> memo;
    return detail::diff_impl(e, v, memo);
}

/// Total time derivative: time functions advance one order, t itself
/// differentiates to 1, plain symbols are constants.
inline Expr ddt(const Expr& e) { return differentiate(e, DiffVar::time()); }

/// Bindings that replace a time function (all orders up to max_order) by
/// the given function of t and its time derivatives.
inline Bindings prescribe(const std::string& tf_name, const Expr& fn_of_t,
                          int max_order = 4) {
    Bindings b;
    Expr d = fn_of_t;
    for (int k = 0; k <= max_order; ++k) {
        b[Slot{tf_name, k}] = d;
        d = ddt(d);
    }
    return b;
}

// --------------------------------------------------------------------------
// expand / simplify
// --------------------------------------------------------------------------

namespace detail {

// distributes products over sums and expands small integer powers of sums;
// children first
inline Expr expand_impl(const Expr& e,
                        std::unordered_map<const void*, Expr>& memo) {
    if (auto it = memo.find(e.identity()); it != memo.end()) return it->second;
    Expr result = [&]() -> Expr {
        std::vector<Expr> args;
        args.reserve(e.operands().size());
        for (const Expr& a : e.operands())
            args.push_back(expand_impl(a, memo));
        switch (e.kind()) {
        case ExprKind::Negate: {
            const Expr& a = args[0];
            if (a.kind() == ExprKind::Sum) {
                std::vector<Expr> parts;
                parts.reserve(a.operands().size());
                for (const Expr& x : a.operands())
                    parts.push_back(Expr::negate(x));
                return Expr::sum(std::move(parts));
            }
            return Expr::negate(a);
        }
        case ExprKind::Product: {
            // fold pairwise, distributing whenever either side is a sum
            Expr acc = args[0];
            for (std::size_t i = 1; i < args.size(); ++i) {
                const Expr& rhs = args[i];
                const bool ls = acc.kind() == ExprKind::Sum;
                const bool rs = rhs.kind() == ExprKind::Sum;
                if (!ls && !rs) {
                    acc = Expr::product({acc, rhs});
                    continue;
                }
                std::vector<Expr> lt =
                    ls ? acc.operands() : std::vector<Expr>{acc};
                std::vector<Expr> rt =
                    rs ? rhs.operands() : std::vector<Expr>{rhs};
                std::vector<Expr> parts;
                parts.reserve(lt.size() * rt.size());
                for (const Expr& x : lt)
                    for (const Expr& y : rt)
                        parts.push_back(Expr::product({x, y}));
                acc = Expr::sum(std::move(parts));
            }
            return acc;
        }
        case ExprKind::Power: {
            const Expr& b = args[0];
            const int n = e.exponent();
            if (b.kind() == ExprKind::Sum && n > 1 && n <= 8) {
                Expr acc = b;
                for (int k = 1; k < n; ++k)
                    acc = expand_impl(Expr::product({acc, b}), memo);
                return acc;
            }
            return Expr::pow(b, n);
        }
        default:
            return rebuild(e, std::move(args));
        }
    }();
    memo.emplace(e.identity(), result);
    return result;
}

inline Expr simplify_impl(const Expr& e,
                          std::unordered_map<const void*, Expr>& memo) {
    if (auto it = memo.find(e.identity()); it != memo.end()) return it->second;
    std::vector<Expr> args;
    args.reserve(e.operands().size());
    for (const Expr& a : e.operands()) args.push_back(simplify_impl(a, memo));
    Expr result = rebuild(e, std::move(args));
    memo.emplace(e.identity(), result);
    return result;
}

// sin^2(u) + cos^2(u) -> 1 for term pairs with equal coefficients
inline Expr collapse_pythagorean(const Expr& e,
                                 std::unordered_map<const void*, Expr>& memo) {
    if (auto it = memo.find(e.identity()); it != memo.end()) return it->second;
    std::vector<Expr> args;
    args.reserve(e.operands().size());
    for (const Expr& a : e.operands())
        args.push_back(collapse_pythagorean(a, memo));
    Expr result = rebuild(e, std::move(args));
    if (result.kind() == ExprKind::Sum) {
        struct Term {
            double coeff;
            Expr core;
            bool used = false;
        };
        std::vector<Term> terms;
        double acc = 0.0;
        for (const Expr& op : result.operands()) {
            if (op.is_constant()) {
                acc += op.constant_value();
                continue;
            }
            auto [c, core] = split_coefficient(op);
            terms.push_back({c, core});
        }
        auto trig_arg = [](const Expr& core, ExprKind fn) -> const Expr* {
            if (core.kind() == ExprKind::Power && core.exponent() == 2 &&
                core.operands()[0].kind() == fn)
                return &core.operands()[0].operands()[0];
            return nullptr;
        };
        bool changed = false;
        for (std::size_t i = 0; i < terms.size(); ++i) {
            if (terms[i].used) continue;
            const Expr* s = trig_arg(terms[i].core, ExprKind::Sin);
            if (s == nullptr) continue;
            for (std::size_t j = 0; j < terms.size(); ++j) {
                if (j == i || terms[j].used) continue;
                if (terms[j].coeff != terms[i].coeff) continue;
                const Expr* c = trig_arg(terms[j].core, ExprKind::Cos);
                if (c != nullptr && struct_equal(*s, *c)) {
                    terms[i].used = terms[j].used = true;
                    acc += terms[i].coeff;
                    changed = true;
                    break;
                }
            }
        }
        if (changed) {
            std::vector<Expr> parts;
            if (acc != 0.0) parts.push_back(Expr::constant(acc));
            for (const Term& t : terms) {
                if (t.used) continue;
                parts.push_back(
                    Expr::product({Expr::constant(t.coeff), t.core}));
            }
            result = Expr::sum(std::move(parts));
        }
    }
    memo.emplace(e.identity(), result);
    return result;
}

} // namespace detail

struct SimplifyOptions {
    bool trig_identities = false; // sin^2 + cos^2 -> 1 (off by default)
};

/// Bottom-up rebuild through the canonicalizing constructors: constant
/// folding, identity elimination, double-negation removal, flattening and
/// like-term collection. Idempotent.
inline Expr simplify(const Expr& e, const SimplifyOptions& opts = {}) {
    std::unordered_map<const void*, Expr> memo;
    Expr s = detail::simplify_impl(e, memo);
    if (opts.trig_identities) {
        std::unordered_map<const void*, Expr> memo2;
        s = detail::collapse_pythagorean(s, memo2);
    }
    return s;
}

/// Distributes products over sums and expands integer powers of sums,
/// yielding a sum of monomials over the non-sum atoms.
inline Expr expand(const Expr& e) {
    std::unordered_map<const void*, Expr> memo;
    return detail::expand_impl(e, memo);
}

// --------------------------------------------------------------------------
// printing
// --------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

inline std::string to_string_impl(const Expr& e, int parent_prec);

// precedence: 0 sum, 1 product, 2 unary/power, 3 atom
inline int precedence(const Expr& e) {
    switch (e.kind()) {
    case ExprKind::Sum: return 0;
    case ExprKind::Product: return 1;
    case ExprKind::Negate:
    case ExprKind::Reciprocal:
    case ExprKind::Power: return 2;
    default: return 3;
    }
}

inline std::string to_string_impl(const Expr& e, int parent_prec) {
    std::string s;
    switch (e.kind()) {
    case ExprKind::Constant: {
        double v = e.constant_value();
        s = format_double(v);
        if (v < 0 && parent_prec > 0) s = "(" + s + ")";
        return s;
    }
    case ExprKind::Symbol:
        return e.name();
    case ExprKind::TimeFunction:
        return e.slot().label();
    case ExprKind::Sum: {
        const auto& ops = e.operands();
        for (std::size_t i = 0; i < ops.size(); ++i) {
            const Expr& op = ops[i];
            if (i == 0) {
                s += to_string_impl(op, 0);
            } else if (op.kind() == ExprKind::Negate) {
                s += " - " + to_string_impl(op.operands()[0], 1);
            } else if (op.is_constant() && op.constant_value() < 0) {
                s += " - " + format_double(-op.constant_value());
            } else {
                s += " + " + to_string_impl(op, 0);
            }
        }
        break;
    }
    case ExprKind::Product: {
        const auto& ops = e.operands();
        for (std::size_t i = 0; i < ops.size(); ++i) {
            if (i > 0) s += "*";
            s += to_string_impl(ops[i], 1);
        }
        break;
    }
    case ExprKind::Power:
        s = to_string_impl(e.operands()[0], 2) + "^" +
            (e.exponent() < 0 ? "(" + std::to_string(e.exponent()) + ")"
                              : std::to_string(e.exponent()));
        break;
    case ExprKind::Negate:
        s = "-" + to_string_impl(e.operands()[0], 2);
        break;
    case ExprKind::Reciprocal:
        s = "1/" + to_string_impl(e.operands()[0], 2);
        break;
    case ExprKind::Sin:
        return "sin(" + to_string_impl(e.operands()[0], 0) + ")";
    case ExprKind::Cos:
        return "cos(" + to_string_impl(e.operands()[0], 0) + ")";
    case ExprKind::Exp:
        return "exp(" + to_string_impl(e.operands()[0], 0) + ")";
    }
    if (precedence(e) < parent_prec) s = "(" + s + ")";
    return s;
}

} // namespace detail

inline std::string to_string(const Expr& e) {
    return detail::to_string_impl(e, 0);
}

} // namespace symdyn
