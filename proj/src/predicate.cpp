/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#include "ei/predicate.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>

#include "ei/error.hpp"

namespace ei::query {

namespace {

enum class Type { Bool, Number, Text };

// column slot: -2 run, -1 event, otherwise a stored column
struct ColumnInfo {
    std::string name;
    int slot;
    Type type;
};

const std::vector<ColumnInfo>& column_table() {
    static const std::vector<ColumnInfo> table = [] {
        std::vector<ColumnInfo> t{{"run", -2, Type::Number}, {"event", -1, Type::Number}};
        for (std::size_t i = 0; i < rows::kColumnCount; ++i) {
            auto c = static_cast<rows::Col>(i);
            bool text = c >= rows::Guid0;
            t.push_back({std::string(rows::kColumns[i]), static_cast<int>(i), text ? Type::Text : Type::Number});
        }
        return t;
    }();
    return table;
}

const ColumnInfo* find_column(std::string_view name) {
    for (const auto& c : column_table())
        if (c.name == name) return &c;
    return nullptr;
}

std::string_view slot_text(const rows::RowView& row, int slot, std::string& scratch) {
    if (slot == -2) return scratch = std::to_string(row.key.run);
    if (slot == -1) return scratch = std::to_string(row.key.event);
    return row[static_cast<rows::Col>(slot)];
}

long double to_number(std::string_view s) {
    if (s.empty()) return 0;
    // integers stay exact: long double holds every 64-bit value
    std::uint64_t u = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), u);
    if (ec == std::errc() && p == s.data() + s.size()) return static_cast<long double>(u);
    return std::strtold(std::string(s).c_str(), nullptr);
}

std::string quote(std::string_view s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    return out + "'";
}

enum class Op { Eq, Ne, Lt, Le, Gt, Ge };

constexpr std::string_view op_text(Op op) {
    switch (op) {
        case Op::Eq: return "==";
        case Op::Ne: return "!=";
        case Op::Lt: return "<";
        case Op::Le: return "<=";
        case Op::Gt: return ">";
        case Op::Ge: return ">=";
    }
    return "?";
}

template <class T>
bool compare(Op op, const T& a, const T& b) {
    switch (op) {
        case Op::Eq: return a == b;
        case Op::Ne: return a != b;
        case Op::Lt: return a < b;
        case Op::Le: return a <= b;
        case Op::Gt: return a > b;
        case Op::Ge: return a >= b;
    }
    return false;
}

}  // namespace

struct Predicate::Node {
    enum class Kind { Or, And, Not, Cmp, Has, Const, Column, Number, Text } kind;
    std::shared_ptr<const Node> a, b;
    Op op = Op::Eq;
    bool value = false;
    int slot = 0;
    std::string text;       // column name, literal lexeme or has() needle
    long double number = 0;

    Type type() const {
        switch (kind) {
            case Kind::Column: return find_column(text)->type;
            case Kind::Number: return Type::Number;
            case Kind::Text: return Type::Text;
            default: return Type::Bool;
        }
    }

    bool eval(const rows::RowView& row) const {
        switch (kind) {
            case Kind::Or: return a->eval(row) || b->eval(row);
            case Kind::And: return a->eval(row) && b->eval(row);
            case Kind::Not: return !a->eval(row);
            case Kind::Const: return value;
            case Kind::Has: {
                std::string scratch;
                auto list = slot_text(row, a->slot, scratch);
                std::size_t pos = 0;
                while (pos <= list.size()) {
                    auto end = list.find(';', pos);
                    if (end == std::string_view::npos) end = list.size();
                    if (list.substr(pos, end - pos) == text) return true;
                    pos = end + 1;
                }
                return false;
            }
            case Kind::Cmp: {
                if (a->type() == Type::Number) return compare(op, a->num(row), b->num(row));
                std::string s1, s2;
                return compare(op, a->str(row, s1), b->str(row, s2));
            }
            default: return false;
        }
    }

    long double num(const rows::RowView& row) const {
        if (kind == Kind::Number) return number;
        if (slot == -2) return row.key.run;
        if (slot == -1) return static_cast<long double>(row.key.event);
        return to_number(row[static_cast<rows::Col>(slot)]);
    }

    std::string_view str(const rows::RowView& row, std::string& scratch) const {
        if (kind == Kind::Text) return text;
        return slot_text(row, slot, scratch);
    }

    std::string print() const {
        switch (kind) {
            case Kind::Or: return "(" + a->print() + " || " + b->print() + ")";
            case Kind::And: return "(" + a->print() + " && " + b->print() + ")";
            case Kind::Not:
                if (a->kind == Kind::Cmp) return "!(" + a->print() + ")";
                return "!" + a->print();
            case Kind::Cmp: return a->print() + " " + std::string(op_text(op)) + " " + b->print();
            case Kind::Has: return "has(" + a->text + ", " + quote(text) + ")";
            case Kind::Const: return value ? "true" : "false";
            case Kind::Column:
            case Kind::Number: return text;
            case Kind::Text: return quote(text);
        }
        return {};
    }
};

namespace {

using Node = Predicate::Node;
using NodePtr = std::shared_ptr<const Node>;

struct Token {
    enum class Kind { End, Ident, Number, String, Op, LParen, RParen, Comma } kind = Kind::End;
    std::string text;
    std::size_t pos = 0;
};

class Parser {
public:
    explicit Parser(std::string_view src) : src_(src) { advance(); }

    NodePtr parse_all(std::vector<std::string>& columns) {
        columns_ = &columns;
        auto n = parse_or();
        if (tok_.kind != Token::Kind::End) error("unexpected '" + tok_.text + "'", tok_.pos);
        require_bool(n, 0);
        return n;
    }

private:
    [[noreturn]] void error(const std::string& what, std::size_t pos) const {
        fail(ErrorCode::PredicateError, what + " at offset " + std::to_string(pos) + "\n  " + std::string(src_) +
                                            "\n  " + std::string(pos, ' ') + "^");
    }

    void require_bool(const NodePtr& n, std::size_t pos) const {
        if (n->type() != Type::Bool) error("expected a condition, found the value " + n->print(), pos);
    }

    void advance() {
        while (at_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[at_]))) ++at_;
        tok_ = Token{};
        tok_.pos = at_;
        if (at_ >= src_.size()) return;
        char c = src_[at_];
        auto two = src_.substr(at_, 2);
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            auto s = at_;
            while (at_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[at_])) || src_[at_] == '_')) ++at_;
            tok_ = {Token::Kind::Ident, std::string(src_.substr(s, at_ - s)), s};
        } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                   ((c == '-' || c == '.') && at_ + 1 < src_.size() &&
                    std::isdigit(static_cast<unsigned char>(src_[at_ + 1])))) {
            auto s = at_++;
            while (at_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[at_])) || src_[at_] == '.' ||
                                         ((src_[at_] == '-' || src_[at_] == '+') &&
                                          (src_[at_ - 1] == 'e' || src_[at_ - 1] == 'E'))))
                ++at_;
            tok_ = {Token::Kind::Number, std::string(src_.substr(s, at_ - s)), s};
        } else if (c == '\'') {
            auto s = at_++;
            std::string text;
            for (;;) {
                if (at_ >= src_.size()) error("unterminated string", s);
                char d = src_[at_++];
                if (d == '\'') break;
                if (d == '\\') {
                    if (at_ >= src_.size()) error("unterminated string", s);
                    d = src_[at_++];
                }
                text.push_back(d);
            }
            tok_ = {Token::Kind::String, std::move(text), s};
        } else if (two == "==" || two == "!=" || two == "<=" || two == ">=" || two == "&&" || two == "||") {
            tok_ = {Token::Kind::Op, std::string(two), at_};
            at_ += 2;
        } else if (c == '<' || c == '>' || c == '!') {
            tok_ = {Token::Kind::Op, std::string(1, c), at_++};
        } else if (c == '(') {
            tok_ = {Token::Kind::LParen, "(", at_++};
        } else if (c == ')') {
            tok_ = {Token::Kind::RParen, ")", at_++};
        } else if (c == ',') {
            tok_ = {Token::Kind::Comma, ",", at_++};
        } else {
            error(std::string("unexpected character '") + c + "'", at_);
        }
    }

    bool is_op(std::string_view op) const { return tok_.kind == Token::Kind::Op && tok_.text == op; }

    void expect(Token::Kind k, std::string_view what) {
        if (tok_.kind != k) error("expected " + std::string(what), tok_.pos);
        advance();
    }

    std::shared_ptr<Node> binary(Node::Kind kind, NodePtr a, NodePtr b) {
        auto n = std::make_shared<Node>();
        n->kind = kind;
        n->a = std::move(a);
        n->b = std::move(b);
        return n;
    }

    NodePtr parse_or() {
        auto pos = tok_.pos;
        auto left = parse_and();
        while (is_op("||")) {
            require_bool(left, pos);
            advance();
            pos = tok_.pos;
            auto right = parse_and();
            require_bool(right, pos);
            left = binary(Node::Kind::Or, left, right);
        }
        return left;
    }

    NodePtr parse_and() {
        auto pos = tok_.pos;
        auto left = parse_cmp();
        while (is_op("&&")) {
            require_bool(left, pos);
            advance();
            pos = tok_.pos;
            auto right = parse_cmp();
            require_bool(right, pos);
            left = binary(Node::Kind::And, left, right);
        }
        return left;
    }

    NodePtr parse_cmp() {
        auto pos = tok_.pos;
        auto left = parse_unary();
        static constexpr Op ops[] = {Op::Eq, Op::Ne, Op::Le, Op::Ge, Op::Lt, Op::Gt};
        for (auto op : ops) {
            if (!is_op(op_text(op))) continue;
            auto op_pos = tok_.pos;
            advance();
            auto rpos = tok_.pos;
            auto right = parse_unary();
            if (left->type() == Type::Bool) error("'" + std::string(op_text(op)) + "' compares values, not conditions", pos);
            if (right->type() == Type::Bool)
                error("'" + std::string(op_text(op)) + "' compares values, not conditions", rpos);
            if (left->type() != right->type())
                error("cannot compare " + left->print() + " with " + right->print() + " (numeric vs text)", op_pos);
            auto n = binary(Node::Kind::Cmp, left, right);
            n->op = op;
            return n;
        }
        return left;
    }

    NodePtr parse_unary() {
        if (is_op("!")) {
            advance();
            auto inner_pos = tok_.pos;
            auto inner = parse_unary();
            if (inner->type() != Type::Bool) error("'!' needs a condition", inner_pos);
            auto n = std::make_shared<Node>();
            n->kind = Node::Kind::Not;
            n->a = std::move(inner);
            return n;
        }
        return parse_atom();
    }

    NodePtr column(const Token& t) {
        const auto* c = find_column(t.text);
        if (!c) error("unknown column '" + t.text + "'", t.pos);
        if (std::find(columns_->begin(), columns_->end(), c->name) == columns_->end()) columns_->push_back(c->name);
        auto n = std::make_shared<Node>();
        n->kind = Node::Kind::Column;
        n->slot = c->slot;
        n->text = c->name;
        return n;
    }

    NodePtr parse_atom() {
        auto t = tok_;
        auto n = std::make_shared<Node>();
        switch (t.kind) {
            case Token::Kind::LParen: {
                advance();
                auto inner = parse_or();
                expect(Token::Kind::RParen, "')'");
                return inner;
            }
            case Token::Kind::Number: {
                advance();
                char* end = nullptr;
                n->number = std::strtold(t.text.c_str(), &end);
                if (end != t.text.c_str() + t.text.size() || !std::isfinite(n->number))
                    error("malformed number '" + t.text + "'", t.pos);
                n->kind = Node::Kind::Number;
                n->text = t.text;
                return n;
            }
            case Token::Kind::String:
                advance();
                n->kind = Node::Kind::Text;
                n->text = t.text;
                return n;
            case Token::Kind::Ident:
                advance();
                if (t.text == "true" || t.text == "false") {
                    n->kind = Node::Kind::Const;
                    n->value = t.text == "true";
                    return n;
                }
                if (t.text == "has" && tok_.kind == Token::Kind::LParen) {
                    advance();
                    auto ct = tok_;
                    if (ct.kind != Token::Kind::Ident) error("expected a column name", ct.pos);
                    advance();
                    auto col = column(ct);
                    if (col->type() != Type::Text) error("has() needs a text column", ct.pos);
                    expect(Token::Kind::Comma, "','");
                    if (tok_.kind != Token::Kind::String) error("expected a quoted name", tok_.pos);
                    n->text = tok_.text;
                    advance();
                    expect(Token::Kind::RParen, "')'");
                    n->kind = Node::Kind::Has;
                    n->a = col;
                    return n;
                }
                return column(t);
            case Token::Kind::End: error("unexpected end of expression", t.pos);
            default: error("unexpected '" + t.text + "'", t.pos);
        }
    }

    std::string_view src_;
    std::size_t at_ = 0;
    Token tok_;
    std::vector<std::string>* columns_ = nullptr;
};

}  // namespace

Predicate Predicate::parse(std::string_view text) {
    Predicate p;
    p.root_ = Parser(text).parse_all(p.columns_);
    return p;
}

bool Predicate::operator()(const rows::RowView& row) const { return root_->eval(row); }

std::string Predicate::str() const { return root_->print(); }

const std::vector<std::string>& column_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const auto& c : column_table()) n.push_back(c.name);
        return n;
    }();
    return names;
}

std::string column_text(const rows::RowView& row, std::string_view column) {
    const auto* c = find_column(column);
    if (!c) fail(ErrorCode::InvalidArgument, "unknown column '" + std::string(column) + "'");
    std::string scratch;
    return std::string(slot_text(row, c->slot, scratch));
}

}  // namespace ei::query
