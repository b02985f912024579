#include "flaky/java_decl.hpp"

#include "flaky/error.hpp"

#include <boost/regex.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>

namespace flaky {

namespace {

struct Token {
    std::string text;
    bool ident = false;
};

bool ident_start(unsigned char c) { return std::isalpha(c) || c == '_' || c == '$' || c >= 0x80; }
bool ident_char(unsigned char c) { return std::isalnum(c) || c == '_' || c == '$' || c >= 0x80; }

std::vector<Token> lex(std::string_view s) {
    std::vector<Token> out;
    std::size_t i = 0;
    const auto n = s.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(s[i]);
        if (std::isspace(c)) {
            ++i;
        } else if (s.compare(i, 2, "//") == 0) {
            while (i < n && s[i] != '\n') ++i;
        } else if (s.compare(i, 2, "/*") == 0) {
            const auto end = s.find("*/", i + 2);
            if (end == std::string_view::npos) throw StructuralInputError("unterminated comment");
            i = end + 2;
        } else if (s.compare(i, 3, "\"\"\"") == 0) {
            const auto end = s.find("\"\"\"", i + 3);
            if (end == std::string_view::npos) throw StructuralInputError("unterminated text block");
            out.push_back({std::string(s.substr(i, end + 3 - i)), false});
            i = end + 3;
        } else if (c == '"' || c == '\'') {
            std::size_t j = i + 1;
            while (j < n && s[j] != static_cast<char>(c)) {
                if (s[j] == '\\') ++j;
                if (j < n && s[j] == '\n') throw StructuralInputError("unterminated literal");
                ++j;
            }
            if (j >= n) throw StructuralInputError("unterminated literal");
            out.push_back({std::string(s.substr(i, j + 1 - i)), false});
            i = j + 1;
        } else if (ident_start(c)) {
            std::size_t j = i;
            while (j < n && ident_char(static_cast<unsigned char>(s[j]))) ++j;
            out.push_back({std::string(s.substr(i, j - i)), true});
            i = j;
        } else if (std::isdigit(c)) {
            std::size_t j = i;
            while (j < n && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '.' || s[j] == '_')) ++j;
            out.push_back({std::string(s.substr(i, j - i)), false});
            i = j;
        } else if (s.compare(i, 3, "...") == 0) {
            out.push_back({"...", false});
            i += 3;
        } else {
            out.push_back({std::string(1, s[i]), false});
            ++i;
        }
    }
    return out;
}

bool is_modifier(const std::string& t) {
    static const std::set<std::string> mods = {"public",   "private",      "protected", "static",   "final",
                                               "abstract", "synchronized", "native",    "transient", "volatile",
                                               "strictfp", "default",      "sealed",    "non"};
    return mods.count(t) > 0;
}

std::string hash_tokens(const std::vector<Token>& toks, std::size_t from, std::size_t to) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = from; i < to; ++i) {
        for (unsigned char c : toks[i].text) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= ' ';
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

class Parser {
public:
    explicit Parser(std::vector<Token> toks) : t_(std::move(toks)) {}

    FileSummary run() {
        while (!done()) {
            if (is("package")) {
                ++i_;
                out_.package = join_until(";");
            } else if (is("import")) {
                ++i_;
                out_.imports.insert(join_until(";"));
            } else if (is(";")) {
                ++i_;
            } else {
                member(out_.package, nullptr);
            }
        }
        return std::move(out_);
    }

private:
    [[nodiscard]] bool done() const { return i_ >= t_.size(); }
    [[nodiscard]] bool is(std::string_view s) const { return !done() && t_[i_].text == s; }
    const Token& peek(std::size_t ahead = 0) const {
        static const Token eof{"", false};
        return i_ + ahead < t_.size() ? t_[i_ + ahead] : eof;
    }

    std::string join_until(std::string_view end) {
        std::string s;
        while (!done() && !is(end)) {
            if (!s.empty() && t_[i_].ident && std::isalnum(static_cast<unsigned char>(s.back()))) s.push_back(' ');
            s += t_[i_++].text;
        }
        if (done()) throw StructuralInputError("missing '" + std::string(end) + "'");
        ++i_;
        return s;
    }

    // Index just past the bracket matching the opener at position `at`.
    std::size_t match(std::size_t at) const {
        const std::string open = t_[at].text;
        const std::string close = open == "(" ? ")" : open == "{" ? "}" : "]";
        int depth = 0;
        for (std::size_t k = at; k < t_.size(); ++k) {
            if (t_[k].text == open) ++depth;
            if (t_[k].text == close && --depth == 0) return k + 1;
        }
        throw StructuralInputError("unbalanced '" + open + "'");
    }

    // Skips one annotation; returns its simple name.
    std::string annotation() {
        ++i_;  // '@'
        std::string name = peek().text;
        ++i_;
        while (is(".") && peek(1).ident) {
            name = peek(1).text;
            i_ += 2;
        }
        if (is("(")) i_ = match(i_);
        return name;
    }

    std::string qualify(const std::string& owner, const std::string& name) {
        return owner.empty() ? name : owner + "." + name;
    }

    void type_decl(const std::string& owner, std::string kind) {
        const std::string name = peek().text;
        ++i_;
        const auto qual = qualify(owner, name);
        while (!done() && !is("{")) {
            if (is("(")) {
                i_ = match(i_);
            } else {
                ++i_;
            }
        }
        if (done()) throw StructuralInputError("type " + name + " has no body");
        const auto end = match(i_);
        ++i_;
        TypeDecl decl;
        decl.kind = std::move(kind);
        auto& slot = out_.types[qual];
        if (decl.kind == "enum") enum_constants(end - 1);
        while (i_ < end - 1) member(qual, &decl);
        i_ = end;
        slot = std::move(decl);
    }

    void enum_constants(std::size_t body_end) {
        while (i_ < body_end && !is(";")) {
            if (is("(") || is("{")) {
                i_ = match(i_);
            } else {
                ++i_;
            }
        }
        if (is(";")) ++i_;
    }

    void member(const std::string& owner, TypeDecl* type) {
        bool test = false;
        while (!done() && (is("@") || is_modifier(peek().text) || (is("-") && peek(1).text == "sealed"))) {
            if (is("@") && peek(1).text == "interface") {
                i_ += 2;
                type_decl(owner, "@interface");
                return;
            }
            if (is("@")) {
                if (annotation() == "Test") test = true;
            } else {
                ++i_;
            }
        }
        if (done()) return;
        const auto& head = peek().text;
        if (head == "class" || head == "interface" || head == "enum" ||
            (head == "record" && peek(1).ident && peek(2).text != "=" && peek(2).text != ";")) {
            ++i_;
            type_decl(owner, head == "record" ? "record" : std::string(head));
            return;
        }
        if (head == "{") {
            i_ = match(i_);  // initializer block
            return;
        }
        if (head == ";") {
            ++i_;
            return;
        }

        // Method, constructor or field: scan to the first '(' , '=' or ';'.
        const std::size_t start = i_;
        int angle = 0;
        while (!done()) {
            const auto& x = peek().text;
            if (x == "<") ++angle;
            if (x == ">") --angle;
            if (angle <= 0 && (x == "(" || x == "=" || x == ";" || x == "{")) break;
            ++i_;
        }
        if (done()) throw StructuralInputError("unterminated declaration");
        if (is("(")) {
            method(start, type, test);
        } else {
            field(start, type);
        }
    }

    void method(std::size_t start, TypeDecl* type, bool test) {
        if (i_ == start || !t_[i_ - 1].ident) throw StructuralInputError("method without a name");
        MethodDecl m;
        m.name = t_[i_ - 1].text;
        m.is_test = test;
        const auto close = match(i_);
        m.param_types = params(i_ + 1, close - 1);
        i_ = close;
        while (!done() && !is("{") && !is(";")) {
            if (is("(")) {
                i_ = match(i_);
            } else {
                ++i_;
            }
        }
        if (done()) throw StructuralInputError("method " + m.name + " is unterminated");
        if (is("{")) {
            const auto end = match(i_);
            m.body_hash = hash_tokens(t_, i_ + 1, end - 1);
            i_ = end;
        } else {
            ++i_;
        }
        if (type) type->methods.push_back(std::move(m));
    }

    std::vector<std::string> params(std::size_t from, std::size_t to) {
        std::vector<std::string> out;
        std::vector<const Token*> cur;
        int depth = 0;
        auto flush = [&] {
            // Drop annotations, "final" and the trailing parameter name.
            std::vector<const Token*> kept;
            for (std::size_t k = 0; k < cur.size(); ++k) {
                if (cur[k]->text == "@") {
                    ++k;
                    while (k + 1 < cur.size() && cur[k + 1]->text == ".") k += 2;
                    if (k + 1 < cur.size() && cur[k + 1]->text == "(") {
                        int d = 0;
                        for (++k; k < cur.size(); ++k) {
                            if (cur[k]->text == "(") ++d;
                            if (cur[k]->text == ")" && --d == 0) break;
                        }
                    }
                    continue;
                }
                if (cur[k]->text == "final") continue;
                kept.push_back(cur[k]);
            }
            while (!kept.empty() && kept.back()->text == "]") kept.pop_back(), kept.pop_back();
            if (!kept.empty()) kept.pop_back();
            std::string type;
            for (const auto* k : kept) type += k->text;
            if (!type.empty()) out.push_back(type);
            cur.clear();
        };
        for (std::size_t k = from; k < to; ++k) {
            const auto& x = t_[k].text;
            if (x == "<" || x == "(") ++depth;
            if (x == ">" || x == ")") --depth;
            if (x == "," && depth == 0) {
                flush();
                continue;
            }
            cur.push_back(&t_[k]);
        }
        flush();
        return out;
    }

    void field(std::size_t start, TypeDecl* type) {
        // Declarator names: the identifier before each top-level '=', ',' or
        // the final ';'.
        std::vector<std::string> names;
        int depth = 0;
        bool in_init = false;
        std::size_t k = start;
        for (; k < t_.size(); ++k) {
            const auto& x = t_[k].text;
            if (x == "(" || x == "{" || x == "[") ++depth;
            if (x == ")" || x == "}" || x == "]") --depth;
            if (!in_init && x == "<") ++depth;
            if (!in_init && x == ">") --depth;
            if (depth != 0) continue;
            if (x == "=" || x == "," || x == ";") {
                if (!in_init) {
                    std::size_t j = k;
                    while (j > start && (t_[j - 1].text == "]" || t_[j - 1].text == "[")) --j;
                    if (j > start && t_[j - 1].ident) names.push_back(t_[j - 1].text);
                }
                in_init = x == "=";
                if (x == ";") break;
            }
        }
        if (k >= t_.size()) throw StructuralInputError("unterminated field");
        i_ = k + 1;
        if (type) type->fields.insert(names.begin(), names.end());
    }

    std::vector<Token> t_;
    std::size_t i_ = 0;
    FileSummary out_;
};

void diff_methods(const std::vector<MethodDecl>& before, const std::vector<MethodDecl>& after, StructuralDiff& d) {
    std::map<std::string, std::vector<const MethodDecl*>> b;
    std::map<std::string, std::vector<const MethodDecl*>> a;
    for (const auto& m : before) b[m.name].push_back(&m);
    for (const auto& m : after) a[m.name].push_back(&m);
    std::set<std::string> names;
    for (const auto& [n, v] : b) names.insert(n);
    for (const auto& [n, v] : a) names.insert(n);
    for (const auto& name : names) {
        auto bs = b[name];
        auto as = a[name];
        for (auto bi = bs.begin(); bi != bs.end();) {
            auto ai = std::find_if(as.begin(), as.end(),
                                   [&](const MethodDecl* m) { return m->param_types == (*bi)->param_types; });
            if (ai == as.end()) {
                ++bi;
                continue;
            }
            if ((*ai)->body_hash != (*bi)->body_hash) ++d.method_body_modified;
            as.erase(ai);
            bi = bs.erase(bi);
        }
        const auto changed = std::min(bs.size(), as.size());
        d.method_changed += static_cast<int>(changed);
        for (std::size_t k = changed; k < as.size(); ++k) {
            ++d.method_added;
            if (as[k]->is_test) ++d.tests_added;
        }
        for (std::size_t k = changed; k < bs.size(); ++k) {
            ++d.method_deleted;
            if (bs[k]->is_test) ++d.tests_deleted;
        }
    }
}

template <class Set>
void diff_sets(const Set& before, const Set& after, int& added, int& deleted) {
    for (const auto& x : after) {
        if (!before.count(x)) ++added;
    }
    for (const auto& x : before) {
        if (!after.count(x)) ++deleted;
    }
}

}  // namespace

std::string MethodDecl::signature() const {
    std::string s = name + "(";
    for (std::size_t i = 0; i < param_types.size(); ++i) {
        if (i) s += ",";
        s += param_types[i];
    }
    return s + ")";
}

FileSummary parse_java(std::string_view source) { return Parser(lex(source)).run(); }

int StructuralDiff::total() const {
    return class_added + class_deleted + class_modified + method_added + method_deleted + method_changed +
           method_body_modified + field_added + field_deleted + import_added + import_deleted;
}

StructuralDiff& StructuralDiff::operator+=(const StructuralDiff& o) {
    class_added += o.class_added;
    class_deleted += o.class_deleted;
    class_modified += o.class_modified;
    method_added += o.method_added;
    method_deleted += o.method_deleted;
    method_changed += o.method_changed;
    method_body_modified += o.method_body_modified;
    field_added += o.field_added;
    field_deleted += o.field_deleted;
    import_added += o.import_added;
    import_deleted += o.import_deleted;
    tests_added += o.tests_added;
    tests_deleted += o.tests_deleted;
    return *this;
}

StructuralDiff structural_diff(const FileSummary& before, const FileSummary& after) {
    StructuralDiff d;
    diff_sets(before.imports, after.imports, d.import_added, d.import_deleted);
    static const TypeDecl empty;
    for (const auto& [name, type] : after.types) {
        if (before.types.count(name)) continue;
        ++d.class_added;
        diff_methods({}, type.methods, d);
        diff_sets(empty.fields, type.fields, d.field_added, d.field_deleted);
    }
    for (const auto& [name, type] : before.types) {
        auto it = after.types.find(name);
        if (it == after.types.end()) {
            ++d.class_deleted;
            diff_methods(type.methods, {}, d);
            diff_sets(type.fields, empty.fields, d.field_added, d.field_deleted);
            continue;
        }
        StructuralDiff inner;
        diff_methods(type.methods, it->second.methods, inner);
        diff_sets(type.fields, it->second.fields, inner.field_added, inner.field_deleted);
        if (inner.total() > 0 || type.kind != it->second.kind) ++d.class_modified;
        d += inner;
    }
    return d;
}

StructuralDiff line_based_diff(std::string_view before, std::string_view after) {
    static const boost::regex type_re(R"(^\s*(?:@\w+\s+)*(?:\w+\s+)*(?:class|interface|enum|record)\s+\w+.*$)");
    static const boost::regex method_re(
        R"(^\s*(?:(?:public|private|protected|static|final|abstract|synchronized|native|default)\s+)*)"
        R"((?!(?:if|for|while|switch|catch|return|new|else|throw)\b)[\w<>\[\],.?]+(?:\s*<[^>]*>)?\s+\w+\s*\([^;]*\)\s*(?:throws\s+[\w.,\s]+)?\{?\s*$)");
    static const boost::regex field_re(
        R"(^\s*(?:(?:public|private|protected|static|final|transient|volatile)\s+)+[\w<>\[\],.?]+\s+\w+\s*(?:=.*)?;\s*$)");
    static const boost::regex import_re(R"(^\s*import\s+.*;\s*$)");
    static const boost::regex test_re(R"(^\s*@Test\b.*$)");

    auto lines = [](std::string_view text) {
        std::multiset<std::string> out;
        std::size_t start = 0;
        while (start < text.size()) {
            auto end = text.find('\n', start);
            if (end == std::string_view::npos) end = text.size();
            std::string line(text.substr(start, end - start));
            if (!line.empty() && line.back() == '\r') line.pop_back();
            out.insert(line);
            start = end + 1;
        }
        return out;
    };
    const auto b = lines(before);
    const auto a = lines(after);
    std::vector<std::string> added;
    std::vector<std::string> deleted;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(added));
    std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(deleted));

    StructuralDiff d;
    auto tally = [&](const std::vector<std::string>& ls, int& cls, int& met, int& fld, int& imp, int& tst) {
        for (const auto& l : ls) {
            if (boost::regex_match(l, import_re)) {
                ++imp;
            } else if (boost::regex_match(l, type_re)) {
                ++cls;
            } else if (boost::regex_match(l, field_re)) {
                ++fld;
            } else if (boost::regex_match(l, method_re)) {
                ++met;
            } else if (boost::regex_match(l, test_re)) {
                ++tst;
            }
        }
    };
    tally(added, d.class_added, d.method_added, d.field_added, d.import_added, d.tests_added);
    tally(deleted, d.class_deleted, d.method_deleted, d.field_deleted, d.import_deleted, d.tests_deleted);
    return d;
}

}  // namespace flaky
