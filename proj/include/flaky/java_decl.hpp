#pragma once

// Declaration-level Java summaries (package, imports, types, methods,
// fields) and the counts of what changed between two versions of a file.

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace flaky {

struct MethodDecl {
    std::string name;
    std::vector<std::string> param_types;
    std::string body_hash;  // empty for abstract / interface methods
    bool is_test = false;  // carries @Test

    [[nodiscard]] std::string signature() const;  // name(T1,T2)
    friend bool operator==(const MethodDecl&, const MethodDecl&) = default;
};

struct TypeDecl {
    std::string kind;  // class, interface, enum, record, @interface
    std::vector<MethodDecl> methods;  // declaration order
    std::set<std::string> fields;

    friend bool operator==(const TypeDecl&, const TypeDecl&) = default;
};

struct FileSummary {
    std::string package;
    std::set<std::string> imports;
    std::map<std::string, TypeDecl> types;  // by qualified name, nested as Outer.Inner

    friend bool operator==(const FileSummary&, const FileSummary&) = default;
};

// Throws StructuralInputError when braces or parentheses do not balance.
FileSummary parse_java(std::string_view source);

struct StructuralDiff {
    int class_added = 0;
    int class_deleted = 0;
    int class_modified = 0;
    int method_added = 0;
    int method_deleted = 0;
    int method_changed = 0;  // same name, different parameter types
    int method_body_modified = 0;  // same signature, different body
    int field_added = 0;
    int field_deleted = 0;
    int import_added = 0;
    int import_deleted = 0;
    int tests_added = 0;
    int tests_deleted = 0;

    [[nodiscard]] int total() const;
    StructuralDiff& operator+=(const StructuralDiff& o);
    friend bool operator==(const StructuralDiff&, const StructuralDiff&) = default;
};

StructuralDiff structural_diff(const FileSummary& before, const FileSummary& after);

// Approximation from declaration-looking lines that appear only in one
// version. Used when a file does not parse.
StructuralDiff line_based_diff(std::string_view before, std::string_view after);

}  // namespace flaky
