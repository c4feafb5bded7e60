#pragma once

// LaTeX source cleaning and citation-context extraction.
//
// The cleaned form is plain text in which only a few structural commands
// survive: \title{..}, \chapter/\section/\subsection/\subsubsection{..},
// \begin{abstract}..\end{abstract} and citations, all of them rewritten to
// \cite{k1,k2}. Whitespace is collapsed to single spaces, which also joins
// sentences that were broken across source lines.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "citegraph/error.hpp"

namespace citegraph::latex {

inline constexpr int kMaxMacroDepth = 32;
inline constexpr int kMaxIncludeDepth = 16;

enum class BibFormat { bib, bbl, inline_env };

/// citation key -> arXiv id, or nullopt when the entry carries no id.
using BibliographyMap = std::map<std::string, std::optional<std::string>>;

struct CitationMention {
  std::string citation_key;
  std::optional<std::string> resolved_target;
  std::string sentence;
  std::optional<std::string> preceding;
  std::optional<std::string> following;
  bool in_related_work = false;

  bool operator==(const CitationMention&) const = default;
};

struct RelatedWorkSection {
  std::string title;
  std::string text;
};

/// Title phrases that mark a related-work section. Matching is on whole
/// words after lowercasing and replacing punctuation and digits by spaces.
inline const std::vector<std::string>& default_related_work_titles() {
  static const std::vector<std::string> titles = {
      "related work",
      "related works",
      "literature review",
      "review of literature",
      "review of the literature",
      "related research",
      "existing research",
      "related literature",
      "literature survey",
      "prior work",
      "prior works",
      "previous work",
      "previous works",
      "previous studies",
      "prior studies",
      "related studies",
      "existing work",
      "existing works",
      "existing approaches",
      "existing methods",
      "related approaches",
      "state of the art",
      "background",
      "prior art",
  };
  return titles;
}

namespace detail {

inline bool is_letter(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending = false;
  for (char c : s) {
    if (is_space(c)) {
      pending = !out.empty();
    } else {
      if (pending) out += ' ';
      pending = false;
      out += c;
    }
  }
  return out;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::size_t skip_spaces(std::string_view s, std::size_t i) {
  while (i < s.size() && is_space(s[i])) ++i;
  return i;
}

/// Index of the '}' matching the '{' at `open`, or npos.
inline std::size_t match_brace(std::string_view s, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    char c = s[i];
    if (c == '\\') {
      ++i;
      continue;
    }
    if (c == '{') ++depth;
    if (c == '}' && --depth == 0) return i;
  }
  return std::string_view::npos;
}

struct Arg {
  std::string text;
  std::size_t end = 0;  // one past the consumed input
  bool present = false;
};

/// Reads a mandatory argument: {group}, a control word, or one character.
inline Arg read_arg(std::string_view s, std::size_t i, Diagnostics* diag) {
  i = skip_spaces(s, i);
  if (i >= s.size()) return {"", i, false};
  if (s[i] == '{') {
    std::size_t close = match_brace(s, i);
    if (close == std::string_view::npos) {
      warn(diag, "unbalanced braces: unterminated group at offset " + std::to_string(i));
      return {std::string(s.substr(i + 1)), s.size(), true};
    }
    return {std::string(s.substr(i + 1, close - i - 1)), close + 1, true};
  }
  if (s[i] == '}') return {"", i, false};
  if (s[i] == '\\' && i + 1 < s.size()) {
    std::size_t j = i + 1;
    if (is_letter(s[j])) {
      while (j < s.size() && is_letter(s[j])) ++j;
    } else {
      ++j;
    }
    return {std::string(s.substr(i, j - i)), j, true};
  }
  return {std::string(1, s[i]), i + 1, true};
}

/// Reads an optional [argument]; brackets inside braces are ignored.
inline Arg read_optional(std::string_view s, std::size_t i) {
  std::size_t j = skip_spaces(s, i);
  if (j >= s.size() || s[j] != '[') return {"", i, false};
  int depth = 0;
  for (std::size_t k = j + 1; k < s.size(); ++k) {
    char c = s[k];
    if (c == '\\') {
      ++k;
      continue;
    }
    if (c == '{') ++depth;
    if (c == '}') --depth;
    if (c == ']' && depth == 0) return {std::string(s.substr(j + 1, k - j - 1)), k + 1, true};
  }
  return {"", i, false};
}

inline std::string read_control_word(std::string_view s, std::size_t i, std::size_t* end) {
  std::size_t j = i;
  while (j < s.size() && is_letter(s[j])) ++j;
  *end = j;
  return std::string(s.substr(i, j - i));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cleaning stages

/// Removes unescaped % comments together with the line break and the
/// leading blanks of the following line.
inline std::string strip_comments(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == '\\' && i + 1 < s.size()) {
      out += c;
      out += s[++i];
      continue;
    }
    if (c == '%') {
      std::size_t nl = s.find('\n', i);
      if (nl == std::string_view::npos) break;
      i = nl + 1;
      while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
      --i;
      continue;
    }
    out += c;
  }
  return out;
}

/// Inlines \input, \include and \subfile from `files` (keys with or without
/// the .tex suffix). Missing files are dropped with a warning.
inline std::string flatten_inputs(std::string_view s, const std::map<std::string, std::string>& files,
                                  Diagnostics* diag, int depth = 0) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 >= s.size()) {
      out += s[i];
      continue;
    }
    if (!detail::is_letter(s[i + 1])) {
      out += s[i];
      out += s[++i];
      continue;
    }
    std::size_t end = 0;
    std::string name = detail::read_control_word(s, i + 1, &end);
    if (name != "input" && name != "include" && name != "subfile") {
      out += '\\';
      out += name;
      i = end - 1;
      continue;
    }
    auto arg = detail::read_arg(s, end, diag);
    std::string file = detail::trim(arg.text);
    i = arg.end - 1;
    auto it = files.find(file);
    if (it == files.end()) it = files.find(file + ".tex");
    if (it == files.end() && file.size() > 4 && file.ends_with(".tex")) it = files.find(file.substr(0, file.size() - 4));
    if (it == files.end()) {
      warn(diag, "\\" + name + "{" + file + "}: file not found, dropped");
      continue;
    }
    if (depth >= kMaxIncludeDepth) {
      warn(diag, "\\" + name + "{" + file + "}: include depth exceeded, dropped");
      continue;
    }
    out += flatten_inputs(strip_comments(it->second), files, diag, depth + 1);
  }
  return out;
}

struct Macro {
  int nargs = 0;
  std::optional<std::string> default_arg;
  std::string body;
};

using MacroTable = std::unordered_map<std::string, Macro>;

/// Removes \newcommand / \renewcommand / \providecommand / \def /
/// \DeclareMathOperator definitions and returns them. Environment and
/// theorem definitions are removed without being recorded.
inline std::string collect_macros(std::string_view s, MacroTable& macros, Diagnostics* diag) {
  using namespace detail;
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 >= s.size()) {
      out += s[i];
      continue;
    }
    if (!is_letter(s[i + 1])) {
      out += s[i];
      out += s[++i];
      continue;
    }
    std::size_t end = 0;
    std::string cmd = read_control_word(s, i + 1, &end);
    std::size_t j = end;
    if (j < s.size() && s[j] == '*') ++j;

    auto read_name = [&](std::size_t& pos) -> std::string {
      pos = skip_spaces(s, pos);
      if (pos < s.size() && s[pos] == '{') {
        auto arg = read_arg(s, pos, diag);
        pos = arg.end;
        std::string t = trim(arg.text);
        return t.size() > 1 && t[0] == '\\' ? t.substr(1) : std::string{};
      }
      if (pos < s.size() && s[pos] == '\\') {
        std::size_t e = 0;
        std::string n = read_control_word(s, pos + 1, &e);
        pos = e;
        return n;
      }
      return {};
    };

    if (cmd == "newcommand" || cmd == "renewcommand" || cmd == "providecommand") {
      std::size_t pos = j;
      std::string name = read_name(pos);
      Macro m;
      auto n = read_optional(s, pos);
      if (n.present) {
        m.nargs = std::atoi(trim(n.text).c_str());
        pos = n.end;
        auto d = read_optional(s, pos);
        if (d.present) {
          m.default_arg = d.text;
          pos = d.end;
        }
      }
      auto body = read_arg(s, pos, diag);
      if (name.empty() || !body.present || m.nargs < 0 || m.nargs > 9) {
        warn(diag, "malformed \\" + cmd + " ignored");
        i = end - 1;
        continue;
      }
      m.body = body.text;
      if (cmd != "providecommand" || !macros.contains(name)) macros[name] = std::move(m);
      i = body.end - 1;
      continue;
    }
    if (cmd == "def" || cmd == "gdef" || cmd == "edef") {
      std::size_t pos = j;
      std::string name = read_name(pos);
      std::size_t brace = s.find('{', pos);
      if (name.empty() || brace == std::string_view::npos) {
        warn(diag, "malformed \\" + cmd + " ignored");
        i = end - 1;
        continue;
      }
      Macro m;
      m.nargs = static_cast<int>(std::count(s.begin() + static_cast<std::ptrdiff_t>(pos),
                                            s.begin() + static_cast<std::ptrdiff_t>(brace), '#'));
      auto body = read_arg(s, brace, diag);
      m.body = body.text;
      macros[name] = std::move(m);
      i = body.end - 1;
      continue;
    }
    if (cmd == "DeclareMathOperator") {
      std::size_t pos = j;
      std::string name = read_name(pos);
      auto body = read_arg(s, pos, diag);
      if (!name.empty()) macros[name] = Macro{0, std::nullopt, body.text};
      i = body.end - 1;
      continue;
    }
    if (cmd == "newenvironment" || cmd == "renewenvironment") {
      std::size_t pos = read_arg(s, j, diag).end;
      for (int k = 0; k < 2; ++k) {
        auto o = read_optional(s, pos);
        if (o.present) pos = o.end;
      }
      pos = read_arg(s, pos, diag).end;
      pos = read_arg(s, pos, diag).end;
      i = pos - 1;
      continue;
    }
    if (cmd == "newtheorem") {
      std::size_t pos = read_arg(s, j, diag).end;
      auto o = read_optional(s, pos);
      if (o.present) pos = o.end;
      pos = read_arg(s, pos, diag).end;
      o = read_optional(s, pos);
      if (o.present) pos = o.end;
      i = pos - 1;
      continue;
    }
    out += '\\';
    out += cmd;
    i = end - 1;
  }
  return out;
}

namespace detail {

inline std::string substitute_args(const std::string& body, const std::vector<std::string>& args) {
  std::string out;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] == '#' && i + 1 < body.size()) {
      char n = body[i + 1];
      if (n >= '1' && n <= '9') {
        std::size_t idx = static_cast<std::size_t>(n - '1');
        if (idx < args.size()) out += args[idx];
        ++i;
        continue;
      }
      if (n == '#') {
        out += '#';
        ++i;
        continue;
      }
    }
    out += body[i];
  }
  return out;
}

/// One left-to-right expansion pass. Returns the name of the first macro
/// expanded, or nullopt when nothing was expandable.
inline std::optional<std::string> expand_once(std::string& text, const MacroTable& macros, Diagnostics* diag) {
  std::string_view s = text;
  std::string out;
  out.reserve(s.size());
  std::optional<std::string> first;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 >= s.size()) {
      out += s[i];
      continue;
    }
    if (!is_letter(s[i + 1])) {
      out += s[i];
      out += s[++i];
      continue;
    }
    std::size_t end = 0;
    std::string name = read_control_word(s, i + 1, &end);
    auto it = macros.find(name);
    if (it == macros.end()) {
      out += '\\';
      out += name;
      i = end - 1;
      continue;
    }
    const Macro& m = it->second;
    std::vector<std::string> args;
    std::size_t pos = end;
    int remaining = m.nargs;
    if (m.default_arg && remaining > 0) {
      auto o = read_optional(s, pos);
      args.push_back(o.present ? o.text : *m.default_arg);
      if (o.present) pos = o.end;
      --remaining;
    }
    for (int k = 0; k < remaining; ++k) {
      auto a = read_arg(s, pos, diag);
      args.push_back(a.text);
      pos = a.end;
    }
    if (m.nargs == 0 && pos + 1 < s.size() && s[pos] == '{' && s[pos + 1] == '}') pos += 2;
    out += substitute_args(m.body, args);
    if (!first) first = name;
    i = pos - 1;
  }
  text = std::move(out);
  return first;
}

}  // namespace detail

/// Expands user macros pass by pass until a fixpoint. Throws when the
/// text still expands after kMaxMacroDepth passes (cyclic definitions).
inline std::string expand_macros(std::string text, const MacroTable& macros, Diagnostics* diag) {
  if (macros.empty()) return text;
  const std::size_t size_cap = 64 * text.size() + (1u << 20);
  for (int pass = 0; pass < kMaxMacroDepth; ++pass) {
    auto expanded = detail::expand_once(text, macros, diag);
    if (!expanded) return text;
    if (text.size() > size_cap) throw Error("macro expansion of \\" + *expanded + " exceeded the size cap");
  }
  std::string probe = text;
  if (auto name = detail::expand_once(probe, macros, diag)) {
    throw Error("macro expansion depth exceeded (" + std::to_string(kMaxMacroDepth) + ") while expanding \\" +
                *name);
  }
  return text;
}

namespace detail {

inline bool is_cite_command(const std::string& name) {
  static const std::set<std::string> names = {
      "cite",       "citep",      "citet",     "citealp",  "citealt",   "citeauthor", "citeyear",
      "citeyearpar", "citenum",   "parencite", "textcite", "autocite",  "footcite",   "smartcite",
      "supercite",  "Cite",       "Citep",     "Citet",    "Citealp",   "Citeauthor", "Parencite",
      "Textcite",   "Autocite",   "citeonline", "shortcite", "shortciteN", "citeN",    "citeA"};
  return names.contains(name);
}

inline int section_level(const std::string& name) {
  if (name == "chapter") return 0;
  if (name == "section") return 1;
  if (name == "subsection") return 2;
  if (name == "subsubsection") return 3;
  return -1;
}

// Commands removed together with their arguments: {optional count, mandatory count}.
inline const std::map<std::string, std::pair<int, int>>& dropped_with_args() {
  static const std::map<std::string, std::pair<int, int>> table = {
      {"label", {0, 1}},         {"ref", {0, 1}},           {"eqref", {0, 1}},         {"autoref", {0, 1}},
      {"cref", {0, 1}},          {"Cref", {0, 1}},          {"pageref", {0, 1}},       {"vspace", {0, 1}},
      {"hspace", {0, 1}},        {"includegraphics", {1, 1}}, {"bibliographystyle", {0, 1}},
      {"bibliography", {0, 1}},  {"usepackage", {1, 1}},    {"documentclass", {1, 1}}, {"setlength", {0, 2}},
      {"addtolength", {0, 2}},   {"setcounter", {0, 2}},    {"thanks", {0, 1}},        {"nocite", {0, 1}},
      {"author", {1, 1}},        {"date", {0, 1}},          {"affiliation", {1, 1}},   {"email", {0, 1}},
      {"address", {0, 1}},       {"keywords", {0, 1}},      {"pagestyle", {0, 1}},     {"thispagestyle", {0, 1}},
      {"graphicspath", {0, 1}},  {"color", {0, 1}},         {"hypersetup", {0, 1}},    {"input", {0, 1}},
      {"include", {0, 1}},       {"footnotetext", {1, 1}},  {"acmConference", {1, 3}}, {"institute", {0, 1}}};
  return table;
}

// Commands replaced by one of their arguments: {args dropped first, prefix with space}.
inline const std::map<std::string, std::pair<int, bool>>& unwrapped() {
  static const std::map<std::string, std::pair<int, bool>> table = {
      {"textbf", {0, false}},    {"textit", {0, false}},  {"emph", {0, false}},      {"texttt", {0, false}},
      {"textsc", {0, false}},    {"textrm", {0, false}},  {"textsf", {0, false}},    {"textup", {0, false}},
      {"textmd", {0, false}},    {"textnormal", {0, false}}, {"textsl", {0, false}}, {"underline", {0, false}},
      {"uline", {0, false}},     {"mbox", {0, false}},    {"hbox", {0, false}},      {"text", {0, false}},
      {"url", {0, false}},       {"footnote", {0, true}}, {"textcolor", {1, false}}, {"colorbox", {1, false}},
      {"href", {1, false}},      {"paragraph", {0, false}}, {"subparagraph", {0, false}}, {"mathrm", {0, false}},
      {"textsuperscript", {0, false}}, {"textsubscript", {0, false}}, {"enquote", {0, false}}};
  return table;
}

inline const std::set<std::string>& dropped_bare() {
  static const std::set<std::string> table = {
      "unskip",   "hfill",     "vfill",      "allowbreak", "noindent", "indent",    "centering",
      "raggedright", "raggedleft", "newline", "linebreak",  "pagebreak", "newpage",  "clearpage",
      "cleardoublepage", "par", "medskip",   "smallskip",  "bigskip",  "xspace",    "maketitle",
      "protect",  "item",      "tableofcontents", "appendix", "relax", "leavevmode", "null",
      "bf",       "it",        "em",         "sl",         "sc",       "rm",        "sf",
      "tt",       "small",     "large",      "Large",      "LARGE",    "huge",      "Huge",
      "footnotesize", "scriptsize", "tiny",  "normalsize", "itshape",  "bfseries",  "mdseries",
      "upshape",  "scshape",   "ttfamily",   "rmfamily",   "sffamily", "normalfont", "frontmatter",
      "mainmatter", "backmatter", "onecolumn", "twocolumn", "sloppy",  "nobreak",   "hline",
      "toprule",  "midrule",   "bottomrule", "selectfont", "ignorespaces", "printbibliography"};
  return table;
}

inline const std::set<std::string>& dropped_environments() {
  static const std::set<std::string> table = {
      "figure",  "figure*",   "table",      "table*",      "equation",   "equation*", "align",
      "align*",  "eqnarray",  "eqnarray*",  "gather",      "gather*",    "multline",  "multline*",
      "tabular", "tabular*",  "tabularx",   "algorithm",   "algorithm*", "algorithmic", "lstlisting",
      "verbatim", "verbatim*", "thebibliography", "comment", "displaymath", "wrapfigure", "minted",
      "tikzpicture", "subfigure", "flalign",  "flalign*",   "acks",        "CCSXML",    "filecontents",
      "filecontents*"};
  return table;
}

inline std::string format_cite(const std::string& keys_text) {
  std::string out;
  std::size_t start = 0;
  while (start <= keys_text.size()) {
    std::size_t comma = keys_text.find(',', start);
    if (comma == std::string::npos) comma = keys_text.size();
    std::string key = collapse_whitespace(keys_text.substr(start, comma - start));
    // keys never contain spaces; line-broken keys are rejoined
    key.erase(std::remove(key.begin(), key.end(), ' '), key.end());
    if (!key.empty()) {
      if (!out.empty()) out += ',';
      out += key;
    }
    start = comma + 1;
  }
  return out.empty() ? std::string{} : "\\cite{" + out + "}";
}

inline std::string strip_presentation(std::string_view s, Diagnostics* diag);

inline std::size_t skip_environment(std::string_view s, std::size_t pos, const std::string& env) {
  const std::string open = "\\begin{" + env + "}";
  const std::string close = "\\end{" + env + "}";
  int depth = 1;
  std::size_t i = pos;
  while (depth > 0) {
    std::size_t o = s.find(open, i);
    std::size_t c = s.find(close, i);
    if (c == std::string_view::npos) return std::string_view::npos;
    if (o != std::string_view::npos && o < c) {
      ++depth;
      i = o + open.size();
    } else {
      --depth;
      i = c + close.size();
    }
  }
  return i;
}

inline std::string strip_presentation(std::string_view s, Diagnostics* diag) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  // a dropped command swallows the blanks after it unless that would glue two words
  auto skip_trailing_spaces = [&](std::size_t p) {
    if (!out.empty() && !is_space(out.back())) return p;
    while (p < s.size() && (s[p] == ' ' || s[p] == '\t')) ++p;
    return p;
  };
  while (i < s.size()) {
    char c = s[i];
    if (c == '~') {
      out += ' ';
      ++i;
      continue;
    }
    if (c != '\\') {
      out += c;
      ++i;
      continue;
    }
    if (i + 1 >= s.size()) {
      out += c;
      ++i;
      continue;
    }
    char nxt = s[i + 1];
    if (!is_letter(nxt)) {
      if (nxt == '\\') {
        out += ' ';
        i += 2;
        auto o = read_optional(s, i);
        if (o.present) i = o.end;
        continue;
      }
      if (nxt == ' ' || nxt == '\n' || nxt == ',' || nxt == ';' || nxt == '!') {
        out += ' ';
        i += 2;
        continue;
      }
      out += c;
      out += nxt;
      i += 2;
      continue;
    }
    std::size_t end = 0;
    std::string name = read_control_word(s, i + 1, &end);
    bool star = end < s.size() && s[end] == '*';
    std::size_t j = star ? end + 1 : end;

    if (is_cite_command(name)) {
      for (int k = 0; k < 2; ++k) {
        auto o = read_optional(s, j);
        if (o.present) j = o.end;
      }
      auto keys = read_arg(s, j, diag);
      if (keys.present && keys.text.find('\\') == std::string::npos) {
        out += format_cite(keys.text);
        i = keys.end;
      } else {
        i = keys.present ? keys.end : j;
      }
      continue;
    }
    if (int level = section_level(name); level >= 0) {
      auto o = read_optional(s, j);
      if (o.present) j = o.end;
      auto title = read_arg(s, j, diag);
      out += "\\" + name + "{" + collapse_whitespace(strip_presentation(title.text, diag)) + "}";
      i = title.end;
      continue;
    }
    if (name == "title") {
      auto o = read_optional(s, j);
      if (o.present) j = o.end;
      auto title = read_arg(s, j, diag);
      out += "\\title{" + collapse_whitespace(strip_presentation(title.text, diag)) + "}";
      i = title.end;
      continue;
    }
    if (name == "begin" || name == "end") {
      auto env_arg = read_arg(s, j, diag);
      std::string env = trim(env_arg.text);
      std::size_t after = env_arg.end;
      if (name == "begin" && dropped_environments().contains(env)) {
        std::size_t stop = skip_environment(s, after, env);
        if (stop == std::string_view::npos) {
          warn(diag, "unterminated environment " + env);
          i = after;
        } else {
          i = stop;
        }
        out += ' ';
        continue;
      }
      if (env == "abstract") {
        out += " \\" + name + "{abstract} ";
      } else if (name == "begin") {
        // discard environment options such as [t] or {0.5\textwidth}
        auto o = read_optional(s, after);
        if (o.present) after = o.end;
        if (env == "minipage" || env == "subfigure") after = read_arg(s, after, diag).end;
        out += ' ';
      } else {
        out += ' ';
      }
      i = after;
      continue;
    }
    if (auto it = dropped_with_args().find(name); it != dropped_with_args().end()) {
      for (int k = 0; k < it->second.first; ++k) {
        auto o = read_optional(s, j);
        if (o.present) j = o.end;
      }
      for (int k = 0; k < it->second.second; ++k) j = read_arg(s, j, diag).end;
      i = skip_trailing_spaces(j);
      continue;
    }
    if (auto it = unwrapped().find(name); it != unwrapped().end()) {
      for (int k = 0; k < it->second.first; ++k) j = read_arg(s, j, diag).end;
      auto body = read_arg(s, j, diag);
      if (it->second.second) out += ' ';
      out += strip_presentation(body.text, diag);
      if (it->second.second) out += ' ';
      i = body.present ? body.end : j;
      continue;
    }
    if (dropped_bare().contains(name)) {
      if (name == "item") {
        auto o = read_optional(s, j);
        if (o.present) j = o.end;
      }
      i = skip_trailing_spaces(j);
      continue;
    }
    out += '\\';
    out += name;
    if (star) out += '*';
    i = j;
  }
  return out;
}

/// Removes empty {} groups until none remain.
inline std::string remove_empty_groups(std::string s) {
  for (;;) {
    std::string out;
    out.reserve(s.size());
    bool changed = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '\\' && i + 1 < s.size()) {
        out += s[i];
        out += s[++i];
        continue;
      }
      if (s[i] == '{' && i + 1 < s.size() && s[i + 1] == '}') {
        changed = true;
        // keep a control word separated from a following letter
        std::size_t k = out.size();
        while (k > 0 && is_letter(out[k - 1])) --k;
        bool after_control_word = k > 0 && k < out.size() && out[k - 1] == '\\';
        if (after_control_word && i + 2 < s.size() && is_letter(s[i + 2])) out += ' ';
        ++i;
        continue;
      }
      out += s[i];
    }
    s = std::move(out);
    if (!changed) return s;
  }
}

inline void check_brace_balance(std::string_view s, Diagnostics* diag) {
  long depth = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\') {
      ++i;
      continue;
    }
    if (s[i] == '{') ++depth;
    if (s[i] == '}' && --depth < 0) {
      warn(diag, "unbalanced braces: unexpected '}' at offset " + std::to_string(i));
      depth = 0;
    }
  }
  if (depth > 0) warn(diag, "unbalanced braces: " + std::to_string(depth) + " unclosed group(s)");
}

/// Splits off the document body; a \title from the preamble is kept in front.
inline std::string document_body(const std::string& text, Diagnostics* diag) {
  const std::string begin = "\\begin{document}";
  std::size_t b = text.find(begin);
  if (b == std::string::npos) return text;
  std::size_t e = text.find("\\end{document}", b);
  std::string body = text.substr(b + begin.size(), e == std::string::npos ? std::string::npos : e - b - begin.size());
  std::string_view pre(text.data(), b);
  std::string title;
  for (std::size_t p = pre.find("\\title"); p != std::string_view::npos; p = pre.find("\\title", p + 1)) {
    std::size_t after = p + 6;
    if (after < pre.size() && is_letter(pre[after])) continue;
    auto o = read_optional(pre, after);
    if (o.present) after = o.end;
    auto arg = read_arg(pre, after, diag);
    if (arg.present) title = "\\title{" + arg.text + "} ";
    break;
  }
  return title + body;
}

}  // namespace detail

/// Full cleaning pipeline for one document: comments, flattening, macro
/// expansion, presentation stripping, citation normalization. Idempotent.
inline std::string clean_latex(std::string_view source, const std::map<std::string, std::string>& files = {},
                               Diagnostics* diag = nullptr) {
  std::string text = flatten_inputs(strip_comments(source), files, diag);
  MacroTable macros;
  text = collect_macros(text, macros, diag);
  text = detail::document_body(text, diag);
  text = expand_macros(std::move(text), macros, diag);
  detail::check_brace_balance(text, diag);
  text = detail::strip_presentation(text, diag);
  text = detail::remove_empty_groups(detail::collapse_whitespace(text));
  return detail::collapse_whitespace(text);
}

// ---------------------------------------------------------------------------
// Bibliography

namespace detail {

inline const std::regex& arxiv_new_id() {
  static const std::regex re(R"((\d{4}\.\d{4,5})(v\d+)?)");
  return re;
}

inline const std::regex& arxiv_old_id() {
  static const std::regex re(R"(([a-z]+(?:-[a-z]+)*(?:\.[A-Z]{2})?/\d{7})(v\d+)?)");
  return re;
}

/// An id announced by an arXiv marker: "arXiv:ID", "arXiv ID", "abs/ID",
/// "arxiv.org/abs/ID", "10.48550/arXiv.ID".
inline std::optional<std::string> find_prefixed_arxiv_id(const std::string& text) {
  static const std::regex re(
      R"((?:arxiv\s*[:.]?\s*|abs/|arxiv\.org/(?:abs|pdf)/|10\.48550/arxiv\.)(\d{4}\.\d{4,5}|[a-z]+(?:-[a-z]+)*(?:\.[a-z]{2})?/\d{7}))",
      std::regex::icase);
  std::smatch m;
  if (!std::regex_search(text, m, re)) return std::nullopt;
  std::string id = m[1].str();
  // old-style archive names are lowercase, subject classes uppercase
  if (auto slash = id.find('/'); slash != std::string::npos) {
    std::string archive = id.substr(0, slash);
    auto dot = archive.find('.');
    for (std::size_t k = 0; k < archive.size(); ++k) {
      archive[k] = static_cast<char>(dot != std::string::npos && k > dot ? std::toupper(archive[k])
                                                                           : std::tolower(archive[k]));
    }
    id = archive + id.substr(slash);
  }
  return id;
}

inline std::optional<std::string> find_bare_arxiv_id(const std::string& text) {
  std::smatch m;
  if (std::regex_search(text, m, arxiv_new_id())) return m[1].str();
  if (std::regex_search(text, m, arxiv_old_id())) return m[1].str();
  return std::nullopt;
}

inline std::optional<std::string> bib_entry_arxiv_id(const std::map<std::string, std::string>& fields) {
  for (const char* key : {"eprint", "arxivid", "arxiv"}) {
    auto it = fields.find(key);
    if (it == fields.end()) continue;
    if (auto id = find_prefixed_arxiv_id(it->second)) return id;
    if (auto id = find_bare_arxiv_id(it->second)) return id;
  }
  for (const char* key : {"url", "doi", "journal", "booktitle", "volume", "note", "howpublished", "publisher"}) {
    auto it = fields.find(key);
    if (it == fields.end()) continue;
    if (auto id = find_prefixed_arxiv_id(it->second)) return id;
  }
  return std::nullopt;
}

inline BibliographyMap parse_bib(std::string_view s) {
  BibliographyMap out;
  std::size_t i = 0;
  while ((i = s.find('@', i)) != std::string_view::npos) {
    std::size_t j = i + 1;
    while (j < s.size() && is_letter(s[j])) ++j;
    std::string type = to_lower(s.substr(i + 1, j - i - 1));
    j = skip_spaces(s, j);
    if (type.empty() || j >= s.size() || (s[j] != '{' && s[j] != '(')) {
      i = j;
      continue;
    }
    const char close_char = s[j] == '{' ? '}' : ')';
    std::size_t close = s[j] == '{' ? match_brace(s, j) : s.find(')', j);
    if (close == std::string_view::npos) close = s.size();
    std::string_view entry = s.substr(j + 1, close - j - 1);
    i = close;
    if (type == "string" || type == "comment" || type == "preamble") continue;
    std::size_t comma = entry.find(',');
    std::string key = trim(entry.substr(0, comma));
    if (key.empty()) continue;
    std::map<std::string, std::string> fields;
    std::size_t p = comma == std::string_view::npos ? entry.size() : comma + 1;
    while (p < entry.size()) {
      p = skip_spaces(entry, p);
      while (p < entry.size() && (entry[p] == ',' || is_space(entry[p]))) ++p;
      std::size_t name_begin = p;
      while (p < entry.size() && (std::isalnum(static_cast<unsigned char>(entry[p])) || entry[p] == '_' ||
                                  entry[p] == '-' || entry[p] == ':')) {
        ++p;
      }
      std::string name = to_lower(entry.substr(name_begin, p - name_begin));
      p = skip_spaces(entry, p);
      if (name.empty() || p >= entry.size() || entry[p] != '=') break;
      p = skip_spaces(entry, p + 1);
      std::string value;
      // value := part (# part)*
      for (;;) {
        if (p < entry.size() && entry[p] == '{') {
          std::size_t e = match_brace(entry, p);
          if (e == std::string_view::npos) e = entry.size();
          value += entry.substr(p + 1, e - p - 1);
          p = e + 1;
        } else if (p < entry.size() && entry[p] == '"') {
          std::size_t e = p + 1;
          int depth = 0;
          while (e < entry.size() && !(entry[e] == '"' && depth == 0)) {
            if (entry[e] == '{') ++depth;
            if (entry[e] == '}') --depth;
            ++e;
          }
          value += entry.substr(p + 1, e - p - 1);
          p = e + 1;
        } else {
          std::size_t e = p;
          while (e < entry.size() && entry[e] != ',' && entry[e] != '#' && entry[e] != close_char) ++e;
          value += trim(entry.substr(p, e - p));
          p = e;
        }
        p = skip_spaces(entry, p);
        if (p < entry.size() && entry[p] == '#') {
          p = skip_spaces(entry, p + 1);
          continue;
        }
        break;
      }
      fields[name] = value;
    }
    out[key] = bib_entry_arxiv_id(fields);
  }
  return out;
}

inline BibliographyMap parse_bibitems(std::string_view s) {
  BibliographyMap out;
  const std::string marker = "\\bibitem";
  std::size_t i = s.find(marker);
  while (i != std::string_view::npos) {
    std::size_t j = i + marker.size();
    if (j < s.size() && is_letter(s[j])) {
      i = s.find(marker, j);
      continue;
    }
    auto label = read_optional(s, j);
    if (label.present) j = label.end;
    auto key = read_arg(s, j, nullptr);
    std::size_t next = s.find(marker, key.end);
    std::size_t stop = std::min(next, s.find("\\end{thebibliography}", key.end));
    std::string body(s.substr(key.end, stop == std::string_view::npos ? std::string_view::npos : stop - key.end));
    std::string k = trim(key.text);
    if (!k.empty()) {
      std::optional<std::string> id = find_prefixed_arxiv_id(body);
      if (!id && to_lower(body).find("arxiv") != std::string::npos) id = find_bare_arxiv_id(body);
      out[k] = id;
    }
    i = next;
  }
  return out;
}

}  // namespace detail

/// Maps citation keys to arXiv ids. `bib` is BibTeX; `bbl` is compiled
/// \bibitem output; `inline_env` reads the thebibliography environments of
/// a document. Throws FormatError when no entry is found.
inline BibliographyMap parse_bibliography(std::string_view text, BibFormat format) {
  BibliographyMap out;
  switch (format) {
    case BibFormat::bib:
      out = detail::parse_bib(strip_comments(text));
      break;
    case BibFormat::bbl:
      out = detail::parse_bibitems(strip_comments(text));
      break;
    case BibFormat::inline_env: {
      std::string clean = strip_comments(text);
      const std::string open = "\\begin{thebibliography}";
      const std::string close = "\\end{thebibliography}";
      for (std::size_t b = clean.find(open); b != std::string::npos; b = clean.find(open, b + 1)) {
        std::size_t e = clean.find(close, b);
        auto part = detail::parse_bibitems(std::string_view(clean).substr(b, e == std::string::npos ? e : e - b));
        out.insert(part.begin(), part.end());
      }
      break;
    }
  }
  if (out.empty()) throw FormatError("malformed bibliography: no entries parsed");
  return out;
}

// ---------------------------------------------------------------------------
// Structure of cleaned text

struct Segment {
  enum class Kind { front, title, abstract, section };
  Kind kind = Kind::front;
  std::string heading;
  int level = 99;
  std::size_t heading_index = 0;  // index into headings, valid for Kind::section
  std::string text;
};

struct Heading {
  std::string title;
  int level = 1;
  std::size_t first_segment = 0;
  std::size_t end_segment = 0;  // one past the last segment covered (incl. subsections)
};

struct DocumentStructure {
  std::vector<Segment> segments;
  std::vector<Heading> headings;

  std::optional<std::string> title() const {
    for (const auto& s : segments) {
      if (s.kind == Segment::Kind::title) return s.text;
    }
    return std::nullopt;
  }

  std::optional<std::string> abstract_text() const {
    std::string out;
    bool found = false;
    for (const auto& s : segments) {
      if (s.kind != Segment::Kind::abstract) continue;
      if (!out.empty() && !s.text.empty()) out += ' ';
      out += s.text;
      found = true;
    }
    return found ? std::optional<std::string>(out) : std::nullopt;
  }
};

inline DocumentStructure parse_structure(std::string_view cleaned) {
  using detail::is_letter;
  DocumentStructure doc;
  Segment current;
  std::string buffer;
  auto flush = [&](Segment next) {
    current.text = detail::trim(buffer);
    buffer.clear();
    doc.segments.push_back(std::move(current));
    current = std::move(next);
  };
  Segment before_abstract;
  for (std::size_t i = 0; i < cleaned.size(); ++i) {
    if (cleaned[i] != '\\' || i + 1 >= cleaned.size()) {
      buffer += cleaned[i];
      continue;
    }
    if (!is_letter(cleaned[i + 1])) {
      buffer += cleaned[i];
      buffer += cleaned[++i];
      continue;
    }
    std::size_t end = 0;
    std::string name = detail::read_control_word(cleaned, i + 1, &end);
    int level = detail::section_level(name);
    if (level >= 0 || name == "title") {
      auto arg = detail::read_arg(cleaned, end, nullptr);
      if (name == "title") {
        Segment resume = current;
        resume.text.clear();
        flush(Segment{Segment::Kind::title, "", 99, 0, ""});
        buffer = arg.text;
        flush(std::move(resume));
      } else {
        Segment next{Segment::Kind::section, detail::trim(arg.text), level, doc.headings.size(), ""};
        flush(next);
        doc.headings.push_back(Heading{next.heading, level, doc.segments.size(), 0});
      }
      i = arg.end - 1;
      continue;
    }
    if (name == "begin" || name == "end") {
      auto arg = detail::read_arg(cleaned, end, nullptr);
      if (detail::trim(arg.text) == "abstract") {
        if (name == "begin") {
          before_abstract = current;
          before_abstract.text.clear();
          flush(Segment{Segment::Kind::abstract, "", 99, 0, ""});
        } else {
          flush(before_abstract);
        }
        i = arg.end - 1;
        continue;
      }
    }
    buffer += '\\';
    buffer += name;
    i = end - 1;
  }
  flush(Segment{});

  // a heading covers segments until the next heading of the same or higher rank
  for (std::size_t h = 0; h < doc.headings.size(); ++h) {
    doc.headings[h].end_segment = doc.segments.size();
    for (std::size_t g = h + 1; g < doc.headings.size(); ++g) {
      if (doc.headings[g].level <= doc.headings[h].level) {
        doc.headings[h].end_segment = doc.headings[g].first_segment;
        break;
      }
    }
  }
  return doc;
}

inline std::string normalize_heading(std::string_view title) {
  std::string out;
  for (char c : title) {
    if (detail::is_letter(c)) {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else {
      out += ' ';
    }
  }
  return detail::collapse_whitespace(out);
}

namespace detail {

inline bool heading_matches(const std::string& normalized, const std::vector<std::string>& phrases) {
  const std::string padded = " " + normalized + " ";
  for (const auto& phrase : phrases) {
    std::string p = " " + normalize_heading(phrase) + " ";
    if (p.size() > 2 && padded.find(p) != std::string::npos) return true;
  }
  return false;
}

}  // namespace detail

/// Index into `doc.headings` of the related-work section: the first heading
/// matching `titles`, else the first Introduction, else nullopt.
inline std::optional<std::size_t> find_related_work_heading(const DocumentStructure& doc,
                                                            const std::vector<std::string>& titles) {
  for (std::size_t h = 0; h < doc.headings.size(); ++h) {
    if (detail::heading_matches(normalize_heading(doc.headings[h].title), titles)) return h;
  }
  for (std::size_t h = 0; h < doc.headings.size(); ++h) {
    if (detail::heading_matches(normalize_heading(doc.headings[h].title), {"introduction"})) return h;
  }
  return std::nullopt;
}

inline std::optional<RelatedWorkSection> extract_related_work(
    std::string_view cleaned, const std::vector<std::string>& titles = default_related_work_titles()) {
  DocumentStructure doc = parse_structure(cleaned);
  auto h = find_related_work_heading(doc, titles);
  if (!h) return std::nullopt;
  const Heading& heading = doc.headings[*h];
  std::string text;
  for (std::size_t s = heading.first_segment; s < heading.end_segment; ++s) {
    const auto& seg = doc.segments[s];
    if (seg.kind == Segment::Kind::title || seg.text.empty()) continue;
    if (!text.empty()) text += ' ';
    text += seg.text;
  }
  return RelatedWorkSection{heading.title, text};
}

// ---------------------------------------------------------------------------
// Sentences and citations

inline const std::vector<std::string>& sentence_abbreviations() {
  static const std::vector<std::string> list = {
      "al.",   "Fig.",  "Figs.", "Eq.",   "Eqs.",  "Eqn.", "e.g.",  "i.e.",  "cf.",   "vs.", "Sec.",
      "Secs.", "Tab.",  "Ref.",  "Refs.", "resp.", "approx.", "No.", "Thm.", "Def.", "Prop.", "Lem.",
      "Cor.",  "Alg.",  "Dr.",   "Prof.", "Mr.",   "Ms.",  "Ch.",   "viz.",  "w.r.t.", "Eqns."};
  return list;
}

/// Splits on '.', '!' or '?' (plus closing quotes or brackets) followed by
/// whitespace and then an uppercase letter or a backslash. Known
/// abbreviations never end a sentence.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  auto protected_abbreviation = [&](std::size_t dot) {
    std::size_t b = dot;
    while (b > start && !detail::is_space(text[b - 1])) --b;
    std::string_view token = text.substr(b, dot + 1 - b);
    for (const auto& abbr : sentence_abbreviations()) {
      if (token == abbr) return true;
      // e.g. "(e.g." or "(Fig."
      if (token.size() > abbr.size() && token.ends_with(abbr) &&
          !detail::is_letter(token[token.size() - abbr.size() - 1])) {
        return true;
      }
    }
    return false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c == '\\') {
      ++i;
      continue;
    }
    if (c != '.' && c != '!' && c != '?') continue;
    std::size_t e = i + 1;
    while (e < text.size() && (text[e] == ')' || text[e] == '"' || text[e] == '\'' || text[e] == ']')) ++e;
    if (e >= text.size() || !detail::is_space(text[e])) continue;
    std::size_t n = detail::skip_spaces(text, e);
    if (n >= text.size()) continue;
    bool starts = std::isupper(static_cast<unsigned char>(text[n])) || text[n] == '\\' || text[n] == '(';
    if (!starts) continue;
    if (c == '.' && protected_abbreviation(i)) continue;
    std::string sentence = detail::trim(text.substr(start, e - start));
    if (!sentence.empty()) out.push_back(std::move(sentence));
    start = n;
    i = n - 1;
  }
  std::string last = detail::trim(text.substr(start));
  if (!last.empty()) out.push_back(std::move(last));
  return out;
}

/// Keys of every \cite{..} in `sentence`, in order of appearance.
inline std::vector<std::string> cite_keys(std::string_view sentence) {
  std::vector<std::string> keys;
  const std::string_view marker = "\\cite{";
  for (std::size_t p = sentence.find(marker); p != std::string_view::npos; p = sentence.find(marker, p + 1)) {
    std::size_t close = sentence.find('}', p);
    if (close == std::string_view::npos) break;
    std::string_view body = sentence.substr(p + marker.size(), close - p - marker.size());
    std::size_t s = 0;
    while (s <= body.size()) {
      std::size_t comma = body.find(',', s);
      if (comma == std::string_view::npos) comma = body.size();
      std::string key = detail::trim(body.substr(s, comma - s));
      if (!key.empty()) keys.push_back(key);
      s = comma + 1;
    }
  }
  return keys;
}

inline std::vector<CitationMention> extract_citations(
    std::string_view cleaned, const BibliographyMap& bibliography,
    const std::vector<std::string>& related_titles = default_related_work_titles()) {
  DocumentStructure doc = parse_structure(cleaned);
  std::optional<std::size_t> rw = find_related_work_heading(doc, related_titles);
  std::vector<CitationMention> out;
  for (std::size_t s = 0; s < doc.segments.size(); ++s) {
    const Segment& seg = doc.segments[s];
    if (seg.kind == Segment::Kind::title) continue;
    bool in_rw = rw && s >= doc.headings[*rw].first_segment && s < doc.headings[*rw].end_segment;
    auto sentences = split_sentences(seg.text);
    for (std::size_t k = 0; k < sentences.size(); ++k) {
      for (auto& key : cite_keys(sentences[k])) {
        CitationMention m;
        m.citation_key = key;
        if (auto it = bibliography.find(key); it != bibliography.end()) m.resolved_target = it->second;
        m.sentence = sentences[k];
        if (k > 0) m.preceding = sentences[k - 1];
        if (k + 1 < sentences.size()) m.following = sentences[k + 1];
        m.in_related_work = in_rw;
        out.push_back(std::move(m));
      }
    }
  }
  return out;
}

}  // namespace citegraph::latex
