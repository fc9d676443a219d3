#include "sfnmt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace sfnmt {

CorpusFormatError::CorpusFormatError(const std::string& message, std::size_t line,
                                     std::size_t column)
    : std::runtime_error(message + " (line " + std::to_string(line) + ", column " +
                         std::to_string(column) + ")"),
      line_(line),
      column_(column) {}

namespace {

bool is_separator(char c) { return c == ' ' || c == '\t'; }

bool has_control_whitespace(std::string_view s) {
  return std::ranges::any_of(s, [](char c) { return c == '\t' || c == '\n' || c == '\r'; });
}

// Scanner over one record. Keeps byte columns for error reporting.
struct RecordParser {
  std::string_view line;
  std::size_t line_no;
  std::size_t pos;    // current byte offset into line
  std::size_t start;  // record start offset

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw CorpusFormatError(msg, line_no, at + 1);
  }

  bool at_end() const { return pos >= line.size() || is_separator(line[pos]); }

  // Reads until an unescaped stop character or the record end. `stops` are
  // single-byte separators checked before escape expansion.
  std::string read_field(std::string_view stops, bool& hit_stop, char& stop_char) {
    std::string out;
    hit_stop = false;
    while (!at_end()) {
      char c = line[pos];
      if (c == '\\') {
        if (pos + 1 >= line.size() || is_separator(line[pos + 1]))
          fail("dangling escape", pos);
        char e = line[pos + 1];
        switch (e) {
          case 'p': out += '|'; break;
          case 'c': out += ','; break;
          case 's': out += ' '; break;
          case '\\': out += '\\'; break;
          default: fail(std::string("bad escape \\") + e, pos);
        }
        pos += 2;
        continue;
      }
      if (stops.find(c) != std::string_view::npos) {
        hit_stop = true;
        stop_char = c;
        ++pos;
        return out;
      }
      out += c;
      ++pos;
    }
    return out;
  }

  AnnotatedToken parse() {
    start = pos;
    bool stopped = false;
    char stop = 0;

    std::string surface = read_field("|", stopped, stop);
    if (!stopped) fail("record has no lemma field", start);
    if (surface.empty()) fail("empty surface", start);

    std::string lemma = read_field("|", stopped, stop);
    if (!stopped) fail("record has no features field", start);
    if (lemma.empty()) fail("empty lemma field (use _ for none)", start);

    AnnotatedToken token;
    token.surface = std::move(surface);
    if (lemma != "_") token.lemma = std::move(lemma);

    std::size_t feats_start = pos;
    bool first = true;
    bool empty_list = false;
    std::unordered_set<std::string> seen;
    for (;;) {
      std::size_t piece_start = pos;
      std::string piece = read_field("|,", stopped, stop);
      if (stopped && stop == '|') fail("record has too many fields", piece_start);
      if (first && !stopped && piece == "_") {
        empty_list = true;
        break;
      }
      if (piece.empty()) fail("empty feature value", piece_start);
      if (piece == "_") fail("'_' is not a valid feature value", piece_start);
      if (!seen.insert(piece).second)
        fail("duplicate feature '" + piece + "'", piece_start);
      token.features.push_back(std::move(piece));
      first = false;
      if (!stopped) break;
    }
    if (empty_list) token.features.clear();
    if (!token.features.empty() && !token.lemma)
      fail("features present without lemma", feats_start);
    return token;
  }
};

std::string escape_field(std::string_view raw, bool escape_comma) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '|': out += "\\p"; break;
      case ' ': out += "\\s"; break;
      case ',':
        if (escape_comma) {
          out += "\\c";
          break;
        }
        [[fallthrough]];
      default: out += c;
    }
  }
  return out;
}

void check_field_text(const std::string& text, const char* what) {
  if (has_control_whitespace(text))
    throw std::invalid_argument(std::string(what) + " contains control whitespace");
}

}  // namespace

void validate_token(const AnnotatedToken& token) {
  if (token.surface.empty()) throw std::invalid_argument("token surface is empty");
  check_field_text(token.surface, "surface");
  if (token.lemma) {
    if (token.lemma->empty() || *token.lemma == "_")
      throw std::invalid_argument("lemma must be non-empty and not '_'");
    check_field_text(*token.lemma, "lemma");
  }
  if (!token.features.empty() && !token.lemma)
    throw std::invalid_argument("features present without lemma");
  std::unordered_set<std::string_view> seen;
  for (const auto& f : token.features) {
    if (f.empty() || f == "_")
      throw std::invalid_argument("feature value must be non-empty and not '_'");
    check_field_text(f, "feature");
    if (!seen.insert(f).second)
      throw std::invalid_argument("duplicate feature '" + f + "'");
  }
}

AnnotatedCorpus parse_annotated_corpus(std::string_view text) {
  AnnotatedCorpus corpus;
  std::size_t line_no = 0;
  std::size_t offset = 0;
  while (offset <= text.size()) {
    std::size_t eol = text.find('\n', offset);
    std::string_view line = (eol == std::string_view::npos)
                                ? text.substr(offset)
                                : text.substr(offset, eol - offset);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;

    AnnotatedSentence sentence;
    std::size_t pos = 0;
    while (pos < line.size()) {
      if (is_separator(line[pos])) {
        ++pos;
        continue;
      }
      RecordParser parser{line, line_no, pos, pos};
      sentence.tokens.push_back(parser.parse());
      pos = parser.pos;
    }
    if (!sentence.tokens.empty()) corpus.push_back(std::move(sentence));

    if (eol == std::string_view::npos) break;
    offset = eol + 1;
  }
  return corpus;
}

AnnotatedCorpus parse_annotated_corpus(std::istream& in) {
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_annotated_corpus(std::string_view(buf.view()));
}

void serialize_annotated_corpus(const AnnotatedCorpus& corpus, std::ostream& out) {
  for (const auto& sentence : corpus) {
    bool first = true;
    for (const auto& token : sentence.tokens) {
      validate_token(token);
      if (!first) out << ' ';
      first = false;
      out << escape_field(token.surface, /*escape_comma=*/false) << '|';
      out << (token.lemma ? escape_field(*token.lemma, /*escape_comma=*/false)
                          : std::string("_"));
      out << '|';
      if (token.features.empty()) {
        out << '_';
      } else {
        for (std::size_t i = 0; i < token.features.size(); ++i) {
          if (i) out << ',';
          out << escape_field(token.features[i], /*escape_comma=*/true);
        }
      }
    }
    out << '\n';
  }
}

std::string serialize_annotated_corpus(const AnnotatedCorpus& corpus) {
  std::ostringstream out;
  serialize_annotated_corpus(corpus, out);
  return out.str();
}

AnnotatedCorpus load_annotated_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path.string());
  return parse_annotated_corpus(in);
}

void save_annotated_corpus(const AnnotatedCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path.string());
  serialize_annotated_corpus(corpus, out);
}

}  // namespace sfnmt
