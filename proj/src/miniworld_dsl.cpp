// Action language for the miniworld apps:
//
//   stmt  := [IDENT '='] call
//   call  := IDENT '.' IDENT '(' [arg (',' arg)*] ')' | 'final' '(' [arg] ')'
//   arg   := IDENT '=' expr
//   expr  := STRING | INT | 'true' | 'false' | 'null' | ref
//   ref   := IDENT ('.' IDENT | '[' INT ']')*

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

#include "trajdemo/miniworld.hpp"

namespace trajdemo::miniworld {

namespace {

struct ActionError {
  std::string message;
};

enum class Tok { ident, string, integer, punct, end };

struct Token {
  Tok kind;
  std::string text;
  std::int64_t number = 0;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_space();
      if (pos_ >= src_.size()) break;
      const char c = src_[pos_];
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        out.push_back(ident());
      } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '-') {
        out.push_back(integer());
      } else if (c == '"') {
        out.push_back(string());
      } else if (std::string_view("=.,()[]").find(c) != std::string_view::npos) {
        out.push_back({Tok::punct, std::string(1, c)});
        ++pos_;
      } else {
        throw ActionError{"SyntaxError: unexpected character '" + std::string(1, c) + "'"};
      }
    }
    out.push_back({Tok::end, ""});
    return out;
  }

 private:
  void skip_space() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  Token ident() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
      ++pos_;
    }
    return {Tok::ident, std::string(src_.substr(start, pos_ - start))};
  }

  Token integer() {
    const std::size_t start = pos_;
    if (src_[pos_] == '-') ++pos_;
    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    const std::string_view digits = src_.substr(start, pos_ - start);
    Token t{Tok::integer, std::string(digits)};
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), t.number);
    if (ec != std::errc() || ptr != digits.data() + digits.size()) {
      throw ActionError{"SyntaxError: bad integer literal '" + std::string(digits) + "'"};
    }
    return t;
  }

  Token string() {
    ++pos_;
    std::string out;
    while (pos_ < src_.size() && src_[pos_] != '"') {
      char c = src_[pos_++];
      if (c == '\\') {
        if (pos_ >= src_.size()) break;
        const char e = src_[pos_++];
        c = e == 'n' ? '\n' : e == 't' ? '\t' : e;
      }
      out.push_back(c);
    }
    if (pos_ >= src_.size()) throw ActionError{"SyntaxError: unterminated string"};
    ++pos_;
    return {Tok::string, std::move(out)};
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

struct Statement {
  std::optional<std::string> target;
  std::string app;  // empty for final()
  std::string method;
  std::vector<std::pair<std::string, Value>> args;
};

class Parser {
 public:
  Parser(std::vector<Token> toks, const WorldState& state) : toks_(std::move(toks)), state_(state) {}

  Statement statement() {
    Statement st;
    if (peek().kind == Tok::ident && peek(1).kind == Tok::punct && peek(1).text == "=") {
      st.target = take().text;
      take();
    }
    const Token head = expect_ident("app name");
    if (head.text == "final" && is_punct("(")) {
      st.method = "final";
    } else {
      expect_punct(".");
      st.app = head.text;
      st.method = expect_ident("method name").text;
    }
    expect_punct("(");
    if (!is_punct(")")) {
      while (true) {
        const std::string name = expect_ident("argument name").text;
        expect_punct("=");
        Value v = expr();
        for (const auto& [existing, unused] : st.args) {
          if (existing == name) throw ActionError{"SyntaxError: duplicate argument '" + name + "'"};
        }
        st.args.emplace_back(name, std::move(v));
        if (is_punct(",")) {
          take();
          continue;
        }
        break;
      }
    }
    expect_punct(")");
    if (peek().kind != Tok::end) throw ActionError{"SyntaxError: unexpected trailing input '" + peek().text + "'"};
    return st;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  Token take() { return toks_[std::min(pos_++, toks_.size() - 1)]; }
  bool is_punct(std::string_view p) const { return peek().kind == Tok::punct && peek().text == p; }

  void expect_punct(std::string_view p) {
    if (!is_punct(p)) {
      throw ActionError{"SyntaxError: expected '" + std::string(p) + "' but found '" + peek().text + "'"};
    }
    take();
  }

  Token expect_ident(const char* what) {
    if (peek().kind != Tok::ident) throw ActionError{std::string("SyntaxError: expected ") + what};
    return take();
  }

  Value expr() {
    const Token t = take();
    switch (t.kind) {
      case Tok::string: return Value(t.text);
      case Tok::integer: return Value(t.number);
      case Tok::ident: break;
      default: throw ActionError{"SyntaxError: expected a value but found '" + t.text + "'"};
    }
    if (t.text == "true") return Value(true);
    if (t.text == "false") return Value(false);
    if (t.text == "null") return Value(nullptr);
    auto it = state_.variables.find(t.text);
    if (it == state_.variables.end()) throw ActionError{"NameError: '" + t.text + "' is not defined"};
    Value current = it->second;
    std::string path = t.text;
    while (is_punct(".") || is_punct("[")) {
      if (take().text == ".") {
        const std::string field = expect_ident("field name").text;
        path += "." + field;
        if (!current.is_object() || !current.contains(field)) {
          throw ActionError{"KeyError: " + path + " does not exist"};
        }
        current = Value(current.at(field));
      } else {
        const Token idx = take();
        if (idx.kind != Tok::integer) throw ActionError{"SyntaxError: index must be an integer"};
        expect_punct("]");
        path += "[" + idx.text + "]";
        if (!current.is_array() || idx.number < 0 || static_cast<std::size_t>(idx.number) >= current.size()) {
          throw ActionError{"IndexError: " + path + " is out of range"};
        }
        current = Value(current.at(static_cast<std::size_t>(idx.number)));
      }
    }
    return current;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  const WorldState& state_;
};

class Args {
 public:
  Args(const Statement& st, std::set<std::string> allowed) {
    for (const auto& [name, value] : st.args) {
      if (!allowed.count(name)) {
        throw ActionError{"TypeError: " + st.app + "." + st.method + "() got an unexpected argument '" + name + "'"};
      }
      values_.emplace(name, value);
    }
    where_ = st.app + "." + st.method + "()";
  }

  const Value& get(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ActionError{"TypeError: " + where_ + " missing argument '" + name + "'"};
    return it->second;
  }

  std::string text(const std::string& name) const {
    const Value& v = get(name);
    if (!v.is_string()) throw ActionError{"TypeError: argument '" + name + "' must be a string"};
    return v.get<std::string>();
  }

  // Strings pass through; numbers and booleans are rendered as text.
  std::string scalar_text(const std::string& name) const {
    const Value& v = get(name);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer() || v.is_boolean()) return v.dump();
    throw ActionError{"TypeError: argument '" + name + "' must be a string or number"};
  }

  std::int64_t integer(const std::string& name) const {
    const Value& v = get(name);
    if (!v.is_number_integer()) throw ActionError{"TypeError: argument '" + name + "' must be an integer"};
    return v.get<std::int64_t>();
  }

 private:
  std::map<std::string, Value> values_;
  std::string where_;
};

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

void require_user(const WorldState& s, const std::string& user) {
  if (!s.ledger.count(user)) throw ActionError{"ValueError: unknown user '" + user + "'"};
}

Value call_ledger(WorldState& s, const Statement& st) {
  if (st.method == "users") {
    Args a(st, {});
    Value out = Value::array();
    for (const auto& [user, unused] : s.ledger) out.push_back(user);
    return out;
  }
  if (st.method == "balance") {
    Args a(st, {"user"});
    const std::string user = a.text("user");
    require_user(s, user);
    return Value{{"user", user}, {"balance", s.ledger.at(user)}};
  }
  if (st.method == "transfer") {
    Args a(st, {"src", "dst", "amount"});
    const std::string src = a.text("src");
    const std::string dst = a.text("dst");
    const std::int64_t amount = a.integer("amount");
    require_user(s, src);
    require_user(s, dst);
    if (src == dst) throw ActionError{"ValueError: src and dst must differ"};
    if (amount <= 0) throw ActionError{"ValueError: amount must be positive"};
    if (s.ledger.at(src) < amount) {
      throw ActionError{"ValueError: insufficient funds: " + src + " has " + std::to_string(s.ledger.at(src)) +
                        " cents, needs " + std::to_string(amount)};
    }
    s.ledger[src] -= amount;
    s.ledger[dst] += amount;
    s.mutation_log.push_back(Value{{"app", "ledger"}, {"op", "transfer"}, {"src", src}, {"dst", dst}, {"amount", amount}});
    return Value{{"src", src}, {"dst", dst}, {"amount", amount}, {"src_balance", s.ledger.at(src)},
                 {"dst_balance", s.ledger.at(dst)}};
  }
  throw ActionError{"AttributeError: ledger has no method '" + st.method + "'"};
}

const Note& require_note(const WorldState& s, const std::string& id) {
  auto it = s.notes.find(id);
  if (it == s.notes.end()) throw ActionError{"ValueError: no note with id '" + id + "'"};
  return it->second;
}

Value call_notes(WorldState& s, const Statement& st) {
  if (st.method == "list" || st.method == "search") {
    Args a(st, st.method == "search" ? std::set<std::string>{"query"} : std::set<std::string>{});
    const std::string query = st.method == "search" ? lower(a.text("query")) : "";
    Value out = Value::array();
    for (const auto& [id, note] : s.notes) {
      if (lower(note.title).find(query) != std::string::npos) out.push_back(Value{{"note_id", id}, {"title", note.title}});
    }
    return out;
  }
  if (st.method == "read") {
    Args a(st, {"note_id"});
    const std::string id = a.text("note_id");
    const Note& n = require_note(s, id);
    return Value{{"note_id", id}, {"title", n.title}, {"body", n.body}};
  }
  if (st.method == "create") {
    Args a(st, {"title", "body"});
    const std::string title = a.text("title");
    const std::string body = a.scalar_text("body");
    if (title.empty()) throw ActionError{"ValueError: title must not be empty"};
    const std::string id = "n" + std::to_string(s.next_note_id++);
    s.notes[id] = Note{title, body};
    s.mutation_log.push_back(Value{{"app", "notes"}, {"op", "create"}, {"title", title}, {"body", body}});
    return Value{{"note_id", id}};
  }
  if (st.method == "update") {
    Args a(st, {"note_id", "body"});
    const std::string id = a.text("note_id");
    const std::string body = a.scalar_text("body");
    require_note(s, id);
    s.notes[id].body = body;
    s.mutation_log.push_back(Value{{"app", "notes"}, {"op", "update"}, {"note_id", id}, {"body", body}});
    return Value{{"note_id", id}};
  }
  if (st.method == "delete") {
    Args a(st, {"note_id"});
    const std::string id = a.text("note_id");
    require_note(s, id);
    s.notes.erase(id);
    s.mutation_log.push_back(Value{{"app", "notes"}, {"op", "delete"}, {"note_id", id}});
    return Value{{"deleted", id}};
  }
  throw ActionError{"AttributeError: notes has no method '" + st.method + "'"};
}

Value mail_listing(const std::vector<Mail>& box, const std::string& sender) {
  Value out = Value::array();
  for (std::size_t i = box.size(); i-- > 0;) {
    if (!sender.empty() && box[i].from != sender) continue;
    out.push_back(Value{{"index", static_cast<std::int64_t>(i)}, {"from", box[i].from}, {"subject", box[i].subject}});
  }
  return out;
}

const std::vector<Mail>& mailbox(const WorldState& s, const std::string& user) {
  static const std::vector<Mail> kEmpty;
  auto it = s.inbox.find(user);
  return it == s.inbox.end() ? kEmpty : it->second;
}

Value call_mail(WorldState& s, const Statement& st) {
  if (st.method == "inbox" || st.method == "search") {
    Args a(st, st.method == "search" ? std::set<std::string>{"user", "sender"} : std::set<std::string>{"user"});
    const std::string user = a.text("user");
    require_user(s, user);
    return mail_listing(mailbox(s, user), st.method == "search" ? a.text("sender") : "");
  }
  if (st.method == "read") {
    Args a(st, {"user", "index"});
    const std::string user = a.text("user");
    require_user(s, user);
    const std::int64_t index = a.integer("index");
    const auto& box = mailbox(s, user);
    if (index < 0 || static_cast<std::size_t>(index) >= box.size()) {
      throw ActionError{"ValueError: no mail at index " + std::to_string(index)};
    }
    const Mail& m = box[static_cast<std::size_t>(index)];
    return Value{{"index", index}, {"from", m.from}, {"subject", m.subject}, {"body", m.body}};
  }
  if (st.method == "send") {
    Args a(st, {"sender", "to", "subject", "body"});
    const std::string sender = a.text("sender");
    const std::string to = a.text("to");
    const std::string subject = a.text("subject");
    const std::string body = a.scalar_text("body");
    require_user(s, sender);
    require_user(s, to);
    s.inbox[to].push_back(Mail{sender, subject, body});
    s.mutation_log.push_back(
        Value{{"app", "mail"}, {"op", "send"}, {"from", sender}, {"to", to}, {"subject", subject}, {"body", body}});
    return Value{{"sent", true}, {"to", to}};
  }
  throw ActionError{"AttributeError: mail has no method '" + st.method + "'"};
}

std::string answer_text(const Value& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

}  // namespace

ExecResult execute(WorldState& state, std::string_view action) {
  ExecResult out;
  try {
    Parser parser(Lexer(action).run(), state);
    const Statement st = parser.statement();
    if (st.method == "final") {
      if (st.target) throw ActionError{"SyntaxError: final() cannot be assigned"};
      std::optional<std::string> answer;
      for (const auto& [name, value] : st.args) {
        if (name != "answer") throw ActionError{"TypeError: final() got an unexpected argument '" + name + "'"};
        if (!value.is_null()) answer = answer_text(value);
      }
      out.observation = "Task marked complete.";
      out.terminal = true;
      out.final_answer = std::move(answer);
      return out;
    }
    // Mutate a copy; commit on success.
    WorldState next = state;
    Value result;
    if (st.app == "ledger") {
      result = call_ledger(next, st);
    } else if (st.app == "notes") {
      result = call_notes(next, st);
    } else if (st.app == "mail") {
      result = call_mail(next, st);
    } else {
      throw ActionError{"NameError: unknown app '" + st.app + "'"};
    }
    if (st.target) next.variables[*st.target] = result;
    state = std::move(next);
    out.observation = result.dump();
  } catch (const ActionError& e) {
    out.observation = "Error: " + e.message;
  } catch (const std::exception& e) {
    out.observation = std::string("Error: ") + e.what();
  }
  return out;
}

}  // namespace trajdemo::miniworld
