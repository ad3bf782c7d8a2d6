"""Concrete syntax: tokenizer, parser and canonical renderer.

Keywords are case-insensitive and reserved; identifiers are case-sensitive
and must start with a letter. `--` opens a line comment. Strings are
single-quoted with `''` escaping an embedded quote.

`parse_spec` raises ParseError carrying every diagnostic it could collect
(recovery restarts at the next top-level declaration keyword); no partial
spec is ever returned. `render_spec` emits the canonical form, and
`parse_spec(render_spec(s)) == s` for every valid spec.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import model
from .errors import ParseError
from .model import (
    Action,
    AttrRef,
    AttrType,
    CARule,
    Comparison,
    Const,
    DeleteEffect,
    DomainConstraint,
    FKConstraint,
    FromItem,
    InsertEffect,
    Invocation,
    Param,
    RelationSchema,
    SelectBranch,
    SelectQuery,
    ServiceSignature,
    Spec,
)

KEYWORDS = {
    "RELATION", "SERVICE", "ACTION", "RULE",
    "SELECT", "FROM", "WHERE", "UNION", "ENABLES",
    "DELETE", "INSERT", "INTO", "VALUES",
    "AND", "OR", "NOT",
    "PRIMARY", "KEY", "DOMAIN", "REFERENCES", "FOREIGN",
    "INT", "STRING", "WITH",
}

DECL_KEYWORDS = {"RELATION", "SERVICE", "ACTION", "RULE"}

_PUNCT2 = ("<>", "<=", ">=")
_PUNCT1 = "(){},;:@.=<>"


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self):
        return f"{self.line}:{self.col}: {self.message}"


@dataclass(frozen=True)
class Token:
    kind: str  # KW, IDENT, INT, STR, PUNCT, EOF
    value: object
    line: int
    col: int


class _Syntax(Exception):
    def __init__(self, message: str, token: Token):
        self.diagnostic = Diagnostic(token.line, token.col, message)
        super().__init__(str(self.diagnostic))


def tokenize(text: str):
    """Token list for a spec or script text; raises ParseError on lex errors."""
    tokens = []
    line, col, i, n = 1, 1, 0, len(text)

    def bump(k: int):
        nonlocal line, col, i
        for _ in range(k):
            if text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        c = text[i]
        if c in " \t\r\n":
            bump(1)
            continue
        if text.startswith("--", i):
            while i < n and text[i] != "\n":
                bump(1)
            continue
        start_line, start_col = line, col
        if c.isalpha():
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            bump(j - i)
            if word.upper() in KEYWORDS:
                tokens.append(Token("KW", word.upper(), start_line, start_col))
            else:
                tokens.append(Token("IDENT", word, start_line, start_col))
            continue
        if c.isdigit() or (c == "-" and i + 1 < n and text[i + 1].isdigit()):
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(Token("INT", int(text[i:j]), start_line, start_col))
            bump(j - i)
            continue
        if c == "'":
            j = i + 1
            buf = []
            while True:
                if j >= n or text[j] == "\n":
                    raise ParseError([Diagnostic(start_line, start_col, "unterminated string")])
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    j += 1
                    break
                buf.append(text[j])
                j += 1
            tokens.append(Token("STR", "".join(buf), start_line, start_col))
            bump(j - i)
            continue
        two = text[i : i + 2]
        if two in _PUNCT2:
            tokens.append(Token("PUNCT", two, start_line, start_col))
            bump(2)
            continue
        if c in _PUNCT1:
            tokens.append(Token("PUNCT", c, start_line, start_col))
            bump(1)
            continue
        raise ParseError([Diagnostic(start_line, start_col, f"unexpected character {c!r}")])
    tokens.append(Token("EOF", None, line, col))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    # - token plumbing -

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def at(self, kind: str, value=None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (value is None or tok.value == value)

    def at_kw(self, *words) -> bool:
        tok = self.peek()
        return tok.kind == "KW" and tok.value in words

    def accept(self, kind: str, value=None) -> Optional[Token]:
        if self.at(kind, value):
            return self.next()
        return None

    def expect(self, kind: str, value=None, what: str = "") -> Token:
        if self.at(kind, value):
            return self.next()
        tok = self.peek()
        wanted = what or (value if value is not None else kind.lower())
        got = "end of input" if tok.kind == "EOF" else repr(tok.value)
        raise _Syntax(f"expected {wanted}, got {got}", tok)

    def ident(self, what: str = "identifier") -> str:
        tok = self.peek()
        if tok.kind == "IDENT":
            self.next()
            return tok.value
        if tok.kind == "KW":
            raise _Syntax(f"'{tok.value}' is a reserved word", tok)
        raise _Syntax(f"expected {what}", tok)

    # - declarations -

    def parse_spec_body(self):
        relations, services, rules = [], [], []
        raw_actions = []  # (name, [(pname, type|None, token)], effects)
        diagnostics = []
        if self.at("EOF"):
            diagnostics.append(Diagnostic(1, 1, "empty specification"))
        while not self.at("EOF"):
            try:
                tok = self.peek()
                if tok.kind != "KW" or tok.value not in DECL_KEYWORDS:
                    raise _Syntax("expected RELATION, SERVICE, ACTION or RULE", tok)
                if tok.value == "RELATION":
                    relations.append(self.relation_decl())
                elif tok.value == "SERVICE":
                    services.append(self.service_decl())
                elif tok.value == "ACTION":
                    raw_actions.append(self.action_decl())
                else:
                    rules.append(self.rule_decl())
            except _Syntax as e:
                diagnostics.append(e.diagnostic)
                self.resync()
        return relations, services, raw_actions, rules, diagnostics

    def resync(self):
        # skip to the next top-level declaration keyword, outside braces
        depth = 0
        self.next()
        while not self.at("EOF"):
            tok = self.peek()
            if tok.kind == "PUNCT" and tok.value == "{":
                depth += 1
            elif tok.kind == "PUNCT" and tok.value == "}":
                depth = max(0, depth - 1)
            elif tok.kind == "KW" and tok.value in DECL_KEYWORDS and depth == 0:
                return
            self.next()

    def type_name(self) -> AttrType:
        tok = self.peek()
        if self.at_kw("INT"):
            self.next()
            return AttrType.INT
        if self.at_kw("STRING"):
            self.next()
            return AttrType.STRING
        raise _Syntax("expected INT or STRING", tok)

    def value_literal(self):
        tok = self.peek()
        if tok.kind == "INT" or tok.kind == "STR":
            self.next()
            return tok.value
        raise _Syntax("expected a literal", tok)

    def name_list(self):
        names = [self.ident("attribute name")]
        while self.accept("PUNCT", ","):
            names.append(self.ident("attribute name"))
        return tuple(names)

    def relation_decl(self) -> RelationSchema:
        self.expect("KW", "RELATION")
        name = self.ident("relation name")
        self.expect("PUNCT", "(")
        attrs, key_parts, fks, domains = [], [], [], []
        while True:
            if self.at_kw("PRIMARY"):
                self.next()
                self.expect("KW", "KEY")
                self.expect("PUNCT", "(")
                key_parts.append(self.name_list())
                self.expect("PUNCT", ")")
            elif self.at_kw("FOREIGN"):
                self.next()
                self.expect("KW", "KEY")
                self.expect("PUNCT", "(")
                sources = self.name_list()
                self.expect("PUNCT", ")")
                self.expect("KW", "REFERENCES")
                target = self.ident("relation name")
                self.expect("PUNCT", "(")
                targets = self.name_list()
                self.expect("PUNCT", ")")
                fks.append(FKConstraint(sources, target, targets))
            else:
                attr = self.ident("attribute name")
                atype = self.type_name()
                attrs.append((attr, atype))
                while self.at_kw("PRIMARY", "DOMAIN", "REFERENCES"):
                    if self.at_kw("PRIMARY"):
                        self.next()
                        self.expect("KW", "KEY")
                        key_parts.append((attr,))
                    elif self.at_kw("DOMAIN"):
                        self.next()
                        self.expect("PUNCT", "(")
                        values = [self.value_literal()]
                        while self.accept("PUNCT", ","):
                            values.append(self.value_literal())
                        self.expect("PUNCT", ")")
                        domains.append(DomainConstraint(attr, tuple(values)))
                    else:
                        self.next()
                        target = self.ident("relation name")
                        self.expect("PUNCT", "(")
                        tattr = self.ident("attribute name")
                        self.expect("PUNCT", ")")
                        fks.append(FKConstraint((attr,), target, (tattr,)))
            if not self.accept("PUNCT", ","):
                break
        self.expect("PUNCT", ")")
        self.expect("PUNCT", ";")
        if len(key_parts) > 1:
            raise _Syntax(f"relation {name} declares two primary keys", self.peek())
        key = key_parts[0] if key_parts else ()
        return RelationSchema(name, tuple(attrs), key, tuple(fks), tuple(domains))

    def service_decl(self) -> ServiceSignature:
        self.expect("KW", "SERVICE")
        name = self.ident("service name")
        self.expect("PUNCT", "(")
        params = []
        if not self.at("PUNCT", ")"):
            params.append(self.type_name())
            while self.accept("PUNCT", ","):
                params.append(self.type_name())
        self.expect("PUNCT", ")")
        self.expect("PUNCT", ":")
        ret = self.type_name()
        self.expect("PUNCT", ";")
        return ServiceSignature(name, tuple(params), ret)

    def action_decl(self):
        self.expect("KW", "ACTION")
        name = self.ident("action name")
        self.expect("PUNCT", "(")
        params = []
        if not self.at("PUNCT", ")"):
            while True:
                tok = self.peek()
                pname = self.ident("parameter name")
                ptype = self.type_name() if self.at_kw("INT", "STRING") else None
                params.append((pname, ptype, tok))
                if not self.accept("PUNCT", ","):
                    break
        self.expect("PUNCT", ")")
        self.expect("PUNCT", "{")
        effects = []
        while not self.at("PUNCT", "}"):
            effects.append(self.effect())
            self.expect("PUNCT", ";")
        self.expect("PUNCT", "}")
        return name, params, tuple(effects)

    def effect(self):
        if self.at_kw("DELETE"):
            self.next()
            self.expect("KW", "FROM")
            rel = self.ident("relation name")
            where = None
            if self.at_kw("WHERE"):
                self.next()
                where = self.condition()
            return DeleteEffect(rel, where)
        self.expect("KW", "INSERT")
        self.expect("KW", "INTO")
        rel = self.ident("relation name")
        self.expect("PUNCT", "(")
        columns = self.name_list()
        self.expect("PUNCT", ")")
        if self.at_kw("VALUES"):
            self.next()
            self.expect("PUNCT", "(")
            terms = [self.term()]
            while self.accept("PUNCT", ","):
                terms.append(self.term())
            self.expect("PUNCT", ")")
            return InsertEffect(rel, columns, tuple(terms))
        if self.at_kw("SELECT"):
            return InsertEffect(rel, columns, self.select_query())
        raise _Syntax("expected VALUES or SELECT", self.peek())

    def term(self):
        tok = self.peek()
        if tok.kind in ("INT", "STR"):
            self.next()
            return Const(tok.value)
        if self.accept("PUNCT", ":"):
            return Param(self.ident("parameter name"))
        if self.accept("PUNCT", "@"):
            svc = self.ident("service name")
            self.expect("PUNCT", "(")
            args = []
            if not self.at("PUNCT", ")"):
                while True:
                    atok = self.peek()
                    arg = self.term()
                    if isinstance(arg, Invocation):
                        raise _Syntax("service calls cannot be nested", atok)
                    args.append(arg)
                    if not self.accept("PUNCT", ","):
                        break
            self.expect("PUNCT", ")")
            return Invocation(svc, tuple(args))
        raise _Syntax("expected a literal, :param or @service(...)", tok)

    # - queries and conditions -

    def select_query(self) -> SelectQuery:
        branches = [self.select_branch()]
        while self.at_kw("UNION"):
            self.next()
            branches.append(self.select_branch())
        return SelectQuery(tuple(branches))

    def select_branch(self) -> SelectBranch:
        self.expect("KW", "SELECT")
        projection = [self.operand("projection item")]
        while self.accept("PUNCT", ","):
            projection.append(self.operand("projection item"))
        self.expect("KW", "FROM")
        from_items = [self.from_item()]
        while self.accept("PUNCT", ","):
            from_items.append(self.from_item())
        where = None
        if self.at_kw("WHERE"):
            self.next()
            where = self.condition()
        return SelectBranch(tuple(projection), tuple(from_items), where)

    def from_item(self) -> FromItem:
        rel = self.ident("relation name")
        alias = rel
        if self.at("IDENT"):
            alias = self.ident()
        return FromItem(rel, alias)

    def operand(self, what: str = "operand"):
        tok = self.peek()
        if tok.kind in ("INT", "STR"):
            self.next()
            return Const(tok.value)
        if self.accept("PUNCT", ":"):
            return Param(self.ident("parameter name"))
        if tok.kind == "IDENT":
            name = self.ident()
            if self.accept("PUNCT", "."):
                return AttrRef(name, self.ident("attribute name"))
            return AttrRef(None, name)
        raise _Syntax(f"expected {what}", tok)

    def condition(self):
        items = [self.and_condition()]
        while self.at_kw("OR"):
            self.next()
            items.append(self.and_condition())
        return items[0] if len(items) == 1 else model.Or(tuple(items))

    def and_condition(self):
        items = [self.not_condition()]
        while self.at_kw("AND"):
            self.next()
            items.append(self.not_condition())
        return items[0] if len(items) == 1 else model.And(tuple(items))

    def not_condition(self):
        if self.at_kw("NOT"):
            self.next()
            return model.Not(self.not_condition())
        if self.at("PUNCT", "("):
            self.next()
            inner = self.condition()
            self.expect("PUNCT", ")")
            return inner
        left = self.operand()
        tok = self.peek()
        if tok.kind == "PUNCT" and tok.value in model.COMPARISON_OPS:
            self.next()
            op = tok.value
        else:
            raise _Syntax("expected a comparison operator", tok)
        right = self.operand()
        return Comparison(op, left, right)

    def rule_decl(self) -> CARule:
        self.expect("KW", "RULE")
        condition = self.select_query()
        self.expect("KW", "ENABLES")
        action = self.ident("action name")
        self.expect("PUNCT", "(")
        args = ()
        if not self.at("PUNCT", ")"):
            args = self.name_list()
        self.expect("PUNCT", ")")
        self.expect("PUNCT", ";")
        return CARule(condition, action, args)


def _infer_param_types(spec_shell: Spec, raw_actions, rules, diagnostics):
    """Fill omitted action parameter types from the enabling rule's argAttrs."""
    actions = []
    for name, params, effects in raw_actions:
        rule = next((r for r in rules if r.action == name), None)
        final = []
        for i, (pname, ptype, tok) in enumerate(params):
            if ptype is None:
                ptype = _inferred_type(spec_shell, rule, i)
                if ptype is None:
                    diagnostics.append(
                        Diagnostic(
                            tok.line,
                            tok.col,
                            f"cannot infer type of parameter '{pname}' (no usable rule); "
                            "declare it explicitly",
                        )
                    )
                    continue
            final.append((pname, ptype))
        actions.append(Action(name, tuple(final), effects))
    return actions


def _inferred_type(spec_shell: Spec, rule, index: int):
    if rule is None or index >= len(rule.arg_attrs):
        return None
    branch = rule.condition.branches[0]
    names = [p.name if isinstance(p, AttrRef) else None for p in branch.projection]
    attr = rule.arg_attrs[index]
    if attr not in names:
        return None
    try:
        scope = model.Scope.for_branch(spec_shell, branch)
        _, _, t = scope.resolve(branch.projection[names.index(attr)])
        return t
    except model.ResolutionError:
        return None


def parse_spec(text: str) -> Spec:
    """Parse a spec text; raises ParseError carrying all diagnostics."""
    parser = _Parser(tokenize(text))
    relations, services, raw_actions, rules, diagnostics = parser.parse_spec_body()
    shell = Spec(relations=tuple(relations))
    actions = _infer_param_types(shell, raw_actions, rules, diagnostics)
    if diagnostics:
        raise ParseError(diagnostics)
    return Spec(tuple(relations), tuple(services), tuple(actions), tuple(rules))


def parse_query(text: str) -> SelectQuery:
    """Parse a standalone SELECT query (goal conditions, tests)."""
    parser = _Parser(tokenize(text))
    try:
        q = parser.select_query()
        parser.accept("PUNCT", ";")
        parser.expect("EOF", what="end of query")
    except _Syntax as e:
        raise ParseError([e.diagnostic]) from None
    return q


# --- rendering ----------------------------------------------------------------


def render_value(v) -> str:
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    return str(v)


def _render_operand(op) -> str:
    if isinstance(op, AttrRef):
        return f"{op.qualifier}.{op.name}" if op.qualifier else op.name
    if isinstance(op, Const):
        return render_value(op.value)
    if isinstance(op, Param):
        return f":{op.name}"
    raise TypeError(f"bad operand {op!r}")


def _render_term(term) -> str:
    if isinstance(term, Invocation):
        args = ", ".join(_render_term(a) for a in term.args)
        return f"@{term.service}({args})"
    return _render_operand(term)


def _render_condition(cond) -> str:
    def wrap(child) -> str:
        text = _render_condition(child)
        return text if isinstance(child, Comparison) else f"({text})"

    if isinstance(cond, Comparison):
        return f"{_render_operand(cond.left)} {cond.op} {_render_operand(cond.right)}"
    if isinstance(cond, model.And):
        return " AND ".join(wrap(c) for c in cond.items)
    if isinstance(cond, model.Or):
        return " OR ".join(wrap(c) for c in cond.items)
    if isinstance(cond, model.Not):
        return f"NOT {wrap(cond.item)}"
    raise TypeError(f"bad condition {cond!r}")


def render_query(q: SelectQuery) -> str:
    parts = []
    for branch in q.branches:
        proj = ", ".join(_render_operand(p) for p in branch.projection)
        froms = ", ".join(
            fi.relation if fi.alias == fi.relation else f"{fi.relation} {fi.alias}"
            for fi in branch.from_items
        )
        text = f"SELECT {proj} FROM {froms}"
        if branch.where is not None:
            text += f" WHERE {_render_condition(branch.where)}"
        parts.append(text)
    return " UNION ".join(parts)


def _render_effect(eff) -> str:
    if isinstance(eff, DeleteEffect):
        text = f"DELETE FROM {eff.relation}"
        if eff.where is not None:
            text += f" WHERE {_render_condition(eff.where)}"
        return text
    cols = ", ".join(eff.columns)
    head = f"INSERT INTO {eff.relation}({cols})"
    if isinstance(eff.source, SelectQuery):
        return f"{head} {render_query(eff.source)}"
    terms = ", ".join(_render_term(t) for t in eff.source)
    return f"{head} VALUES ({terms})"


def _render_relation(rel: RelationSchema) -> str:
    inline_fk = {}
    trailing = []
    for fk in rel.foreign_keys:
        if len(fk.source_attrs) == 1 and fk.source_attrs[0] not in inline_fk:
            inline_fk[fk.source_attrs[0]] = fk
        else:
            trailing.append(fk)
    lines = []
    for attr, atype in rel.attrs:
        piece = f"{attr} {atype.value}"
        if rel.key == (attr,):
            piece += " PRIMARY KEY"
        dom = rel.domain_of(attr)
        if dom is not None:
            piece += " DOMAIN (" + ", ".join(render_value(v) for v in dom) + ")"
        fk = inline_fk.get(attr)
        if fk is not None:
            piece += f" REFERENCES {fk.target_relation}({fk.target_attrs[0]})"
        lines.append(piece)
    if len(rel.key) != 1:
        lines.append("PRIMARY KEY (" + ", ".join(rel.key) + ")")
    for fk in trailing:
        lines.append(
            "FOREIGN KEY ("
            + ", ".join(fk.source_attrs)
            + f") REFERENCES {fk.target_relation}("
            + ", ".join(fk.target_attrs)
            + ")"
        )
    body = ",\n  ".join(lines)
    return f"RELATION {rel.name} (\n  {body}\n);"


def _render_action(action: Action) -> str:
    params = ", ".join(f"{n} {t.value}" for n, t in action.params)
    head = f"ACTION {action.name}({params})"
    if not action.effects:
        return head + " { }"
    body = "\n".join(f"  {_render_effect(e)};" for e in action.effects)
    return f"{head} {{\n{body}\n}}"


def render_spec(spec: Spec) -> str:
    """Canonical text: relations, then services, actions, rules."""
    blocks = []
    blocks.extend(_render_relation(r) for r in spec.relations)
    blocks.extend(
        f"SERVICE {s.name}(" + ", ".join(t.value for t in s.param_types) + f") : {s.return_type.value};"
        for s in spec.services
    )
    blocks.extend(_render_action(a) for a in spec.actions)
    blocks.extend(
        f"RULE {render_query(r.condition)} ENABLES {r.action}(" + ", ".join(r.arg_attrs) + ");"
        for r in spec.rules
    )
    return "\n\n".join(blocks) + "\n"
