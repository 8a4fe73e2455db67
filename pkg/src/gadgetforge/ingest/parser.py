"""Recursive-descent parser for ``.pc`` pseudocode listings.

Grammar (EBNF); ``docs/grammar.md`` carries the same text::

    module     = function { function } ;
    function   = ( "int" | "char" | "void" ) IDENT "(" [ param { "," param } ] ")" block ;
    param      = vartype IDENT [ "[" "]" ] ;
    vartype    = "int" | "char" ;
    block      = "{" { statement } "}" ;
    statement  = decl | if | while | return | simple ";" ;
    decl       = vartype IDENT [ "[" INT "]" ] ";" ;
    simple     = call | lvalue "=" ( call | expr ) ;
    call       = IDENT "(" [ expr { "," expr } ] ")" ;
    lvalue     = IDENT [ "[" expr "]" ] ;
    if         = "if" "(" expr ")" body [ "else" body ] ;
    while      = "while" "(" expr ")" body ;
    body       = block | statement ;
    return     = "return" [ expr ] ";" ;
    expr       = and { "||" and } ;
    and        = equality { "&&" equality } ;
    equality   = relation { ( "==" | "!=" ) relation } ;
    relation   = additive { ( "<" | "<=" | ">" | ">=" ) additive } ;
    additive   = term { ( "+" | "-" ) term } ;
    term       = unary { ( "*" | "/" | "%" ) unary } ;
    unary      = ( "-" | "!" ) unary | primary ;
    primary    = INT | STRING | IDENT [ "[" expr "]" ] | "(" expr ")" ;

Calls appear only at statement level. A statement that follows one which
always returns is rejected as unreachable.
"""
from __future__ import annotations

import hashlib

from ..errors import DuplicateFunction, EmptyInput, ListingSyntaxError
from .lexer import Token, tokenize
from .model import (
    Assign,
    Binary,
    Call,
    Decl,
    If,
    Index,
    Name,
    Num,
    Param,
    PseudoFunction,
    PseudoModule,
    Return,
    Str,
    Unary,
    While,
    children,
)

VAR_TYPES = ("int", "char")
RET_TYPES = ("int", "char", "void")

# binary operator tiers, loosest first
_TIERS = (("||",), ("&&",), ("==", "!="), ("<", "<=", ">", ">="), ("+", "-"), ("*", "/", "%"))


def text_digest(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=8).hexdigest()


class _Parser:
    def __init__(self, tokens: list):
        self.toks = tokens
        self.pos = 0
        self.next_index = 0

    # -- token helpers
    @property
    def cur(self) -> Token:
        return self.toks[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.cur
        return t.text == text and t.kind in ("op", "keyword")

    def advance(self) -> Token:
        t = self.cur
        self.pos += 1
        return t

    def fail(self, expected: str):
        t = self.cur
        raise ListingSyntaxError(t.line, t.column, expected, t.text or "end of input")

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(repr(text))
        return self.advance()

    def expect_ident(self) -> Token:
        if self.cur.kind != "ident":
            self.fail("identifier")
        return self.advance()

    # -- top level
    def module(self) -> list:
        if self.cur.kind == "eof":
            self.fail("function definition")
        fns = []
        while self.cur.kind != "eof":
            fns.append(self.function())
        return fns

    def function(self) -> PseudoFunction:
        start = self.cur
        if start.text not in RET_TYPES or start.kind != "keyword":
            self.fail("function return type")
        ret = self.advance().text
        name = self.expect_ident().text
        self.expect("(")
        params = []
        if not self.at(")"):
            while True:
                params.append(self.param())
                if not self.at(","):
                    break
                self.advance()
        self.expect(")")
        self.next_index = 0
        body = self.block()
        flat = []

        def walk(stmts):
            for s in stmts:
                flat.append(s)
                walk(children(s))

        walk(body)
        assert [s.index for s in flat] == list(range(len(flat)))
        callsites = tuple((s.callee, s.index) for s in flat if isinstance(s, Call))
        return PseudoFunction(
            name=name,
            return_type=ret,
            params=tuple(params),
            body=body,
            statements=tuple(flat),
            callsites=callsites,
            line=start.line,
            column=start.column,
        )

    def param(self) -> Param:
        if self.cur.text not in VAR_TYPES or self.cur.kind != "keyword":
            self.fail("parameter type")
        typ = self.advance().text
        name = self.expect_ident().text
        is_array = False
        if self.at("["):
            self.advance()
            self.expect("]")
            is_array = True
        return Param(name, typ, is_array)

    # -- statements
    def block(self) -> tuple:
        self.expect("{")
        stmts = self.statement_list()
        self.expect("}")
        return stmts

    def statement_list(self) -> tuple:
        stmts = []
        while not self.at("}"):
            if self.cur.kind == "eof":
                self.fail("'}'")
            if stmts and always_returns(stmts[-1]):
                self.fail("end of block after return (unreachable statement)")
            stmts.append(self.statement())
        return tuple(stmts)

    def body(self) -> tuple:
        if self.at("{"):
            return self.block()
        return (self.statement(),)

    def statement(self):
        t = self.cur
        idx = self.next_index
        self.next_index += 1
        if t.kind == "keyword" and t.text in VAR_TYPES:
            return self.decl(idx, t)
        if self.at("if"):
            self.advance()
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            then = self.body()
            orelse = None
            if self.at("else"):
                self.advance()
                orelse = self.body()
            return If(idx, t.line, t.column, cond, then, orelse)
        if self.at("while"):
            self.advance()
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            return While(idx, t.line, t.column, cond, self.body())
        if self.at("return"):
            self.advance()
            value = None if self.at(";") else self.expr()
            self.expect(";")
            return Return(idx, t.line, t.column, value)
        if t.kind != "ident":
            self.fail("statement")
        if self.peek().text == "(" and self.peek().kind == "op":
            callee, args = self.call()
            self.expect(";")
            return Call(idx, t.line, t.column, callee, args, None)
        target = self.lvalue()
        self.expect("=")
        if self.cur.kind == "ident" and self.peek().text == "(" and self.peek().kind == "op":
            callee, args = self.call()
            self.expect(";")
            return Call(idx, t.line, t.column, callee, args, target)
        value = self.expr()
        self.expect(";")
        return Assign(idx, t.line, t.column, target, value)

    def decl(self, idx: int, t: Token) -> Decl:
        typ = self.advance().text
        name = self.expect_ident().text
        size = None
        if self.at("["):
            self.advance()
            if self.cur.kind != "int":
                self.fail("array length")
            size = _int_value(self.advance().text)
            self.expect("]")
        self.expect(";")
        return Decl(idx, t.line, t.column, typ, name, size)

    def call(self):
        callee = self.expect_ident().text
        self.expect("(")
        args = []
        if not self.at(")"):
            while True:
                args.append(self.expr())
                if not self.at(","):
                    break
                self.advance()
        self.expect(")")
        return callee, tuple(args)

    def lvalue(self):
        name = Name(self.expect_ident().text)
        if self.at("["):
            self.advance()
            idx = self.expr()
            self.expect("]")
            return Index(name, idx)
        return name

    # -- expressions
    def expr(self, tier: int = 0):
        if tier == len(_TIERS):
            return self.unary()
        left = self.expr(tier + 1)
        ops = _TIERS[tier]
        while self.cur.kind == "op" and self.cur.text in ops:
            op = self.advance().text
            left = Binary(op, left, self.expr(tier + 1))
        return left

    def unary(self):
        if self.cur.kind == "op" and self.cur.text in ("-", "!"):
            op = self.advance().text
            return Unary(op, self.unary())
        return self.primary()

    def primary(self):
        t = self.cur
        if t.kind == "int":
            self.advance()
            return Num(_int_value(t.text))
        if t.kind == "string":
            self.advance()
            return Str(t.text[1:-1])
        if t.kind == "ident":
            if self.peek().text == "(" and self.peek().kind == "op":
                self.fail("expression (calls are statement-level only)")
            return self.lvalue()
        if self.at("("):
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        self.fail("expression")


def _int_value(text: str) -> int:
    return int(text, 16) if text[:2] in ("0x", "0X") else int(text)


def always_returns(stmt) -> bool:
    if isinstance(stmt, Return):
        return True
    if isinstance(stmt, If) and stmt.orelse is not None:
        return _list_returns(stmt.then) and _list_returns(stmt.orelse)
    return False


def _list_returns(stmts) -> bool:
    return any(always_returns(s) for s in stmts)


def parse_pseudocode(text: str, source_id: str, adapter_id: str = "text-listing") -> PseudoModule:
    """Parse a listing into a :class:`PseudoModule`.

    Raises EmptyInput for empty/blank text, ListingSyntaxError on grammar
    violations and DuplicateFunction when a name is defined twice.
    """
    if not text or not text.strip():
        raise EmptyInput(f"{source_id}: empty listing")
    p = _Parser(tokenize(text))
    fns = p.module()
    seen = set()
    for fn in fns:
        if fn.name in seen:
            raise DuplicateFunction(fn.name)
        seen.add(fn.name)
    return PseudoModule(
        source_id=source_id,
        functions=tuple(fns),
        adapter_id=adapter_id,
        raw_text_hash=text_digest(text.encode("utf-8")),
    )
