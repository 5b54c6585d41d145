"""
Parser for the expression grammar.

The grammar is::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := atom ('^' atom)?
    atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')' | '-' factor

Identifiers are the variables of a :class:`~stochsym.expr.VariableSpace` and the function names
in :data:`~stochsym.expr.FUNCTIONS`. Whitespace (including newlines) is insignificant. The
parser is a small Pratt parser: each token kind has a left binding power and prefix (``nud``)
or infix (``led``) handling.
"""

import logging
import re
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List

from .exceptions import ParseError, UnknownVariableError
from .expr import FUNCTIONS, Add, Div, Expression, Func, Mul, Neg, Num, Pow, Sub, Var, VariableSpace

logger = logging.getLogger(__name__)

TOKEN_RE = re.compile(
    r"""
    (?P<space>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)

#: dict: Left binding powers of the infix operators
BINDING_POWER: Dict[str, int] = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}

#: int: Right binding power of unary minus; only '^' binds tighter, so -x^2 is -(x^2)
UNARY_MINUS_POWER = 25

_INFIX: Dict[str, Callable[[Expression, Expression], Expression]] = {
    "+": Add,
    "-": Sub,
    "*": Mul,
    "/": Div,
}


@dataclass(frozen=True)
class Token:
    """A lexical token with its 1-based source position."""

    kind: str
    text: str
    line: int
    column: int

    @property
    def binding_power(self) -> int:
        """Left binding power; zero for anything that cannot continue an expression."""
        return BINDING_POWER.get(self.text, 0) if self.kind == "op" else 0


def tokenize(text: str) -> Iterator[Token]:
    """
    Split ``text`` into tokens, ending with an ``end`` token.

    Raises:
        ParseError: On characters outside the grammar
    """
    position = 0
    line, line_start = 1, 0
    while position < len(text):
        match = TOKEN_RE.match(text, position)
        if match is None:
            raise ParseError(line, position - line_start + 1, f"unexpected character '{text[position]}'")
        kind = match.lastgroup or ""
        if kind != "space":
            yield Token(kind, match.group(), line, position - line_start + 1)
        else:
            newlines = match.group().count("\n")
            if newlines:
                line += newlines
                line_start = match.start() + match.group().rfind("\n") + 1
        position = match.end()
    yield Token("end", "", line, position - line_start + 1)


class Parser:
    """
    Parse one expression over a variable space.

    Args:
        text: Source text
        space: The variables that may appear
    """

    def __init__(self, text: str, space: VariableSpace):
        self.space = space
        self.tokens: List[Token] = list(tokenize(text))
        self.index = 0

    @property
    def token(self) -> Token:
        """The current token."""
        return self.tokens[self.index]

    def advance(self) -> Token:
        """Consume and return the current token."""
        token = self.tokens[self.index]
        if token.kind != "end":
            self.index += 1
        return token

    def error(self, token: Token, message: str) -> ParseError:
        """Build a :class:`ParseError` located at ``token``."""
        return ParseError(token.line, token.column, message)

    def expect(self, text: str) -> Token:
        """Consume an operator token ``text`` or fail."""
        token = self.token
        if token.kind != "op" or token.text != text:
            found = token.text or "end of input"
            raise self.error(token, f"expected '{text}', found '{found}'")
        return self.advance()

    def parse(self) -> Expression:
        """Parse the whole input."""
        result = self.expression()
        if self.token.kind != "end":
            raise self.error(self.token, f"unexpected '{self.token.text}'")
        return result

    def expression(self, rbp: int = 0) -> Expression:
        """Pratt loop: parse a prefix, then fold infix operators binding tighter than ``rbp``."""
        left = self.atom()
        while rbp < self.token.binding_power:
            operator = self.advance()
            left = self.led(operator, left)
        return left

    def led(self, operator: Token, left: Expression) -> Expression:
        """Infix handling for ``operator`` with the already-parsed ``left`` operand."""
        if operator.text == "^":
            exponent = self.atom()
            if self.token.kind == "op" and self.token.text == "^":
                raise self.error(self.token, "chained '^' is ambiguous; use parentheses")
            return Pow(left, exponent)
        right = self.expression(BINDING_POWER[operator.text])
        return _INFIX[operator.text](left, right)

    def atom(self) -> Expression:
        """Prefix handling: numbers, names, calls, parentheses and unary minus."""
        token = self.advance()
        if token.kind == "number":
            return Num(float(token.text))
        if token.kind == "ident":
            return self.identifier(token)
        if token.kind == "op" and token.text == "(":
            inner = self.expression()
            self.expect(")")
            return inner
        if token.kind == "op" and token.text == "-":
            operand = self.expression(UNARY_MINUS_POWER)
            return Num(-operand.value) if isinstance(operand, Num) else Neg(operand)
        found = token.text or "end of input"
        raise self.error(token, f"expected a number, name or '(', found '{found}'")

    def identifier(self, token: Token) -> Expression:
        """A function call or a variable reference."""
        if token.text in FUNCTIONS:
            self.expect("(")
            argument = self.expression()
            self.expect(")")
            return Func(token.text, argument)
        if token.text not in self.space:
            raise UnknownVariableError(token.text, token.line, token.column)
        if self.token.kind == "op" and self.token.text == "(":
            raise self.error(self.token, f"'{token.text}' is a variable, not a function")
        return Var(token.text)


def parse(text: str, space: VariableSpace) -> Expression:
    """
    Parse ``text`` into an expression over ``space``.

    Args:
        text: Source text in the expression grammar
        space: The declared variables

    Raises:
        ParseError: On syntax errors, with line and column
        UnknownVariableError: On identifiers outside ``space``

    Returns:
        The expression tree
    """
    result = Parser(text, space).parse()
    logger.debug("parsed %r", text)
    return result
