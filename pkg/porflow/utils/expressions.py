"""Safe compilation of analytic field expressions such as ``0.3 + 0.1*sin(pi*x)``.

Only numeric literals, the coordinate names ``x``, ``y``, ``z``, the time
``t``, arithmetic operators and a fixed table of numpy functions are allowed.
"""

import ast
from collections.abc import Callable

import numpy as np

VARIABLES = ("x", "y", "z", "t")

FUNCTIONS: dict[str, Callable[..., np.ndarray]] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
    "minimum": np.minimum,
    "maximum": np.maximum,
    "where": np.where,
}

CONSTANTS = {"pi": np.pi, "e": np.e}

_ALLOWED_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Compare,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.Mod,
    ast.USub,
    ast.UAdd,
    ast.Lt,
    ast.LtE,
    ast.Gt,
    ast.GtE,
)


def check_expression(text: str) -> ast.Expression:
    """Parse and validate an expression (pure function).

    Raises:
        ValueError: syntax error or a disallowed construct
    """
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as e:
        raise ValueError(f"Invalid expression {text!r}: {e.msg}") from e

    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ValueError(f"Expression {text!r} uses unsupported syntax {type(node).__name__}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, int | float):
            raise ValueError(f"Expression {text!r} contains a non-numeric literal")
        if isinstance(node, ast.Name) and node.id not in (*VARIABLES, *FUNCTIONS, *CONSTANTS):
            raise ValueError(f"Expression {text!r} uses unknown name {node.id!r}")
        if isinstance(node, ast.Call) and (
            not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or node.keywords
        ):
            raise ValueError(f"Expression {text!r} calls an unsupported function")
    return tree


def compile_expression(text: str | float) -> Callable[[np.ndarray, float], np.ndarray]:
    """Compile an expression into ``f(points, t=0.0)`` returning one value per point.

    ``points`` has shape (n, d); missing coordinates evaluate to zero.
    """
    if isinstance(text, int | float):
        value = float(text)
        return lambda points, t=0.0: np.full(len(points), value)

    code = compile(check_expression(text), "<expression>", "eval")

    def evaluate(points: np.ndarray, t: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n, d = points.shape
        scope: dict[str, object] = {**FUNCTIONS, **CONSTANTS, "t": float(t)}
        for axis, name in enumerate(VARIABLES[:3]):
            scope[name] = points[:, axis] if axis < d else np.zeros(n)
        result = eval(code, {"__builtins__": {}}, scope)  # noqa: S307
        return np.broadcast_to(np.asarray(result, dtype=np.float64), (n,)).copy()

    return evaluate


def uses_time(text: str | float) -> bool:
    """True when the expression mentions t (pure function)."""
    if isinstance(text, int | float):
        return False
    tree = check_expression(text)
    return any(isinstance(node, ast.Name) and node.id == "t" for node in ast.walk(tree))
