"""Small builders shared by the test modules."""
import math

import numpy as np

from prediction_consistency.model_zoo import logistic_model


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def constant_model(c: float, d: int):
    """Logistic model with zero weights, so f(x) = c everywhere (up to rounding)."""
    return logistic_model(np.zeros(d), logit(c))


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list = []


def record(n: int, ok: bool, detail: str, soft: bool = False) -> str:
    status = "PASS" if ok else ("WARN" if soft else "FAIL")
    line = f"[{status}] criterion {n}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return line
