"""Answer extraction and normalization for correctness checks."""

from __future__ import annotations

_BOXED = "\\boxed{"


def extract_boxed(text: str) -> str | None:
    """Return the content of the last \\boxed{...} span, or None.

    Braces nest; an unclosed span runs to the end of the string.
    """
    start = text.rfind(_BOXED)
    if start < 0:
        return None
    i = start + len(_BOXED)
    depth = 1
    out = []
    while i < len(text):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                break
        out.append(ch)
        i += 1
    return "".join(out)


def normalize_answer(text: str) -> str:
    """Canonical comparison form: boxed content when present, trimmed."""
    boxed = extract_boxed(text)
    base = boxed if boxed is not None else text
    return base.strip()
