"""Collects one verdict line per acceptance criterion for the terminal summary."""

RESULTS: dict[int, tuple[bool, str]] = {}


def record(number: int, passed: bool, detail: str) -> None:
    RESULTS[number] = (passed, detail)
    print(line(number))


def line(number: int) -> str:
    passed, detail = RESULTS[number]
    return f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
