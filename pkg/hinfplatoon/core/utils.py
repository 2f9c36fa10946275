from __future__ import annotations

from typing import Iterable, Sequence


__all__ = (
    "format_float",
    "human_join",
    "plural",
    "vehicle_label",
)


def human_join(sequence: Sequence[str], delim: str = ", ", final: str = "and") -> str:
    """
    Get comma-separated list, with the last element joined with *and*.

    Parameters
    ----------
    sequence : Sequence[str]
        The items of the list to join together.
    delim : str
        The delimiter to join the sequence with. Defaults to ", ".
    final : str
        The final delimiter. Defaults to "and".

    Returns
    --------
    str
        The formatted string, e.g. "s1, v1 and s2".
    """
    size = len(sequence)
    if size == 0:
        return ""

    if size == 1:
        return sequence[0]

    if size == 2:
        return f"{sequence[0]} {final} {sequence[1]}"

    return delim.join(sequence[:-1]) + f" {final} {sequence[-1]}"


class plural:
    """
    Formats a string to singular or plural based on the value it refers to.

    Examples
    --------
    - f"{plural(3):iteration}" -> "3 iterations"
    - f"{plural(1):entry|entries}" -> "1 entry"
    """

    def __init__(self, value):
        self.value = value

    def __format__(self, format_spec) -> str:
        v = self.value
        singular, _, plural = format_spec.partition("|")
        plural = plural or f"{singular}s"
        if abs(v) != 1:
            return f"{v} {plural}"
        return f"{v} {singular}"


def format_float(value: float) -> str:
    """
    Deterministic text form for floats written to CSV and artifact files.
    """
    return repr(float(value))


def vehicle_label(index: int, cav_indices: Iterable[int]) -> str:
    """
    Returns e.g. `CAV 1` or `HDV 3` for a 1-based vehicle index.
    """
    kind = "CAV" if index in set(cav_indices) else "HDV"
    return f"{kind} {index}"
