"""Control score of a performance: the median of the panel's marks."""

from fractions import Fraction
from typing import Iterable


def median_control_score(marks: Iterable[Fraction]) -> Fraction:
    """
    Compute the median panel mark.

    For an even panel the result is the midpoint of the two central marks,
    which may fall off the scale grid.

    Args:
        marks: Exact marks of one panel (at least two)

    Returns:
        Fraction: The control score

    Raises:
        ValueError: If fewer than two marks are given
    """
    ordered = sorted(marks)
    n = len(ordered)
    if n < 2:
        raise ValueError(f"median control score needs at least 2 marks, got {n}")
    mid = n // 2
    if n % 2:
        return Fraction(ordered[mid])
    return Fraction(ordered[mid - 1] + ordered[mid], 2)
