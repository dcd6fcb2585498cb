"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward

# Denominator floor for the relative error; below it the comparison is absolute.
REL_FLOOR = 1e-3


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    worst_index: tuple[int, int] | None = None  # (tensor position, flat element index)
    checked: int = 0
    aborted: list[tuple[int, int]] = field(default_factory=list)
    tolerance: float = 1e-5

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance and not self.aborted

    def merge(self, other: "GradCheckReport") -> "GradCheckReport":
        if other.max_rel_error > self.max_rel_error:
            self.max_rel_error = other.max_rel_error
            self.worst_index = other.worst_index
        self.checked += other.checked
        self.aborted.extend(other.aborted)
        return self


def relative_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    fn: Callable[[], Tensor],
    point: Sequence[Tensor],
    step: float = 1e-6,
    tolerance: float = 1e-5,
    max_elements: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare ``backward`` against central differences of ``fn``.

    ``fn`` takes no arguments and closes over the tensors in ``point``; their
    ``data`` arrays are perturbed in place and restored.  When ``max_elements``
    is given, that many coordinates per tensor are sampled with ``rng``
    instead of checking every element.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    out = fn()
    analytic = backward(out, point)
    report = GradCheckReport(tolerance=tolerance)
    rng = rng or np.random.default_rng(0)
    for ti, t in enumerate(point):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = rng.choice(flat.size, size=max_elements, replace=False)
        ga = analytic[ti].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = fn().item()
            flat[i] = orig - step
            fm = fn().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                report.aborted.append((ti, int(i)))
                continue
            numeric = (fp - fm) / (2.0 * step)
            err = relative_error(float(ga[i]), numeric)
            report.checked += 1
            if err > report.max_rel_error or report.worst_index is None:
                report.max_rel_error = max(err, report.max_rel_error)
                if err >= report.max_rel_error:
                    report.worst_index = (ti, int(i))
    return report
