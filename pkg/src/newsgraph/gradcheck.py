"""Finite-difference verification of analytic gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    worst_entry: tuple[int, int]
    ok: bool
    note: str = ""


@dataclass
class GradCheckReport:
    entries: list[ParamCheck] = field(default_factory=list)
    max_rel_err: float = 0.0
    ok: bool = True

    def summary(self) -> str:
        lines = [
            f"{'PASS' if e.ok else 'FAIL'} {e.name}: max rel err "
            f"{e.max_rel_err:.3e} at {e.worst_entry}{' ' + e.note if e.note else ''}"
            for e in self.entries
        ]
        lines.append(f"overall: {'PASS' if self.ok else 'FAIL'} (max {self.max_rel_err:.3e})")
        return "\n".join(lines)


def _rel_err(a: float, n: float) -> float:
    # absolute floor of 1 keeps finite-difference noise on near-zero
    # gradients from being amplified into spurious relative error
    return abs(a - n) / max(1.0, abs(a), abs(n))


def grad_check(f, params: dict, step: float = 1e-5, tol: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must return a 1x1 loss tensor and be deterministic given the
    current values of ``params`` (a name -> Tensor mapping). Every entry of
    every parameter is perturbed by +-step. Non-finite values anywhere fail
    the check with the offending location.
    """
    plist = list(params.values())
    with Tape() as tape:
        loss = f()
    tape.backward(loss, params=plist)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    report = GradCheckReport()
    for name, p in params.items():
        a = analytic[name]
        worst = 0.0
        worst_at = (0, 0)
        note = ""
        ok = True
        for i in range(p.rows):
            for j in range(p.cols):
                orig = p.data[i, j]
                p.data[i, j] = orig + step
                fp = f().item()
                p.data[i, j] = orig - step
                fm = f().item()
                p.data[i, j] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    ok = False
                    note = f"non-finite loss at {name}[{i},{j}]"
                    worst = math.inf
                    worst_at = (i, j)
                    break
                num = (fp - fm) / (2.0 * step)
                err = _rel_err(a[i, j], num)
                if err > worst:
                    worst = err
                    worst_at = (i, j)
            if not ok:
                break
        if ok and not np.isfinite(a).all():
            ok = False
            note = f"non-finite analytic gradient in {name}"
            worst = math.inf
        entry_ok = ok and worst <= tol
        report.entries.append(ParamCheck(name, worst, worst_at, entry_ok, note))
        report.max_rel_err = max(report.max_rel_err, worst)
        if not entry_ok:
            report.ok = False
    return report
