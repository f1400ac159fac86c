"""Finite-difference verification of tape gradients.

Central differences (f(x+h) - f(x-h)) / 2h on the scalarised output are
compared against one backward pass; the relative error uses
|a - b| / max(|a|, |b|, 1e-8).  Checks run in float64.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .tensor import Tape, backward, constant, leaf, set_kink_collector, sum_all


@dataclass
class GradCheckEntry:
    name: str
    input_index: int
    max_rel_err: float
    worst_coord: tuple
    tol: float
    skipped_kinks: int = 0

    @property
    def passed(self):
        return self.max_rel_err < self.tol


@dataclass
class GradCheckReport:
    name: str
    entries: list = field(default_factory=list)

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self):
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def worst(self):
        return max(self.entries, key=lambda e: e.max_rel_err, default=None)

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}: {status} (max rel err {self.max_rel_err:.3e})"


def _scalar_eval(fn, arrays):
    """Evaluate the scalarised function plus a kink signature: the branch taken
    by every relu/abs.  Probes whose two evaluations disagree on any branch
    straddle a nondifferentiable point and must be discarded."""
    signature = []
    set_kink_collector(signature)
    try:
        out = fn(*[constant(a) for a in arrays])
    finally:
        set_kink_collector(None)
    value = float(out.data) if out.shape == () else float(out.data.sum())
    return value, signature


def _same_signature(sig_a, sig_b):
    if len(sig_a) != len(sig_b):
        return False
    return all(np.array_equal(a, b) for a, b in zip(sig_a, sig_b))


def grad_check(fn, inputs, name="op", tol=1e-5, h=1e-4, max_coords=None, rng=None,
               grad_scale=None):
    """Check d(sum(fn(*inputs)))/d(input) against central finite differences.

    inputs are numpy arrays (promoted to float64).  With max_coords set, only
    that many randomly chosen coordinates per input are probed; otherwise every
    coordinate is.  Probes whose +-h interval crosses a relu/abs kink are
    skipped and replaced by further candidates when available.  grad_scale is
    a test seam: a mapping {input_index: factor} applied to the analytic
    gradient to simulate a broken backward pass.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    tape = Tape()
    leaves = [leaf(a, tape) for a in arrays]
    out = fn(*leaves)
    loss = out if out.shape == () else sum_all(out)
    grads = backward(tape, loss)

    if rng is None:
        rng = np.random.default_rng(0)
    report = GradCheckReport(name=name)
    for i, a in enumerate(arrays):
        analytic = np.asarray(grads[leaves[i]], dtype=np.float64)
        if grad_scale and i in grad_scale:
            analytic = analytic * grad_scale[i]
        if a.size == 0:
            continue
        candidates = rng.permutation(a.size)
        budget = a.size if max_coords is None else min(max_coords, a.size)
        checked = 0
        skipped = 0
        worst_err = 0.0
        worst_coord = ()
        for fi in candidates:
            if checked >= budget:
                break
            coord = np.unravel_index(fi, a.shape)
            orig = a[coord]
            a[coord] = orig + h
            f_plus, sig_plus = _scalar_eval(fn, arrays)
            a[coord] = orig - h
            f_minus, sig_minus = _scalar_eval(fn, arrays)
            a[coord] = orig
            if not _same_signature(sig_plus, sig_minus):
                skipped += 1
                continue
            checked += 1
            fd = (f_plus - f_minus) / (2.0 * h)
            an = analytic[coord]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            if rel > worst_err:
                worst_err = rel
                worst_coord = coord
        report.entries.append(
            GradCheckEntry(name=name, input_index=i, max_rel_err=worst_err,
                           worst_coord=worst_coord, tol=tol, skipped_kinks=skipped)
        )
    if not report.entries:
        raise ContractError(f"grad_check({name}): nothing to check")
    return report


def kink_free(arr, threshold=1e-3, rng=None):
    """Push values away from zero so ReLU-style kinks cannot corrupt the check."""
    if rng is None:
        rng = np.random.default_rng(0)
    arr = np.asarray(arr, dtype=np.float64).copy()
    near = np.abs(arr) < threshold
    while near.any():
        arr[near] = rng.uniform(-1.0, 1.0, size=int(near.sum()))
        near = np.abs(arr) < threshold
    return arr
