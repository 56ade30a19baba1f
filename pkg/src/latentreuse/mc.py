"""Monte Carlo plumbing: batch-keyed streams, worker splitting, batch-mean errors.

The sample budget is cut into ``n_batches`` batches.  Batch ``b`` draws from
the stream ``(seed, tag, b)`` regardless of which worker runs it, so results
are bit-identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .datamodel import draw_reference
from .rng import make_rng
from .schedule import DiffusionSchedule, alpha, h

N_BATCHES = 32


@dataclass(frozen=True, eq=False)
class RiskEstimate:
    """A time-averaged Monte Carlo expectation with its standard error."""

    value: float
    stderr: float
    per_node: np.ndarray
    n_samples: int
    seed: int
    label: str = ""
    per_node_stderr: np.ndarray = field(default=None)

    def to_dict(self):
        return {
            "label": self.label,
            "value": self.value,
            "stderr": self.stderr,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "per_node": np.asarray(self.per_node).tolist(),
            "per_node_stderr": None if self.per_node_stderr is None else np.asarray(self.per_node_stderr).tolist(),
        }


def batch_sizes(n: int, n_batches: int = N_BATCHES):
    n_batches = max(1, min(n_batches, n))
    base, extra = divmod(n, n_batches)
    return [base + (b < extra) for b in range(n_batches)]


def batch_mean_stats(batch_means, batch_counts):
    """Weighted mean of batch means and its batch-means standard error."""
    m = np.asarray(batch_means, dtype=float)
    c = np.asarray(batch_counts, dtype=float)
    w = c / c.sum()
    mean = np.tensordot(w, m, axes=1)
    B = len(c)
    if B < 2:
        return mean, np.zeros_like(mean) * np.nan
    dev = m - mean
    var = np.tensordot(w, dev**2, axes=1) * B / (B - 1)
    return mean, np.sqrt(var / B)


def run_batches(fn, n, seed, tag, n_batches=N_BATCHES, workers=1):
    """Run ``fn(rng, size) -> array`` per batch; results in batch order."""
    sizes = batch_sizes(n, n_batches)
    jobs = [(make_rng(seed, tag, b), s) for b, s in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(lambda j: fn(*j), jobs))
    else:
        out = [fn(*j) for j in jobs]
    return out, sizes


def time_averaged_batches(
    reference,
    per_point,
    sched: DiffusionSchedule,
    n: int,
    seed: int,
    tag: str = "mc",
    n_batches: int = N_BATCHES,
    workers: int = 1,
):
    """Raw batch results for a possibly vector-valued per-sample functional.

    Returns ``(batch_values, sizes)`` where ``batch_values`` has shape
    ``(B, 1 + n_nodes, *out_shape)``: row 0 is the batch mean of the
    per-sample time average, the rest are per-node batch means.
    """
    nodes, wts = sched.nodes, sched.weights / sched.length

    def one_batch(rng, size):
        x0, labels = draw_reference(reference, size, rng)
        rows = []
        acc = 0.0
        for j, t in enumerate(nodes):
            xt = alpha(t) * x0 + np.sqrt(h(t)) * rng.standard_normal(x0.shape)
            v = np.asarray(per_point(xt, float(t), x0, labels), dtype=float)
            rows.append(v.mean(axis=0))
            acc = acc + wts[j] * v
        return np.stack([np.mean(acc, axis=0)] + rows)

    out, sizes = run_batches(one_batch, n, seed, tag, n_batches, workers)
    return np.stack(out), sizes


def time_averaged_expectation(
    reference,
    per_point,
    sched: DiffusionSchedule,
    n: int,
    seed: int,
    tag: str = "mc",
    n_batches: int = N_BATCHES,
    workers: int = 1,
    label: str = "",
) -> RiskEstimate:
    """Estimate ``avg_t E[per_point(X_t, t, X_0, labels)]`` over the schedule.

    One X_0 batch is drawn from ``reference`` and renoised with fresh noise at
    every node.  ``per_point`` returns one value per sample.
    """
    out, sizes = time_averaged_batches(reference, per_point, sched, n, seed, tag, n_batches, workers)
    mean, se = batch_mean_stats(out, sizes)
    return RiskEstimate(
        value=float(mean[0]),
        stderr=float(se[0]),
        per_node=mean[1:],
        per_node_stderr=se[1:],
        n_samples=int(n),
        seed=int(seed),
        label=label,
    )
