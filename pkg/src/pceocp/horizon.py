"""Joint orthonormal basis over a control horizon.

The joint basis consists of one shared constant, the non-constant terms of the
initial-condition basis, and then one block of disturbance terms per time step,
each over its own fresh germs:

    index 0                               constant
    1 .. L_ini - 1                        initial-condition block
    L_ini + off_k .. L_ini + off_k + n_k - 1   block of step k (xi_k)

For i.i.d. disturbances ``n_k = L_w - 1`` and ``L = L_ini + N (L_w - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .pce import MultiBasis, PCEError, PCEVector, union_basis

__all__ = ["HorizonBasis", "BlockTag", "joint_basis", "non_i_i_d_extend", "embed"]


@dataclass(frozen=True)
class BlockTag:
    """Which block a term belongs to: ``kind`` in {constant, ini, disturbance}."""

    kind: str
    step: int | None
    offset: int


def _check_orthonormal(basis: MultiBasis, what: str) -> None:
    # Univariate families come from make_basis, so orthonormality reduces to
    # product structure over independent germs with a leading constant.
    for g in basis.germs:
        if g.basis.norms is None or g.basis.norms.size != g.basis.max_degree + 1:
            raise PCEError(f"{what} basis germ {g.id} lacks normalization data")
    if basis.terms.shape[0] and np.any(basis.terms[0]):
        raise PCEError(f"{what} basis is not orthonormal: first term is not the constant")


@dataclass(frozen=True, eq=False)
class HorizonBasis:
    """Joint basis Psi with block bookkeeping.

    Attributes:
        basis: the joint MultiBasis.
        L_ini: term count of the initial-condition basis (including the constant).
        step_sizes: number of non-constant terms contributed by each step.
        N: horizon length.
        ini_basis: initial-condition basis with relabeled germ ids.
        step_bases: per-step disturbance bases with relabeled germ ids.
    """

    basis: MultiBasis
    L_ini: int
    step_sizes: tuple[int, ...]
    ini_basis: MultiBasis = field(repr=False)
    step_bases: tuple[MultiBasis, ...] = field(repr=False)

    @property
    def N(self) -> int:
        return len(self.step_sizes)

    @property
    def L(self) -> int:
        return self.basis.L

    @property
    def L_w(self) -> int:
        """Disturbance term count for i.i.d. horizons (raises otherwise)."""
        sizes = set(self.step_sizes)
        if len(sizes) > 1:
            raise PCEError("L_w is undefined for heterogeneous per-step disturbances")
        return (sizes.pop() if sizes else 0) + 1

    @property
    def step_starts(self) -> np.ndarray:
        return self.L_ini + np.concatenate([[0], np.cumsum(self.step_sizes)[:-1]]).astype(int) if self.N else np.zeros(0, int)

    def ini_range(self) -> range:
        return range(1, self.L_ini)

    def step_range(self, k: int) -> range:
        if not 0 <= k < self.N:
            raise PCEError(f"step {k} out of range [0, {self.N - 1}]")
        s = int(self.step_starts[k])
        return range(s, s + self.step_sizes[k])

    def block_of(self, j: int) -> BlockTag:
        if not 0 <= j < self.L:
            raise PCEError(f"term index {j} out of range [0, {self.L - 1}]")
        if j == 0:
            return BlockTag("constant", None, 0)
        if j < self.L_ini:
            return BlockTag("ini", None, j - 1)
        starts = self.step_starts
        k = int(np.searchsorted(starts, j, side="right") - 1)
        return BlockTag("disturbance", k, j - int(starts[k]))

    def index_of(self, tag: BlockTag) -> int:
        if tag.kind == "constant":
            return 0
        if tag.kind == "ini":
            return 1 + tag.offset
        return int(self.step_starts[tag.step]) + tag.offset

    def term_step(self) -> np.ndarray:
        """Per term: disturbance step index, or -1 for constant/ini terms."""
        out = np.full(self.L, -1, dtype=int)
        for k in range(self.N):
            r = self.step_range(k)
            out[r.start : r.stop] = k
        return out

    def free_input_terms(self, k: int) -> np.ndarray:
        """Term indices on which u(k) may depend (constant, ini, steps < k)."""
        return np.flatnonzero(self.term_step() < k)

    def zero_input_terms(self, k: int) -> np.ndarray:
        """Term indices forced to zero in u(k) by causality (steps >= k)."""
        return np.flatnonzero(self.term_step() >= k)


def _relabeled(basis: MultiBasis, start: int) -> MultiBasis:
    ids = {g.id: start + i for i, g in enumerate(basis.germs)}
    return basis.relabel(lambda gid: ids[gid])


def non_i_i_d_extend(per_step: Sequence[PCEVector], ini: PCEVector) -> HorizonBasis:
    """Joint basis for possibly different disturbance expansions at each step."""
    per_step = list(per_step)
    if not per_step:
        raise PCEError("need at least one disturbance step (N >= 1)")
    _check_orthonormal(ini.basis, "initial-condition")
    ini_b = _relabeled(ini.basis, 0)
    next_id = ini_b.n_germs
    step_bases = []
    for k, w in enumerate(per_step):
        _check_orthonormal(w.basis, f"step-{k} disturbance")
        b = _relabeled(w.basis, next_id)
        next_id += b.n_germs
        step_bases.append(b)
    joint = union_basis([ini_b, *step_bases])
    return HorizonBasis(
        joint, ini_b.L, tuple(b.L - 1 for b in step_bases), ini_b, tuple(step_bases)
    )


def joint_basis(ini: PCEVector, w: PCEVector, N: int) -> HorizonBasis:
    """Joint basis for i.i.d. disturbances: ``w``'s structure replicated N times."""
    if N < 1:
        raise PCEError(f"horizon N must be >= 1, got {N}")
    return non_i_i_d_extend([w] * N, ini)


def embed(ini: PCEVector, w, hb: HorizonBasis) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of the initial condition and each W(k) in the joint basis.

    Args:
        ini: initial-condition PCE (same structure used to build ``hb``).
        w: one PCEVector (i.i.d.) or a sequence of N per-step PCEVectors.
        hb: joint basis.

    Returns:
        ``(x_ini, w_steps)`` with shapes ``(n_x, L)`` and ``(N, n_w, L)``.
    """
    if ini.L != hb.L_ini:
        raise PCEError(f"initial-condition basis has {ini.L} terms, horizon basis expects {hb.L_ini}")
    x = np.zeros((ini.dim, hb.L))
    x[:, : hb.L_ini] = ini.coeffs
    steps = list(w) if isinstance(w, (list, tuple)) else [w] * hb.N
    if len(steps) != hb.N:
        raise PCEError(f"expected {hb.N} disturbance steps, got {len(steps)}")
    n_w = steps[0].dim
    W = np.zeros((hb.N, n_w, hb.L))
    for k, wk in enumerate(steps):
        if wk.dim != n_w:
            raise PCEError(f"step {k} disturbance has dimension {wk.dim}, expected {n_w}")
        if wk.L - 1 != hb.step_sizes[k]:
            raise PCEError(
                f"step {k} disturbance has {wk.L} terms, horizon basis expects {hb.step_sizes[k] + 1}"
            )
        r = hb.step_range(k)
        W[k, :, 0] = wk.coeffs[:, 0]
        W[k, :, r.start : r.stop] = wk.coeffs[:, 1:]
    return x, W


