"""Batched exact scoring of ranking queries over template-shaped views.

Ranking wants, for a goal relation r and anchor constant a, the best proof
score of (r, a, y) for every candidate y at once. Running the stream prover
per candidate is exact but repeats almost all of its work across candidates;
this module computes the identical max-min scores in closed form, given that
every rule in the view is one of the three template shapes (same-direction
implication, argument-swapped implication, two-hop chain) and the proof
depth is at most 2.

Exactness rests on two facts about the search. First, template rule heads
and bodies hold only variables, so applying a rule binds goal constants
strictly and contributes exactly one predicate-kernel factor per rule link;
constants meet constant kernels only at the final fact unifications of each
branch. Second, min distributes over finite max, so grouping fact sweeps by
the actual stored constant that a variable binds to (never by a kernel
relay) turns nested enumeration into max-min matrix products over tables
indexed by real symbols.

Proof families at depth 2, each an exact closed form here:

* ``A``: zero, one, or two implication links ending in a fact. Effective
  predicate similarity matrices (SIM) fold the link kernels, tracking the
  argument-swap parity, and one grouped sweep finishes the job.
* ``B``: a top-level chain rule. Its first body resolves the middle
  constant strictly (through a fact, one implication link, or a nested
  chain); its second body is a pair table over (middle, candidate).
* ``C``: one implication link into a chain whose bodies are plain facts.

Scores below the unification threshold are zeroed at the end; pruning
during search only removes branches whose final score the cut would zero
anyway, so thresholding commutes with the max.

Head-side queries (vary the subject) reuse the same machinery on the
reversed view: facts swap subject/object, chains swap their two body slots,
and both implication shapes map to themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import accel
from .autodiff import ParameterStore
from .kb import KBView
from .prover import (SHAPE_CHAIN, SHAPE_IMPLIES, SHAPE_INVERSE, classify_rule,
                     kernel_tables)


@dataclass(slots=True)
class _ChainTables:
    hd: int
    b1: int
    b2: int
    Tmax: np.ndarray            # (C, C): second body via facts or one I-link
    H2: np.ndarray | None       # (C, C): nested chain, candidate side soft
    H2strict: np.ndarray | None  # (C, C): nested chain, final object strict


@dataclass(slots=True)
class _Pass:
    p_idx: np.ndarray
    s_idx: np.ndarray
    o_idx: np.ndarray
    simF: np.ndarray            # goal-level predicate similarity, forward
    simR: np.ndarray            # same with net argument swap
    chains: list[_ChainTables]
    bodyF: np.ndarray           # body-level similarity inside chain bodies
    bodyR: np.ndarray
    Wb1hd: np.ndarray | None    # (J, J): Kp[b1_i, hd_j]
    Wb2hd: np.ndarray | None    # (J, J): Kp[b2_i, hd_j]
    GIF: np.ndarray | None      # (P, J): best implies link into chain j
    GIR: np.ndarray | None      # (P, J): best inverse link into chain j


def _compose(Kp: np.ndarray, heads: np.ndarray, bodies: np.ndarray,
             S: np.ndarray) -> np.ndarray:
    """One I-link step: out[q,p] = max_j min(Kp[q, h_j], S[b_j, p])."""
    if len(heads) == 0:
        return np.zeros((Kp.shape[0], S.shape[1]))
    return accel.maxmin_matmat(np.ascontiguousarray(Kp[:, heads]),
                               np.ascontiguousarray(S[bodies]))


def _sim_matrices(Kp: np.ndarray, imp_h, imp_b, inv_h, inv_b, depth: int
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative effective predicate similarity through <= depth I-links."""
    zero = np.zeros_like(Kp)
    simF, simR = Kp, zero
    for _ in range(min(depth, 2)):
        simF, simR = (
            np.maximum(Kp, np.maximum(_compose(Kp, imp_h, imp_b, simF),
                                      _compose(Kp, inv_h, inv_b, simR))),
            np.maximum(_compose(Kp, imp_h, imp_b, simR),
                       _compose(Kp, inv_h, inv_b, simF)),
        )
    return simF, simR


def _pair_table(psim: np.ndarray, s_idx: np.ndarray, o_idx: np.ndarray,
                Kc: np.ndarray) -> np.ndarray:
    """T[x,y] = max_f min(psim[f], Kc[x,s_f], Kc[y,o_f]), both sides soft."""
    grouped = accel.strict_group(psim, s_idx, o_idx, Kc)
    return accel.maxmin_matmat(grouped, Kc)


def _build_pass(Kp: np.ndarray, Kc: np.ndarray, p_idx, s_idx, o_idx,
                imp_h, imp_b, inv_h, inv_b, chains, depth: int) -> _Pass:
    simF, simR = _sim_matrices(Kp, imp_h, imp_b, inv_h, inv_b, depth)
    body_depth = 1 if depth >= 2 else 0
    bodyF, bodyR = _sim_matrices(Kp, imp_h, imp_b, inv_h, inv_b, body_depth)
    tables: list[_ChainTables] = []
    if depth >= 1:
        for hd, b1, b2 in chains:
            Tmax = _pair_table(bodyF[b2][p_idx], s_idx, o_idx, Kc)
            rev = _pair_table(bodyR[b2][p_idx], o_idx, s_idx, Kc)
            np.maximum(Tmax, rev, out=Tmax)
            H2 = H2s = None
            if depth >= 2:
                MsF_b1 = accel.strict_group(Kp[b1][p_idx], s_idx, o_idx, Kc)
                MsF_b2 = accel.strict_group(Kp[b2][p_idx], s_idx, o_idx, Kc)
                F2 = accel.maxmin_matmat(MsF_b2, Kc)
                H2 = accel.maxmin_matmat(MsF_b1, F2)
                H2s = accel.maxmin_matmat(MsF_b1, MsF_b2)
            tables.append(_ChainTables(hd, b1, b2, Tmax, H2, H2s))
    Wb1hd = Wb2hd = GIF = GIR = None
    if depth >= 2 and tables:
        hd_vec = np.array([t.hd for t in tables])
        b1_vec = np.array([t.b1 for t in tables])
        b2_vec = np.array([t.b2 for t in tables])
        Wb1hd = np.ascontiguousarray(Kp[np.ix_(b1_vec, hd_vec)])
        Wb2hd = np.ascontiguousarray(Kp[np.ix_(b2_vec, hd_vec)])
        GIF = _compose(Kp, imp_h, imp_b, np.ascontiguousarray(Kp[:, hd_vec]))
        GIR = _compose(Kp, inv_h, inv_b, np.ascontiguousarray(Kp[:, hd_vec]))
    return _Pass(p_idx, s_idx, o_idx, simF, simR, tables, bodyF, bodyR,
                 Wb1hd, Wb2hd, GIF, GIR)


class BatchedEvaluator:
    """Exact per-candidate proof scores for ranking, without the stream.

    Requires every rule in the view to classify as a template shape and a
    proof depth of at most 2; anything else raises, because only those
    search spaces have the closed forms above.
    """

    def __init__(self, view: KBView, store: ParameterStore,
                 max_depth: int = 2, min_score: float = 0.1,
                 tables: tuple[np.ndarray, np.ndarray] | None = None):
        if max_depth > 2:
            raise ValueError(
                f"batched scoring supports depth <= 2, got {max_depth}")
        if tables is None:
            tables = kernel_tables(store)
        self.Kp, self.Kc = tables
        self.min_score = float(min_score)
        self.n_constants = self.Kc.shape[0]
        imp, inv, chains = [], [], []
        for _, rule in view.iter_rules():
            shape = rule.shape or classify_rule(rule)
            if shape == SHAPE_IMPLIES:
                imp.append((rule.head.pred, rule.body[0].pred))
            elif shape == SHAPE_INVERSE:
                inv.append((rule.head.pred, rule.body[0].pred))
            elif shape == SHAPE_CHAIN:
                chains.append((rule.head.pred, rule.body[0].pred,
                               rule.body[1].pred))
            else:
                raise ValueError(
                    "batched scoring needs template-shaped rules, got "
                    f"{rule.render(view.parent.vocab)}")
        imp_h = np.array([h for h, _ in imp], dtype=np.int64)
        imp_b = np.array([b for _, b in imp], dtype=np.int64)
        inv_h = np.array([h for h, _ in inv], dtype=np.int64)
        inv_b = np.array([b for _, b in inv], dtype=np.int64)
        p_idx = view.pred.copy()
        s_idx = view.subj.copy()
        o_idx = view.obj.copy()
        self._fwd = _build_pass(self.Kp, self.Kc, p_idx, s_idx, o_idx,
                                imp_h, imp_b, inv_h, inv_b, chains, max_depth)
        rev_chains = [(hd, b2, b1) for hd, b1, b2 in chains]
        self._rev = _build_pass(self.Kp, self.Kc, p_idx, o_idx, s_idx,
                                imp_h, imp_b, inv_h, inv_b, rev_chains,
                                max_depth)

    def score_tails(self, rel: int, subj: int) -> np.ndarray:
        """Scores of (rel, subj, y) for every constant y."""
        return self._score(self._fwd, rel, subj)

    def score_heads(self, rel: int, obj: int) -> np.ndarray:
        """Scores of (rel, x, obj) for every constant x."""
        return self._score(self._rev, rel, obj)

    def _score(self, pa: _Pass, rel: int, a: int) -> np.ndarray:
        C = self.n_constants
        Kc = self.Kc
        Kp = self.Kp
        V = np.zeros(C)
        if len(pa.p_idx):
            # family A: implication links only, then one soft fact sweep
            u = np.minimum(pa.simF[rel][pa.p_idx], Kc[a][pa.s_idx])
            w = accel.scatter_max(pa.o_idx, u, C)
            np.maximum(V, accel.maxmin_matvec(Kc, w), out=V)
            ur = np.minimum(pa.simR[rel][pa.p_idx], Kc[a][pa.o_idx])
            wr = accel.scatter_max(pa.s_idx, ur, C)
            np.maximum(V, accel.maxmin_matvec(Kc, wr), out=V)
        if pa.chains and len(pa.p_idx):
            J = len(pa.chains)
            rows_h2s = rows_h2 = cols_h2 = B1C = None
            if pa.Wb1hd is not None:
                rows_h2s = np.stack([t.H2strict[a] for t in pa.chains])
                rows_h2 = np.stack([t.H2[a] for t in pa.chains])
                cols_h2 = np.stack([np.ascontiguousarray(t.H2[:, a])
                                    for t in pa.chains])
                B1C = accel.maxmin_matmat(pa.Wb1hd, rows_h2s)
            P1 = np.zeros((J, C))
            for i, t in enumerate(pa.chains):
                # family B: first chain body binds the middle constant
                u1 = np.minimum(pa.bodyF[t.b1][pa.p_idx], Kc[a][pa.s_idx])
                b1 = accel.scatter_max(pa.o_idx, u1, C)
                u1r = np.minimum(pa.bodyR[t.b1][pa.p_idx], Kc[a][pa.o_idx])
                np.maximum(b1, accel.scatter_max(pa.s_idx, u1r, C), out=b1)
                if B1C is not None:
                    np.maximum(b1, B1C[i], out=b1)
                np.minimum(b1, Kp[rel, t.hd], out=b1)
                P1[i] = b1
                np.maximum(V, accel.maxmin_vecmat(b1, t.Tmax), out=V)
            if pa.Wb2hd is not None:
                # second chain body through a nested chain
                Q = accel.maxmin_matmat(np.ascontiguousarray(pa.Wb2hd.T), P1)
                for j, t in enumerate(pa.chains):
                    np.maximum(V, accel.maxmin_vecmat(Q[j], t.H2), out=V)
            if pa.GIF is not None:
                # family C: one implication link into a plain-fact chain
                gif = pa.GIF[rel]
                gir = pa.GIR[rel]
                np.maximum(V, np.minimum(gif[:, None], rows_h2).max(axis=0),
                           out=V)
                np.maximum(V, np.minimum(gir[:, None], cols_h2).max(axis=0),
                           out=V)
        V[V < self.min_score] = 0.0
        return V
