"""Canonical numpy packing of a Dataset for the estimation engines.

Clusters (interviewers) and the records inside them are sorted by content,
not by label, before array construction.  Both engines then see identical
arrays for any relabeling or reordering of the same data, which makes
results bit-identical under permutation without any tolerance argument.
"""

from __future__ import annotations

import numpy as np

from .data import DataError, Dataset

__all__ = ["ModelArrays"]


class ModelArrays:
    """Dense design arrays in canonical cluster/record order.

    Attributes
    ----------
    X : (n, p) design matrix: intercept, mode flag, then covariates.
    y, s : outcomes and signs 2y - 1.
    mode : record mode flags.
    cluster_of : record -> cluster index, block-constant and nondecreasing.
    n_f, n_t : per-cluster record counts by mode.
    single, both : boolean cluster masks (one mode only vs both modes).
    """

    def __init__(self, dataset: Dataset, include_covariates: bool = True):
        n_cov = len(dataset.covariate_names) if include_covariates else 0
        self._build(dataset.records, n_cov)

    @classmethod
    def from_records(cls, records, n_cov: int) -> "ModelArrays":
        self = cls.__new__(cls)
        self._build(records, n_cov)
        return self

    def _build(self, records, n_cov):
        clusters = {}
        for r in records:
            if n_cov and len(r.covariates) < n_cov:
                raise DataError("record has fewer covariates than the model uses")
            clusters.setdefault(r.interviewer, []).append(r)

        members = []
        for label, recs in clusters.items():
            keys = sorted((r.mode, r.outcome, r.covariates[:n_cov]) for r in recs)
            members.append((tuple(keys), label))
        members.sort(key=lambda item: item[0])

        n = len(records)
        p = 2 + n_cov
        X = np.empty((n, p))
        y = np.empty(n, dtype=np.int8)
        mode = np.empty(n, dtype=np.int8)
        cluster_of = np.empty(n, dtype=np.intp)

        pos = 0
        labels = []
        for j, (keys, label) in enumerate(members):
            labels.append(label)
            for m, out, covs in keys:
                X[pos, 0] = 1.0
                X[pos, 1] = m
                if n_cov:
                    X[pos, 2:] = covs
                y[pos] = out
                mode[pos] = m
                cluster_of[pos] = j
                pos += 1
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite covariate value")

        J = len(members)
        self.X = X
        self.y = y
        self.s = (2 * y.astype(np.float64)) - 1.0
        self.mode = mode
        self.cluster_of = cluster_of
        self.n = n
        self.p = p
        self.J = J
        self.labels = tuple(labels)
        self.n_f = np.bincount(cluster_of, weights=(mode == 1).astype(float),
                               minlength=J)
        self.n_t = np.bincount(cluster_of, weights=(mode == 0).astype(float),
                               minlength=J)
        self.single = (self.n_f == 0) | (self.n_t == 0)
        self.both = ~self.single

        # 1-D subproblem: records belonging to single-mode clusters
        cl_new = np.full(J, -1, dtype=np.intp)
        single_ids = np.flatnonzero(self.single)
        cl_new[single_ids] = np.arange(single_ids.size)
        self.idx1 = np.flatnonzero(self.single[cluster_of])
        self.cl1 = cl_new[cluster_of[self.idx1]]
        self.J1 = single_ids.size
        self.cl1_mode = (self.n_f[single_ids] > 0).astype(np.int8)

        # 2-D subproblem: records of both-mode clusters, split by record mode
        cl_new2 = np.full(J, -1, dtype=np.intp)
        both_ids = np.flatnonzero(self.both)
        cl_new2[both_ids] = np.arange(both_ids.size)
        idx2 = np.flatnonzero(self.both[cluster_of])
        is_f = mode[idx2] == 1
        self.idx2F = idx2[is_f]
        self.idx2T = idx2[~is_f]
        self.cl2F = cl_new2[cluster_of[self.idx2F]]
        self.cl2T = cl_new2[cluster_of[self.idx2T]]
        self.J2 = both_ids.size
