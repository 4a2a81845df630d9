"""Dense numerics: MLP backbone, normalized multi-group classifier head,
and additive attention fusion, all with exact hand-derived backward passes.

Forward methods accept a single feature vector or a batch (rows = samples)
and return a tape sufficient for the matching backward call.  Parameters
are exposed as lists of arrays so the optimizer can update them in place.
"""

from __future__ import annotations

import numpy as np

from .numerics import ensure_2d, softmax, softmax_vjp


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class Mlp:
    """Fully connected net with tanh hidden layers and identity output."""

    def __init__(self, widths: tuple[int, ...], rng: np.random.Generator):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = tuple(int(w) for w in widths)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            self.weights.append(glorot_uniform(rng, fan_in, fan_out, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        x2, was1d = ensure_2d(x)
        if x2.shape[1] != self.in_dim:
            raise ValueError(f"input dim {x2.shape[1]} != expected {self.in_dim}")
        acts = [x2]
        a = x2
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == last else np.tanh(z)
            acts.append(a)
        out = acts[-1][0] if was1d else acts[-1]
        return out, acts

    def backward(
        self, tape: list[np.ndarray], grad_out: np.ndarray
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Returns (param grads aligned with params(), grad w.r.t. input)."""
        g, was1d = ensure_2d(grad_out)
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i != last:
                g = g * (1.0 - tape[i + 1] ** 2)  # through tanh
            grads[2 * i] = tape[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, (g[0] if was1d else g)


class NormalizedHead:
    """Multi-group cosine classifier.

    Splits the feature vector and each class weight into n_groups equal
    channel groups; the logit is the scaled mean over groups of
    w_k . f_k / ((|w_k| + eta) * |f|), with |f| the full-vector norm.
    Logits are therefore invariant to positive rescaling of f when eta=0.
    """

    def __init__(
        self,
        feature_dim: int,
        n_classes: int,
        n_groups: int,
        rho: float,
        eta: float,
        rng: np.random.Generator,
    ):
        if feature_dim % n_groups != 0:
            raise ValueError(f"feature dim {feature_dim} not divisible by {n_groups} groups")
        self.feature_dim = feature_dim
        self.n_classes = n_classes
        self.n_groups = n_groups
        self.group_dim = feature_dim // n_groups
        self.rho = float(rho)
        self.eta = float(eta)
        w = glorot_uniform(rng, feature_dim, n_classes, (n_classes, feature_dim))
        self.w = w.reshape(n_classes, n_groups, self.group_dim)

    def params(self) -> list[np.ndarray]:
        return [self.w]

    def _w_norms(self) -> np.ndarray:
        return np.linalg.norm(self.w, axis=2)  # (C, K)

    def forward(self, f: np.ndarray) -> tuple[np.ndarray, dict]:
        f2, was1d = ensure_2d(f)
        if f2.shape[1] != self.feature_dim:
            raise ValueError(f"feature dim {f2.shape[1]} != expected {self.feature_dim}")
        fg = f2.reshape(f2.shape[0], self.n_groups, self.group_dim)
        nf = np.linalg.norm(f2, axis=1)
        nf_safe = np.where(nf > 0, nf, 1.0)
        wn = self._w_norms()
        dots = np.einsum("ckg,bkg->bck", self.w, fg)
        s = dots / (wn + self.eta)[None, :, :]
        z = (self.rho / self.n_groups) * s.sum(axis=2) / nf_safe[:, None]
        tape = {"f": f2, "fg": fg, "nf": nf_safe, "wn": wn, "dots": dots, "z": z, "was1d": was1d}
        return (z[0] if was1d else z), tape

    def backward(self, tape: dict, grad_z: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        dz, _ = ensure_2d(grad_z)
        f2, fg, nf, wn = tape["f"], tape["fg"], tape["nf"], tape["wn"]
        dots, z = tape["dots"], tape["z"]
        r = self.rho / self.n_groups
        inv_wn = 1.0 / (wn + self.eta)

        ds = (r * dz / nf[:, None])[:, :, None]  # (B, C, K) via broadcast
        ds = np.broadcast_to(ds, dots.shape)
        df = np.einsum("bck,ckg->bkg", ds, self.w * inv_wn[:, :, None])
        df = df.reshape(f2.shape).copy()
        coef = (dz * z).sum(axis=1) / nf**2
        df -= coef[:, None] * f2

        wn_safe = np.where(wn > 0, wn, 1.0)
        dw = np.einsum("bck,bkg->ckg", ds, fg) * inv_wn[:, :, None]
        dw -= (
            np.einsum("bck,bck->ck", ds, dots)[:, :, None]
            * self.w
            * (inv_wn**2 / wn_safe)[:, :, None]
        )
        return [dw], (df[0] if tape["was1d"] else df)

    def project_raw(self, v: np.ndarray) -> np.ndarray:
        """Project a feature-space vector through the head without the
        feature-norm division: b_c = scale * sum_k w_k.v_k / (|w_k| + eta)."""
        v = np.asarray(v, dtype=np.float64)
        vg = v.reshape(self.n_groups, self.group_dim)
        wn = self._w_norms()
        dots = np.einsum("ckg,kg->ck", self.w, vg)
        return (self.rho / self.n_groups) * (dots / (wn + self.eta)).sum(axis=1)

    def project_raw_backward(self, v: np.ndarray, grad_b: np.ndarray) -> np.ndarray:
        """Gradient of project_raw w.r.t. the head weights (v held fixed)."""
        v = np.asarray(v, dtype=np.float64)
        vg = v.reshape(self.n_groups, self.group_dim)
        wn = self._w_norms()
        wn_safe = np.where(wn > 0, wn, 1.0)
        inv_wn = 1.0 / (wn + self.eta)
        dots = np.einsum("ckg,kg->ck", self.w, vg)
        r = self.rho / self.n_groups
        dw = r * grad_b[:, None, None] * (
            vg[None, :, :] * inv_wn[:, :, None]
            - dots[:, :, None] * self.w * (inv_wn**2 / wn_safe)[:, :, None]
        )
        return dw


class AdditiveAttention:
    """Two-source additive attention with a residual connection.

    Scores each of the two key/value vectors against the query through a
    shared tanh layer; the fused output is the attention-weighted sum of
    the two values plus the query.
    """

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.dim = dim
        self.hidden = hidden
        self.w_query = glorot_uniform(rng, dim, hidden, (dim, hidden))
        self.w_key = glorot_uniform(rng, dim, hidden, (dim, hidden))
        self.v = glorot_uniform(rng, hidden, 1, (hidden,))

    def params(self) -> list[np.ndarray]:
        return [self.w_query, self.w_key, self.v]

    def forward(
        self, query: np.ndarray, key_a: np.ndarray, key_b: np.ndarray
    ) -> tuple[np.ndarray, dict]:
        q, was1d = ensure_2d(query)
        ka, _ = ensure_2d(key_a)
        kb, _ = ensure_2d(key_b)
        if not (q.shape == ka.shape == kb.shape) or q.shape[1] != self.dim:
            raise ValueError("query/key dimension mismatch")
        qp = q @ self.w_query
        h_a = np.tanh(qp + ka @ self.w_key)
        h_b = np.tanh(qp + kb @ self.w_key)
        scores = np.stack([h_a @ self.v, h_b @ self.v], axis=1)
        alpha = softmax(scores, axis=1)
        fused = alpha[:, 0:1] * ka + alpha[:, 1:2] * kb + q
        tape = {
            "q": q, "ka": ka, "kb": kb, "h_a": h_a, "h_b": h_b,
            "alpha": alpha, "was1d": was1d,
        }
        return (fused[0] if was1d else fused), tape

    def backward(
        self, tape: dict, grad_out: np.ndarray
    ) -> tuple[list[np.ndarray], np.ndarray, np.ndarray, np.ndarray]:
        """Returns (param grads, dquery, dkey_a, dkey_b)."""
        g, _ = ensure_2d(grad_out)
        q, ka, kb = tape["q"], tape["ka"], tape["kb"]
        h_a, h_b, alpha = tape["h_a"], tape["h_b"], tape["alpha"]

        dq = g.copy()
        dka = alpha[:, 0:1] * g
        dkb = alpha[:, 1:2] * g
        dalpha = np.stack([(g * ka).sum(axis=1), (g * kb).sum(axis=1)], axis=1)
        dscores = softmax_vjp(alpha, dalpha)
        dh_a = dscores[:, 0:1] * self.v[None, :]
        dh_b = dscores[:, 1:2] * self.v[None, :]
        dv = (dscores[:, 0:1] * h_a + dscores[:, 1:2] * h_b).sum(axis=0)
        dpre_a = dh_a * (1.0 - h_a**2)
        dpre_b = dh_b * (1.0 - h_b**2)
        dwq = q.T @ (dpre_a + dpre_b)
        dwk = ka.T @ dpre_a + kb.T @ dpre_b
        dq += (dpre_a + dpre_b) @ self.w_query.T
        dka += dpre_a @ self.w_key.T
        dkb += dpre_b @ self.w_key.T

        if tape["was1d"]:
            return [dwq, dwk, dv], dq[0], dka[0], dkb[0]
        return [dwq, dwk, dv], dq, dka, dkb
