"""Problem oracles, generators, and closed-form proximal maps.

A problem is a triple (f, g, h_1..h_n): one smooth term accessed through its
gradient, one simple term and n component terms accessed through proximal
maps. Instances carry their own reference solution (x*, u*) so that solver
runs can report exact distances and dual errors without re-solving anything.

Smoothness constants may be genuinely absent. That case is represented by
the :data:`INFINITE` sentinel, never by ``float('inf')``, so that rate
formulas can take the stated limits symbolically instead of relying on IEEE
arithmetic to cancel infinities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .rng import generator

Array = np.ndarray

_ORTHO_TOL = 1e-10
_OPT_RESIDUAL_TOL = 1e-8


class _Infinite:
    """Symbolic 'no finite smoothness constant'. Compares equal only to itself."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INFINITE"

    def __reduce__(self):
        return (_Infinite, ())


INFINITE = _Infinite()

Curvature = float | _Infinite


def is_infinite(value: Curvature) -> bool:
    return isinstance(value, _Infinite)


def harmonic_curvature(mu: float, L: Curvature) -> float:
    """2*mu*L / (L + mu), taken as 2*mu in the limit of unbounded L."""
    if is_infinite(L):
        return 2.0 * mu
    if L + mu == 0.0:
        return 0.0
    return 2.0 * mu * L / (L + mu)


def inverse_total_curvature(L: Curvature, mu: float) -> float:
    """1 / (L + mu), taken as 0 in the limit of unbounded L."""
    if is_infinite(L):
        return 0.0
    return 1.0 / (L + mu)


# ---------------------------------------------------------------------------
# Oracles


@dataclass(frozen=True)
class SmoothOracle:
    """Gradient access to a smooth convex function.

    ``L`` is a valid Lipschitz constant of the gradient and ``mu`` a valid
    strong convexity constant; both may be 0 (the zero function is the common
    case). Instances are treated as immutable.
    """

    grad: Callable[[Array], Array]
    L: float
    mu: float

    def __post_init__(self):
        if self.L < 0 or self.mu < 0 or self.mu > self.L + 1e-12:
            raise ConfigurationError(
                f"need 0 <= mu <= L for a smooth oracle, got mu={self.mu}, L={self.L}"
            )


@dataclass(frozen=True)
class ProxOracle:
    """Proximal access to a convex function.

    ``prox(gamma, v)`` returns argmin_y h(y) + ||y - v||^2 / (2 gamma) for
    gamma > 0. ``L`` is a smoothness constant or :data:`INFINITE` when none
    exists. ``grad_at`` is only available for smooth components and returns
    the exact gradient; solvers use it to initialize dual variables.
    """

    prox: Callable[[float, Array], Array]
    mu: float = 0.0
    L: Curvature = INFINITE
    grad_at: Callable[[Array], Array] | None = None

    def __post_init__(self):
        if self.mu < 0:
            raise ConfigurationError(f"negative strong convexity constant {self.mu}")
        if not is_infinite(self.L) and self.L < self.mu - 1e-12:
            raise ConfigurationError(f"need mu <= L, got mu={self.mu}, L={self.L}")


def _identity_prox(gamma: float, v: Array) -> Array:
    return v


def zero_smooth() -> SmoothOracle:
    """The zero function as a smooth oracle."""
    return SmoothOracle(grad=np.zeros_like, L=0.0, mu=0.0)


def zero_prox() -> ProxOracle:
    """The zero function as a prox oracle (prox is the identity)."""
    return ProxOracle(prox=_identity_prox, mu=0.0, L=0.0, grad_at=np.zeros_like)


def scaled_sqnorm_prox(mu: float, gamma: float, v: Array) -> Array:
    """Prox of (mu/2)||.||^2: a pure shrinkage by 1/(1 + gamma mu)."""
    return v / (1.0 + gamma * mu)


def scaled_sqnorm(mu: float) -> ProxOracle:
    if mu < 0:
        raise ConfigurationError(f"negative curvature {mu}")
    return ProxOracle(
        prox=partial(scaled_sqnorm_prox, mu),
        mu=mu,
        L=mu,
        grad_at=lambda x: mu * x,
    )


# ---------------------------------------------------------------------------
# Quadratics in spectral form


@dataclass(frozen=True)
class QuadraticForm:
    """h(x) = x' A x / 2 - b' x with A = Q diag(lam) Q' given spectrally.

    Q must have orthonormal columns (checked to 1e-10) and lam must be
    nonnegative, which keeps every prox solvable by a diagonal rescale in the
    eigenbasis.
    """

    Q: Array
    lam: Array
    b: Array

    def __post_init__(self):
        d = self.Q.shape[0]
        if self.Q.shape != (d, d) or self.lam.shape != (d,) or self.b.shape != (d,):
            raise ConfigurationError(
                f"inconsistent shapes Q{self.Q.shape}, lam{self.lam.shape}, b{self.b.shape}"
            )
        gram_defect = np.abs(self.Q.T @ self.Q - np.eye(d)).max()
        if gram_defect > _ORTHO_TOL:
            raise ConfigurationError(
                f"Q columns not orthonormal (defect {gram_defect:.3e})"
            )
        if np.any(self.lam < 0):
            raise ConfigurationError("negative eigenvalue in quadratic form")

    @property
    def d(self) -> int:
        return self.Q.shape[0]

    def matvec(self, x: Array) -> Array:
        return self.Q @ (self.lam * (self.Q.T @ x))

    def gradient(self, x: Array) -> Array:
        return self.matvec(x) - self.b

    def dense(self) -> Array:
        return (self.Q * self.lam) @ self.Q.T

    def as_oracle(self, mu: float | None = None, L: Curvature | None = None) -> ProxOracle:
        """Prox oracle with nominal constants; defaults are the exact spectral ones."""
        return ProxOracle(
            prox=partial(quadratic_prox, self),
            mu=float(self.lam.min()) if mu is None else mu,
            L=float(self.lam.max()) if L is None else L,
            grad_at=self.gradient,
        )


def quadratic_prox(form: QuadraticForm, gamma: float, v: Array) -> Array:
    """Prox of a spectral quadratic: solve (I + gamma A) y = v + gamma b."""
    if gamma <= 0:
        raise ConfigurationError(f"prox needs gamma > 0, got {gamma}")
    w = form.Q.T @ (v + gamma * form.b)
    return form.Q @ (w / (1.0 + gamma * form.lam))


def hyperplane_ridge_prox(w: Array, offset: float, mu: float, gamma: float, v: Array) -> Array:
    """Prox of the indicator of {x : w'x = offset} plus (mu/2)||x||^2.

    Shrink toward the origin, then project the shrunk point back onto the
    hyperplane along w.
    """
    if gamma <= 0:
        raise ConfigurationError(f"prox needs gamma > 0, got {gamma}")
    wnorm2 = float(w @ w)
    if wnorm2 == 0.0:
        raise ConfigurationError("hyperplane normal is zero")
    c = 1.0 + gamma * mu
    return v / c - (float(w @ v) - offset * c) * w / (c * wnorm2)


def hyperplane_ridge(w: Array, offset: float, mu: float) -> ProxOracle:
    if float(w @ w) == 0.0:
        raise ConfigurationError("hyperplane normal is zero")
    return ProxOracle(
        prox=partial(hyperplane_ridge_prox, w, offset, mu),
        mu=mu,
        L=INFINITE,
        grad_at=None,
    )


# ---------------------------------------------------------------------------
# Problem instances


@dataclass(frozen=True)
class ProblemInstance:
    """A full problem with its reference solution.

    ``x_star`` minimizes f + g + mean(h_i); ``u_star`` holds one optimal dual
    vector per component, row i lying in the subdifferential of h_i at
    ``x_star`` with grad f(x*) + mean(u_star) + (subgradient of g) = 0.
    ``delta`` is an optional known similarity bound between the h_i; it is
    never estimated from data.
    """

    f: SmoothOracle
    g: ProxOracle
    h: tuple[ProxOracle, ...]
    n: int
    d: int
    x_star: Array
    u_star: Array
    delta: float | None = None
    kind: str = "custom"
    payload: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.h) != self.n:
            raise ConfigurationError(f"{len(self.h)} component oracles for n={self.n}")
        if self.x_star.shape != (self.d,) or self.u_star.shape != (self.n, self.d):
            raise ConfigurationError("reference solution shapes do not match (n, d)")

    @property
    def mu_h(self) -> Array:
        return np.array([o.mu for o in self.h])

    @property
    def L_h(self) -> list[Curvature]:
        return [o.L for o in self.h]

    def optimality_residual(self) -> float:
        """Norm of grad f(x*) + mean u* (+ mu_g shrinkage when g is a known sqnorm)."""
        r = self.f.grad(self.x_star) + self.u_star.mean(axis=0)
        if self.g.grad_at is not None:
            r = r + self.g.grad_at(self.x_star)
        return float(np.linalg.norm(r))


def orthogonal_matrix(d: int, rng: np.random.Generator) -> Array:
    """Haar-distributed orthogonal matrix via sign-corrected Gaussian QR."""
    a = rng.standard_normal((d, d))
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _refined_solve(m: Array, rhs: Array) -> Array:
    # A couple of refinement passes push the residual to near machine level,
    # which the fixed-point tests downstream depend on.
    x = np.linalg.solve(m, rhs)
    target = 1e-13 * max(1.0, float(np.linalg.norm(rhs)))
    for _ in range(4):
        r = rhs - m @ x
        if float(np.linalg.norm(r)) <= target:
            break
        x = x + np.linalg.solve(m, r)
    return x


# ---------------------------------------------------------------------------
# Generated families

EXP1 = "exp1"
EXP2 = "exp2"
EXP3 = "exp3"


def _draw_spectral_components(
    rng: np.random.Generator,
    n: int,
    d: int,
    eig_low: Array,
    eig_high: Array,
    zero_count: int,
    b_low: float,
    b_high: float,
):
    # Per component, consumption order is Q, eigenvalues, linear term; the
    # order is part of the determinism contract for generated instances.
    qs = np.empty((n, d, d))
    lams = np.empty((n, d))
    bs = np.empty((n, d))
    for i in range(n):
        qs[i] = orthogonal_matrix(d, rng)
        lam = np.zeros(d)
        lam[zero_count:] = rng.uniform(eig_low[i], eig_high[i], size=d - zero_count)
        lams[i] = lam
        bs[i] = rng.uniform(b_low, b_high, size=d)
    return qs, lams, bs


def _solve_reference(f_diag: Array | None, qs: Array, lams: Array, bs: Array):
    """Reference solution of (diag(f) + mean A_i) x = mean b_i and its duals."""
    n, d = lams.shape
    m = np.zeros((d, d))
    for i in range(n):
        m += (qs[i] * lams[i]) @ qs[i].T
    m /= n
    if f_diag is not None:
        m[np.diag_indices(d)] += f_diag
    x_star = _refined_solve(m, bs.mean(axis=0))
    u_star = np.empty((n, d))
    for i in range(n):
        u_star[i] = qs[i] @ (lams[i] * (qs[i].T @ x_star)) - bs[i]
    return x_star, u_star


def _assemble_quadratic_family(kind: str, payload: dict, meta: dict) -> ProblemInstance:
    qs, lams, bs = payload["q"], payload["lam"], payload["b"]
    n, d = lams.shape
    f_diag = payload.get("f_diag")
    if f_diag is not None:
        diag = f_diag
        f = SmoothOracle(
            grad=lambda x, _diag=diag: _diag * x,
            L=float(diag.max()),
            mu=float(diag.min()),
        )
    else:
        f = zero_smooth()
    h = tuple(
        QuadraticForm(qs[i], lams[i], bs[i]).as_oracle(
            mu=float(payload["mu_nominal"][i]), L=float(payload["l_nominal"][i])
        )
        for i in range(n)
    )
    instance = ProblemInstance(
        f=f,
        g=zero_prox(),
        h=h,
        n=n,
        d=d,
        x_star=payload["x_star"],
        u_star=payload["u_star"],
        kind=kind,
        payload=payload | {"meta": meta},
    )
    if instance.optimality_residual() > _OPT_RESIDUAL_TOL:
        raise ConfigurationError(
            f"reference solve residual {instance.optimality_residual():.3e} above tolerance"
        )
    return instance


def generate_exp1(
    rng: np.random.Generator,
    n: int = 100,
    d: int = 100,
    alpha: float = 0.05,
    l_max: float = 1000.0,
    n_top: int | None = None,
    zero_fraction: float = 0.2,
    b_scale: float = 1.0,
    f_low: float = 0.1,
    f_high: float = 10.0,
) -> ProblemInstance:
    """Smooth split quadratics with two smoothness groups.

    The first ``n_top`` components (a fifth of n when unset) carry the
    nominal constant ``l_max``, the rest ``alpha * l_max``. A fifth of each
    spectrum is zero, so individual components are smooth but not strongly
    convex; the diagonal f term keeps the aggregate strongly convex.
    """
    if n_top is None:
        n_top = max(1, n // 5)
    if not (0 < alpha <= 1) or not (0 < n_top <= n):
        raise ConfigurationError(f"bad two-group layout: alpha={alpha}, n_top={n_top}")
    f_diag = rng.uniform(f_low, f_high, size=d)
    l_nominal = np.concatenate([np.full(n_top, l_max), np.full(n - n_top, alpha * l_max)])
    zero_count = int(round(zero_fraction * d))
    qs, lams, bs = _draw_spectral_components(
        rng, n, d,
        eig_low=np.zeros(n), eig_high=l_nominal,
        zero_count=zero_count, b_low=0.0, b_high=b_scale,
    )
    x_star, u_star = _solve_reference(f_diag, qs, lams, bs)
    payload = {
        "q": qs, "lam": lams, "b": bs, "f_diag": f_diag,
        "l_nominal": l_nominal, "mu_nominal": np.zeros(n),
        "x_star": x_star, "u_star": u_star,
    }
    meta = {"n": n, "d": d, "alpha": alpha, "l_max": l_max, "n_top": n_top,
            "zero_fraction": zero_fraction, "b_scale": b_scale,
            "f_low": f_low, "f_high": f_high}
    return _assemble_quadratic_family(EXP1, payload, meta)


def generate_exp3(
    rng: np.random.Generator,
    n: int = 100,
    d: int = 100,
    mu: float = 1.0,
    l_max: float = 50.0,
    b_scale: float | None = None,
) -> ProblemInstance:
    """Strongly convex quadratic components with spectra inside [mu, l_max]."""
    if not (0 < mu < l_max):
        raise ConfigurationError(f"need 0 < mu < l_max, got mu={mu}, l_max={l_max}")
    if b_scale is None:
        b_scale = l_max
    qs, lams, bs = _draw_spectral_components(
        rng, n, d,
        eig_low=np.full(n, mu), eig_high=np.full(n, l_max),
        zero_count=0, b_low=0.0, b_high=b_scale,
    )
    x_star, u_star = _solve_reference(None, qs, lams, bs)
    payload = {
        "q": qs, "lam": lams, "b": bs, "f_diag": None,
        "l_nominal": np.full(n, l_max), "mu_nominal": np.full(n, mu),
        "x_star": x_star, "u_star": u_star,
    }
    meta = {"n": n, "d": d, "mu": mu, "l_max": l_max, "b_scale": b_scale}
    return _assemble_quadratic_family(EXP3, payload, meta)


def _assemble_hyperplane_family(payload: dict, meta: dict) -> ProblemInstance:
    w, offsets = payload["w"], payload["b"]
    mu = meta["mu"]
    d = w.shape[0]
    h = tuple(hyperplane_ridge(w[i], float(offsets[i]), mu) for i in range(d))
    instance = ProblemInstance(
        f=zero_smooth(),
        g=zero_prox(),
        h=h,
        n=d,
        d=d,
        x_star=payload["x_star"],
        u_star=payload["u_star"],
        kind=EXP2,
        payload=payload | {"meta": meta},
    )
    if instance.optimality_residual() > _OPT_RESIDUAL_TOL:
        raise ConfigurationError(
            f"hyperplane reference residual {instance.optimality_residual():.3e} above tolerance"
        )
    return instance


def generate_exp2(
    rng: np.random.Generator,
    d: int = 1000,
    mu: float = 1e-5,
) -> ProblemInstance:
    """Consistent hyperplane constraints with a small ridge, n = d.

    Row i of an orthogonal matrix defines the hyperplane w_i'x = b_i with
    b = W x* for a Gaussian x*, so the constraints intersect exactly at x*.
    Duals are mu x* + lam_i w_i with lam = -n mu W x*, which averages to zero
    because W'W = I.
    """
    if mu <= 0:
        raise ConfigurationError(f"ridge curvature must be positive, got {mu}")
    w = orthogonal_matrix(d, rng)
    x_star = rng.standard_normal(d)
    offsets = w @ x_star
    lam = -d * mu * offsets
    u_star = mu * x_star[None, :] + lam[:, None] * w
    payload = {"w": w, "b": offsets, "x_star": x_star, "u_star": u_star}
    meta = {"d": d, "mu": mu}
    return _assemble_hyperplane_family(payload, meta)


_GENERATORS = {EXP1: generate_exp1, EXP2: generate_exp2, EXP3: generate_exp3}


def generate_instance(kind: str, rng: np.random.Generator | int, **params) -> ProblemInstance:
    """Generate one of the named problem families from a seeded stream."""
    key = kind.lower()
    if key not in _GENERATORS:
        raise ConfigurationError(f"unknown instance family {kind!r}")
    if not isinstance(rng, np.random.Generator):
        rng = generator(rng)
    return _GENERATORS[key](rng, **params)


# ---------------------------------------------------------------------------
# Serialization
#
# Instances round-trip through a single .npz container: float64 arrays in C
# order plus one JSON metadata entry. Only generated families serialize;
# hand-built oracles have no portable description.


def save_instance(instance: ProblemInstance, path) -> None:
    if instance.kind not in _GENERATORS:
        raise ConfigurationError(
            f"only generated families serialize, not {instance.kind!r}"
        )
    arrays = {
        k: np.ascontiguousarray(np.asarray(v, dtype=np.float64))
        for k, v in instance.payload.items()
        if k != "meta" and v is not None
    }
    meta = dict(instance.payload["meta"])
    meta["kind"] = instance.kind
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_instance(path) -> ProblemInstance:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        payload = {k: data[k] for k in data.files if k != "__meta__"}
    kind = meta.pop("kind")
    if kind == EXP2:
        return _assemble_hyperplane_family(payload, meta)
    payload.setdefault("f_diag", None)
    return _assemble_quadratic_family(kind, payload, meta)
