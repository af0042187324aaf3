"""Adversarial example generation: FGSM, BIM, a penalised minimal-L2 attack,
and the filter-aware wrapper that re-optimises noise through a smoothing filter.

Every attack has a single-image entry point (``fgsm``, ``bim``,
``lbfgs_attack``, ``fademl_attack``) and a batched variant used by the
harness. Per-sample results never depend on which other samples share the
batch, except through BLAS rounding of the shared forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AttackError, ConfigError, InputError, NumericError
from .filters import LinearFilter
from .nn import Network, Prediction, top_k_indices

KINDS = ("fgsm", "bim", "lbfgs", "fademl")
MODES = ("targeted", "untargeted")

DEFAULT_EPSILON = 0.05
DEFAULT_MAX_ITERS = 50
DEFAULT_ETA = 1.0
DEFAULT_FADEML_STEP = 0.01
DEFAULT_LBFGS_STEP = 0.01
PENALTY_RANGE = (1e-3, 1e3)
PENALTY_ROUNDS = 8
ARMIJO = 1e-4
MAX_BACKTRACKS = 10
SHRINK_STEPS = 12  # bisection steps of the final scale search along the best noise


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "bim"
    epsilon: float = DEFAULT_EPSILON
    eta: float = DEFAULT_ETA
    step_size: float | None = None
    max_iters: int = DEFAULT_MAX_ITERS
    target_class: int | None = None
    penalty_weight: float = 1.0
    mode: str = "targeted"
    base: "AttackSpec | None" = None
    backtracking: bool = True
    penalty_rounds: int = PENALTY_ROUNDS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"attack.kind must be one of {KINDS}, got {self.kind!r}")
        if self.mode not in MODES:
            raise ConfigError(f"attack.mode must be one of {MODES}, got {self.mode!r}")
        if not self.epsilon >= 0:
            raise ConfigError("attack.epsilon must be >= 0")
        if not self.eta >= 0:
            raise ConfigError("attack.eta must be >= 0")
        if self.step_size is not None and not self.step_size > 0:
            raise ConfigError("attack.step_size must be > 0")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError("attack.max_iters must be an integer >= 1")
        if not self.penalty_weight > 0:
            raise ConfigError("attack.penalty_weight must be > 0")
        if not 1 <= self.penalty_rounds <= 64:
            raise ConfigError("attack.penalty_rounds must be in [1, 64]")
        if self.kind == "fademl":
            if self.base is None or self.base.kind == "fademl":
                raise ConfigError("fademl needs a non-fademl base attack")
            if self.mode != "targeted":
                raise ConfigError("fademl only supports targeted mode")
        elif self.base is not None:
            raise ConfigError(f"{self.kind} does not take a base attack")
        if self.kind == "lbfgs" and self.mode != "targeted":
            raise ConfigError("lbfgs only supports targeted mode")
        if self.kind == "bim" and self.step > self.epsilon and self.epsilon > 0:
            raise ConfigError("bim requires step_size <= epsilon")

    @property
    def step(self) -> float:
        if self.step_size is not None:
            return float(self.step_size)
        if self.kind == "bim":
            return self.epsilon / 10
        if self.kind == "lbfgs":
            return DEFAULT_LBFGS_STEP
        return DEFAULT_FADEML_STEP

    @property
    def name(self) -> str:
        return f"fademl({self.base.name})" if self.kind == "fademl" else self.kind

    def with_target(self, target):
        base = self.base.with_target(target) if self.base is not None else None
        return replace(self, target_class=target, base=base)

    def to_dict(self):
        d = {
            "kind": self.kind,
            "epsilon": self.epsilon,
            "eta": self.eta,
            "step_size": self.step,
            "max_iters": self.max_iters,
            "target_class": self.target_class,
            "penalty_weight": self.penalty_weight,
            "mode": self.mode,
            "backtracking": self.backtracking,
            "penalty_rounds": self.penalty_rounds,
        }
        if self.base is not None:
            d["base"] = self.base.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("base") is not None:
            d["base"] = cls.from_dict(d["base"])
        return cls(**d)


def parse_attack(text, **overrides) -> AttackSpec:
    """``fgsm``, ``bim``, ``lbfgs``, ``fademl:bim`` or ``fademl(bim)``."""
    t = text.strip().lower()
    for sep in (":", "("):
        if t.startswith("fademl" + sep):
            base_name = t[len("fademl") + 1:].rstrip(")")
            base_kw = {k: v for k, v in overrides.items() if k not in ("eta", "backtracking")}
            base_kw.pop("step_size", None)
            fademl_kw = {k: v for k, v in overrides.items()
                         if k in ("eta", "step_size", "max_iters", "backtracking", "target_class")}
            return AttackSpec("fademl", base=parse_attack(base_name, **base_kw), **fademl_kw)
    if t == "fademl":
        raise ConfigError("fademl needs a base attack, e.g. fademl:bim")
    if t not in KINDS:
        raise ConfigError(f"unknown attack {text!r}")
    return AttackSpec(t, **overrides)


@dataclass
class AdversarialExample:
    x_original: np.ndarray
    noise: np.ndarray
    x_adversarial: np.ndarray
    spec: AttackSpec
    target_class: int
    iterations_used: int
    success_unfiltered: bool
    l2_noise_norm: float
    linf_noise_norm: float
    eta: float = 1.0
    success_filtered: bool | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "attack": self.spec.name,
            "spec": self.spec.to_dict(),
            "target_class": self.target_class,
            "iterations_used": self.iterations_used,
            "success_unfiltered": self.success_unfiltered,
            "success_filtered": self.success_filtered,
            "l2_noise_norm": self.l2_noise_norm,
            "linf_noise_norm": self.linf_noise_norm,
            "eta": self.eta,
            "metadata": self.metadata,
        }


# ---------------------------------------------------------------------------
# shared helpers


def noise_norms(noise):
    a = np.asarray(noise, dtype=np.float64)
    return np.sqrt(_sq_norms(a)), np.abs(a).max(axis=tuple(range(1, a.ndim)), initial=0.0)


def _sq_norms(a):
    """Per-sample squared L2 norm in float64; safe on empty batches."""
    return (a.astype(np.float64) ** 2).sum(axis=tuple(range(1, a.ndim)))


def _batch_inputs(net, xs, targets):
    xs = np.asarray(xs, dtype=np.float32)
    if xs.ndim != 4 or xs.shape[1:] != net.input_shape:
        raise InputError(f"expected a batch of {net.input_shape} images, got {xs.shape}")
    if xs.min(initial=0.0) < 0 or xs.max(initial=0.0) > 1:
        raise InputError("image pixels must lie in [0, 1]")
    targets = np.broadcast_to(np.asarray(targets, dtype=np.int64), (len(xs),)).copy()
    if len(targets) and (targets.min() < 0 or targets.max() >= net.num_classes):
        raise InputError(f"target class out of range [0, {net.num_classes})")
    return xs, targets


def _grad(net, xs, targets):
    res = net.loss_and_gradients(xs, targets, exact=True)
    if not np.isfinite(res.input_grad).all():
        raise NumericError("non-finite input gradient")
    return res


def _success(probs, targets, mode):
    pred = np.argmax(probs, axis=1)
    return pred == targets if mode == "targeted" else pred != targets


def _examples(xs, noise, x_adv, spec, targets, iters, success, eta=1.0, metadata=None):
    l2, linf = noise_norms(noise)
    out = []
    for i in range(len(xs)):
        out.append(AdversarialExample(
            x_original=xs[i], noise=noise[i], x_adversarial=x_adv[i], spec=spec,
            target_class=int(targets[i]), iterations_used=int(iters[i]),
            success_unfiltered=bool(success[i]), l2_noise_norm=float(l2[i]),
            linf_noise_norm=float(linf[i]), eta=float(eta),
            metadata=dict(metadata[i]) if metadata is not None else {}))
    return out


# ---------------------------------------------------------------------------
# FGSM / BIM


def fgsm_batch(net: Network, xs, targets, spec: AttackSpec):
    """One signed-gradient step: descend J toward the target (targeted) or
    ascend J away from the given true class (untargeted)."""
    xs, targets = _batch_inputs(net, xs, targets)
    res = _grad(net, xs, targets)
    eps = np.float32(spec.epsilon)
    sign = np.sign(res.input_grad)
    noise = -eps * sign if spec.mode == "targeted" else eps * sign
    x_adv = np.clip(xs + noise, 0.0, 1.0)
    probs = net.predict_proba(x_adv)
    return _examples(xs, noise, x_adv, spec, targets, np.ones(len(xs)), _success(probs, targets, spec.mode))


def bim_batch(net: Network, xs, targets, spec: AttackSpec):
    xs, targets = _batch_inputs(net, xs, targets)
    eps = np.float32(spec.epsilon)
    alpha = np.float32(spec.step)
    lo, hi = xs - eps, xs + eps
    x = xs.copy()
    iters = np.zeros(len(xs), dtype=np.int64)
    done = np.zeros(len(xs), dtype=bool)
    for k in range(spec.max_iters + 1):
        active = np.flatnonzero(~done)
        if len(active) == 0:
            break
        res = _grad(net, x[active], targets[active])
        hit = _success(res.probabilities, targets[active], spec.mode)
        done[active[hit]] = True
        if k == spec.max_iters:
            break
        step = active[~hit]
        if len(step) == 0:
            break
        g = np.sign(res.input_grad[~hit])
        moved = x[step] - alpha * g if spec.mode == "targeted" else x[step] + alpha * g
        x[step] = np.clip(np.clip(moved, 0.0, 1.0), lo[step], hi[step])
        iters[step] += 1
    noise = x - xs
    return _examples(xs, noise, x, spec, targets, iters, done)


# ---------------------------------------------------------------------------
# penalised minimal-norm attack


def _penalised_descent(net, xs, targets, c, spec):
    """Minimise ``c * ||n||^2 + J(clip(x + n), t)`` per sample by gradient
    descent with Armijo backtracking.

    Returns the smallest-norm successful iterate (``inf`` norm where none
    succeeded), the final iterate and the accepted step count.
    """
    b = len(xs)
    n = np.zeros_like(xs)
    best = np.zeros_like(xs)
    best_norm = np.full(b, np.inf)
    iters = np.zeros(b, dtype=np.int64)
    step = np.full(b, spec.step)
    c4 = c.astype(np.float32)[:, None, None, None]

    def evaluate(rows, cand):
        res = net.loss_and_gradients(np.clip(xs[rows] + cand, 0.0, 1.0), targets[rows], exact=True)
        sq = _sq_norms(cand)
        return c[rows] * sq + res.losses, res.input_grad, res.probabilities

    f, g, probs = evaluate(np.arange(b), n)
    active = np.ones(b, dtype=bool)
    for _ in range(spec.max_iters):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        grad = 2 * c4[idx] * n[idx] + g[idx]
        gnorm = np.sqrt(_sq_norms(grad))
        stalled = gnorm < 1e-12
        active[idx[stalled]] = False
        idx, grad, gnorm = idx[~stalled], grad[~stalled], gnorm[~stalled]
        direction = -grad / gnorm.astype(np.float32)[:, None, None, None]
        pending = np.arange(len(idx))
        for _bt in range(MAX_BACKTRACKS + 1):
            if len(pending) == 0:
                break
            rows = idx[pending]
            cand = n[rows] + step[rows].astype(np.float32)[:, None, None, None] * direction[pending]
            cand = np.clip(xs[rows] + cand, 0.0, 1.0) - xs[rows]
            f_new, g_new, p_new = evaluate(rows, cand)
            ok = f_new <= f[rows] - ARMIJO * step[rows] * gnorm[pending]
            acc = rows[ok]
            n[acc], f[acc], g[acc], probs[acc] = cand[ok], f_new[ok], g_new[ok], p_new[ok]
            iters[acc] += 1
            step[acc] *= 2.0
            step[rows[~ok]] *= 0.5
            pending = pending[~ok]
        active[idx[pending]] = False  # backtracking exhausted: converged
        hit = idx[np.argmax(probs[idx], axis=1) == targets[idx]]
        norms = np.sqrt(_sq_norms(n[hit]))
        better = norms < best_norm[hit]
        best[hit[better]] = n[hit[better]]
        best_norm[hit[better]] = norms[better]
    return best, best_norm, n, iters


def _shrink_to_boundary(net, xs, targets, noise, rows):
    """Line search on the scale of successful noise: the smallest ``s`` in
    ``(0, 1]`` for which ``clip(x + s * n)`` still reaches the target."""
    if len(rows) == 0:
        return noise
    lo = np.zeros(len(rows))
    hi = np.ones(len(rows))
    x, n, t = xs[rows], noise[rows], targets[rows]
    for _ in range(SHRINK_STEPS):
        mid = (lo + hi) / 2
        probs = net.predict_proba(np.clip(x + mid.astype(np.float32)[:, None, None, None] * n, 0.0, 1.0))
        ok = np.argmax(probs, axis=1) == t
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    out = noise.copy()
    out[rows] = hi.astype(np.float32)[:, None, None, None] * n
    return out


def lbfgs_batch(net: Network, xs, targets, spec: AttackSpec):
    """Smallest-L2 targeted noise via penalised descent, bisecting the
    penalty weight ``c`` geometrically inside ``PENALTY_RANGE``."""
    xs, targets = _batch_inputs(net, xs, targets)
    b = len(xs)
    already = np.argmax(net.predict_proba(xs), axis=1) == targets
    lo = np.full(b, PENALTY_RANGE[0])
    hi = np.full(b, PENALTY_RANGE[1])
    c = np.full(b, float(np.clip(spec.penalty_weight, *PENALTY_RANGE)))
    best = np.zeros_like(xs)
    best_norm = np.where(already, 0.0, np.inf)
    best_c = np.full(b, np.nan)
    fallback = np.zeros_like(xs)
    fallback_c = np.full(b, np.inf)
    iters = np.zeros(b, dtype=np.int64)
    todo = np.flatnonzero(~already)
    for _round in range(spec.penalty_rounds):
        if len(todo) == 0:
            break
        cand, cand_norm, final, used = _penalised_descent(net, xs[todo], targets[todo], c[todo], spec)
        iters[todo] += used
        ok = np.isfinite(cand_norm)
        improved = ok & (cand_norm < best_norm[todo])
        best[todo[improved]] = cand[improved]
        best_norm[todo[improved]] = cand_norm[improved]
        best_c[todo[improved]] = c[todo[improved]]
        weaker = c[todo] < fallback_c[todo]
        fallback[todo[weaker]] = final[weaker]
        fallback_c[todo[weaker]] = c[todo[weaker]]
        # success: a stronger penalty may still succeed with less noise
        lo[todo[ok]] = c[todo[ok]]
        hi[todo[~ok]] = c[todo[~ok]]
        c[todo] = np.sqrt(lo[todo] * hi[todo])
    failed = ~np.isfinite(best_norm)
    best[failed] = fallback[failed]
    best = _shrink_to_boundary(net, xs, targets, best, np.flatnonzero(~failed & ~already))
    x_adv = np.clip(xs + best, 0.0, 1.0)
    success = np.argmax(net.predict_proba(x_adv), axis=1) == targets
    meta = [{"penalty_weight": None if np.isnan(best_c[i]) else float(best_c[i])} for i in range(b)]
    return _examples(xs, best, x_adv, spec, targets, iters, success, metadata=meta)


# ---------------------------------------------------------------------------
# prediction-difference costs


def top5_cost(p_ref, p_other, k=5):
    """Sum over the reference distribution's top-k classes of ``p_ref - p_other``.

    Works on single vectors or ``(B, K)`` batches; ``k`` is capped at the
    number of classes.
    """
    p_ref = np.asarray(p_ref, dtype=np.float64)
    p_other = np.asarray(p_other, dtype=np.float64)
    if p_ref.shape != p_other.shape:
        raise InputError("predictions must cover the same class set")
    k = min(k, p_ref.shape[-1])
    idx = top_k_indices(p_ref, k)
    diff = np.take_along_axis(p_ref, idx, axis=-1) - np.take_along_axis(p_other, idx, axis=-1)
    return diff.sum(axis=-1)


def cost_target_gap(p_x: Prediction, p_y: Prediction) -> float:
    """Top-5 probability gap between the sample and a target-class sample."""
    return float(top5_cost(_probs(p_x), _probs(p_y)))


def _probs(p):
    return p.probabilities if isinstance(p, Prediction) else np.asarray(p)


# ---------------------------------------------------------------------------
# filter-aware attack


def _pipeline_grad(net, filt, x_adv, targets):
    fx = filt.apply(x_adv)
    res = _grad(net, fx, targets)
    return res.losses, filt.adjoint_apply(res.input_grad), res.probabilities


def fademl_batch(net: Network, filt: LinearFilter, xs, y_samples, spec: AttackSpec, targets=None,
                 strict=True):
    """Filter-aware refinement of a base attack.

    1. x and a target-class sample y must be classified differently.
    2. The top-5 gap between their unfiltered predictions is recorded.
    3. The base attack supplies noise n; x* = clip(x + eta * n).
    4-5. x* is classified through the filter and the top-5 cost between the
         unfiltered and filtered predictions is recorded.
    6. While the filter changes the prediction and the filtered class is not
       the target, n descends J(net, F(x*), target), the gradient reaching n
       through the filter adjoint. Noise stays inside the base attack's
       L-inf budget for sign-based bases.

    With ``strict=False`` samples violating step 1 are returned unperturbed
    and flagged instead of raising.
    """
    if spec.kind != "fademl":
        raise ConfigError("fademl_batch needs a fademl attack spec")
    xs = np.asarray(xs, dtype=np.float32)
    if filt.shape != net.input_shape:
        raise InputError(f"filter built for {filt.shape}, network expects {net.input_shape}")
    y_samples = np.asarray(y_samples, dtype=np.float32)
    if y_samples.shape == net.input_shape:
        y_samples = np.broadcast_to(y_samples, xs.shape)
    p_x = net.predict_proba(xs)
    p_y = net.predict_proba(y_samples)
    if targets is None:
        targets = spec.target_class if spec.target_class is not None else np.argmax(p_y, axis=1)
    xs, targets = _batch_inputs(net, xs, targets)
    b = len(xs)
    gap = top5_cost(p_x, p_y)
    invalid = np.argmax(p_x, axis=1) == np.argmax(p_y, axis=1)
    if strict and invalid.any():
        raise AttackError("prediction(x) must differ from prediction(y_sample)")
    base = spec.base.with_target(None)
    valid = np.flatnonzero(~invalid)
    eta = np.float32(spec.eta)

    noise = np.zeros_like(xs)
    x_adv = xs.copy()
    iters = np.zeros(b, dtype=np.int64)
    base_c = np.full(b, np.nan)
    if len(valid):
        base_ex = attack_batch(net, xs[valid], targets[valid], base)
        for j, i in enumerate(valid):
            ex = base_ex[j]
            noise[i] = ex.noise
            iters[i] = ex.iterations_used
            x_adv[i] = ex.x_adversarial if spec.eta == 1.0 else np.clip(xs[i] + eta * ex.noise, 0.0, 1.0)
            pw = ex.metadata.get("penalty_weight")
            base_c[i] = pw if pw is not None else np.nan

    p_tm1 = net.predict_proba(x_adv)
    p_tm2 = net.predict_proba(filt.apply(x_adv))
    initial_cost = top5_cost(p_tm1, p_tm2)
    refine = (~invalid) & (np.argmax(p_tm2, axis=1) != targets) & (initial_cost != 0.0)
    trace = [[] for _ in range(b)]
    idx = np.flatnonzero(refine)
    if len(idx):
        n_ref, adv_ref, used, tr = _refine(net, filt, xs[idx], noise[idx], targets[idx], spec,
                                           base_c[idx])
        noise[idx] = n_ref
        x_adv[idx] = adv_ref
        iters[idx] += used
        for j, i in enumerate(idx):
            trace[i] = tr[j]

    p_tm1 = net.predict_proba(x_adv)
    p_tm2 = net.predict_proba(filt.apply(x_adv))
    final_cost = top5_cost(p_tm1, p_tm2)
    meta = [{
        "target_gap": float(gap[i]),
        "initial_filter_cost": float(initial_cost[i]),
        "filter_cost": float(final_cost[i]),
        "refined": bool(refine[i]),
        "precondition_failed": bool(invalid[i]),
        "objective_trace": trace[i],
        "filter": filt.config.label,
    } for i in range(b)]
    out = _examples(xs, noise, x_adv, spec, targets, iters,
                    np.argmax(p_tm1, axis=1) == targets, eta=spec.eta, metadata=meta)
    hit = np.argmax(p_tm2, axis=1) == targets
    for ex, s in zip(out, hit):
        ex.success_filtered = bool(s)
    return out


def _refine(net, filt, xs, noise, targets, spec, base_c):
    base = spec.base
    b = len(xs)
    eta = np.float32(spec.eta)
    budget = np.float32(base.epsilon) if base.kind in ("fgsm", "bim") else None
    c = np.where(np.isfinite(base_c), base_c, 0.0) if base.kind == "lbfgs" else np.zeros(b)
    c32 = c.astype(np.float32)
    lam0 = spec.step
    lam = np.full(b, lam0)
    n = noise.copy()
    iters = np.zeros(b, dtype=np.int64)
    trace = [[] for _ in range(b)]

    def form(idx, nn):
        return np.clip(xs[idx] + eta * nn, 0.0, 1.0)

    def objective(idx, nn):
        losses, g, probs = _pipeline_grad(net, filt, form(idx, nn), targets[idx])
        sq = _sq_norms(nn)
        return c[idx] * sq + losses, g, probs

    idx = np.arange(b)
    f, g_x, probs = objective(idx, n)
    for i in range(b):
        trace[i].append(float(f[i]))
    active = np.argmax(probs, axis=1) != targets
    for _ in range(spec.max_iters):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        x_cur = form(idx, n[idx])
        inside = ((x_cur > 0) & (x_cur < 1)) | (eta == 0)
        grad = eta * inside * g_x[idx] + 2 * c32[idx, None, None, None] * n[idx]
        scale = np.abs(grad).max(axis=(1, 2, 3), initial=0.0)
        stalled = scale == 0
        active[idx[stalled]] = False
        idx, grad, scale = idx[~stalled], grad[~stalled], scale[~stalled]
        direction = -grad / scale[:, None, None, None]
        pending = np.arange(len(idx))
        for _bt in range(MAX_BACKTRACKS + 1 if spec.backtracking else 1):
            if len(pending) == 0:
                break
            rows = idx[pending]
            cand = n[rows] + lam[rows].astype(np.float32)[:, None, None, None] * direction[pending]
            if budget is not None:
                cand = np.clip(cand, -budget, budget)
            f_new, g_new, p_new = objective(rows, cand)
            ok = f_new <= f[rows] if spec.backtracking else np.ones(len(rows), dtype=bool)
            acc = rows[ok]
            n[acc] = cand[ok]
            f[acc] = f_new[ok]
            g_x[acc] = g_new[ok]
            probs[acc] = p_new[ok]
            iters[acc] += 1
            for i, fv in zip(acc, f_new[ok]):
                trace[i].append(float(fv))
            if spec.backtracking:
                lam[acc] = np.minimum(lam[acc] * 2.0, lam0 * 8)
                lam[rows[~ok]] *= 0.5
            pending = pending[~ok]
        active[idx[pending]] = False  # no acceptable step left
        active &= np.argmax(probs, axis=1) != targets
    return n, form(np.arange(b), n), iters, trace


# ---------------------------------------------------------------------------
# dispatch and single-image wrappers


def attack_batch(net, xs, targets, spec: AttackSpec, filt=None, y_samples=None, strict=True):
    if spec.kind == "fgsm":
        return fgsm_batch(net, xs, targets, spec)
    if spec.kind == "bim":
        return bim_batch(net, xs, targets, spec)
    if spec.kind == "lbfgs":
        return lbfgs_batch(net, xs, targets, spec)
    if filt is None or y_samples is None:
        raise ConfigError("fademl needs a filter and a target-class sample")
    return fademl_batch(net, filt, xs, y_samples, spec, targets, strict=strict)


def _single(net, x, target, spec):
    x = np.asarray(x, dtype=np.float32)
    if x.shape != net.input_shape:
        raise InputError(f"input shape {x.shape} does not match network input {net.input_shape}")
    if target is None:
        target = spec.target_class
    if target is None:
        raise ConfigError("a target class is required")
    return x[None], [int(target)]


def fgsm(net: Network, x, target: int, spec: AttackSpec) -> AdversarialExample:
    xs, t = _single(net, x, target, spec)
    return fgsm_batch(net, xs, t, spec)[0]


def bim(net: Network, x, target: int, spec: AttackSpec) -> AdversarialExample:
    xs, t = _single(net, x, target, spec)
    return bim_batch(net, xs, t, spec)[0]


def lbfgs_attack(net: Network, x, target: int, spec: AttackSpec) -> AdversarialExample:
    xs, t = _single(net, x, target, spec)
    return lbfgs_batch(net, xs, t, spec)[0]


def fademl_attack(net: Network, filt: LinearFilter, x, y_sample, spec: AttackSpec) -> AdversarialExample:
    x = np.asarray(x, dtype=np.float32)
    if x.shape != net.input_shape:
        raise InputError(f"input shape {x.shape} does not match network input {net.input_shape}")
    targets = None if spec.target_class is None else [spec.target_class]
    return fademl_batch(net, filt, x[None], np.asarray(y_sample)[None], spec, targets)[0]
