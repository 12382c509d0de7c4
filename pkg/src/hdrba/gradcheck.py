"""Finite-difference gradient checking and the catalog of checked operators.

Every primitive in :data:`hdrba.autodiff.REGISTRY` has a case here, plus the
composite operators built from them (deformable conv, contextual attention,
completion, tonemapping and the losses). Each case builder takes a numpy
Generator and returns ``(fn, inputs)``; inputs are float64 and kept away from
kinks (|x| >= 1e-3 for abs/relu, fractional coordinates >= 1e-3 from the
lattice for bilinear sampling).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import ops
from .autodiff import Tensor, backward, no_grad
from .losses import PerceptualExtractor, color_loss, perceptual_loss, recon_loss, tv_loss
from .radiometry import mu_law


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst: tuple[int, tuple[int, ...]] | None
    checked: int
    message: str = ""

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = f" at input {self.worst[0]} index {self.worst[1]}" if self.worst else ""
        extra = f" ({self.message})" if self.message else ""
        return f"{status} max_rel_err={self.max_rel_error:.3e}{where} n={self.checked}{extra}"


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    seed: int = 0,
    max_elements: int | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn`` with central differences.

    Non-scalar outputs are contracted with a fixed random projection so the
    whole Jacobian is exercised. Only inputs with ``requires_grad`` are
    perturbed; ``max_elements`` caps the number of perturbed entries per input
    (chosen at random).
    """
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    proj = rng.standard_normal(out.shape) if out.size > 1 else np.ones(out.shape)
    for t in inputs:
        t.grad = None
    backward((out * proj).sum())

    def objective() -> float:
        with no_grad():
            return float(np.sum(fn(*inputs).data * proj))

    worst_err, worst_at, checked = 0.0, None, 0
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)  # a view, so writes perturb the input
        indices = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            indices = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        for j in indices:
            orig = flat[j]
            flat[j] = orig + step
            fp = objective()
            flat[j] = orig - step
            fm = objective()
            flat[j] = orig
            numeric = (fp - fm) / (2 * step)
            a = float(analytic.reshape(-1)[j])
            loc = (i, tuple(int(v) for v in np.unravel_index(j, t.shape)))
            if not (np.isfinite(a) and np.isfinite(numeric)):
                return GradCheckReport(False, float("nan"), loc, checked + 1, "non-finite gradient")
            err = relative_error(a, numeric)
            checked += 1
            if err > worst_err:
                worst_err, worst_at = err, loc
    return GradCheckReport(worst_err <= tol, worst_err, worst_at, checked)


# ---------------------------------------------------------------------------
# case catalog
# ---------------------------------------------------------------------------


def _t(x) -> Tensor:
    return Tensor(np.ascontiguousarray(x, dtype=np.float64), requires_grad=True)


def _off_kink(x: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 2, x)


def _frac_off_grid(x: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    frac = x - np.floor(x)
    return np.where(frac < margin, x + 2 * margin, np.where(frac > 1 - margin, x - 2 * margin, x))


def _binary(op):
    def build(rng):
        return op, [_t(rng.standard_normal((3, 4))), _t(rng.standard_normal((1, 4)))]

    return build


def _case_div(rng):
    b = rng.uniform(0.5, 2.0, (3, 1)) * rng.choice([-1, 1], (3, 1))
    return (lambda a, b: a / b), [_t(rng.standard_normal((3, 4))), _t(b)]


def _unary(fn, sampler):
    def build(rng):
        return fn, [_t(sampler(rng))]

    return build


def _case_conv2d(rng):
    stride, dilation, padding = [(1, 1, 1), (2, 1, 1), (1, 2, 2)][int(rng.integers(3))]
    x = _t(rng.standard_normal((2, 3, 7, 6)))
    w = _t(rng.standard_normal((4, 3, 3, 3)))
    b = _t(rng.standard_normal(4))
    return (lambda x, w, b: ops.conv2d(x, w, b, stride=stride, dilation=dilation, padding=padding)), [x, w, b]


def _case_bilinear(rng):
    f = _t(rng.standard_normal((2, 3, 5, 6)))
    py = _t(_frac_off_grid(rng.uniform(-1.5, 5.5, (2, 4, 3))))
    px = _t(_frac_off_grid(rng.uniform(-1.5, 6.5, (2, 4, 3))))
    return ops.bilinear_sample, [f, py, px]


def deform_inputs(rng, n=1, c=3, h=6, w=5):
    """Random (features, kernels, offsets) with sample points off the lattice."""
    f = rng.standard_normal((n, c, h, w))
    k = rng.standard_normal((n, 9, h, w))
    off = rng.uniform(-2, 2, (n, 18, h, w))
    # keep absolute sample positions (base grid + offset) away from integers
    return f, k, _frac_off_grid(off)


def _case_deform(rng):
    f, k, off = deform_inputs(rng)
    return ops.pixel_adaptive_deformable_conv, [_t(f), _t(k), _t(off)]


def _case_attention(rng):
    f = _t(rng.standard_normal((1, 1, 8, 8)))
    m = _t(rng.uniform(0.1, 0.9, (1, 1, 8, 8)))
    return (lambda f, m: ops.contextual_attention(f, m, temperature=10.0)), [f, m]


def _case_attention_multichannel(rng):
    f = _t(rng.standard_normal((2, 3, 6, 7)))
    m = _t(rng.uniform(0.1, 0.9, (2, 1, 6, 7)))
    return (lambda f, m: ops.contextual_attention(f, m, temperature=10.0)), [f, m]


def _case_complete(rng):
    hc = _t(rng.uniform(0, 1, (2, 3, 4, 4)))
    hf = _t(rng.uniform(0, 1, (2, 3, 4, 4)))
    m = _t(rng.uniform(0.05, 0.95, (2, 1, 4, 4)))
    return ops.complete, [hc, hf, m]


def _positive_image(rng, shape=(1, 3, 8, 8)):
    return rng.uniform(0.05, 1.0, shape)


def _case_recon(rng):
    a, b = _positive_image(rng), _positive_image(rng)
    return recon_loss, [_t(a), Tensor(b)]


def _case_color(rng):
    return color_loss, [_t(_positive_image(rng)), Tensor(_positive_image(rng))]


def _case_tv(rng):
    return tv_loss, [_t(_positive_image(rng))]


_EXTRACTOR = None


def _case_perceptual(rng):
    global _EXTRACTOR
    if _EXTRACTOR is None:
        _EXTRACTOR = PerceptualExtractor.from_seed(0)
    a, b = _positive_image(rng, (1, 3, 8, 8)), _positive_image(rng, (1, 3, 8, 8))
    return (lambda p, t: perceptual_loss(p, t, _EXTRACTOR)), [_t(a), Tensor(b)]


def _case_getitem(rng):
    return (lambda a: a[1:, ::2]), [_t(rng.standard_normal((3, 5)))]


def _case_concat(rng):
    return (lambda a, b: ad.concat([a, b], axis=1)), [_t(rng.standard_normal((2, 3))), _t(rng.standard_normal((2, 2)))]


def _case_matmul(rng):
    return (lambda a, b: a @ b), [_t(rng.standard_normal((2, 3, 4))), _t(rng.standard_normal((4, 5)))]


def _case_unfold(rng):
    return (lambda x: ops.unfold(x, 3)), [_t(rng.standard_normal((2, 2, 5, 4)))]


def _case_fold(rng):
    return (lambda p: ops.fold(p, (2, 2, 5, 4), 3)), [_t(rng.standard_normal((2, 6, 18)))]


CASES: dict[str, Callable] = {
    "add": _binary(lambda a, b: a + b),
    "sub": _binary(lambda a, b: a - b),
    "mul": _binary(lambda a, b: a * b),
    "div": _case_div,
    "neg": _unary(lambda a: -a, lambda r: r.standard_normal((3, 4))),
    "pow": _unary(lambda a: a**2.5, lambda r: r.uniform(0.2, 2.0, (3, 4))),
    "exp": _unary(lambda a: a.exp(), lambda r: r.standard_normal((3, 4))),
    "log": _unary(lambda a: a.log(), lambda r: r.uniform(0.2, 3.0, (3, 4))),
    "log1p": _unary(lambda a: a.log1p(), lambda r: r.uniform(-0.5, 3.0, (3, 4))),
    "abs": _unary(lambda a: a.abs(), lambda r: _off_kink(r.standard_normal((3, 4)))),
    "relu": _unary(ad.relu, lambda r: _off_kink(r.standard_normal((3, 4)))),
    "clamp_min": _unary(lambda a: ad.clamp_min(a, 0.0), lambda r: _off_kink(r.standard_normal((3, 4)))),
    "sigmoid": _unary(ad.sigmoid, lambda r: r.standard_normal((3, 4)) * 3),
    "softmax": _unary(lambda a: ad.softmax(a, axis=-1), lambda r: r.standard_normal((2, 5))),
    "sum": _unary(lambda a: a.sum(axis=1), lambda r: r.standard_normal((3, 4))),
    "mean": _unary(lambda a: a.mean(axis=0, keepdims=True), lambda r: r.standard_normal((3, 4))),
    "l2norm": _unary(lambda a: ad.l2norm(a, axis=-1), lambda r: r.standard_normal((3, 4))),
    "reshape": _unary(lambda a: a.reshape(4, 3) * Tensor(np.arange(12.0).reshape(4, 3)), lambda r: r.standard_normal((3, 4))),
    "transpose": _unary(lambda a: a.transpose(1, 0, 2), lambda r: r.standard_normal((2, 3, 4))),
    "getitem": _case_getitem,
    "concat": _case_concat,
    "matmul": _case_matmul,
    "conv2d": _case_conv2d,
    "bilinear_sample": _case_bilinear,
    "unfold": _case_unfold,
    "fold": _case_fold,
    "avg_pool2d": _unary(lambda a: ops.avg_pool2d(a, 2), lambda r: r.standard_normal((1, 2, 5, 4))),
    "upsample_nearest": _unary(lambda a: ops.upsample_nearest(a, 2), lambda r: r.standard_normal((1, 2, 3, 2))),
    # composites
    "pixel_adaptive_deformable_conv": _case_deform,
    "contextual_attention": _case_attention,
    "contextual_attention_multichannel": _case_attention_multichannel,
    "complete": _case_complete,
    "mu_law": _unary(lambda a: mu_law(a), lambda r: r.uniform(0.05, 1.0, (3, 4))),
    "recon_loss": _case_recon,
    "color_loss": _case_color,
    "tv_loss": _case_tv,
    "perceptual_loss": _case_perceptual,
}


def run_case(name: str, instances: int = 3, seed: int = 0, step: float = 1e-5, tol: float = 1e-4) -> list[GradCheckReport]:
    builder = CASES[name]
    reports = []
    for k in range(instances):
        rng = np.random.default_rng([seed, k, sum(map(ord, name))])
        with ad.precision("float64"):
            fn, inputs = builder(rng)
            reports.append(grad_check(fn, inputs, step=step, tol=tol, seed=k))
    return reports


def check_pipeline_gradient(
    n_params: int = 50,
    seed: int = 0,
    step: float = 1e-6,
    tol: float = 1e-3,
    atol: float = 1e-8,
    width: int = 4,
    size: int = 16,
) -> GradCheckReport:
    """Finite-difference check of the full training loss w.r.t. random weights.

    Builds a small network and one synthetic batch, then compares the
    analytic gradient with central differences at ``n_params`` scalar
    entries drawn uniformly over all parameters. Biases and offset heads are
    set to small random values first so the check runs at a generic point.
    The mu-law in the losses is sharply curved near zero radiance, where an
    untrained network's outputs sit, so derivatives use a fourth-order
    central stencil. Round-off in a loss of order one limits the stencil to
    roughly ``atol`` absolute accuracy, so an entry passes when
    ``|a - n| <= tol * max(|a|, |n|) + atol``. The reported error is the
    plain relative error.
    """
    from .dataset import make_batch, make_static_scene, synth_dynamic_scene
    from .losses import LossWeights, default_terms, total_loss
    from .networks import HDRNet, NetConfig

    rng = np.random.default_rng(seed)
    with ad.precision("float64"):
        net = HDRNet(NetConfig(width=width, seed=seed))
        # zero-initialised offsets put every bilinear tap on the lattice and
        # zero biases leave dead units exactly at the relu kink; both points
        # are only one-sided differentiable, so move off them
        for name, p in net.params.items():
            if ".offset2." in name:
                p.data = rng.normal(0.0, 0.05, p.shape)
            elif name.endswith(".bias"):
                p.data = rng.normal(0.0, 0.01, p.shape)
        scene = synth_dynamic_scene(seed, size, motion_px=2)
        static = make_static_scene(scene.gt, scene.exposures)
        xs, gt = make_batch([scene], [static], 4, seed=seed, size=size).arrays()
        terms = default_terms()
        weights = LossWeights()

        def loss() -> Tensor:
            return total_loss(net(*xs).as_dict(), gt, weights, terms).total

        for p in net.params.values():
            p.grad = None
        backward(loss())
        names = list(net.params)
        sizes = np.array([net.params[n].size for n in names], dtype=float)
        picks = rng.choice(len(names), size=n_params, p=sizes / sizes.sum())
        worst_err, worst_at, passed = 0.0, None, True
        for k in picks:
            p = net.params[names[k]]
            j = int(rng.integers(p.size))
            flat = p.data.reshape(-1)
            analytic = float(p.grad.reshape(-1)[j]) if p.grad is not None else 0.0
            orig = flat[j]
            f = {}
            with no_grad():
                for m in (-2, -1, 1, 2):
                    flat[j] = orig + m * step
                    f[m] = loss().item()
            flat[j] = orig
            numeric = (8 * (f[1] - f[-1]) - (f[2] - f[-2])) / (12 * step)
            diff = abs(analytic - numeric)
            passed &= diff <= tol * max(abs(analytic), abs(numeric)) + atol
            err = relative_error(analytic, numeric)
            if err > worst_err:
                worst_err, worst_at = err, (int(k), (j,))
    name = names[worst_at[0]] if worst_at else ""
    return GradCheckReport(bool(passed), worst_err, worst_at, n_params, f"worst parameter {name}" if name else "")
