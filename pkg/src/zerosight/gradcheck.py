"""Central finite-difference checks for every differentiable primitive.

Each registered check builds a small float64 problem from a seed, computes
analytic gradients through the tape and compares them with central
differences.  The relative error is ``||a - n|| / max(||a||, ||n||)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import functional as F
from .attention import CbamBlock, InputAttention
from .backbone import BackboneConfig, build
from .losses import LossHead, ProxyBank, combined_loss, proxy_nca, smoothed_softmax
from .tensor import Tape, Tensor, concat, default_dtype, no_grad

STEP = 1e-5
# whole-network checks pass through many ReLU/max kinks; a smaller step keeps
# perturbations from straddling them
FULL_GRAPH_STEP = 1e-7


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-6) -> float:
    a, n = np.ravel(a), np.ravel(n)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def gradcheck(fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = STEP,
              max_coords: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> float:
    """Worst relative error over ``tensors`` between tape and finite-difference gradients.

    ``fn`` must return a scalar and be a deterministic function of the
    tensors' data.  With ``max_coords`` only that many coordinates per tensor
    (chosen by ``rng``) are differenced.
    """
    for t in tensors:
        t.grad = None
    tape = Tape()
    with tape:
        out = fn()
    tape.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else np.array(t.grad) for t in tensors]
    tape.reset()

    worst = 0.0
    for t, a in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        assert np.shares_memory(flat, t.data)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False))
        numeric = np.empty(len(idx))
        with no_grad():
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + step
                plus = fn().item()
                flat[i] = orig - step
                minus = fn().item()
                flat[i] = orig
                numeric[j] = (plus - minus) / (2 * step)
        worst = max(worst, relative_error(a.reshape(-1)[idx], numeric))
    return worst


def _u(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True, dtype=np.float64)


def _project(out: Tensor, rng) -> Tensor:
    # fixed random projection turns any output into a scalar that touches every entry
    r = Tensor(rng.uniform(-1, 1, out.shape), dtype=np.float64)
    return (out * r).sum()


def _unary(op):
    def check(rng):
        x = _u(rng, 2, 3, 4, 4)
        r = Tensor(rng.uniform(-1, 1, op(x).shape), dtype=np.float64)
        return gradcheck(lambda: (op(x) * r).sum(), [x])
    return check


def _binary(name):
    def check(rng):
        a, b = _u(rng, 3, 4), _u(rng, 1, 4, lo=0.5, hi=1.5)
        f = {"add": lambda: a + b, "sub": lambda: a - b, "mul": lambda: a * b, "div": lambda: a / b}[name]
        r = Tensor(rng.uniform(-1, 1, (3, 4)), dtype=np.float64)
        return gradcheck(lambda: (f() * r).sum(), [a, b])
    return check


def _conv2d(rng):
    x, w, b = _u(rng, 2, 3, 8, 8), _u(rng, 4, 3, 3, 3), _u(rng, 4)
    r = Tensor(rng.uniform(-1, 1, (2, 4, 4, 4)), dtype=np.float64)
    return gradcheck(lambda: (F.conv2d(x, w, b, stride=2, padding=1) * r).sum(), [x, w, b])


def _batch_norm(rng):
    x, g, b = _u(rng, 4, 2, 3, 3), _u(rng, 2, lo=0.5, hi=1.5), _u(rng, 2)
    r = Tensor(rng.uniform(-1, 1, (4, 2, 3, 3)), dtype=np.float64)
    return gradcheck(lambda: (F.batch_norm(x, g, b, training=True) * r).sum(), [x, g, b])


def _batch_norm_infer(rng):
    x, g, b = _u(rng, 4, 3), _u(rng, 3, lo=0.5, hi=1.5), _u(rng, 3)
    rm, rv = rng.uniform(-1, 1, 3), rng.uniform(0.5, 2, 3)
    r = Tensor(rng.uniform(-1, 1, (4, 3)), dtype=np.float64)
    return gradcheck(lambda: (F.batch_norm(x, g, b, rm, rv, training=False) * r).sum(), [x, g, b])


def _matmul(rng):
    a, b = _u(rng, 3, 4), _u(rng, 4, 2)
    r = Tensor(rng.uniform(-1, 1, (3, 2)), dtype=np.float64)
    return gradcheck(lambda: ((a @ b) * r).sum(), [a, b])


def _reductions(rng):
    x = _u(rng, 3, 4, 5)
    return gradcheck(lambda: x.sum(axis=1).exp().mean() + (x.mean(axis=(0, 2)) ** 2).sum()
                     + x.max(axis=2).sum(), [x])


def _exp_log(rng):
    x = _u(rng, 3, 4, lo=0.5, hi=1.5)
    r = Tensor(rng.uniform(-1, 1, (3, 4)), dtype=np.float64)
    return gradcheck(lambda: ((x.log() + x.exp() + x.sqrt()) * r).sum(), [x])


def _shape_ops(rng):
    x, y = _u(rng, 2, 3, 4), _u(rng, 2, 2, 4)
    r = Tensor(rng.uniform(-1, 1, (4, 5, 2)), dtype=np.float64)
    return gradcheck(lambda: (concat([x, y], axis=1).transpose(2, 1, 0) * r).sum()
                     + x.reshape(6, 4)[[0, 2, 2], 1:].sum(), [x, y])


def _log_softmax(rng):
    x = _u(rng, 3, 5)
    r = Tensor(rng.uniform(-1, 1, (3, 5)), dtype=np.float64)
    return gradcheck(lambda: (F.log_softmax(x, axis=1) * r).sum() + F.logsumexp(x, axis=0).sum(), [x])


def _l2_normalize(rng):
    x = _u(rng, 4, 3)
    r = Tensor(rng.uniform(-1, 1, (4, 3)), dtype=np.float64)
    return gradcheck(lambda: (F.l2_normalize(x, axis=1) * r).sum(), [x])


def _pool(op):
    def check(rng):
        x = _u(rng, 2, 4, 4, 4)
        out = op(x)
        r = Tensor(rng.uniform(-1, 1, out.shape), dtype=np.float64)
        return gradcheck(lambda: (op(x) * r).sum(), [x])
    return check


def _cbam(rng):
    with default_dtype(np.float64):
        block = CbamBlock(8, rng, reduction=4)
    for p in block.parameters():
        p.data += rng.uniform(-0.1, 0.1, p.shape)
    f = _u(rng, 2, 8, 6, 6)
    r = Tensor(rng.uniform(-1, 1, f.shape), dtype=np.float64)
    return gradcheck(lambda: (block(f) * r).sum(), [f, *block.parameters()])


def _ia(rng):
    with default_dtype(np.float64):
        ia = InputAttention(3, rng)
    for p in ia.parameters():
        p.data += rng.uniform(-0.1, 0.1, p.shape)
    f = _u(rng, 2, 3, 5, 5)
    r = Tensor(rng.uniform(-1, 1, f.shape), dtype=np.float64)
    return gradcheck(lambda: (ia(f) * r).sum(), [f, *ia.parameters()])


def _proxy_nca(rng):
    emb, proxies = _u(rng, 6, 5), _u(rng, 4, 5)
    labels = rng.integers(0, 4, 6)
    return gradcheck(lambda: proxy_nca(emb, labels, proxies), [emb, proxies])


def _smoothed_softmax(rng):
    logits = _u(rng, 5, 4, lo=-3, hi=3)
    labels = rng.integers(0, 4, 5)
    return gradcheck(lambda: smoothed_softmax(logits, labels, 0.25), [logits])


TOY_CONFIG = BackboneConfig(widths=(4, 8), use_input_attention=True, placement="early",
                            cbam_reduction=2, input_size=16)


def _toy_model(rng, seed):
    model = build(TOY_CONFIG, seed=seed, dtype=np.float64)
    model.train()
    with default_dtype(np.float64):
        bank = ProxyBank([0, 1, 2], TOY_CONFIG.embedding_dim, seed=seed)
        head = LossHead(TOY_CONFIG.embedding_dim, 3, seed=seed)
    x = Tensor(rng.uniform(-1, 1, (4, 3, 16, 16)), dtype=np.float64)
    return model, bank, head, x


def _embed(rng):
    model, _, _, x = _toy_model(rng, int(rng.integers(1 << 30)))
    x = Tensor(x.data[:2])
    r = Tensor(rng.uniform(-1, 1, (2, TOY_CONFIG.embedding_dim)), dtype=np.float64)
    return gradcheck(lambda: (model(x) * r).sum(), [model.stem_conv.weight], step=FULL_GRAPH_STEP,
                     max_coords=40, rng=rng)


def _combined(rng):
    model, bank, head, x = _toy_model(rng, int(rng.integers(1 << 30)))
    labels = np.array([0, 0, 1, 2])
    params = [p for _, p in model.named_parameters()] + head.parameters() + bank.parameters()
    return gradcheck(lambda: combined_loss(model(x), labels, head, bank)[0], params, step=FULL_GRAPH_STEP,
                     max_coords=6, rng=rng)


@dataclass(frozen=True)
class Check:
    name: str
    run: Callable[[np.random.Generator], float]
    tol: float


CHECKS = {c.name: c for c in [
    Check("conv2d", _conv2d, 1e-5),
    Check("batch_norm", _batch_norm, 1e-4),
    Check("batch_norm_infer", _batch_norm_infer, 1e-4),
    Check("relu", _unary(F.relu), 1e-4),
    Check("leaky_relu", _unary(lambda x: F.leaky_relu(x, 0.1)), 1e-4),
    Check("sigmoid", _unary(F.sigmoid), 1e-4),
    Check("max_pool2d", _pool(lambda x: F.max_pool2d(x, 2)), 1e-5),
    Check("max_pool2d_padded", _pool(lambda x: F.max_pool2d(x, 3, stride=2, padding=1)), 1e-5),
    Check("avg_pool2d", _pool(lambda x: F.avg_pool2d(x, 2)), 1e-5),
    Check("global_avg_pool", _pool(F.global_avg_pool), 1e-5),
    Check("channel_max", _pool(F.channel_max), 1e-5),
    Check("channel_mean", _pool(F.channel_mean), 1e-5),
    Check("matmul", _matmul, 1e-6),
    Check("add", _binary("add"), 1e-4),
    Check("sub", _binary("sub"), 1e-4),
    Check("mul", _binary("mul"), 1e-4),
    Check("div", _binary("div"), 1e-4),
    Check("exp_log_sqrt", _exp_log, 1e-4),
    Check("reductions", _reductions, 1e-4),
    Check("shape_ops", _shape_ops, 1e-4),
    Check("log_softmax", _log_softmax, 1e-4),
    Check("l2_normalize", _l2_normalize, 1e-4),
    Check("cbam_forward", _cbam, 1e-4),
    Check("ia_forward", _ia, 1e-4),
    Check("proxy_nca", _proxy_nca, 1e-4),
    Check("smoothed_softmax", _smoothed_softmax, 1e-4),
    Check("embed", _embed, 1e-3),
    Check("combined_loss", _combined, 1e-3),
]}


def run_check(name: str, seeds: Sequence[int] = range(5)) -> tuple[float, float]:
    """Return (worst error over seeds, tolerance) for one registered check."""
    check = CHECKS[name]
    worst = max(check.run(np.random.default_rng(seed)) for seed in seeds)
    return worst, check.tol
