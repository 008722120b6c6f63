"""Central finite-difference verification of tape gradients."""

from dataclasses import dataclass

import numpy as np

from .exceptions import NumericError
from .tensor import backward


@dataclass
class GradCheckEntry:
    param: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    """Per-coordinate comparison, worst first."""

    entries: list

    @property
    def max_rel_error(self):
        return self.entries[0].rel_error if self.entries else 0.0

    @property
    def worst(self):
        return self.entries[0] if self.entries else None

    def passed(self, tol=1e-3):
        return self.max_rel_error < tol


def relative_error(a, b, floor=1e-6):
    """``|a - b| / max(|a|, |b|, floor)``; the floor keeps near-zero pairs sane."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def fd_check(f, params, step=1e-4, max_coords=None, rng=None, analytic_hook=None):
    """Compare analytic gradients of ``f`` against central differences.

    Parameters
    ----------
    f : callable
        No-argument function returning a scalar :class:`Tensor` built from
        ``params``. Must be deterministic.
    params : list of Parameter
    step : float
        Half-width of the central difference.
    max_coords : int, optional
        Check at most this many randomly chosen coordinates per parameter.
    rng : numpy.random.Generator, optional
        Used only for coordinate sub-sampling.
    analytic_hook : callable, optional
        Applied to each analytic gradient before comparison (fault injection).

    Returns
    -------
    GradCheckReport
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("objective is not finite")
    backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}
    if analytic_hook is not None:
        analytic = {k: analytic_hook(v) for k, v in analytic.items()}
    rng = rng if rng is not None else np.random.default_rng(0)

    entries = []
    for p in params:
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        base = p.data.copy()
        for c in coords:
            idx = np.unravel_index(c, p.shape)
            plus = base.copy()
            plus[idx] += step
            p.value = plus
            f_plus = f().item()
            minus = base.copy()
            minus[idx] -= step
            p.value = minus
            f_minus = f().item()
            p.value = base
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"objective not finite while perturbing {p.name}{idx}")
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[p.name][idx])
            entries.append(GradCheckEntry(p.name, tuple(int(i) for i in idx), a, numeric, relative_error(a, numeric)))
    entries.sort(key=lambda e: e.rel_error, reverse=True)
    return GradCheckReport(entries)


# ---------------------------------------------------------------------------
# per-layer suite


def _projection_loss(out, rng):
    """``sum(out * R)`` for a fixed random ``R``: exercises every output coordinate."""
    from .tensor import Tensor, mul, tensor_sum

    weights = Tensor(rng.normal(size=out.shape))
    return tensor_sum(mul(out, weights))


KINK_MARGIN = 1e-3


def _rgcn_margin(net, batch):
    """Smallest ``|pre-activation|`` of the r-GCN ReLU over real slots."""
    from .structure import attention_mask
    from .tensor import Tensor, mul

    keep = batch.keep.astype(bool)
    H2 = mul(net.attention.forward(net.encoder.forward(batch), attention_mask(net.visible(batch))), Tensor(batch.keep[..., None])).data
    z = (net.adjacency(batch) @ H2) @ net.rgcn.W_r.data + H2 @ net.rgcn.W_0.data
    return float(np.abs(z[keep]).min())


def _tiny_net(seed):
    """Small network and batch for ``seed``.

    Central differences straddling a ReLU kink are meaningless, so test points
    with an r-GCN pre-activation within ``KINK_MARGIN`` of zero are redrawn.
    """
    from .corpus import SynthConfig, build_windows, detect_mentions, synth_generate
    from .features import featurize
    from .model import DisentanglementNet, ModelConfig

    for attempt in range(100):
        draw = seed + 1000 * attempt
        cfg = ModelConfig(window=5, hidden_dim=8, heads=2, recurrent_dim=4, hash_buckets=32, max_tokens=16, seed=draw)
        net = DisentanglementNet(cfg)
        rng = np.random.default_rng(draw + 1000)
        # the scorer starts at zero, which would hide upstream gradients
        net.scorer.weight.value = rng.uniform(-0.5, 0.5, size=net.scorer.weight.shape)
        net.scorer.bias.value = rng.uniform(-0.5, 0.5, size=1)
        d = synth_generate(SynthConfig(n_utterances=8, n_users=3, n_threads=2, mention_prob=0.8, seed=seed))
        windows = build_windows(d, detect_mentions(d, cfg.window), cfg.window)
        feats = featurize([d], [windows], cfg.encoder_config)
        batch = feats.batch(np.arange(len(feats)))
        if _rgcn_margin(net, batch) >= KINK_MARGIN:
            return net, batch, rng
    raise NumericError(f"no kink-free test point found for seed {seed}")


def layer_checks(seed=0, step=1e-4, flip_sign=False):
    """Finite-difference reports for each layer and the composed stack.

    ``flip_sign`` negates every analytic gradient; it exists so callers can
    confirm the harness catches a broken backward pass.
    """
    from .structure import attention_mask
    from .tensor import Tensor, concat, cross_entropy, mul

    net, batch, rng = _tiny_net(seed)
    keep = Tensor(batch.keep[..., None])
    mask = attention_mask(batch.visible)
    H1 = Tensor(net.encoder.forward(batch).data)
    H2 = Tensor(mul(net.attention.forward(H1, mask), keep).data)
    H3 = Tensor(mul(net.rgcn.forward(H2, Tensor(net.adjacency(batch))), keep).data)
    H4 = Tensor(net.recurrent.forward(H1, H3).data)
    R = net.config.recurrent_dim
    x1 = Tensor(rng.normal(size=net.config.hidden_dim))
    x2 = Tensor(rng.normal(size=net.config.hidden_dim))
    h0 = Tensor(rng.normal(size=R) * 0.5)
    c0 = Tensor(rng.normal(size=R) * 0.5)
    cell = net.recurrent.forward_cell

    def proj(fn):
        return lambda: _projection_loss(fn(), np.random.default_rng(seed + 7))

    def step_loss():
        h, c = cell.step(x1, x2, h0, c0)
        return _projection_loss(concat([h, c]), np.random.default_rng(seed + 11))

    def siamese_loss():
        logits = net.scorer.forward(H4, batch.pad)
        return cross_entropy(logits, batch.gold)

    cases = {
        "encoder": (proj(lambda: net.encoder.forward(batch)), net.encoder.parameters()),
        "masked_mhsa": (proj(lambda: net.attention.forward(H1, mask)), net.attention.parameters()),
        "rgcn": (proj(lambda: net.rgcn.forward(H2, Tensor(net.adjacency(batch)))), net.rgcn.parameters()),
        "synlstm_cell": (step_loss, cell.parameters()),
        "bi_synlstm": (proj(lambda: net.recurrent.forward(H1, H3)), net.recurrent.parameters()),
        "siamese_classifier": (siamese_loss, net.scorer.parameters()),
        "full_stack": (lambda: net.loss(batch)[0], net.parameters()),
    }
    reports = {}
    for name, (fn, params) in cases.items():
        # only the composed stack is sampled; per-layer checks are exhaustive
        max_coords = 6 if name == "full_stack" else None
        hook = (lambda g: -g) if flip_sign else None
        reports[name] = fd_check(fn, params, step=step, max_coords=max_coords, rng=np.random.default_rng(seed), analytic_hook=hook)
    return reports
