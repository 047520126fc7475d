"""Scalar metrics: input entropy, activation slope, Pearson correlation,
the CNA and CNA-Margin, output margins, and norm-based baselines.

The CNA of a network on a dataset is the Pearson correlation between two
per-datapoint vectors: alpha (histogram-binned Shannon entropy of the
input's feature values, in bits) and beta (least-squares slope of the
per-layer aggregated pre-activations ordered by depth 1..L).

CNA-Margin couples the CNA computed on the training set with classifier
confidence: the CNA is multiplied by clamp(g, 0, 1) where g is the 10th
percentile of the output margins divided by the sample standard deviation
of all margins. A confidently correct classifier keeps its full CNA; a
net misclassifying its training data is pulled to zero.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DataError, UndefinedCorrelationError
from .nn import forward
from .optim import iter_batches


@dataclass(frozen=True)
class EntropyConfig:
    """Histogram estimator settings. lo/hi of None means per-datapoint
    min-max range; log base is fixed at 2 (bits)."""

    bins: int = 256
    lo: float | None = 0.0
    hi: float | None = 1.0

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("bin count must be >= 2")
        if (self.lo is None) != (self.hi is None):
            raise ValueError("lo and hi must both be set or both be None")
        if self.lo is not None and not self.lo < self.hi:
            raise ValueError(f"degenerate fixed range [{self.lo}, {self.hi}]")

    @property
    def per_datapoint(self):
        return self.lo is None

    def to_dict(self):
        return {"bins": self.bins, "lo": self.lo, "hi": self.hi}

    @staticmethod
    def from_dict(d):
        return EntropyConfig(**d)


def entropy(x, cfg=EntropyConfig()):
    """Shannon entropy of one datapoint's feature values, in bits.

    Fixed-range mode clips values into [lo, hi] so every feature lands in
    a bin; per-datapoint mode bins over [min(x), max(x)]. Empty bins
    contribute zero. Result lies in [0, log2(bins)].
    """
    values = np.asarray(x, dtype=np.float64).ravel()
    if values.size == 0:
        raise DataError("entropy needs at least one element")
    if cfg.per_datapoint:
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            return 0.0
    else:
        lo, hi = cfg.lo, cfg.hi
        values = np.clip(values, lo, hi)
    counts, _ = np.histogram(values, bins=cfg.bins, range=(lo, hi))
    p = counts[counts > 0] / values.size
    return float(-(p * np.log2(p)).sum())


def entropy_vector(inputs, cfg=EntropyConfig()):
    """Per-datapoint entropy over a dataset's input tensor."""
    n = inputs.shape[0]
    return np.array([entropy(inputs[i], cfg) for i in range(n)])


def slope(z_row):
    """Least-squares slope of (depth, value) points with depths 1..L."""
    z = np.asarray(z_row, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise DataError("slope needs a vector of at least 2 per-layer values")
    ell = np.arange(1, z.size + 1, dtype=np.float64)
    ell_c = ell - ell.mean()
    return float((ell_c @ (z - z.mean())) / (ell_c @ ell_c))


def slope_vector(z):
    """Row-wise slopes of an (N, L) pre-activation aggregate matrix."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise DataError("slope_vector needs an (N, L>=2) matrix")
    ell = np.arange(1, z.shape[1] + 1, dtype=np.float64)
    ell_c = ell - ell.mean()
    return (z - z.mean(axis=1, keepdims=True)) @ ell_c / (ell_c @ ell_c)


def pearson(a, b, names=("a", "b")):
    """Sample Pearson correlation with the 1/(n-1) covariance convention.

    Raises UndefinedCorrelationError (naming the offending vector) when
    either argument has zero sample variance; never returns NaN.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"pearson needs equal-length vectors, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise DataError("pearson needs n >= 2")
    da = a - a.mean()
    db = b - b.mean()
    va = da @ da
    vb = db @ db
    if va == 0.0:
        raise UndefinedCorrelationError(names[0])
    if vb == 0.0:
        raise UndefinedCorrelationError(names[1])
    rho = (da @ db) / np.sqrt(va * vb)
    return float(np.clip(rho, -1.0, 1.0))


def trace_over_dataset(net, inputs, batch_size=512):
    """Recorded (N, L) pre-activation aggregates plus logits, batched in a
    fixed order so the result is independent of batch size."""
    n = inputs.shape[0]
    logits_parts = []
    z_parts = []
    for batch_idx in iter_batches(n, batch_size):
        logits, trace = forward(net, inputs[batch_idx], record=True)
        logits_parts.append(logits)
        z_parts.append(trace.z)
    return np.vstack(z_parts), np.vstack(logits_parts)


def cna(net, inputs, cfg=EntropyConfig(), alphas=None):
    """Pearson correlation between input entropy and activation slope.

    alphas, when given, must be the precomputed entropy vector for these
    inputs (it does not change over training, so callers computing the
    CNA every epoch pass it in).
    """
    if inputs.shape[0] < 2:
        raise DataError("cna needs at least 2 datapoints")
    if alphas is None:
        alphas = entropy_vector(inputs, cfg)
    z, _ = trace_over_dataset(net, inputs)
    betas = slope_vector(z)
    return pearson(alphas, betas, names=("alpha", "beta"))


def output_margin(logits, label):
    """Correct-class logit minus the largest other-class logit."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size < 2:
        raise DataError("output_margin needs at least 2 classes")
    if not 0 <= label < logits.size:
        raise DataError(f"label {label} out of range [0, {logits.size})")
    others = np.delete(logits, label)
    return float(logits[label] - others.max())


def margin_vector(logits, labels):
    """Per-datapoint output margins for an (N, C) logit matrix."""
    n = logits.shape[0]
    idx = np.arange(n)
    correct = logits[idx, labels]
    masked = logits.copy()
    masked[idx, labels] = -np.inf
    return correct - masked.max(axis=1)


def margin_factor(margins, percentile=10.0):
    """clamp(p-th percentile margin / sample std of margins, 0, 1)."""
    margins = np.asarray(margins, dtype=np.float64)
    gamma = float(np.percentile(margins, percentile))
    sd = float(margins.std(ddof=1)) if margins.size > 1 else 0.0
    if sd == 0.0:
        return 1.0 if gamma > 0 else 0.0
    return float(np.clip(gamma / sd, 0.0, 1.0))


def cna_margin(net, train_ds, cfg=EntropyConfig(), percentile=10.0, alphas=None):
    """CNA on the training set scaled by the clamped normalized margin."""
    if len(train_ds) < 2:
        raise DataError("cna_margin needs at least 2 datapoints")
    if alphas is None:
        alphas = entropy_vector(train_ds.inputs, cfg)
    z, logits = trace_over_dataset(net, train_ds.inputs)
    betas = slope_vector(z)
    base = pearson(alphas, betas, names=("alpha", "beta"))
    factor = margin_factor(margin_vector(logits, train_ds.labels), percentile)
    return base * factor + 0.0   # +0.0 folds -0.0 into 0.0


def spectral_norm(w, tol=1e-10, max_iter=50000):
    """Largest singular value via power iteration on W^T W.

    Converges on the relative change of the singular-value estimate.
    Iterating on the transpose when W has fewer rows than columns keeps
    the Gram product on the small side; the singular values agree.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.size == 0:
        raise DataError("spectral_norm needs a non-empty matrix")
    if w.shape[0] < w.shape[1]:
        w = w.T
    rng = np.random.default_rng(0x5EC7)
    v = rng.standard_normal(w.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        u = w @ v
        v_new = w.T @ u
        norm = np.linalg.norm(v_new)
        if norm == 0.0:
            return 0.0          # W v hit the null space: W is zero on it
        v_new /= norm
        sigma_new = float(np.linalg.norm(w @ v_new))
        if abs(sigma_new - sigma) <= tol * max(sigma_new, 1.0):
            return sigma_new
        sigma, v = sigma_new, v_new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps",
                           last_value=sigma)


def path_norm(net):
    """Sum of squared-weight products over all input-output paths.

    Computed by pushing an all-ones input through the network with every
    weight and bias squared; relu is the identity on the resulting
    non-negative values.
    """
    from .nn import _im2col

    a = np.ones((1,) + net.input_shape)
    for idx, spec in enumerate(net.specs):
        if spec.kind == "dense":
            a = a @ (net.params[idx]["W"] ** 2)
            if spec.bias:
                a = a + net.params[idx]["b"] ** 2
        elif spec.kind == "conv2d":
            w = net.params[idx]["W"]
            cols, oh, ow = _im2col(a, spec.kernel, spec.stride)
            pre = cols @ (w.reshape(w.shape[0], -1) ** 2).T
            if spec.bias:
                pre = pre + net.params[idx]["b"] ** 2
            a = pre.reshape(1, oh, ow, w.shape[0]).transpose(0, 3, 1, 2)
        elif spec.kind == "flatten":
            a = a.reshape(1, -1)
        # relu: identity on non-negative values
    return float(a.sum())


def norm_metrics(net, gamma):
    """Margin-normalized norm-based capacity measures.

    Returns {"frobenius", "spectral", "path"}:
      frobenius = prod_l ||W_l||_F^2 / gamma^2
      spectral  = prod_l ||W_l||_2^2 * sum_l(||W_l||_F^2/||W_l||_2^2) / gamma^2
      path      = path_norm / gamma^2
    """
    if gamma <= 0:
        raise DataError(f"margin gamma must be positive, got {gamma}")
    fro_prod, spec_prod, ratio_sum = _norm_products(net)
    g2 = gamma * gamma
    return {"frobenius": fro_prod / g2,
            "spectral": spec_prod * ratio_sum / g2,
            "path": path_norm(net) / g2}


def _norm_products(net):
    fro_prod = 1.0
    spec_prod = 1.0
    ratio_sum = 0.0
    for w in net.weight_matrices():
        fro2 = float((w * w).sum())
        spec2 = spectral_norm(w) ** 2
        fro_prod *= fro2
        spec_prod *= spec2
        ratio_sum += fro2 / spec2 if spec2 > 0 else 0.0
    return fro_prod, spec_prod, ratio_sum


METRIC_NAMES = ("cna", "cna_margin", "frobenius", "spectral", "path", "spectral_product")


@dataclass
class GapMetricSet:
    """One snapshot's scalar metric ledger. Normalized norm metrics are
    None when the 10th-percentile training margin is not positive."""

    cna: float | None = None
    cna_margin: float | None = None
    frobenius: float | None = None
    spectral: float | None = None
    path: float | None = None
    spectral_product: float | None = None

    def to_dict(self):
        return {name: getattr(self, name) for name in METRIC_NAMES}

    @staticmethod
    def from_dict(d):
        return GapMetricSet(**{k: d.get(k) for k in METRIC_NAMES})


def gap_metric_set(net, train_ds, test_ds, cfg=EntropyConfig(), percentile=10.0,
                   cna_split="test", train_alphas=None, test_alphas=None):
    """Compute the full metric set for one trained snapshot.

    CNA uses the test inputs by default (gap prediction stays a priori
    because labels are never used); CNA-Margin always uses the training
    set. CNA values that are undefined (zero-variance alpha or beta) stay
    None rather than being imputed. Normalized norm metrics stay None
    when the percentile training margin is not positive.

    Entropy vectors are constant over training, so per-epoch callers pass
    train_alphas/test_alphas to skip recomputing them.
    """
    if train_alphas is None:
        train_alphas = entropy_vector(train_ds.inputs, cfg)
    z_tr, logits_tr = trace_over_dataset(net, train_ds.inputs)
    margins = margin_vector(logits_tr, train_ds.labels)

    out = GapMetricSet()
    try:
        base = pearson(train_alphas, slope_vector(z_tr), names=("alpha", "beta"))
        out.cna_margin = base * margin_factor(margins, percentile) + 0.0
        if cna_split == "train":
            out.cna = base
    except UndefinedCorrelationError:
        pass
    if cna_split == "test":
        if test_alphas is None:
            test_alphas = entropy_vector(test_ds.inputs, cfg)
        z_te, _ = trace_over_dataset(net, test_ds.inputs)
        try:
            out.cna = pearson(test_alphas, slope_vector(z_te), names=("alpha", "beta"))
        except UndefinedCorrelationError:
            pass

    fro_prod, spec_prod, ratio_sum = _norm_products(net)
    out.spectral_product = spec_prod
    gamma = float(np.percentile(margins, percentile))
    if gamma > 0:
        g2 = gamma * gamma
        out.frobenius = fro_prod / g2
        out.spectral = spec_prod * ratio_sum / g2
        out.path = path_norm(net) / g2
    return out
