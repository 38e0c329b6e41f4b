"""Cascade of linear weak regressors mapping features to parameter updates.

Each stage is an affine map delta = A f + b fitted by ridge regression
(bias unregularized, handled by explicit centering). Update targets are
z-scored per dimension, with the statistics taken from the first stage's
targets and reused by every later stage, so a single scale travels with
the trained cascade.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .features import DEFAULT_PATCH_SIZE, FeatureError, assemble_feature
from .util import TokenReader, atomic_write_text, fmt_row, parallel_map

log = logging.getLogger(__name__)

POSE_NAMES = ["rx", "ry", "rz", "tx", "ty", "tz"]


def param_layout(n_shape):
    """Parameter names for a pose + n_shape coefficient vector."""
    return POSE_NAMES + ["a%d" % i for i in range(n_shape)]


class FitError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__("stage %d: %s" % (stage, message))
        self.stage = stage


@dataclass
class ParamScale:
    mean: np.ndarray
    std: np.ndarray  # strictly positive

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if self.mean.shape != self.std.shape:
            raise ValueError("scale mean/std length mismatch")
        if np.any(self.std <= 0):
            raise ValueError("scale std must be strictly positive")

    @staticmethod
    def from_targets(deltas):
        d = np.asarray(deltas, dtype=np.float64)
        std = d.std(axis=0)
        # constant dimensions (e.g. translations that start at ground truth)
        # carry no signal; unit scale keeps them harmless
        std[std < 1e-12] = 1.0
        return ParamScale(mean=d.mean(axis=0), std=std)

    def normalize(self, deltas):
        return (np.asarray(deltas, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, normed):
        return np.asarray(normed, dtype=np.float64) * self.std + self.mean


@dataclass
class WeakRegressor:
    A: np.ndarray  # (p, F)
    b: np.ndarray  # (p,)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.A.ndim != 2 or self.A.shape[0] != self.b.shape[0]:
            raise ValueError("A must be (p, F) with b of length p")


@dataclass
class CascadeRegressor:
    stages: list
    scale: ParamScale
    feature_dim: int
    layout: list
    train_residuals: list = field(default_factory=list)

    def __post_init__(self):
        p = len(self.layout)
        for wr in self.stages:
            if wr.A.shape != (p, self.feature_dim):
                raise ValueError("stage dimensions inconsistent with layout/feature_dim")
        if self.scale.mean.shape[0] != p:
            raise ValueError("scale dimension inconsistent with layout")

    @property
    def param_dim(self):
        return len(self.layout)

    @property
    def n_stages(self):
        return len(self.stages)


def relative_lambda(features_centered, factor=2.0):
    """Scale-free ridge default: factor * trace(Fc' Fc) / feature_dim.

    The factor keeps each stage from interpolating the training set when
    samples are scarcer than feature dimensions, so later stages still see
    informative residuals.
    """
    fc = np.asarray(features_centered, dtype=np.float64)
    return factor * float(np.sum(fc * fc)) / fc.shape[1]


def train_stage(features, deltas, lam):
    """Exact ridge minimizer of ||A f + b - delta||^2 + lam ||A||_F^2.

    `deltas` must already be normalized by the cascade's ParamScale. The
    bias is recovered from the means and never regularized.
    """
    f = np.asarray(features, dtype=np.float64)
    d = np.asarray(deltas, dtype=np.float64)
    if f.ndim != 2 or d.ndim != 2 or f.shape[0] != d.shape[0] or f.shape[0] < 1:
        raise ValueError("features (M, F) and deltas (M, p) must share M >= 1")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(d))):
        raise ValueError("non-finite training data")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    fm = f.mean(axis=0)
    dm = d.mean(axis=0)
    fc = f - fm
    dc = d - dm
    gram = fc.T @ fc
    gram[np.diag_indices_from(gram)] += lam
    a_t = np.linalg.solve(gram, fc.T @ dc)
    a = a_t.T
    return WeakRegressor(A=a, b=dm - a @ fm)


def predict_update(reg, feature, scale):
    """De-normalized parameter update A f + b for a single feature vector."""
    f = np.asarray(feature, dtype=np.float64).reshape(-1)
    if f.shape[0] != reg.A.shape[1]:
        raise ValueError("feature length %d != regressor %d" % (f.shape[0], reg.A.shape[1]))
    return scale.denormalize(reg.A @ f + reg.b)


@dataclass
class TrainConfig:
    model: object
    cam: object
    stages: int = 3
    lam: float = None  # None -> relative_lambda per stage
    patch_size: int = DEFAULT_PATCH_SIZE
    jobs: int = 1


def train_cascade(samples, config):
    """Train `config.stages` weak regressors, updating every sample's
    parameter estimate after each stage. Samples whose features cannot be
    assembled are dropped with a warning; training fails if none remain.
    """
    if config.stages < 1:
        raise ValueError("need at least one stage")
    samples = list(samples)
    if not samples:
        raise ValueError("no training samples")
    thetas = [np.array(s.theta_init, dtype=np.float64) for s in samples]
    gts = [np.array(s.theta_gt, dtype=np.float64) for s in samples]
    p = gts[0].shape[0]
    layout = param_layout(p - 6)

    def assemble(i):
        try:
            return assemble_feature(samples[i].image, thetas[i], config.model,
                                    config.cam, config.patch_size)
        except FeatureError:
            return None

    scale = None
    stages = []
    residuals = []
    for stage_idx in range(config.stages):
        feats = parallel_map(assemble, range(len(samples)), config.jobs)
        keep = [i for i, f in enumerate(feats) if f is not None]
        for i, f in enumerate(feats):
            if f is None:
                log.warning("dropping sample %s: feature assembly failed",
                            getattr(samples[i], "id", i))
        if not keep:
            raise RuntimeError("all training samples dropped at stage %d" % stage_idx)
        samples = [samples[i] for i in keep]
        thetas = [thetas[i] for i in keep]
        gts = [gts[i] for i in keep]
        f_mat = np.stack([feats[i] for i in keep])
        d_mat = np.stack(gts) - np.stack(thetas)
        if scale is None:
            scale = ParamScale.from_targets(d_mat)
        d_norm = scale.normalize(d_mat)
        lam = config.lam
        if lam is None:
            lam = relative_lambda(f_mat - f_mat.mean(axis=0))
        wr = train_stage(f_mat, d_norm, lam)
        pred = f_mat @ wr.A.T + wr.b
        residuals.append(float(np.mean((pred - d_norm) ** 2)))
        for i in range(len(samples)):
            thetas[i] = thetas[i] + scale.denormalize(pred[i])
        stages.append(wr)
        log.info("stage %d: lambda=%.6g residual=%.6g n=%d",
                 stage_idx, lam, residuals[-1], len(samples))

    return CascadeRegressor(stages=stages, scale=scale, feature_dim=f_mat.shape[1],
                            layout=layout, train_residuals=residuals)


@dataclass
class FitResult:
    theta: np.ndarray
    trajectory: np.ndarray  # (n_stages + 1, p), row 0 = initialization


def fit(img, theta_init, reg, model, cam, patch_size=DEFAULT_PATCH_SIZE):
    """Apply every cascade stage to refine theta_init on one image."""
    theta = np.asarray(theta_init, dtype=np.float64).reshape(-1).copy()
    if theta.shape[0] != reg.param_dim:
        raise ValueError("theta_init length %d != cascade layout %d"
                         % (theta.shape[0], reg.param_dim))
    traj = [theta.copy()]
    for i, wr in enumerate(reg.stages):
        try:
            f = assemble_feature(img, theta, model, cam, patch_size)
        except FeatureError as e:
            raise FitError(i, str(e)) from e
        theta = theta + predict_update(wr, f, reg.scale)
        traj.append(theta.copy())
    return FitResult(theta=theta, trajectory=np.stack(traj))


# ---------------------------------------------------------------------------
# MFR1 text format
# ---------------------------------------------------------------------------

def save_regressor(reg, path):
    lines = [
        "MFR 1",
        "stages %d" % reg.n_stages,
        "pdim %d" % reg.param_dim,
        "fdim %d" % reg.feature_dim,
        "layout %s" % " ".join(reg.layout),
        "scale:",
        fmt_row(reg.scale.mean),
        fmt_row(reg.scale.std),
    ]
    for wr in reg.stages:
        lines.append("A:")
        lines.extend(fmt_row(row) for row in wr.A)
        lines.append("b:")
        lines.append(fmt_row(wr.b))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_regressor(path):
    with open(path, "r") as f:
        text = f.read()
    r = TokenReader(text)
    magic, version = r.take(2)
    if magic != "MFR" or version != "1":
        raise ValueError("not an MFR1 regressor file (got %r %r)" % (magic, version))
    r.expect("stages")
    n = r.take_ints(1)[0]
    r.expect("pdim")
    p = r.take_ints(1)[0]
    r.expect("fdim")
    fdim = r.take_ints(1)[0]
    r.expect("layout")
    layout = r.take(p)
    r.expect("scale:")
    mean = r.take_floats(p)
    std = r.take_floats(p)
    stages = []
    for _ in range(n):
        r.expect("A:")
        a = np.array(r.take_floats(p * fdim)).reshape(p, fdim)
        r.expect("b:")
        b = np.array(r.take_floats(p))
        stages.append(WeakRegressor(A=a, b=b))
    if not r.at_end():
        raise ValueError("trailing data in regressor file")
    return CascadeRegressor(stages=stages, scale=ParamScale(mean=mean, std=std),
                            feature_dim=fdim, layout=layout)
