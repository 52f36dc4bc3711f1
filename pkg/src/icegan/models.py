"""Model assemblies for the two diagnosis frameworks.

A GanModel is an encoder-decoder-encoder adversarial network over length-28
feature vectors. Two of them run in parallel, one trained per class; their
residual features are concatenated and fed to either a CNN classifier
(PGANC) or a CNN feature extractor plus small FNN head (PGANT).

Class index convention, fixed project-wide: 0 = normal, 1 = icing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffnet as dn

NORMAL = 0
ICING = 1
FEATURE_DIM = 28

# latent geometry implied by the convolution stack: 28 -> 25 -> 22
LATENT_CHANNELS = 8
LATENT_WIDTH = 22
D_FEATURES = 152  # 4 filters * 2 rows * 19 columns after the 2-D stage
FC1_FEATURES = 16


def _check_input(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[:, None, :]
    if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != FEATURE_DIM:
        raise ValueError(f"expected (N, 1, {FEATURE_DIM}) input, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return x


def _encoder(rng, dtype, slope):
    # second conv stays bare (no activation), matching the printed stack
    return dn.Stack([
        dn.Conv1d(1, 4, 4, 1, rng=rng, dtype=dtype),
        dn.LeakyReLU(slope),
        dn.BatchNorm(4, dtype=dtype),
        dn.Conv1d(4, 8, 4, 1, rng=rng, dtype=dtype),
    ])


def conv_branch(rng=None, dtype=np.float32, slope: float = 0.01) -> dn.Stack:
    """Ablation stand-in for one adversarial branch.

    A plain conv stack with the encoder's geometry, so it produces features
    of exactly the residual shape (N, 8, 22) and can replace a GanModel
    wherever only branch features are consumed.
    """
    return _encoder(rng or np.random.default_rng(0), dtype, slope)


def branch_features(branch, x: dn.Tensor, train: bool = False) -> dn.Tensor:
    """Features of one per-class branch: residuals for a GAN, activations
    for a conv stand-in."""
    if isinstance(branch, GanModel):
        return gan_forward(branch, x, train=train).y
    return branch(x, train=train)


class GanModel:
    """Generator encoder/decoder plus discriminator encoder and scoring head."""

    def __init__(self, rng: np.random.Generator | None = None,
                 dtype=np.float32, slope: float = 0.01):
        rng = rng or np.random.default_rng(0)
        self.dtype = np.dtype(dtype)
        self.ge = _encoder(rng, dtype, slope)
        self.gd = dn.Stack([
            dn.ConvTranspose1d(8, 8, 4, 1, rng=rng, dtype=dtype),
            dn.LeakyReLU(slope),
            dn.BatchNorm(8, dtype=dtype),
            dn.ConvTranspose1d(8, 1, 4, 1, rng=rng, dtype=dtype),
            dn.LeakyReLU(slope),
            dn.BatchNorm(1, dtype=dtype),
            dn.Tanh(),
        ])
        self.de = _encoder(rng, dtype, slope)
        self.d_head = dn.Stack([
            dn.Linear(LATENT_CHANNELS * LATENT_WIDTH, 1, rng=rng, dtype=dtype),
            dn.Sigmoid(),
        ])

    def generator_params(self) -> list[dn.Tensor]:
        return self.ge.params() + self.gd.params()

    def discriminator_params(self) -> list[dn.Tensor]:
        return self.de.params() + self.d_head.params()

    def params(self) -> list[dn.Tensor]:
        return self.generator_params() + self.discriminator_params()

    def state(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for prefix, stack in (("ge", self.ge), ("gd", self.gd),
                              ("de", self.de), ("dh", self.d_head)):
            out.extend((f"{prefix}.{name}", arr) for name, arr in stack.state())
        return out


@dataclass
class GanForwardTrace:
    """Everything one forward pass produces; fields keep their graphs."""
    x: dn.Tensor       # (N, 1, 28) input as fed to the network
    h_ge: dn.Tensor    # (N, 8, 22) generator-encoder features
    x_gd: dn.Tensor    # (N, 1, 28) reconstruction, tanh range
    h_de: dn.Tensor    # (N, 8, 22) discriminator-encoder features of x_gd
    y: dn.Tensor       # (N, 8, 22) residual h_de - h_ge
    d_real: dn.Tensor  # (N, 1) discriminator score of x
    d_fake: dn.Tensor  # (N, 1) discriminator score of x_gd


def gan_forward(gan: GanModel, x, train: bool = False) -> GanForwardTrace:
    """Run the full encoder-decoder-encoder chain and both scoring passes."""
    if not isinstance(x, dn.Tensor):
        x = dn.constant(_check_input(x).astype(gan.dtype))
    else:
        _check_input(x.data)
    n = x.data.shape[0]
    h_ge = gan.ge(x, train=train)
    assert h_ge.data.shape == (n, LATENT_CHANNELS, LATENT_WIDTH), h_ge.data.shape
    x_gd = gan.gd(h_ge, train=train)
    assert x_gd.data.shape == (n, 1, FEATURE_DIM), x_gd.data.shape
    h_de = gan.de(x_gd, train=train)
    assert h_de.data.shape == (n, LATENT_CHANNELS, LATENT_WIDTH), h_de.data.shape
    y = dn.sub(h_de, h_ge)
    d_real = gan.d_head(gan.de(x, train=train), train=train)
    d_fake = gan.d_head(h_de, train=train)
    return GanForwardTrace(x=x, h_ge=h_ge, x_gd=x_gd, h_de=h_de, y=y,
                           d_real=d_real, d_fake=d_fake)


def concatenate(y_n: dn.Tensor, y_ic: dn.Tensor) -> dn.Tensor:
    """Stack the two residual tensors into (N, 8, 2, 22); row 0 = normal."""
    for t in (y_n, y_ic):
        if t.data.shape[1:] != (LATENT_CHANNELS, LATENT_WIDTH):
            raise ValueError(
                f"expected (N, {LATENT_CHANNELS}, {LATENT_WIDTH}) residuals, "
                f"got {t.data.shape}")
    if y_n.data.shape[0] != y_ic.data.shape[0]:
        raise ValueError("branch outputs disagree on batch size")
    return dn.stack_rows(y_n, y_ic)


def _feature_stage(rng, dtype, slope):
    """Conv2d + LeakyReLU + BatchNorm shared by the classifier and cnn_fe."""
    return dn.Stack([
        dn.Conv2d(8, 4, (1, 4), (1, 1), rng=rng, dtype=dtype),
        dn.LeakyReLU(slope),
        dn.BatchNorm(4, dtype=dtype),
    ])


class PgancModel:
    """Two parallel GANs, residual concatenation, CNN classifier."""

    def __init__(self, rng: np.random.Generator | None = None,
                 dtype=np.float32, slope: float = 0.01,
                 front_end: str = "gan"):
        rng = rng or np.random.default_rng(0)
        if front_end not in ("gan", "conv"):
            raise ValueError(f"unknown front end {front_end!r}")
        self.dtype = np.dtype(dtype)
        self.front_end = front_end
        make = GanModel if front_end == "gan" else conv_branch
        self.gan_normal = make(rng, dtype, slope)
        self.gan_icing = make(rng, dtype, slope)
        self.feature_stage = _feature_stage(rng, dtype, slope)
        self.head = dn.Stack([
            dn.Linear(D_FEATURES, 2, rng=rng, dtype=dtype),
            dn.Softmax(),
        ])

    @property
    def classifier(self) -> dn.Stack:
        return dn.Stack(self.feature_stage.layers + self.head.layers)

    def classifier_params(self) -> list[dn.Tensor]:
        return self.feature_stage.params() + self.head.params()

    def params(self) -> list[dn.Tensor]:
        return (self.gan_normal.params() + self.gan_icing.params()
                + self.classifier_params())

    def state(self) -> list[tuple[str, np.ndarray]]:
        out = []
        out.extend((f"gan_n.{n}", a) for n, a in self.gan_normal.state())
        out.extend((f"gan_ic.{n}", a) for n, a in self.gan_icing.state())
        out.extend((f"fe.{n}", a) for n, a in self.feature_stage.state())
        out.extend((f"head.{n}", a) for n, a in self.head.state())
        return out


def pganc_features(model, x, gan_train: bool = False) -> dn.Tensor:
    """Concatenated residual features (N, 8, 2, 22) from both branches."""
    if not isinstance(x, dn.Tensor):
        x = dn.constant(_check_input(x).astype(model.dtype))
    y_n = branch_features(model.gan_normal, x, train=gan_train)
    y_ic = branch_features(model.gan_icing, x, train=gan_train)
    return concatenate(y_n, y_ic)


def pganc_forward(model: PgancModel, x, train: bool = False,
                  gan_train: bool = False) -> dn.Tensor:
    """Probability pairs (N, 2); gan_train=True only for whole-network tuning."""
    f = pganc_features(model, x, gan_train=gan_train)
    conv = model.feature_stage(f, train=train)
    n = conv.data.shape[0]
    assert conv.data.shape == (n, 4, 2, 19), conv.data.shape
    return model.head(conv, train=train)


class PgantModel:
    """Same GAN front end; CNN feature extractor feeding a small FNN head."""

    def __init__(self, rng: np.random.Generator | None = None,
                 dtype=np.float32, slope: float = 0.01,
                 fc1_features: int = FC1_FEATURES, front_end: str = "gan"):
        rng = rng or np.random.default_rng(0)
        if front_end not in ("gan", "conv"):
            raise ValueError(f"unknown front end {front_end!r}")
        self.dtype = np.dtype(dtype)
        self.slope = slope
        self.front_end = front_end
        self.fc1_features = fc1_features
        make = GanModel if front_end == "gan" else conv_branch
        self.gan_normal = make(rng, dtype, slope)
        self.gan_icing = make(rng, dtype, slope)
        self.cnn_fe = _feature_stage(rng, dtype, slope)
        self.fc1 = dn.Linear(D_FEATURES, fc1_features, rng=rng, dtype=dtype)
        self.fc1_act = dn.LeakyReLU(slope)
        self.fc2 = dn.Linear(fc1_features, 2, rng=rng, dtype=dtype)
        self.softmax = dn.Softmax()

    def gan_feature_params(self) -> list[dn.Tensor]:
        return self.gan_normal.params() + self.gan_icing.params()

    def cnn_feature_params(self) -> list[dn.Tensor]:
        return self.cnn_fe.params()

    def classifier_params(self) -> list[dn.Tensor]:
        """The FNN head; per the update rule it never sees alignment gradients."""
        return self.fc1.params() + self.fc2.params()

    def params(self) -> list[dn.Tensor]:
        return (self.gan_feature_params() + self.cnn_feature_params()
                + self.classifier_params())

    def state(self) -> list[tuple[str, np.ndarray]]:
        out = []
        out.extend((f"gan_n.{n}", a) for n, a in self.gan_normal.state())
        out.extend((f"gan_ic.{n}", a) for n, a in self.gan_icing.state())
        out.extend((f"fe.{n}", a) for n, a in self.cnn_fe.state())
        out.extend((f"fnn.fc1.{n}", a) for n, a in self.fc1.state())
        out.extend((f"fnn.fc2.{n}", a) for n, a in self.fc2.state())
        return out


def pgant_forward(model: PgantModel, x, train: bool = False,
                  gan_train: bool = False):
    """Returns (Y, D, FC1).

    D is the flattened feature-extractor output (N, 152); FC1 the first
    fully-connected activation (N, 16). Both are what the alignment losses
    consume; Y is the probability pair.
    """
    f = pganc_features(model, x, gan_train=gan_train)
    conv = model.cnn_fe(f, train=train)
    n = conv.data.shape[0]
    assert conv.data.shape == (n, 4, 2, 19), conv.data.shape
    d = dn.flatten_batch(conv)
    fc1 = model.fc1_act(model.fc1(d, train=train))
    y = model.softmax(model.fc2(fc1, train=train))
    return y, d, fc1


def load_state(model, state: list) -> None:
    """Copy a (name, array) snapshot into a structurally identical model."""
    current = model.state()
    if [n for n, _ in current] != [n for n, _ in state]:
        raise ValueError("state layout does not match the model")
    for (_, dst), (_, src) in zip(current, state):
        if dst.shape != src.shape:
            raise ValueError(f"shape mismatch: {dst.shape} vs {src.shape}")
        dst[...] = src


def reconstruction_errors(gan: GanModel, x: np.ndarray, batch: int = 512) -> np.ndarray:
    """Per-sample ||x - G(x)||_2 in eval mode; the anomaly-style score."""
    x = _check_input(x).astype(gan.dtype)
    out = np.empty(x.shape[0], dtype=np.float64)
    for lo in range(0, x.shape[0], batch):
        xb = x[lo:lo + batch]
        trace = gan_forward(gan, xb, train=False)
        resid = (xb - trace.x_gd.data).reshape(xb.shape[0], -1)
        out[lo:lo + xb.shape[0]] = np.sqrt((resid.astype(np.float64) ** 2).sum(axis=1))
    return out


def pganc_icing_scores(model: PgancModel, x: np.ndarray, batch: int = 512) -> np.ndarray:
    """Icing-class probability per sample, eval mode, batched."""
    x = _check_input(x).astype(model.dtype)
    out = np.empty(x.shape[0], dtype=np.float64)
    for lo in range(0, x.shape[0], batch):
        y = pganc_forward(model, x[lo:lo + batch], train=False)
        out[lo:lo + y.data.shape[0]] = y.data[:, ICING]
    return out


def pgant_icing_scores(model: PgantModel, x: np.ndarray, batch: int = 512) -> np.ndarray:
    x = _check_input(x).astype(model.dtype)
    out = np.empty(x.shape[0], dtype=np.float64)
    for lo in range(0, x.shape[0], batch):
        y, _, _ = pgant_forward(model, x[lo:lo + batch], train=False)
        out[lo:lo + y.data.shape[0]] = y.data[:, ICING]
    return out
