"""Small residual encoder with projection/classifier heads and named layer taps.

Stages are named ``conv3``, ``conv4``, ``conv5`` (and onward for deeper
configs) and blocks within a stage ``conv{stage}_{index}``, 1-based, so a
two-block configuration exposes the familiar ``conv3_2``/``conv4_2``/``conv5_2``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import BatchNormState, Graph, Node, Parameter, ops


class EncoderConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    input_resolution: int = 32
    input_channels: int = 3
    stage_widths: tuple[int, ...] = (16, 32, 64)
    blocks_per_stage: int = 1
    embedding_dim: int = 128
    hidden_dim: int | None = None
    tap_names: tuple[str, ...] = ()
    head_mode: str = "projection"  # or "projection+classifier"
    class_count: int = 0
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        self.tap_names = tuple(self.tap_names)

    @property
    def block_ids(self) -> list[str]:
        return [f"conv{s + 3}_{b + 1}"
                for s in range(len(self.stage_widths)) for b in range(self.blocks_per_stage)]

    @property
    def has_classifier(self) -> bool:
        return self.head_mode == "projection+classifier"

    def validate(self) -> None:
        if not self.stage_widths:
            raise EncoderConfigError("stage_widths must be nonempty")
        if self.embedding_dim < 2:
            raise EncoderConfigError(f"embedding_dim must be >= 2, got {self.embedding_dim}")
        if self.blocks_per_stage < 1:
            raise EncoderConfigError("blocks_per_stage must be >= 1")
        if self.input_resolution % (2 ** len(self.stage_widths)):
            raise EncoderConfigError(
                f"input_resolution {self.input_resolution} is not divisible by 2^{len(self.stage_widths)}")
        if self.head_mode not in ("projection", "projection+classifier"):
            raise EncoderConfigError(f"unknown head_mode {self.head_mode!r}")
        if self.has_classifier and self.class_count < 2:
            raise EncoderConfigError("classifier head needs class_count >= 2")
        missing = [t for t in self.tap_names if t not in self.block_ids]
        if missing:
            raise EncoderConfigError(f"tap names {missing} not found; blocks are {self.block_ids}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_widths"] = list(self.stage_widths)
        d["tap_names"] = list(self.tap_names)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


@dataclass
class EncoderOutput:
    embeddings: Node
    features: Node
    logits: Node | None = None
    taps: dict[str, Node] = field(default_factory=dict)


class Encoder:
    """Residual CNN encoder; parameters live in ``self.params`` (ordered by name)."""

    def __init__(self, config: EncoderConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Parameter] = {}
        self.bn: dict[str, BatchNormState] = {}
        rng = np.random.default_rng(seed)
        c = config
        widths = c.stage_widths
        self._conv("stem", c.input_channels, widths[0], rng)
        prev = widths[0]
        for s, width in enumerate(widths):
            for b in range(c.blocks_per_stage):
                name = f"conv{s + 3}_{b + 1}"
                self._conv(f"{name}.a", prev, width, rng)
                self._conv(f"{name}.b", width, width, rng)
                prev = width
        hidden = c.hidden_dim or widths[-1]
        self._dense("proj.hidden", widths[-1], hidden, rng)
        self._dense("proj.out", hidden, c.embedding_dim, rng)
        if c.has_classifier:
            self._dense("classifier", widths[-1], c.class_count, rng)

    # -- construction ---------------------------------------------------------
    def _add(self, name, value):
        self.params[name] = Parameter(value.astype(self.dtype), name)

    def _conv(self, name, cin, cout, rng):
        bound = np.sqrt(6.0 / (cin * 9))
        self._add(f"{name}.weight", rng.uniform(-bound, bound, size=(cout, cin, 3, 3)))
        self._add(f"{name}.bn.scale", np.ones(cout))
        self._add(f"{name}.bn.shift", np.zeros(cout))
        self.bn[name] = BatchNormState(cout, self.config.bn_momentum, dtype=self.dtype)

    def _dense(self, name, cin, cout, rng):
        bound = np.sqrt(6.0 / cin)
        self._add(f"{name}.weight", rng.uniform(-bound, bound, size=(cin, cout)))
        self._add(f"{name}.bias", np.zeros(cout))

    @property
    def parameter_count(self) -> int:
        return int(sum(p.value.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- forward ------------------------------------------------------------
    def _conv_bn(self, g, x, name, stride, training, update):
        p = self.params
        y = ops.conv2d(x, g.parameter(p[f"{name}.weight"]), stride=stride, padding=1)
        return ops.batch_norm2d(y, g.parameter(p[f"{name}.bn.scale"]), g.parameter(p[f"{name}.bn.shift"]),
                                self.bn[name], training=training, update=update)

    def forward(self, g: Graph, images, training: bool = True, update_stats: bool = True,
                tap=True) -> EncoderOutput:
        """Run the encoder on an N x C x H x W batch inside graph ``g``.

        ``tap=True`` registers the configured taps on ``g`` under their block
        names, a sequence of block names registers those instead, ``False``
        none (a graph holds one set of taps).
        """
        c = self.config
        if tap is True:
            tapped = set(c.tap_names)
        elif tap is False:
            tapped = set()
        else:
            tapped = set(tap)
            unknown = tapped - set(c.block_ids)
            if unknown:
                raise ValueError(f"unknown tap names {sorted(unknown)}; blocks are {c.block_ids}")
        x = images if isinstance(images, Node) else g.constant(images)
        expected = (c.input_channels, c.input_resolution, c.input_resolution)
        if x.value.ndim != 4 or x.shape[1:] != expected:
            raise ValueError(f"encoder expects N x {expected[0]} x {expected[1]} x {expected[2]} images, "
                             f"got shape {x.shape}")
        h = ops.relu(self._conv_bn(g, x, "stem", 1, training, update_stats))
        taps = {}
        for s, width in enumerate(c.stage_widths):
            for b in range(c.blocks_per_stage):
                name = f"conv{s + 3}_{b + 1}"
                stride = 2 if b == 0 else 1
                y = ops.relu(self._conv_bn(g, h, f"{name}.a", stride, training, update_stats))
                y = self._conv_bn(g, y, f"{name}.b", 1, training, update_stats)
                shortcut = h if (stride == 1 and h.shape[1] == width) else ops.subsample_pad(h, stride, width)
                h = ops.relu(ops.add(y, shortcut))
                if name in tapped:
                    taps[name] = g.tap(name, h)
        feats = ops.global_avg_pool(h)
        p = self.params
        z = ops.relu(ops.dense(feats, g.parameter(p["proj.hidden.weight"]), g.parameter(p["proj.hidden.bias"])))
        z = ops.l2_normalize(ops.dense(z, g.parameter(p["proj.out.weight"]), g.parameter(p["proj.out.bias"])))
        logits = None
        if c.has_classifier:
            logits = ops.dense(feats, g.parameter(p["classifier.weight"]), g.parameter(p["classifier.bias"]))
        return EncoderOutput(z, feats, logits, taps)

    def forward_with_taps(self, g: Graph, images, training: bool = False, update_stats: bool = False):
        """(embeddings, taps, logits) with taps registered for a later backward."""
        out = self.forward(g, images, training=training, update_stats=update_stats)
        return out.embeddings, out.taps, out.logits

    def _eval_batches(self, images, batch_size, pick):
        chunks = []
        for i in range(0, len(images), batch_size):
            g = Graph(self.dtype)
            out = self.forward(g, np.asarray(images[i:i + batch_size], dtype=self.dtype),
                               training=False, update_stats=False, tap=False)
            chunks.append(pick(out).value)
        return np.concatenate(chunks, axis=0)

    def embed(self, images, batch_size: int = 256) -> np.ndarray:
        """Eval-mode L2-normalized embeddings."""
        return self._eval_batches(images, batch_size, lambda o: o.embeddings)

    def backbone_features(self, images, batch_size: int = 256) -> np.ndarray:
        """Eval-mode pooled backbone features (input to the classifier head)."""
        return self._eval_batches(images, batch_size, lambda o: o.features)

    def logits(self, images, batch_size: int = 256) -> np.ndarray:
        if not self.config.has_classifier:
            raise ValueError("encoder has no classifier head")
        return self._eval_batches(images, batch_size, lambda o: o.logits)

    # -- state --------------------------------------------------------------
    def state_tensors(self) -> dict[str, np.ndarray]:
        """Parameters and batch-norm running statistics by name."""
        out = {name: p.value for name, p in self.params.items()}
        for name, st in self.bn.items():
            out[f"{name}.bn.running_mean"] = st.running_mean
            out[f"{name}.bn.running_var"] = st.running_var
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            value = tensors[name]
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != expected {p.shape}")
            p.value = value.astype(self.dtype)
        for name, st in self.bn.items():
            st.running_mean = tensors[f"{name}.bn.running_mean"].astype(self.dtype)
            st.running_var = tensors[f"{name}.bn.running_var"].astype(self.dtype)

    def cast(self, dtype) -> "Encoder":
        """Copy with every tensor converted to ``dtype`` (for 64-bit gradient checks)."""
        other = Encoder.__new__(Encoder)
        other.config = self.config
        other.dtype = np.dtype(dtype)
        other.params = {k: p.astype(dtype) for k, p in self.params.items()}
        other.bn = {}
        for k, st in self.bn.items():
            new = BatchNormState(len(st.running_mean), st.momentum, st.eps, dtype)
            new.running_mean = st.running_mean.astype(dtype)
            new.running_var = st.running_var.astype(dtype)
            other.bn[k] = new
        return other


def build_encoder(config: EncoderConfig, seed: int = 0) -> Encoder:
    return Encoder(config, seed)
