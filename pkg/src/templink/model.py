"""Model assembly: stacked temporal blocks or plain graph convolutions per a
layer grammar, optional variational heads, and the inner-product decoder."""

import json
import re
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import GcnLayer, TemporalBlock, glorot
from .tensor import Tensor

_SPEC_RE = re.compile(r"^[GT]+V?$")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description.

    layer_spec strings are read left to right: 'G' is a plain graph
    convolution, 'T' a temporal block, and an optional final 'V' adds the
    variational mean / log-std heads.  dims gives one width per G/T layer;
    embeddings always live in the last width.
    """

    layer_spec: str = "TTV"
    use_layer_norm: bool = True
    use_skip: bool = True
    dims: tuple = (32, 16)
    embedding_dim: int = 16
    leaky_slope: float = 0.01

    def __post_init__(self):
        if not _SPEC_RE.match(self.layer_spec):
            raise ConfigError(
                f"layer spec {self.layer_spec!r} must be G/T layers with an "
                "optional terminal V"
            )
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        n_layers = len(self.layer_spec.rstrip("V"))
        if len(self.dims) != n_layers:
            raise ConfigError(
                f"{n_layers} layers in {self.layer_spec!r} but {len(self.dims)} dims"
            )
        if any(d < 1 for d in self.dims):
            raise ConfigError("layer widths must be positive")
        if self.embedding_dim != self.dims[-1]:
            raise ConfigError(
                f"embedding_dim {self.embedding_dim} must equal the last "
                f"layer width {self.dims[-1]}"
            )

    @property
    def variational(self):
        return self.layer_spec.endswith("V")

    def to_dict(self):
        return {
            "layer_spec": self.layer_spec,
            "use_layer_norm": self.use_layer_norm,
            "use_skip": self.use_skip,
            "dims": list(self.dims),
            "embedding_dim": self.embedding_dim,
            "leaky_slope": self.leaky_slope,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            layer_spec=d["layer_spec"],
            use_layer_norm=d["use_layer_norm"],
            use_skip=d["use_skip"],
            dims=tuple(d["dims"]),
            embedding_dim=d["embedding_dim"],
            leaky_slope=d.get("leaky_slope", 0.01),
        )


def _cfg(spec, ln=False, skip=False, dims=(32, 16)):
    return ModelConfig(
        layer_spec=spec, use_layer_norm=ln, use_skip=skip, dims=dims,
        embedding_dim=dims[-1],
    )


PRESETS = {
    "GGG": _cfg("GGG", dims=(32, 16, 16)),
    "GGV": _cfg("GGV"),
    "TGV": _cfg("TGV"),
    "TTV": _cfg("TTV"),
    "TTV_LN": _cfg("TTV", ln=True),
    "TTV_LN_SC": _cfg("TTV", ln=True, skip=True),
}

_ALIASES = {"TNA": "TTV_LN_SC", "FULL": "TTV_LN_SC"}


def preset_config(name):
    """Look up an ablation preset; names are case-insensitive and '/'-tolerant
    (ttv_ln_sc, TTV/LN/SC and tna all mean the full model)."""
    key = name.upper().replace("/", "_").replace("-", "_")
    key = _ALIASES.get(key, key)
    if key not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; expected one of {', '.join(sorted(PRESETS))}"
        )
    return PRESETS[key]


@dataclass
class StepOutput:
    """Per-snapshot forward results; z equals mu when not sampling, and
    log_sigma is None for non-variational configs."""

    mu: Tensor
    log_sigma: Tensor
    z: Tensor


class LinearGcnHead:
    """Normalized-adjacency propagation with no activation; the mean and
    log-std output layers must emit either sign."""

    def __init__(self, d_in, d_out, rng):
        self.weight = glorot(rng, d_in, d_out)

    def forward(self, a_hat, h):
        hw = T.matmul(h, self.weight)
        if sp.issparse(a_hat):
            return T.spmm(a_hat, hw, a_hat)
        return T.matmul(a_hat, hw)

    def named_parameters(self):
        yield "weight", self.weight


class Model:
    """The assembled architecture; parameters are shared across time."""

    LOG_SIGMA_CLAMP = 10.0

    def __init__(self, config, vertex_count, rng):
        self.config = config
        self.vertex_count = vertex_count
        self.layers = []
        d_prev = vertex_count
        body = config.layer_spec.rstrip("V")
        for kind, d_out in zip(body, config.dims):
            if kind == "G":
                self.layers.append(GcnLayer(d_prev, d_out, rng))
            else:
                self.layers.append(
                    TemporalBlock(
                        d_prev, d_out, rng,
                        use_layer_norm=config.use_layer_norm,
                        use_skip=config.use_skip,
                        leaky_slope=config.leaky_slope,
                    )
                )
            d_prev = d_out
        if config.variational:
            self.head_mu = LinearGcnHead(d_prev, config.embedding_dim, rng)
            self.head_logsigma = LinearGcnHead(d_prev, config.embedding_dim, rng)
        else:
            self.head_mu = None
            self.head_logsigma = None

    def initial_state(self, n_rows=None):
        """Zero hidden matrices, one per temporal block."""
        n = self.vertex_count if n_rows is None else n_rows
        return [
            layer.initial_state(n)
            for layer in self.layers
            if isinstance(layer, TemporalBlock)
        ]

    def named_parameters(self):
        for k, layer in enumerate(self.layers):
            if isinstance(layer, TemporalBlock):
                for name, p in layer.named_parameters():
                    yield f"layers.{k}.{name}", p
            else:
                yield f"layers.{k}.weight", layer.weight
        if self.head_mu is not None:
            yield "head_mu.weight", self.head_mu.weight
            yield "head_logsigma.weight", self.head_logsigma.weight

    def parameters(self):
        for _, p in self.named_parameters():
            yield p


def build_model(config, vertex_count, rng):
    if vertex_count < 1:
        raise ConfigError("vertex_count must be positive")
    return Model(config, vertex_count, rng)


def count_parameters(model):
    return sum(p.data.size for p in model.parameters())


def forward_step(model, snapshot, state, sample=False, rng=None):
    """One snapshot through the stack; returns (StepOutput, new state)."""
    if snapshot.vertex_count != model.vertex_count:
        raise ShapeError(
            f"snapshot has {snapshot.vertex_count} vertices, model expects "
            f"{model.vertex_count}"
        )
    a_hat = snapshot.a_hat_csr
    state = list(state)
    h = None  # identity features at the input layer
    t_index = 0
    for layer in model.layers:
        if isinstance(layer, TemporalBlock):
            h, state[t_index] = layer.forward(a_hat, h, state[t_index])
            t_index += 1
        else:
            h = layer.forward(a_hat, h)
    if model.head_mu is None:
        return StepOutput(mu=h, log_sigma=None, z=h), state
    mu = model.head_mu.forward(a_hat, h)
    log_sigma = T.clamp(
        model.head_logsigma.forward(a_hat, h),
        -Model.LOG_SIGMA_CLAMP, Model.LOG_SIGMA_CLAMP,
    )
    if sample:
        if rng is None:
            raise ConfigError("sampling requires an rng")
        eps = Tensor(rng.standard_normal(size=mu.shape))
        z = T.add(mu, T.hadamard(eps, T.exp(log_sigma)))
    else:
        z = mu
    return StepOutput(mu=mu, log_sigma=log_sigma, z=z), state


def forward_sequence(model, graphs, state=None, sample=False, rng=None):
    """Run the whole snapshot sequence, threading hidden state; returns the
    per-step outputs and the final state (reusable for continuation)."""
    graphs = list(graphs)
    if not graphs:
        raise ShapeError("forward_sequence needs at least one snapshot")
    if state is None:
        state = model.initial_state()
    outputs = []
    for s in graphs:
        step, state = forward_step(model, s, state, sample=sample, rng=rng)
        outputs.append(step)
    return outputs, state


def pair_scores(z):
    """Pre-sigmoid pair scores: the embedding gram matrix, exactly
    symmetrized against dgemm rounding asymmetry."""
    s = T.matmul(z, T.transpose(z))
    return T.scale(T.add(s, T.transpose(s)), 0.5)


def decode(z):
    """Edge probabilities: sigmoid of the embedding gram matrix.
    Parameter-free and exactly symmetric."""
    return T.sigmoid(pair_scores(z))


# --- checkpointing --------------------------------------------------------

def save_checkpoint(model, path):
    """Parameter arrays keyed by layer path, plus the config; bit-exact."""
    arrays = {name: p.data for name, p in model.named_parameters()}
    meta = dict(model.config.to_dict(), vertex_count=model.vertex_count)
    np.savez(path, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as bundle:
        if "__meta__" not in bundle:
            raise ConfigError(f"{path}: not a model checkpoint")
        meta = json.loads(str(bundle["__meta__"]))
        arrays = {k: bundle[k] for k in bundle.files if k != "__meta__"}
    config = ModelConfig.from_dict(meta)
    model = build_model(config, meta["vertex_count"], np.random.default_rng(0))
    names = {name for name, _ in model.named_parameters()}
    if names != set(arrays):
        raise ConfigError(f"{path}: parameter names do not match the config")
    for name, p in model.named_parameters():
        if p.data.shape != arrays[name].shape:
            raise ConfigError(f"{path}: shape mismatch for {name}")
        p.data = arrays[name].astype(np.float64, copy=True)
    return model
