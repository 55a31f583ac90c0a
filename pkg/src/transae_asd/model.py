"""ID-constrained Transformer autoencoder with linear phase embedding.

Data flow for a batch of windows (``B`` windows, ``T = N - 1`` context frames)::

    phase (B, T, 513) -> F: Linear -> BN -> Linear -> BN -> (B, T, d)
    x (B, T, M) + F(phase) -> encoder stack -> z (B, T, d)
    z -> decoder stack -> x_bar (B, T, d) -> mean over T -> W_o, b_o -> (B, M)
    z -> max over T -> Linear -> ReLU -> Linear -> softmax -> (B, K)
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numgrad as ng
from .dsp import ConfigError
from .numgrad import BatchNormState, Tensor


class ModelConfigError(ConfigError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_ids: int
    d_model: int = 128
    n_heads: int = 4
    ff_dim: int = 256
    enc_layers: int = 2
    dec_layers: int = 2
    n_mels: int = 128
    phase_dim: int = 513
    context_len: int = 4
    alpha: float = 0.3
    classifier_hidden: int = 64
    use_lpe: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ModelConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_model != self.n_mels:
            raise ModelConfigError(
                f"log-Mel frames are added to the phase embedding directly, so d_model "
                f"({self.d_model}) must equal n_mels ({self.n_mels})"
            )
        if not 0.0 <= self.alpha < 1.0:
            raise ModelConfigError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.num_ids < 2:
            raise ModelConfigError(f"the ID classifier needs at least 2 ids, got {self.num_ids}")


CLASSIFIER_PREFIX = "classifier."


class IDCTransAE:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.training = False
        self.params: dict[str, Tensor] = {}
        self.bn: dict[str, BatchNormState] = {}
        rng = np.random.default_rng(seed)
        c = config

        if c.use_lpe:
            self._linear(rng, "lpe.fc1", c.phase_dim, c.d_model)
            self._norm("lpe.bn1", c.d_model, batch=True)
            self._linear(rng, "lpe.fc2", c.d_model, c.d_model)
            self._norm("lpe.bn2", c.d_model, batch=True)
        for stack, depth in (("encoder", c.enc_layers), ("decoder", c.dec_layers)):
            for i in range(depth):
                p = f"{stack}.{i}."
                for proj in ("q", "k", "v", "o"):
                    self._linear(rng, p + "attn." + proj, c.d_model, c.d_model)
                self._norm(p + "ln1", c.d_model)
                self._linear(rng, p + "ff1", c.d_model, c.ff_dim)
                self._linear(rng, p + "ff2", c.ff_dim, c.d_model)
                self._norm(p + "ln2", c.d_model)
        self._linear(rng, "head", c.d_model, c.n_mels)
        self._linear(rng, CLASSIFIER_PREFIX + "fc1", c.d_model, c.classifier_hidden)
        self._linear(rng, CLASSIFIER_PREFIX + "fc2", c.classifier_hidden, c.num_ids)

    def _linear(self, rng, name: str, fan_in: int, fan_out: int) -> None:
        self.params[name + ".weight"] = ng.glorot_uniform(rng, fan_in, fan_out, name + ".weight")
        self.params[name + ".bias"] = ng.parameter(np.zeros(fan_out), name + ".bias")

    def _norm(self, name: str, dim: int, batch: bool = False) -> None:
        self.params[name + ".gain"] = ng.parameter(np.ones(dim), name + ".gain")
        self.params[name + ".bias"] = ng.parameter(np.zeros(dim), name + ".bias")
        if batch:
            self.bn[name] = BatchNormState(dim)

    # -- building blocks -------------------------------------------------

    def _fc(self, x: Tensor, name: str) -> Tensor:
        return ng.linear(x, self.params[name + ".weight"], self.params[name + ".bias"])

    def _ln(self, x: Tensor, name: str) -> Tensor:
        return ng.layer_norm(x, self.params[name + ".gain"], self.params[name + ".bias"])

    def _bn(self, x: Tensor, name: str) -> Tensor:
        return ng.batch_norm(
            x, self.params[name + ".gain"], self.params[name + ".bias"], self.bn[name], self.training
        )

    def _attention(self, x: Tensor, prefix: str) -> Tensor:
        b, t, d = x.shape
        h = self.config.n_heads
        dh = d // h

        def heads(name):
            y = ng.reshape(self._fc(x, prefix + name), (b, t, h, dh))
            return ng.transpose(y, (0, 2, 1, 3))

        q, k, v = heads("q"), heads("k"), heads("v")
        scores = ng.scale(ng.matmul(q, ng.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        ctx = ng.matmul(ng.softmax(scores), v)
        ctx = ng.reshape(ng.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
        return self._fc(ctx, prefix + "o")

    def _layer(self, x: Tensor, prefix: str) -> Tensor:
        # post-norm: sublayer, residual, layer norm
        x = self._ln(ng.add(x, self._attention(x, prefix + "attn.")), prefix + "ln1")
        ff = self._fc(ng.relu(self._fc(x, prefix + "ff1")), prefix + "ff2")
        return self._ln(ng.add(x, ff), prefix + "ln2")

    # -- model ops -------------------------------------------------------

    def lpe_embed(self, phase: Tensor) -> Tensor:
        y = self._bn(self._fc(phase, "lpe.fc1"), "lpe.bn1")
        return self._bn(self._fc(y, "lpe.fc2"), "lpe.bn2")

    def encode(self, x: Tensor, phase: Tensor | None = None) -> Tensor:
        x = ng.Tensor(x) if not isinstance(x, Tensor) else x
        if self.config.use_lpe:
            phase = ng.Tensor(phase) if not isinstance(phase, Tensor) else phase
            x = ng.add(x, self.lpe_embed(phase))
        for i in range(self.config.enc_layers):
            x = self._layer(x, f"encoder.{i}.")
        return x

    def decode(self, z: Tensor) -> Tensor:
        for i in range(self.config.dec_layers):
            z = self._layer(z, f"decoder.{i}.")
        return z

    def predict_center(self, x_bar: Tensor) -> Tensor:
        return self._fc(ng.mean_pool(x_bar, axis=-2), "head")

    def classify(self, z: Tensor) -> Tensor:
        h = ng.relu(self._fc(ng.max_pool(z, axis=-2), CLASSIFIER_PREFIX + "fc1"))
        return ng.softmax(self._fc(h, CLASSIFIER_PREFIX + "fc2"))

    def forward(self, x, phase, with_classifier: bool = True) -> tuple[Tensor, Tensor | None]:
        """Return ``(predicted centre frames, id probabilities or None)``."""
        z = self.encode(x, phase)
        pred = self.predict_center(self.decode(z))
        probs = self.classify(z) if with_classifier else None
        return pred, probs

    # -- parameter groups ------------------------------------------------

    def classifier_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith(CLASSIFIER_PREFIX)}

    def autoencoder_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if not k.startswith(CLASSIFIER_PREFIX)}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def train(self) -> "IDCTransAE":
        self.training = True
        return self

    def eval(self) -> "IDCTransAE":
        self.training = False
        return self

    # -- persistence -----------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.values.copy() for k, v in self.params.items()}
        for name, s in self.bn.items():
            state[name + ".running_mean"] = s.running_mean.copy()
            state[name + ".running_var"] = s.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.state_dict())
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ValueError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {state[k].shape} vs model {p.shape}")
            p.values = np.array(state[k], dtype=np.float64)
            p.grad = np.zeros_like(p.values)
        for name, s in self.bn.items():
            s.running_mean = np.array(state[name + ".running_mean"], dtype=np.float64)
            s.running_var = np.array(state[name + ".running_var"], dtype=np.float64)


def loss_reconstruction(pred: Tensor, target) -> Tensor:
    """Batch mean of the squared L2 distance between predicted and true centre frames."""
    return ng.mse_loss(pred, target, per_sample="sum")


def loss_classification(onehot, probs: Tensor) -> Tensor:
    return ng.cross_entropy_loss(probs, onehot)


def loss_total(loss_r: Tensor, loss_c: Tensor, alpha: float) -> Tensor:
    if not 0.0 <= alpha < 1.0:
        raise ModelConfigError(f"alpha must lie in [0, 1), got {alpha}")
    return ng.add(ng.scale(loss_r, 1.0 - alpha), ng.scale(loss_c, alpha))


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def write_sidecar(path: str | Path, config: ModelConfig, vocab: dict[str, int]) -> None:
    doc = {"model_config": asdict(config), "id_vocab": vocab}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_sidecar(path: str | Path) -> tuple[ModelConfig, dict[str, int]]:
    doc = json.loads(Path(path).read_text())
    return ModelConfig(**doc["model_config"]), {k: int(v) for k, v in doc["id_vocab"].items()}
