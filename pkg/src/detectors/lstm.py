"""
LSTM next-value predictor over one feature series, trained with
backpropagation through time, and its prediction-error detector.

Gate equations per cell, with z = [h_prev, x_t]:

    f = sigmoid(W_f z + b_f)    i = sigmoid(W_i z + b_i)
    g = tanh(W_C z + b_C)       o = sigmoid(W_o z + b_o)
    C = f * C_prev + i * g      h = o * tanh(C)

Everything runs in float64 numpy so gradients can be checked against
finite differences.
"""

import copy
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit

from ..errors import SizeError, ThresholdError, TrainingError, ValidationError
from ..evaluation import DetectionReport, build_report

logger = logging.getLogger(__name__)

GATES = ('f', 'i', 'C', 'o')
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class LstmCellParams:
    W_f: np.ndarray
    W_i: np.ndarray
    W_C: np.ndarray
    W_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_C: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        for gate in GATES:
            setattr(self, f'W_{gate}', np.array(getattr(self, f'W_{gate}'), dtype=float, ndmin=2))
            setattr(self, f'b_{gate}', np.array(getattr(self, f'b_{gate}'), dtype=float).reshape(-1))
        shape = self.W_f.shape
        hidden = shape[0]
        if shape[1] <= hidden:
            raise ValidationError(f"weight shape {shape} leaves no input columns")
        for gate in GATES:
            if getattr(self, f'W_{gate}').shape != shape:
                raise ValidationError(f"W_{gate} has shape {getattr(self, f'W_{gate}').shape}, expected {shape}")
            if getattr(self, f'b_{gate}').shape != (hidden,):
                raise ValidationError(f"b_{gate} must have length {hidden}")

    @property
    def hidden_size(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_f.shape[1] - self.W_f.shape[0]

    @classmethod
    def initialize(cls, hidden_size: int, input_size: int, rng: np.random.Generator) -> 'LstmCellParams':
        """Uniform in +-1/sqrt(fan_in), fan_in = hidden + input."""
        limit = 1.0 / np.sqrt(hidden_size + input_size)
        shape = (hidden_size, hidden_size + input_size)
        weights = {f'W_{g}': rng.uniform(-limit, limit, shape) for g in GATES}
        biases = {f'b_{g}': rng.uniform(-limit, limit, hidden_size) for g in GATES}
        return cls(**weights, **biases)

    @classmethod
    def zeros(cls, hidden_size: int, input_size: int) -> 'LstmCellParams':
        shape = (hidden_size, hidden_size + input_size)
        return cls(**{f'W_{g}': np.zeros(shape) for g in GATES},
                   **{f'b_{g}': np.zeros(hidden_size) for g in GATES})

    def arrays(self) -> List[np.ndarray]:
        return [getattr(self, f'W_{g}') for g in GATES] + [getattr(self, f'b_{g}') for g in GATES]

    def stacked(self) -> Tuple[np.ndarray, np.ndarray]:
        """Gate weights stacked row-wise in f, i, C, o order."""
        return (np.concatenate([getattr(self, f'W_{g}') for g in GATES], axis=0),
                np.concatenate([getattr(self, f'b_{g}') for g in GATES]))

    def to_dict(self) -> Dict[str, Any]:
        return {name: arr.tolist() for name, arr in zip(
            [f'W_{g}' for g in GATES] + [f'b_{g}' for g in GATES], self.arrays())}


def cell_forward(params: LstmCellParams, x_t: Sequence[float], h_prev: Sequence[float],
                 C_prev: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """One LSTM step; returns (h_t, C_t)."""
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    h_prev = np.asarray(h_prev, dtype=float)
    C_prev = np.asarray(C_prev, dtype=float)
    hidden = params.hidden_size
    if x_t.shape != (params.input_size,) or h_prev.shape != (hidden,) or C_prev.shape != (hidden,):
        raise ValidationError(
            f"cell expects x ({params.input_size},), h and C ({hidden},); "
            f"got {x_t.shape}, {h_prev.shape}, {C_prev.shape}")
    z = np.concatenate((h_prev, x_t))
    f = expit(params.W_f @ z + params.b_f)
    i = expit(params.W_i @ z + params.b_i)
    g = np.tanh(params.W_C @ z + params.b_C)
    o = expit(params.W_o @ z + params.b_o)
    C = f * C_prev + i * g
    return o * np.tanh(C), C


@dataclass
class TrainConfig:
    iterations: int = 20_000
    learning_rate: float = 1e-3
    batch_size: int = 50
    rng_seed: int = 0
    gradient_clip: float = 5.0

    def __post_init__(self):
        for name in ('iterations', 'learning_rate', 'batch_size', 'gradient_clip'):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass
class LstmNetwork:
    layers: List[LstmCellParams]
    head_w: np.ndarray
    head_b: np.ndarray
    seq_len: int
    norm_mean: float = 0.0
    norm_std: float = 1.0
    train_info: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.head_w = np.asarray(self.head_w, dtype=float).reshape(-1)
        self.head_b = np.asarray(self.head_b, dtype=float).reshape(1)
        if not self.layers:
            raise ValidationError("network needs at least one layer")
        if self.seq_len < 1:
            raise ValidationError(f"seq_len must be >= 1, got {self.seq_len}")
        if self.layers[0].input_size != 1:
            raise ValidationError("first layer must take one input feature")
        for below, above in zip(self.layers, self.layers[1:]):
            if above.input_size != below.hidden_size:
                raise ValidationError(
                    f"layer input size {above.input_size} does not match hidden size {below.hidden_size} below it")
        if self.head_w.shape != (self.hidden_size,):
            raise ValidationError(f"output head must have {self.hidden_size} weights")
        if not self.norm_std > 0:
            raise ValidationError(f"norm std must be > 0, got {self.norm_std}")

    @property
    def hidden_size(self) -> int:
        return self.layers[-1].hidden_size

    @classmethod
    def create(cls, hidden_size: int, seq_len: int, n_layers: int = 1, seed: int = 0) -> 'LstmNetwork':
        rng = np.random.Generator(np.random.PCG64(seed))
        layers = [LstmCellParams.initialize(hidden_size, 1 if k == 0 else hidden_size, rng)
                  for k in range(n_layers)]
        limit = 1.0 / np.sqrt(hidden_size)
        return cls(layers, rng.uniform(-limit, limit, hidden_size), rng.uniform(-limit, limit, 1), seq_len)

    def parameters(self) -> List[np.ndarray]:
        """Trainable arrays in a fixed order; updated in place by training."""
        params = []
        for layer in self.layers:
            params.extend(layer.arrays())
        return params + [self.head_w, self.head_b]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'hidden_size': self.hidden_size,
            'seq_len': self.seq_len,
            'layers': [layer.to_dict() for layer in self.layers],
            'output_head': {'w': self.head_w.tolist(), 'b': float(self.head_b[0])},
            'norm': {'mean': float(self.norm_mean), 'std': float(self.norm_std)},
            'train': self.train_info,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + '\n'

    @classmethod
    def from_json(cls, text: str) -> 'LstmNetwork':
        try:
            data = json.loads(text)
            net = cls(
                layers=[LstmCellParams(**layer) for layer in data['layers']],
                head_w=data['output_head']['w'],
                head_b=data['output_head']['b'],
                seq_len=int(data['seq_len']),
                norm_mean=float(data['norm']['mean']),
                norm_std=float(data['norm']['std']),
                train_info=data.get('train', {}),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ValidationError(f"malformed LSTM network file: {e}")
        if net.hidden_size != data['hidden_size']:
            raise ValidationError("hidden_size does not match the layer shapes")
        return net


def forward_predict(net: LstmNetwork, window: Sequence[float]) -> float:
    """Next value after `window` (feature units, length seq_len)."""
    w = np.asarray(window, dtype=float).reshape(-1)
    if w.shape[0] != net.seq_len:
        raise SizeError(f"window must hold seq_len={net.seq_len} values, got {w.shape[0]}")
    inputs = ((w - net.norm_mean) / net.norm_std)[:, None]
    for layer in net.layers:
        h = np.zeros(layer.hidden_size)
        C = np.zeros(layer.hidden_size)
        outputs = []
        for x_t in inputs:
            h, C = cell_forward(layer, x_t, h, C)
            outputs.append(h)
        inputs = np.stack(outputs)
    y = float(h @ net.head_w + net.head_b[0])
    return y * net.norm_std + net.norm_mean


def _forward_batch(net: LstmNetwork, X: np.ndarray):
    """Batched forward pass over normalized windows X (batch, seq_len) with BPTT caches."""
    inputs = X[:, :, None]
    caches = []
    for layer in net.layers:
        W, b = layer.stacked()
        H = layer.hidden_size
        batch, steps = inputs.shape[0], inputs.shape[1]
        h = np.zeros((batch, H))
        c = np.zeros((batch, H))
        outputs = np.empty((batch, steps, H))
        steps_cache = []
        for t in range(steps):
            z = np.concatenate((h, inputs[:, t, :]), axis=1)
            a = z @ W.T + b
            f = expit(a[:, :H])
            i = expit(a[:, H:2 * H])
            g = np.tanh(a[:, 2 * H:3 * H])
            o = expit(a[:, 3 * H:])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h = o * tc
            steps_cache.append((z, f, i, g, o, c, tc))
            c = c_new
            outputs[:, t, :] = h
        caches.append((W, steps_cache))
        inputs = outputs
    last_h = inputs[:, -1, :]
    return last_h @ net.head_w + net.head_b[0], last_h, caches


def loss_and_gradients(net: LstmNetwork, X: np.ndarray, Y: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    """
    Mean squared one-step error on normalized windows and its BPTT gradient.

    Args:
        net: Network
        X: Normalized input windows, shape (batch, seq_len)
        Y: Normalized next values, shape (batch,)

    Returns:
        (loss, gradients aligned with net.parameters())
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    pred, last_h, caches = _forward_batch(net, X)
    diff = pred - Y
    loss = float(np.mean(diff ** 2))

    dy = 2.0 * diff / Y.shape[0]
    grad_head_w = last_h.T @ dy
    grad_head_b = np.array([dy.sum()])

    d_outputs = np.zeros(X.shape + (net.hidden_size,))
    d_outputs[:, -1, :] = np.outer(dy, net.head_w)
    layer_grads = []
    for layer, (W, steps_cache) in zip(reversed(net.layers), reversed(caches)):
        H = layer.hidden_size
        dW = np.zeros_like(W)
        db = np.zeros(W.shape[0])
        dh_next = np.zeros((X.shape[0], H))
        dc_next = np.zeros((X.shape[0], H))
        d_inputs = np.zeros((X.shape[0], X.shape[1], layer.input_size))
        for t in reversed(range(X.shape[1])):
            z, f, i, g, o, c_prev, tc = steps_cache[t]
            dh = d_outputs[:, t, :] + dh_next
            dc = dh * o * (1.0 - tc ** 2) + dc_next
            da = np.concatenate((
                dc * c_prev * f * (1.0 - f),
                dc * g * i * (1.0 - i),
                dc * i * (1.0 - g ** 2),
                dh * tc * o * (1.0 - o),
            ), axis=1)
            dW += da.T @ z
            db += da.sum(axis=0)
            dz = da @ W
            dh_next = dz[:, :H]
            dc_next = dc * f
            d_inputs[:, t, :] = dz[:, H:]
        layer_grads.append(np.split(dW, 4, axis=0) + np.split(db, 4))
        d_outputs = d_inputs

    grads = []
    for per_layer in reversed(layer_grads):
        grads.extend(per_layer)
    return loss, grads + [grad_head_w, grad_head_b]


def _clip(grads: List[np.ndarray], max_norm: float) -> List[np.ndarray]:
    norm = np.sqrt(sum(float(np.sum(g ** 2)) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads]
    return grads


def train(net: LstmNetwork, series: Sequence[float], config: Optional[TrainConfig] = None,
          valid: Optional[Sequence[bool]] = None) -> Tuple[LstmNetwork, np.ndarray]:
    """
    Fit the network to predict each value from the seq_len values before it.

    Batches of windows are drawn uniformly with the seeded generator and
    parameters follow Adam on the clipped BPTT gradient. Normalization
    statistics come from the training series.

    Args:
        net: Initial network; left unchanged
        series: Clean training series
        config: Training settings
        valid: Per-second mask; only windows whose seq_len + 1 points are all valid are sampled

    Returns:
        (trained copy of net, per-iteration loss trace)
    """
    config = config or TrainConfig()
    x = np.asarray(series, dtype=float)
    L = net.seq_len
    if x.shape[0] <= L + 1:
        raise SizeError(f"training series of length {x.shape[0]} needs more than seq_len + 1 = {L + 1} points")

    starts = np.arange(x.shape[0] - L)
    if valid is not None:
        ok = np.asarray(valid, dtype=bool)
        if ok.shape != x.shape:
            raise ValidationError("validity mask must match the series length")
        # window [s, s + L] is usable only if every point in it is valid
        bad = np.convolve((~ok).astype(int), np.ones(L + 1, dtype=int), mode='valid') > 0
        starts = starts[~bad]
    if starts.size == 0:
        raise SizeError("no complete training window is free of excluded seconds")

    net = copy.deepcopy(net)
    net.norm_mean = float(x.mean())
    std = float(x.std())
    net.norm_std = std if std > 1e-12 else 1.0
    xn = (x - net.norm_mean) / net.norm_std

    rng = np.random.Generator(np.random.PCG64(config.rng_seed))
    params = net.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    offsets = np.arange(L)
    trace = np.empty(config.iterations)
    for it in range(1, config.iterations + 1):
        batch = rng.choice(starts, size=config.batch_size, replace=True)
        X = xn[batch[:, None] + offsets]
        Y = xn[batch + L]
        loss, grads = loss_and_gradients(net, X, Y)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite training loss {loss}", it)
        grads = _clip(grads, config.gradient_clip)

        step = config.learning_rate * np.sqrt(1 - ADAM_BETA2 ** it) / (1 - ADAM_BETA1 ** it)
        for p, g, m_k, v_k in zip(params, grads, m, v):
            m_k *= ADAM_BETA1
            m_k += (1 - ADAM_BETA1) * g
            v_k *= ADAM_BETA2
            v_k += (1 - ADAM_BETA2) * g ** 2
            p -= step * m_k / (np.sqrt(v_k) + ADAM_EPS)
        trace[it - 1] = loss
        if it % 500 == 0:
            logger.debug("LSTM iter %d: loss %.6g", it, loss)

    net.train_info = {'seed': config.rng_seed, 'iterations': config.iterations,
                      'lr': config.learning_rate, 'batch': config.batch_size}
    logger.info("Trained LSTM (hidden %d, %d layers, seq %d): loss %.4g -> %.4g",
                net.hidden_size, len(net.layers), L, trace[0], trace[-1])
    return net, trace


@dataclass
class ErrorTrace:
    actual: np.ndarray
    predicted: np.ndarray
    errors: np.ndarray
    flagged: np.ndarray

    @property
    def evaluable(self) -> np.ndarray:
        return ~np.isnan(self.errors)


DetectionRule = Union[None, float, Callable[[int, float], bool]]


def prediction_errors(net: LstmNetwork, series: Sequence[float], rule: DetectionRule = None) -> ErrorTrace:
    """
    Absolute one-step prediction errors, walking forward in time.

    When `rule` flags second t (a callable of (t, error), or a threshold T
    meaning error >= T) the actual value in the working history is replaced
    by the prediction before moving on. Errors of the first seq_len seconds
    are NaN.
    """
    x = np.asarray(series, dtype=float)
    L = net.seq_len
    n = x.shape[0]
    if n <= L:
        raise SizeError(f"series of length {n} needs more than seq_len = {L} points")

    work = x.copy()
    predicted = np.full(n, np.nan)
    errors = np.full(n, np.nan)
    flagged = np.zeros(n, dtype=bool)
    for t in range(L, n):
        pred = forward_predict(net, work[t - L:t])
        e = abs(pred - x[t])
        predicted[t] = pred
        errors[t] = e
        if rule is None:
            hit = False
        elif callable(rule):
            hit = bool(rule(t, e))
        else:
            hit = e >= rule
        if hit:
            flagged[t] = True
            work[t] = pred
    return ErrorTrace(x, predicted, errors, flagged)


def _split_errors(errors: Sequence[float], labels: Sequence[bool]) -> Tuple[np.ndarray, np.ndarray]:
    e = np.asarray(errors, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    if e.shape != lab.shape:
        raise ValidationError("errors and labels must have the same length")
    defined = ~np.isnan(e)
    return e[defined & lab], e[defined & ~lab]


def threshold_ma(errors: Sequence[float], labels: Sequence[bool]) -> float:
    """Largest T with every malicious second at error >= T."""
    malicious, _ = _split_errors(errors, labels)
    if malicious.size == 0:
        raise ThresholdError("MA threshold needs at least one malicious second with a defined error")
    return float(malicious.min())


def threshold_nm(errors: Sequence[float], labels: Sequence[bool]) -> float:
    """Smallest T leaving every non-malicious second below it."""
    _, benign = _split_errors(errors, labels)
    if benign.size == 0:
        raise ThresholdError("NM threshold needs at least one non-malicious second with a defined error")
    return float(np.nextafter(benign.max(), np.inf))


def detect(net: LstmNetwork, series: Sequence[float], labels: Optional[Sequence[bool]] = None,
           threshold_kind: str = 'ma', threshold: Optional[float] = None, feature: str = '',
           attacks: Optional[Sequence[Tuple[float, float]]] = None) -> DetectionReport:
    """
    Flag seconds whose one-step prediction error reaches the threshold.

    With an explicit threshold, each flagged value is replaced by its
    prediction as the walk goes on. A derived threshold instead comes from
    the walk that replaces the labeled seconds, and the flags are read off
    that same error trace: MA then flags every labeled second and NM no
    unlabeled one.
    """
    if threshold is None:
        if labels is None:
            raise ThresholdError("deriving an LSTM threshold needs labels; pass an explicit threshold")
        if threshold_kind not in ('ma', 'nm'):
            raise ValidationError(f"Unknown LSTM threshold: {threshold_kind}. Supported: ma, nm")
        truth = np.asarray(labels, dtype=bool)
        if truth.shape != np.shape(series):
            raise ValidationError("labels and series must have the same length")
        result = prediction_errors(net, series, rule=lambda t, e: bool(truth[t]))
        pick = threshold_ma if threshold_kind == 'ma' else threshold_nm
        threshold = pick(result.errors, truth)
        result.flagged = result.evaluable & (np.nan_to_num(result.errors, nan=-np.inf) >= threshold)
    else:
        result = prediction_errors(net, series, rule=threshold)
    n = result.actual.shape[0]
    trace = pd.DataFrame({
        'second': np.arange(n, dtype=np.int64),
        'actual': result.actual,
        'predicted': result.predicted,
        'abs_error': result.errors,
        'flagged': result.flagged.astype(np.int64),
    })
    thresholds = {'threshold': float(threshold), 'kind': threshold_kind}
    return build_report('lstm', feature, np.flatnonzero(result.flagged), labels, result.evaluable,
                        thresholds, attacks, trace=trace)
