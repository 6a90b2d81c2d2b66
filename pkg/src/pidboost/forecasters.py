"""One-step base forecasters and the batch (SPNN-style) output corrector.

Every base forecaster maps the lag vectors built by
:func:`pidboost.series.build_features` to a single next-step value. They
are fitted with teacher forcing on the training split and then iterated by
the engine.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, FormatError, ModelError
from .series import LagWindowSpec, Series, lag_matrix

logger = logging.getLogger(__name__)

FORMAT_TAG = "pidboost-model"
FORMAT_VERSION = 1


@dataclass
class FitReport:
    final_loss: float
    epochs: int
    ridge_lambda: float | None = None
    note: str = ""


def _values(data: Series | np.ndarray | Sequence[float]) -> np.ndarray:
    if isinstance(data, Series):
        return np.asarray(data.values)
    return np.asarray(data, dtype=np.float64)


class BaseForecaster:
    """Interface shared by the one-step predictors.

    Subclasses set ``lag_spec`` in ``__init__`` and implement ``fit``,
    ``_predict_flat`` and the parameter accessors used for persistence.
    """

    name = "base"
    lag_spec: LagWindowSpec

    def __init__(self) -> None:
        self.fitted = False

    def fit(self, train, validation=None) -> FitReport:
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return len(self.get_params())

    def get_params(self) -> np.ndarray:
        raise NotImplementedError

    def predict_one(self, features: Sequence[np.ndarray]) -> float:
        """Predict the next value from one lag vector per lag set."""
        if not self.fitted:
            raise ModelError(f"{self.name} is not fitted")
        sets = self.lag_spec.lag_sets
        if len(features) != len(sets) or any(
            len(f) != len(s) for f, s in zip(features, sets)
        ):
            got = [len(f) for f in features]
            want = [len(s) for s in sets]
            raise ModelError(f"feature shape {got} does not match lag spec {want}")
        x = np.concatenate([np.asarray(f, dtype=np.float64) for f in features])
        return float(self._predict_flat(x))

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        """Vectorised one-step predictions for rows of flattened features."""
        return np.array([self._predict_flat(row) for row in X])

    def _predict_flat(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def _header(self) -> dict[str, str]:
        return {"lags": self.lag_spec.format()}


class SeasonalNaive(BaseForecaster):
    """Repeat the value observed one period earlier."""

    name = "SeasonalNaive"

    def __init__(self, period: int):
        super().__init__()
        if period < 2:
            raise ConfigError(f"period must be >= 2, got {period}")
        self.period = int(period)
        self.lag_spec = LagWindowSpec(((self.period,),))
        self.fitted = True

    def fit(self, train=None, validation=None) -> FitReport:
        self.fitted = True
        return FitReport(final_loss=float("nan"), epochs=0, note="no parameters")

    def get_params(self) -> np.ndarray:
        return np.empty(0)

    def _predict_flat(self, x: np.ndarray) -> float:
        return x[0]

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X[:, 0], dtype=np.float64)

    def _header(self) -> dict[str, str]:
        return {"period": str(self.period)}


class LinearAR(BaseForecaster):
    """Linear autoregression on arbitrary lag sets, fitted by least squares.

    The normal equations are solved directly. When they are singular (for
    example a constant series) a ridge term
    ``lam = 1e-8 * trace(X'X) / cols`` is added and reported.
    """

    name = "LinearAR"
    RIDGE_SCALE = 1e-8

    def __init__(self, lag_spec: LagWindowSpec):
        super().__init__()
        self.lag_spec = lag_spec
        self.coef = np.zeros(lag_spec.total)
        self.intercept = 0.0

    def fit(self, train, validation=None) -> FitReport:
        X, y = lag_matrix(_values(train), self.lag_spec)
        A = np.hstack([X, np.ones((len(X), 1))])
        gram = A.T @ A
        rhs = A.T @ y
        cols = gram.shape[0]
        lam = None
        if np.linalg.matrix_rank(gram) < cols:
            lam = self.RIDGE_SCALE * np.trace(gram) / cols
            logger.warning("singular normal equations, using ridge lambda=%.3g", lam)
            beta = np.linalg.solve(gram + lam * np.eye(cols), rhs)
        else:
            beta = np.linalg.solve(gram, rhs)
        if not np.isfinite(beta).all():
            raise ModelError("least-squares solution is not finite")
        self.coef = beta[:-1]
        self.intercept = float(beta[-1])
        self.fitted = True
        resid = y - A @ beta
        return FitReport(final_loss=float(np.mean(resid**2)), epochs=1, ridge_lambda=lam)

    def get_params(self) -> np.ndarray:
        return np.append(self.coef, self.intercept)

    def set_params(self, params: np.ndarray) -> None:
        params = np.asarray(params, dtype=np.float64)
        if len(params) != self.lag_spec.total + 1:
            raise ModelError(
                f"expected {self.lag_spec.total + 1} parameters, got {len(params)}"
            )
        self.coef = params[:-1].copy()
        self.intercept = float(params[-1])
        self.fitted = True

    def _predict_flat(self, x: np.ndarray) -> float:
        return float(x @ self.coef) + self.intercept

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coef + self.intercept


class _MinMax:
    """Scalar min-max scaling shared by all inputs and outputs of a net."""

    def __init__(self, lo: float = 0.0, hi: float = 1.0):
        self.lo = float(lo)
        self.hi = float(hi)

    @classmethod
    def from_data(cls, data: np.ndarray) -> "_MinMax":
        lo, hi = float(np.min(data)), float(np.max(data))
        if hi <= lo:
            hi = lo + 1.0
        return cls(lo, hi)

    def forward(self, x):
        return (x - self.lo) / (self.hi - self.lo)

    def inverse(self, x):
        return x * (self.hi - self.lo) + self.lo


class ShallowNet(BaseForecaster):
    """Single hidden layer tanh network with a linear output.

    Trained by full-batch gradient descent on mean squared error. A step
    that increases the training loss is rejected and the learning rate is
    halved, so accepted epochs never increase the loss. The parameters
    with the best validation loss are kept (early stopping).
    """

    name = "ShallowNet"

    def __init__(
        self,
        lag_spec: LagWindowSpec,
        hidden: int = 8,
        *,
        seed: int = 0,
        learning_rate: float = 0.5,
        max_epochs: int = 2000,
        patience: int = 100,
        scale: bool = True,
    ):
        super().__init__()
        if hidden < 1:
            raise ConfigError(f"hidden width must be >= 1, got {hidden}")
        self.lag_spec = lag_spec
        self.hidden = int(hidden)
        self.seed = seed
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.scale = scale
        self.scaler = _MinMax()
        rng = np.random.default_rng(seed)
        n_in = lag_spec.total
        self.params = np.concatenate(
            [
                rng.normal(0.0, 1.0 / np.sqrt(n_in), self.hidden * n_in),
                np.zeros(self.hidden),
                rng.normal(0.0, 1.0 / np.sqrt(self.hidden), self.hidden),
                np.zeros(1),
            ]
        )

    @property
    def n_inputs(self) -> int:
        return self.lag_spec.total

    def _unpack(self, params: np.ndarray):
        n_in, h = self.n_inputs, self.hidden
        W1 = params[: h * n_in].reshape(h, n_in)
        b1 = params[h * n_in : h * n_in + h]
        w2 = params[h * n_in + h : h * n_in + 2 * h]
        b2 = params[-1]
        return W1, b1, w2, b2

    def forward(self, params: np.ndarray, X: np.ndarray) -> np.ndarray:
        W1, b1, w2, b2 = self._unpack(params)
        return np.tanh(X @ W1.T + b1) @ w2 + b2

    def loss_and_grad(self, params: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean squared error and its exact gradient w.r.t. the flat parameters."""
        W1, b1, w2, b2 = self._unpack(params)
        hid = np.tanh(X @ W1.T + b1)
        resid = hid @ w2 + b2 - y
        loss = float(np.mean(resid**2))
        dy = 2.0 * resid / len(y)
        g_w2 = hid.T @ dy
        g_b2 = dy.sum()
        dz = np.outer(dy, w2) * (1.0 - hid**2)
        g_W1 = dz.T @ X
        g_b1 = dz.sum(axis=0)
        return loss, np.concatenate([g_W1.ravel(), g_b1, g_w2, [g_b2]])

    def fit(self, train, validation=None) -> FitReport:
        values = _values(train)
        X, y = lag_matrix(values, self.lag_spec)
        if validation is not None:
            joined = np.concatenate([values, _values(validation)])
            Xv, yv = lag_matrix(joined, self.lag_spec, start=len(values))
        else:
            cut = max(1, int(0.9 * len(X)))
            if cut >= len(X):
                raise ModelError("not enough rows for an early-stopping holdout")
            X, Xv, y, yv = X[:cut], X[cut:], y[:cut], y[cut:]
        self.scaler = _MinMax.from_data(values) if self.scale else _MinMax()
        X, y = self.scaler.forward(X), self.scaler.forward(y)
        Xv, yv = self.scaler.forward(Xv), self.scaler.forward(yv)

        params = self.params.copy()
        lr = self.learning_rate
        loss, grad = self.loss_and_grad(params, X, y)
        best_val = float(np.mean((self.forward(params, Xv) - yv) ** 2))
        best = params.copy()
        stale = 0
        epochs = 0
        history = [loss]
        while epochs < self.max_epochs and lr > 1e-12:
            trial = params - lr * grad
            trial_loss, trial_grad = self.loss_and_grad(trial, X, y)
            if not np.isfinite(trial_loss) or trial_loss > loss:
                lr *= 0.5
                continue
            params, loss, grad = trial, trial_loss, trial_grad
            history.append(loss)
            epochs += 1
            val = float(np.mean((self.forward(params, Xv) - yv) ** 2))
            if val < best_val:
                best_val, best, stale = val, params.copy(), 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        if not (np.isfinite(loss) and np.isfinite(best).all()):
            raise ModelError(f"training diverged after {epochs} epochs")
        self.params = best
        self.loss_history = history
        self.fitted = True
        return FitReport(final_loss=loss, epochs=epochs, note=f"best validation mse {best_val:.6g} (scaled)")

    def get_params(self) -> np.ndarray:
        return self.params.copy()

    def set_params(self, params: np.ndarray) -> None:
        params = np.asarray(params, dtype=np.float64)
        expected = (self.n_inputs + 1) * self.hidden + self.hidden + 1
        if len(params) != expected:
            raise ModelError(f"expected {expected} parameters, got {len(params)}")
        self.params = params.copy()
        self.fitted = True

    def _predict_flat(self, x: np.ndarray) -> float:
        out = self.forward(self.params, self.scaler.forward(x)[None, :])[0]
        return float(self.scaler.inverse(out))

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return self.scaler.inverse(self.forward(self.params, self.scaler.forward(X)))

    def _header(self) -> dict[str, str]:
        return {
            "lags": self.lag_spec.format(),
            "dims": f"{self.n_inputs} {self.hidden} 1",
            "scale": f"{self.scaler.lo!r} {self.scaler.hi!r}",
        }


class BatchCorrector:
    """Shallow net mapping a full round of raw predictions to corrected ones.

    ``n`` inputs, ``hidden`` tanh units, ``n`` linear outputs. Trained with
    L-BFGS on min-max scaled (raw, real) round pairs.
    """

    name = "BatchCorrector"

    def __init__(self, n: int = 96, hidden: int = 48, *, seed: int = 0, max_iter: int = 5000):
        if n < 1 or hidden < 1:
            raise ConfigError("corrector widths must be positive")
        self.n = int(n)
        self.hidden = int(hidden)
        self.max_iter = max_iter
        self.scaler = _MinMax()
        rng = np.random.default_rng(seed)
        self.params = np.concatenate(
            [
                rng.normal(0.0, 1.0 / np.sqrt(n), hidden * n),
                np.zeros(hidden),
                rng.normal(0.0, 1.0 / np.sqrt(hidden), n * hidden),
                np.zeros(n),
            ]
        )
        self.fitted = False

    @property
    def n_params(self) -> int:
        return (self.n + 1) * self.hidden + (self.hidden + 1) * self.n

    def _unpack(self, params):
        n, h = self.n, self.hidden
        i = 0
        W1 = params[i : i + h * n].reshape(h, n)
        i += h * n
        b1 = params[i : i + h]
        i += h
        W2 = params[i : i + n * h].reshape(n, h)
        i += n * h
        return W1, b1, W2, params[i:]

    def _loss_and_grad(self, params, X, Y):
        W1, b1, W2, b2 = self._unpack(params)
        hid = np.tanh(X @ W1.T + b1)
        resid = hid @ W2.T + b2 - Y
        m = resid.size
        loss = float(np.sum(resid**2) / m)
        dY = 2.0 * resid / m
        g_W2 = dY.T @ hid
        g_b2 = dY.sum(axis=0)
        dz = (dY @ W2) * (1.0 - hid**2)
        g_W1 = dz.T @ X
        g_b1 = dz.sum(axis=0)
        return loss, np.concatenate([g_W1.ravel(), g_b1, g_W2.ravel(), g_b2])

    def fit(self, raw: np.ndarray, real: np.ndarray) -> FitReport:
        raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
        real = np.atleast_2d(np.asarray(real, dtype=np.float64))
        if raw.shape != real.shape or raw.shape[1] != self.n:
            raise ModelError(f"training pairs must have shape (m, {self.n})")
        self.scaler = _MinMax.from_data(np.concatenate([raw.ravel(), real.ravel()]))
        X, Y = self.scaler.forward(raw), self.scaler.forward(real)
        res = minimize(
            self._loss_and_grad,
            self.params,
            args=(X, Y),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": self.max_iter, "ftol": 1e-16, "gtol": 1e-12},
        )
        if not np.isfinite(res.x).all():
            raise ModelError("corrector training diverged")
        self.params = res.x
        self.fitted = True
        return FitReport(final_loss=float(res.fun), epochs=int(res.nit), note=str(res.message))

    def get_params(self) -> np.ndarray:
        return self.params.copy()

    def set_params(self, params) -> None:
        params = np.asarray(params, dtype=np.float64)
        if len(params) != self.n_params:
            raise ModelError(f"expected {self.n_params} parameters, got {len(params)}")
        self.params = params.copy()
        self.fitted = True

    def correct_batch(self, raw: Sequence[float]) -> np.ndarray:
        """Corrected round for a full vector of ``n`` raw predictions."""
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape != (self.n,):
            raise ModelError(f"expected {self.n} raw predictions, got shape {raw.shape}")
        W1, b1, W2, b2 = self._unpack(self.params)
        hid = np.tanh(W1 @ self.scaler.forward(raw) + b1)
        return self.scaler.inverse(W2 @ hid + b2)

    def _header(self) -> dict[str, str]:
        return {
            "dims": f"{self.n} {self.hidden} {self.n}",
            "scale": f"{self.scaler.lo!r} {self.scaler.hi!r}",
        }


def save_model(model, path: str | Path) -> None:
    """Write a fitted model as versioned flat text (17 significant digits)."""
    params = model.get_params()
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION}", f"name {model.name}"]
    lines += [f"{k} {v}" for k, v in model._header().items()]
    lines.append(f"params {len(params)}")
    lines += [f"{p:.17g}" for p in params]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path):
    """Inverse of :func:`save_model`."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"{FORMAT_TAG} {FORMAT_VERSION}":
        raise FormatError(f"{path}: not a {FORMAT_TAG} v{FORMAT_VERSION} file")
    header: dict[str, str] = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("params "):
        key, _, value = lines[i].partition(" ")
        header[key] = value
        i += 1
    if i == len(lines):
        raise FormatError(f"{path}: missing params block")
    count = int(lines[i].split()[1])
    try:
        params = np.array([float(v) for v in lines[i + 1 : i + 1 + count]])
    except ValueError as exc:
        raise FormatError(f"{path}: bad parameter value ({exc})") from None
    if len(params) != count:
        raise FormatError(f"{path}: expected {count} parameters, found {len(params)}")

    name = header.get("name")
    if name == SeasonalNaive.name:
        return SeasonalNaive(int(header["period"]))
    if name == LinearAR.name:
        model = LinearAR(LagWindowSpec.parse(header["lags"]))
        model.set_params(params)
        return model
    if name == ShallowNet.name:
        _, hidden, _ = (int(x) for x in header["dims"].split())
        lo, hi = (float(x) for x in header["scale"].split())
        model = ShallowNet(LagWindowSpec.parse(header["lags"]), hidden)
        model.scaler = _MinMax(lo, hi)
        model.set_params(params)
        return model
    if name == BatchCorrector.name:
        n, hidden, _ = (int(x) for x in header["dims"].split())
        lo, hi = (float(x) for x in header["scale"].split())
        model = BatchCorrector(n, hidden)
        model.scaler = _MinMax(lo, hi)
        model.set_params(params)
        return model
    raise FormatError(f"{path}: unknown model name {name!r}")
