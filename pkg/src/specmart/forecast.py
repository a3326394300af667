"""One-step-ahead demand forecasting over rolling history windows.

Three interchangeable forecasters share the same interface: persistence
(last value), seasonal naive (value one season back), and a small dense
net trained on lookback windows. The default lookback is 72 steps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .neural import Adam, DenseNet
from .traffic import TrafficSeries

FORECASTER_KINDS = ("persistence", "seasonal_naive", "window_mlp")


@dataclass
class ForecasterConfig:
    kind: str = "seasonal_naive"
    lookback: int = 72
    season_period: int | None = None  # None: resolved to one day of steps at fit time
    mlp_hidden: int = 32
    train_fraction: float = 0.7
    mlp_epochs: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.kind not in FORECASTER_KINDS:
            raise ValueError(f"unknown forecaster kind {self.kind!r}")
        if self.lookback < 1:
            raise ValueError("lookback must be at least 1")
        if self.season_period is not None and self.season_period < 1:
            raise ValueError("season_period must be at least 1")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")


@dataclass
class ForecastResult:
    target_index: int
    predicted: float
    actual: float = float("nan")
    abs_error: float = float("nan")


class Forecaster:
    """Common interface: predict the next value from a trailing window."""

    kind: str

    def __init__(self, config: ForecasterConfig):
        self.config = config

    @property
    def window_size(self) -> int:
        return self.config.lookback

    def predict_next(self, window) -> float:
        raise NotImplementedError


class PersistenceForecaster(Forecaster):
    kind = "persistence"

    def predict_next(self, window) -> float:
        window = np.asarray(window, dtype=float)
        if window.size < 1:
            raise ValueError("window must contain at least one value")
        return max(0.0, float(window[-1]))


class SeasonalNaiveForecaster(Forecaster):
    kind = "seasonal_naive"

    def __init__(self, config: ForecasterConfig, season_period: int):
        super().__init__(config)
        self.season_period = season_period

    @property
    def window_size(self) -> int:
        # one season of history suffices regardless of the lookback default
        return self.season_period

    def predict_next(self, window) -> float:
        window = np.asarray(window, dtype=float)
        if window.size < self.season_period:
            raise ValueError(
                f"window of {window.size} is shorter than season {self.season_period}")
        return max(0.0, float(window[window.size - self.season_period]))


class WindowMlpForecaster(Forecaster):
    """Dense net mapping a normalized lookback window to the next value."""

    kind = "window_mlp"

    def __init__(self, config: ForecasterConfig, net: DenseNet, scale: float,
                 training_loss: list[float]):
        super().__init__(config)
        self.net = net
        self.scale = scale  # training-set mean, used to normalize in and out
        self.training_loss = training_loss

    def predict_next(self, window) -> float:
        window = np.asarray(window, dtype=float)
        if window.size != self.config.lookback:
            raise ValueError(
                f"window of {window.size} values, expected {self.config.lookback}")
        out = self.net.forward(window / self.scale)
        return max(0.0, float(out[0]) * self.scale)


def _fit_window_mlp(config: ForecasterConfig, values: np.ndarray) -> WindowMlpForecaster:
    lookback = config.lookback
    n_train = int(np.floor(values.size * config.train_fraction))
    if n_train <= lookback:
        raise ValueError("insufficient history for window_mlp training split")

    windows = np.stack([values[t - lookback:t] for t in range(lookback, n_train)])
    targets = values[lookback:n_train]
    scale = float(np.mean(values[:n_train]))
    if scale <= 0:
        scale = 1.0
    x = windows / scale
    y = targets / scale

    rng = np.random.default_rng(config.seed)
    net = DenseNet([lookback, config.mlp_hidden, 1], seed=config.seed)
    adam = Adam()
    batch = min(32, x.shape[0])
    losses: list[float] = []
    for _ in range(config.mlp_epochs):
        order = rng.permutation(x.shape[0])
        epoch_loss = 0.0
        for start in range(0, order.size, batch):
            idx = order[start:start + batch]
            pred = net.forward(x[idx])[:, 0]
            diff = pred - y[idx]
            epoch_loss += float(np.sum(diff * diff))
            grad_out = (2.0 * diff / idx.size)[:, None]
            grads = net.backward(x[idx], grad_out)
            adam.step(net.parameters, net.flat_grads(grads))
        losses.append(epoch_loss / order.size)
    return WindowMlpForecaster(config, net, scale, losses)


def fit(config: ForecasterConfig, history: TrafficSeries) -> Forecaster:
    """Build a forecaster from training history.

    Persistence and seasonal naive learn nothing; window_mlp trains its net
    on the leading ``train_fraction`` of the history.
    """
    values = history.values
    if config.kind == "persistence":
        if values.size < 1:
            raise ValueError("insufficient history")
        return PersistenceForecaster(config)

    if config.kind == "seasonal_naive":
        period = config.season_period or history.steps_per_day()
        if values.size < period:
            raise ValueError(
                f"insufficient history: {values.size} < season period {period}")
        return SeasonalNaiveForecaster(config, period)

    if values.size < config.lookback:
        raise ValueError(
            f"insufficient history: {values.size} < lookback {config.lookback}")
    return _fit_window_mlp(config, values)


def predict_next(forecaster: Forecaster, window) -> float:
    return forecaster.predict_next(window)


@dataclass
class BacktestMetrics:
    mape: float  # percent, over points with positive actual
    mae: float


def backtest(forecaster: Forecaster, series: TrafficSeries, start: int,
             csv_path: str | Path | None = None
             ) -> tuple[list[ForecastResult], BacktestMetrics]:
    """Rolling one-step-ahead forecasts from ``start`` through the end.

    Emits one result per step; metrics are recomputable bit-exactly from
    the emitted rows. Optionally writes the forecast CSV.
    """
    window_size = forecaster.window_size
    if start < window_size:
        raise ValueError(f"start {start} is before lookback {window_size}")
    if start >= len(series):
        raise ValueError(f"start {start} out of range for length {len(series)}")

    results: list[ForecastResult] = []
    for t in range(start, len(series)):
        window = series.values[t - window_size:t]
        predicted = forecaster.predict_next(window)
        actual = float(series.values[t])
        results.append(ForecastResult(
            target_index=t,
            predicted=predicted,
            actual=actual,
            abs_error=abs(predicted - actual),
        ))

    errors = np.asarray([r.abs_error for r in results])
    actuals = np.asarray([r.actual for r in results])
    mae = float(np.mean(errors))
    positive = actuals > 0
    mape = float(np.mean(errors[positive] / actuals[positive]) * 100.0) \
        if np.any(positive) else 0.0
    metrics = BacktestMetrics(mape=mape, mae=mae)

    if csv_path is not None:
        write_forecast_csv(results, series, csv_path)
    return results, metrics


def write_forecast_csv(results: list[ForecastResult], series: TrafficSeries,
                       path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "timestamp", "actual", "predicted", "abs_error"])
        for r in results:
            writer.writerow([
                r.target_index,
                series.timestamp(r.target_index).isoformat(),
                repr(r.actual),
                repr(r.predicted),
                repr(r.abs_error),
            ])
