"""Intraday bar ingestion, realized measures, and descriptive statistics.

Turns CSV bar data (timestamp, price, volume) into per-day containers,
computes intraday log returns, realized volatility / quarticity, daily
close-to-close returns, and the summary statistics used in the data
report (moments, Jarque-Bera, Ljung-Box).

Conventions fixed here and used everywhere downstream:

* returns are log returns,
* standard deviations use the sample (n-1) denominator,
* autocorrelations use the biased estimator (divide by n, overall mean),
* realized-measure sums use error-free (exactly rounded) accumulation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import date, datetime

import numpy as np

logger = logging.getLogger(__name__)

CSV_HEADER = "timestamp,price,volume"
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M"


class MarketDataError(ValueError):
    """Base class for ingestion and measurement errors."""


class MalformedRow(MarketDataError):
    """A CSV row could not be parsed; message carries the line number."""


class NonPositivePrice(MarketDataError):
    """Price field must be strictly positive."""


class NegativeVolume(MarketDataError):
    """Volume field must be non-negative."""


class OutOfOrderTimestamps(MarketDataError):
    """Rows must be sorted strictly by timestamp."""


class TooFewBars(MarketDataError):
    """Realized measures need at least two bars in a day."""


class ZeroVariance(MarketDataError):
    """Standardization needs strictly positive sample variance."""


class TooFewObservations(MarketDataError):
    """Descriptive statistics need enough observations for Q(20)."""


@dataclass(frozen=True)
class IntradayBar:
    timestamp: datetime
    price: float
    volume: float


@dataclass(frozen=True)
class TradingDay:
    """One day of intraday bars, ordered by timestamp."""

    day: date
    bars: tuple[IntradayBar, ...]

    def prices(self) -> np.ndarray:
        return np.array([b.price for b in self.bars], dtype=float)

    def volumes(self) -> np.ndarray:
        return np.array([b.volume for b in self.bars], dtype=float)

    @property
    def close(self) -> float:
        return self.bars[-1].price


@dataclass(frozen=True)
class ReturnSeries:
    """Dated daily log returns (close-to-close, overnight gap included)."""

    dates: tuple[date, ...]
    values: np.ndarray

    def __post_init__(self):
        if len(self.dates) != len(self.values):
            raise MarketDataError("dates and values must have equal length")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise MarketDataError("return dates must be strictly increasing")


@dataclass(frozen=True)
class StandardizedReturns:
    """Returns shifted by ``mu`` and divided by ``sigma`` (sample moments)."""

    values: np.ndarray
    mu: float
    sigma: float


@dataclass(frozen=True)
class RvSeries:
    """Dated realized volatility (and optional realized quarticity)."""

    dates: tuple[date, ...]
    rv: np.ndarray
    rq: np.ndarray | None = None

    def __post_init__(self):
        if len(self.dates) != len(self.rv):
            raise MarketDataError("dates and rv must have equal length")
        if self.rq is not None and len(self.rq) != len(self.rv):
            raise MarketDataError("rq must align with rv")
        if np.any(self.rv < 0):
            raise MarketDataError("rv must be non-negative")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise MarketDataError("rv dates must be strictly increasing")


@dataclass(frozen=True)
class StatsReport:
    mean: float
    median: float
    std: float
    skewness: float
    kurtosis: float
    jarque_bera: float
    q5: float
    q10: float
    q20: float

    FIELDS = (
        "mean", "median", "std", "skewness", "kurtosis",
        "jarque_bera", "q5", "q10", "q20",
    )


def parse_bars(text: str) -> list[TradingDay]:
    """Parse CSV bar data into TradingDay groups.

    Expects a ``timestamp,price,volume`` header, timestamps formatted
    ``YYYY-MM-DDTHH:MM`` and sorted strictly increasing. Rows are grouped
    by calendar date; every input row lands in exactly one group.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise MalformedRow(f"line 1: expected header '{CSV_HEADER}'")

    days: list[TradingDay] = []
    current_date: date | None = None
    current_bars: list[IntradayBar] = []
    prev_ts: datetime | None = None

    def flush():
        if current_date is not None:
            days.append(TradingDay(current_date, tuple(current_bars)))

    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise MalformedRow(f"line {lineno}: expected 3 fields, got {len(parts)}")
        try:
            ts = datetime.strptime(parts[0].strip(), TIMESTAMP_FORMAT)
            price = float(parts[1])
            volume = float(parts[2])
        except ValueError as exc:
            raise MalformedRow(f"line {lineno}: {exc}") from None
        if not math.isfinite(price) or price <= 0:
            raise NonPositivePrice(f"line {lineno}: price {parts[1]} is not positive")
        if not math.isfinite(volume) or volume < 0:
            raise NegativeVolume(f"line {lineno}: volume {parts[2]} is negative")
        if prev_ts is not None and ts <= prev_ts:
            raise OutOfOrderTimestamps(f"line {lineno}: timestamp {parts[0]} not increasing")
        prev_ts = ts
        if ts.date() != current_date:
            flush()
            current_date = ts.date()
            current_bars = []
        current_bars.append(IntradayBar(ts, price, volume))
    flush()
    return days


def serialize_bars(days: list[TradingDay]) -> str:
    """Inverse of :func:`parse_bars` on well-formed data."""
    lines = [CSV_HEADER]
    for day in days:
        for bar in day.bars:
            lines.append(
                f"{bar.timestamp.strftime(TIMESTAMP_FORMAT)},{bar.price!r},{bar.volume!r}"
            )
    return "\n".join(lines) + "\n"


def intraday_log_returns(day: TradingDay) -> np.ndarray:
    """Log returns between consecutive bars: ln(P_i / P_{i-1})."""
    if len(day.bars) < 2:
        raise TooFewBars(f"{day.day}: need >= 2 bars, got {len(day.bars)}")
    prices = day.prices()
    return np.log(prices[1:] / prices[:-1])


def _exact_sum(values) -> float:
    # math.fsum is exactly rounded, so an independent exact accumulation
    # (e.g. via rationals) reproduces it bit-for-bit.
    return math.fsum(values)


def realized_volatility(day: TradingDay) -> float:
    """Sum of squared intraday log returns for one day."""
    r = intraday_log_returns(day)
    return _exact_sum(float(x) * float(x) for x in r)


def realized_quarticity(day: TradingDay) -> float:
    """(N/3) * sum of fourth powers of intraday log returns."""
    r = intraday_log_returns(day)
    n = len(r)
    return (n / 3.0) * _exact_sum(float(x) ** 4 for x in r)


def _log_dispersion_rv(values: np.ndarray) -> float:
    diffs = np.log(values[1:] / values[:-1])
    return _exact_sum(float(x) * float(x) for x in diffs)


def _log_dispersion_rq(values: np.ndarray) -> float:
    diffs = np.log(values[1:] / values[:-1])
    return (len(diffs) / 3.0) * _exact_sum(float(x) ** 4 for x in diffs)


def build_rv_series(
    days: list[TradingDay], *, field: str = "price", with_rq: bool = True
) -> RvSeries:
    """Realized volatility series over a list of days.

    ``field`` selects the intraday series the measure is computed on:
    ``price`` (transaction prices) or ``volume`` (per-bar volumes).
    Days with fewer than two bars, or with non-positive values in the
    selected field, are dropped with a warning instead of failing the
    whole ingest.
    """
    if field not in ("price", "volume"):
        raise MarketDataError(f"unknown field {field!r}")
    dates: list[date] = []
    rvs: list[float] = []
    rqs: list[float] = []
    for day in days:
        if len(day.bars) < 2:
            logger.warning("dropping %s: only %d bar(s)", day.day, len(day.bars))
            continue
        values = day.prices() if field == "price" else day.volumes()
        if field == "volume" and np.any(values <= 0):
            logger.warning("dropping %s: non-positive volume", day.day)
            continue
        dates.append(day.day)
        rvs.append(_log_dispersion_rv(values))
        if with_rq:
            rqs.append(_log_dispersion_rq(values))
    return RvSeries(
        tuple(dates),
        np.array(rvs, dtype=float),
        np.array(rqs, dtype=float) if with_rq else None,
    )


def daily_returns(days: list[TradingDay]) -> ReturnSeries:
    """Close-to-close daily log returns, dated by the later day."""
    if len(days) < 2:
        raise MarketDataError("need >= 2 days for daily returns")
    for day in days:
        if not day.bars:
            raise MarketDataError(f"{day.day}: empty day")
    closes = np.array([d.close for d in days], dtype=float)
    values = np.log(closes[1:] / closes[:-1])
    return ReturnSeries(tuple(d.day for d in days[1:]), values)


def standardize(series) -> StandardizedReturns:
    """Center and scale by the sample mean and sample (n-1) std."""
    values = np.asarray(getattr(series, "values", series), dtype=float)
    if values.size < 2:
        raise MarketDataError("need >= 2 observations to standardize")
    mu = float(np.mean(values))
    sigma = float(np.std(values, ddof=1))
    if sigma <= 0.0:
        raise ZeroVariance("sample standard deviation is zero")
    return StandardizedReturns((values - mu) / sigma, mu, sigma)


def sample_autocorrelations(values: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased autocorrelation estimates rho_1..rho_max_lag."""
    x = np.asarray(values, dtype=float)
    n = len(x)
    if max_lag >= n:
        raise MarketDataError(f"max_lag {max_lag} needs n > max_lag, got n={n}")
    centered = x - x.mean()
    denom = float(np.dot(centered, centered))
    if denom == 0.0:
        raise ZeroVariance("autocorrelation undefined for constant series")
    return np.array(
        [float(np.dot(centered[k:], centered[:-k])) / denom for k in range(1, max_lag + 1)]
    )


def ljung_box_q(autocorrs: np.ndarray, n: int) -> float:
    """Ljung-Box statistic n(n+2) * sum rho_k^2 / (n-k) over the given lags."""
    acf = np.asarray(autocorrs, dtype=float)
    s = len(acf)
    if n <= s:
        raise MarketDataError("Ljung-Box needs n > number of lags")
    k = np.arange(1, s + 1)
    return float(n * (n + 2) * np.sum(acf**2 / (n - k)))


def descriptive_stats(values) -> StatsReport:
    """Moments, Jarque-Bera, and Ljung-Box Q(5)/Q(10)/Q(20) for one series.

    Skewness and kurtosis use population central moments (the Jarque-Bera
    inputs); the reported std uses the sample (n-1) denominator.
    """
    x = np.asarray(getattr(values, "values", values), dtype=float)
    n = len(x)
    if n < 21:
        raise TooFewObservations(f"need >= 21 observations for Q(20), got {n}")
    mean = float(np.mean(x))
    centered = x - mean
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        raise ZeroVariance("descriptive stats undefined for constant series")
    m3 = float(np.mean(centered**3))
    m4 = float(np.mean(centered**4))
    skew = m3 / m2**1.5
    kurt = m4 / m2**2
    jb = n / 6.0 * (skew**2 + (kurt - 3.0) ** 2 / 4.0)
    acf = sample_autocorrelations(x, 20)
    return StatsReport(
        mean=mean,
        median=float(np.median(x)),
        std=float(np.std(x, ddof=1)),
        skewness=skew,
        kurtosis=kurt,
        jarque_bera=jb,
        q5=ljung_box_q(acf[:5], n),
        q10=ljung_box_q(acf[:10], n),
        q20=ljung_box_q(acf[:20], n),
    )
