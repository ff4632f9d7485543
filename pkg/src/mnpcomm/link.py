"""On-off keying link: expected counts with ISI, threshold detection, symbol error rate."""

from dataclasses import dataclass

import numpy as np
from scipy import stats
from joblib import Parallel, delayed

from mnpcomm import sim as simulation


@dataclass(frozen=True)
class LinkConfig:
    """Symbol duration T, sampling offset t0, threshold xi, particles per pulse, length K.

    ``sample_offset=None`` samples at the flow arrival time d / v_f.
    """

    symbol_duration: float = 2.0
    sample_offset: float = None
    threshold: int = 1
    n_tx: int = 1000
    sequence_length: int = 10

    def __post_init__(self):
        if not self.symbol_duration > 0:
            raise ValueError(f"symbol_duration must be > 0, got {self.symbol_duration}")
        if self.sample_offset is not None and not self.sample_offset > 0:
            raise ValueError(f"sample_offset must be > 0, got {self.sample_offset}")
        if self.threshold < 1:
            raise ValueError(f"threshold must be >= 1, got {self.threshold}")
        if self.n_tx < 0:
            raise ValueError(f"n_tx must be >= 0, got {self.n_tx}")
        if self.sequence_length < 1:
            raise ValueError(f"sequence_length must be >= 1, got {self.sequence_length}")

    def resolved_sample_offset(self, scenario):
        if self.sample_offset is not None:
            return self.sample_offset
        t1 = scenario.arrival_time()
        if not np.isfinite(t1):
            raise ValueError("sample_offset must be set when there is no flow")
        return t1

    def lag_times(self, scenario, n_symbols=None):
        """Times t0 + j T at which the impulse response enters the expected counts."""
        k = self.sequence_length if n_symbols is None else n_symbols
        return self.resolved_sample_offset(scenario) + self.symbol_duration * np.arange(k)


@dataclass
class DetectionResult:
    detected: np.ndarray
    errors: np.ndarray

    @property
    def ser(self):
        return float(self.errors.mean()) if self.errors.size else 0.0


@dataclass
class SerEstimate:
    """Empirical symbol error rate with a 95 % Clopper-Pearson interval."""

    ser: float
    ci_low: float
    ci_high: float
    n_errors: int
    n_symbols: int


def _bits(bits):
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 1 or bits.size == 0:
        raise ValueError("bits must be a non-empty 1-D sequence")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    return bits


def _offset(link, t0):
    t0 = link.sample_offset if t0 is None else t0
    if t0 is None:
        raise ValueError("sample offset unresolved; pass t0 or set link.sample_offset")
    return t0


def _ir_values(ir, lags):
    if callable(ir):
        return np.array([float(ir(t)) for t in lags])
    return np.array([ir.at(t) for t in lags])


def expected_counts(bits, ir, link, t0=None):
    """Mean count n_rx[k] = sum_{i<=k} b[i] N_ob((k - i) T + t0).

    ``ir`` is an :class:`~mnpcomm.analytic.ImpulseResponse` evaluated at the
    lag times, or any callable t -> expected count.
    """
    bits = _bits(bits)
    t0 = _offset(link, t0)
    lags = t0 + link.symbol_duration * np.arange(bits.size)
    h = _ir_values(ir, lags)
    # causal convolution of the bit pattern with the sampled impulse response
    return np.convolve(bits.astype(float), h)[: bits.size]


def detect(count, threshold):
    """1 if the integer count reaches the threshold, else 0."""
    count = np.asarray(count)
    if not np.issubdtype(count.dtype, np.integer):
        raise TypeError("detection operates on integer particle counts")
    if threshold < 1:
        raise ValueError(f"threshold must be >= 1, got {threshold}")
    out = (count >= threshold).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def detect_sequence(bits, counts, threshold):
    bits = _bits(bits)
    detected = detect(np.asarray(counts), threshold)
    return DetectionResult(np.atleast_1d(detected), np.atleast_1d(detected) != bits)


def symbol_error_probabilities(bits, ir, link, t0=None):
    """Per-symbol error probability under a Poisson count model."""
    bits = _bits(bits)
    mean = expected_counts(bits, ir, link, t0)
    p_below = stats.poisson.cdf(link.threshold - 1, mean)
    return np.where(bits == 1, p_below, 1.0 - p_below)


def ser_poisson(bits, ir, link, t0=None):
    """Sequence-averaged symbol error rate under the Poisson approximation."""
    return float(symbol_error_probabilities(bits, ir, link, t0).mean())


def ser_poisson_random(ir, link, n_sequences, rng, t0=None):
    """Average of :func:`ser_poisson` over random equiprobable sequences of length K."""
    total = 0.0
    for _ in range(n_sequences):
        total += ser_poisson(rng.integers(0, 2, link.sequence_length), ir, link, t0)
    return total / n_sequences


def ser_poisson_average(ir, link, t0=None, max_exhaustive=16, rng=None, n_sequences=10_000):
    """Mean of :func:`ser_poisson` over equiprobable sequences of length K.

    Enumerates all 2^K sequences when K <= ``max_exhaustive``, otherwise
    averages ``n_sequences`` random ones drawn from ``rng``.
    """
    k = link.sequence_length
    if k > max_exhaustive:
        if rng is None:
            raise ValueError("rng is required when the sequence is too long to enumerate")
        return ser_poisson_random(ir, link, n_sequences, rng, t0)
    t0 = _offset(link, t0)
    h = _ir_values(ir, t0 + link.symbol_duration * np.arange(k))
    bits = (np.arange(2**k)[:, None] >> np.arange(k)[None, :]) & 1
    # row-wise causal convolution as a Toeplitz product
    lag = np.arange(k)[:, None] - np.arange(k)[None, :]
    toeplitz = np.where(lag >= 0, h[np.clip(lag, 0, None)], 0.0)
    mean = bits @ toeplitz.T
    p_below = stats.poisson.cdf(link.threshold - 1, mean)
    return float(np.where(bits == 1, p_below, 1.0 - p_below).mean())


def ser_binomial_no_isi(p_obs, n_tx):
    """0.5 (1 - p)^n_tx: no-ISI error rate for xi = 1 with exact binomial counts.

    ``p_obs`` is the per-particle observation probability averaged over the
    size distribution; with i.i.d. radii the zero-count probability is exact.
    """
    p = np.asarray(p_obs, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p_obs must lie in [0, 1]")
    out = 0.5 * (1.0 - p) ** n_tx
    return float(out) if out.ndim == 0 else out


def ser_no_isi(n_ob_at_t0):
    """Closed form 0.5 exp(-N_ob(t0)) for xi = 1 and no inter-symbol interference."""
    n = np.asarray(n_ob_at_t0, dtype=float)
    if np.any(n < 0):
        raise ValueError("expected count must be >= 0")
    out = 0.5 * np.exp(-n)
    return float(out) if out.ndim == 0 else out


def binomial_interval(n_errors, n_symbols, confidence=0.95):
    ci = stats.binomtest(int(n_errors), int(n_symbols)).proportion_ci(confidence, method="exact")
    return ci.low, ci.high


def _count_errors(link, scenario, sim_config, realizations):
    errors = 0
    for r in realizations:
        rng = simulation.realization_rng(sim_config.seed, r)
        bits = rng.integers(0, 2, link.sequence_length)
        counts = simulation.simulate_sequence(bits, link, scenario, sim_config, rng)
        errors += int(np.count_nonzero(detect(counts, link.threshold) != bits))
    return errors


def ser_monte_carlo(link, scenario, sim_config, n_sequences):
    """Empirical SER over ``n_sequences`` random equiprobable sequences of length K.

    Sequence r draws its bits and all particle randomness from realization r
    of ``sim_config.seed``.
    """
    if n_sequences < 1:
        raise ValueError(f"n_sequences must be >= 1, got {n_sequences}")
    chunks = simulation._chunks(n_sequences, sim_config.n_jobs)
    if sim_config.n_jobs == 1:
        parts = [_count_errors(link, scenario, sim_config, c) for c in chunks]
    else:
        parts = Parallel(n_jobs=sim_config.n_jobs)(
            delayed(_count_errors)(link, scenario, sim_config, c) for c in chunks
        )
    n_errors = int(sum(parts))
    n_symbols = n_sequences * link.sequence_length
    low, high = binomial_interval(n_errors, n_symbols)
    return SerEstimate(n_errors / n_symbols, low, high, n_errors, n_symbols)
