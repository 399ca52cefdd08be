"""Simulation of the optical front end: a weak-coherent LED source behind an
attenuator, liquid-crystal polarization state preparation and an untrusted
measurement box (polarizing beam splitter feeding two single-photon
detectors).

The model is a threshold-detector model:

* the number of photons in a detection window is Poisson distributed,
* each photon is routed to detector D1 or D2 according to the overlap of the
  prepared polarization with the beam splitter axes (including its finite
  transmission fidelities),
* each routed photon is detected independently with the detector efficiency,
  and each detector may additionally fire from a dark count,
* a window with exactly one firing detector yields a bit (D1 -> 0, D2 -> 1);
  windows with zero or two firing detectors are discarded.

Because Poisson thinning/splitting is exact, the four outcome probabilities
of a window have a closed form (`click_probabilities`), which the block-level
fast path in :mod:`mdiqrng.protocol` relies on. `simulate_round` and
`simulate_windows` sample the same model explicitly; the test-suite checks
that all three agree.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _scipy_stats

# CODATA values, SI units
PLANCK_H = 6.62607015e-34       # J s
SPEED_OF_LIGHT = 2.99792458e8   # m / s
ELEMENTARY_CHARGE = 1.602176634e-19  # C

NORM_TOL = 1e-12

# Default mean photon number per window: chosen so the multi-photon fraction
# 1 - exp(-mu)(1 + mu) stays below 0.28%.
DEFAULT_MEAN_PHOTON_NUMBER = 0.075

# Default detection window (s). Together with the default mean photon number
# this fixes the nominal emission flux and the raw-bit throughput accounting.
DEFAULT_WINDOW_S = 1.75e-9

DEFAULT_DEGRADATION_CURVE = ((0.0, 1.0), (8.0, 1.0), (22.0, 0.55))


@dataclass(frozen=True)
class PolarizationState:
    """Jones vector of a prepared qubit, (amplitude_h, amplitude_v), unit norm."""

    amplitude_h: complex
    amplitude_v: complex

    def __post_init__(self):
        norm = abs(self.amplitude_h) ** 2 + abs(self.amplitude_v) ** 2
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"polarization state not normalized: |psi|^2 = {norm!r}")

    @property
    def prob_h(self) -> float:
        """|<H|psi>|^2."""
        return abs(self.amplitude_h) ** 2

    @property
    def prob_v(self) -> float:
        """|<V|psi>|^2."""
        return abs(self.amplitude_v) ** 2


STATE_H = PolarizationState(1.0, 0.0)
STATE_V = PolarizationState(0.0, 1.0)
STATE_R = PolarizationState(1.0 / math.sqrt(2.0), 1j / math.sqrt(2.0))

_STATES = (STATE_H, STATE_V, STATE_R)


def prepare_state(choice: int) -> PolarizationState:
    """Return the prepared state for index 0 (|H>), 1 (|V>) or 2 (|R>)."""
    if choice not in (0, 1, 2):
        raise ValueError(f"state index must be 0, 1 or 2, got {choice!r}")
    return _STATES[choice]


@dataclass
class SourceConfig:
    """Emitter parameters.

    mean_photon_number is the Poisson mean per detection window at full
    brightness; the degradation curve is a piecewise-linear flux multiplier
    versus elapsed time in days (non-increasing, values in (0, 1]).
    """

    mean_photon_number: float = DEFAULT_MEAN_PHOTON_NUMBER
    center_wavelength: float = 804.0   # nm
    fwhm: float = 41.6                 # nm
    window: float = DEFAULT_WINDOW_S   # s
    nominal_flux: float = DEFAULT_MEAN_PHOTON_NUMBER / DEFAULT_WINDOW_S  # photons/s
    degradation_curve: tuple = DEFAULT_DEGRADATION_CURVE

    def __post_init__(self):
        if self.mean_photon_number <= 0:
            raise ValueError("mean_photon_number must be > 0")
        if self.window <= 0:
            raise ValueError("window must be > 0")
        curve = tuple((float(t), float(m)) for t, m in self.degradation_curve)
        days = [t for t, _ in curve]
        mults = [m for _, m in curve]
        if days != sorted(days):
            raise ValueError("degradation_curve days must be increasing")
        if any(m <= 0 or m > 1 for m in mults):
            raise ValueError("degradation multipliers must lie in (0, 1]")
        if any(b > a for a, b in zip(mults, mults[1:])):
            raise ValueError("degradation multipliers must be non-increasing")
        object.__setattr__(self, "degradation_curve", curve)

    def degradation(self, t_days: float) -> float:
        """Flux multiplier at elapsed time t_days (linear interpolation, held at the ends)."""
        if t_days < 0:
            raise ValueError("elapsed time must be >= 0")
        days = np.array([t for t, _ in self.degradation_curve])
        mults = np.array([m for _, m in self.degradation_curve])
        return float(np.interp(t_days, days, mults))

    def mean_photons(self, t_days: float = 0.0) -> float:
        """Mean photon number per window at elapsed time t_days."""
        return self.mean_photon_number * self.degradation(t_days)


@dataclass
class MeasurementBoxConfig:
    """Untrusted measurement box: PBS fidelities plus detector parameters.

    pbs_transmission_h is the probability that an H photon exits toward D1;
    pbs_transmission_v the probability that a V photon exits toward D2. The
    defaults are calibrated so the simulated test-state success probability
    averages about 0.97.
    """

    detector_efficiency: float = 0.25
    dark_count_prob: float = 1e-6
    pbs_transmission_h: float = 0.975
    pbs_transmission_v: float = 0.965

    def __post_init__(self):
        for name in ("detector_efficiency", "dark_count_prob",
                     "pbs_transmission_h", "pbs_transmission_v"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")

    @classmethod
    def ideal(cls) -> "MeasurementBoxConfig":
        return cls(detector_efficiency=1.0, dark_count_prob=0.0,
                   pbs_transmission_h=1.0, pbs_transmission_v=1.0)


class DiscardReason(enum.Enum):
    NO_CLICK = "no-click"
    DOUBLE_CLICK = "double-click"


# Integer event codes used by the vectorized simulation paths.
EVENT_BIT0 = 0
EVENT_BIT1 = 1
EVENT_NO_CLICK = 2
EVENT_DOUBLE_CLICK = 3


@dataclass(frozen=True)
class DetectionEvent:
    """Outcome of one measurement window: Bit(0), Bit(1) or a discard."""

    bit: int | None = None
    discard: DiscardReason | None = None

    def __post_init__(self):
        if (self.bit is None) == (self.discard is None):
            raise ValueError("event must be exactly one of bit or discard")
        if self.bit is not None and self.bit not in (0, 1):
            raise ValueError("bit must be 0 or 1")

    @property
    def is_bit(self) -> bool:
        return self.bit is not None

    @classmethod
    def from_code(cls, code: int) -> "DetectionEvent":
        if code == EVENT_BIT0:
            return cls(bit=0)
        if code == EVENT_BIT1:
            return cls(bit=1)
        if code == EVENT_NO_CLICK:
            return cls(discard=DiscardReason.NO_CLICK)
        if code == EVENT_DOUBLE_CLICK:
            return cls(discard=DiscardReason.DOUBLE_CLICK)
        raise ValueError(f"unknown event code {code!r}")


def poisson_pmf(n, mean):
    """P(N = n) for N ~ Poisson(mean), evaluated in log space.

    Stable up to n ~ 1e4 and beyond; accepts scalars or arrays.
    """
    n_arr = np.asarray(n)
    if np.any(n_arr < 0):
        raise ValueError("photon count must be >= 0")
    if np.any(n_arr != np.floor(n_arr)):
        raise ValueError("photon count must be an integer")
    if mean < 0:
        raise ValueError("mean must be >= 0")
    if mean == 0:
        out = np.where(n_arr == 0, 1.0, 0.0)
        return float(out) if np.isscalar(n) else out
    logp = n_arr * math.log(mean) - mean - _log_factorial(n_arr)
    out = np.exp(logp)
    return float(out) if np.isscalar(n) else out


def _log_factorial(n):
    from scipy.special import gammaln
    return gammaln(np.asarray(n, dtype=float) + 1.0)


def sample_photon_count(mean: float, rng: np.random.Generator) -> int:
    """Draw one Poisson photon count for a detection window."""
    if mean < 0:
        raise ValueError("mean must be >= 0")
    if mean == 0:
        return 0
    return int(rng.poisson(mean))


def multiphoton_fraction(mean: float) -> float:
    """P(N >= 2) = 1 - exp(-mean)(1 + mean)."""
    return -math.expm1(-mean) - mean * math.exp(-mean)


def route_probability_d1(state: PolarizationState, box: MeasurementBoxConfig) -> float:
    """Probability that a single photon in `state` exits the PBS toward D1."""
    return (state.prob_h * box.pbs_transmission_h
            + state.prob_v * (1.0 - box.pbs_transmission_v))


def click_probabilities(state: PolarizationState, box: MeasurementBoxConfig,
                        mean_photons: float):
    """Exact per-window outcome probabilities (p_bit0, p_bit1, p_no_click, p_double).

    Detected photons at D1 and D2 are independent Poisson counts with means
    mu*eta*r and mu*eta*(1-r) where r is the D1 routing probability; a
    detector fires if it detects >= 1 photon or records a dark count.
    """
    if mean_photons < 0:
        raise ValueError("mean_photons must be >= 0")
    r = route_probability_d1(state, box)
    eta = box.detector_efficiency
    dark = box.dark_count_prob
    p_silent1 = math.exp(-mean_photons * eta * r) * (1.0 - dark)
    p_silent2 = math.exp(-mean_photons * eta * (1.0 - r)) * (1.0 - dark)
    p1 = 1.0 - p_silent1
    p2 = 1.0 - p_silent2
    p_bit0 = p1 * (1.0 - p2)
    p_bit1 = p2 * (1.0 - p1)
    p_no = (1.0 - p1) * (1.0 - p2)
    p_double = p1 * p2
    return p_bit0, p_bit1, p_no, p_double


def simulate_round(state: PolarizationState, box: MeasurementBoxConfig,
                   source: SourceConfig, rng: np.random.Generator,
                   t_days: float = 0.0) -> DetectionEvent:
    """Sample one detection window and classify it.

    Returns Bit(0) if only D1 fired, Bit(1) if only D2 fired, and a discard
    event when neither or both detectors fired.
    """
    mu = source.mean_photons(t_days)
    n = sample_photon_count(mu, rng)
    r = route_probability_d1(state, box)
    n1 = int(rng.binomial(n, r)) if n else 0
    n2 = n - n1
    eta = box.detector_efficiency
    det1 = int(rng.binomial(n1, eta)) > 0 if n1 else False
    det2 = int(rng.binomial(n2, eta)) > 0 if n2 else False
    dark = box.dark_count_prob
    if dark > 0:
        det1 = det1 or (rng.random() < dark)
        det2 = det2 or (rng.random() < dark)
    if det1 and det2:
        return DetectionEvent(discard=DiscardReason.DOUBLE_CLICK)
    if det1:
        return DetectionEvent(bit=0)
    if det2:
        return DetectionEvent(bit=1)
    return DetectionEvent(discard=DiscardReason.NO_CLICK)


def simulate_windows(state: PolarizationState, box: MeasurementBoxConfig,
                     source: SourceConfig, rng: np.random.Generator,
                     n_windows: int, t_days: float = 0.0) -> np.ndarray:
    """Vectorized version of `simulate_round`: event codes for n_windows windows.

    Codes: 0 = Bit(0), 1 = Bit(1), 2 = no-click discard, 3 = double-click discard.
    """
    mu = source.mean_photons(t_days)
    r = route_probability_d1(state, box)
    eta = box.detector_efficiency
    # Detected counts per window: thinned, split Poisson components.
    k1 = rng.poisson(mu * eta * r, size=n_windows)
    k2 = rng.poisson(mu * eta * (1.0 - r), size=n_windows)
    det1 = k1 > 0
    det2 = k2 > 0
    dark = box.dark_count_prob
    if dark > 0:
        det1 |= rng.random(n_windows) < dark
        det2 |= rng.random(n_windows) < dark
    codes = np.full(n_windows, EVENT_NO_CLICK, dtype=np.uint8)
    codes[det1 & ~det2] = EVENT_BIT0
    codes[det2 & ~det1] = EVENT_BIT1
    codes[det1 & det2] = EVENT_DOUBLE_CLICK
    return codes


def source_flux(t_days: float, source: SourceConfig) -> float:
    """Emitted photon flux (photons/s) at elapsed time t_days."""
    if t_days < 0:
        raise ValueError("elapsed time must be >= 0")
    return source.nominal_flux * source.degradation(t_days)


def fit_poisson(histogram: dict) -> tuple[float, float]:
    """Fit a Poisson law to a photon-count histogram {count: occurrences}.

    Returns the maximum-likelihood mean (the sample mean) and the p-value of
    a chi-square goodness-of-fit test in which adjacent bins are pooled until
    each expected count is at least 5.
    """
    if not histogram:
        raise ValueError("histogram is empty")
    counts = np.array(sorted(histogram.keys()), dtype=np.int64)
    occ = np.array([histogram[int(c)] for c in counts], dtype=np.float64)
    if np.any(counts < 0) or np.any(occ < 0):
        raise ValueError("histogram entries must be non-negative")
    total = occ.sum()
    if total < 100:
        raise ValueError("need at least 100 recorded windows to fit")
    mean = float((counts * occ).sum() / total)
    if mean == 0.0:
        return 0.0, 1.0

    # Expected occurrences on 0..max_count, with the tail mass beyond
    # max_count folded into the last cell.
    top = int(counts.max())
    support = np.arange(top + 1)
    probs = poisson_pmf(support, mean)
    probs[-1] += max(0.0, 1.0 - probs.sum())
    expected = probs * total
    observed = np.zeros(top + 1)
    observed[counts] = occ

    # Pool adjacent cells until every pooled cell expects >= 5.
    pooled_obs, pooled_exp = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= 5.0:
            pooled_obs.append(acc_o)
            pooled_exp.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        if pooled_exp:
            pooled_obs[-1] += acc_o
            pooled_exp[-1] += acc_e
        else:
            pooled_obs.append(acc_o)
            pooled_exp.append(acc_e)
    pooled_obs = np.array(pooled_obs)
    pooled_exp = np.array(pooled_exp)
    dof = len(pooled_exp) - 2  # one cell constraint + fitted mean
    if dof < 1:
        return mean, 1.0
    chi2 = float(((pooled_obs - pooled_exp) ** 2 / pooled_exp).sum())
    p = float(_scipy_stats.chi2.sf(chi2, dof))
    return mean, p


def compute_eqe(wavelengths_nm, spectral_power_w_per_nm,
                current_density_a_per_cm2: float, area_cm2: float) -> float:
    """External quantum efficiency: emitted photon rate / injected carrier rate.

    The photon rate is the trapezoidal integral of phi(lambda) * lambda / (h c)
    over the sampled spectrum; the carrier rate is J * S / q.
    """
    lam, phi = _validate_spectrum(wavelengths_nm, spectral_power_w_per_nm)
    if current_density_a_per_cm2 <= 0:
        raise ValueError("current density must be > 0")
    if area_cm2 <= 0:
        raise ValueError("device area must be > 0")
    photon_rate = np.trapezoid(phi * (lam * 1e-9) / (PLANCK_H * SPEED_OF_LIGHT), lam)
    carrier_rate = current_density_a_per_cm2 * area_cm2 / ELEMENTARY_CHARGE
    return float(photon_rate / carrier_rate)


def compute_radiance(wavelengths_nm, spectral_power_w_per_nm, area_cm2: float) -> float:
    """Radiance in W m^-2 sr^-1: integral of phi(lambda) over pi * area."""
    lam, phi = _validate_spectrum(wavelengths_nm, spectral_power_w_per_nm)
    if area_cm2 <= 0:
        raise ValueError("device area must be > 0")
    power = float(np.trapezoid(phi, lam))  # W
    return power / (math.pi * area_cm2 * 1e-4)


def _validate_spectrum(wavelengths_nm, spectral_power_w_per_nm):
    lam = np.asarray(wavelengths_nm, dtype=float)
    phi = np.asarray(spectral_power_w_per_nm, dtype=float)
    if lam.size < 2:
        raise ValueError("spectrum needs at least 2 samples")
    if lam.shape != phi.shape:
        raise ValueError("wavelength and power arrays differ in length")
    if np.any(np.diff(lam) <= 0):
        raise ValueError("wavelength grid must be strictly increasing")
    return lam, phi


def load_spectrum(path):
    """Read a two-column text spectrum (lambda_nm, phi_W_per_nm); '#' comments allowed."""
    data = np.loadtxt(path, comments="#")
    if data.ndim == 1:
        data = data.reshape(1, -1)
    if data.shape[1] != 2:
        raise ValueError("spectrum file must have exactly two columns")
    return data[:, 0], data[:, 1]


def gaussian_spectrum(center_nm=804.0, fwhm_nm=41.6, total_power_w=1e-4,
                      span_nm=150.0, step_nm=1.0):
    """Synthetic Gaussian emission spectrum, normalized to total_power_w."""
    lam = np.arange(center_nm - span_nm, center_nm + span_nm + step_nm, step_nm)
    sigma = fwhm_nm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    phi = np.exp(-0.5 * ((lam - center_nm) / sigma) ** 2)
    phi *= total_power_w / np.trapezoid(phi, lam)
    return lam, phi


def source_config_from_dict(d: dict) -> SourceConfig:
    kwargs = dict(d)
    if "degradation_curve" in kwargs:
        kwargs["degradation_curve"] = tuple(tuple(p) for p in kwargs["degradation_curve"])
    return SourceConfig(**kwargs)


def box_config_from_dict(d: dict) -> MeasurementBoxConfig:
    return MeasurementBoxConfig(**d)


def source_config_to_dict(cfg: SourceConfig) -> dict:
    return {
        "mean_photon_number": cfg.mean_photon_number,
        "center_wavelength": cfg.center_wavelength,
        "fwhm": cfg.fwhm,
        "window": cfg.window,
        "nominal_flux": cfg.nominal_flux,
        "degradation_curve": [list(p) for p in cfg.degradation_curve],
    }


def box_config_to_dict(cfg: MeasurementBoxConfig) -> dict:
    return {
        "detector_efficiency": cfg.detector_efficiency,
        "dark_count_prob": cfg.dark_count_prob,
        "pbs_transmission_h": cfg.pbs_transmission_h,
        "pbs_transmission_v": cfg.pbs_transmission_v,
    }


def load_configs(path) -> tuple[SourceConfig, MeasurementBoxConfig]:
    """Load {"source": {...}, "box": {...}} from a JSON document."""
    with open(path) as fh:
        doc = json.load(fh)
    return (source_config_from_dict(doc.get("source", {})),
            box_config_from_dict(doc.get("box", {})))
