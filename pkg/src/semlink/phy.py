"""Bit-exact physical layer chain.

Wire conventions (normative, both ends must agree):

* Latent coefficients are serialized as IEEE 754 binary64, big-endian,
  most-significant bit first, in the block order fixed by the caller.
* Text is 8 bits per character, MSB first, high bit zero. Characters outside
  7-bit ASCII are replaced by ``?`` before encoding; decoded bytes outside
  the printable range 0x20..0x7E map to ``?`` instead of failing.
* Channel code: rate-1/2 feedforward convolutional code, constraint length 7,
  generators (171, 133) octal, generator 171 emitted first per input bit,
  zero-tail terminated (6 flush bits -> 12 tail output bits).
* Modulation: Gray-mapped 16-QAM. Each nibble maps the first two bits to the
  I axis and the last two to the Q axis; per axis 00 -> -3, 01 -> -1,
  11 -> +1, 10 -> +3, scaled by 1/sqrt(10) for unit average symbol energy.
* Soft demodulation emits max-log LLRs with the convention
  LLR > 0 <=> bit 0 more likely; hard decisions break boundary ties toward
  the lower level.
* AWGN: noise variance per complex symbol is 10^(-snr_db/10), split equally
  across the real and imaginary parts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap

CONSTRAINT_LENGTH = 7
GENERATORS = (0o171, 0o133)
TAIL_BITS = CONSTRAINT_LENGTH - 1
_N_STATES = 1 << TAIL_BITS

#: Per-axis amplitude levels indexed by the 2-bit Gray label (b0, b1).
_LEVEL_BY_LABEL = np.array([-3.0, -1.0, 3.0, 1.0])  # 00, 01, 10, 11
#: Inverse: ascending levels -3,-1,+1,+3 back to their (b0, b1) labels.
_LABEL_BY_LEVEL = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.uint8)
_QAM_SCALE = 1.0 / np.sqrt(10.0)
_ASCENDING_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0]) * _QAM_SCALE


# --- serialization ---------------------------------------------------------


def serialize_latent(values: np.ndarray) -> np.ndarray:
    """Flatten (C order) and emit 64 bits per coefficient, MSB first."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    if not np.isfinite(flat).all():
        raise ValueError("latent payload contains non-finite coefficients")
    raw = flat.astype(">f8").tobytes()
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8))


def deserialize_latent(bits: np.ndarray, count: int) -> np.ndarray:
    """Inverse of :func:`serialize_latent`; returns a flat float64 array."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size != 64 * count:
        raise ValueError(f"expected {64 * count} bits, got {bits.size}")
    raw = np.packbits(bits).tobytes()
    return np.frombuffer(raw, dtype=">f8").astype(np.float64)


def ascii_encode(text: str) -> np.ndarray:
    codes = np.array(
        [ord(ch) if ord(ch) < 128 else ord("?") for ch in text], dtype=np.uint8
    )
    return np.unpackbits(codes)


def ascii_decode(bits: np.ndarray) -> str:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 8:
        raise ValueError("bit count is not a multiple of 8")
    codes = np.packbits(bits)
    return "".join(chr(c) if 0x20 <= c <= 0x7E else "?" for c in codes)


# --- convolutional code ----------------------------------------------------


def _taps(generator: int) -> np.ndarray:
    # MSB of the 7-bit generator weights the newest input bit.
    return np.array(
        [(generator >> (CONSTRAINT_LENGTH - 1 - k)) & 1 for k in range(CONSTRAINT_LENGTH)],
        dtype=np.uint8,
    )


_TAPS = tuple(_taps(g) for g in GENERATORS)


def conv_encode(bits: np.ndarray) -> np.ndarray:
    """Rate-1/2 encode with zero-tail termination; output 2*(n + 6) bits."""
    bits = np.asarray(bits, dtype=np.uint8)
    padded = np.concatenate([bits, np.zeros(TAIL_BITS, dtype=np.uint8)])
    n_steps = padded.size
    out = np.empty(2 * n_steps, dtype=np.uint8)
    for branch, taps in enumerate(_TAPS):
        stream = np.convolve(padded, taps)[:n_steps] % 2
        out[branch::2] = stream
    return out


def coded_payload_bits(n_info_bits: int) -> int:
    """Coded bits attributable to payload (tail excluded): 2 per info bit."""
    return 2 * n_info_bits


def coded_frame_bits(n_info_bits: int) -> int:
    """Total coded frame length including the 12 termination bits."""
    return 2 * (n_info_bits + TAIL_BITS)


def _transition_tables() -> tuple[np.ndarray, ...]:
    # State = six most recent input bits, newest in the MSB. A transition
    # into state s implies the entering input bit was the MSB of s.
    pred_a = np.empty(_N_STATES, dtype=np.int64)
    pred_b = np.empty(_N_STATES, dtype=np.int64)
    sym_a = np.empty(_N_STATES, dtype=np.int64)
    sym_b = np.empty(_N_STATES, dtype=np.int64)
    for nxt in range(_N_STATES):
        bit_in = (nxt >> (TAIL_BITS - 1)) & 1
        for which, dropped in enumerate((0, 1)):
            prev = ((nxt << 1) | dropped) & (_N_STATES - 1)
            full = (bit_in << TAIL_BITS) | prev
            y0 = bin(full & GENERATORS[0]).count("1") & 1
            y1 = bin(full & GENERATORS[1]).count("1") & 1
            if which == 0:
                pred_a[nxt], sym_a[nxt] = prev, (y0 << 1) | y1
            else:
                pred_b[nxt], sym_b[nxt] = prev, (y0 << 1) | y1
    bit_in_all = (np.arange(_N_STATES) >> (TAIL_BITS - 1)) & 1
    return pred_a, pred_b, sym_a, sym_b, bit_in_all.astype(np.uint8)


_PRED_A, _PRED_B, _SYM_A, _SYM_B, _BIT_IN = _transition_tables()

#: Tests flip this to exercise the pure-numpy trellis on a numba install.
_FORCE_NUMPY = False


def _trellis_numpy(dibit_costs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pm = np.full(_N_STATES, np.inf)
    pm[0] = 0.0  # encoder starts in the zero state
    n_steps = dibit_costs.shape[0]
    decisions = np.empty((n_steps, _N_STATES), dtype=np.uint8)
    for t in range(n_steps):
        costs = dibit_costs[t]
        cand_a = pm[_PRED_A] + costs[_SYM_A]
        cand_b = pm[_PRED_B] + costs[_SYM_B]
        take_b = cand_b < cand_a
        decisions[t] = take_b
        pm = np.where(take_b, cand_b, cand_a)
    return decisions, pm


@_njit(cache=True)
def _trellis_jit(dibit_costs, pred_a, pred_b, sym_a, sym_b):  # pragma: no cover
    n_states = pred_a.size
    pm = np.full(n_states, np.inf)
    pm[0] = 0.0
    n_steps = dibit_costs.shape[0]
    decisions = np.empty((n_steps, n_states), dtype=np.uint8)
    scratch = np.empty(n_states)
    for t in range(n_steps):
        for s in range(n_states):
            ca = pm[pred_a[s]] + dibit_costs[t, sym_a[s]]
            cb = pm[pred_b[s]] + dibit_costs[t, sym_b[s]]
            if cb < ca:
                decisions[t, s] = 1
                scratch[s] = cb
            else:
                decisions[t, s] = 0
                scratch[s] = ca
        pm, scratch = scratch, pm
    return decisions, pm


@_njit(cache=True)
def _traceback_jit(decisions, pred_a, pred_b, bit_in):  # pragma: no cover
    n_steps = decisions.shape[0]
    bits = np.empty(n_steps, dtype=np.uint8)
    state = 0
    for t in range(n_steps - 1, -1, -1):
        bits[t] = bit_in[state]
        if decisions[t, state]:
            state = pred_b[state]
        else:
            state = pred_a[state]
    return bits


def viterbi_decode(metrics: np.ndarray, soft: bool = True) -> np.ndarray:
    """Maximum-likelihood decode of a zero-tail terminated frame.

    ``metrics`` holds one value per coded bit: LLRs when ``soft`` (positive
    favoring bit 0), else hard bits in {0, 1}. Returns the info bits with the
    tail stripped. The jitted and plain trellis implementations perform the
    same float operations in the same order, so decisions are identical.
    """
    metrics = np.asarray(metrics, dtype=np.float64)
    if metrics.size % 2:
        raise ValueError("coded frame length must be even")
    n_steps = metrics.size // 2
    if n_steps < TAIL_BITS:
        raise ValueError("frame shorter than the termination tail")
    llr = metrics if soft else 1.0 - 2.0 * metrics

    # Cost of hypothesizing output dibit (y0, y1) against the received pair:
    # sum over the two bits of +llr/2 when the bit is 1, -llr/2 when 0.
    pairs = llr.reshape(n_steps, 2)
    half0, half1 = 0.5 * pairs[:, 0], 0.5 * pairs[:, 1]
    dibit_costs = np.empty((n_steps, 4), dtype=np.float64)
    dibit_costs[:, 0b00] = -half0 - half1
    dibit_costs[:, 0b01] = -half0 + half1
    dibit_costs[:, 0b10] = half0 - half1
    dibit_costs[:, 0b11] = half0 + half1

    if _HAVE_NUMBA and not _FORCE_NUMPY:
        decisions, _ = _trellis_jit(dibit_costs, _PRED_A, _PRED_B, _SYM_A, _SYM_B)
        bits = _traceback_jit(decisions, _PRED_A, _PRED_B, _BIT_IN)
        return bits[: n_steps - TAIL_BITS]

    decisions, _ = _trellis_numpy(dibit_costs)
    # Zero-tail termination: trace back from state 0 regardless of metrics.
    bits = np.empty(n_steps, dtype=np.uint8)
    state = 0
    for t in range(n_steps - 1, -1, -1):
        bits[t] = _BIT_IN[state]
        state = _PRED_B[state] if decisions[t, state] else _PRED_A[state]
    return bits[: n_steps - TAIL_BITS]


# --- 16-QAM ----------------------------------------------------------------


def qam16_mod(bits: np.ndarray) -> np.ndarray:
    """Map bit nibbles to unit-average-energy Gray 16-QAM symbols."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 4:
        raise ValueError("bit count is not a multiple of 4")
    nibbles = bits.reshape(-1, 4)
    i_lab = 2 * nibbles[:, 0] + nibbles[:, 1]
    q_lab = 2 * nibbles[:, 2] + nibbles[:, 3]
    return (_LEVEL_BY_LABEL[i_lab] + 1j * _LEVEL_BY_LABEL[q_lab]) * _QAM_SCALE


def _axis_hard(values: np.ndarray) -> np.ndarray:
    # Decision regions (-inf,-2], (-2,0], (0,2], (2,inf) in unscaled units;
    # ties at the boundaries fall to the lower level.
    u = values / _QAM_SCALE
    return np.digitize(u, [-2.0, 0.0, 2.0], right=True)


def qam16_demod(
    symbols: np.ndarray, mode: str = "soft", noise_var: float | None = None
) -> np.ndarray:
    """Hard bits or per-bit max-log LLRs (order matching :func:`qam16_mod`)."""
    symbols = np.asarray(symbols, dtype=np.complex128)
    if mode == "hard":
        out = np.empty((symbols.size, 4), dtype=np.uint8)
        out[:, 0:2] = _LABEL_BY_LEVEL[_axis_hard(symbols.real)]
        out[:, 2:4] = _LABEL_BY_LEVEL[_axis_hard(symbols.imag)]
        return out.ravel()
    if mode != "soft":
        raise ValueError(f"unknown demodulation mode: {mode!r}")
    if noise_var is None or noise_var <= 0:
        raise ValueError("soft demodulation requires a positive noise variance")

    def axis_llrs(r: np.ndarray) -> np.ndarray:
        d2 = (r[:, None] - _ASCENDING_LEVELS[None, :]) ** 2
        # Ascending levels -3,-1,+1,+3 carry labels (0,0),(0,1),(1,1),(1,0).
        b0 = (np.minimum(d2[:, 2], d2[:, 3]) - np.minimum(d2[:, 0], d2[:, 1])) / noise_var
        b1 = (np.minimum(d2[:, 1], d2[:, 2]) - np.minimum(d2[:, 0], d2[:, 3])) / noise_var
        return b0, b1

    out = np.empty((symbols.size, 4), dtype=np.float64)
    out[:, 0], out[:, 1] = axis_llrs(symbols.real)
    out[:, 2], out[:, 3] = axis_llrs(symbols.imag)
    return out.ravel()


# --- AWGN channel ----------------------------------------------------------


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")

    @property
    def noise_var(self) -> float:
        """Noise variance per complex symbol for unit signal power."""
        return 10.0 ** (-self.snr_db / 10.0)


class AwgnChannel:
    """Additive circular complex Gaussian noise with a persistent generator.

    One instance per logical stream; successive calls draw fresh noise while
    the whole sequence stays reproducible under the seed.
    """

    def __init__(self, config: ChannelConfig, rng: np.random.Generator | None = None):
        self.config = config
        self._rng = rng if rng is not None else np.random.default_rng(config.seed)

    def transmit(self, symbols: np.ndarray) -> np.ndarray:
        symbols = np.asarray(symbols, dtype=np.complex128)
        sigma = np.sqrt(self.config.noise_var / 2.0)
        noise = self._rng.normal(scale=sigma, size=(symbols.size, 2))
        return symbols + noise[:, 0] + 1j * noise[:, 1]


def awgn(symbols: np.ndarray, config: ChannelConfig) -> np.ndarray:
    """Single-shot channel pass; a fixed seed gives a fixed realization."""
    return AwgnChannel(config).transmit(symbols)


# --- framed chain helpers --------------------------------------------------


def pad_to_nibble(bits: np.ndarray) -> tuple[np.ndarray, int]:
    """Zero-pad to a multiple of 4 bits; returns (bits, pad count)."""
    pad = (-bits.size) % 4
    if pad:
        bits = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])
    return bits, pad


def latent_to_symbols(blocks: np.ndarray) -> tuple[np.ndarray, int, int]:
    """serialize -> encode -> modulate; returns (symbols, info bits, pad)."""
    info = serialize_latent(blocks)
    coded, pad = pad_to_nibble(conv_encode(info))
    return qam16_mod(coded), info.size, pad


def symbols_to_latent(
    symbols: np.ndarray,
    n_coeffs: int,
    pad_bits: int,
    noise_var: float,
    soft: bool = True,
) -> np.ndarray:
    """Inverse chain back to a flat float64 coefficient array."""
    if soft:
        metrics = qam16_demod(symbols, "soft", noise_var)
    else:
        metrics = qam16_demod(symbols, "hard")
    if pad_bits:
        metrics = metrics[: metrics.size - pad_bits]
    info = viterbi_decode(metrics, soft=soft)
    return deserialize_latent(info, n_coeffs)


def text_to_symbols(text: str) -> tuple[np.ndarray, int, int]:
    info = ascii_encode(text)
    coded, pad = pad_to_nibble(conv_encode(info))
    return qam16_mod(coded), len(text), pad


def symbols_to_text(
    symbols: np.ndarray,
    n_chars: int,
    pad_bits: int,
    noise_var: float,
    soft: bool = True,
) -> str:
    if soft:
        metrics = qam16_demod(symbols, "soft", noise_var)
    else:
        metrics = qam16_demod(symbols, "hard")
    if pad_bits:
        metrics = metrics[: metrics.size - pad_bits]
    info = viterbi_decode(metrics, soft=soft)
    if info.size != 8 * n_chars:
        raise ValueError("decoded bit count does not match the declared length")
    return ascii_decode(info)
