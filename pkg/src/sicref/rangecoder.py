"""Integer range coder over frozen cumulative-frequency tables.

Encoder and decoder keep a 32-bit [low, high] interval and renormalize a bit
at a time with underflow counting, so there is no carry propagation and the
byte stream is reproducible to the bit for identical inputs. Tables are
plain integer sequences cum[0] = 0 < cum[1] < ... < cum[n] = total, with
total <= 2^30 (16-bit tables are the normal case here).
"""

from .errors import DecodeError

_STATE_BITS = 32
_FULL = 1 << _STATE_BITS
_HALF = _FULL >> 1
_QUARTER = _FULL >> 2
_MASK = _FULL - 1

#: Largest table total the 32-bit coder state can resolve.
MAX_TOTAL = _QUARTER + 2


class RangeEncoder:
    """Streaming encoder; call encode() per symbol, then finish() once."""

    def __init__(self):
        self._low = 0
        self._high = _MASK
        self._underflow = 0
        self._bitbuf = 0
        self._nbits = 0
        self._out = bytearray()
        self._done = False

    def _emit(self, bit: int) -> None:
        self._bitbuf = (self._bitbuf << 1) | bit
        self._nbits += 1
        if self._nbits == 8:
            self._out.append(self._bitbuf)
            self._bitbuf = 0
            self._nbits = 0

    def _emit_with_underflow(self, bit: int) -> None:
        self._emit(bit)
        inv = bit ^ 1
        for _ in range(self._underflow):
            self._emit(inv)
        self._underflow = 0

    def encode(self, cmf, symbol: int) -> None:
        """Narrow the interval to the symbol's slot in `cmf`."""
        low = self._low
        high = self._high
        total = int(cmf[-1])
        span = high - low + 1
        sym_lo = int(cmf[symbol])
        sym_hi = int(cmf[symbol + 1])
        if sym_lo >= sym_hi:
            raise ValueError(f"symbol {symbol} has zero frequency")
        high = low + sym_hi * span // total - 1
        low = low + sym_lo * span // total
        while True:
            if (low ^ high) & _HALF == 0:
                self._emit_with_underflow(low >> (_STATE_BITS - 1))
                low = (low << 1) & _MASK
                high = ((high << 1) & _MASK) | 1
            elif low & ~high & _QUARTER:
                # interval straddles the midpoint: defer the bit
                self._underflow += 1
                low = (low << 1) ^ _HALF
                high = ((high ^ _HALF) << 1) | _HALF | 1
            else:
                break
        self._low = low
        self._high = high

    def finish(self) -> bytes:
        """Flush the interval state; the encoder cannot be reused after."""
        if self._done:
            raise RuntimeError("finish() called twice")
        self._done = True
        # a single 1 bit disambiguates: low < HALF <= high always holds here,
        # and pending underflow bits after a 1 are zeros, same as the pad
        self._emit(1)
        while self._nbits != 0:
            self._emit(0)
        return bytes(self._out)


class RangeDecoder:
    """Mirror of RangeEncoder; reads symbols back given the same tables."""

    def __init__(self, payload: bytes):
        self._data = payload
        self._pos = 0
        self._bitbuf = 0
        self._nbits = 0
        self._low = 0
        self._high = _MASK
        self._code = 0
        for _ in range(_STATE_BITS):
            self._code = (self._code << 1) | self._read_bit()

    def _read_bit(self) -> int:
        # past-the-end reads decode as zeros; corruption is caught by the
        # caller's integrity check, not here
        if self._nbits == 0:
            if self._pos < len(self._data):
                self._bitbuf = self._data[self._pos]
                self._pos += 1
                self._nbits = 8
            else:
                return 0
        self._nbits -= 1
        return (self._bitbuf >> self._nbits) & 1

    def decode(self, cmf) -> int:
        """Return the next symbol index under `cmf` and consume it."""
        low = self._low
        high = self._high
        code = self._code
        total = int(cmf[-1])
        span = high - low + 1
        value = ((code - low + 1) * total - 1) // span
        # binary search: largest s with cmf[s] <= value
        lo, hi = 0, len(cmf) - 1
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if int(cmf[mid]) > value:
                hi = mid
            else:
                lo = mid
        symbol = lo
        high = low + int(cmf[symbol + 1]) * span // total - 1
        low = low + int(cmf[symbol]) * span // total
        while True:
            if (low ^ high) & _HALF == 0:
                pass
            elif low & ~high & _QUARTER:
                # middle-straddle: drop the second-highest bit everywhere
                code ^= _QUARTER
                low ^= _QUARTER
                high ^= _QUARTER
            else:
                break
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
            code = ((code << 1) & _MASK) | self._read_bit()
        self._low = low
        self._high = high
        self._code = code
        return symbol


def check_cmf(cmf, precision: int) -> None:
    """Validate a cumulative table: starts at 0, strictly increasing, ends at 2^precision."""
    total = 1 << precision
    if int(cmf[0]) != 0:
        raise ValueError("cmf must start at 0")
    if int(cmf[-1]) != total:
        raise ValueError(f"cmf must end at 2^{precision}")
    if total > MAX_TOTAL:
        raise ValueError(f"table precision too high for 32-bit coder state")
    prev = 0
    for v in cmf[1:]:
        v = int(v)
        if v <= prev:
            raise ValueError("cmf must be strictly increasing")
        prev = v


def _selftest() -> None:  # pragma: no cover
    import random

    rng = random.Random(0)
    for _ in range(50):
        n = rng.randint(2, 40)
        freqs = [rng.randint(1, 500) for _ in range(n)]
        cmf = [0]
        for f in freqs:
            cmf.append(cmf[-1] + f)
        syms = [rng.randrange(n) for _ in range(rng.randint(0, 2000))]
        enc = RangeEncoder()
        for s in syms:
            enc.encode(cmf, s)
        payload = enc.finish()
        dec = RangeDecoder(payload)
        back = [dec.decode(cmf) for _ in syms]
        assert back == syms


if __name__ == "__main__":  # pragma: no cover
    _selftest()
    print("ok")
