"""
Two-path degradation environment.

Each N6 interface is GOOD until a Bernoulli trigger fires, then stays BAD for
a fixed dwell time and recovers on its own. Delay observations are the
bad-state penalty plus bounded uniform jitter, clamped at zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np


class Interface(str, enum.Enum):
    N6A = "n6a"  # MEC
    N6B = "n6b"  # cloud

    @property
    def index(self) -> int:
        return 0 if self is Interface.N6A else 1

    @classmethod
    def from_index(cls, index: int) -> "Interface":
        if index == 0:
            return cls.N6A
        if index == 1:
            return cls.N6B
        raise ValueError(f"action index must be 0 or 1, got {index!r}")


INTERFACES = (Interface.N6A, Interface.N6B)


class Condition(enum.Enum):
    GOOD = "good"
    BAD = "bad"


class TriggerMode(str, enum.Enum):
    PER_TRAVERSAL = "traversal"
    PER_STEP = "per-step"


@dataclass(frozen=True)
class PathParams:
    failure_probability: float
    failure_duration_ms: float
    bad_state_delay_ms: float
    base_delay_ms: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.failure_probability <= 1.0:
            raise ValueError(f"failure_probability must be in [0, 1], got {self.failure_probability}")
        if not self.failure_duration_ms > 0:
            raise ValueError(f"failure_duration_ms must be > 0, got {self.failure_duration_ms}")
        if self.bad_state_delay_ms < 0:
            raise ValueError(f"bad_state_delay_ms must be >= 0, got {self.bad_state_delay_ms}")
        if self.base_delay_ms < 0:
            raise ValueError(f"base_delay_ms must be >= 0, got {self.base_delay_ms}")

    @property
    def max_delay_ms(self) -> float:
        return self.base_delay_ms + self.bad_state_delay_ms


# Delay-induction scenario defaults.
PATH_A_DEFAULT = PathParams(failure_probability=0.01, failure_duration_ms=10_000.0, bad_state_delay_ms=800.0)
PATH_B_DEFAULT = PathParams(failure_probability=0.10, failure_duration_ms=20_000.0, bad_state_delay_ms=800.0)


@dataclass(frozen=True)
class EnvConfig:
    path_a: PathParams = PATH_A_DEFAULT
    path_b: PathParams = PATH_B_DEFAULT
    max_jitter_ms: float = 3.0
    trigger_mode: TriggerMode = TriggerMode.PER_TRAVERSAL
    step_ms: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.max_jitter_ms < 0:
            raise ValueError(f"max_jitter_ms must be >= 0, got {self.max_jitter_ms}")
        if not self.step_ms > 0:
            raise ValueError(f"step_ms must be > 0, got {self.step_ms}")
        object.__setattr__(self, "trigger_mode", TriggerMode(self.trigger_mode))

    def params(self, interface: Interface) -> PathParams:
        return self.path_a if Interface(interface) is Interface.N6A else self.path_b

    @property
    def max_rtt_ms(self) -> float:
        """Largest delay any observation can report."""
        return max(self.path_a.max_delay_ms, self.path_b.max_delay_ms) + self.max_jitter_ms


@dataclass
class PathEnvState:
    condition: Condition = Condition.GOOD
    bad_until_ms: Optional[float] = None

    @property
    def is_bad(self) -> bool:
        return self.condition is Condition.BAD


class UniformStream:
    """Block-buffered U[0, 1) draws from a numpy Generator.

    Per-call ``Generator.random()`` dominates the cost of long simulations, so
    draws are taken 4096 at a time. The sequence is identical to drawing one
    by one from the same generator.
    """

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.block = block
        self._buf = rng.random(block)
        self._pos = 0

    def next(self) -> float:
        if self._pos == self.block:
            self._buf = self.rng.random(self.block)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return float(u)


class DegradationEnv:
    """Latent GOOD/BAD state of both N6 paths plus the simulation clock (ms)."""

    def __init__(self, config: EnvConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        if rng is None:
            rng = np.random.default_rng(config.seed)
        self.uniform = UniformStream(rng)
        self.clock_ms = 0.0
        self.states: Dict[Interface, PathEnvState] = {i: PathEnvState() for i in INTERFACES}

    def reset(self):
        """Restore both paths to GOOD and the clock to zero; the rng stream is kept."""
        self.clock_ms = 0.0
        self.states = {i: PathEnvState() for i in INTERFACES}

    def state(self, interface) -> PathEnvState:
        return self.states[Interface(interface)]

    def is_bad(self, interface) -> bool:
        return self.states[Interface(interface)].is_bad

    def force(self, interface, condition: Condition, bad_until_ms: Optional[float] = None):
        """Pin an interface's condition. Test and scenario hook."""
        st = self.states[Interface(interface)]
        st.condition = condition
        st.bad_until_ms = bad_until_ms if condition is Condition.BAD else None

    def advance(self, elapsed_ms: float, traversed: Optional[Interface] = None):
        """Move the clock forward and apply recoveries and failure triggers.

        In PER_TRAVERSAL mode only ``traversed`` draws a trigger (none if it is
        None); in PER_STEP mode both interfaces draw, n6a first. A trigger only
        takes effect on an interface that was GOOD when the step began, so an
        interface recovering at this step gets at least one GOOD observation
        and a BAD dwell is never extended.
        """
        if not elapsed_ms > 0:
            raise ValueError(f"elapsed_ms must be > 0, got {elapsed_ms}")
        self.clock_ms += elapsed_ms
        now = self.clock_ms

        if self.config.trigger_mode is TriggerMode.PER_STEP:
            candidates = INTERFACES
        elif traversed is None:
            candidates = ()
        else:
            candidates = (Interface(traversed),)

        was_bad = {}
        for iface in INTERFACES:
            st = self.states[iface]
            was_bad[iface] = st.is_bad
            if st.is_bad and now >= st.bad_until_ms:
                st.condition = Condition.GOOD
                st.bad_until_ms = None

        for iface in candidates:
            params = self.config.params(iface)
            # draw unconditionally so the stream position never depends on state
            u = self.uniform.next()
            if was_bad[iface] or self.states[iface].is_bad:
                continue
            if u < params.failure_probability:
                st = self.states[iface]
                st.condition = Condition.BAD
                st.bad_until_ms = now + params.failure_duration_ms

    def observe_rtt(self, interface) -> float:
        """Noisy delay (ms) of one round trip over ``interface``; state is untouched."""
        iface = Interface(interface)
        params = self.config.params(iface)
        delay = params.base_delay_ms
        if self.states[iface].is_bad:
            delay += params.bad_state_delay_ms
        j = self.config.max_jitter_ms
        if j > 0:
            delay += j * (2.0 * self.uniform.next() - 1.0)
        return max(0.0, delay)


def expected_bad_fraction(params: PathParams, step_ms: float) -> float:
    """Long-run BAD fraction under PER_STEP triggering, D / (D + step / p)."""
    if params.failure_probability <= 0:
        raise ValueError("expected_bad_fraction is undefined for failure_probability == 0")
    if not step_ms > 0:
        raise ValueError(f"step_ms must be > 0, got {step_ms}")
    d = params.failure_duration_ms
    return d / (d + step_ms / params.failure_probability)
