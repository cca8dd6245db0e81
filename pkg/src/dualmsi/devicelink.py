"""Byte-level controller-firmware simulation and capture handshake.

The firmware has three functional states: waiting, sequential capture of
all bands, and single-band capture.  Control bytes move it between them;
potentiometer readings are latched into the eight PWM levels at the
moment a capture starts and cannot change until the firmware returns to
waiting.  Unknown bytes never change state.

Wire grammar (invented for this simulation, one table, little else):

    host -> controller   0x41 'A'            start sequential capture
                         0x42 'B' <band>     capture one band (two-byte frame)
                         0x44 'D'            camera finished exposing (relayed)
    controller -> camera 0x52 'R'            LEDs stable, ready to expose

Timeouts are counted in simulation steps (delivered as ticks), never wall
clock, so every run is deterministic.  The fail-safe on timeout turns the
LEDs off before returning to waiting.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable

from .errors import HandshakeTimeoutError, ValidationError

OP_CAPTURE_ALL = 0x41  # 'A'
OP_CAPTURE_BAND = 0x42  # 'B'
OP_DONE = 0x44  # 'D'
OP_READY = 0x52  # 'R'

#: Tick input: one step of simulated time with no byte on the wire.
TICK = None

N_PWM_CHANNELS = 8  # four top-panel segments + four bottom-panel segments


class Phase(Enum):
    WAITING = "waiting"
    SEQUENTIAL = "sequential"
    SINGLE = "single"


@dataclass(frozen=True)
class FirmwareState:
    """Snapshot of the controller firmware.

    ``pending_opcode`` holds a two-byte command awaiting its argument
    (still functionally waiting).  ``waited`` counts ticks spent waiting
    for the camera in a capture state.
    """

    phase: Phase = Phase.WAITING
    band: int | None = None
    progress: int | None = None
    pwm: tuple[int, ...] = (0,) * N_PWM_CHANNELS
    pending_opcode: int | None = None
    waited: int = 0

    def __post_init__(self):
        if len(self.pwm) != N_PWM_CHANNELS:
            raise ValidationError(f"pwm must have {N_PWM_CHANNELS} channels")
        if any(not 0 <= v <= 255 for v in self.pwm):
            raise ValidationError("pwm levels must lie in [0, 255]")

    @property
    def active_band(self) -> int | None:
        """Index of the band whose LEDs are on, or None in waiting."""
        if self.phase is Phase.SEQUENTIAL:
            return self.progress
        if self.phase is Phase.SINGLE:
            return self.band
        return None


# Firmware output actions, consumed by the event loop / transcript.
@dataclass(frozen=True)
class LedOn:
    band: int


@dataclass(frozen=True)
class LedOff:
    band: int


@dataclass(frozen=True)
class SendReady:
    band: int


@dataclass(frozen=True)
class CaptureComplete:
    pass


@dataclass(frozen=True)
class TimedOut:
    band: int


@dataclass(frozen=True)
class Ignored:
    byte: int


@dataclass(frozen=True)
class FirmwareConfig:
    n_bands: int = 13
    timeout_steps: int = 16

    def __post_init__(self):
        if self.n_bands < 1:
            raise ValidationError("need at least one band")
        if self.timeout_steps < 1:
            raise ValidationError("timeout budget must be >= 1 step")


def _latch(pots: Iterable[int]) -> tuple[int, ...]:
    pwm = tuple(int(v) for v in pots)
    if len(pwm) != N_PWM_CHANNELS or any(not 0 <= v <= 255 for v in pwm):
        raise ValidationError("potentiometer readings must be 8 values in [0, 255]")
    return pwm


def firmware_step(
    state: FirmwareState,
    inp: int | None,
    pots: Iterable[int],
    config: FirmwareConfig = FirmwareConfig(),
):
    """Advance the firmware by one input byte or tick.

    Returns (new_state, actions).  In waiting, the PWM levels track the
    live potentiometer readings; entering a capture state freezes them.
    Unrecognized bytes are ignored in every state.
    """
    pots = _latch(pots)

    if state.phase is Phase.WAITING:
        if state.pending_opcode == OP_CAPTURE_BAND and inp is not TICK:
            band = int(inp)
            if 0 <= band < config.n_bands:
                new = FirmwareState(
                    phase=Phase.SINGLE, band=band, pwm=pots, waited=0
                )
                return new, (LedOn(band), SendReady(band))
            # out-of-range band aborts the frame, stays waiting
            return replace(state, pending_opcode=None, pwm=pots), (Ignored(band),)
        if inp is TICK:
            return replace(state, pwm=pots), ()
        if inp == OP_CAPTURE_ALL:
            new = FirmwareState(phase=Phase.SEQUENTIAL, progress=0, pwm=pots, waited=0)
            return new, (LedOn(0), SendReady(0))
        if inp == OP_CAPTURE_BAND:
            return replace(state, pending_opcode=OP_CAPTURE_BAND, pwm=pots), ()
        return replace(state, pwm=pots), (Ignored(int(inp)),)

    # Capture states: only DONE and time advance matter; PWM is frozen.
    active = state.active_band
    if inp is TICK:
        waited = state.waited + 1
        if waited >= config.timeout_steps:
            return FirmwareState(phase=Phase.WAITING, pwm=state.pwm), (
                LedOff(active),
                TimedOut(active),
            )
        return replace(state, waited=waited), ()
    if inp == OP_DONE:
        if state.phase is Phase.SINGLE:
            return FirmwareState(phase=Phase.WAITING, pwm=state.pwm), (
                LedOff(active),
                CaptureComplete(),
            )
        nxt = state.progress + 1
        if nxt >= config.n_bands:
            return FirmwareState(phase=Phase.WAITING, pwm=state.pwm), (
                LedOff(active),
                CaptureComplete(),
            )
        return replace(state, progress=nxt, waited=0), (
            LedOff(active),
            LedOn(nxt),
            SendReady(nxt),
        )
    return state, (Ignored(int(inp)),)


# --------------------------------------------------------------------------
# Wire message codec (host-side view of the grammar)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WireMessage:
    opcode: int
    band_index: int | None = None

    def encode(self) -> bytes:
        if self.opcode == OP_CAPTURE_BAND:
            if self.band_index is None or not 0 <= self.band_index <= 255:
                raise ValidationError("capture-band frame needs a band byte")
            return bytes([self.opcode, self.band_index])
        if self.band_index is not None:
            raise ValidationError("single-byte message carries no band")
        return bytes([self.opcode])


VALID_SINGLE = {OP_CAPTURE_ALL, OP_DONE, OP_READY}


def decode(data: bytes) -> list[WireMessage]:
    """Parse a byte string into wire messages; rejects unknown opcodes."""
    out = []
    i = 0
    while i < len(data):
        op = data[i]
        if op == OP_CAPTURE_BAND:
            if i + 1 >= len(data):
                raise ValidationError("truncated capture-band frame")
            out.append(WireMessage(op, data[i + 1]))
            i += 2
        elif op in VALID_SINGLE:
            out.append(WireMessage(op))
            i += 1
        else:
            raise ValidationError(f"unknown opcode 0x{op:02x}")
    return out


def encode(messages: Iterable[WireMessage]) -> bytes:
    return b"".join(m.encode() for m in messages)


# --------------------------------------------------------------------------
# Discrete-event capture simulation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    t: int
    party: str
    name: str
    band: int | None = None

    def render(self) -> str:
        line = f"t={self.t} {self.party} {self.name}"
        if self.band is not None:
            line += f" {self.band}"
        return line


class SimCamera:
    """Deterministic camera: exposes for a fixed number of steps, then DONE.

    ``fail`` models a hung camera that never reports completion.
    """

    def __init__(self, exposure_steps: int = 1, fail: bool = False):
        if exposure_steps < 1:
            raise ValidationError("exposure must take at least one step")
        self.exposure_steps = exposure_steps
        self.fail = fail
        self._remaining = None
        self._band = None

    def on_ready(self, band: int) -> None:
        self._remaining = self.exposure_steps
        self._band = band

    def tick(self):
        """Returns ('capture', band), ('done', band) or None this step."""
        if self._remaining is None:
            return None
        if self._remaining == self.exposure_steps:
            self._remaining -= 1
            return ("capture", self._band)
        if self._remaining > 0:
            self._remaining -= 1
            return None
        if self.fail:
            return None
        band = self._band
        self._remaining = None
        self._band = None
        return ("done", band)


class ControllerLink:
    """Event loop binding firmware, camera and transcript together."""

    def __init__(
        self,
        config: FirmwareConfig = FirmwareConfig(),
        camera: SimCamera | None = None,
        pots: Iterable[int] = (128,) * N_PWM_CHANNELS,
    ):
        self.config = config
        self.camera = camera if camera is not None else SimCamera()
        self.pots = tuple(pots)
        self.state = FirmwareState()
        self.t = 0
        self.transcript: list[Event] = []

    def _apply(self, inp) -> tuple:
        self.state, actions = firmware_step(self.state, inp, self.pots, self.config)
        for action in actions:
            if isinstance(action, LedOn):
                self.transcript.append(Event(self.t, "controller", "LED_ON", action.band))
            elif isinstance(action, LedOff):
                self.transcript.append(Event(self.t, "controller", "LED_OFF", action.band))
            elif isinstance(action, SendReady):
                self.transcript.append(Event(self.t, "controller", "READY", action.band))
                self.camera.on_ready(action.band)
            elif isinstance(action, TimedOut):
                self.transcript.append(Event(self.t, "controller", "TIMEOUT", action.band))
        return actions

    def _run_capture(self, first_byte: int, band: int | None = None) -> None:
        self._apply(first_byte)
        if band is not None:
            self._apply(band)
        while self.state.phase is not Phase.WAITING:
            self.t += 1
            emitted = self.camera.tick()
            if emitted is not None:
                kind, cam_band = emitted
                if kind == "capture":
                    self.transcript.append(Event(self.t, "camera", "CAPTURE", cam_band))
                    self._apply(TICK)
                else:
                    self.transcript.append(Event(self.t, "camera", "DONE", cam_band))
                    self._apply(OP_DONE)
            else:
                self._apply(TICK)

    def _raise_if_timed_out(self) -> None:
        if any(e.name == "TIMEOUT" for e in self.transcript):
            raise HandshakeTimeoutError(
                "camera did not report completion within the step budget",
                transcript=self.transcript,
            )


def capture_handshake(
    band: int,
    config: FirmwareConfig = FirmwareConfig(),
    camera: SimCamera | None = None,
) -> list[Event]:
    """Run one single-band capture; returns the five-event transcript.

    Nominal order: LED_ON, READY, CAPTURE, DONE, LED_OFF.  On a camera
    timeout the LED is still turned off (fail-safe) before the error is
    raised; the partial transcript rides on the exception.
    """
    if not 0 <= band < config.n_bands:
        raise ValidationError(f"band {band} outside [0, {config.n_bands})")
    link = ControllerLink(config=config, camera=camera)
    link._run_capture(OP_CAPTURE_BAND, band)
    link._raise_if_timed_out()
    return link.transcript


def run_sequential_capture(
    config: FirmwareConfig = FirmwareConfig(),
    camera: SimCamera | None = None,
) -> list[Event]:
    """Capture every band in order: B interleaved handshakes."""
    link = ControllerLink(config=config, camera=camera)
    link._run_capture(OP_CAPTURE_ALL)
    link._raise_if_timed_out()
    return link.transcript


def render_transcript(events: Iterable[Event]) -> str:
    return "\n".join(e.render() for e in events) + "\n"
