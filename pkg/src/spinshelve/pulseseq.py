"""A small pulse-sequence language and its compiler.

Source is line oriented; ``;`` also ends a statement and ``#`` starts a
comment::

    channels laser, mw
    sweep tau = 2ns .. 150ns step 2ns      # or: sweep tau = [2ns, 50ns, 150ns]
    block laser on 3000ns
    block laser off tau
    repeat 2 { block laser on 10ns; block laser off 5ns }

Every channel owns an independent track that starts at t = 0.  Blocks
append to their channel's track, so directives on one channel never
overlap.  The compiled :class:`Timeline` lists on/off edges per channel on
an integer grid of ``resolution`` ns.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Union

from .errors import SequenceError, SequenceSyntaxError

log = logging.getLogger(__name__)

UNITS = {"ns": 1.0, "us": 1000.0}
KEYWORDS = {"channels", "sweep", "block", "repeat", "step", "on", "off"}


@dataclass(frozen=True)
class Duration:
    """A literal (``number`` + ``unit``) or a reference to a sweep variable."""

    number: float | None = None
    unit: str = "ns"
    var: str | None = None

    @property
    def ns(self) -> float | None:
        return None if self.number is None else self.number * UNITS[self.unit]

    def resolve(self, bindings: dict[str, float]) -> float:
        if self.var is None:
            return self.ns
        if self.var not in bindings:
            raise SequenceError(f"unbound variable '{self.var}'")
        return float(bindings[self.var])

    def __str__(self):
        return self.var if self.var is not None else f"{_num(self.number)}{self.unit}"


@dataclass(frozen=True)
class Block:
    channel: str
    on: bool
    duration: Duration


@dataclass(frozen=True)
class Repeat:
    count: int
    body: tuple["Statement", ...]


Statement = Union[Block, Repeat]


@dataclass(frozen=True)
class Sweep:
    """Declared sweep variable: either a range (inclusive) or explicit values."""

    name: str
    start: Duration | None = None
    stop: Duration | None = None
    step: Duration | None = None
    items: tuple[Duration, ...] | None = None

    def values(self) -> list[float]:
        if self.items is not None:
            return [d.ns for d in self.items]
        start, stop, step = self.start.ns, self.stop.ns, self.step.ns
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(n)]


@dataclass(frozen=True)
class SequenceSpec:
    channels: tuple[str, ...]
    body: tuple[Statement, ...]
    sweeps: tuple[Sweep, ...] = ()

    def sweep(self, name: str) -> Sweep:
        for s in self.sweeps:
            if s.name == name:
                return s
        raise SequenceError(f"'{name}' is not a declared sweep variable")

    def variables(self) -> set[str]:
        found = set()

        def walk(stmts):
            for st in stmts:
                if isinstance(st, Repeat):
                    walk(st.body)
                elif st.duration.var is not None:
                    found.add(st.duration.var)

        walk(self.body)
        return found


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


# ---------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<duration>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?\s*(?:ns|us)\b)
  | (?P<number>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<dots>\.\.)
  | (?P<punct>[=,;{}\[\]])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SequenceSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "newline":
            toks.append(_Tok("end", "\n", line, col))
            line += 1
            line_start = m.end()
        elif kind == "punct" and m.group() == ";":
            toks.append(_Tok("end", ";", line, col))
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, col))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


# ---------------------------------------------------------------- parser

class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        return SequenceSyntaxError(msg, tok.line, tok.col)

    def take(self, kind=None, text=None) -> _Tok:
        tok = self.tok
        if (kind and tok.kind != kind) or (text and tok.text != text):
            want = text or kind
            got = tok.text if tok.kind not in ("end", "eof") else "end of statement"
            raise self.error(f"expected {want}, got {got!r}")
        self.i += 1
        return tok

    def skip_ends(self):
        while self.tok.kind == "end":
            self.i += 1

    def statements(self, closing=None):
        channels, sweeps, body = [], [], []
        self.skip_ends()
        while not (self.tok.kind == "eof" or (closing and self.tok.text == closing)):
            tok = self.tok
            if tok.kind != "ident" or tok.text not in ("channels", "sweep", "block", "repeat"):
                raise self.error(f"unknown statement {tok.text!r}")
            if tok.text in ("channels", "sweep") and closing:
                raise self.error(f"'{tok.text}' is not allowed inside repeat")
            if tok.text == "channels":
                channels.extend(self.channels())
            elif tok.text == "sweep":
                sweeps.append(self.sweep())
            elif tok.text == "block":
                body.append(self.block())
            else:
                body.append(self.repeat())
            if self.tok.kind == "end":
                self.skip_ends()
            elif not (self.tok.kind == "eof" or (closing and self.tok.text == closing)):
                raise self.error(f"expected end of statement, got {self.tok.text!r}")
        return channels, sweeps, body

    def ident(self, what) -> _Tok:
        tok = self.tok
        if tok.kind != "ident" or tok.text in KEYWORDS:
            raise self.error(f"expected {what} name, got {tok.text!r}")
        self.i += 1
        return tok

    def channels(self):
        self.take("ident", "channels")
        names = [self.ident("channel")]
        while self.tok.text == ",":
            self.i += 1
            names.append(self.ident("channel"))
        return names

    def literal(self) -> Duration:
        tok = self.take("duration")
        m = re.fullmatch(r"(.*?)\s*(ns|us)", tok.text)
        return Duration(float(m.group(1)), m.group(2))

    def sweep(self) -> Sweep:
        self.take("ident", "sweep")
        name = self.ident("sweep variable")
        self.take(text="=")
        if self.tok.text == "[":
            self.i += 1
            items = [self.literal()]
            while self.tok.text == ",":
                self.i += 1
                items.append(self.literal())
            self.take(text="]")
            return Sweep(name.text, items=tuple(items))
        start = self.literal()
        self.take("dots")
        stop = self.literal()
        self.take("ident", "step")
        step_tok = self.tok
        step = self.literal()
        if not step.ns > 0:
            raise self.error("sweep step must be positive", step_tok)
        if stop.ns < start.ns:
            raise self.error("sweep stop lies below start", step_tok)
        return Sweep(name.text, start, stop, step)

    def block(self):
        self.take("ident", "block")
        chan = self.ident("channel")
        state = self.tok
        if state.text not in ("on", "off"):
            raise self.error(f"expected on or off, got {state.text!r}")
        self.i += 1
        tok = self.tok
        if tok.kind == "duration":
            dur = self.literal()
            if not dur.ns > 0:
                raise self.error(f"duration must be positive, got {tok.text}", tok)
        elif tok.kind == "ident" and tok.text not in KEYWORDS:
            self.i += 1
            dur = Duration(var=tok.text)
        elif tok.kind == "number":
            raise self.error(f"duration {tok.text!r} needs a unit (ns or us)")
        else:
            raise self.error(f"expected duration, got {tok.text!r}")
        return _Located(Block(chan.text, state.text == "on", dur), chan, tok)

    def repeat(self):
        self.take("ident", "repeat")
        tok = self.take("number")
        try:
            count = int(tok.text)
        except ValueError:
            raise self.error("repeat count must be an integer", tok) from None
        if count < 1:
            raise self.error("repeat count must be >= 1", tok)
        self.take(text="{")
        channels, sweeps, body = self.statements(closing="}")
        self.take(text="}")
        return _Located(Repeat(count, tuple(body)), tok, tok)


@dataclass
class _Located:
    node: Statement
    chan_tok: _Tok = field(repr=False)
    dur_tok: _Tok = field(repr=False)


def parse(text: str) -> SequenceSpec:
    """Parse DSL source into a checked :class:`SequenceSpec`."""
    if not text.strip() or all(t.kind in ("end", "eof") for t in _tokenize(text)):
        raise SequenceSyntaxError("empty sequence")
    p = _Parser(text)
    channels, sweeps, body = p.statements()
    names = [c.text for c in channels]
    for c in channels:
        if names.count(c.text) > 1:
            raise SequenceSyntaxError(f"channel '{c.text}' declared twice", c.line, c.col)
    sweep_names = [s.name for s in sweeps]
    for s in sweeps:
        if sweep_names.count(s.name) > 1:
            raise SequenceSyntaxError(f"sweep variable '{s.name}' declared twice")
    if not channels:
        raise SequenceSyntaxError("sequence declares no channels")

    def check(items):
        out = []
        for loc in items:
            node = loc.node
            if isinstance(node, Repeat):
                out.append(Repeat(node.count, tuple(check(node.body))))
                continue
            if node.channel not in names:
                raise SequenceSyntaxError(
                    f"undeclared channel '{node.channel}'", loc.chan_tok.line, loc.chan_tok.col
                )
            if node.duration.var is not None and node.duration.var not in sweep_names:
                raise SequenceSyntaxError(
                    f"undeclared variable '{node.duration.var}'", loc.dur_tok.line, loc.dur_tok.col
                )
            out.append(node)
        return out

    return SequenceSpec(tuple(names), tuple(check(body)), tuple(sweeps))


def serialize(spec: SequenceSpec) -> str:
    """Pretty-print ``spec`` back to DSL source (re-parses to an equal spec)."""
    lines = [f"channels {', '.join(spec.channels)}"]
    for s in spec.sweeps:
        if s.items is not None:
            lines.append(f"sweep {s.name} = [{', '.join(str(d) for d in s.items)}]")
        else:
            lines.append(f"sweep {s.name} = {s.start} .. {s.stop} step {s.step}")

    def emit(stmts, indent):
        pad = "    " * indent
        for st in stmts:
            if isinstance(st, Repeat):
                lines.append(f"{pad}repeat {st.count} {{")
                emit(st.body, indent + 1)
                lines.append(f"{pad}}}")
            else:
                lines.append(f"{pad}block {st.channel} {'on' if st.on else 'off'} {st.duration}")

    emit(spec.body, 0)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- compiler

@dataclass(frozen=True)
class Timeline:
    """Per-channel edge lists ``(t_ns, on)`` on a ``resolution`` grid."""

    edges: dict
    duration: float
    resolution: float = 1.0

    @property
    def channels(self) -> tuple[str, ...]:
        return tuple(self.edges)

    def channel(self, name: str) -> tuple[tuple[float, bool], ...]:
        if name not in self.edges:
            raise SequenceError(f"unknown channel '{name}'")
        return self.edges[name]

    def on_intervals(self, name: str) -> list[tuple[float, float]]:
        out, start = [], None
        for t, on in self.channel(name):
            if on:
                start = t
            else:
                out.append((start, t))
        return out

    def to_json(self) -> str:
        return json.dumps(
            {ch: [[t, "on" if on else "off"] for t, on in e] for ch, e in self.edges.items()},
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str, duration: float | None = None, resolution: float = 1.0) -> "Timeline":
        raw = json.loads(text)
        edges = {ch: tuple((float(t), s == "on") for t, s in e) for ch, e in raw.items()}
        if duration is None:
            duration = max((e[-1][0] for e in edges.values() if e), default=0.0)
        return cls(edges, duration, resolution)


def _unroll(stmts, out):
    for st in stmts:
        if isinstance(st, Repeat):
            for _ in range(st.count):
                _unroll(st.body, out)
        else:
            out.append(st)
    return out


def _parse_binding(value) -> float:
    if isinstance(value, str):
        m = re.fullmatch(r"\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*(ns|us)?\s*", value)
        if not m:
            raise SequenceError(f"cannot read duration {value!r}")
        return float(m.group(1)) * UNITS[m.group(2) or "ns"]
    return float(value)


def compile(spec: SequenceSpec, bindings: dict | None = None, resolution: float = 1.0) -> Timeline:  # noqa: A001
    """Unroll, bind and snap ``spec`` into a :class:`Timeline`.

    Boundaries are cumulative per channel and rounded half-up to the
    ``resolution`` grid.  Adjacent blocks with equal state merge into one
    interval.  A sweep declared with a single listed value is a default
    binding that ``bindings`` may override.
    """
    if not resolution > 0:
        raise SequenceError("resolution must be positive")
    defaults = {sw.name: sw.items[0].ns for sw in spec.sweeps if sw.items is not None and len(sw.items) == 1}
    bindings = {**defaults, **{k: _parse_binding(v) for k, v in (bindings or {}).items()}}
    missing = sorted(spec.variables() - bindings.keys())
    if missing:
        raise SequenceError(f"unbound variable{'s' if len(missing) > 1 else ''}: {', '.join(missing)}")

    cursor = {ch: 0.0 for ch in spec.channels}
    ticks = {ch: [] for ch in spec.channels}  # (start_tick, end_tick, on)
    for blk in _unroll(spec.body, []):
        d = blk.duration.resolve(bindings)
        if not d > 0:
            raise SequenceError(f"duration of {blk.channel} block bound to {d} ns; must be positive")
        a = cursor[blk.channel]
        b = a + d
        cursor[blk.channel] = b
        ta, tb = math.floor(a / resolution + 0.5), math.floor(b / resolution + 0.5)
        if abs(b / resolution - tb) > 1e-9:
            log.info("boundary %.6g ns on %s snapped to %.6g ns", b, blk.channel, tb * resolution)
        if tb > ta:
            ticks[blk.channel].append((ta, tb, blk.on))

    edges = {}
    end_tick = 0
    for ch, spans in ticks.items():
        out, state = [], False
        for ta, tb, on in spans:
            if on != state:
                out.append((ta * resolution, on))
                state = on
        last = spans[-1][1] if spans else 0
        if state:
            out.append((last * resolution, False))
        end_tick = max(end_tick, last)
        edges[ch] = tuple(out)
    return Timeline(edges, end_tick * resolution, resolution)


def expand_sweep(spec: SequenceSpec, var: str, values=None, bindings: dict | None = None, resolution: float = 1.0):
    """Compile one timeline per value of sweep variable ``var`` (order kept)."""
    sweep = spec.sweep(var)
    values = sweep.values() if values is None else [_parse_binding(v) for v in values]
    if not values:
        raise SequenceError(f"empty value list for sweep '{var}'")
    out = []
    for v in values:
        b = {**(bindings or {}), var: v}
        out.append((b, compile(spec, b, resolution)))
    return out


def duty_cycle(timeline: Timeline, channel: str) -> float:
    """Fraction of the timeline during which ``channel`` is on."""
    on = sum(b - a for a, b in timeline.on_intervals(channel))
    return on / timeline.duration if timeline.duration > 0 else 0.0


# Sequences behind the reproduced figures.  Timing values are the defaults
# the experiments bind; all of them can be overridden through bindings.
PROTOCOLS = {
    "pl_recovery": """\
# GS repopulation: init pulse, dark period tau, read-out pulse
channels laser
sweep tau = 2ns .. 150ns step 2ns
sweep init = [3000ns]
sweep readout = [3000ns]
block laser on init
block laser off tau
block laser on readout
""",
    "init_time": """\
# laser turned on at t = 1 ns for 6000 ns
channels laser
block laser off 1ns
block laser on 6000ns
""",
    "rabi_buffer": """\
# Rabi with buffer: init, buffer, MW pulse tau, read-out with gate
channels laser, mw, gate
sweep buffer = 5ns .. 150ns step 5ns
sweep tau = 2ns .. 200ns step 2ns
sweep init = [3000ns]
sweep readout = [3000ns]
sweep window = [60ns]
block laser on init
block laser off buffer
block laser off tau
block laser on readout
block mw off init
block mw off buffer
block mw on tau
block gate off init
block gate off buffer
block gate off tau
block gate on window
""",
    "t1": """\
# spin-lattice relaxation: init, dark tau, pi pulse, read-out
channels laser, mw
sweep tau = [1ns, 10ns, 100ns, 1us, 10us, 100us]
sweep tpi = [20ns]
sweep init = [3000ns]
sweep readout = [3000ns]
block laser on init
block laser off tau
block laser off tpi
block laser on readout
block mw off init
block mw off tau
block mw on tpi
""",
    "cw_odmr": """\
# continuous-wave ODMR: laser and microwave on together
channels laser, mw
block laser on 10us
block mw on 10us
""",
}
