import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from spinshelve import pulseseq
from spinshelve.errors import SequenceError, SequenceSyntaxError
from spinshelve.pulseseq import Block, Duration, Repeat, SequenceSpec, Sweep, Timeline

CHANNELS = ("laser", "mw", "gate", "trig")
VARS = ("tau", "buffer", "t_x")


@st.composite
def durations(draw, variables=()):
    if variables and draw(st.booleans()):
        return Duration(var=draw(st.sampled_from(variables)))
    unit = draw(st.sampled_from(["ns", "us"]))
    number = draw(st.one_of(st.integers(1, 5000).map(float), st.floats(0.01, 1e4)))
    return Duration(number, unit)


@st.composite
def statements(draw, channels, variables, depth=0):
    if depth < 2 and draw(st.integers(0, 4)) == 0:
        body = draw(st.lists(statements(channels, variables, depth + 1), min_size=1, max_size=3))
        return Repeat(draw(st.integers(1, 4)), tuple(body))
    return Block(draw(st.sampled_from(channels)), draw(st.booleans()), draw(durations(variables)))


@st.composite
def specs(draw):
    channels = tuple(draw(st.lists(st.sampled_from(CHANNELS), min_size=1, max_size=4, unique=True)))
    variables = tuple(draw(st.lists(st.sampled_from(VARS), max_size=3, unique=True)))
    sweeps = []
    for v in variables:
        if draw(st.booleans()):
            items = tuple(draw(st.lists(durations(), min_size=1, max_size=3)))
            sweeps.append(Sweep(v, items=items))
        else:
            a = draw(st.integers(1, 100))
            sweeps.append(Sweep(v, Duration(float(a)), Duration(float(a + draw(st.integers(0, 100)))),
                                Duration(float(draw(st.integers(1, 10))))))
    body = tuple(draw(st.lists(statements(channels, variables), min_size=1, max_size=6)))
    return SequenceSpec(channels, body, tuple(sweeps))


@given(specs())
def test_parse_print_parse_round_trip(spec):
    text = pulseseq.serialize(spec)
    assert pulseseq.parse(text) == spec
    assert pulseseq.serialize(pulseseq.parse(text)) == text


@pytest.mark.parametrize("name", sorted(pulseseq.PROTOCOLS))
def test_protocols_round_trip(name):
    spec = pulseseq.parse(pulseseq.PROTOCOLS[name])
    assert pulseseq.parse(pulseseq.serialize(spec)) == spec


def _bindings(spec, draw_value):
    return {v: draw_value for v in spec.variables()}


@given(specs(), st.integers(1, 500))
def test_compile_is_total_and_well_formed(spec, value):
    tl = pulseseq.compile(spec, _bindings(spec, float(value)))
    assert set(tl.channels) == set(spec.channels)
    for ch in spec.channels:
        edges = tl.channel(ch)
        times = [t for t, _ in edges]
        assert times == sorted(set(times))
        # edges alternate and every on is closed
        assert [on for _, on in edges] == [i % 2 == 0 for i in range(len(edges))]
        assert all(0 <= t <= tl.duration for t in times)
        assert all(t == round(t) for t in times)


@st.composite
def separated_on_blocks(draw):
    n = draw(st.integers(1, 8))
    body = []
    for i in range(n):
        if i or draw(st.booleans()):
            body.append(Block("laser", False, Duration(float(draw(st.integers(1, 50))))))
        body.append(Block("laser", True, Duration(float(draw(st.integers(1, 50))))))
    if draw(st.booleans()):
        body.append(Block("laser", False, Duration(float(draw(st.integers(1, 50))))))
    return n, SequenceSpec(("laser",), tuple(body))


@given(separated_on_blocks())
def test_edge_count_is_twice_the_on_blocks(arg):
    n, spec = arg
    assert len(pulseseq.compile(spec).channel("laser")) == 2 * n


def test_adjacent_blocks_merge():
    spec = pulseseq.parse("channels laser\nblock laser on 5ns\nblock laser on 7ns\nblock laser off 3ns\n")
    assert pulseseq.compile(spec).channel("laser") == ((0.0, True), (12.0, False))


def test_fig2_edges_over_sweep():
    spec = pulseseq.parse(pulseseq.PROTOCOLS["pl_recovery"])
    out = pulseseq.expand_sweep(spec, "tau")
    assert len(out) == 75
    for b, tl in out:
        tau = b["tau"]
        assert tl.channel("laser") == ((0.0, True), (3000.0, False), (3000.0 + tau, True), (6000.0 + tau, False))


def test_snapping_rounds_half_up():
    spec = pulseseq.parse("channels laser\nblock laser off 2.5ns\nblock laser on 1.4ns\n")
    assert pulseseq.compile(spec).channel("laser") == ((3.0, True), (4.0, False))
    tl = pulseseq.compile(spec, resolution=0.5)
    assert tl.channel("laser") == ((2.5, True), (4.0, False))


def test_channels_run_in_parallel():
    spec = pulseseq.parse(pulseseq.PROTOCOLS["rabi_buffer"])
    tl = pulseseq.compile(spec, {"buffer": 100, "tau": 20})
    assert tl.on_intervals("mw") == [(3100.0, 3120.0)]
    assert tl.on_intervals("laser")[1][0] == 3120.0


def test_single_value_sweep_is_overridable_default():
    spec = pulseseq.parse(pulseseq.PROTOCOLS["pl_recovery"])
    tl = pulseseq.compile(spec, {"tau": 10, "init": "1us"})
    assert tl.channel("laser")[1] == (1000.0, False)


def test_unbound_variable_names_it():
    spec = pulseseq.parse(pulseseq.PROTOCOLS["pl_recovery"])
    with pytest.raises(SequenceError, match="tau"):
        pulseseq.compile(spec)


def test_bound_nonpositive_duration():
    spec = pulseseq.parse(pulseseq.PROTOCOLS["pl_recovery"])
    with pytest.raises(SequenceError, match="positive"):
        pulseseq.compile(spec, {"tau": 0})


def test_sweep_expansion_is_pure():
    spec = pulseseq.parse(pulseseq.PROTOCOLS["pl_recovery"])
    before = pulseseq.serialize(spec)
    fwd = pulseseq.expand_sweep(spec, "tau", [2, 4, 6])
    rev = pulseseq.expand_sweep(spec, "tau", [6, 4, 2])
    assert pulseseq.serialize(spec) == before
    assert [tl for _, tl in fwd] == [tl for _, tl in reversed(rev)]
    with pytest.raises(SequenceError):
        pulseseq.expand_sweep(spec, "nope")


@pytest.mark.parametrize(
    "text, fragment, line, column",
    [
        ("channels laser\nblock mw on 5ns\n", "undeclared channel", 2, 7),
        ("channels laser\nblock laser on tau\n", "undeclared variable", 2, 16),
        ("channels laser\nblock laser on 5\n", "unit", 2, 16),
        ("channels laser\nblock laser on 0ns\n", "positive", 2, 16),
        ("channels laser\nwait 5ns\n", "unknown statement", 2, 1),
        ("channels laser\nrepeat 0 { block laser on 5ns }\n", "repeat count", 2, 8),
    ],
)
def test_syntax_errors_carry_location(text, fragment, line, column):
    with pytest.raises(SequenceSyntaxError, match=fragment) as err:
        pulseseq.parse(text)
    assert (err.value.line, err.value.column) == (line, column)


@pytest.mark.parametrize("text", ["", "# only a comment\n", "block laser on 5ns\n"])
def test_empty_or_channelless(text):
    with pytest.raises(SequenceSyntaxError):
        pulseseq.parse(text)


def test_semicolons_comments_and_units():
    spec = pulseseq.parse("channels laser # the only one\nblock laser on 5ns; block laser off 2us")
    tl = pulseseq.compile(spec)
    assert tl.channel("laser") == ((0.0, True), (5.0, False))
    assert tl.duration == 2005.0


def test_repeat_unrolls():
    spec = pulseseq.parse("channels laser\nrepeat 3 {\n block laser on 2ns\n block laser off 3ns\n}\n")
    tl = pulseseq.compile(spec)
    assert len(tl.channel("laser")) == 6
    assert pulseseq.duty_cycle(tl, "laser") == pytest.approx(6 / 15)


def test_timeline_json_round_trip():
    spec = pulseseq.parse(pulseseq.PROTOCOLS["t1"])
    tl = pulseseq.compile(spec, {"tau": 500})
    data = json.loads(tl.to_json())
    assert data["laser"][0] == [0.0, "on"]
    back = Timeline.from_json(tl.to_json(), tl.duration)
    assert back == tl


def test_unknown_channel_query():
    tl = pulseseq.compile(pulseseq.parse("channels laser\nblock laser on 5ns\n"))
    with pytest.raises(SequenceError):
        tl.channel("mw")
