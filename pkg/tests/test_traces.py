from collections import Counter

import pytest

from ciota.emm import state_of_address, to_markov, train, FrequencyMatrix
from ciota.errors import InvalidInput, InvalidParameter, TraceParseError
from ciota.traces import (
    AttackSpec,
    GroundTruthModel,
    TraceRecord,
    attack_period,
    gen_benign_states,
    gen_benign_trace,
    inject_attack,
    read_labels,
    read_trace,
    write_labels,
    write_trace,
)


def states_of(trace, B=256):
    return [state_of_address(r.address, B) for r in trace]


def test_loop_alternates():
    gt = GroundTruthModel.loop([3, 4])
    trace = gen_benign_trace(gt, 50, seed=1)
    st = states_of(trace)
    assert all(a != b for a, b in zip(st, st[1:])) and set(st) == {3, 4}
    assert all(3 * 256 <= r.address < 5 * 256 for r in trace)
    assert [r.seq for r in trace] == list(range(50))


def test_empirical_frequencies_match():
    gt = GroundTruthModel.random(8, 3, seed=2)
    st = gen_benign_states(gt, 100_000, seed=3)
    pairs = Counter(zip(st, st[1:]))
    rows = Counter(st[:-1])
    for (i, j), p in gt.chain.probs.items():
        assert abs(pairs[(i, j)] / rows[i] - p) < 0.01
    assert set(pairs) <= set(gt.chain.probs)


def test_trace_determinism():
    gt = GroundTruthModel.random(6, 2, seed=0)
    assert gen_benign_trace(gt, 500, seed=9) == gen_benign_trace(gt, 500, seed=9)
    assert gen_benign_trace(gt, 500, seed=9) != gen_benign_trace(gt, 500, seed=10)


def test_ground_truth_validation():
    with pytest.raises(InvalidParameter):
        GroundTruthModel.from_probs({(0, 1): 0.5})
    with pytest.raises(InvalidParameter):
        GroundTruthModel.random(4, 5, seed=0)
    with pytest.raises(InvalidParameter):
        gen_benign_trace(GroundTruthModel.loop([0, 1]), 0, seed=0)
    absorbing = GroundTruthModel.from_probs({(0, 1): 1.0})
    with pytest.raises(InvalidInput):
        gen_benign_states(absorbing, 5, seed=0, start=0)
    regular = GroundTruthModel.random(16, 4, seed=1, regular=True)
    assert set(regular.chain.probs.values()) == {0.25}


def test_zero_length_attack():
    gt = GroundTruthModel.loop([0, 1])
    trace = gen_benign_trace(gt, 20, seed=0)
    out, mask = inject_attack(trace, AttackSpec("code_injection", 5, 0), gt)
    assert out == trace and not any(mask)


def test_injection_uses_unseen_regions():
    gt = GroundTruthModel.random(10, 3, seed=4, n_regions=200)
    trace = gen_benign_trace(gt, 2000, seed=1)
    out, mask = inject_attack(trace, AttackSpec("code_injection", 1000, 30, seed=2), gt)
    assert len(out) == 2030 and sum(mask) == 30
    assert mask[1000:1030] == [True] * 30
    model = to_markov(train(FrequencyMatrix(), states_of(trace)))
    st = states_of(out)
    for t in range(999, 1030):
        assert model.get(st[t], st[t + 1]) == 0.0
    assert all(s not in gt.states for s in st[1000:1030])


def test_injection_without_unused_regions_fails():
    gt = GroundTruthModel.loop([0, 1], n_regions=2)
    with pytest.raises(InvalidInput):
        inject_attack(gen_benign_trace(gt, 10, seed=0), AttackSpec("code_injection", 2, 3), gt)


def test_code_reuse_valid_regions_new_transitions():
    gt = GroundTruthModel.random(12, 3, seed=5)
    trace = gen_benign_trace(gt, 3000, seed=2)
    out, mask = inject_attack(trace, AttackSpec("code_reuse", 500, 20, seed=1), gt)
    st = states_of(out)
    assert all(s in gt.states for s in st)
    for t in range(499, 520):
        assert gt.prob(st[t], st[t + 1]) == 0.0


def test_replay_blip_marks_exactly_length():
    gt = GroundTruthModel.random(12, 3, seed=6)
    trace = gen_benign_trace(gt, 10_000, seed=3)
    out, mask = inject_attack(trace, AttackSpec("replay_blip", 4000, 3), gt)
    assert sum(mask) == 3 and len(out) == 10_003
    (a, b), p = min(gt.chain.probs.items(), key=lambda kv: kv[1])
    assert states_of(out)[4000:4003] == [a, b, a]


def test_repeated_blips_and_period():
    gt = GroundTruthModel.random(12, 3, seed=6)
    trace = gen_benign_trace(gt, 5000, seed=3)
    spec = AttackSpec("replay_blip", 1000, 3, repeats=4, period=500)
    out, mask = inject_attack(trace, spec, gt)
    assert sum(mask) == 12 and len(out) == 5012
    period = attack_period(mask)
    first = mask.index(True)
    last = len(mask) - 1 - mask[::-1].index(True)
    assert first == 1000 and last == 2500 + 9 + 2
    assert period == [first <= k <= last for k in range(len(mask))]
    with pytest.raises(InvalidParameter):
        AttackSpec("replay_blip", 0, 3, repeats=2)
    with pytest.raises(InvalidInput):
        inject_attack(trace, AttackSpec("replay_blip", 4900, 3, repeats=2, period=500), gt)


def test_trace_roundtrip(tmp_path):
    gt = GroundTruthModel.random(6, 2, seed=0)
    trace = gen_benign_trace(gt, 1000, seed=0)
    for hex_addresses in (False, True):
        p = tmp_path / f"t{hex_addresses}.txt"
        write_trace(p, trace, hex_addresses=hex_addresses)
        assert read_trace(p) == trace


def test_trace_mixed_and_empty(tmp_path):
    p = tmp_path / "mixed.txt"
    p.write_text("#ciota-trace v1\n0,0x200\n1,513\n\n2,0X1ff\n")
    assert read_trace(p) == [TraceRecord(0, 512), TraceRecord(1, 513), TraceRecord(2, 511)]
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert read_trace(empty) == []


@pytest.mark.parametrize(
    "body,line",
    [("0,1\n1,zz\n", 3), ("0,1\n0,2\n", 3), ("0;1\n", 2), ("0,-5\n", 2)],
)
def test_trace_parse_errors(tmp_path, body, line):
    p = tmp_path / "bad.txt"
    p.write_text("#ciota-trace v1\n" + body)
    with pytest.raises(TraceParseError) as exc:
        read_trace(p)
    assert exc.value.line == line


def test_labels_roundtrip(tmp_path):
    p = tmp_path / "labels.txt"
    write_labels(p, [True, False, False, True])
    assert read_labels(p) == [True, False, False, True]
    p.write_text("0\n2\n")
    with pytest.raises(TraceParseError):
        read_labels(p)
