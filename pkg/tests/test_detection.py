import pytest
from hypothesis import assume, given, settings, strategies as st

from ciota.detection import run_detection, train_model, transition_labels
from ciota.emm import ModelParams
from ciota.traces import AttackSpec, GroundTruthModel, gen_benign_states, gen_benign_trace, inject_attack


def states_of(trace, B=256):
    return [r.address // B for r in trace]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 12), st.integers(2, 4), st.sampled_from([1, 10, 100]))
def test_benign_suffix_scores_without_alerts(seed, n_states, out_degree, k):
    gt = GroundTruthModel.random(n_states, min(out_degree, n_states), seed=seed)
    # enough training that every ground-truth edge is seen
    model = train_model(gen_benign_states(gt, 40_000, seed=seed + 1))
    assume(set(model.counts) == set(gt.chain.probs))
    params = ModelParams(window_k=k, p_thr=0.5 * gt.min_prob())
    # constructive bound: every benign window averages learned edge
    # probabilities, each at least the smallest one
    learned_min = min(c / model.row_totals[i] for (i, _), c in model.counts.items())
    assume(learned_min >= params.p_thr)
    suffix = gen_benign_states(gt, 3000, seed=seed + 2)
    run = run_detection(model, suffix, None, params)
    assert run.alerts == [] and min(run.scores) >= params.p_thr
    assert run.result.fpr == 0.0 and run.result.tpr is None


@pytest.mark.parametrize("seed", range(5))
def test_injection_window_scores_below_benign(seed):
    gt = GroundTruthModel.random(16, 4, seed=seed, regular=True, n_regions=1024)
    model = train_model(gen_benign_states(gt, 50_000, seed=seed))
    trace = gen_benign_trace(gt, 6000, seed=seed + 100)
    out, mask = inject_attack(trace, AttackSpec("code_injection", 3000, 50, seed=seed), gt)
    params = ModelParams(window_k=10, p_thr=0.1)
    run = run_detection(model, states_of(out), mask, params, labeling="window")
    span = transition_labels(mask, 10, "span")
    # windows holding an attack transition are labeled attack; the attack
    # span itself sits strictly below every clean window
    attack_scores = [s for s, y in zip(run.scores, span) if y]
    benign_scores = [s for s, y in zip(run.scores, run.labels) if not y]
    assert max(attack_scores) < min(benign_scores)
    assert run.result.auc == 1.0 and run.result.fpr == 0.0


def test_transition_labels():
    mask = [False] * 5 + [True] + [False] * 10 + [True] + [False] * 3
    assert transition_labels(mask, 2, "span") == transition_labels(mask, 1, "window")
    period = transition_labels(mask, 1, "period")
    assert period.index(True) == 4 and sum(period) == 13
    with pytest.raises(ValueError):
        transition_labels(mask, 1, "other")
