"""Single-agent detection runs: train on benign data, then score a labeled trace."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

from ciota.agent import Alert, AgentState, mock_keyring, monitor_states, new_agent
from ciota.emm import FrequencyMatrix, ModelParams, State, train
from ciota.metrics import EvalResult, evaluate, window_labels
from ciota.traces import attack_period

LABELINGS = ("window", "span", "period")


@dataclass
class DetectionRun:
    scores: list[float]
    labels: list[bool]
    alerts: list[Alert]
    result: EvalResult
    model: FrequencyMatrix


def transition_labels(mask: Sequence[bool], k: int, labeling: str = "window") -> list[bool]:
    """Labels for the score after each transition.

    ``span`` marks only transitions touching an attack record; ``window``
    also marks later scores whose window still holds such a transition;
    ``period`` does the same for the whole stretch from the first to the last
    attack record.
    """
    if labeling == "period":
        return window_labels(attack_period(mask), k)
    if labeling == "window":
        return window_labels(mask, k)
    if labeling == "span":
        return window_labels(mask, 1)
    raise ValueError(f"unknown labeling {labeling!r}")


def detector(model: FrequencyMatrix, params: ModelParams, agent_id: str = "detector") -> AgentState:
    """A post-grace agent holding a copy of ``model``."""
    return new_agent(agent_id, mock_keyring(), params=replace(params, t_grace=0.0), local_model=model.copy())


def run_detection(
    model: FrequencyMatrix,
    states: Sequence[State],
    mask: Optional[Sequence[bool]],
    params: ModelParams,
    *,
    labeling: str = "window",
) -> DetectionRun:
    agent = detector(model, params)
    scores: list[float] = []
    alerts = monitor_states(agent, states, now=0.0, scores_out=scores)
    if mask is None:
        mask = [False] * len(states)
    labels = transition_labels(mask, params.window_k, labeling)
    return DetectionRun(scores, labels, alerts, evaluate(scores, labels, params.p_thr), agent.local_model)


def train_model(states: Sequence[State]) -> FrequencyMatrix:
    return train(FrequencyMatrix(), states)
