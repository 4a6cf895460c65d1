"""Three-phase curriculum: phase boundaries, style weight, mask coefficient, lr."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

PHASE_II_START = 500
PHASE_III_START = 1500
LAMBDA_STYLE_INIT = 0.8
LAMBDA_MIN, LAMBDA_MAX = 1e-4, 10.0
LR_START, LR_END = 1e-3, 1e-4


class Phase(enum.IntEnum):
    I = 1
    II = 2
    III = 3


@dataclass(frozen=True)
class PhaseSpec:
    phase: Phase
    start: int
    stop: int | None  # exclusive; None means open-ended
    mask_k: float
    lambda_style_init: float | None


PHASES = (
    PhaseSpec(Phase.I, 0, PHASE_II_START, -1.5, LAMBDA_STYLE_INIT),
    PhaseSpec(Phase.II, PHASE_II_START, PHASE_III_START, 0.5, None),
    PhaseSpec(Phase.III, PHASE_III_START, None, 1.2, None),
)


def phase_of(iteration: int) -> Phase:
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    if iteration < PHASE_II_START:
        return Phase.I
    if iteration < PHASE_III_START:
        return Phase.II
    return Phase.III


def update_lambda_style(lambda_prev: float, delta_fid: float, eta_lambda: float = 0.1) -> float:
    if not lambda_prev > 0:
        raise ValueError("lambda_prev must be positive")
    # clamp in log space so extreme trends cannot overflow exp
    log_lam = math.log(lambda_prev) - eta_lambda * delta_fid
    if log_lam >= math.log(LAMBDA_MAX):
        return LAMBDA_MAX
    if log_lam <= math.log(LAMBDA_MIN):
        return LAMBDA_MIN
    return min(max(lambda_prev * math.exp(-eta_lambda * delta_fid), LAMBDA_MIN), LAMBDA_MAX)


def mask_k_for_phase(phase: Phase) -> float:
    return PHASES[Phase(phase) - 1].mask_k


def lr_schedule(iteration: int, total_iters: int) -> float:
    """Geometric decay from 1e-3 to 1e-4 across the run."""
    if total_iters <= 0:
        raise ValueError("total_iters must be positive")
    if iteration <= 0:
        return LR_START
    if iteration >= total_iters:
        return LR_END
    return LR_START * 0.1 ** (iteration / total_iters)


@dataclass(frozen=True)
class CurriculumState:
    iteration: int = 0
    phase: Phase = Phase.I
    lambda_style: float = LAMBDA_STYLE_INIT
    eta_lambda: float = 0.1
    lr: float = LR_START
    total_iters: int = 3000
    last_val_distance: float | None = None

    def __post_init__(self):
        if self.lambda_style <= 0:
            raise ValueError("lambda_style must be positive")
        if phase_of(self.iteration) != self.phase:
            raise ValueError(f"phase {self.phase.name} inconsistent with iteration {self.iteration}")

    @property
    def freeze_style(self) -> bool:
        return self.phase is Phase.III

    @property
    def balance_gradients(self) -> bool:
        return self.phase is Phase.III

    @property
    def mask_k(self) -> float:
        return mask_k_for_phase(self.phase)

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "phase": self.phase.name,
            "lambda_style": self.lambda_style,
            "eta_lambda": self.eta_lambda,
            "lr": self.lr,
            "total_iters": self.total_iters,
            "last_val_distance": self.last_val_distance,
            "freeze_style": self.freeze_style,
            "balance_gradients": self.balance_gradients,
        }


def initial_state(total_iters: int = 3000, eta_lambda: float = 0.1) -> CurriculumState:
    return CurriculumState(eta_lambda=eta_lambda, total_iters=total_iters,
                           lr=lr_schedule(0, total_iters))


def step(state: CurriculumState, val_distance: float) -> CurriculumState:
    """Advance one iteration given the latest validation distance.

    Phase I pins the style weight; later phases move it by the change in
    validation distance since the previous step.
    """
    it = state.iteration + 1
    phase = phase_of(it)
    lam = state.lambda_style
    if phase is Phase.I:
        lam = LAMBDA_STYLE_INIT
    elif state.last_val_distance is not None:
        lam = update_lambda_style(lam, val_distance - state.last_val_distance, state.eta_lambda)
    return dataclasses.replace(
        state,
        iteration=it,
        phase=phase,
        lambda_style=lam,
        lr=lr_schedule(it, state.total_iters),
        last_val_distance=val_distance,
    )
