"""Prediction service wrapper that meters attacker access to a classifier.

A session is created per attacked sample.  Semi-black-box access exposes
only `query`, which returns the deterministic class posterior and bumps a
monotone counter.  White-box access adds gradients and Jacobians, which are
free of charge: the meter prices label/score lookups, not calculus.
The wrapped model itself is never reachable through the public surface.
"""

from __future__ import annotations

import enum
from typing import Optional

import numpy as np

from .errors import AccessDenied, QueryBudgetExceeded
from .mlp import MlpModel, class_jacobian, loss_gradient_wrt_input

DEFAULT_QUERY_BUDGET = 20000


class AccessLevel(enum.Enum):
    SEMI_BLACK_BOX = "semi-black-box"
    WHITE_BOX = "white-box"


class OracleSession:
    """One attacker's metered channel to a deployed classifier."""

    def __init__(
        self,
        model: MlpModel,
        access: AccessLevel = AccessLevel.SEMI_BLACK_BOX,
        budget: Optional[int] = DEFAULT_QUERY_BUDGET,
    ):
        self._model = model
        self._access = access
        self._budget = budget
        self._count = 0

    @property
    def access(self) -> AccessLevel:
        return self._access

    @property
    def budget(self) -> Optional[int]:
        return self._budget

    @property
    def query_count(self) -> int:
        return self._count

    @property
    def input_dim(self) -> int:
        return self._model.config.input_dim

    def query(self, x) -> np.ndarray:
        """Deterministic [p_benign, p_malicious] for x; costs one query."""
        if self._budget is not None and self._count >= self._budget:
            raise QueryBudgetExceeded(f"budget of {self._budget} queries spent")
        out = self._model.forward(x)
        self._count += 1
        return out

    def predict(self, x) -> int:
        """Class decision via one metered query; ties go to benign."""
        p = self.query(x)
        return 0 if p[0] >= p[1] else 1

    def grad(self, x, target_class: int) -> np.ndarray:
        """White-box only: input gradient of loss toward target_class."""
        self._require_white_box()
        return loss_gradient_wrt_input(self._model, x, target_class)

    def jacobian(self, x) -> np.ndarray:
        """White-box only: (2, m) Jacobian of class probabilities."""
        self._require_white_box()
        return class_jacobian(self._model, x)

    def _require_white_box(self) -> None:
        if self._access is not AccessLevel.WHITE_BOX:
            raise AccessDenied("gradient access requires a white-box session")
