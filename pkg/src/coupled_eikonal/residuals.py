"""Residuals of the coupled system ``u.u = 0, v.v = 0, u.v = 1``."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .numkernel import minkowski_dot


class GradientMethod(str, Enum):
    ANALYTIC_U_FD_V = "analytic_u_fd_v"
    FD_BOTH = "fd_both"


@dataclass(frozen=True)
class ResidualReport:
    res_uu: float
    res_vv: float
    res_uv_minus_1: float
    method: GradientMethod
    fd_step: float
    branch_flag: bool = True  # stencil stayed on one branch
    fd_order: int = 2

    @classmethod
    def from_gradients(cls, grad_u, grad_v, method, fd_step, branch_flag=True, fd_order=2) -> "ResidualReport":
        return cls(
            float(minkowski_dot(grad_u, grad_u)),
            float(minkowski_dot(grad_v, grad_v)),
            float(minkowski_dot(grad_u, grad_v) - 1.0),
            GradientMethod(method),
            float(np.max(fd_step)),
            bool(branch_flag),
            int(fd_order),
        )

    @property
    def max_abs(self) -> float:
        return max(abs(self.res_uu), abs(self.res_vv), abs(self.res_uv_minus_1))

    def passes(self, tol: float = 1e-6) -> bool:
        return self.branch_flag and self.max_abs <= tol

    def as_tuple(self) -> tuple[float, float, float]:
        return self.res_uu, self.res_vv, self.res_uv_minus_1
