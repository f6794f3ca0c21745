"""ODE integration through the autodiff tape (discretize-then-optimize).

Fixed-step Euler and RK4 take `substeps` equal steps per requested interval;
the adaptive Dormand-Prince 5(4) controls its own step but always lands
exactly on the requested times. Gradients flow by ordinary backprop through
the recorded steps; no adjoint method.
"""

import numpy as np

from . import autodiff as ad


class IntegrationError(RuntimeError):
    def __init__(self, solver, t, step, detail=""):
        self.solver = solver
        self.t = t
        self.step = step
        super().__init__(
            f"{solver}: non-finite state at t={t:.6g} (step {step}) {detail}")


SOLVERS = ("euler", "rk4", "dopri")

# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
          187 / 2100, 1 / 40)


def _axpy(z, h, k):
    return ad.add(z, ad.mul(k, ad.Tensor(h)))


def _combine(z, h, ks, coeffs):
    out = z
    for k, c in zip(ks, coeffs):
        if c != 0.0:
            out = ad.add(out, ad.mul(k, ad.Tensor(h * c)))
    return out


def _require_finite(z, solver, t, step):
    if not np.all(np.isfinite(z.data)):
        raise IntegrationError(solver, t, step)


def _euler_interval(deriv, z, t0, t1, substeps, step_base):
    h = (t1 - t0) / substeps
    for s in range(substeps):
        t = t0 + s * h
        z = _axpy(z, h, deriv(z, t))
        _require_finite(z, "euler", t + h, step_base + s)
    return z


def _rk4_interval(deriv, z, t0, t1, substeps, step_base):
    h = (t1 - t0) / substeps
    for s in range(substeps):
        t = t0 + s * h
        k1 = deriv(z, t)
        k2 = deriv(_axpy(z, h / 2, k1), t + h / 2)
        k3 = deriv(_axpy(z, h / 2, k2), t + h / 2)
        k4 = deriv(_axpy(z, h, k3), t + h)
        z = _combine(z, h / 6, (k1, k2, k3, k4), (1.0, 2.0, 2.0, 1.0))
        _require_finite(z, "rk4", t + h, step_base + s)
    return z


def _dopri_interval(deriv, z, t0, t1, rtol, atol, max_steps):
    t = t0
    h = t1 - t0
    steps = 0
    while t < t1 - 1e-14:
        h = min(h, t1 - t)  # land exactly on the requested time
        ks = []
        for i in range(7):
            zi = z
            for k, a in zip(ks, _DP_A[i]):
                if a != 0.0:
                    zi = _axpy(zi, h * a, k)
            ks.append(deriv(zi, t + _DP_C[i] * h))
        z5 = z
        for k, b in zip(ks, _DP_B5):
            if b != 0.0:
                z5 = _axpy(z5, h * b, k)
        _require_finite(z5, "dopri", t + h, steps)
        # error estimate on raw values only; step control carries no gradient
        err = np.zeros_like(z.data)
        for k, b5, b4 in zip(ks, _DP_B5, _DP_B4):
            if b5 != b4:
                err += (h * (b5 - b4)) * k.data
        scale = atol + rtol * np.maximum(np.abs(z.data), np.abs(z5.data))
        enorm = float(np.max(np.abs(err) / scale)) if err.size else 0.0
        steps += 1
        if steps > max_steps:
            raise IntegrationError("dopri", t, steps, "step limit exceeded")
        if enorm <= 1.0:
            t = t + h
            z = z5
            grow = 5.0 if enorm == 0.0 else min(5.0, 0.9 * enorm**-0.2)
            h = h * grow
        else:
            h = h * max(0.2, 0.9 * enorm**-0.2)
    return z


def integrate(deriv, z0, times, solver="rk4", substeps=4, rtol=1e-6,
              atol=1e-6, max_steps=100_000):
    """Integrate dz/dt = deriv(z, t) from times[0], returning one state per
    requested time (the first is z0 itself)."""
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}, expected one of {SOLVERS}")
    times = [float(t) for t in times]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError(f"times must be strictly increasing, got {times}")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    z = z0 if isinstance(z0, ad.Tensor) else ad.Tensor(z0)
    _require_finite(z, solver, times[0], 0)
    out = [z]
    for n, (t0, t1) in enumerate(zip(times, times[1:])):
        if solver == "euler":
            z = _euler_interval(deriv, z, t0, t1, substeps, n * substeps)
        elif solver == "rk4":
            z = _rk4_interval(deriv, z, t0, t1, substeps, n * substeps)
        else:
            z = _dopri_interval(deriv, z, t0, t1, rtol, atol, max_steps)
        out.append(z)
    return out
