"""Numerical identities satisfied by the closed-form laws.

Each check returns a record with the measured value, the target, the
tolerance and a pass flag; :func:`closed_form_checks` runs them all.
"""

import math
import warnings

import numpy as np
from scipy import integrate

from . import closed_form_laws as cfl
from .closed_form_laws import GAP, LOWER, UPPER


def _rec(name, value, target, tol):
    err = abs(value - target)
    return {"name": name, "value": float(value), "target": float(target), "tol": float(tol),
            "error": float(err), "passed": bool(err <= tol)}


def _integral(f, lo=0.0, hi=np.inf, tol=1e-12):
    # split at 1 to help quad with the t -> 0 essential singularities
    if hi == np.inf:
        a = integrate.quad(f, lo, 1.0, epsabs=tol, epsrel=tol, limit=400)[0]
        return a + integrate.quad(f, 1.0, hi, epsabs=tol, epsrel=tol, limit=400)[0]
    return integrate.quad(f, lo, hi, epsabs=tol, epsrel=tol, limit=400)[0]


def heat_kernel_checks():
    out = [_rec("free kernel at t=1", cfl.heat_kernel("free", 1.0, 0.0, 0.0), 1 / math.sqrt(2 * math.pi), 1e-12),
           _rec("halfline kernel vanishes at -a", cfl.heat_kernel("halfline", 1.0, -1.0, 0.0, a=1.0), 0.0, 1e-14)]
    worst = 0.0
    for a, b in ((1.0, 1.0), (GAP, 3 * GAP), (0.5, 2.0)):
        w = a + b
        for t in np.geomspace(0.02, 3.0, 12) * w * w:
            for x in np.linspace(-a, b, 7)[1:-1]:
                for y in np.linspace(-a, b, 7)[1:-1]:
                    r = cfl.heat_kernel("interval", t, x, y, a=a, b=b, method="reflection")
                    s = cfl.heat_kernel("interval", t, x, y, a=a, b=b, method="spectral")
                    worst = max(worst, abs(r - s))
    out.append(_rec("reflection vs spectral interval kernel", worst, 0.0, 1e-10))
    return out


def normalization_checks():
    out = [_rec("q_a at t=1", cfl.exit_density("q_a", 1.0, a=1.0), math.exp(-0.5) / math.sqrt(2 * math.pi), 1e-12),
           _rec("integral of q_a", _integral(lambda t: cfl.exit_density("q_a", t, a=1.0)), 1.0, 1e-6)]
    for a, b in ((1.0, 1.0), (1.0, 3.0), (GAP, 3 * GAP)):
        for side, mass in ((LOWER, b / (a + b)), (UPPER, a / (a + b))):
            val = _integral(lambda t: cfl.exit_density("q_ab", t, a=a, b=b, side=side))
            out.append(_rec(f"integral of q_ab a={a:.4g} b={b:.4g} side={side}", val, mass, 1e-6))
    out.append(_rec("integral of beta(., 2 lambda)", _integral(lambda t: cfl.exit_density("beta", t, x=GAP)), 1.0, 1e-8))
    out.append(_rec("integral of qcheck0",
                    _integral(lambda t: cfl.exit_density("qcheck0", t), tol=1e-9), 1.0, 1e-6))
    return out


def flux_checks():
    out = []
    for a, b in ((1.0, 1.0), (GAP, 3 * GAP)):
        worst = 0.0
        for t in (0.1, 0.5, 1.0, 3.0):
            mass = lambda s: integrate.quad(lambda y: cfl.heat_kernel("interval", s, 0.0, y, a=a, b=b),
                                            -a, b, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
            eps = 1e-4 * t
            deriv = -(mass(t + eps) - mass(t - eps)) / (2 * eps)
            flux = (cfl.exit_density("q_ab", t, a=a, b=b, side=LOWER)
                    + cfl.exit_density("q_ab", t, a=a, b=b, side=UPPER))
            worst = max(worst, abs(flux - deriv))
        out.append(_rec(f"flux identity a={a:.4g} b={b:.4g}", worst, 0.0, 1e-6))
    return out


def chapman_kolmogorov_checks():
    worst = 0.0
    a, b = 1.0, 1.5
    for s, t, x, y in ((0.3, 0.4, 0.0, 0.5), (1.0, 2.0, -0.5, 0.2), (0.05, 0.8, 0.9, -0.9)):
        lhs = integrate.quad(lambda z: cfl.heat_kernel("interval", s, x, z, a=a, b=b)
                             * cfl.heat_kernel("interval", t, z, y, a=a, b=b),
                             -a, b, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
        worst = max(worst, abs(lhs - cfl.heat_kernel("interval", s + t, x, y, a=a, b=b)))
    return [_rec("Chapman-Kolmogorov for the interval kernel", worst, 0.0, 1e-7)]


def marginal_checks():
    out = []
    for a, b in ((GAP, GAP), (GAP, 3 * GAP)):
        for side in (LOWER, UPPER):
            worst = 0.0
            for t2 in (0.3, 1.0, 2.5):
                inner = integrate.quad(lambda t1: cfl.joint_density("tvs", t1, t2, a=a, b=b, side=side),
                                       0.0, t2, epsabs=1e-12, epsrel=1e-12, limit=400)[0]
                worst = max(worst, abs(inner - cfl.exit_density("q_ab", t2, a=a, b=b, side=side)))
            out.append(_rec(f"tvs joint marginal a={a:.4g} b={b:.4g} side={side}", worst, 0.0, 1e-7))
    for a in (1.0, GAP):
        worst = 0.0
        for t2 in (0.3, 1.0, 2.5):
            inner = integrate.quad(lambda t1: cfl.joint_density("fps", t1, t2, a=a), 0.0, t2,
                                   epsabs=1e-12, epsrel=1e-12, limit=400)[0]
            atom = cfl.atom_exit_density("fps", t2, a=a)
            worst = max(worst, abs(inner + atom - cfl.exit_density("q_a", t2, a=a)))
        out.append(_rec(f"fps joint marginal plus atom a={a:.4g}", worst, 0.0, 1e-7))
    # total mass of the fps joint density: 1 minus the tau = 0 atom.  In the
    # coordinates (t1, t2 - t1) the density is a product, so the double
    # integral splits by Fubini.
    gap_mass = _integral(lambda s: cfl.exit_density("beta", s, x=GAP))
    for a in (1.0, GAP):
        tau_part = _integral(lambda t1: cfl.tau_density("fps", t1, a))
        out.append(_rec(f"fps joint total mass plus atom a={a:.4g}",
                        tau_part * gap_mass + cfl.atom_mass("fps", a), 1.0, 1e-6))
    return out


def bridge_checks():
    out = []
    a, v, L = 1.0, -1.5, 2.0
    mass = _integral(lambda t: cfl.bridge_hitting_density("fps", t, a=a, v=v, L=L), 0.0, L)
    out.append(_rec("fps bridge with v <= -a hits surely", mass, 1.0, 1e-6))
    return out


def laplace_checks():
    out = []
    for nu in (0.25, 1.0, 2.0):
        num = _integral(lambda t: math.exp(-nu * t) * cfl.exit_density("beta", t, x=GAP))
        out.append(_rec(f"Bessel-3 Laplace transform nu={nu}", num, cfl.bessel3_laplace(GAP, nu), 1e-8))
    out.append(_rec("Bessel-3 Laplace transform at nu=0", cfl.bessel3_laplace(GAP, 0.0), 1.0, 0.0))
    return out


def closed_form_checks():
    """All identity checks, as a list of records."""
    out = []
    # quad warns about roundoff near its tolerance floor; the records carry
    # the measured error, so the warning adds nothing
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for fn in (heat_kernel_checks, normalization_checks, flux_checks, chapman_kolmogorov_checks,
                   marginal_checks, bridge_checks, laplace_checks):
            out.extend(fn())
    return out
