"""Independent high-precision reference values for the test suites.

Run with `python3 tests/oracles/oracles.py`; the printed numbers are frozen
into tests/oracle_values.hpp. Everything here uses mpmath quadrature and
root finding directly on densities, never the library's formulas.
"""

import sys

from mpmath import mp, mpf, exp, log, sqrt, quad, npdf, ncdf, findroot, diff, erfinv, pi, inf

mp.dps = 30


def mixture(weights, variances):
    ws = [mpf(w) for w in weights]
    vs = [mpf(v) for v in variances]

    def pdf(x):
        return sum(w * npdf(x, 0, sqrt(v)) for w, v in zip(ws, vs))

    def cdf(x):
        return sum(w * ncdf(x / sqrt(v)) for w, v in zip(ws, vs))

    return ws, vs, pdf, cdf


def entropy(m):
    ws, vs, pdf, _ = m
    s = sqrt(max(vs))
    pts = [-40 * s, -8 * s, -2 * s, -1, 0, 1, 2 * s, 8 * s, 40 * s]
    return quad(lambda x: pdf(x) * (log(pdf(x)) - log(npdf(x))), pts)


def fisher(m):
    ws, vs, pdf, _ = m
    s = sqrt(max(vs))
    score = lambda x: -sum(w * x / v * npdf(x, 0, sqrt(v)) for w, v in zip(ws, vs)) / pdf(x)
    pts = [-40 * s, -8 * s, -2 * s, -1, 0, 1, 2 * s, 8 * s, 40 * s]
    return quad(lambda x: pdf(x) * (score(x) + x) ** 2, pts)


def transport(m, z):
    """T(z) with F(T(z)) = Phi(z): safeguarded Newton on the left half, by symmetry."""
    ws, vs, pdf, cdf = m
    if z > 0:
        return -transport(m, -z)
    if z == 0:
        return mpf(0)
    target = ncdf(z)
    f = lambda x: cdf(x) - target
    lo, hi = mpf(-1), mpf(0)
    while f(lo) > 0:
        lo *= 2
    x = z * sqrt(sum(w * v for w, v in zip(ws, vs)))
    if not lo < x < hi:
        x = (lo + hi) / 2
    for _ in range(400):
        fx = f(x)
        if fx > 0:
            hi = x
        else:
            lo = x
        step = fx / pdf(x)
        nxt = x - step
        if not lo < nxt < hi:
            nxt = (lo + hi) / 2
        if abs(nxt - x) < mpf(10) ** -28 * (1 + abs(x)):
            return nxt
        x = nxt
    return x


def crossings(m):
    """Zeros of T(z) - z on [-12, 12]; |T - z| has a kink at each one."""
    g = lambda z: transport(m, z) - z
    out, prev = [], None
    for i in range(-240, 241):
        z = mpf(i) / 20
        v = g(z)
        if prev is not None and v * prev < 0:
            out.append(findroot(g, (z - mpf(1) / 20, z), solver="anderson"))
        prev = v
    return out


def wasserstein(m, p):
    f = lambda z: abs(transport(m, z) - z) ** p * npdf(z)
    pts = [mpf(i) / 2 for i in range(-24, 25)] + crossings(m)
    return quad(f, sorted(set(pts)))


def log_semigroup(m, tau, x):
    """ln E f(x + sqrt(tau) Z) with f = dmu/dgamma, by direct quadrature."""
    ws, vs, pdf, _ = m
    tau = mpf(tau)
    st = sqrt(tau)
    s = sqrt(max(vs))
    integrand = lambda z: pdf(x + st * z) / npdf(x + st * z) * npdf(z)
    if tau == 0:
        return log(pdf(x) / npdf(x))
    return log(quad(integrand, [-inf, -10, -3, 0, 3, 10, inf]))


def drift(m, t, x):
    return diff(lambda y: log_semigroup(m, 1 - mpf(t), y), mpf(x))


def drift_by_quadrature(m, t, x):
    """d/dx ln E f(x + sqrt(tau) Z), differentiated under the integral sign."""
    ws, vs, pdf, _ = m
    st = sqrt(1 - mpf(t))
    ratio = lambda y: pdf(y) / npdf(y)
    dratio = lambda y: ratio(y) * (y - sum(w * y / v * npdf(y, 0, sqrt(v)) for w, v in zip(ws, vs)) / pdf(y))
    pts = [-inf, -10, -3, 0, 3, 10, inf]
    num = quad(lambda z: dratio(x + st * z) * npdf(z), pts)
    return num / quad(lambda z: ratio(x + st * z) * npdf(z), pts)


def hessian(m, t, x):
    return diff(lambda y: log_semigroup(m, 1 - mpf(t), y), mpf(x), 2)


def show(name, value):
    print(f"{name} = {mp.nstr(value, 17)}")


def section(name):
    return len(sys.argv) == 1 or name in sys.argv[1:]


if __name__ == "__main__":
    mix_wide = mixture([0.9, 0.1], [1, 10])
    mix_two = mixture([0.5, 0.5], [0.25, 4])
    mix_small = mixture([0.9, 0.1], [0.5, 0.8])
    ce100 = mixture([1 - mpf(1) / 100, mpf(1) / 100], [1, 100])

    for name, m in [] if not section("mixtures") else [("mix_wide", mix_wide), ("mix_two", mix_two), ("mix_small", mix_small), ("ce100", ce100)]:
        show(f"{name}.entropy", entropy(m))
        show(f"{name}.fisher", fisher(m))
        show(f"{name}.w2sq", wasserstein(m, 2))
        show(f"{name}.w1", wasserstein(m, 1))

    if section("counterexample"):
        show("ce100.w2sq", wasserstein(ce100, 2))
        show("mix_two.w1", wasserstein(mix_two, 1))
    for k in [10, 1000] if section("counterexample") else []:
        m = mixture([1 - mpf(1) / k, mpf(1) / k], [1, k])
        show(f"ce{k}.entropy", entropy(m))
        show(f"ce{k}.w2sq", wasserstein(m, 2))

    if not section("drift"):
        sys.exit(0)
    show("mix_two.drift_by_quadrature(t=0.5, x=-1.3)", drift_by_quadrature(mix_two, 0.5, -1.3))
    for t, x in [(0, 0.7), (0.5, -1.3), (0.9, 2.0)]:
        show(f"mix_two.drift(t={t}, x={x})", drift(mix_two, t, x))
        show(f"mix_two.hessian_log(t={t}, x={x})", hessian(mix_two, t, x))

    # E v_t(X_t)^2 at t = 1/2; X_t is the mixture of N(0, t^2 v + t(1 - t)).
    t = mpf(1) / 2
    mp.dps = 15
    law = mixture([0.5, 0.5], [t * t * mpf("0.25") + t * (1 - t), t * t * 4 + t * (1 - t)])
    show("mix_two.E|v_half|^2", quad(lambda x: drift_by_quadrature(mix_two, t, x) ** 2 * law[2](x), [-12, -4, 0, 4, 12]))

    C = mpf("0.5")
    show("thm1_raw(0.5)", (C + 1) * (2 - 2 * C + (C + 1) * log(C)) / (C - 1) ** 3)
    for C in [1 - mpf("1e-4"), 1 + mpf("1e-4")]:
        show(f"thm1_raw({mp.nstr(C, 6)})", (C + 1) * (2 - 2 * C + (C + 1) * log(C)) / (C - 1) ** 3)
    lam = mpf("0.5")
    show("g(0.5)", (2 * (1 - lam) + (lam + 1) * log(lam)) / (lam - 1))
    show("tail(0.5)", 2 * ncdf(sqrt(mpf("0.5"))) - 1)
    show("bound(0.5)", exp(-mpf("0.25") / 7))

    k = mpf(10) ** 4
    L = log(k)
    r = sqrt(k) / L
    g = lambda y: 0 if abs(y) < r else (1 - 1 / L) * y * y
    cand = [g(y) - (1 - y) ** 2 for y in [r, L, -r]]
    show("Qg_1e4(1.0)", max(0, max(cand)))
    show("inner_radius_1e4", r * (1 - sqrt(1 - 1 / L)))
