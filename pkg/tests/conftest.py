import numpy as np
import pytest

from dispatchkd.spectral import ComplexSpectrogram
from dispatchkd.trainer import OracleTeacherConfig, make_sample


def random_spec(rng, C=1, F=33, T=8, scale=1.0):
    data = rng.standard_normal((C, F, T)) + 1j * rng.standard_normal((C, F, T))
    return ComplexSpectrogram(scale * data)


def random_sample(rng, F=97, T=6, C=1, crossover=None, corruption_fraction=0.2):
    """Random toy instance whose magnitude ratios stay clear of the gain range [0.5, 0.75].

    clean = noisy * r with |r| in [0.05, 0.35] U [0.9, 1.6], so for gains in
    [0.5, 0.75] none of the |.| kinks of the L1 metric sit near the gains.
    """
    noisy = random_spec(rng, C, F, T)
    mag = np.where(rng.random((C, F, T)) < 0.5, rng.uniform(0.05, 0.35, (C, F, T)), rng.uniform(0.9, 1.6, (C, F, T)))
    ratio = mag * np.exp(1j * rng.uniform(-np.pi, np.pi, (C, F, T)))
    clean = noisy.with_data(noisy.data * ratio)
    if crossover is None:
        crossover = rng.integers(F // 4, 3 * F // 4, size=T)
    tcfg = OracleTeacherConfig(corruption_fraction, 0.0, int(rng.integers(1 << 30)))
    return make_sample(clean, noisy, tcfg, crossover=crossover)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print one pass/fail line per acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def fd_gradient_mismatch(sample, cfg, gains, h=1e-5, rtol=1e-4, atol=1e-9):
    """Compare the analytic gradient with central differences at ``gains``.

    The selection masks are fixed at the base point so the finite differences
    see the same objective the analytic gradient differentiates. Returns the
    list of bins that violate ``|a - fd| <= rtol * max(|a|, |fd|) + atol``.
    """
    from dispatchkd.trainer import ToyModel, loss_and_grad, selection_masks

    model = ToyModel(gains)
    masks = selection_masks(model, sample, cfg)
    _, grad, _ = loss_and_grad(model, sample, cfg, masks)
    bad = []
    for f in range(gains.size):
        up, dn = gains.copy(), gains.copy()
        up[f] += h
        dn[f] -= h
        fd = (loss_and_grad(ToyModel(up), sample, cfg, masks)[0] - loss_and_grad(ToyModel(dn), sample, cfg, masks)[0]) / (2 * h)
        if abs(grad[f] - fd) > rtol * max(abs(grad[f]), abs(fd)) + atol:
            bad.append((f, grad[f], fd))
    return bad
