"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline;
they are also repeated in the terminal summary.
"""

import time
from functools import lru_cache

import numpy as np

from dispatchkd import cli
from dispatchkd.analysis import PatchCategory, build_series, classify, fit_linear
from dispatchkd.metrics import PatchMetricKind, entry_errors, grid_errors
from dispatchkd.patching import MsspConfig, partition, partition_mssp, reassemble
from dispatchkd.selection import (
    SelectionCriterion,
    dispatch_loss,
    select_patches,
    selected_count,
    total_loss,
)
from dispatchkd.spectral import StftConfig, Waveform, interior_slice, istft, stft
from dispatchkd.trainer import (
    DFKD,
    STANDARD_SCENARIO,
    ToyModel,
    TrainConfig,
    corrupted_region_error,
    loss_and_grad,
    make_synthetic_dataset,
    selection_masks,
    train,
)

from conftest import fd_gradient_mismatch, random_sample, random_spec

SEEDS = range(5)


def test_criterion_1_stft_round_trip(verdict):
    rng = np.random.default_rng(100)
    cfg = StftConfig()
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(-1, 1, 16000)
        s = stft(Waveform(x, 16000), cfg)
        y = istft(s, cfg).samples
        sl = interior_slice(s.frames, 512, 128)
        worst = max(worst, float(np.max(np.abs(y[sl] - x[sl]))))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-6 and elapsed < 5.0,
            f"max interior error {worst:.2e} (<= 1e-6), {elapsed:.2f} s for 100 waveforms (< 5 s)")


def test_criterion_2_partition_bijection(verdict):
    rng = np.random.default_rng(200)
    F, T = 257, 50
    failures = []
    s = random_spec(rng, C=1, F=F, T=T)
    other = random_spec(rng, C=1, F=F, T=T)
    grids = [(f"n={n}", (partition(s, n),), (partition(other, n),)) for n in (1, 7, 10, 20, 40, F)]
    for c in (0, 80, F):
        grids.append((f"mssp crossover={c}", partition_mssp(s, MsspConfig.fixed(10, 40, c, T)),
                      partition_mssp(other, MsspConfig.fixed(10, 40, c, T))))
    for name, gs, gos in grids:
        if not np.array_equal(reassemble(*gs).data, s.data):
            failures.append(f"{name}: round trip")
        for g, go in zip(gs, gos):
            if g.n_patches == 0:
                continue
            pad = ~np.broadcast_to(g.valid[:, None, :], g.patches.shape)
            for kind in PatchMetricKind:
                e = entry_errors(g.patches, go.patches, kind)
                if np.any(e[pad] != 0.0):
                    failures.append(f"{name}: padding contributes to {kind.value}")
        for kind in PatchMetricKind:
            whole = entry_errors(s.data, other.data, kind).sum()
            parts = sum(grid_errors(g, go, kind).sum() for g, go in zip(gs, gos) if g.n_patches)
            if abs(parts - whole) > 1e-9 * whole:
                failures.append(f"{name}: {kind.value} patch sum")
    detail = "; ".join(failures) if failures else f"{len(grids)} layouts exact, padding inert under all metrics"
    verdict(2, not failures, detail)


def _sort_oracle(scores, m):
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    out = np.zeros(len(scores), bool)
    out[ranked[:m]] = True
    return out


def test_criterion_3_selection_oracle(verdict):
    rng = np.random.default_rng(300)
    ks = (1, 50, 80, 100)
    mismatches = cardinality = tied = 0
    for i in range(1000):
        P = 5000 if i == 0 else int(rng.integers(1, 5001))
        kind = i % 4
        if kind == 0:  # every score tied
            es, et = np.full(P, 2.5), np.full(P, 1.0)
            tied += 1
        elif kind == 1:  # heavy ties
            es, et = rng.integers(0, 5, P).astype(float), rng.integers(0, 5, P).astype(float)
        else:
            es, et = rng.random(P), rng.random(P)
        k = ks[(i // 4) % len(ks)]  # independent of the tie pattern
        m = selected_count(P, k)
        mask = select_patches(es, et, SelectionCriterion.TOP_KGS, k)
        cardinality += int(mask.sum() != m or m != -(-P * k // 100))
        mismatches += int(not np.array_equal(mask, _sort_oracle(list(es - et), m)))
    verdict(3, mismatches == 0 and cardinality == 0,
            f"1000 vectors ({tied} all-tied): {mismatches} oracle mismatches, {cardinality} cardinality errors")


def test_criterion_4_loss_algebra(verdict):
    rng = np.random.default_rng(400)
    worst = 0.0
    for kind in PatchMetricKind:
        for _ in range(10):
            s = partition(random_spec(rng, C=2, F=257, T=10), 20)
            t = partition(random_spec(rng, C=2, F=257, T=10), 20)
            mean_kd = grid_errors(t, s, kind).mean()
            worst = max(worst, abs(dispatch_loss(s, t, np.ones(s.n_patches, bool), kind) - mean_kd) / mean_kd)
    endpoints = all(
        total_loss(a, b, 1.0) == a and total_loss(a, b, 0.0) == b for a, b in rng.random((50, 2)) * 10
    )
    half = total_loss(1.0, 3.0, 0.5)
    verdict(4, worst <= 1e-12 and endpoints and half == 2.0,
            f"full-mask mean rel. error {worst:.1e}, endpoints exact={endpoints}, alpha=0.5 on (1, 3) -> {half}")


GRADIENT_METRICS = ["mag-l2", "mag-l1", "complex-l2", "dfkd-low", "dfkd-high", DFKD]


def test_criterion_5_gradient_fidelity(verdict):
    rng = np.random.default_rng(500)
    instances = failures = 0
    for kd in GRADIENT_METRICS:
        for mssp in (None, (10, 40)):
            for _ in range(9):
                sample = random_sample(rng, F=97, T=4)
                se = GRADIENT_METRICS[int(rng.integers(len(GRADIENT_METRICS)))]
                cfg = TrainConfig(
                    alpha=float(rng.uniform(0, 1)), k_percent=float(rng.choice([20, 50, 80, 100])),
                    kd_metric=kd, se_metric=se, mssp=mssp, phase_weight=float(rng.uniform(0, 2)),
                    criterion=SelectionCriterion(rng.choice([c.value for c in SelectionCriterion])),
                )
                gains = rng.uniform(0.5, 0.75, sample.clean.bins)
                failures += bool(fd_gradient_mismatch(sample, cfg, gains))
                instances += 1

    zero_ok = True
    for trial in range(20):
        sample = random_sample(rng, F=100, T=1)
        cfg = TrainConfig(alpha=0.0, k_percent=40, kd_metric=GRADIENT_METRICS[trial % 6])
        model = ToyModel(rng.uniform(0.5, 0.75, 100))
        (mask,) = selection_masks(model, sample, cfg)
        covered = np.repeat(mask, 20)
        _, grad, _ = loss_and_grad(model, sample, cfg)
        zero_ok &= bool(np.all(grad[~covered] == 0.0))
    verdict(5, failures == 0 and instances >= 100 and zero_ok,
            f"{instances - failures}/{instances} instances match finite differences, "
            f"exact zeros on unselected bins={zero_ok}")


def test_criterion_6_regression_and_classification(verdict):
    rng = np.random.default_rng(600)
    worst = 0.0
    for _ in range(200):
        y = rng.normal(0, 10, int(rng.integers(2, 200)))
        j = np.arange(y.size, dtype=float)
        (a_ref, b_ref), *_ = np.linalg.lstsq(np.stack([j, np.ones_like(j)], 1), y, rcond=None)
        a, b = fit_linear(y)
        worst = max(worst, abs(a - a_ref), abs(b - b_ref))
    boundary = (
        classify(-0.01, 2.0, 1.0) is PatchCategory.CHALLENGING
        and classify(0.01, 0.5, 1.0) is PatchCategory.CONVERGED
        and classify(-0.01 - 1e-9, 2.0, 1.0) is PatchCategory.CONVERGING
        and classify(0.01 + 1e-9, 0.5, 1.0) is PatchCategory.EXPLODING
        and classify(0.0, 1.0, 1.0) is PatchCategory.CONVERGED
    )
    J = 10
    steps = np.arange(J + 1)
    rows, labels = [], []
    for _ in range(50):
        rows += [5.0 - rng.uniform(0.1, 0.5) * steps, 0.5 + rng.uniform(0.1, 0.5) * steps,
                 np.full(J + 1, rng.uniform(0, 0.5)), np.full(J + 1, rng.uniform(8, 9))]
        labels += [PatchCategory.CONVERGING, PatchCategory.EXPLODING, PatchCategory.CONVERGED, PatchCategory.CHALLENGING]
    got = [s.category for s in build_series(np.asarray(rows), 0.01)]
    accuracy = float(np.mean([g is l for g, l in zip(got, labels)]))
    verdict(6, worst <= 1e-9 and boundary and accuracy == 1.0,
            f"fit error {worst:.1e} (<= 1e-9), boundary rules={boundary}, planted-label accuracy {accuracy:.0%}")


@lru_cache(maxsize=None)
def _dataset(seed):
    return make_synthetic_dataset(
        STANDARD_SCENARIO["n_samples"], seed,
        corruption_fraction=STANDARD_SCENARIO["corruption_fraction"],
        corruption_gain=STANDARD_SCENARIO["corruption_gain"],
    )


@lru_cache(maxsize=None)
def _corrupted_error(seed, criterion, k_percent):
    data = _dataset(seed)
    cfg = TrainConfig(alpha=0.5, k_percent=k_percent, criterion=criterion, steps=STANDARD_SCENARIO["steps"],
                      checkpoint_interval=STANDARD_SCENARIO["steps"])
    model, _, _ = train(ToyModel.identity(data[0].clean.bins), data, cfg)
    return corrupted_region_error(model, data)


def test_criterion_7_selective_beats_full(verdict):
    start = time.perf_counter()
    wins, detail = 0, []
    for seed in SEEDS:
        sel = _corrupted_error(seed, "kgs", 80)
        full = _corrupted_error(seed, "kgs", 100)
        wins += sel < full
        detail.append(f"{sel:.4g}<{full:.4g}" if sel < full else f"{sel:.4g}>={full:.4g}")
    elapsed = time.perf_counter() - start
    verdict(7, wins >= 4 and elapsed < 60.0,
            f"DISPatch beats full distillation in {wins}/5 seeds ({', '.join(detail)}), {elapsed:.1f} s (< 60 s)")


def test_criterion_8_kgs_is_best_criterion(verdict):
    wins, detail = 0, []
    for seed in SEEDS:
        errors = {c.value: _corrupted_error(seed, c.value, 80) for c in SelectionCriterion}
        best = min(errors, key=errors.get)
        ties = [c for c, e in errors.items() if e == errors["kgs"] and c != "kgs"]
        won = best == "kgs" and not ties
        wins += won
        detail.append(best)
    verdict(8, wins >= 4, f"TopKgs lowest corrupted-region error in {wins}/5 seeds (best per seed: {', '.join(detail)})")


def test_criterion_9_cli_determinism(verdict, tmp_path, capsys):
    argv = ["--seed", "11", "--samples", "2", "--steps", "20"]
    identical = {}
    for command in ("analyze", "distill", "ablate"):
        runs = []
        for name in ("a", "b"):
            out = tmp_path / f"{command}-{name}"
            assert cli.main([command, "--out", str(out), *argv]) == 0
            runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        identical[command] = runs[0] == runs[1]
    reports = []
    for name in ("a", "b"):
        capsys.readouterr()
        assert cli.main(["report", "--out", str(tmp_path / f"distill-{name}")]) == 0
        reports.append(capsys.readouterr().out.encode())
    identical["report"] = reports[0] == reports[1]
    verdict(9, all(identical.values()), f"byte-identical reports: {identical}")
