"""Acceptance suite: nine end-to-end checks covering the whole library.

Each check computes its measurement first, prints a single pass/fail line
(run pytest with -s to see them), then asserts. The rain-robustness checks
rebuild their own ground truth with the synthetic renderer, so the suite
needs no external data. The two large-frame checks (static zero flow and
throughput) dominate the runtime; expect roughly half an hour on one core
for the full file.
"""

import time

import numpy as np
import pytest

from rainflow.bench import endpoint_error, run_suite
from rainflow.decompose import l0_smooth
from rainflow.flow import FlowSolveParams, data_energy, data_energy_gradient
from rainflow.flowio import (
    FlowIOError,
    flow_to_color,
    read_flo,
    read_image,
    write_flo,
    write_image,
)
from rainflow.imagecore import FlowField, Image
from rainflow.pipeline import SolverParams, estimate
from rainflow.rainsim import RainParams, make_static_pair, make_translation_pair, render_streaks
from rainflow.residue import residue_channel, weight_map

from helpers import (
    chroma_background,
    l0_optimum_1d,
    piecewise_strip,
    shifted_pair,
    strip_objective,
    textured_background,
)

# Gray streaks on colorful low-luminance-contrast backgrounds: rain that
# swamps brightness-based matching while barely touching chroma.
ACCEPT_RAIN = dict(streak_count=5000.0, tau_range=(0.0, 0.5), streak_width=1.5)


def _verdict(num, name, ok, detail):
    print(f"\nacceptance {num:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})", flush=True)
    assert ok, f"acceptance {num:02d} {name}: {detail}"


def _border_mask(h, w, border):
    mask = np.zeros((h, w), dtype=bool)
    mask[border:h - border, border:w - border] = True
    return mask


# -- shared heavy runs --------------------------------------------------------
#
# The static-pair estimates feed both the zero-flow check and the energy
# monotonicity check; the ablation suite feeds the ordering check and the
# monotonicity check. Module-scoped fixtures keep each run single.


@pytest.fixture(scope="module")
def static_runs():
    """Ten 512x384 static rainy pairs solved full and plain, with timings."""
    runs = []
    for i in range(10):
        bg = chroma_background(np.random.default_rng(100 + i), 384, 512)
        f1, f2, _ = make_static_pair(bg, RainParams(seed=i, **ACCEPT_RAIN))
        t0 = time.monotonic()
        full = estimate(f1, f2, SolverParams())
        dt_full = time.monotonic() - t0
        plain = estimate(
            f1, f2, SolverParams(use_residue=False, use_decomposition=False)
        )
        runs.append({
            "label": f"static{i}",
            "full_mean": float(full.flow.magnitude().mean()),
            "plain_mean": float(plain.flow.magnitude().mean()),
            "seconds_full": dt_full,
            "traces": [
                [r.total for r in full.energy_trace],
                [r.total for r in plain.energy_trace],
            ],
        })
        print(
            f"  static pair {i}: full {runs[-1]['full_mean']:.5f} px, "
            f"plain {runs[-1]['plain_mean']:.5f} px, {dt_full:.1f}s",
            flush=True,
        )
    return runs


@pytest.fixture(scope="module")
def ablation_run(tmp_path_factory):
    """Five rainy 192x144 translation pairs through the four-mode harness."""
    root = tmp_path_factory.mktemp("ablation")
    shifts = [(3, 1), (-4, 2), (2, -3), (5, 0), (-2, -2)]
    lines = []
    for i, shift in enumerate(shifts):
        bg = chroma_background(np.random.default_rng(200 + i), 144, 192)
        f1, f2, gt = make_translation_pair(bg, shift, RainParams(seed=50 + i, **ACCEPT_RAIN))
        write_image(f1, root / f"pair{i}_1.png")
        write_image(f2, root / f"pair{i}_2.png")
        write_flo(gt, root / f"pair{i}_gt.flo")
        lines.append(f"pair{i}_1.png pair{i}_2.png pair{i}_gt.flo pair{i}")
    manifest = root / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    t0 = time.monotonic()
    report = run_suite(manifest, SolverParams(), border=10)
    return {"report": report, "seconds": time.monotonic() - t0}


# -- the nine checks ----------------------------------------------------------


def test_01_residue_suppression_tracks_opacity():
    # Gray streaks scale the chroma extent by exactly (1 - opacity):
    # compositing each channel toward a shared radiance shrinks the
    # max-minus-min spread by that factor and nothing else.
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng(300 + i)
        h = int(rng.integers(48, 160))
        w = int(rng.integers(48, 160))
        bg = chroma_background(rng, h, w) if i % 2 == 0 else textured_background(rng, h, w)
        params = RainParams(
            tau_range=(0.0, 0.5),
            streak_count=float(rng.integers(500, 6000)),
            streak_width=float(rng.uniform(1.0, 3.0)),
            seed=1000 + i,
        )
        render = render_streaks(bg, params)
        predicted = (1.0 - render.tau_map) * residue_channel(bg).plane(0)
        dev = float(np.abs(residue_channel(render.image).plane(0) - predicted).max())
        worst = max(worst, dev)
    _verdict(1, "residue suppression", worst < 1e-6,
             f"max deviation {worst:.3g}, bound 1e-06")


def test_02_static_rain_yields_zero_flow(static_runs):
    worst_mean = max(r["full_mean"] for r in static_runs)
    worst_ratio = max(
        r["full_mean"] / r["plain_mean"] for r in static_runs if r["plain_mean"] > 0
    )
    worst_time = max(r["seconds_full"] for r in static_runs)
    ok = worst_mean <= 0.05 and worst_ratio <= 0.2 and worst_time <= 120.0
    _verdict(2, "static zero flow", ok,
             f"worst mean |flow| {worst_mean:.4f} px (bound 0.05), "
             f"worst full/plain ratio {worst_ratio:.4f} (bound 0.2), "
             f"slowest pair {worst_time:.1f}s (bound 120s)")


def test_03_clean_translation_recovered():
    bg = textured_background(np.random.default_rng(400), 128, 128)
    f1, f2, gt = make_translation_pair(bg, (2, 0), RainParams(streak_count=0.0))
    result = estimate(f1, f2, SolverParams())
    stats = endpoint_error(result.flow, gt, valid=_border_mask(128, 128, 10))
    _verdict(3, "clean translation", stats.avg_epe <= 0.1,
             f"interior avg EPE {stats.avg_epe:.4f} px, bound 0.1")


def test_04_rain_ablation_ordering(ablation_run):
    summary = ablation_run["report"]["summary"]
    full = summary["full"]["mean_epe"]
    plain = summary["plain"]["mean_epe"]
    no_res = summary["no_residue"]["mean_epe"]
    no_dec = summary["no_decomposition"]["mean_epe"]
    seconds = ablation_run["seconds"]
    ok = (
        summary["full"]["pairs"] == 5
        and full <= 0.8 * plain
        and full <= no_res
        and full <= no_dec
        and seconds <= 900.0
    )
    _verdict(4, "rain ablation", ok,
             f"mean EPE full {full:.4f} / no_residue {no_res:.4f} / "
             f"no_decomposition {no_dec:.4f} / plain {plain:.4f} px, "
             f"{seconds:.0f}s (bound 900s)")


def test_05_smoother_matches_exhaustive_oracle():
    rng = np.random.default_rng(11)
    worst = 1.0
    for _ in range(50):
        row = piecewise_strip(rng)
        for beta in (0.01, 0.1, 1.0):
            out = l0_smooth(Image(row[np.newaxis, :]), beta)
            achieved = strip_objective(out.plane(0)[0], row, beta)
            best = l0_optimum_1d(row, beta)
            worst = max(worst, achieved / max(best, 1e-300))
    _verdict(5, "piecewise smoother vs oracle", worst <= 1.05,
             f"worst objective ratio {worst:.6f}, bound 1.05")


def test_06_outer_energy_never_increases(static_runs, ablation_run):
    traces = [t for r in static_runs for t in r["traces"]]
    for entry in ablation_run["report"]["entries"]:
        for mode_stats in entry["modes"].values():
            traces.append(mode_stats["energy_trace"])
    worst = 0.0
    for trace in traces:
        assert len(trace) >= 1
        for prev, cur in zip(trace, trace[1:]):
            worst = max(worst, cur / prev - 1.0)
    _verdict(6, "outer energy monotone", worst <= 1e-3,
             f"{len(traces)} traces, worst relative increase {worst:.2e}, bound 1e-03")


def test_07_data_gradient_matches_finite_differences():
    worst = 0.0
    cases = [(21, (1, 0), 0.4, 0.3), (22, (0, 1), -0.3, 0.5), (23, (2, 1), 0.25, -0.35)]
    for seed, (dx, dy), au, av in cases:
        rng = np.random.default_rng(seed)
        i1, i2 = shifted_pair(rng, 24, 24, dx, dy)
        r1, r2 = residue_channel(i1), residue_channel(i2)
        wmap = weight_map(i1)
        params = FlowSolveParams()
        ys, xs = np.indices((24, 24), dtype=np.float64)
        u = au * np.sin(xs / 3.0) + 0.2
        v = av * np.cos(ys / 4.0) - 0.1
        flow = FlowField(u, v)
        du, dv = data_energy_gradient(i1, i2, r1, r2, wmap, flow, params)

        h = 1e-6
        px, py = xs + u, ys + v
        # the warped surface is piecewise bilinear: probes must stay inside
        # one cell and off the clamped border so a centered difference sees
        # the same slope as the analytic cell derivative
        inside = (
            (px % 1.0 > 0.05) & (px % 1.0 < 0.95) & (py % 1.0 > 0.05) & (py % 1.0 < 0.95)
            & (px > 1.0) & (px < 22.0) & (py > 1.0) & (py < 22.0)
        )
        candidates = np.argwhere(inside & (np.abs(du) > 1e-6) & (np.abs(dv) > 1e-6))
        picks = candidates[rng.permutation(len(candidates))[:20]]
        assert len(picks) == 20
        for y, x in picks:
            for which in ("u", "v"):
                bump = np.zeros_like(u)
                bump[y, x] = h
                fplus = FlowField(u + bump, v) if which == "u" else FlowField(u, v + bump)
                fminus = FlowField(u - bump, v) if which == "u" else FlowField(u, v - bump)
                fd = (
                    data_energy(i1, i2, r1, r2, wmap, fplus, params)
                    - data_energy(i1, i2, r1, r2, wmap, fminus, params)
                ) / (2 * h)
                grad = (du if which == "u" else dv)[y, x]
                worst = max(worst, abs(fd - grad) / max(abs(fd), abs(grad)))
    _verdict(7, "data-term linearization", worst < 1e-4,
             f"60 probe pixels, worst relative error {worst:.2e}, bound 1e-04")


def test_08_io_roundtrips_and_fuzz_safety(tmp_path):
    rng = np.random.default_rng(31)

    # round-trips: flow values survive as exact float32, 8-bit images exactly
    u = rng.uniform(-40.0, 40.0, (17, 23))
    v = rng.uniform(-40.0, 40.0, (17, 23))
    u[3, 4] = v[3, 4] = 1e10
    flo_path = tmp_path / "field.flo"
    write_flo(FlowField(u, v), flo_path)
    back = read_flo(flo_path)
    flo_ok = np.array_equal(back.u, u.astype(np.float32).astype(np.float64)) and \
        np.array_equal(back.v, v.astype(np.float32).astype(np.float64))
    write_flo(back, tmp_path / "field2.flo")
    flo_ok &= (tmp_path / "field.flo").read_bytes() == (tmp_path / "field2.flo").read_bytes()

    img_ok = True
    levels = Image(np.round(rng.random((9, 13, 3)) * 255.0) / 255.0)
    for suffix in (".png", ".ppm"):
        p = tmp_path / f"frame{suffix}"
        write_image(levels, p)
        img_ok &= np.array_equal(read_image(p).data, levels.data)
    gray = Image(np.round(rng.random((9, 13)) * 255.0) / 255.0)
    write_image(gray, tmp_path / "gray.pgm")
    img_ok &= np.array_equal(read_image(tmp_path / "gray.pgm").data, gray.data)

    # fuzzing: corrupted inputs must fail through the library's own error
    # type, never through a stray struct/numpy/PIL exception
    valid = flo_path.read_bytes()
    failures = 0
    for case in range(1000):
        kind = case % 4
        if kind == 0:
            blob = rng.bytes(int(rng.integers(0, 400)))
        elif kind == 1:
            blob = valid[: int(rng.integers(0, len(valid)))]
        elif kind == 2:
            raw = bytearray(valid)
            for _ in range(int(rng.integers(1, 9))):
                raw[int(rng.integers(0, len(raw)))] = int(rng.integers(0, 256))
            blob = bytes(raw)
        else:
            raw = bytearray(valid)
            raw[4:12] = rng.bytes(8)
            blob = bytes(raw)
        suffix = (".flo", ".png", ".ppm")[case % 3]
        target = tmp_path / f"fuzz{suffix}"
        target.write_bytes(blob)
        try:
            if suffix == ".flo":
                read_flo(target)
            else:
                read_image(target)
        except FlowIOError:
            failures += 1
        # anything else propagates and fails the test

    # the color rendering stays inside [0, 1] on arbitrary finite fields
    col = flow_to_color(back)
    color_ok = float(col.data.min()) >= 0.0 and float(col.data.max()) <= 1.0

    ok = flo_ok and img_ok and color_ok
    _verdict(8, "file round-trips and fuzzing", ok,
             f"round-trips exact, 1000 fuzz cases ({failures} rejected cleanly, "
             f"rest parsed), colors in range")


def test_09_throughput_single_pair():
    bg = chroma_background(np.random.default_rng(900), 388, 584)
    f1, f2, _ = make_static_pair(bg, RainParams(seed=90, **ACCEPT_RAIN))
    t0 = time.monotonic()
    result = estimate(f1, f2, SolverParams())
    seconds = time.monotonic() - t0
    mean_mag = float(result.flow.magnitude().mean())
    ok = seconds <= 120.0 and result.flow.height == 388 and result.flow.width == 584
    _verdict(9, "throughput", ok,
             f"388x584 pair in {seconds:.1f}s (bound 120s), mean |flow| {mean_mag:.4f} px")
