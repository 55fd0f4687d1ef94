"""Quality measures, paired-run harness, plots, and the CLI surface."""

import json

import numpy as np
import pytest

from gpearcg import (
    AccelConfig,
    BenchCase,
    GpeParams,
    State,
    bench,
    density_l1_error,
    impr_rho,
    load_records,
    random_state,
    summarize,
    to_spectral,
    write_summary_csv,
)
from gpearcg.dataset import field_to_channels

MILD_ACCEL = AccelConfig(eps1_min=1e-4, eps1_max=1e-1, eps2=1e-7, n_e=5, e0=5e-3)


def state_from_density(grid, rho):
    """Real nonnegative state whose density is exactly rho on the grid."""
    return State(grid=grid, coeffs=to_spectral(np.sqrt(rho).astype(complex), grid))


@pytest.fixture(scope="module")
def trio(grid32):
    x1 = grid32.xs[:, None]
    x2 = grid32.xs[None, :]
    base = np.exp(-(x1**2 + x2**2))
    delta = 0.05 * np.exp(-((x1 - 1) ** 2 + x2**2))
    ref = state_from_density(grid32, base)
    closer = state_from_density(grid32, base + delta)
    farther = state_from_density(grid32, base + 2 * delta)
    return ref, closer, farther


class TestImprRho:
    def test_exact_output_gives_one(self, trio):
        ref, closer, _ = trio
        assert impr_rho(closer, ref, ref) == pytest.approx(1.0, abs=1e-12)

    def test_unchanged_output_gives_zero(self, trio):
        ref, closer, _ = trio
        assert impr_rho(closer, closer, ref) == pytest.approx(0.0, abs=1e-12)

    def test_doubled_density_error_gives_minus_one(self, trio):
        ref, closer, farther = trio
        assert impr_rho(closer, farther, ref) == pytest.approx(-1.0, abs=1e-10)

    def test_exact_input_is_not_applicable(self, trio):
        ref, closer, _ = trio
        assert impr_rho(ref, closer, ref) is None

    def test_density_error_positive_and_symmetric_zero(self, trio):
        ref, closer, _ = trio
        assert density_l1_error(closer, ref) > 0
        assert density_l1_error(ref, ref) == 0.0


def mild_cases(count, n=32, accel=MILD_ACCEL):
    rng = np.random.default_rng(1000)
    cases = []
    for i in range(count):
        params = GpeParams(
            a=20.0, n=n,
            v1=float(rng.uniform(1.0, 1.3)), v2=1.0,
            omega=float(rng.uniform(0.2, 0.4)),
            kappa=float(rng.uniform(20.0, 60.0)),
        )
        cases.append(BenchCase(case_id=f"case{i:03d}", params=params,
                               seed=100 + i, accel=accel))
    return cases


def oracle_provider(case, ref):
    target = field_to_channels(ref)
    return lambda x: target


@pytest.fixture(scope="module")
def record_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("bench") / "records.jsonl"
    records = bench(mild_cases(3), model_provider=oracle_provider,
                    mode="both", out_path=path)
    return path, records


class TestBenchHarness:
    def test_records_round_trip_and_summary_recomputes(self, record_file):
        path, records = record_file
        reloaded = load_records(path)
        assert summarize(reloaded) == summarize(records)

    def test_oracle_strategy_always_saves_iterations(self, record_file):
        _, records = record_file
        for rec in records:
            assert rec.error is None
            assert rec.strategy["iters_saved"] > 0

    def test_quality_fields_present(self, record_file):
        _, records = record_file
        for rec in records:
            ev = rec.strategy["event"]
            assert ev["applied"]
            assert ev["impr_rho"] is not None
            assert rec.strategy["impr_rho"] <= 1.0
            assert isinstance(rec.strategy["same_minimum"], bool)

    def test_summary_csv(self, record_file, tmp_path):
        _, records = record_file
        out = tmp_path / "summary.csv"
        write_summary_csv(summarize(records), out)
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("mode,")
        assert {ln.split(",")[0] for ln in lines[1:]} == {"strategy", "random_apply"}

    def test_classical_runs_are_deterministic_across_modes(self):
        case = mild_cases(1)[0]
        r1 = bench([case], model_provider=oracle_provider, mode="strategy")
        r2 = bench([case], model_provider=oracle_provider, mode="random_apply")
        assert r1[0].classical["iterations"] == r2[0].classical["iterations"]
        assert r1[0].classical["energy"] == r2[0].classical["energy"]

    def test_identity_double_changes_little(self):
        case = mild_cases(1)[0]

        def identity_provider(c, ref):
            return lambda x: x[..., :2]

        recs = bench([case], model_provider=identity_provider, mode="strategy")
        rec = recs[0]
        assert rec.error is None
        ev = rec.strategy["event"]
        assert ev["applied"] and ev["decision"] == "accepted"
        assert ev["indicator"] < 1e-6
        assert abs(rec.strategy["iters_saved"]) <= case.accel.n_e + 25

    def test_mode_and_model_validation(self):
        cases = mild_cases(1)
        with pytest.raises(ValueError):
            bench(cases, model_provider=oracle_provider, mode="nonsense")
        with pytest.raises(ValueError):
            bench(cases, mode="strategy")  # neither model nor provider
        with pytest.raises(ValueError):
            bench(cases, model=lambda x: x, model_provider=oracle_provider,
                  mode="strategy")

    def test_failing_case_logged_not_fatal(self):
        good = mild_cases(1)[0]

        def crashing_provider(case, ref):
            raise RuntimeError("synthetic provider failure")

        recs = bench([good], model_provider=crashing_provider, mode="strategy")
        assert recs[0].error is not None
        summary = summarize(recs)
        assert summary["cases_failed"] == 1


class TestPlots:
    def test_ppm_golden_determinism(self, grid32, tmp_path):
        s = random_state(grid32, 5)
        from gpearcg.plotting import plot_density

        p1, p2 = tmp_path / "a.ppm", tmp_path / "b.ppm"
        plot_density(s, p1)
        plot_density(s, p2)
        assert p1.read_bytes() == p2.read_bytes()
        header = p1.read_bytes()[:15].split(b"\n")
        assert header[0] == b"P6"

    def test_constant_density_uniform_color(self, grid32, tmp_path):
        from gpearcg.plotting import plot_density

        u = np.full(grid32.shape, 1.0 / grid32.a, dtype=complex)
        s = State(grid=grid32, coeffs=to_spectral(u, grid32))
        path = tmp_path / "const.ppm"
        plot_density(s, path)
        blob = path.read_bytes()
        pixels = blob.split(b"\n", 3)[3]
        first = pixels[:3]
        assert pixels == first * (grid32.n * grid32.n)

    def test_gaussian_center_brightest(self, grid32, tmp_path):
        x1 = grid32.xs[:, None]
        x2 = grid32.xs[None, :]
        u = np.exp(-(x1**2 + x2**2) / 2).astype(complex)
        s = State.normalized(grid32, to_spectral(u, grid32))
        from gpearcg.plotting import density_to_rgb, density_of

        img = density_to_rgb(density_of(s))
        n = grid32.n
        center = img[n // 2, n // 2].astype(int).sum()
        corner = img[0, 0].astype(int).sum()
        assert center == 255 * 3
        assert corner < center

    def test_png_and_summary_figures(self, grid32, tmp_path):
        from gpearcg.plotting import plot_bench_summary, plot_density, plot_trace

        s = random_state(grid32, 6)
        plot_density(s, tmp_path / "d.png")
        assert (tmp_path / "d.png").stat().st_size > 0

        records = bench(mild_cases(1), model_provider=oracle_provider, mode="both")
        plot_bench_summary(records, tmp_path / "hist.png")
        assert (tmp_path / "hist.png").stat().st_size > 0

        from gpearcg import EarcgConfig, earcg_solve

        params = GpeParams(a=20.0, n=32)
        _, trace = earcg_solve(random_state(grid32, 1), params, EarcgConfig(tol=1e-6))
        plot_trace(trace, tmp_path / "trace.png")
        assert (tmp_path / "trace.png").stat().st_size > 0

    def test_unknown_extension_rejected(self, grid32, tmp_path):
        from gpearcg.plotting import plot_density

        with pytest.raises(ValueError):
            plot_density(random_state(grid32, 7), tmp_path / "x.bmp")


class TestCli:
    def test_solve_round_trip(self, tmp_path):
        from gpearcg.cli import main, read_trace_jsonl

        cfg = {"n": 32, "kappa": 10.0, "omega": 0.2, "tol": 1e-6}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        trace_path = tmp_path / "trace.jsonl"
        state_path = tmp_path / "final.npz"
        plot_path = tmp_path / "density.ppm"
        rc = main([
            "solve", "--params-file", str(cfg_path), "--seed", "3",
            "--out-trace", str(trace_path), "--out-state", str(state_path),
            "--plot", str(plot_path),
        ])
        assert rc == 0
        doc = read_trace_jsonl(trace_path)
        assert doc["final"]["termination"] == "converged"
        assert doc["rows"][0]["k"] == 0
        assert plot_path.stat().st_size > 0

        out2 = tmp_path / "replot.ppm"
        rc = main(["plot", "--state-file", str(state_path), "--out", str(out2)])
        assert rc == 0
        assert out2.read_bytes() == plot_path.read_bytes()

    def test_gen_data_cli(self, tmp_path):
        from gpearcg.cli import main

        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"n": 32}))
        out = tmp_path / "data.gpds"
        rc = main([
            "gen-data", "--runs", "1", "--seed", "4", "--out", str(out),
            "--params-file", str(cfg_path),
            "--kappa-range", "20", "50", "--omega-range", "0.2", "0.35",
            "--v1-range", "1.0", "1.2",
        ])
        assert rc == 0
        from gpearcg import read_dataset

        samples, meta = read_dataset(out)
        assert meta["n"] == 32
        assert len(samples) == 20
        manifest = json.loads((tmp_path / "data.gpds.manifest.json").read_text())
        assert manifest["kept_runs"] == 1

    def test_accel_solve_and_bench_cli(self, tmp_path):
        from gpearcg import NetworkSpec, save_archive, write_spec_sidecar, zero_archive
        from gpearcg.cli import main

        spec = NetworkSpec(widths=(4, 8, 16, 32, 64))
        save_archive(zero_archive(spec), tmp_path / "model.gpuw")
        write_spec_sidecar(spec, tmp_path / "model.json")

        cfg = {"n": 32, "kappa": 30.0, "omega": 0.3,
               "accel": {"eps2": 1e-6}}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = main([
            "accel-solve", "--model", str(tmp_path / "model.gpuw"),
            "--spec", str(tmp_path / "model.json"),
            "--params-file", str(cfg_path), "--seed", "5",
        ])
        assert rc == 0

        cases = [{"id": "c0", "n": 32, "kappa": 25.0, "omega": 0.25, "seed": 9,
                  "accel": {"eps2": 1e-6}}]
        cases_path = tmp_path / "cases.json"
        cases_path.write_text(json.dumps(cases))
        records_path = tmp_path / "records.jsonl"
        rc = main([
            "bench", "--cases", str(cases_path),
            "--model", str(tmp_path / "model.gpuw"),
            "--spec", str(tmp_path / "model.json"),
            "--mode", "both", "--out", str(records_path),
            "--summary-csv", str(tmp_path / "summary.csv"),
        ])
        assert rc == 0
        assert load_records(records_path)[0].classical["termination"] == "converged"

        rc = main(["summarize", "--records", str(records_path)])
        assert rc == 0
