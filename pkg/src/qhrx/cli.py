"""Command-line front end: scenario loading, subcommands and run manifests.

Every run writes ``manifest.json`` into the output directory, also when it
fails. Exit codes: 0 success, 2 configuration error, 3 numerical or runtime
failure, 4 a ``--check`` assertion failed.
"""

from __future__ import annotations

import argparse
import contextlib
import copy
import dataclasses
import hashlib
import math
import platform
import sys
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import metadata, resources
from pathlib import Path

import numpy as np
import yaml

from . import cvqkd, qrng, rngtests
from .detector import DetectorModel, clearance, welch_psd
from .dsp import DspConfig
from .errors import ConfigError, QhrxError
from .io import atomic_write_bytes, pack_bits, write_csv, write_json
from .pic_optics import PhaseDrift, PicState, fit_cmrr_scan, scan_lo_phase, scan_vbs, simulate_drift
from .receiver import QRNG_BAND, set_cmrr, simulate_receiver
from .toeplitz import StreamExtractor, ToeplitzExtractor, epsilon_ledger, measure_throughput

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4

# Reference figures asserted by ``--check``.
REF_H_MIN = 11.98
REF_SECURE_RATE = 43.13e9
REF_EXTRACTION_RATE = 43.01e9
REF_SKR = 0.013
CLEARANCE_QKD_BAND = (50e6, 160e6)


# ---------------------------------------------------------------------------
# Scenario


def default_scenario_path() -> Path:
    return Path(str(resources.files("qhrx") / "data" / "default_scenario.yaml"))


def _parse_value(text: str):
    try:
        v = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {text!r}") from exc
    if isinstance(v, str):
        with contextlib.suppress(ValueError):
            return int(v) if v.lstrip("+-").isdigit() else float(v)
    return v


def apply_override(doc: dict, assignment: str) -> None:
    """Apply ``dotted.key=value`` to a nested mapping in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = doc
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"override path {key!r} does not name a section")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = _parse_value(text)


@dataclass
class Scenario:
    """Resolved scenario document plus typed views of its sections."""

    doc: dict
    source: str = "<default>"
    pic: PicState = field(init=False)
    detector: DetectorModel = field(init=False)
    dsp: DspConfig = field(init=False)

    def __post_init__(self):
        for key in ("seed", "pic", "detector", "dsp", "qrng", "qkd", "characterize"):
            if key not in self.doc:
                raise ConfigError(f"scenario lacks section {key!r}")
        if not isinstance(self.doc["seed"], int):
            raise ConfigError("scenario seed must be an explicit integer")
        self.pic = PicState.from_dict(self.doc["pic"])
        self.detector = DetectorModel.from_dict(self.doc["detector"])
        try:
            self.dsp = DspConfig(**self.doc["dsp"])
        except TypeError as exc:
            raise ConfigError(f"malformed dsp section: {exc}") from exc

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    @property
    def qrng(self) -> dict:
        return self.doc["qrng"]

    @property
    def qkd(self) -> dict:
        return self.doc["qkd"]

    @property
    def characterize(self) -> dict:
        return self.doc["characterize"]

    def stage_seed(self, name: str) -> int:
        """Deterministic per-stage seed derived from the root seed."""
        words = np.frombuffer(hashlib.sha256(name.encode()).digest()[:8], dtype=np.uint32)
        return int(np.random.SeedSequence([self.seed, *words.tolist()]).generate_state(1)[0])

    def qkd_params(self) -> cvqkd.QkdParams:
        try:
            return cvqkd.QkdParams(**self.qkd["params"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed qkd.params: {exc}") from exc


def load_scenario(path: str | Path | None = None, overrides=()) -> Scenario:
    src = Path(path) if path else default_scenario_path()
    try:
        with open(src) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {src}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {src}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a mapping")
    doc = copy.deepcopy(doc)
    for o in overrides:
        apply_override(doc, o)
    return Scenario(doc, str(src) if path else "<default>")


# ---------------------------------------------------------------------------
# Run context


@dataclass
class Check:
    name: str
    passed: bool
    value: object
    target: str

    def line(self) -> str:
        return f"CHECK {self.name}: {'PASS' if self.passed else 'FAIL'} value={self.value} target={self.target}"


class StageFailure(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Run:
    out: Path
    threads: int = 1
    plot: bool = False
    outputs: list[Path] = field(default_factory=list)
    checks: list[Check] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    @contextlib.contextmanager
    def stage(self, name: str):
        try:
            yield
        except StageFailure:
            raise
        except Exception as exc:
            raise StageFailure(name, exc) from exc

    def json(self, name: str, obj) -> Path:
        p = self.out / name
        write_json(p, obj)
        self.outputs.append(p)
        return p

    def csv(self, name: str, header, rows) -> Path:
        p = self.out / name
        write_csv(p, header, rows)
        self.outputs.append(p)
        return p

    def figure(self, fn, name: str, *args) -> None:
        if self.plot:
            self.outputs.append(fn(*args, self.out / name))

    def check(self, name: str, passed: bool, value, target: str) -> None:
        self.checks.append(Check(name, bool(passed), value, target))


def _rows(dicts, header):
    return [[d[h] for h in header] for d in dicts]


def _calibration_powers(spec: dict) -> np.ndarray:
    start, stop, step = (float(spec[k]) for k in ("start", "stop", "step"))
    if step <= 0 or stop < start:
        raise ConfigError("calibration power grid needs step > 0 and stop >= start")
    return start + step * np.arange(int(math.floor((stop - start) / step + 1e-9)) + 1)


# ---------------------------------------------------------------------------
# Commands


def cmd_pic_scan(sc: Scenario, run: Run) -> None:
    ch = sc.characterize
    hw, n = float(ch["vbs_scan_half_width_v"]), int(ch["vbs_scan_points"])
    header = ["channel", "voltage_v", "cmrr_db", "model_db"]
    rows, fits = [], {}
    for channel in (1, 2):
        with run.stage(f"vbs{channel}-scan"):
            if n == 0:
                continue
            v = sc.pic.tops_voltages[channel - 1] + np.linspace(-hw, hw, n)
            cm = scan_vbs(sc.pic, sc.detector.responsivities, channel, v)
            fit = fit_cmrr_scan(v, cm)
            fits[f"vbs{channel}"] = {
                "v_balance_v": fit.v_balance,
                "slope_rad_per_v": fit.slope_rad_per_v,
                "imbalance_floor": fit.delta,
                "model_peak_db": fit.peak_db,
                "scan_peak_db": float(cm.max()),
                "fwhm_mv": fit.fwhm_v * 1e3,
            }
            rows += [{"channel": channel, "voltage_v": a, "cmrr_db": b, "model_db": c} for a, b, c in zip(v, cm, fit(v))]
    run.csv("pic_scan_vbs.csv", header, _rows(rows, header))
    poly = sc.pic.phase_polys[2]
    lo, hi = getattr(poly, "voltage_range", (0.0, 2.0 * sc.pic.tops_voltages[2]))
    v_lo = np.linspace(lo, hi, int(ch["lo_scan_points"]))
    lo_rows = [{"voltage_v": a, "delta_theta_deg": b} for a, b in zip(v_lo, scan_lo_phase(sc.pic, v_lo))]
    run.csv("pic_scan_lo.csv", ["voltage_v", "delta_theta_deg"], _rows(lo_rows, ["voltage_v", "delta_theta_deg"]))
    run.json("pic_scan_fit.json", fits)
    run.summary.update(fits)
    for k, f in fits.items():
        run.check(f"{k}_peak", f["scan_peak_db"] >= 73.0, f["scan_peak_db"], ">= 73 dB")
        run.check(f"{k}_fwhm", abs(f["fwhm_mv"] - 2.0) <= 0.1, f["fwhm_mv"], "2.0 +- 0.1 mV")
    from . import plotting

    run.figure(plotting.plot_pic_scan, "pic_scan.png", rows, lo_rows)


def _calibrate(sc: Scenario, run: Run, state: PicState, tag: str) -> qrng.CalibrationSweep:
    q = sc.qrng
    seed = sc.stage_seed(f"calibrate-{tag}")
    run.seeds[f"calibrate-{tag}"] = seed
    return qrng.simulate_calibration(
        state,
        sc.detector,
        _calibration_powers(q["calibration_powers_w"]),
        n_samples=int(q["calibration_samples"]),
        seed=seed,
        trusted=bool(q["trusted_electronics"]),
    )


def _qrng_state(sc: Scenario) -> PicState:
    target = sc.qrng.get("cmrr_db")
    return sc.pic if target is None else set_cmrr(sc.pic, sc.detector, float(target))


def _clearances(sc: Scenario, run: Run, p_lo: float) -> dict:
    n = 1 << 20
    seed = sc.stage_seed("clearance")
    run.seeds["clearance"] = seed
    ss = np.random.SeedSequence(seed).spawn(2)
    dark = simulate_receiver(sc.pic, sc.detector, 0.0, n, np.random.default_rng(ss[0]))
    lit = simulate_receiver(sc.pic, sc.detector, p_lo, n, np.random.default_rng(ss[1]))
    fs = sc.detector.sample_rate_hz
    out = {"lo_power_w": p_lo}
    for c in range(2):
        f, s_el = welch_psd(dark.volts()[c], fs)
        _, s_lo = welch_psd(lit.volts()[c], fs)
        out[f"channel{c}_qrng_band_db"] = clearance((f, s_lo), (f, s_el), QRNG_BAND)
        out[f"channel{c}_qkd_band_db"] = clearance((f, s_lo), (f, s_el), CLEARANCE_QKD_BAND)
    return out


def cmd_calibrate(sc: Scenario, run: Run) -> None:
    with run.stage("calibrate"):
        sweep = _calibrate(sc, run, _qrng_state(sc), "main")
    rec = sweep.record
    h = qrng.min_entropy_conditional(rec.delta_x, rec.delta_p)
    run.json("calibration.json", {**rec.to_dict(), "linear_points": sweep.linear_points, "h_min_conditional_bits": h})
    run.csv(
        "calibration_sweep.csv",
        ["p_lo_w", "var_x_v2", "var_p_v2", "linear", "saturated"],
        [[p, v[0], v[1], int(i < sweep.linear_points), int(s)] for i, (p, v, s) in enumerate(zip(sweep.powers, sweep.variances, sweep.saturated))],
    )
    with run.stage("clearance"):
        clr = _clearances(sc, run, rec.p_lo)
    run.json("clearance.json", clr)
    sweep_rows = []
    with run.stage("cmrr-sweep"):
        for target in sc.qrng.get("cmrr_sweep_db") or []:
            s = _calibrate(sc, run, set_cmrr(sc.pic, sc.detector, float(target)), f"cmrr{target}")
            sweep_rows.append(
                {
                    "cmrr_db": float(target),
                    "p_max_w": s.p_max,
                    "h_min_conditional_bits": qrng.min_entropy_conditional(s.record.delta_x, s.record.delta_p),
                }
            )
    hdr = ["cmrr_db", "p_max_w", "h_min_conditional_bits"]
    run.csv("cmrr_sweep.csv", hdr, _rows(sweep_rows, hdr))
    run.summary.update({"h_min_conditional_bits": h, "p_lo_w": rec.p_lo, **clr})
    run.check("h_min", abs(h - REF_H_MIN) <= 0.05, h, f"{REF_H_MIN} +- 0.05 bit")
    for c in range(2):
        run.check(f"clearance_qrng_ch{c}", abs(clr[f"channel{c}_qrng_band_db"] - 12) <= 1, clr[f"channel{c}_qrng_band_db"], "12 +- 1 dB")
        run.check(f"clearance_qkd_ch{c}", 15 <= clr[f"channel{c}_qkd_band_db"] <= 16, clr[f"channel{c}_qkd_band_db"], "15 to 16 dB")
    by = {r["cmrr_db"]: r["h_min_conditional_bits"] for r in sweep_rows}
    if 40.0 in by and 70.0 in by:
        run.check("cmrr_plateau", by[70.0] - by[40.0] < 0.05, by[70.0] - by[40.0], "< 0.05 bit")
    from . import plotting

    run.figure(plotting.plot_calibration, "calibration.png", sweep.powers, sweep.variances, sweep.linear_points)
    if sweep_rows:
        run.figure(plotting.plot_cmrr_sweep, "cmrr_sweep.png", sweep_rows)


def _make_extractor(sc: Scenario, run: Run, h_per_bit: float, blocks_hint: float = 1) -> ToeplitzExtractor:
    ex = sc.qrng["extractor"]
    n, m = int(ex["n"]), int(ex["m"])
    eps, _ = epsilon_ledger(n, m, h_per_bit, blocks_hint)
    # Large margins underflow; the smallest normal float is still a valid upper bound.
    eps = max(eps, sys.float_info.min)
    if eps >= 1:
        from .errors import ExtractionError

        raise ExtractionError(f"per-run epsilon {eps:.3g} leaves nothing to extract")
    run.seeds["extractor"] = int(ex["seed"])
    return ToeplitzExtractor.from_rng(n, m, int(ex["seed"]), epsilon_per_run=eps, workers=run.threads)


def _test_file(run: Run, data: bytes, substring_len: int) -> rngtests.TestReport:
    return rngtests.run_suite(np.frombuffer(data, dtype=np.uint8), substring_len, workers=run.threads, packed=True)


def _write_test_outputs(run: Run, reports: dict) -> None:
    run.json("rng_report.json", {k: r.to_dict() for k, r in reports.items()})
    rows = rngtests.heatmap_rows(reports)
    hdr = ["file", "test", "pass_ratio", "uniformity_p", "passed"]
    run.csv("rng_heatmap.csv", hdr, [[r["file"], r["test"], r["pass_ratio"], "" if r["uniformity_p"] is None else r["uniformity_p"], int(r["passed"])] for r in rows])
    for name, rep in reports.items():
        run.check(f"rng_{name}", rep.passed, rep.passed, "all tests pass")
    from . import plotting

    run.figure(plotting.plot_heatmap, "rng_heatmap.png", rows)


def cmd_qrng(sc: Scenario, run: Run) -> None:
    q = sc.qrng
    state = _qrng_state(sc)
    with run.stage("calibrate"):
        sweep = _calibrate(sc, run, state, "main")
        rec = sweep.record
        h_cond = qrng.min_entropy_conditional(rec.delta_x, rec.delta_p)
    run.json("calibration.json", rec.to_dict())
    n_total = int(float(q["n_outcomes"]))
    chunk = int(float(q["chunk_outcomes"]))
    counts = np.zeros(1 << 16, dtype=np.int64)
    clipped = 0
    parts = []
    with run.stage("extract"):
        ext = _make_extractor(sc, run, h_cond / qrng.N_BIT)
        stream = StreamExtractor(ext)
        seed = sc.stage_seed("outcomes")
        run.seeds["outcomes"] = seed
        rngs = np.random.SeedSequence(seed).spawn(max(1, -(-n_total // chunk)))
        for i, r in enumerate(rngs):
            m = min(chunk, n_total - i * chunk)
            outcomes, cl = qrng.generate_outcomes(state, sc.detector, rec.p_lo, m, np.random.default_rng(r))
            clipped += cl
            counts += np.bincount(outcomes, minlength=1 << 16)
            parts.append(np.packbits(stream.feed(qrng.outcome_bits(outcomes))))
        out_bits = np.concatenate(parts) if parts else np.zeros(0, np.uint8)
        bits_out = ext.blocks_processed * ext.n
        # Pad bits beyond the last whole block are not part of the output.
        data = np.packbits(np.unpackbits(out_bits)[:bits_out]).tobytes() if bits_out % 8 else out_bits[: bits_out // 8].tobytes()
        p = run.out / "extracted.bin"
        atomic_write_bytes(p, data)
        run.outputs.append(p)
    h_cls = float(-math.log2(counts.max() / counts.sum())) if n_total else 0.0
    r_raw = 2 * (QRNG_BAND[1] - QRNG_BAND[0])
    report = qrng.EntropyReport(h_cond, h_cls, qrng.N_BIT, r_raw, qrng.secure_rate(h_cond, r_raw))
    extraction = {
        "n": ext.n,
        "m": ext.m,
        "blocks": ext.blocks_processed,
        "bits_out": bits_out,
        "epsilon_per_run": ext.epsilon_per_run,
        "epsilon_total": ext.epsilon_total,
        "extraction_rate_bit_per_s": qrng.extraction_rate(ext.n, ext.m, qrng.N_BIT, r_raw),
        "clipped_samples": clipped,
        "pending_bits_discarded": stream.pending_bits,
    }
    run.json("entropy_report.json", report.to_dict())
    run.json("extraction.json", extraction)
    run.summary.update({**report.to_dict(), **extraction})
    with run.stage("rng-test"):
        sub = int(float(q["test_substring_len"]))
        reports = {"extracted.bin": _test_file(run, data, sub)} if bits_out >= sub else {}
    if reports:
        _write_test_outputs(run, reports)
    run.check("h_min", abs(h_cond - REF_H_MIN) <= 0.05, h_cond, f"{REF_H_MIN} +- 0.05 bit")
    run.check("secure_rate", abs(report.r_secure - REF_SECURE_RATE) <= 0.2e9, report.r_secure, "43.13 Gbps +- 0.2 (h_min tolerance)")
    run.check("extraction_rate", abs(extraction["extraction_rate_bit_per_s"] - REF_EXTRACTION_RATE) <= 0.01e9, extraction["extraction_rate_bit_per_s"], "43.01 Gbps +- 0.01")
    run.check("rng_tested", bool(reports), bits_out, f">= {sub} extracted bits")


def cmd_qrng_extract(sc: Scenario, run: Run, input_path: str, h_min_bits: float) -> None:
    with run.stage("read"):
        raw = np.unpackbits(np.frombuffer(Path(input_path).read_bytes(), dtype=np.uint8))
    with run.stage("extract"):
        ext = _make_extractor(sc, run, h_min_bits / qrng.N_BIT)
        y = ext.extract_stream(raw)
        bench = measure_throughput(ext, n_blocks=8)
    p = run.out / "extracted.bin"
    atomic_write_bytes(p, pack_bits(y))
    run.outputs.append(p)
    info = {
        "input_bits": int(raw.size),
        "blocks": ext.blocks_processed,
        "bits_out": int(y.size),
        "discarded_bits": int(raw.size - ext.blocks_processed * ext.m),
        "epsilon_per_run": ext.epsilon_per_run,
        "epsilon_total": ext.epsilon_total,
        "throughput_input_bit_per_s": bench["input_bits_per_s"],
    }
    # Throughput depends on the machine; it stays out of the reproducible JSON.
    print(f"toeplitz throughput {bench['input_bits_per_s'] / 1e6:.1f} Mbit/s input (target 1000)")
    info.pop("throughput_input_bit_per_s")
    run.json("extraction.json", info)
    run.summary.update(info)


def cmd_rng_test(sc: Scenario, run: Run, inputs: list[str]) -> None:
    if not inputs:
        raise ConfigError("rng-test needs at least one --input file")
    sub = int(float(sc.qrng["test_substring_len"]))
    reports = {}
    for path in inputs:
        with run.stage(f"rng-test:{Path(path).name}"):
            reports[Path(path).name] = _test_file(run, Path(path).read_bytes(), sub)
    _write_test_outputs(run, reports)
    run.summary.update({k: r.passed for k, r in reports.items()})


def cmd_qkd_estimate(sc: Scenario, run: Run) -> None:
    q = sc.qkd
    params = sc.qkd_params()
    const = cvqkd.constellation_by_name(q["constellation"])
    seed = sc.stage_seed("qkd-link")
    run.seeds["qkd-link"] = seed
    with run.stage("simulate"):
        a, b = cvqkd.simulate_link(const, params, int(float(q["n_symbols"])), seed)
    with run.stage("estimate"):
        est = cvqkd.estimate_parameters(a, b, params.v_a, params.eta, params.v_el, n_blocks=int(q["n_blocks"]), seed=seed)
    with run.stage("skr"):
        kw = {"iab_method": q["iab_method"], "z_method": q["z_method"]}
        nominal = cvqkd.skr(const, params, **kw)
        measured = cvqkd.skr(const, params.replace(t=min(1.0, max(est.t_hat, 0.0)), xi_a=max(est.xi_hat, 0.0)), **kw)
    run.json("qkd_estimate.json", {"injected": params.to_dict(), "estimate": est.to_dict()})
    run.json("skr_report.json", {"nominal": nominal.to_dict(), "estimated": measured.to_dict()})
    run.summary.update({"t_hat": est.t_hat, "xi_hat": est.xi_hat, "skr_nominal": nominal.skr_per_symbol, "skr_estimated": measured.skr_per_symbol})
    run.check("t_hat", abs(est.t_hat - params.t) <= 3 * est.t_sigma, est.t_hat, f"{params.t} within 3 sigma ({est.t_sigma:.3g})")
    run.check("xi_hat", abs(est.xi_hat - params.xi_a) <= 3 * est.xi_sigma, est.xi_hat, f"{params.xi_a} within 3 sigma ({est.xi_sigma:.3g})")
    run.check("skr", abs(nominal.skr_per_symbol - REF_SKR) <= 0.2 * REF_SKR, nominal.skr_per_symbol, "0.013 +- 20 % bit/symbol")


def t_grid_from(spec: dict) -> np.ndarray:
    n = int(spec["points"])
    if n <= 0:
        raise ConfigError("transmittance grid is empty")
    return np.logspace(math.log10(float(spec["t_max"])), math.log10(float(spec["t_min"])), n)


def cmd_skr_curve(sc: Scenario, run: Run) -> None:
    c = sc.qkd["curve"]
    grid = t_grid_from(c)
    with run.stage("skr-curve"):
        rows = cvqkd.skr_curve(c["constellations"], sc.qkd_params(), grid, optimize=bool(c["optimize"]), z_method=sc.qkd["z_method"])
    run.csv("skr_curve.csv", list(cvqkd.CURVE_COLUMNS), _rows(rows, cvqkd.CURVE_COLUMNS))
    by = defaultdict(list)
    for r in rows:
        by[r["constellation"]].append(r["skr_sym"])
    order = [n for n in ("Gaussian", "64-PCS-QAM", "16-PCS-QAM", "8-PSK", "QPSK") if n in by]
    worst = min((min(np.subtract(by[a], by[b])) for a, b in zip(order, order[1:])), default=0.0)
    mono = min(min(np.diff(v[::-1]), default=0.0) for v in by.values())
    run.summary.update({"ordering_margin": float(worst), "monotonic_margin": float(mono)})
    run.check("ordering", worst >= -1e-6, float(worst), "Gaussian >= 64-PCS >= 16-PCS >= 8-PSK >= QPSK (1e-6)")
    run.check("monotonic", mono >= -1e-6, float(mono), "non-decreasing in T (1e-6)")
    from . import plotting

    run.figure(plotting.plot_skr_curve, "skr_curve.png", rows)


def cmd_drift(sc: Scenario, run: Run) -> None:
    d = sc.characterize["drift"]
    drift = PhaseDrift(tuple(d["sigma_deg"]), float(d["tau_s"]), float(d["step_s"]))
    seed = sc.stage_seed("drift")
    run.seeds["drift"] = seed
    with run.stage("drift"):
        ser = simulate_drift(sc.pic, drift, float(d["duration_s"]), seed)
    hdr = ["time_s", "cmrr1_db", "cmrr2_db", "delta_theta_lo_deg"]
    rows = [dict(zip(hdr, (t, c[0], c[1], lo))) for t, c, lo in zip(ser.time_s, ser.cmrr_db, ser.delta_theta_lo_deg)]
    run.csv("drift.csv", hdr, _rows(rows, hdr))
    lo0 = math.degrees(sc.pic.phases()[2])
    excursion = float(np.max(np.abs(ser.delta_theta_lo_deg - lo0)))
    summary = {"min_cmrr_db": float(ser.cmrr_db.min()), "max_lo_excursion_deg": excursion, "samples": int(ser.time_s.size)}
    run.json("drift_summary.json", summary)
    run.summary.update(summary)
    run.check("drift_cmrr", summary["min_cmrr_db"] >= 40, summary["min_cmrr_db"], ">= 40 dB")
    run.check("drift_lo", excursion <= 0.9, excursion, "<= 0.9 deg")
    from . import plotting

    run.figure(plotting.plot_drift, "drift.png", rows)


COMMANDS = {
    "pic-scan": "Scan the vBS and LO shifters; fit the CMRR model",
    "calibrate": "Variance-vs-power calibration, clearance and CMRR sweep",
    "qrng": "Simulate, calibrate, extract and test the QRNG output",
    "qrng-extract": "Toeplitz-hash a packed raw bit file",
    "rng-test": "Run the statistical test subset on packed bit files",
    "qkd-estimate": "Simulate a CV-QKD link, estimate T and xi, compute the key rate",
    "skr-curve": "Key rate versus transmittance for several constellations",
    "drift": "Simulate thermal drift of CMRR and LO phase",
}


# ---------------------------------------------------------------------------
# Entry point


def _versions() -> dict:
    import scipy

    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"qhrx": pkg, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def _file_hashes(paths) -> list[dict]:
    out = []
    for p in paths:
        h = hashlib.sha256(Path(p).read_bytes()).hexdigest() if Path(p).exists() else None
        out.append({"path": Path(p).name, "sha256": h})
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qhrx", description="Coherent-receiver QRNG and CV-QKD toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario YAML (default: packaged desk-scale scenario)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a scenario key (dotted path)")
    common.add_argument("--out", help="output directory (default: scenario output_dir)")
    common.add_argument("--threads", type=int, default=1, help="worker thread cap")
    common.add_argument("--check", action="store_true", help="assert reference tolerances; exit 4 on failure")
    common.add_argument("--dry-run", action="store_true", help="resolve the scenario and write only the manifest")
    common.add_argument("--plot", action="store_true", help="render PNG figures next to the data files")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=helptext)
        if name in ("qrng-extract", "rng-test"):
            p.add_argument("--input", action="append", default=[], help="packed bit file (MSB first)")
        if name == "qrng-extract":
            p.add_argument("--h-min", type=float, default=REF_H_MIN, help="conditional min-entropy per 16-bit outcome")
    return ap


def run_command(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    out = Path(args.out) if args.out else None
    manifest = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv), "versions": _versions()}
    run = None
    code = EXIT_OK
    try:
        try:
            sc = load_scenario(args.scenario, args.overrides)
        except ConfigError:
            out = out or Path("qhrx-out")
            raise
        out = out or Path(sc.doc.get("output_dir", "qhrx-out"))
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        run = Run(out, threads=args.threads, plot=args.plot)
        manifest.update({"scenario": sc.doc, "scenario_source": sc.source, "root_seed": sc.seed})
        if not args.dry_run:
            fn = {
                "pic-scan": cmd_pic_scan,
                "calibrate": cmd_calibrate,
                "qrng": cmd_qrng,
                "qkd-estimate": cmd_qkd_estimate,
                "skr-curve": cmd_skr_curve,
                "drift": cmd_drift,
            }.get(args.command)
            if fn is not None:
                fn(sc, run)
            elif args.command == "qrng-extract":
                if len(args.input) != 1:
                    raise ConfigError("qrng-extract needs exactly one --input file")
                cmd_qrng_extract(sc, run, args.input[0], args.h_min)
            else:
                cmd_rng_test(sc, run, args.input)
        for k, v in run.summary.items():
            print(f"{k}: {v}")
        if args.check:
            for c in run.checks:
                print(c.line())
            if not all(c.passed for c in run.checks):
                code = EXIT_CHECK
        manifest["status"] = "ok" if code == EXIT_OK else "check-failed"
    except (ConfigError, FileNotFoundError) as exc:
        code = EXIT_CONFIG
        manifest.update({"status": "config-error", "error": str(exc)})
        print(f"config error: {exc}", file=sys.stderr)
    except StageFailure as exc:
        code = EXIT_CONFIG if isinstance(exc.cause, (ConfigError, FileNotFoundError)) else EXIT_NUMERIC
        manifest.update({"status": "failed", "stage": exc.stage, "error": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
    except (QhrxError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        code = EXIT_NUMERIC
        manifest.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}"})
        print(f"error: {exc}", file=sys.stderr)
    finally:
        manifest["exit_code"] = code
        if run is not None:
            manifest["seeds"] = run.seeds
            manifest["outputs"] = _file_hashes(run.outputs)
            manifest["checks"] = [dataclasses.asdict(c) for c in run.checks]
        out = out or Path("qhrx-out")
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "manifest.json", manifest)
    return code


def main(argv=None) -> None:
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
