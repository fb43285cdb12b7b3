"""Monte-Carlo scenarios, per-trial pipelines, aggregation and resumable sweeps."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .baseline import CombPilotConfig, comb_demodulate, comb_estimate, comb_tx, one_tap_mmse, true_tf_response
from .channel import PathSet, add_awgn, apply_channel, draw_tdl_realization, load_tdl_profile, noise_variance
from .constellation import get_constellation
from .estimation import (build_io_matrix, build_layout, compose_frame, crystallization_margin,
                         demap_and_score, estimate_channel, mmse_equalize)
from .ofdm import OfdmConfig
from .transforms import DDFrame
from .zak import (FilterSpec, UnconstrainedConfig, ZakConfig, assemble_subframe, split_subframe,
                  unconstrained_zak_rx, unconstrained_zak_tx, zak_ofdm_rx)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

WAVEFORMS = ("cpofdm", "zak_over_cpofdm", "zak_unconstrained")
METRICS = ("ser", "ber", "est_nmse_db", "mean_post_sinr_db", "se_proxy")
SINR_CAP_DB = 100.0
SINR_FLOOR_DB = -30.0
NMSE_FLOOR_DB = -300.0


class ScenarioError(ValueError):
    """Inconsistent scenario configuration; the message names the offending field."""


@dataclass(frozen=True)
class Scenario:
    """One waveform at one numerology under one channel model.

    ``m * n`` is the number of carriers ``B T``. For the CP-OFDM waveforms the
    useful symbol time is ``T = M N / B``; for the unconstrained waveform it
    is the packet duration.
    """

    name: str
    waveform: str
    m: int
    n: int
    bandwidth_hz: float
    tdl_profile: str = "TDL-C"
    delay_scale_s: float | None = None
    nu_max_hz: float = 0.0
    carrier_hz: float = 0.0
    cp_s: float = 0.0
    num_symbols: int = 14
    guard_s: float = 0.0
    tau_max_s: float | None = None
    tsnr_db: tuple[float, ...] = (14.0,)
    constellation: str = "QPSK"
    trials: int = 500
    base_seed: int = 0
    pilot_energy_ratio: float = 1.0
    prune_db: float | None = -40.0
    pilot_symbols: tuple[int, ...] = (2, 5, 8, 11)
    baseline_estimator: str = "comb"
    delay_filter: str = "sinc"
    delay_filter_param: float = 0.0
    doppler_filter: str = "rect_window_sinc"
    doppler_filter_param: float = 0.0
    oversample: int = 1

    def __post_init__(self):
        object.__setattr__(self, "tsnr_db", tuple(float(t) for t in np.atleast_1d(self.tsnr_db)))
        object.__setattr__(self, "pilot_symbols", tuple(int(s) for s in self.pilot_symbols))
        if self.waveform not in WAVEFORMS:
            raise ScenarioError(f"waveform: {self.waveform!r} is not one of {WAVEFORMS}")
        for fld in ("m", "n", "trials", "num_symbols", "oversample"):
            if int(getattr(self, fld)) < 1:
                raise ScenarioError(f"{fld}: must be a positive integer, got {getattr(self, fld)}")
        if not self.bandwidth_hz > 0:
            raise ScenarioError(f"bandwidth_hz: must be positive, got {self.bandwidth_hz}")
        for fld in ("cp_s", "guard_s", "nu_max_hz"):
            if getattr(self, fld) < 0:
                raise ScenarioError(f"{fld}: must be >= 0, got {getattr(self, fld)}")
        if self.waveform != "zak_unconstrained" and self.cp_samples >= self.m * self.n:
            raise ScenarioError(f"cp_s: {self.cp_s} s is {self.cp_samples} samples, not below M*N")
        if self.baseline_estimator not in ("comb", "dd"):
            raise ScenarioError(f"baseline_estimator: {self.baseline_estimator!r} is not 'comb' or 'dd'")
        if self.pilot_energy_ratio <= 0:
            raise ScenarioError(f"pilot_energy_ratio: must be positive, got {self.pilot_energy_ratio}")
        get_constellation(self.constellation)
        FilterSpec(self.delay_filter, self.delay_filter_param, self.doppler_filter, self.doppler_filter_param)

    # numerology -------------------------------------------------------------

    @property
    def mn(self) -> int:
        return self.m * self.n

    @property
    def symbol_s(self) -> float:
        """``T = M N / B``."""
        return self.mn / self.bandwidth_hz

    @property
    def scs_hz(self) -> float:
        return self.bandwidth_hz / self.mn

    @property
    def cp_samples(self) -> int:
        return int(round(self.cp_s * self.bandwidth_hz))

    @property
    def guard_samples(self) -> int:
        return int(round(self.guard_s * self.bandwidth_hz))

    @property
    def doppler_period_hz(self) -> float:
        return self.n / self.symbol_s

    def profile(self):
        return load_tdl_profile(self.tdl_profile, self.delay_scale_s)

    @property
    def effective_tau_max_s(self) -> float:
        return self.tau_max_s if self.tau_max_s is not None else self.profile().max_delay_s

    def layout(self):
        return build_layout(self.m, self.n, self.bandwidth_hz, self.effective_tau_max_s,
                            self.pilot_energy_ratio)

    def feasibility(self) -> dict[str, Any]:
        """Delay-period and crystallization checks (reported, not enforced)."""
        b = math.ceil(self.bandwidth_hz * self.effective_tau_max_s - 1e-9)
        margin = crystallization_margin(self.n, self.symbol_s, self.nu_max_hz)
        return {
            "delay_bins": b,
            "delay_period_ok": self.m > 2 * b + 3,
            "crystallization_margin": margin,
            "crystallization_ok": margin > 0,
            "cp_covers_delay": self.cp_s >= self.effective_tau_max_s,
        }

    def overhead_efficiency(self) -> float:
        """Fraction of the time-bandwidth product carrying data symbols."""
        t = self.symbol_s
        if self.waveform == "cpofdm" and self.baseline_estimator == "comb":
            data_fraction = 1 - len(set(self.pilot_symbols)) / self.num_symbols
            return data_fraction * t / (t + self.cp_s)
        lay = self.layout()
        data_fraction = lay.num_data / self.mn
        if self.waveform == "zak_unconstrained":
            return data_fraction * t / (t + self.guard_s)
        return data_fraction * t / (t + self.cp_s)


def se_proxy(metrics: dict[str, Any], sc: Scenario) -> float:
    """``eta * mean_k log2(1 + SINR_k)`` in bits/s/Hz.

    ``metrics["sinr"]`` holds the linear post-equalisation SINR, either one
    value per data symbol or a single value applied to all of them.
    """
    sinr = np.asarray(metrics["sinr"], dtype=float)
    return float(sc.overhead_efficiency() * np.mean(np.log2(1 + sinr)))


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class TrialMetrics:
    trial: int
    seed: int
    tsnr_db: float
    ser: float
    ber: float
    est_nmse_db: float
    mean_post_sinr_db: float
    se_proxy: float

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRICS}


def trial_streams(base_seed: int, trial_index: int) -> tuple[np.random.Generator, ...]:
    """Independent channel, data and noise generators for one trial, seeded by ``base_seed + t``."""
    ss = np.random.SeedSequence(base_seed + trial_index)
    return tuple(np.random.default_rng(s) for s in ss.spawn(3))


def _measured_sinr(soft: np.ndarray, ref: np.ndarray, es: float) -> float:
    mse = float(np.mean(np.abs(soft - ref) ** 2))
    cap = 10 ** (SINR_CAP_DB / 10)
    if mse == 0:
        return cap
    return float(min(max(es / mse - 1.0, 0.0), cap))


def _nmse_db(err: float, power: float) -> float:
    if power == 0:
        return 0.0
    return max(10 * math.log10(err / power), NMSE_FLOOR_DB) if err > 0 else NMSE_FLOOR_DB


def _hyp_reference(y_pilot: DDFrame, layout) -> np.ndarray:
    taps = estimate_channel(y_pilot, layout)
    return np.array([t.value for t in taps])


def _zak_packets(sc: Scenario, ps: PathSet, tsnr_db: float | None, rng_data, rng_noise):
    """Transmit/receive one subframe (or one unconstrained packet); returns DD frames in and out."""
    layout = sc.layout()
    const = get_constellation(sc.constellation)
    if sc.waveform == "zak_unconstrained":
        ucfg = UnconstrainedConfig(sc.m, sc.n, sc.bandwidth_hz, sc.guard_samples, sc.oversample)
        filt = FilterSpec(sc.delay_filter, sc.delay_filter_param, sc.doppler_filter, sc.doppler_filter_param)
        count = 1
        tx = lambda frames: unconstrained_zak_tx(frames[0], filt, ucfg)  # noqa: E731
        rx = lambda r: [unconstrained_zak_rx(r, filt, ucfg)]  # noqa: E731
        fold = (sc.mn + ucfg.extension) / sc.mn
    else:
        zcfg = ZakConfig(sc.m, sc.n, OfdmConfig(sc.mn, sc.scs_hz, sc.cp_samples), sc.num_symbols)
        count = sc.num_symbols
        tx = lambda frames: assemble_subframe(frames, zcfg)  # noqa: E731
        rx = lambda r: [zak_ofdm_rx(b, zcfg) for b in split_subframe(r, zcfg)]  # noqa: E731
        fold = 1.0
    idx = const.random_indices(rng_data, (count, layout.num_data))
    frames = [compose_frame(layout, const.points[i]) for i in idx]
    power = layout.frame_energy() / sc.mn
    x = tx(frames)
    clean = apply_channel(x, ps)
    r = add_awgn(clean, tsnr_db, power, rng_noise)
    ys = rx(r)
    pilot_only = rx(apply_channel(tx([layout.pilot_frame()] * count), ps))
    sigma2 = noise_variance(power, tsnr_db) * fold
    return layout, const, idx, ys, pilot_only, sigma2


def _run_zak(sc: Scenario, ps: PathSet, tsnr_db, rng_data, rng_noise):
    layout, const, idx, ys, pilot_only, sigma2 = _zak_packets(sc, ps, tsnr_db, rng_data, rng_noise)
    softs, err, ref_pow = [], 0.0, 0.0
    for y, yp in zip(ys, pilot_only):
        taps = estimate_channel(y, layout)
        est = np.array([t.value for t in taps])
        ref = _hyp_reference(yp, layout)
        err += float(np.sum(np.abs(est - ref) ** 2))
        ref_pow += float(np.sum(np.abs(ref) ** 2))
        if sc.prune_db is not None:
            peak = np.abs(est).max()
            taps = [t for t in taps if abs(t.value) >= peak * 10 ** (sc.prune_db / 20)]
        eq = mmse_equalize(y, build_io_matrix(taps, sc.m, sc.n), sigma2, 1.0, layout)
        softs.append(eq.soft)
    soft = np.concatenate(softs)
    truth = idx.ravel()
    return soft, truth, const, _nmse_db(err, ref_pow)


def _run_cpofdm_comb(sc: Scenario, ps: PathSet, tsnr_db, rng_data, rng_noise):
    cfg = CombPilotConfig(OfdmConfig(sc.mn, sc.scs_hz, sc.cp_samples), sc.num_symbols, sc.pilot_symbols)
    const = get_constellation(sc.constellation)
    mask = cfg.data_mask()
    idx = const.random_indices(rng_data, int(mask.sum()))
    x = comb_tx(const.points[idx], cfg)
    r = add_awgn(apply_channel(x, ps), tsnr_db, 1.0, rng_noise)
    y = comb_demodulate(r, cfg)
    h_est = comb_estimate(y, cfg)
    h_true = true_tf_response(ps, cfg)
    nmse = _nmse_db(float(np.sum(np.abs(h_est - h_true) ** 2)), float(np.sum(np.abs(h_true) ** 2)))
    soft, _ = one_tap_mmse(y, h_est, noise_variance(1.0, tsnr_db))
    return soft.T[mask.T], idx, const, nmse


def run_trial(sc: Scenario, trial_index: int, tsnr_db: float | None = None,
              paths: PathSet | None = None) -> TrialMetrics:
    """One Monte-Carlo trial; deterministic in ``(base_seed, trial_index)``.

    ``tsnr_db`` defaults to the first scenario value (``inf`` is noiseless).
    ``paths`` overrides the random channel draw.
    """
    tsnr = sc.tsnr_db[0] if tsnr_db is None else float(tsnr_db)
    rng_ch, rng_data, rng_noise = trial_streams(sc.base_seed, trial_index)
    ps = paths if paths is not None else draw_tdl_realization(sc.profile(), sc.nu_max_hz, rng_ch)
    noise_db = None if math.isinf(tsnr) else tsnr
    if sc.waveform == "cpofdm" and sc.baseline_estimator == "comb":
        soft, truth, const, nmse = _run_cpofdm_comb(sc, ps, noise_db, rng_data, rng_noise)
    elif sc.waveform == "cpofdm":
        soft, truth, const, nmse = _run_zak(replace(sc, m=1, n=sc.mn), ps, noise_db, rng_data, rng_noise)
    else:
        soft, truth, const, nmse = _run_zak(sc, ps, noise_db, rng_data, rng_noise)
    scores = demap_and_score(soft, truth, const.name)
    sinr = _measured_sinr(soft, const.points[truth], 1.0)
    return TrialMetrics(
        trial=trial_index,
        seed=sc.base_seed + trial_index,
        tsnr_db=tsnr,
        ser=scores["ser"],
        ber=scores["ber"],
        est_nmse_db=nmse,
        mean_post_sinr_db=max(10 * math.log10(sinr), SINR_FLOOR_DB) if sinr > 0 else SINR_FLOOR_DB,
        se_proxy=se_proxy({"sinr": sinr}, sc),
    )


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class AggregateReport:
    scenario: str
    waveform: str
    m: int
    n: int
    tsnr_db: float
    trials: int
    mean: dict[str, float]
    stderr: dict[str, float]
    records: tuple[TrialMetrics, ...] = field(default=(), repr=False)
    feasibility: dict[str, Any] = field(default_factory=dict)

    def interval(self, metric: str, width: float = 2.0) -> tuple[float, float]:
        mu, se = self.mean[metric], self.stderr[metric]
        return mu - width * se, mu + width * se


def aggregate(records: Sequence[TrialMetrics], sc: Scenario, tsnr_db: float) -> AggregateReport:
    if not records:
        raise ValueError("cannot aggregate zero trials")
    ordered = sorted(records, key=lambda r: r.trial)
    mean, stderr = {}, {}
    for metric in METRICS:
        v = np.array([getattr(r, metric) for r in ordered], dtype=float)
        mean[metric] = float(np.mean(v))
        stderr[metric] = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return AggregateReport(sc.name, sc.waveform, sc.m, sc.n, float(tsnr_db), len(ordered), mean, stderr,
                           tuple(ordered), sc.feasibility())


def _trial_job(args):
    sc, t, tsnr = args
    return run_trial(sc, t, tsnr)


def run_point(sc: Scenario, tsnr_db: float, trials: int | None = None, threads: int = 1) -> AggregateReport:
    """All trials of one (scenario, TSNR) point; the result does not depend on ``threads``."""
    count = sc.trials if trials is None else trials
    jobs = [(sc, t, tsnr_db) for t in range(count)]
    if threads <= 1:
        records = [_trial_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_trial_job, jobs, chunksize=max(1, count // (4 * threads))))
    return aggregate(records, sc, tsnr_db)


# ---------------------------------------------------------------------------
# configuration


def _mn_pairs(spec, k: int | None) -> list[tuple[int, int]]:
    if spec == "divisors":
        if k is None:
            raise ScenarioError("mn: 'divisors' needs k_subcarriers")
        return [(d, k // d) for d in range(1, k + 1) if k % d == 0]
    return [(int(a), int(b)) for a, b in spec]


def scenarios_from_config(cfg: dict[str, Any]) -> list[Scenario]:
    """Expand a parsed sweep configuration into scenarios (one per waveform and (M, N))."""
    run = cfg.get("run", {})
    chan = cfg.get("channel", {})
    name = run.get("name", "sweep")
    waveforms = run.get("waveforms", list(w for w in WAVEFORMS if w in cfg))
    common = dict(
        name=name,
        tdl_profile=chan.get("tdl_profile", "TDL-C"),
        delay_scale_s=chan.get("delay_scale_s"),
        nu_max_hz=float(chan.get("nu_max_hz", 0.0)),
        carrier_hz=float(chan.get("carrier_hz", 0.0)),
        tau_max_s=chan.get("tau_max_s"),
        tsnr_db=tuple(run.get("tsnr_db", [14.0])),
        constellation=run.get("constellation", "QPSK"),
        trials=int(run.get("trials", 500)),
        base_seed=int(run.get("base_seed", 0)),
    )
    allowed = {f for f in Scenario.__dataclass_fields__} | {"mn", "k_subcarriers"}
    out = []
    for wf in waveforms:
        if wf not in WAVEFORMS:
            raise ScenarioError(f"run.waveforms: {wf!r} is not one of {WAVEFORMS}")
        section = dict(cfg.get(wf, {}))
        unknown = set(section) - allowed
        if unknown:
            raise ScenarioError(f"{wf}: unknown keys {sorted(unknown)}")
        k = section.pop("k_subcarriers", None)
        mn_spec = section.pop("mn", None)
        if mn_spec is None:
            if k is None:
                raise ScenarioError(f"{wf}: give either 'mn' or 'k_subcarriers'")
            mn_spec = [[1, k]] if wf == "cpofdm" else "divisors"
        if "bandwidth_hz" not in section:
            raise ScenarioError(f"{wf}.bandwidth_hz: missing")
        for m, n in _mn_pairs(mn_spec, k):
            params = {**common, **section, "waveform": wf, "m": m, "n": n}
            if "tsnr_db" in section:
                params["tsnr_db"] = tuple(section["tsnr_db"])
            out.append(Scenario(**params))
    return out


def load_config(path: str | Path) -> tuple[dict[str, Any], str]:
    text = Path(path).read_text()
    try:
        return tomllib.loads(text), text
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# sweeps


def _fmt(x: float) -> str:
    return repr(float(x))


def point_key(sc: Scenario, tsnr_db: float) -> str:
    return f"{sc.waveform}_M{sc.m}_N{sc.n}_tsnr{_fmt(tsnr_db)}"


def _report_to_json(rep: AggregateReport) -> dict[str, Any]:
    return {
        "scenario": rep.scenario, "waveform": rep.waveform, "M": rep.m, "N": rep.n,
        "tsnr_db": rep.tsnr_db, "trials": rep.trials, "mean": rep.mean, "stderr": rep.stderr,
        "feasibility": rep.feasibility,
        "records": [asdict(r) for r in rep.records],
    }


def _report_from_json(d: dict[str, Any]) -> AggregateReport:
    return AggregateReport(d["scenario"], d["waveform"], d["M"], d["N"], d["tsnr_db"], d["trials"],
                           d["mean"], d["stderr"], tuple(TrialMetrics(**r) for r in d["records"]),
                           d.get("feasibility", {}))


def csv_text(reports: Iterable[AggregateReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "waveform", "M", "N", "tsnr_db", "metric", "mean", "stderr", "trials"])
    for rep in reports:
        for metric in METRICS:
            w.writerow([rep.scenario, rep.waveform, rep.m, rep.n, _fmt(rep.tsnr_db), metric,
                        _fmt(rep.mean[metric]), _fmt(rep.stderr[metric]), rep.trials])
    return buf.getvalue()


def sweep(config_path: str | Path, out_dir: str | Path, seed: int | None = None, trials: int | None = None,
          threads: int = 1, resume: bool = False, log=None) -> list[AggregateReport]:
    """Cartesian sweep over TSNR x waveform x (M, N).

    Every finished point is saved under ``out_dir/points`` straight away so
    an interrupted sweep keeps its partial results; with ``resume`` those
    points are reused instead of recomputed.
    """
    cfg, text = load_config(config_path)
    scenarios = scenarios_from_config(cfg)
    if seed is not None or trials is not None:
        scenarios = [replace(sc, base_seed=sc.base_seed if seed is None else seed,
                             trials=sc.trials if trials is None else trials) for sc in scenarios]
    out = Path(out_dir)
    points_dir = out / "points"
    points_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for sc in scenarios:
        for tsnr in sc.tsnr_db:
            path = points_dir / f"{point_key(sc, tsnr)}.json"
            if resume and path.exists():
                rep = _report_from_json(json.loads(path.read_text()))
                if rep.trials == sc.trials:
                    reports.append(rep)
                    continue
            rep = run_point(sc, tsnr, threads=threads)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(_report_to_json(rep), sort_keys=True))
            os.replace(tmp, path)
            if log is not None:
                log(f"{point_key(sc, tsnr)}: se_proxy {rep.mean['se_proxy']:.4f} "
                    f"+/- {rep.stderr['se_proxy']:.4f}")
            reports.append(rep)
    (out / "results.csv").write_text(csv_text(reports))
    manifest = {
        "config": cfg,
        "config_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "base_seeds": sorted({sc.base_seed for sc in scenarios}),
        "trials": sorted({sc.trials for sc in scenarios}),
        "versions": {"zakofdm": __version__, "numpy": np.__version__, "python": sys.version.split()[0]},
        "points": [{"key": point_key(sc, t), "feasibility": sc.feasibility(),
                    "overhead_efficiency": sc.overhead_efficiency()}
                   for sc in scenarios for t in sc.tsnr_db],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return reports
