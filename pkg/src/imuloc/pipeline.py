"""Experiment orchestration: cached stages, seed sweeps, ablations and the
results tables.

Every stage writes into a fixed directory under the output root and drops
a ``.complete`` marker holding the content hash of (stage params, input
file hashes, package version).  A rerun with an unchanged spec verifies
the marker and executes nothing; a marker with a different hash triggers
a stale-cache warning and a recompute.  Downstream stages list upstream
``.complete`` markers among their inputs, so invalidation propagates
transitively.  No output carries a timestamp, so full reruns are
bit-identical.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import shutil
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ScenarioConfig, scenario_to_dict
from .container import read_container, read_csv, write_container, write_csv
from .csi import align_los, cfr_to_cir, compute_snr, filter_and_normalize
from .errors import ConfigurationError
from .evaluate import (
    ErrorReport,
    horizontal_error,
    refinement_loop,
    rts_smooth,
    seed_statistics,
)
from .fit import fit_trajectory
from .model import (
    KnnModel,
    MlpModel,
    knn_predict,
    load_mlp,
    mlp_forward,
    save_mlp,
    train_mlp,
)
from .sim import (
    ControlPoint,
    CsiDataset,
    ImuSeries,
    TrajectorySeries,
    place_control_points,
    simulate_imu,
    simulate_trajectory,
    synth_csi,
    train_test_split,
)

OUT_ENV = "IMULOC_OUT"
METHODS = ("fully-supervised", "dead-reckoning-labels",
           "imu-supervised", "imu-supervised-ir")


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_hash(path: Path) -> str:
    return _sha(Path(path).read_bytes())


class Pipeline:
    """Stage runner bound to one scenario config and output root."""

    def __init__(self, config: ScenarioConfig, out_root: str | Path | None = None,
                 use_cache: bool = True, threads: int = 1):
        config.validate()
        self.config = config
        root = Path(out_root or os.environ.get(OUT_ENV, "out"))
        self.root = root / config.name
        self.root.mkdir(parents=True, exist_ok=True)
        self.use_cache = use_cache
        self.threads = max(1, threads)
        self.executed: list[str] = []

    # ------------------------------------------------------------------
    # stage plumbing
    # ------------------------------------------------------------------

    def _stage(self, rel: str, params: dict, inputs: list[Path], builder) -> Path:
        d = self.root / rel
        marker = d / ".complete"
        key = {"stage": rel, "params": params, "version": __version__,
               "inputs": [file_hash(p) for p in inputs]}
        h = _sha(json.dumps(key, sort_keys=True).encode())
        if marker.exists():
            recorded = json.loads(marker.read_text()).get("hash")
            if recorded == h and self.use_cache:
                return d
            if recorded != h:
                warnings.warn(f"stale cache for stage '{rel}', recomputing")
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        builder(d)
        marker.write_text(json.dumps({"hash": h}, sort_keys=True))
        self.executed.append(rel)
        return d

    def _marker(self, rel: str) -> Path:
        return self.root / rel / ".complete"

    def _cfg_subset(self, *sections: str) -> dict:
        full = scenario_to_dict(self.config)
        return {s: full[s] for s in sections if s in full}

    # ------------------------------------------------------------------
    # simulate: ground-truth trajectory + synthetic CSI
    # ------------------------------------------------------------------

    def simulate(self, with_csi: bool = True) -> Path:
        cfg = self.config
        params = self._cfg_subset("floor", "walker", "carrier", "channel",
                                  "antennas_per_trp")
        params["scenario_seed"] = cfg.scenario_seed
        params["with_csi"] = with_csi

        def build(d: Path):
            ts = simulate_trajectory(cfg, seed=cfg.scenario_seed)
            write_container(d / "trajectory.ilc", {
                "timestamps": ts.timestamps, "positions": ts.positions,
                "velocities": ts.velocities, "accelerations": ts.accelerations,
            }, {"n_samples": ts.n_samples, "scenario": cfg.name})
            write_csv(d / "truth.csv", {
                "sample": np.arange(ts.n_samples), "t": ts.timestamps,
                "x": ts.positions[:, 0], "y": ts.positions[:, 1]})
            if with_csi:
                ds = synth_csi(ts, cfg, seed=cfg.scenario_seed)
                write_container(d / "csi.ilc", {
                    "cfr": ds.cfr, "snr_db": ds.snr_db,
                    "sample_indices": ds.sample_indices,
                }, ds.meta)
                (d / "csi.meta.json").write_text(
                    json.dumps(ds.meta, sort_keys=True, indent=1))

        return self._stage("simulate", params, [], build)

    def load_trajectory(self) -> TrajectorySeries:
        arrays, _ = read_container(self.root / "simulate" / "trajectory.ilc")
        return TrajectorySeries(arrays["timestamps"], arrays["positions"],
                                arrays["velocities"], arrays["accelerations"])

    def _wants_csi(self) -> bool:
        marker = self._marker("simulate")
        if marker.exists():
            return (self.root / "simulate" / "csi.ilc").exists()
        return True

    # ------------------------------------------------------------------
    # preprocess: CFR -> aligned, filtered, normalized features
    # ------------------------------------------------------------------

    def preprocess(self) -> Path:
        cfg = self.config
        sim_dir = self.simulate()
        csi_path = sim_dir / "csi.ilc"
        params = {
            "t_bin": cfg.t_bin, "feature_bins": cfg.feature_bins,
            "feature_mode": cfg.feature_mode,
            "reference": [cfg.reference_trp, cfg.reference_antenna],
            "snr_threshold_db": cfg.pipeline.snr_threshold_db,
        }

        def build(d: Path):
            fm, kept, snr, report, zero_noise = self._preprocess_arrays(
                cfg.pipeline.snr_threshold_db)
            write_container(d / "features.ilc", {
                "features": fm.features, "kept_rows": kept.astype(np.int64),
                "norms": fm.norms, "snr_db": snr,
            }, {"n_trps": fm.n_trps, "n_antennas": fm.n_antennas,
                "feature_bins": fm.feature_bins, "mode": fm.mode,
                "block_size": fm.block_size})
            n_total = snr.shape[0]
            dropped = sorted(set(range(n_total)) - set(int(i) for i in kept))
            (d / "report.json").write_text(json.dumps({
                "dropped_samples": dropped,
                "n_kept": int(len(kept)),
                "peak_found": int(report.peak_found.sum()),
                "fallback_t0": report.fallback_t0,
                "shift_min": int(report.shifts.min()),
                "shift_max": int(report.shifts.max()),
                "zero_noise_flagged": int(zero_noise.sum()),
            }, sort_keys=True, indent=1))

        return self._stage("preprocess", params, [csi_path], build)

    def _preprocess_arrays(self, snr_threshold: float):
        cfg = self.config
        arrays, meta = read_container(self.root / "simulate" / "csi.ilc")
        ds = CsiDataset(arrays["cfr"], arrays["snr_db"],
                        arrays["sample_indices"], meta)
        cir = cfr_to_cir(ds)
        ref = (cfg.reference_trp, cfg.reference_antenna)
        aligned, report = align_los(cir, ref, cfg.t_bin)
        snr, zero_noise = compute_snr(aligned, t_bin=cfg.t_bin)
        fm, kept = filter_and_normalize(aligned, snr, snr_threshold,
                                        cfg.feature_bins, ref, cfg.feature_mode)
        return fm, kept, snr, report, zero_noise

    def load_features(self) -> tuple[np.ndarray, np.ndarray, int]:
        arrays, meta = read_container(self.root / "preprocess" / "features.ilc")
        return arrays["features"], arrays["kept_rows"], int(meta["block_size"])

    # ------------------------------------------------------------------
    # fit: per-seed IMU simulation, control points, pseudo-labels
    # ------------------------------------------------------------------

    def fit_seed(self, seed: int, cp_override: dict | None = None) -> Path:
        cfg = self.config
        sim_dir = self.simulate(with_csi=self._wants_csi())
        traj_path = sim_dir / "trajectory.ilc"
        params = self._cfg_subset("imu", "fit", "control_points")
        params["seed"] = int(seed)
        params["temperature"] = cfg.temperature
        if cp_override:
            params["cp_override"] = {k: cp_override[k] for k in sorted(cp_override)}
        rel = f"seed-{seed:04d}/fit{_suffix(cp_override)}"

        def build(d: Path):
            ts = self.load_trajectory()
            imu_cfg = dataclasses.replace(cfg.imu, seed=int(seed))
            imu = simulate_imu(ts, imu_cfg, cfg.temperature)
            cp_cfg = dataclasses.replace(cfg.control_points, **(cp_override or {}))
            cps = place_control_points(ts, cp_cfg, seed=int(seed))
            tf = fit_trajectory(imu, cps, cfg.fit, seed=int(seed))
            write_container(d / "imu.ilc", {"dt": imu.dt, "accel": imu.accel},
                            {"temperature": imu.temperature})
            write_container(d / "pseudo.ilc", {
                "pseudo": tf.pseudo_labels, "dead_reckoning": tf.dead_reckoning,
                "one_sided": tf.one_sided.astype(np.int64),
            }, {"n_anchors": len(cps)})
            (d / "control_points.json").write_text(json.dumps([
                {"sample_index": int(c.sample_index),
                 "position": [float(v) for v in c.position],
                 "velocity": [float(v) for v in c.velocity],
                 "radius": c.radius, "cp_id": c.cp_id} for c in cps],
                sort_keys=True))
            two_sided = [g for g in tf.segments if not g.get("one_sided")]
            write_csv(d / "segments.csv", {
                k: [g[k] for g in two_sided]
                for k in ("first_sample", "n_steps", "initial_loss", "final_loss",
                          "loss_x", "loss_v", "loss_reg", "fwd_end_residual",
                          "bwd_start_residual")})
            labels = {"sample": np.arange(ts.n_samples),
                      "pseudo_x": tf.pseudo_labels[:, 0],
                      "pseudo_y": tf.pseudo_labels[:, 1],
                      "one_sided": tf.one_sided.astype(int)}
            write_csv(d / "pseudo.csv", labels)

        return self._stage(rel, params, [traj_path], build)

    def load_fit(self, seed: int, cp_override: dict | None = None):
        rel = f"seed-{seed:04d}/fit{_suffix(cp_override)}"
        arrays, _ = read_container(self.root / rel / "pseudo.ilc")
        return arrays["pseudo"], arrays["dead_reckoning"], arrays["one_sided"].astype(bool)

    def load_imu_cps(self, seed: int, cp_override: dict | None = None):
        rel = f"seed-{seed:04d}/fit{_suffix(cp_override)}"
        arrays, meta = read_container(self.root / rel / "imu.ilc")
        imu = ImuSeries(arrays["dt"], arrays["accel"], meta["temperature"])
        cps = [ControlPoint(c["sample_index"], np.array(c["position"]),
                            np.array(c["velocity"]), c["radius"], c["cp_id"])
               for c in json.loads((self.root / rel / "control_points.json").read_text())]
        return imu, cps

    # ------------------------------------------------------------------
    # train: one network on a chosen label source
    # ------------------------------------------------------------------

    def train_seed(self, seed: int, labels: str, epochs: int | None = None) -> Path:
        if labels not in ("truth", "pseudo", "dead-reckoning"):
            raise ConfigurationError(f"unknown label source '{labels}'")
        cfg = self.config
        pre = self.preprocess()
        inputs = [pre / "features.ilc", self._marker("simulate")]
        if labels != "truth":
            inputs.append(self.fit_seed(seed) / "pseudo.ilc")
        if epochs is None:
            epochs = (cfg.pipeline.epochs_supervised if labels == "truth"
                      else cfg.pipeline.epochs_imu)
        params = self._cfg_subset("train")
        params.update({"seed": int(seed), "labels": labels, "epochs": int(epochs),
                       "train_frac": cfg.pipeline.train_frac})
        rel = f"seed-{seed:04d}/train-{labels}"

        def build(d: Path):
            feats, kept, block = self.load_features()
            ts = self.load_trajectory()
            train_rows, _ = self._split_rows(kept, ts.n_samples)
            in_train = np.isin(kept, train_rows)
            if labels == "truth":
                y = ts.positions[kept[in_train]]
                pseudo = False
            else:
                # one-sided stretches have unanchored dead-reckoned labels;
                # keep them out of the training set
                p, dr, one_sided = self.load_fit(seed)
                in_train &= ~one_sided[kept]
                src = p if labels == "pseudo" else dr
                y = src[kept[in_train]]
                pseudo = True
            tc = dataclasses.replace(cfg.train, epochs=int(epochs))
            res = train_mlp(feats[in_train], y, tc, seed=int(seed),
                            pseudo_labels=pseudo, augment_block=block)
            save_mlp(d / "model.ilc", res.model,
                     {"labels": labels, "epochs": int(epochs), "seed": int(seed)},
                     config=tc)
            write_csv(d / "loss_curve.csv", {
                "epoch": np.arange(len(res.loss_curve)), "loss": res.loss_curve})

        return self._stage(rel, params, inputs, build)

    def _split_rows(self, kept: np.ndarray, n_samples: int):
        tr, te = train_test_split(n_samples, self.config.pipeline.train_frac,
                                  seed=self.config.scenario_seed)
        keep = set(int(i) for i in kept)
        return (np.array([i for i in tr if i in keep], dtype=np.int64),
                np.array([i for i in te if i in keep], dtype=np.int64))

    # ------------------------------------------------------------------
    # refine: iterative refinement loop (iteration 0 is IMU-supervised)
    # ------------------------------------------------------------------

    def refine_seed(self, seed: int) -> Path:
        cfg = self.config
        pre = self.preprocess()
        fit_dir = self.fit_seed(seed)
        params = self._cfg_subset("train", "fit")
        params.update({"seed": int(seed),
                       "epochs_refine": list(cfg.pipeline.epochs_refine),
                       "train_frac": cfg.pipeline.train_frac})
        rel = f"seed-{seed:04d}/refine"
        inputs = [pre / "features.ilc", fit_dir / "pseudo.ilc",
                  fit_dir / "imu.ilc", fit_dir / "control_points.json"]

        def build(d: Path):
            feats, kept, block = self.load_features()
            ts = self.load_trajectory()
            imu, cps = self.load_imu_cps(seed)
            _, _, one_sided = self.load_fit(seed)
            train_rows, test_rows = self._split_rows(kept, ts.n_samples)
            in_train = np.isin(kept, train_rows) & ~one_sided[kept]
            in_test = np.isin(kept, test_rows)
            res = refinement_loop(
                feats[in_train], kept[in_train], imu, cps, cfg.fit, cfg.train,
                list(cfg.pipeline.epochs_refine), seed=int(seed),
                test_features=feats[in_test], test_rows=kept[in_test],
                truth_positions=ts.positions, augment_block=block)
            rows = {"iteration": [], "pseudo_mean": [], "pseudo_median": [],
                    "pseudo_p90": [], "test_mean": [], "test_median": [],
                    "test_p90": []}
            for i, it in enumerate(res.iterations):
                save_mlp(d / f"model-iter{i}.ilc", it.train.model,
                         {"iteration": i, "seed": int(seed)},
                         config=it.train.config)
                write_container(d / f"pseudo-iter{i}.ilc",
                                {"pseudo": it.pseudo_labels}, {"iteration": i})
                rows["iteration"].append(i)
                rows["pseudo_mean"].append(it.pseudo_report.mean)
                rows["pseudo_median"].append(it.pseudo_report.median)
                rows["pseudo_p90"].append(it.pseudo_report.p90)
                rows["test_mean"].append(it.test_report.mean)
                rows["test_median"].append(it.test_report.median)
                rows["test_p90"].append(it.test_report.p90)
            write_csv(d / "iterations.csv", rows)

        return self._stage(rel, params, inputs, build)

    # ------------------------------------------------------------------
    # evaluation helpers
    # ------------------------------------------------------------------

    def _eval_positions(self, pred, rows, ts) -> ErrorReport:
        if self.config.smoother_in_eval and len(rows) >= 2:
            order = np.argsort(rows)
            sm = rts_smooth(pred[order][:, :2], ts.timestamps[rows[order]],
                            self.config.smoother)
            err = horizontal_error(sm, ts.positions[rows[order]])
        else:
            err = horizontal_error(pred, ts.positions[rows])
        return ErrorReport.from_errors(err)

    def _eval_model(self, model: MlpModel, feats, rows, ts) -> ErrorReport:
        return self._eval_positions(mlp_forward(model, feats), rows, ts)

    def seed_method_errors(self, seed: int) -> dict[str, ErrorReport]:
        """Per-method test-set error reports for one seed."""
        cfg = self.config
        feats, kept, _ = self.load_features()
        ts = self.load_trajectory()
        train_rows, test_rows = self._split_rows(kept, ts.n_samples)
        in_train = np.isin(kept, train_rows)
        in_test = np.isin(kept, test_rows)
        ftest, rtest = feats[in_test], kept[in_test]

        out: dict[str, ErrorReport] = {}
        sup, _ = load_mlp(self.train_seed(cfg.scenario_seed, "truth") / "model.ilc")
        out["fully-supervised"] = self._eval_model(sup, ftest, rtest, ts)
        drm, _ = load_mlp(self.train_seed(seed, "dead-reckoning") / "model.ilc")
        out["dead-reckoning-labels"] = self._eval_model(drm, ftest, rtest, ts)
        refine = self.refine_seed(seed)
        first, _ = load_mlp(refine / "model-iter0.ilc")
        out["imu-supervised"] = self._eval_model(first, ftest, rtest, ts)
        n_iter = len(cfg.pipeline.epochs_refine)
        last, _ = load_mlp(refine / f"model-iter{n_iter - 1}.ilc")
        out["imu-supervised-ir"] = self._eval_model(last, ftest, rtest, ts)

        pseudo, _, one_sided = self.load_fit(seed)
        in_knn = in_train & ~one_sided[kept]
        knn = KnnModel(feats[in_knn], pseudo[kept[in_knn]], cfg.pipeline.knn_k)
        out["knn-imu-supervised"] = self._eval_positions(
            knn_predict(knn, ftest), rtest, ts)
        return out

    def seed_pseudo_errors(self, seed: int) -> dict[str, ErrorReport]:
        """Pseudo-label vs dead-reckoning error over all samples."""
        ts = self.load_trajectory()
        pseudo, dr, _ = self.load_fit(seed)
        return {
            "forward-backward": ErrorReport.from_positions(pseudo, ts.positions),
            "dead-reckoning": ErrorReport.from_positions(dr, ts.positions),
        }

    # ------------------------------------------------------------------
    # evaluate stage: summary across seeds
    # ------------------------------------------------------------------

    def build_seed_stages(self, seeds: list[int]) -> None:
        """Ensure all per-seed stages exist, in a worker pool if asked."""
        self.simulate()
        self.preprocess()
        self.train_seed(self.config.scenario_seed, "truth")
        pending = [s for s in seeds if not self._seed_done(s)]
        if self.threads > 1 and len(pending) > 1:
            cfg_dict = scenario_to_dict(self.config)
            jobs = [(cfg_dict, str(self.root.parent), self.use_cache, int(s))
                    for s in pending]
            with ProcessPoolExecutor(max_workers=self.threads) as ex:
                list(ex.map(_seed_worker, jobs))
        else:
            for s in pending:
                _seed_stages(self, int(s))

    def _seed_done(self, seed: int) -> bool:
        if not self.use_cache:
            return False
        return all(self._marker(f"seed-{seed:04d}/{r}").exists()
                   for r in ("fit", "train-dead-reckoning", "refine"))

    def evaluate(self, seeds: list[int]) -> Path:
        cfg = self.config
        seeds = [int(s) for s in seeds]
        self.build_seed_stages(seeds)
        inputs = [self._marker("preprocess"), self._marker("simulate"),
                  self._marker(f"seed-{cfg.scenario_seed:04d}/train-truth")]
        for s in seeds:
            inputs += [self._marker(f"seed-{s:04d}/fit"),
                       self._marker(f"seed-{s:04d}/train-dead-reckoning"),
                       self._marker(f"seed-{s:04d}/refine")]
        params = {"seeds": seeds, "smoother_in_eval": cfg.smoother_in_eval,
                  "smoother": self._cfg_subset("smoother")["smoother"],
                  "knn_k": cfg.pipeline.knn_k}
        n_cp = (len(cfg.control_points.indices)
                if cfg.control_points.indices is not None
                else cfg.control_points.count)

        def build(d: Path):
            per_method: dict[str, dict[str, list[float]]] = {
                m: {"mean": [], "median": [], "p90": []}
                for m in METHODS + ("knn-imu-supervised",)}
            for seed in seeds:
                for m, rep in self.seed_method_errors(seed).items():
                    per_method[m]["mean"].append(rep.mean)
                    per_method[m]["median"].append(rep.median)
                    per_method[m]["p90"].append(rep.p90)
            rows = {"method": [], "n_control_points": [], "mean_cm": [],
                    "mean_std_cm": [], "median_cm": [], "p90_cm": []}
            for m in METHODS:
                st = {k: seed_statistics(v) for k, v in per_method[m].items()}
                rows["method"].append(m)
                rows["n_control_points"].append(
                    "all" if m == "fully-supervised" else n_cp)
                rows["mean_cm"].append(100 * st["mean"]["mean"])
                rows["mean_std_cm"].append(100 * st["mean"]["std"])
                rows["median_cm"].append(100 * st["median"]["mean"])
                rows["p90_cm"].append(100 * st["p90"]["mean"])
            write_csv(d / "summary.csv", rows)
            (d / "summary.txt").write_text(_aligned_table(rows))
            kst = {k: seed_statistics(v)
                   for k, v in per_method["knn-imu-supervised"].items()}
            write_csv(d / "knn.csv", {
                "method": ["knn-imu-supervised"], "k": [cfg.pipeline.knn_k],
                "mean_cm": [100 * kst["mean"]["mean"]],
                "mean_std_cm": [100 * kst["mean"]["std"]],
                "median_cm": [100 * kst["median"]["mean"]],
                "p90_cm": [100 * kst["p90"]["mean"]]})
            (d / "per_seed.json").write_text(
                json.dumps(per_method, sort_keys=True))

        return self._stage("evaluate", params, inputs, build)

    # ------------------------------------------------------------------
    # reproduce-tables: IMU error table + horizontal table + IR curves
    # ------------------------------------------------------------------

    def reproduce_tables(self, seeds: list[int]) -> Path:
        seeds = [int(s) for s in seeds]
        eval_dir = self.evaluate(seeds)
        inputs = [self._marker("evaluate")]
        inputs += [self._marker(f"seed-{s:04d}/fit") for s in seeds]
        params = {"seeds": seeds}

        def build(d: Path):
            agg = {m: {"mean": [], "median": [], "p90": []}
                   for m in ("dead-reckoning", "forward-backward")}
            for seed in seeds:
                for m, rep in self.seed_pseudo_errors(seed).items():
                    agg[m]["mean"].append(rep.mean)
                    agg[m]["median"].append(rep.median)
                    agg[m]["p90"].append(rep.p90)
            rows = {"method": [], "mean_cm": [], "mean_std_cm": [],
                    "median_cm": [], "p90_cm": []}
            for m in ("dead-reckoning", "forward-backward"):
                st = {k: seed_statistics(v) for k, v in agg[m].items()}
                rows["method"].append(m)
                rows["mean_cm"].append(100 * st["mean"]["mean"])
                rows["mean_std_cm"].append(100 * st["mean"]["std"])
                rows["median_cm"].append(100 * st["median"]["mean"])
                rows["p90_cm"].append(100 * st["p90"]["mean"])
            write_csv(d / "imu_error.csv", rows)
            (d / "imu_error.txt").write_text(_aligned_table(rows))

            curve = {"iteration": [], "seed": [], "pseudo_mean_cm": [],
                     "test_mean_cm": [], "test_median_cm": [], "test_p90_cm": []}
            for seed in seeds:
                it_csv = read_csv(self.root / f"seed-{seed:04d}/refine/iterations.csv")
                for i in range(len(it_csv["iteration"])):
                    curve["iteration"].append(int(it_csv["iteration"][i]))
                    curve["seed"].append(int(seed))
                    curve["pseudo_mean_cm"].append(100 * float(it_csv["pseudo_mean"][i]))
                    curve["test_mean_cm"].append(100 * float(it_csv["test_mean"][i]))
                    curve["test_median_cm"].append(100 * float(it_csv["test_median"][i]))
                    curve["test_p90_cm"].append(100 * float(it_csv["test_p90"][i]))
            write_csv(d / "refinement_curve.csv", curve)
            shutil.copy(eval_dir / "summary.csv", d / "horizontal_error.csv")
            shutil.copy(eval_dir / "summary.txt", d / "horizontal_error.txt")

        return self._stage("tables", params, inputs, build)

    # ------------------------------------------------------------------
    # ablations
    # ------------------------------------------------------------------

    def ablate(self, knob: str, grid: list, seeds: list[int],
               radius: float | None = None, metric: str = "default") -> Path:
        if knob not in ("cp-noise", "cp-count", "snr-threshold"):
            raise ConfigurationError(f"unknown ablation knob '{knob}'")
        if not len(grid):
            raise ConfigurationError("ablation grid is empty")
        seeds = [int(s) for s in seeds]
        self.simulate()
        self.preprocess()
        points = [(float(v), s) for v in grid for s in seeds]
        if self.threads > 1 and len(points) > 1:
            cfg_dict = scenario_to_dict(self.config)
            jobs = [(cfg_dict, str(self.root.parent), self.use_cache,
                     knob, v, s, radius, metric) for v, s in points]
            with ProcessPoolExecutor(max_workers=self.threads) as ex:
                list(ex.map(_ablate_worker, jobs))
        inputs = [self._marker("preprocess")]
        for value, seed in points:
            inputs += self._ablate_point_stages(knob, value, seed, radius, metric)
        params = {"knob": knob, "grid": [float(v) for v in grid],
                  "radius": radius, "seeds": seeds, "metric": metric,
                  "smoother_in_eval": self.config.smoother_in_eval}
        rel = f"ablate-{knob}"

        def build(d: Path):
            rows = {"knob": [], "value": [], "seed": [], "mean_cm": [],
                    "median_cm": [], "p90_cm": []}
            for value in grid:
                for seed in seeds:
                    rep = self._ablate_point_report(knob, value, seed, radius, metric)
                    rows["knob"].append(knob)
                    rows["value"].append(float(value))
                    rows["seed"].append(int(seed))
                    rows["mean_cm"].append(100 * rep.mean)
                    rows["median_cm"].append(100 * rep.median)
                    rows["p90_cm"].append(100 * rep.p90)
            write_csv(d / "sweep.csv", rows)

        return self._stage(rel, params, inputs, build)

    def _ablate_override(self, knob, value, radius) -> dict | None:
        if knob == "cp-noise":
            return {"noise_sigma": float(value)}
        if knob == "cp-count":
            over = {"indices": None, "count": int(value)}
            if radius is not None:
                over["radius"] = float(radius)
            return over
        return None

    def _ablate_point_stages(self, knob, value, seed, radius, metric) -> list[Path]:
        over = self._ablate_override(knob, value, radius)
        markers = []
        if knob == "snr-threshold":
            fit_dir = self.fit_seed(seed)
            markers.append(fit_dir / ".complete")
            markers.append(self._ablate_train(seed, None, f"-snr={value}",
                                              float(value)) / ".complete")
            return markers
        fit_dir = self.fit_seed(seed, cp_override=over)
        markers.append(fit_dir / ".complete")
        needs_model = knob == "cp-noise" or metric == "model"
        if needs_model:
            markers.append(self._ablate_train(seed, over, _suffix(over), None)
                           / ".complete")
        return markers

    def _ablate_point_report(self, knob, value, seed, radius, metric) -> ErrorReport:
        over = self._ablate_override(knob, value, radius)
        ts = self.load_trajectory()
        if knob == "cp-count" and metric != "model":
            pseudo, _, _ = self.load_fit(seed, cp_override=over)
            return ErrorReport.from_positions(pseudo, ts.positions)
        if knob == "snr-threshold":
            feats, kept, _ = self._threshold_features(float(value))
            stage = self.root / f"seed-{seed:04d}/train-ablate-snr={value}"
        else:
            feats, kept, _ = self.load_features()
            stage = self.root / f"seed-{seed:04d}/train-ablate{_suffix(over)}"
        model, _ = load_mlp(stage / "model.ilc")
        _, test_rows = self._split_rows(kept, ts.n_samples)
        in_test = np.isin(kept, test_rows)
        return self._eval_model(model, feats[in_test], kept[in_test], ts)

    def _ablate_train(self, seed: int, over: dict | None, tag: str,
                      snr_threshold: float | None) -> Path:
        cfg = self.config
        rel = f"seed-{seed:04d}/train-ablate{tag}"
        fit_rel = f"seed-{seed:04d}/fit{_suffix(over)}"
        inputs = [self.root / fit_rel / "pseudo.ilc", self._marker("preprocess")]
        params = self._cfg_subset("train")
        params.update({"seed": int(seed), "tag": tag,
                       "epochs": cfg.pipeline.epochs_ablation,
                       "snr_threshold": snr_threshold,
                       "train_frac": cfg.pipeline.train_frac})

        def build(d: Path):
            if snr_threshold is not None:
                feats, kept, block = self._threshold_features(snr_threshold)
            else:
                feats, kept, block = self.load_features()
            ts = self.load_trajectory()
            pseudo, _, one_sided = self.load_fit(seed, cp_override=over)
            train_rows, _ = self._split_rows(kept, ts.n_samples)
            in_train = np.isin(kept, train_rows) & ~one_sided[kept]
            tc = dataclasses.replace(cfg.train, epochs=cfg.pipeline.epochs_ablation)
            res = train_mlp(feats[in_train], pseudo[kept[in_train]], tc,
                            seed=int(seed), pseudo_labels=True, augment_block=block)
            save_mlp(d / "model.ilc", res.model, {"seed": int(seed), "tag": tag},
                     config=tc)

        return self._stage(rel, params, inputs, build)

    def _threshold_features(self, threshold: float):
        fm, kept, _, _, _ = self._preprocess_arrays(threshold)
        return fm.features, kept, fm.block_size


def _suffix(over: dict | None) -> str:
    if not over:
        return ""
    parts = [f"{k}={over[k]}" for k in sorted(over) if over[k] is not None]
    return "-" + "-".join(parts).replace(" ", "")


def _aligned_table(rows: dict[str, list]) -> str:
    names = list(rows)
    cells = [[_fmt(rows[n][i]) for n in names] for i in range(len(rows[names[0]]))]
    widths = [max(len(n), *(len(r[j]) for r in cells)) for j, n in enumerate(names)]
    lines = ["  ".join(n.ljust(w) for n, w in zip(names, widths))]
    for r in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return f"{v:.1f}" if isinstance(v, float) else str(v)


def _seed_stages(pipe: Pipeline, seed: int) -> None:
    pipe.fit_seed(seed)
    pipe.train_seed(seed, "dead-reckoning")
    pipe.refine_seed(seed)


def _seed_worker(args: tuple) -> int:
    cfg_dict, out_root, use_cache, seed = args
    from .config import scenario_from_dict
    pipe = Pipeline(scenario_from_dict(cfg_dict), out_root, use_cache=use_cache)
    _seed_stages(pipe, seed)
    return seed


def _ablate_worker(args: tuple) -> None:
    cfg_dict, out_root, use_cache, knob, value, seed, radius, metric = args
    from .config import scenario_from_dict
    pipe = Pipeline(scenario_from_dict(cfg_dict), out_root, use_cache=use_cache)
    pipe._ablate_point_stages(knob, value, seed, radius, metric)
