"""FastAPI service exposing the training, scoring and experiment pipeline.

Batch endpoints operate on server-local paths (manifests, bank files,
output directories) and return summaries; the bank registry keeps loaded
banks in memory so many clients can score feature payloads against one
long-lived bank.
"""

from __future__ import annotations

import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, experiment, pipeline
from ..coreset import save_bank, load_bank
from ..errors import PatchBankError
from ..evaluation import trend_table
from ..featureio import FeatureMap, read_manifest, rebase_manifest, write_manifest
from ..inference import anomaly_map, score_image
from . import schemas


def _run_config(model: schemas.RunConfigModel) -> pipeline.RunConfig:
    cfg = pipeline.RunConfig(**model.model_dump())
    cfg.validate()
    return cfg


class BankRegistry:
    """In-memory store of loaded banks, keyed by an incrementing id."""

    def __init__(self):
        self._banks = {}
        self._lock = threading.Lock()
        self._next = 0

    def add(self, bank) -> str:
        with self._lock:
            bank_id = f"bank-{self._next}"
            self._next += 1
            self._banks[bank_id] = bank
        return bank_id

    def get(self, bank_id: str):
        try:
            return self._banks[bank_id]
        except KeyError:
            raise PatchBankError(f"unknown bank id '{bank_id}'") from None

    def items(self):
        return list(self._banks.items())


def create_app() -> FastAPI:
    app = FastAPI(title="patchbank", version=__version__)
    registry = BankRegistry()

    @app.exception_handler(PatchBankError)
    async def domain_error(request: Request, exc: PatchBankError):
        return JSONResponse(
            status_code=400,
            content={"detail": {"category": exc.category, "message": str(exc)}},
        )

    @app.get("/healthz", response_model=schemas.HealthResponse)
    def healthz():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        cfg = _run_config(req.config)
        bank, stats = pipeline.train_bank_from_manifest(
            req.train_manifest, cfg, req.audit_scores
        )
        out = Path(req.out_bank)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_bank(bank, out)
        return schemas.TrainResponse(
            bank_path=str(out),
            fingerprint=stats["fingerprint"],
            total_patches=stats["total_patches"],
            retained=stats["retained"],
            removed=stats["removed"],
            bank_size=stats["bank_size"],
            weight_min=stats["weight_min"],
            weight_mean=stats["weight_mean"],
            weight_max=stats["weight_max"],
            config=req.config,
        )

    @app.post("/infer", response_model=schemas.InferResponse)
    def infer(req: schemas.InferRequest):
        cfg = _run_config(req.config)
        bank = load_bank(req.bank)
        manifest = read_manifest(req.manifest)
        sigma = cfg.sigma if req.maps_dir else None
        results = pipeline.score_manifest(bank, manifest, req.manifest, sigma)
        fingerprint = bank.config_fingerprint.hex()
        out = Path(req.out_scores)
        out.parent.mkdir(parents=True, exist_ok=True)
        pipeline.write_scores_file(results, out, fingerprint)
        maps_index = None
        if req.maps_dir:
            maps_index = str(
                pipeline.save_pixel_maps(results, req.maps_dir, fingerprint, req.maps_format)
            )
        return schemas.InferResponse(
            scores_path=str(out),
            maps_index=maps_index,
            fingerprint=fingerprint,
            scores=[schemas.ImageScore(image_id=r.image_id, score=r.image_score) for r in results],
        )

    @app.post("/eval", response_model=schemas.EvalResponse)
    def evaluate(req: schemas.EvalRequest):
        scores, fingerprint = pipeline.read_scores_file(req.scores)
        manifest = read_manifest(req.manifest)
        maps_by_id = None
        if req.maps_dir:
            from ..featureio import read_feature_file

            maps_by_id = {}
            for entry in manifest.entries:
                map_path = Path(req.maps_dir) / f"{entry.image_id}.spf"
                maps_by_id[entry.image_id] = read_feature_file(map_path).data[:, :, 0]
        report = pipeline.evaluate_results(
            scores,
            manifest,
            req.manifest,
            maps_by_id,
            noise_ratio=req.noise_ratio,
            setting=req.setting,
            category=req.category,
        )
        report_path = None
        if req.out_report:
            out = Path(req.out_report)
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(report.to_text(fingerprint))
            report_path = str(out)
        return schemas.EvalResponse(
            image_auroc=report.image_auroc,
            pixel_auroc=report.pixel_auroc,
            report_path=report_path,
            fingerprint=fingerprint,
        )

    @app.post("/inject", response_model=schemas.InjectResponse)
    def inject(req: schemas.InjectRequest):
        spec = experiment.NoiseInjectionSpec(req.noise_ratio, req.setting, req.seed)
        train = rebase_manifest(read_manifest(req.train_manifest), req.train_manifest)
        test = rebase_manifest(read_manifest(req.test_manifest), req.test_manifest)
        new_train, new_test = experiment.inject_noise(train, test, spec)
        out_dir = Path(req.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        train_out = out_dir / "train_noisy.manifest"
        test_out = out_dir / "test_noisy.manifest"
        write_manifest(new_train, train_out)
        write_manifest(new_test, test_out)
        return schemas.InjectResponse(
            train_manifest=str(train_out),
            test_manifest=str(test_out),
            injected=len(new_train) - len(train),
        )

    @app.post("/synthetic", response_model=schemas.SyntheticResponse)
    def synthetic(req: schemas.SyntheticRequest):
        spec = experiment.SyntheticSpec(
            n_images=req.n_train,
            height=req.height,
            width=req.width,
            channels=req.channels,
            outlier_fraction=0.0,
            outlier_shift=req.outlier_shift,
            cluster_std=req.cluster_std,
            seed=req.seed,
        )
        train_path, test_path = pipeline.write_synthetic_benchmark(
            req.out_dir,
            spec,
            n_train=req.n_train,
            n_test_normal=req.n_test_normal,
            n_test_anomalous=req.n_test_anomalous,
            mask_scale=req.mask_scale,
        )
        return schemas.SyntheticResponse(train_manifest=str(train_path), test_manifest=str(test_path))

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest):
        cfg = _run_config(req.config)
        train = rebase_manifest(read_manifest(req.train_manifest), req.train_manifest)
        test = rebase_manifest(read_manifest(req.test_manifest), req.test_manifest)
        cells = experiment.run_sweep(
            train,
            test,
            req.ratios,
            req.settings,
            req.methods,
            cfg,
            repeats=req.repeats,
        )
        tables = {}
        for setting in req.settings:
            values = {
                (c.noise_ratio, c.method): c.report.image_auroc
                for c in cells
                if c.setting == setting
            }
            tables[f"{setting}/image_auroc"] = trend_table(values, req.ratios, req.methods)
            pixel_values = {
                (c.noise_ratio, c.method): c.report.pixel_auroc
                for c in cells
                if c.setting == setting and c.report.pixel_auroc is not None
            }
            if pixel_values:
                tables[f"{setting}/pixel_auroc"] = trend_table(
                    pixel_values, req.ratios, req.methods, metric="pixel_auroc"
                )
        out_dir = None
        if req.out_dir:
            out_dir = Path(req.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            for cell in cells:
                name = f"ratio{cell.noise_ratio:g}_{cell.setting}_{cell.method}.report"
                body = cell.report.to_text()
                body += f"method={cell.method}\n"
                body += f"seeds={','.join(str(s) for s in cell.seeds)}\n"
                body += f"fingerprints={','.join(cell.fingerprints)}\n"
                (out_dir / name).write_text(body)
            combined = "\n".join(f"[{k}]\n{v}" for k, v in sorted(tables.items()))
            (out_dir / "sweep_table.txt").write_text(combined)
        return schemas.SweepResponse(
            cells=[
                schemas.SweepCellModel(
                    noise_ratio=c.noise_ratio,
                    setting=c.setting,
                    method=c.method,
                    image_auroc=c.report.image_auroc,
                    pixel_auroc=c.report.pixel_auroc,
                    seeds=c.seeds,
                    fingerprints=c.fingerprints,
                )
                for c in cells
            ],
            tables=tables,
            out_dir=str(out_dir) if out_dir else None,
        )

    @app.post("/banks/load", response_model=schemas.BankInfo)
    def banks_load(req: schemas.BankLoadRequest):
        bank = load_bank(req.path)
        bank_id = registry.add(bank)
        return schemas.BankInfo(
            bank_id=bank_id,
            size=len(bank),
            channels=bank.channels,
            fingerprint=bank.config_fingerprint.hex(),
        )

    @app.get("/banks", response_model=list[schemas.BankInfo])
    def banks_list():
        return [
            schemas.BankInfo(
                bank_id=bank_id,
                size=len(bank),
                channels=bank.channels,
                fingerprint=bank.config_fingerprint.hex(),
            )
            for bank_id, bank in registry.items()
        ]

    @app.post("/banks/{bank_id}/score", response_model=schemas.ScoreResponse)
    def banks_score(bank_id: str, req: schemas.ScoreRequest):
        bank = registry.get(bank_id)
        data = np.asarray(req.features, dtype=np.float32)
        if data.ndim != 3:
            raise PatchBankError("features must be a (h, w, c) nested list")
        result = score_image(bank, FeatureMap(req.image_id, data))
        pixel = None
        if req.render_map:
            out_h = req.map_height or data.shape[0]
            out_w = req.map_width or data.shape[1]
            result = anomaly_map(result, out_h, out_w, req.sigma)
            pixel = result.pixel_map.tolist()
        return schemas.ScoreResponse(
            image_id=result.image_id,
            image_score=result.image_score,
            patch_scores=result.patch_scores.tolist(),
            pixel_map=pixel,
        )

    return app
