"""Batch command-line client for the patchbank service.

The CLI is a thin client: every subcommand builds a request, sends it to
the HTTP service and formats the response.  Without ``--server`` the
service runs in-process (same filesystem, no daemon needed); with it, the
same requests go to a remote instance and all paths refer to the server's
filesystem.

Exit codes: 0 success, 2 input error, 3 format error, 4 spec infeasible.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

from .errors import EXIT_CODES


class CommandFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class ServiceClient:
    """Sends requests either to a remote service or to an in-process app.

    The in-process route still goes through the full HTTP layer (ASGI
    transport), so the CLI exercises exactly the interface a remote client
    would.
    """

    def __init__(self, server: str | None = None):
        self._server = server
        if server is None:
            from .service import create_app

            self._app = create_app()

    async def _send(self, method: str, path: str, payload: dict | None) -> tuple[int, dict | None]:
        if self._server:
            client = httpx.AsyncClient(base_url=self._server, timeout=600.0)
        else:
            client = httpx.AsyncClient(
                transport=httpx.ASGITransport(app=self._app),
                base_url="http://patchbank.internal",
                timeout=600.0,
            )
        async with client:
            response = await client.request(method, path, json=payload)
            try:
                body = response.json()
            except ValueError:
                body = None
            return response.status_code, body

    def request(self, method: str, path: str, payload: dict | None = None) -> dict:
        try:
            status, body = asyncio.run(self._send(method, path, payload))
        except httpx.HTTPError as exc:
            raise CommandFailure(2, f"cannot reach service: {exc}") from exc
        if status == 200:
            return body
        detail = body.get("detail") if isinstance(body, dict) else None
        if isinstance(detail, dict) and "category" in detail:
            code = EXIT_CODES.get(detail["category"], 1)
            raise CommandFailure(code, detail.get("message", "request failed"))
        raise CommandFailure(2, f"request failed with status {status}: {detail}")


def _config_payload(args: argparse.Namespace) -> dict:
    projection = args.projection_dim if args.projection_dim > 0 else None
    return {
        "method": args.method,
        "tau": args.tau,
        "sampler": args.sampler,
        "sampling_ratio": args.ratio,
        "projection_dim": projection,
        "lof_k": args.lof_k,
        "epsilon": args.epsilon,
        "sigma": args.sigma,
        "seed": args.seed,
        "threads": args.threads,
    }


def _echo_config(command: str, payload: dict) -> None:
    print(f"config: {json.dumps({'command': command, **payload}, sort_keys=True)}")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", default="lof", choices=["lof", "nearest", "gaussian", "none"])
    parser.add_argument("--tau", type=float, default=0.15, help="removed patch fraction")
    parser.add_argument("--ratio", type=float, default=0.10, help="coreset sampling ratio")
    parser.add_argument("--sampler", default="greedy", choices=["greedy", "random"])
    parser.add_argument(
        "--projection-dim", type=int, default=128,
        help="random projection dim for greedy distances, 0 disables",
    )
    parser.add_argument("--lof-k", type=int, default=6)
    parser.add_argument("--epsilon", type=float, default=0.01)
    parser.add_argument("--sigma", type=float, default=4.0, help="pixel-map smoothing std")
    parser.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchbank", description=__doc__)
    parser.add_argument("--server", default=None, help="base URL of a running service")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="build a memory bank from a training manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output bank file (SPB1)")
    p.add_argument("--audit-scores", default=None, help="also export raw scores (SPS1)")
    p.add_argument("--seed", type=int, default=0)
    _add_config_flags(p)

    p = sub.add_parser("infer", help="score a manifest against a bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-scores", required=True)
    p.add_argument("--maps-dir", default=None)
    p.add_argument("--maps-format", default="spf1", choices=["spf1", "png16"])
    p.add_argument("--seed", type=int, default=0)
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a scores file against manifest labels")
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--maps-dir", default=None)
    p.add_argument("--out", default=None, help="report file")
    p.add_argument("--category", default=None)
    p.add_argument("--noise-ratio", type=float, default=0.0)
    p.add_argument("--setting", default="no_overlap", choices=["no_overlap", "overlap"])
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("inject", help="inject anomalous test images into a training manifest")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--noise-ratio", type=float, required=True)
    p.add_argument("--setting", default="no_overlap", choices=["no_overlap", "overlap"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen-synthetic", help="write a synthetic feature benchmark")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-train", type=int, default=60)
    p.add_argument("--n-test-normal", type=int, default=40)
    p.add_argument("--n-test-anomalous", type=int, default=20)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--shift", type=float, default=5.0)
    p.add_argument("--cluster-std", type=float, default=0.1)
    p.add_argument("--mask-scale", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep", help="cross-product of noise ratios, settings and methods")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--ratios", required=True, help="comma-separated noise ratios")
    p.add_argument("--settings", default="no_overlap", help="comma-separated settings")
    p.add_argument("--methods", default="lof", help="comma-separated methods")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_config_flags(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8410)

    return parser


def _cmd_train(client: ServiceClient, args) -> int:
    payload = {
        "train_manifest": args.manifest,
        "out_bank": args.out,
        "audit_scores": args.audit_scores,
        "config": _config_payload(args),
    }
    _echo_config("train", payload)
    body = client.request("POST", "/train", payload)
    print(f"bank: {body['bank_path']}")
    print(f"fingerprint: {body['fingerprint']}")
    print(
        f"patches: total={body['total_patches']} retained={body['retained']} "
        f"removed={body['removed']} bank_size={body['bank_size']}"
    )
    print(
        f"weights: min={body['weight_min']:.6g} mean={body['weight_mean']:.6g} "
        f"max={body['weight_max']:.6g}"
    )
    return 0


def _cmd_infer(client: ServiceClient, args) -> int:
    payload = {
        "bank": args.bank,
        "manifest": args.manifest,
        "out_scores": args.out_scores,
        "maps_dir": args.maps_dir,
        "maps_format": args.maps_format,
        "config": _config_payload(args),
    }
    _echo_config("infer", payload)
    body = client.request("POST", "/infer", payload)
    print(f"scores: {body['scores_path']}")
    if body.get("maps_index"):
        print(f"maps: {body['maps_index']}")
    print(f"fingerprint: {body['fingerprint']}")
    for item in body["scores"]:
        print(f"  {item['image_id']}: {item['score']:.6g}")
    return 0


def _cmd_eval(client: ServiceClient, args) -> int:
    payload = {
        "scores": args.scores,
        "manifest": args.manifest,
        "maps_dir": args.maps_dir,
        "out_report": args.out,
        "category": args.category,
        "noise_ratio": args.noise_ratio,
        "setting": args.setting,
    }
    _echo_config("eval", {**payload, "seed": args.seed})
    body = client.request("POST", "/eval", payload)
    print(f"image_auroc: {body['image_auroc']:.6f}")
    if body.get("pixel_auroc") is not None:
        print(f"pixel_auroc: {body['pixel_auroc']:.6f}")
    if body.get("report_path"):
        print(f"report: {body['report_path']}")
    return 0


def _cmd_inject(client: ServiceClient, args) -> int:
    payload = {
        "train_manifest": args.train,
        "test_manifest": args.test,
        "noise_ratio": args.noise_ratio,
        "setting": args.setting,
        "seed": args.seed,
        "out_dir": args.out_dir,
    }
    _echo_config("inject", payload)
    body = client.request("POST", "/inject", payload)
    print(f"train_manifest: {body['train_manifest']}")
    print(f"test_manifest: {body['test_manifest']}")
    print(f"injected: {body['injected']}")
    return 0


def _cmd_gen_synthetic(client: ServiceClient, args) -> int:
    payload = {
        "out_dir": args.out_dir,
        "n_train": args.n_train,
        "n_test_normal": args.n_test_normal,
        "n_test_anomalous": args.n_test_anomalous,
        "height": args.height,
        "width": args.width,
        "channels": args.channels,
        "outlier_shift": args.shift,
        "cluster_std": args.cluster_std,
        "seed": args.seed,
        "mask_scale": args.mask_scale,
    }
    _echo_config("gen-synthetic", payload)
    body = client.request("POST", "/synthetic", payload)
    print(f"train_manifest: {body['train_manifest']}")
    print(f"test_manifest: {body['test_manifest']}")
    return 0


def _cmd_sweep(client: ServiceClient, args) -> int:
    payload = {
        "train_manifest": args.train,
        "test_manifest": args.test,
        "ratios": [float(x) for x in args.ratios.split(",") if x],
        "settings": [s for s in args.settings.split(",") if s],
        "methods": [m for m in args.methods.split(",") if m],
        "repeats": args.repeats,
        "out_dir": args.out_dir,
        "config": _config_payload(args),
    }
    _echo_config("sweep", payload)
    body = client.request("POST", "/sweep", payload)
    for name in sorted(body["tables"]):
        print(f"[{name}]")
        print(body["tables"][name])
    if body.get("out_dir"):
        print(f"reports: {body['out_dir']}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return _cmd_serve(args)
    handlers = {
        "train": _cmd_train,
        "infer": _cmd_infer,
        "eval": _cmd_eval,
        "inject": _cmd_inject,
        "gen-synthetic": _cmd_gen_synthetic,
        "sweep": _cmd_sweep,
    }
    client = ServiceClient(args.server)
    try:
        return handlers[args.command](client, args)
    except CommandFailure as failure:
        print(f"error: {failure}", file=sys.stderr)
        return failure.code


if __name__ == "__main__":
    sys.exit(main())
