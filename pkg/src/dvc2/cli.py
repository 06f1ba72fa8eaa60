"""Command-line client.

All compute-bearing commands are thin wrappers over the HTTP service: by
default they spin the FastAPI app up in process, or target a running
server via ``--server``. ``selftest`` is the exception; it verifies the
locally installed build directly.

Commands::

    dvc2 serve        [--host H] [--port P]
    dvc2 init-random  --out CKPT [--config FILE] [--seed N]
    dvc2 convert      --model CKPT --input FEAT --speaker VEC --output FEAT
                      [--mode streaming|nonstreaming] [--chunk-frames N]
                      [--left-chunks N]
    dvc2 bench        --model CKPT [--chunk-frames N] [--iters N]
                      [--threads N] [--stub-asr RTF] [--stub-vocoder RTF]
                      [--frame-shift MS] [--warmup N] [--left-chunks N]
                      [--emit-kv]
    dvc2 selftest

The environment variable ``DVC2_SEED`` overrides the default seed of
commands that take one.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .errors import EngineError
from .fileio import (
    DEFAULT_FRAME_SHIFT_MS,
    config_from_text,
    load_features,
    load_speaker,
    save_features,
)
from .schemas import ConfigSchema, decode_frames, encode_frames


class CliError(Exception):
    pass


def _default_seed() -> int:
    try:
        return int(os.environ.get("DVC2_SEED", "0"))
    except ValueError as e:
        raise CliError(f"DVC2_SEED must be an integer: {e}") from e


class ServiceClient:
    """Minimal JSON client over httpx; in-process ASGI when no server given."""

    def __init__(self, server: str | None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def close(self) -> None:
        self._client.close()

    def request(self, method: str, path: str, json: dict | None = None) -> dict:
        resp = self._client.request(method, path, json=json)
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            raise CliError(f"{method} {path} failed ({resp.status_code}): {detail}")
        return resp.json()

    def post(self, path: str, json: dict | None = None) -> dict:
        return self.request("POST", path, json)

    def get(self, path: str) -> dict:
        return self.request("GET", path)

    def delete(self, path: str) -> dict:
        return self.request("DELETE", path)


def _load_model(client: ServiceClient, path: str) -> dict:
    return client.post("/models/load", {"path": os.path.abspath(path)})


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("dvc2.service:app", host=args.host, port=args.port)
    return 0


def cmd_init_random(args) -> int:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = config_from_text(fh.read())
        schema = ConfigSchema.from_config(cfg)
    else:
        schema = ConfigSchema()
    seed = args.seed if args.seed is not None else _default_seed()
    client = ServiceClient(args.server)
    try:
        info = client.post(
            "/models/init-random", {"config": schema.model_dump(), "seed": seed}
        )
        saved = client.post(
            f"/models/{info['model_id']}/save", {"path": os.path.abspath(args.out)}
        )
        client.delete(f"/models/{info['model_id']}")
    finally:
        client.close()
    print(
        f"wrote {saved['path']} ({saved['bytes_written']} bytes, "
        f"{info['params_millions']:.2f} M params, seed {seed})"
    )
    return 0


def cmd_convert(args) -> int:
    frames, frame_shift = load_features(args.input)
    speaker = load_speaker(args.speaker)
    client = ServiceClient(args.server)
    try:
        info = _load_model(client, args.model)
        model_id = info["model_id"]
        try:
            if args.mode == "streaming":
                mel = _convert_streaming(client, model_id, frames, speaker, args)
            else:
                resp = client.post(
                    f"/models/{model_id}/convert",
                    {
                        "frames": encode_frames(frames),
                        "n_frames": int(frames.shape[0]),
                        "speaker": [float(v) for v in speaker.vec],
                        "mode": args.mode,
                        "chunk_frames": args.chunk_frames,
                        "left_chunks": args.left_chunks,
                    },
                )
                mel = decode_frames(resp["frames"], resp["n_frames"])
                if resp["n_frames"] == 0:
                    mel = np.zeros((0, info["config"]["output_dim"]), dtype=np.float32)
        finally:
            client.delete(f"/models/{model_id}")
    finally:
        client.close()
    save_features(args.output, mel, frame_shift_ms=frame_shift)
    print(f"wrote {args.output} ({mel.shape[0]} frames x {mel.shape[1]} bins, {args.mode})")
    return 0


def _convert_streaming(client, model_id, frames, speaker, args) -> np.ndarray:
    opened = client.post(
        "/streams",
        {
            "model_id": model_id,
            "speaker": [float(v) for v in speaker.vec],
            "chunk_frames": args.chunk_frames,
            "left_chunks": args.left_chunks,
        },
    )
    stream_id = opened["stream_id"]
    out_dim = client.get(f"/models/{model_id}")["config"]["output_dim"]
    parts: list[np.ndarray] = []
    for start in range(0, frames.shape[0], args.chunk_frames):
        chunk = frames[start : start + args.chunk_frames]
        resp = client.post(
            f"/streams/{stream_id}/push",
            {"frames": encode_frames(chunk), "n_frames": int(chunk.shape[0])},
        )
        parts.append(decode_frames(resp["frames"], resp["n_frames"]))
    client.post(f"/streams/{stream_id}/close")
    if not parts:
        return np.zeros((0, out_dim), dtype=np.float32)
    return np.concatenate(parts, axis=0)


def cmd_bench(args) -> int:
    client = ServiceClient(args.server)
    try:
        info = _load_model(client, args.model)
        try:
            resp = client.post(
                "/bench",
                {
                    "model_id": info["model_id"],
                    "chunk_frames": args.chunk_frames,
                    "frame_shift_ms": args.frame_shift,
                    "iterations": args.iters,
                    "warmup": args.warmup,
                    "threads": args.threads,
                    "stub_asr_rtf": args.stub_asr,
                    "stub_vocoder_rtf": args.stub_vocoder,
                    "left_chunks": args.left_chunks,
                    "seed": args.seed if args.seed is not None else _default_seed(),
                },
            )
        finally:
            client.delete(f"/models/{info['model_id']}")
    finally:
        client.close()
    print(resp["table"])
    if args.emit_kv:
        print(resp["kv"])
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_and_print

    return run_and_print()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvc2",
        description="Streaming dual-mode voice-conversion engine client",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_server(p):
        p.add_argument(
            "--server",
            default=None,
            help="service URL; omitted = run the service in process",
        )

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("init-random", help="write a seeded random checkpoint")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    add_server(p)
    p.set_defaults(fn=cmd_init_random)

    p = sub.add_parser("convert", help="convert a feature file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--speaker", required=True, help="single-frame feature file")
    p.add_argument("--mode", choices=["streaming", "nonstreaming"], default="streaming")
    p.add_argument("--chunk-frames", type=int, default=16)
    p.add_argument("--left-chunks", type=int, default=None)
    p.add_argument("--output", required=True)
    add_server(p)
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("bench", help="measure per-stage RTF and latency")
    p.add_argument("--model", required=True)
    p.add_argument("--chunk-frames", type=int, default=16)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--stub-asr", type=float, default=None, help="recognizer stub RTF")
    p.add_argument("--stub-vocoder", type=float, default=None, help="vocoder stub RTF")
    p.add_argument("--frame-shift", type=float, default=DEFAULT_FRAME_SHIFT_MS)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--left-chunks", type=int, default=16)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--emit-kv", action="store_true")
    add_server(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("selftest", help="run the built-in verification suites")
    p.set_defaults(fn=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except (CliError, EngineError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
