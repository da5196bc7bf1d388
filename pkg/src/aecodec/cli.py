"""Single entry-point command line tool wiring all modules together.

Subcommands: train, encode, decode, send, recv, bench, sweep, metrics.
Configuration comes from an optional ``key = value`` file plus flags;
flags win. Every run prints its fully resolved configuration. Exit status
is 0 only when the requested artifact files were fully written; usage and
configuration problems exit 2, runtime failures exit 1.
"""

import argparse
import socket
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from . import data, fileio, metrics, training, transfer
from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    MissingParameterError,
    ProtocolError,
    TrainingDiverged,
    TransferError,
)
from .model import encode, decode, init_params

_USAGE_ERRORS = (ConfigError,)
_RUNTIME_ERRORS = (
    DimensionError,
    FormatError,
    MissingParameterError,
    ProtocolError,
    TrainingDiverged,
    TransferError,
    ValueError,
    OSError,
)


def _parse_bool(value):
    low = value.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {value!r}")


def _log_config(label, mapping):
    print(f"[{label}] resolved configuration:")
    for key in sorted(mapping):
        print(f"  {key} = {mapping[key]}")


def _resolve_train_config(args):
    if args.config:
        config = training.load_train_config(args.config)
    else:
        config = training.TrainConfig()
    overrides = {
        "batch_size": args.batch_size,
        "lr": args.lr,
        "max_epochs": args.epochs,
        "pgic_enabled": args.pgic,
        "image_size": args.size,
        "seed_init": args.seed_init,
        "seed_split": args.seed_split,
        "seed_augment": args.seed_augment,
        "residual_weight": args.residual_weight,
    }
    return training.apply_overrides(config, overrides)


def _load_unit_image(path):
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return pixels


def _image_to_chw(pixels):
    return np.ascontiguousarray(
        pixels.astype(np.float32).transpose(2, 0, 1) / 255.0
    )


def _save_png(image_chw, path):
    pixels = np.clip(np.rint(image_chw * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def _prepare(args, config):
    records = data.load_directory(args.data_dir)
    return data.prepare_dataset(records, config.image_size, config.seed_split)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args):
    config = _resolve_train_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _log_config("train", {**asdict(config), "data_dir": args.data_dir,
                          "out": str(out_dir)})

    dataset = _prepare(args, config)
    params = init_params(config.seed_init)
    best, logs = training.train(
        config, dataset, params, epoch_csv_path=out_dir / "epochs.csv"
    )

    weights_path = out_dir / "weights.aew1"
    fileio.save_weights(best, weights_path)
    with open(out_dir / "loss_curve.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,L\n")
        for log in logs:
            fh.write(f"{log.epoch},{log.train_L:.10g}\n")

    last = logs[-1] if logs else None
    if last is not None:
        print(
            f"[train] {len(logs)} epochs, final train L {last.train_L:.6f}, "
            f"val L {last.val_L:.6f}"
        )
    print(f"[train] weights -> {weights_path}")
    return 0


def cmd_encode(args):
    params = fileio.load_weights(args.weights)
    pixels = _load_unit_image(args.image)
    if args.size:
        image = data.resize_to_square(pixels, args.size)
    else:
        image = _image_to_chw(pixels)
    _log_config("encode", {
        "weights": args.weights, "image": args.image, "out": args.out,
        "mode": args.mode, "size": args.size,
    })
    latent = encode(image[None], params)
    mode = "u8" if args.mode == "latent-u8" else "f32"
    fileio.save_latent(latent, args.out, mode=mode)
    print(
        f"[encode] latent dims ({latent.channels},{latent.height},"
        f"{latent.width}) -> {args.out}"
    )
    return 0


def cmd_decode(args):
    params = fileio.load_weights(args.weights)
    latent = fileio.load_latent(args.latent)
    _log_config("decode", {
        "weights": args.weights, "latent": args.latent, "out": args.out,
    })
    image = decode(latent, params)[0]
    _save_png(image, args.out)
    print(f"[decode] image {image.shape[1]}x{image.shape[2]} -> {args.out}")
    return 0


def _pair_metrics(original_path, candidate_path):
    orig = _image_to_chw(_load_unit_image(original_path))
    cand_pixels = _load_unit_image(candidate_path)
    cand = _image_to_chw(cand_pixels)
    if orig.shape != cand.shape:
        raise DimensionError(
            f"image dimensions differ: {original_path} is {orig.shape}, "
            f"{candidate_path} is {cand.shape}"
        )
    mse = metrics.mse_metric(orig, cand)
    raw_bytes = orig.shape[1] * orig.shape[2] * 3
    report = metrics.MetricsReport(
        psnr=metrics.psnr_from_mse(mse),
        ssim=metrics.ssim(orig, cand),
        mse=mse,
        n_images=1,
        compression_ratio=raw_bytes / Path(candidate_path).stat().st_size,
    )
    return report


def cmd_metrics(args):
    original = Path(args.original)
    candidate = Path(args.candidate)
    _log_config("metrics", {"original": str(original), "candidate": str(candidate)})
    if original.is_dir() != candidate.is_dir():
        raise ConfigError("original and candidate must both be files or both dirs")
    if original.is_dir():
        names = sorted(p.name for p in original.iterdir() if p.is_file())
        pairs = [(original / n, candidate / n) for n in names
                 if (candidate / n).exists()]
        if not pairs:
            raise ConfigError("no matching file names between the two directories")
    else:
        pairs = [(original, candidate)]

    rows = []
    print("original,candidate,psnr,ssim,mse,byte_ratio")
    for orig_path, cand_path in pairs:
        report = _pair_metrics(orig_path, cand_path)
        rows.append((orig_path.name, report))
        print(
            f"{orig_path.name},{cand_path.name},{report.psnr:.6g},"
            f"{report.ssim:.6g},{report.mse:.6g},{report.compression_ratio:.4f}"
        )
    print(metrics.render_metrics_table(rows, first_column="Image"))
    return 0


def _payload_for_send(args):
    path = Path(args.file)
    blob = path.read_bytes()
    if args.mode == "raw":
        return transfer.KIND_RAW, blob
    if blob[:4] == fileio.LATENT_MAGIC:
        return transfer.KIND_LATENT, blob
    if not args.weights:
        raise ConfigError(
            f"mode {args.mode} on a non-latent file needs --weights to encode"
        )
    params = fileio.load_weights(args.weights)
    image = data.resize_to_square(_load_unit_image(path), args.size or 256)
    latent = encode(image[None], params)
    mode = "u8" if args.mode == "latent-u8" else "f32"
    return transfer.KIND_LATENT, fileio.serialize_latent(latent, mode)


def cmd_send(args):
    kind, payload = _payload_for_send(args)
    _log_config("send", {
        "host": args.host, "port": args.port, "file": args.file,
        "mode": args.mode, "rate_bytes_per_sec": args.rate_bytes_per_sec,
    })
    sock = socket.create_connection((args.host, args.port))
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    with transfer.FramedConnection(
        sock, rate_bytes_per_sec=args.rate_bytes_per_sec
    ) as conn:
        timing = conn.send_payload(kind, payload)
    print("file,mode,payload_bytes,round_trip_s,one_way_s")
    print(
        f"{args.file},{args.mode},{timing.payload_bytes},"
        f"{timing.round_trip:.6f},{timing.one_way:.6f}"
    )
    return 0


def cmd_recv(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = out_dir / ".write_probe"
    try:
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out_dir} is not writable: {exc}") from exc

    _log_config("recv", {"port": args.port, "out": str(out_dir)})
    listener = socket.create_server((args.host, args.port))
    port = listener.getsockname()[1]
    print(f"[recv] listening on {args.host}:{port}")
    client, peer = listener.accept()
    listener.close()
    count = 0
    print("index,kind,payload_bytes,path")
    with transfer.FramedConnection(client) as conn:
        while True:
            try:
                kind, payload = conn.recv_payload()
            except transfer.ConnectionClosed:
                break
            suffix = ".ael1" if kind == transfer.KIND_LATENT else ".bin"
            target = out_dir / f"received_{count:04d}{suffix}"
            target.write_bytes(payload)
            print(f"{count},{kind},{len(payload)},{target}")
            count += 1
    print(f"[recv] {count} payload(s) written to {out_dir}")
    return 0


def cmd_bench(args):
    if args.rate_bytes_per_sec is not None and args.rate_bytes_per_sec <= 0:
        raise ConfigError("--rate-bytes-per-sec must be positive")
    params = fileio.load_weights(args.weights)
    records = data.load_directory(args.image_dir)
    images = np.stack([
        data.resize_to_square(r, args.size) for r in records
    ])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _log_config("bench", {
        "weights": args.weights, "image_dir": args.image_dir,
        "rate_bytes_per_sec": args.rate_bytes_per_sec, "size": args.size,
        "out": str(out_dir), "n_images": images.shape[0],
    })
    report = transfer.latency_bench(
        images, params, rate_bytes_per_sec=args.rate_bytes_per_sec
    )
    (out_dir / "bench_timings.csv").write_text(report.csv(), encoding="utf-8")
    summary = report.summary_lines()
    (out_dir / "bench_summary.txt").write_text(
        "\n".join(summary) + "\n", encoding="utf-8"
    )
    for line in summary:
        print(f"[bench] {line}")
    return 0


def cmd_sweep(args):
    config = _resolve_train_config(args)
    sizes = []
    for chunk in args.batch_sizes.split(","):
        value = int(chunk.strip())
        if value in sizes:
            warnings.warn(f"duplicate batch size {value} ignored", stacklevel=2)
            continue
        sizes.append(value)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _log_config("sweep", {**asdict(config), "batch_sizes": sizes,
                          "data_dir": args.data_dir, "out": str(out_dir)})

    dataset = _prepare(args, config)
    rows = []
    for bs in sizes:
        cfg = training.apply_overrides(config, {"batch_size": bs})
        params = init_params(cfg.seed_init)
        best, _ = training.train(cfg, dataset, params)
        report = metrics.evaluate_model(best, dataset.val_images)
        rows.append((bs, report))
        print(f"[sweep] batch {bs}: psnr {report.psnr:.4f} ssim {report.ssim:.4f} "
              f"mse {report.mse:.6f}")

    csv_path = out_dir / "sweep.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("batch_size,psnr,ssim,mse\n")
        for bs, report in rows:
            fh.write(f"{bs},{report.csv_row()}\n")
    print(metrics.render_metrics_table(rows, first_column="Batch Size"))
    print(f"[sweep] results -> {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def _add_train_flags(sub):
    sub.add_argument("--config", help="key = value training config file")
    sub.add_argument("--batch-size", type=int, dest="batch_size")
    sub.add_argument("--lr", type=float)
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--size", type=int, help="square training resolution")
    sub.add_argument("--pgic", type=_parse_bool, default=None,
                     help="enable the residual-loss term (true/false)")
    sub.add_argument("--residual-weight", type=float, dest="residual_weight")
    sub.add_argument("--seed-init", type=int, dest="seed_init")
    sub.add_argument("--seed-split", type=int, dest="seed_split")
    sub.add_argument("--seed-augment", type=int, dest="seed_augment")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aecodec",
        description="Autoencoder image codec: training, latent files, TCP "
                    "transfer, and quality/latency benchmarks.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="train a codec on an image directory")
    p.add_argument("--data-dir", required=True, dest="data_dir")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("encode", help="compress an image to a latent file")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("latent-f32", "latent-u8"),
                   default="latent-f32")
    p.add_argument("--size", type=int, default=256,
                   help="resize to this square first; 0 keeps the original dims")
    p.set_defaults(func=cmd_encode)

    p = subs.add_parser("decode", help="reconstruct a PNG from a latent file")
    p.add_argument("--weights", required=True)
    p.add_argument("--latent", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = subs.add_parser("send", help="send one file over framed TCP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--file", required=True)
    p.add_argument("--mode", choices=("raw", "latent-f32", "latent-u8"),
                   default="raw")
    p.add_argument("--weights", help="needed to encode an image on the fly")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--rate-bytes-per-sec", type=float, default=None,
                   dest="rate_bytes_per_sec")
    p.set_defaults(func=cmd_send)

    p = subs.add_parser("recv", help="receive framed payloads into a directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recv)

    p = subs.add_parser("bench", help="loopback latency benchmark of all modes")
    p.add_argument("--weights", required=True)
    p.add_argument("--image-dir", required=True, dest="image_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--rate-bytes-per-sec", type=float, required=True,
                   dest="rate_bytes_per_sec")
    p.set_defaults(func=cmd_bench)

    p = subs.add_parser("sweep", help="train once per batch size, compare quality")
    p.add_argument("--data-dir", required=True, dest="data_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-sizes", required=True, dest="batch_sizes",
                   help="comma-separated list, e.g. 8,16")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("metrics", help="PSNR/SSIM/MSE between image pairs")
    p.add_argument("--original", required=True)
    p.add_argument("--candidate", required=True)
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main():
    raise SystemExit(main())


if __name__ == "__main__":
    console_main()
