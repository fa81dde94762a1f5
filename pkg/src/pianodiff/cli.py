"""Command-line entry point.

Subcommands: synth-data, fit-codebook, train, convert, evaluate.
Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command
echoes its resolved configuration into its output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset, diffusion, evaluate, quantizer, training
from .audio import AudioClip, read_wav, resample, to_mono, write_wav
from .errors import PianodiffError
from .nn import tensor as T
from .training import ConversionModel, TrainConfig, build_conditioning


def _echo_config(out_dir: Path, command: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{command.replace('-', '_')}_config.json").write_text(
        json.dumps(resolved, indent=2)
    )


def _cmd_synth_data(args) -> int:
    out_dir = Path(args.out)
    resolved = {
        "out": str(out_dir), "clips": args.clips, "seconds": args.seconds,
        "preset": args.preset, "seed": args.seed, "sample_rate": args.sample_rate,
        "octave_down": args.octave_down,
    }
    _echo_config(out_dir, "synth-data", resolved)
    dataset.generate_corpus(
        n_clips=args.clips,
        out_dir=out_dir,
        preset=args.preset,
        seed=args.seed,
        clip_seconds=args.seconds,
        sample_rate=args.sample_rate,
        transpose_semitones=-12 if args.octave_down else 0,
    )
    print(f"wrote {args.clips} clips and {dataset.MANIFEST_NAME} to {out_dir}")
    return 0


def _cmd_fit_codebook(args) -> int:
    manifest = Path(args.manifest)
    out_path = Path(args.out)
    index = dataset.load_index(manifest)
    segment_length = args.segment_length
    resolved = {"manifest": str(manifest), "k": args.k, "out": str(out_path),
                "segment_length": segment_length}
    _echo_config(out_path.parent, "fit-codebook", resolved)
    codebook = training.fit_codebook_from_corpus(index, args.k, manifest.parent,
                                                 segment_length)
    quantizer.save(codebook, out_path)
    print(f"codebook with {codebook.k} centroids written to {out_path}")
    return 0


def _load_train_config(args) -> TrainConfig:
    doc = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
    # flags override the config file
    if args.epochs is not None:
        doc["epochs"] = args.epochs
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.batch_size is not None:
        doc["batch_size"] = args.batch_size
    return TrainConfig.from_dict(doc)


def _cmd_train(args) -> int:
    config = _load_train_config(args)
    out_dir = Path(args.out)
    _echo_config(out_dir, "train", {
        "manifest": str(args.manifest), "codebook": str(args.codebook),
        "resume": str(args.resume) if args.resume else None,
        **config.to_dict(),
    })
    index = dataset.load_index(Path(args.manifest))
    codebook = quantizer.load(args.codebook)
    if codebook.k != config.codebook_k:
        config = TrainConfig.from_dict({**config.to_dict(), "codebook_k": codebook.k})
    result = training.train(
        config, index, codebook,
        corpus_dir=Path(args.manifest).parent,
        out_dir=out_dir,
        resume_from=args.resume,
        progress=(lambda step, loss: print(f"step {step}: loss {loss:.5f}"))
        if args.verbose else None,
    )
    print(f"trained {result.steps} steps; final checkpoint {result.checkpoint_path}")
    return 0


def _convert_clip(clip: AudioClip, model: ConversionModel, codebook,
                  steps: int, seed: int, overlap_ms: float = 0.0) -> AudioClip:
    """Chunk to the model's fixed length (tail zero-padded), convert each
    chunk with DDIM, and reassemble trimmed to the input duration."""
    cfg = model.train_config
    work = resample(to_mono(clip), cfg.sample_rate)
    n = work.n_samples
    seg = cfg.segment_length
    overlap = min(int(round(overlap_ms / 1000.0 * cfg.sample_rate)), seg // 2)
    advance = seg - overlap

    out = np.zeros(max(n, seg), dtype=np.float64)
    ramp = (0.5 * (1.0 - np.cos(np.pi * np.arange(overlap) / overlap))
            if overlap > 0 else None)

    starts = list(range(0, max(1, n - overlap), advance))
    for chunk_no, start in enumerate(starts):
        piece = work.samples[start : start + seg]
        if piece.shape[0] < seg:
            piece = np.pad(piece, (0, seg - piece.shape[0]))
        bundle = build_conditioning(piece.astype(np.float32), model, codebook)
        cond = T.reshape(bundle.matrix, (1,) + tuple(bundle.matrix.shape))
        chunk_seed = int(np.random.SeedSequence([seed, chunk_no]).generate_state(1)[0])
        rendered = diffusion.ddim_sample(model, cond, steps=steps, seed=chunk_seed)
        rendered = rendered[0, 0].astype(np.float64)

        window = np.ones(seg)
        if ramp is not None and chunk_no > 0:
            window[:overlap] = ramp  # complementary to the previous fade-out
        if ramp is not None and chunk_no < len(starts) - 1:
            window[-overlap:] = ramp[::-1]
        stop = min(start + seg, out.shape[0])
        span = stop - start
        if overlap > 0:
            out[start:stop] += rendered[:span] * window[:span]
        else:
            out[start:stop] = rendered[:span]
    return AudioClip(samples=out[:n].astype(np.float32), sample_rate=cfg.sample_rate)


def _cmd_convert(args) -> int:
    input_path = Path(args.input)
    if not input_path.is_file():
        print(f"error: input file not found: {input_path}", file=sys.stderr)
        return 2
    output_path = Path(args.output)
    _echo_config(output_path.parent, "convert", {
        "input": str(input_path), "checkpoint": str(args.checkpoint),
        "codebook": str(args.codebook), "output": str(output_path),
        "steps": args.steps, "seed": args.seed, "overlap_ms": args.overlap_ms,
    })
    model, _ = training.load_checkpoint(args.checkpoint)
    codebook = quantizer.load(args.codebook)
    clip = read_wav(input_path)
    converted = _convert_clip(clip, model, codebook, steps=args.steps,
                              seed=args.seed, overlap_ms=args.overlap_ms)
    write_wav(converted, output_path, bit_depth=16)
    print(f"converted {input_path} -> {output_path} "
          f"({converted.duration:.2f} s at {converted.sample_rate} Hz)")
    return 0


def _cmd_evaluate(args) -> int:
    out_dir = Path(args.out)
    _echo_config(out_dir, "evaluate", {
        "source": str(args.source), "converted": str(args.converted),
        "out": str(out_dir),
    })
    source = to_mono(read_wav(args.source))
    converted = to_mono(read_wav(args.converted))
    report = evaluate.evaluate_pair(source, converted, metadata={
        "source": str(args.source), "converted": str(args.converted),
    })
    paths = evaluate.write_report(report, out_dir)
    print(f"pitch accuracy {report.pitch_accuracy:.3f}, "
          f"mean |loudness diff| {report.mean_abs_loudness_diff:.2f} LU")
    print(f"report written to {paths['json']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pianodiff",
        description="Diffusion-based piano timbre conversion for monophonic audio.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic training corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--clips", type=int, default=8)
    p.add_argument("--seconds", type=float, default=6.0)
    p.add_argument("--preset", choices=sorted(dataset.PRESETS), default="piano")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--octave-down", action="store_true",
                   help="transpose scores down 12 semitones at render time")
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("fit-codebook", help="fit the loudness codebook from a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--out", required=True, help="output codebook JSON path")
    p.add_argument("--segment-length", type=int, default=16384)
    p.set_defaults(func=_cmd_fit_codebook)

    p = sub.add_parser("train", help="train the diffusion decoder")
    p.add_argument("--config", help="JSON config (see README for the schema)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("convert", help="convert a WAV to piano timbre")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--overlap-ms", type=float, default=0.0,
                   help="cross-fade between conversion chunks")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("evaluate", help="compare source and converted WAVs")
    p.add_argument("--source", required=True)
    p.add_argument("--converted", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PianodiffError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
