"""Command-line surface.

Subcommands: gen-data, train, eval, grad-check, export-topology,
parse-skeleton, describe.  Configuration comes from one JSON file plus
repeatable --set key=value overrides (dotted keys, JSON-parsed values).
Exit codes: 0 success, 1 usage, 2 verification failure, 3 runtime error.
"""

import argparse
import json
import os
import sys

import numpy as np

from .dataio import (
    SynthConfig,
    generate_synthetic,
    label_from_ntu_filename,
    parse_ntu_skeleton,
    read_dataset,
    write_dataset,
)
from .errors import SkelgcnError
from .gradcheck import run_scope
from .network import Network, NetworkConfig, averaged_topology, default_network_config
from .skeleton import load_builtin_skeleton, load_skeleton_file
from .topology import topology_to_csv
from .training import (
    TrainConfig,
    apply_preset,
    evaluate,
    load_checkpoint,
    restore_network,
    save_checkpoint,
    train,
    write_metrics,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFICATION = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print("error: %s" % message, file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def resolve_skeleton(ref):
    if os.path.exists(ref):
        return load_skeleton_file(ref)
    return load_builtin_skeleton(ref)


def _apply_overrides(cfg_dict, overrides):
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise SkelgcnError("--set expects key=value, got %r" % item)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg_dict
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return cfg_dict


def _load_train_config(args):
    if args.config:
        with open(args.config) as f:
            cfg_dict = json.load(f)
    else:
        cfg_dict = {"network": default_network_config(args.classes or 4).to_dict()}
    cfg_dict = _apply_overrides(cfg_dict, args.set)
    cfg = TrainConfig.from_dict(cfg_dict)
    if getattr(args, "preset", None):
        apply_preset(cfg, args.preset)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _write_pgm(matrix, path):
    """8-bit P5 heatmap of absolute values scaled so the max maps to 255."""
    a = np.abs(np.asarray(matrix, dtype=np.float64))
    peak = a.max()
    scaled = np.zeros_like(a) if peak <= 0 else a / peak
    img = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


# -- subcommand handlers -------------------------------------------------


def cmd_gen_data(args):
    cfg = SynthConfig(
        n_classes=args.classes,
        samples_per_class=args.per_class,
        n_frames=args.frames,
        skeleton=resolve_skeleton(args.skeleton),
        noise_std=args.noise_std,
        ambiguity=args.ambiguity,
        seed=args.seed,
    )
    sequences = generate_synthetic(cfg)
    write_dataset(sequences, args.out)
    print("wrote %d sequences to %s" % (len(sequences), args.out))
    return EXIT_OK


def cmd_train(args):
    cfg = _load_train_config(args)
    sequences = read_dataset(args.data)
    skeleton = resolve_skeleton(cfg.network.skeleton)
    os.makedirs(args.out_dir, exist_ok=True)
    metrics_path = os.path.join(args.out_dir, "metrics.csv")
    ckpt_path = os.path.join(args.out_dir, "checkpoint.bin")

    def progress(m):
        print("epoch %3d lr %.5f loss %.4f acc %.3f" % (m.epoch, m.lr, m.loss, m.accuracy))

    net, opt, metrics = train(cfg, sequences, skeleton, progress=progress)
    write_metrics(metrics, metrics_path)
    save_checkpoint(net, ckpt_path, epoch=cfg.epochs, optimizer=opt, config=cfg.to_dict())
    print("checkpoint: %s" % ckpt_path)
    print("metrics: %s" % metrics_path)
    return EXIT_OK


def _load_network(ckpt_path):
    ckpt = load_checkpoint(ckpt_path)
    skeleton = resolve_skeleton(ckpt["config"]["network"]["skeleton"])
    return restore_network(ckpt, skeleton)


def cmd_eval(args):
    net = _load_network(args.ckpt)
    sequences = read_dataset(args.data)
    result = evaluate(net, sequences)
    print("accuracy: %.4f" % result.accuracy)
    for k, acc in enumerate(result.per_class_accuracy):
        print("class %d accuracy: %.4f (n=%d)" % (k, acc, result.counts[k].sum()))
    print("confusion (row-normalized):")
    for row in result.confusion:
        print("  " + " ".join("%.3f" % v for v in row))
    return EXIT_OK


def cmd_grad_check(args):
    report = run_scope(args.scope, seeds=range(args.seeds))
    print(report.summary())
    print(
        "grad-check scope=%s entries=%d max_rel_err=%.3e -> %s"
        % (args.scope, len(report.entries), report.max_rel_err, "PASS" if report.passed else "FAIL")
    )
    return EXIT_OK if report.passed else EXIT_VERIFICATION


def cmd_export_topology(args):
    net = _load_network(args.ckpt)
    sequences = read_dataset(args.data)
    from .dataio import preprocess

    sample = preprocess(sequences[args.sample], net.config.target_frames).frames
    per_channel, mean2d = averaged_topology(net, args.block, sample)
    os.makedirs(args.out_dir, exist_ok=True)
    stem = os.path.join(args.out_dir, "block%d" % args.block)
    topology_to_csv(per_channel, stem + "_topology.csv")
    _write_pgm(mean2d, stem + "_topology.pgm")
    anchor = args.anchor_joint
    with open(stem + "_joint%d_row.csv" % anchor, "w") as f:
        f.write(",".join(repr(float(v)) for v in mean2d[anchor]) + "\n")
    print("wrote %s_topology.{csv,pgm} and joint %d row" % (stem, anchor))
    return EXIT_OK


def cmd_parse_skeleton(args):
    with open(args.file, "rb") as f:
        data = f.read()
    label = label_from_ntu_filename(os.path.basename(args.file))
    sequences = parse_ntu_skeleton(data, label=label, source=os.path.basename(args.file))
    print("parsed %d body sequence(s)" % len(sequences))
    for seq in sequences:
        print(
            "  body %s: %d frames x %d joints, label %d"
            % (seq.meta.get("body"), seq.n_frames, seq.n_joints, seq.label)
        )
    if args.out:
        write_dataset(sequences, args.out)
        print("wrote %s" % args.out)
    return EXIT_OK


def cmd_describe(args):
    if args.config:
        with open(args.config) as f:
            cfg_dict = _apply_overrides(json.load(f), args.set)
        if "network" in cfg_dict:
            cfg_dict = cfg_dict["network"]
        net_cfg = NetworkConfig.from_dict(cfg_dict)
    else:
        net_cfg = default_network_config(args.classes or 4)
    skeleton = resolve_skeleton(net_cfg.skeleton)
    net = Network(net_cfg, skeleton, seed=0)
    print(net.describe())
    return EXIT_OK


# -- entry point ---------------------------------------------------------


def build_parser():
    p = _Parser(prog="skelgcn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    g.add_argument("--out", required=True)
    g.add_argument("--skeleton", default="toy9")
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--per-class", type=int, default=50)
    g.add_argument("--frames", type=int, default=16)
    g.add_argument("--noise-std", type=float, default=0.05)
    g.add_argument("--ambiguity", type=float, default=0.3)
    g.add_argument("--seed", type=int, required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--data", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--preset", choices=["desk", "paper-schedule"])
    t.add_argument("--classes", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("grad-check", help="finite-difference verification")
    c.add_argument("--scope", choices=["ops", "unit", "network"], default="ops")
    c.add_argument("--seeds", type=int, default=10)
    c.set_defaults(func=cmd_grad_check)

    x = sub.add_parser("export-topology", help="export averaged refined topology")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--sample", type=int, default=0)
    x.add_argument("--block", type=int, required=True)
    x.add_argument("--anchor-joint", type=int, default=0)
    x.add_argument("--out-dir", required=True)
    x.set_defaults(func=cmd_export_topology)

    s = sub.add_parser("parse-skeleton", help="parse an NTU-style .skeleton file")
    s.add_argument("--file", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_parse_skeleton)

    d = sub.add_parser("describe", help="print the layer/parameter table")
    d.add_argument("--config")
    d.add_argument("--set", action="append", metavar="KEY=VALUE")
    d.add_argument("--classes", type=int)
    d.set_defaults(func=cmd_describe)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SkelgcnError as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
