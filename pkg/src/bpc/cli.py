"""``bpc`` command line: buffer, distill, eval, compare, cross-arch, cross-loss.

Every command reads an optional INI config (``--config``), applies flag
overrides, and writes the resolved config into its output directory, so any
run can be repeated with ``bpc <command> --config <out>/resolved_config.ini``.

Exit codes: 0 success, 2 config error, 3 IO/format error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .config import RunConfig, derive_seed, infer_spec
from .coreset import load_coreset, save_coreset
from .distill import METRIC_FIELDS, distill
from .errors import BPCError, ConfigError
from .evaluate import (cross_architecture_grid, cross_loss_grid, diagonal_dominance,
                       evaluate_coreset, format_grid, random_baseline)
from .trajectory import Buffer, record_trajectory

logger = logging.getLogger("bpc")

# flag -> (section, key)
OVERRIDES = {
    "out": ("run", "out"), "seed": ("run", "seed"),
    "dataset": ("data", "dataset"), "images": ("data", "images"), "labels": ("data", "labels"),
    "test_images": ("data", "test_images"), "test_labels": ("data", "test_labels"),
    "downsample": ("data", "downsample"), "limit": ("data", "limit"),
    "n_per_class": ("data", "n_per_class"), "n_classes": ("data", "n_classes"),
    "dim": ("data", "dim"), "shape": ("data", "shape"),
    "model": ("model", "kind"), "widths": ("model", "widths"),
    "buffer": ("buffer", "dir"), "trajectories": ("buffer", "trajectories"),
    "epochs": ("buffer", "epochs"), "loss": ("buffer", "loss"), "jobs": ("buffer", "jobs"),
    "iters": ("distill", "iters"), "horizon": ("distill", "horizon"),
    "k_max": ("distill", "k_max"), "alpha": ("distill", "alpha"),
    "langevin_steps": ("distill", "langevin_steps"), "noise_temp": ("distill", "noise_temp"),
    "lr_img": ("distill", "lr"), "energy": ("distill", "energy"), "ipc": ("distill", "ipc"),
    "init": ("distill", "init"), "anchors_per_step": ("distill", "anchors_per_step"),
    "eval_seeds": ("eval", "seeds"), "eval_epochs": ("eval", "epochs"),
    "coreset": ("eval", "coreset"), "models": ("eval", "models"), "losses": ("eval", "losses"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file; flags override it")
    common.add_argument("--out", help="output directory (default $BPC_OUT or ./bpc-out)")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")
    g = common.add_argument_group("data")
    g.add_argument("--dataset", choices=["blobs", "idx"])
    g.add_argument("--images")
    g.add_argument("--labels")
    g.add_argument("--test-images")
    g.add_argument("--test-labels")
    g.add_argument("--downsample", type=int)
    g.add_argument("--limit", type=int, help="use only the first N training examples")
    g.add_argument("--n-per-class", type=int)
    g.add_argument("--n-classes", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--shape", help="view blob vectors as images, e.g. 1,8,8")
    g = common.add_argument_group("model")
    g.add_argument("--model", choices=["mlp", "mlp-deep", "convnet-small", "convnet-wide"])
    g.add_argument("--widths", help="comma-separated hidden widths / channels")
    g = common.add_argument_group("buffer")
    g.add_argument("--buffer", help="buffer directory (default <out>/buffer)")
    g.add_argument("--trajectories", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--loss", choices=["ce", "focal", "margin"])
    g.add_argument("--jobs", type=int)
    g = common.add_argument_group("distill")
    g.add_argument("--iters", type=int)
    g.add_argument("--horizon", type=int)
    g.add_argument("--k-max", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--langevin-steps", type=int)
    g.add_argument("--noise-temp", type=float)
    g.add_argument("--lr-img", type=float)
    g.add_argument("--energy", choices=["ce", "focal", "margin"])
    g.add_argument("--ipc", type=int)
    g.add_argument("--init", choices=["real", "noise"])
    g.add_argument("--anchors-per-step", type=int)
    g = common.add_argument_group("eval")
    g.add_argument("--eval-seeds", type=int)
    g.add_argument("--eval-epochs", type=int)
    g.add_argument("--coreset", help="coreset file (default <out>/coreset.bpcs)")
    g.add_argument("--models", help="comma-separated model kinds for cross-arch")
    g.add_argument("--losses", help="comma-separated losses for cross-loss")

    parser = argparse.ArgumentParser(prog="bpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in [
        ("buffer", cmd_buffer, "record expert trajectories on the real data"),
        ("distill", cmd_distill, "distill a coreset from a buffer"),
        ("eval", cmd_eval, "retrain on a coreset and report test accuracy"),
        ("compare", cmd_compare, "coreset vs random real subset of the same size"),
        ("cross-arch", cmd_cross_arch, "evaluate a coreset on several architectures"),
        ("cross-loss", cmd_cross_loss, "grid over real-data loss x synthetic energy"),
    ]:
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=fn)
    return parser


def resolve(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config)
    for attr, (section, key) in OVERRIDES.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg.set(section, key, value)
    return cfg


def _prepare_out(cfg: RunConfig, inputs: tuple = ()) -> str:
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    cfg.set("run", "out", out)
    # pin what the command reads so the resolved file replays it from anywhere
    if "buffer" in inputs:
        cfg.set("buffer", "dir", os.path.abspath(cfg.buffer_dir))
    if "coreset" in inputs:
        cfg.set("eval", "coreset", os.path.abspath(_coreset_path(cfg)))
    cfg.write(os.path.join(out, "resolved_config.ini"))
    return out


def _coreset_path(cfg: RunConfig) -> str:
    return cfg.get("eval", "coreset") or os.path.join(cfg.out_dir, "coreset.bpcs")


def record_buffer(cfg: RunConfig, buf: Buffer, loss_name: str, train, test, spec) -> list:
    n = cfg.int("buffer", "trajectories")
    if n < 1:
        raise ConfigError("buffer.trajectories must be >= 1")
    tcfg = cfg.buffer_train_config()
    loss = cfg.energy_spec(loss_name)
    seeds = [derive_seed(cfg.seed, f"buffer-{loss.short_name}", i) for i in range(n)]

    def one(seed):
        return record_trajectory(train, spec, loss, tcfg, seed, test=test)

    jobs = max(1, cfg.int("buffer", "jobs"))
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        trajectories = list(pool.map(one, seeds))
    # files first, index entry only after its file is in place; ids follow seed order
    ids = []
    for i, t in enumerate(trajectories):
        ids.append(buf.save(t, f"traj{i:04d}"))
        print(f"{ids[-1]}\tseed={t.seed}\tloss={loss.short_name}\tepochs={t.epochs}"
              f"\ttrain_acc={float(t.meta['train_acc']):.4f}"
              f"\ttest_acc={float(t.meta.get('test_acc', 'nan')):.4f}")
    return ids


def cmd_buffer(cfg: RunConfig) -> None:
    _prepare_out(cfg)
    train, test = cfg.datasets()
    spec = infer_spec(cfg, train)
    buf = Buffer(cfg.buffer_dir)
    record_buffer(cfg, buf, cfg.get("buffer", "loss"), train, test, spec)


def cmd_distill(cfg: RunConfig) -> None:
    dcfg = cfg.distill_config()
    out = _prepare_out(cfg, ("buffer",))
    train, _ = cfg.datasets()
    spec = infer_spec(cfg, train)
    buf = Buffer(cfg.buffer_dir, create=False)
    if len(buf) == 0:
        raise ConfigError(f"buffer {cfg.buffer_dir} is empty; run `bpc buffer` first")
    metrics_path = os.path.join(out, "metrics.tsv")
    with open(metrics_path, "w", encoding="utf-8") as log:
        log.write("\t".join(METRIC_FIELDS) + "\n")

        def on_step(m):
            log.write(m.tsv() + "\n")
            log.flush()

        result = distill(train, buf, dcfg, spec, on_step=on_step)
    save_coreset(result.coreset, os.path.join(out, "coreset.bpcs"))
    last = result.history[-1]
    print(f"coreset\t{os.path.join(out, 'coreset.bpcs')}\titers={last.iteration}"
          f"\tloss={last.loss:.6f}\tE+={last.e_plus:.4f}\tE-={last.e_minus:.4f}")


def _write_reports(out: str, name: str, reports) -> None:
    with open(os.path.join(out, f"{name}_report.txt"), "w", encoding="utf-8") as f:
        for r in reports:
            f.write(r.to_text() + "\n")
    with open(os.path.join(out, f"{name}.tsv"), "w", encoding="utf-8") as f:
        f.write("name\tmodel\tmean_acc\tstd_acc\n")
        for r in reports:
            f.write(r.summary() + "\n")


def cmd_eval(cfg: RunConfig) -> None:
    coreset = load_coreset(_coreset_path(cfg))
    out = _prepare_out(cfg, ("coreset",))
    _, test = cfg.datasets()
    spec = infer_spec(cfg, test)
    report = evaluate_coreset(coreset, spec, test, cfg.int("eval", "seeds"),
                              cfg.eval_train_config(), seed=derive_seed(cfg.seed, "eval") % 2**31)
    _write_reports(out, "eval", [report])
    print(report.summary())


def cmd_compare(cfg: RunConfig) -> None:
    coreset = load_coreset(_coreset_path(cfg))
    out = _prepare_out(cfg, ("coreset",))
    train, test = cfg.datasets()
    spec = infer_spec(cfg, train)
    n, ecfg = cfg.int("eval", "seeds"), cfg.eval_train_config()
    seed = derive_seed(cfg.seed, "eval") % 2**31
    ours = evaluate_coreset(coreset, spec, test, n, ecfg, seed=seed, name="distilled")
    rand = random_baseline(train, coreset.ipc, n, spec, ecfg, test, seed=seed)
    _write_reports(out, "compare", [ours, rand])
    print(f"method\tipc\tmean_acc\tstd_acc")
    for r in (ours, rand):
        print(f"{r.name}\t{coreset.ipc}\t{100 * r.mean:.2f}\t{100 * r.std:.2f}")
    print(f"difference\t{coreset.ipc}\t{100 * (ours.mean - rand.mean):+.2f}\t")


def cmd_cross_arch(cfg: RunConfig) -> None:
    coreset = load_coreset(_coreset_path(cfg))
    out = _prepare_out(cfg, ("coreset",))
    _, test = cfg.datasets()
    kinds = [k for k in cfg.get("eval", "models").split(",") if k]
    specs = [infer_spec(cfg, test, k) for k in kinds]
    source = coreset.meta.get("model")
    distilled_with = next((s for s in specs if s.kind == source), None)
    reports = cross_architecture_grid(coreset, specs, test, cfg.int("eval", "seeds"),
                                      cfg.eval_train_config(), distilled_with)
    _write_reports(out, "cross_arch", reports)
    for r in reports:
        flag = "*" if r.provenance["distilled_with"] == "yes" else ""
        print(f"{r.spec.kind}{flag}\t{100 * r.mean:.2f}\t{100 * r.std:.2f}")


def cmd_cross_loss(cfg: RunConfig) -> None:
    out = _prepare_out(cfg)
    train, test = cfg.datasets()
    spec = infer_spec(cfg, train)
    losses = [s for s in cfg.get("eval", "losses").split(",") if s]
    bufs = {}
    for name in losses:
        buf = Buffer(os.path.join(out, f"buffer_{name}"))
        if len(buf) == 0:
            record_buffer(cfg, buf, name, train, test, spec)
        bufs[name] = buf
    grid = cross_loss_grid(train, bufs, [cfg.energy_spec(s) for s in losses],
                           cfg.distill_config(), spec, test, cfg.int("eval", "seeds"),
                           cfg.eval_train_config())
    _write_reports(out, "cross_loss", list(grid.values()))
    print(format_grid(grid))
    stats = diagonal_dominance(grid)
    for k, v in stats.items():
        print(f"{k}\t{v:.4f}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve(args)
        args.func(cfg)
    except BPCError as exc:
        print(f"bpc {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"bpc {args.command}: IO error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
