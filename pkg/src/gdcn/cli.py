"""``gdcn`` command line: prep, train, fdo, eval, explain."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import file_digest, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, GdcnError
from .fdo import fdo_plan, read_dims_file, write_dims_file
from .features import (
    DatasetSchema, build_schema, check_encoded, encode_rows, read_csv, read_declaration,
    read_encoded, split_indices, write_encoded,
)
from .interpret import explain
from .model import Topology, build_model
from .training import TrainConfig, evaluate, train, write_epoch_log

log = logging.getLogger("gdcn")

SPLIT_FILES = ("train.bin", "valid.bin", "test.bin")

TRAIN_DEFAULTS = {
    "data": None,
    "out": "run",
    "variant": "gdcn-p",
    "cross_layers": 3,
    "dnn": "400,400,400",
    "dropout": 0.5,
    "gate": "on",
    "dim": 16,
    "dims": None,
    "align": False,
    "lr": 1e-3,
    "batch_size": 4096,
    "max_epochs": 100,
    "plateau_patience": 3,
    "plateau_factor": 0.1,
    "early_stop_patience": 5,
    "seed": 0,
    "monitor": "auc",
}


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


# --- prep ------------------------------------------------------------------

def cmd_prep(args) -> int:
    specs = read_declaration(args.decl)
    _, records = read_csv(args.input, specs)
    rows = list(records)
    try:
        schema = build_schema(rows, specs, args.threshold)
        data = encode_rows(rows, schema)
    except DataError as exc:
        raise type(exc)(f"{args.input}: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schema.save(out / "schema.json")
    parts = split_indices(len(data), _floats(args.ratios), args.seed)
    sizes = {}
    for name, rows_idx in zip(SPLIT_FILES, parts):
        write_encoded(out / name, data.take(rows_idx))
        sizes[name] = len(rows_idx)
    print(json.dumps({"fields": schema.F, "features": schema.T, "rows": sizes,
                      "sizes": schema.sizes}))
    return 0


# --- train -----------------------------------------------------------------

def resolve_train_config(args) -> dict:
    """Flags beat the config file, which beats built-in defaults."""
    cfg = dict(TRAIN_DEFAULTS)
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        unknown = set(k.replace("-", "_") for k in file_cfg) - set(cfg)
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")
        cfg.update({k.replace("-", "_"): v for k, v in file_cfg.items()})
    for key in TRAIN_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["data"] is None:
        raise ConfigError("--data is required (directory written by 'gdcn prep')")
    if cfg["gate"] not in ("on", "off"):
        raise ConfigError(f"--gate must be on or off, got {cfg['gate']!r}")
    return cfg


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    data_dir = Path(cfg["data"])
    schema = DatasetSchema.load(data_dir / "schema.json")
    train_data = read_encoded(data_dir / "train.bin")
    val_data = read_encoded(data_dir / "valid.bin")
    for d in (train_data, val_data):
        check_encoded(d, schema)
    if cfg["dims"]:
        names, dims = read_dims_file(cfg["dims"])
        if names != schema.names:
            raise ConfigError(f"{cfg['dims']}: fields {names} do not match schema {schema.names}")
    else:
        dims = [int(cfg["dim"])] * schema.F
    topology = Topology(cfg["variant"], int(cfg["cross_layers"]), tuple(_ints(cfg["dnn"])),
                        "learned" if cfg["gate"] == "on" else "all_ones",
                        float(cfg["dropout"]), bool(cfg["align"]))
    tcfg = TrainConfig(
        learning_rate=float(cfg["lr"]), batch_size=int(cfg["batch_size"]),
        plateau_patience=int(cfg["plateau_patience"]),
        plateau_factor=float(cfg["plateau_factor"]),
        early_stop_patience=int(cfg["early_stop_patience"]),
        max_epochs=int(cfg["max_epochs"]), seed=int(cfg["seed"]), monitor=cfg["monitor"],
    )
    model = build_model(schema, dims, topology, seed=tcfg.seed)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True))
    log_path = out / "epochs.jsonl"
    log_path.write_text("")

    def append(record):
        with open(log_path, "a") as fh:
            fh.write(json.dumps(record) + "\n")

    model, epochs = train(model, train_data, val_data, tcfg, on_epoch=append)
    write_epoch_log(log_path, epochs)
    save_checkpoint(out / "model.ckpt", model, schema.digest())
    summary = {"checkpoint": str(out / "model.ckpt"), "epochs": len(epochs),
               "params": model.param_count()}
    if epochs:
        best = max(epochs, key=lambda r: r["val_auc"]) if tcfg.monitor == "auc" else \
            min(epochs, key=lambda r: r["val_logloss"])
        summary.update(best_epoch=best["epoch"], val_auc=best["val_auc"],
                       val_logloss=best["val_logloss"])
    print(json.dumps(summary))
    return 0


# --- fdo -------------------------------------------------------------------

def cmd_fdo(args) -> int:
    model, manifest = load_checkpoint(args.checkpoint)
    ratios = _floats(args.ratios)
    report = fdo_plan(model, ratios, center=not args.uncentered, energy=args.energy,
                      source_checkpoint=file_digest(args.checkpoint))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fdo_report.json").write_text(json.dumps(report.to_json(), indent=1))
    summary = []
    for r in ratios:
        path = out / f"dims_{r:g}.json"
        write_dims_file(path, report, r)
        pc = report.accounting(r)
        summary.append({"ratio": r, "file": str(path), "dims": report.dims(r), "P_e": pc.P_e,
                        "D_bar": round(float(pc.D_bar), 4), "K_bar": round(float(pc.K_bar), 4)})
    print(json.dumps(summary))
    return 0


# --- eval / explain ----------------------------------------------------------

def _load_for_data(checkpoint, data_path, schema_path):
    model, manifest = load_checkpoint(checkpoint)
    schema_path = Path(schema_path) if schema_path else Path(data_path).parent / "schema.json"
    schema = DatasetSchema.load(schema_path)
    if manifest.get("schema_digest") and manifest["schema_digest"] != schema.digest():
        raise DataError(f"{checkpoint} was trained on a different schema than {schema_path}")
    data = read_encoded(data_path)
    check_encoded(data, schema)
    return model, data


def cmd_eval(args) -> int:
    model, data = _load_for_data(args.checkpoint, args.data, args.schema)
    print(json.dumps(evaluate(model, data)))
    return 0


def cmd_explain(args) -> int:
    model, data = _load_for_data(args.checkpoint, args.data, args.schema)
    fdo_dims = None
    if args.dims:
        names, fdo_dims = read_dims_file(args.dims)
        if names != model.field_names:
            raise ConfigError(f"{args.dims}: fields do not match the checkpoint")
    compare = load_checkpoint(args.compare)[0] if args.compare else None
    stats = explain(model, data, args.out, _ints(args.instances or ""), args.n, fdo_dims,
                    compare)
    print(json.dumps(stats))
    return 0


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gdcn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prep", help="build schema, encode and split a raw CSV",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("input", help="CSV with a 'label' column followed by one column per field")
    s.add_argument("--decl", required=True, help="field declaration file (name,kind per line)")
    s.add_argument("--threshold", type=int, default=1,
                   help="tokens seen fewer times collapse to the unknown feature")
    s.add_argument("--ratios", default="0.8,0.1,0.1", help="train,valid,test fractions")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="data", help="output directory")
    s.set_defaults(func=cmd_prep)

    d = TRAIN_DEFAULTS
    s = sub.add_parser("train", help="train a GCN / GDCN-S / GDCN-P model")
    s.add_argument("--config", help="JSON file mirroring these flag names")
    s.add_argument("--data", help="directory written by 'gdcn prep'")
    s.add_argument("--out", help=f"output directory (default: {d['out']})")
    s.add_argument("--variant", choices=["gcn", "gdcn-s", "gdcn-p"],
                   help=f"topology (default: {d['variant']})")
    s.add_argument("--cross-layers", type=int, help=f"gated cross layers (default: {d['cross_layers']})")
    s.add_argument("--dnn", help=f"hidden widths, comma separated (default: {d['dnn']})")
    s.add_argument("--dropout", type=float, help=f"DNN dropout rate (default: {d['dropout']})")
    s.add_argument("--gate", choices=["on", "off"],
                   help=f"off fixes every gate to 1, i.e. DCN-V2 (default: {d['gate']})")
    s.add_argument("--dim", type=int, help=f"uniform embedding width (default: {d['dim']})")
    s.add_argument("--dims", help="per-field dims file written by 'gdcn fdo' (overrides --dim)")
    s.add_argument("--align", action="store_const", const=True,
                   help="project every field to the widest dim before crossing (default: off)")
    s.add_argument("--lr", type=float, help=f"initial learning rate (default: {d['lr']})")
    s.add_argument("--batch-size", type=int, help=f"(default: {d['batch_size']})")
    s.add_argument("--max-epochs", type=int, help=f"(default: {d['max_epochs']})")
    s.add_argument("--plateau-patience", type=int,
                   help=f"epochs without improvement before lr is cut (default: {d['plateau_patience']})")
    s.add_argument("--plateau-factor", type=float, help=f"lr multiplier (default: {d['plateau_factor']})")
    s.add_argument("--early-stop-patience", type=int,
                   help=f"(default: {d['early_stop_patience']})")
    s.add_argument("--seed", type=int, help=f"single source of randomness (default: {d['seed']})")
    s.add_argument("--monitor", choices=["auc", "logloss"],
                   help=f"validation metric for scheduling and stopping (default: {d['monitor']})")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("fdo", help="choose per-field dims from a trained checkpoint",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("checkpoint")
    s.add_argument("--ratios", default="0.95,0.8", help="information ratios")
    s.add_argument("--uncentered", action="store_true", help="skip column centering")
    s.add_argument("--energy", choices=["squared", "raw"], default="squared",
                   help="information measure per singular value")
    s.add_argument("--out", default="fdo")
    s.set_defaults(func=cmd_fdo)

    s = sub.add_parser("eval", help="AUC and LogLoss of a checkpoint on an encoded split",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("checkpoint")
    s.add_argument("data", help="encoded split (.bin)")
    s.add_argument("--schema", help="schema.json (default: next to the split)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("explain", help="export block norms, gate profiles and field importance",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("checkpoint")
    s.add_argument("data", help="encoded split (.bin)")
    s.add_argument("--schema", help="schema.json (default: next to the split)")
    s.add_argument("--instances", default="", help="row numbers to profile, comma separated")
    s.add_argument("--n", type=int, default=1000, help="instances averaged for field importance")
    s.add_argument("--dims", help="dims file to correlate with layer-1 importance")
    s.add_argument("--compare", help="second checkpoint for block-norm cosine similarity")
    s.add_argument("--out", default="explain")
    s.set_defaults(func=cmd_explain)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GdcnError as exc:
        print(f"gdcn {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"gdcn {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
