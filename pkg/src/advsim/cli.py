"""Command line interface.

Subcommands:

* ``simulate --config cfg.json --out DIR``: run a scenario and export the
  dataset (``DIR/clean``, plus ``DIR/adv`` when the config lists attacks).
* ``attack --in DIR --type NAME --params JSON --out DIR``: apply one attack
  offline to an exported stream; ``--params`` takes inline JSON or
  ``@file.json``.
* ``evaluate --clean DIR --adv DIR --report PATH``: detect on both streams,
  compute AP, the mAP ratio, and mean Chamfer distance, write the report.
* ``sweep --clean DIR --type NAME --values a,b,c --report PATH``: attack +
  evaluate per parameter value and write one multi-row report.

Exit codes: 0 success, 1 runtime failure (missing/corrupt data, role
crashes), 2 usage or validation errors.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .attacks import comm as comm_attacks
from .attacks import perception as perception_attacks
from .attacks.comm import CommParameterError, LocalDynamicMap, apply_gps_spoof
from .attacks.perception import AttackParameterError
from .config import (
    COMM_ATTACKS,
    PERCEPTION_ATTACKS,
    CommSpec,
    ConfigError,
    attack_params_from_dict,
    attack_params_to_dict,
    detector_from_dict,
    load_config,
)
from .dataset import (
    DatasetFormatError,
    export_frame,
    list_ticks,
    load_frame,
    load_metadata,
    write_metadata,
)
from .detector import DetectorModel, detect
from .metrics import (
    ReportRow,
    average_precision,
    build_report,
    chamfer_distance,
    map_ratio,
)
from .orchestrator import OrchestratorError, derive_seed, run_session
from .scene import VehicleState

_SWEEP_DEFAULTS = {
    "perturb": "0.005,0.01,0.03,0.05,0.07,0.1",
    "detach": "0.0005,0.001,0.003,0.005,0.01,0.015",
    "attach": "0.05,0.1,0.3,0.5,0.7,1.0",
}
_SWEEP_KEY = {"perturb": "epsilon_m", "detach": "drop_ratio", "attach": "epsilon_m"}


def _parse_params(text: str) -> dict:
    if text.startswith("@"):
        path = Path(text[1:])
        if not path.exists():
            raise FileNotFoundError(f"params file not found: {path}")
        text = path.read_text(encoding="utf-8")
    try:
        params = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("params", f"invalid JSON: {exc.msg}") from exc
    if not isinstance(params, dict):
        raise ConfigError("params", "must be a JSON object")
    return params


def _param_label(attack_type: str, params) -> str:
    d = attack_params_to_dict(attack_type, params)
    key = {
        "perturb": "epsilon_m",
        "detach": "drop_ratio",
        "attach": "epsilon_m",
        "rba": "delta_m",
        "paa": "offset_m" if d.get("offset_m") is not None else "fabricate_at",
        "sybil": "ghost_count",
        "gps_spoof": "bias_m",
    }[attack_type]
    return f"{key}={d[key]}"


def _detector_from_metadata(meta: dict) -> DetectorModel:
    det = meta.get("config", {}).get("detector")
    return detector_from_dict(det) if det else DetectorModel()


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    result = run_session(config, out_dir=args.out)
    for stream in sorted(result.frame_counts):
        print(f"{stream}: {result.frame_counts[stream]} frames -> {Path(args.out) / stream}")
    print(f"completed {result.ticks} ticks")
    return 0


def _replay_states(record):
    """VehicleState stand-ins rebuilt from a frame's exported vehicle list."""
    states = []
    for v in record.vehicle_states:
        states.append(
            VehicleState(v.id, v.position, v.yaw, float(np.linalg.norm(v.velocity)))
        )
    return states


def _offline_comm_attack(ticks, in_dir, out_dir, attack_type, params, meta) -> int:
    cfg = meta.get("config", {})
    comm_cfg = cfg.get("comm", {})
    comm = CommSpec(
        enabled=comm_cfg.get("enabled", True),
        cam_interval_s=comm_cfg.get("cam_interval_s", 0.1),
        reception_radius_m=comm_cfg.get("reception_radius_m", 150.0),
        ldm_history=comm_cfg.get("ldm_history", 10),
    )
    vehicles = cfg.get("vehicles", [])
    ego_id = next((v["id"] for v in vehicles if v.get("is_ego")), None)
    attacker_id = next((v["id"] for v in vehicles if v.get("is_attacker")), None)
    if attack_type == "sybil" and attacker_id is None:
        raise ConfigError("params", "sybil replay needs an attacker vehicle in metadata")
    ldms = {}
    for tick in ticks:
        record = load_frame(in_dir, tick)
        t = record.sim_time_s
        cams = [c.copy() for c in record.cams_emitted]
        if attack_type == "gps_spoof":
            for cam in cams:
                if cam.station_id == ego_id:
                    cam.position, _ = apply_gps_spoof(cam.position, cam.heading, params, t)
            record.ego_to_world[:3, 3], _ = apply_gps_spoof(
                record.ego_to_world[:3, 3], 0.0, params, t
            )
        elif not cams:
            pass        # batch attacks only touch ticks that actually emitted
        elif attack_type == "rba":
            cams = comm_attacks.apply_rba(cams, params)
        elif attack_type == "paa":
            cams = comm_attacks.apply_paa(cams, params)
        elif attack_type == "sybil":
            states = _replay_states(record)
            attacker = next((s for s in states if s.id == attacker_id), None)
            if attacker is None:
                raise DatasetFormatError(f"tick {tick}: attacker {attacker_id!r} missing")
            cams = comm_attacks.apply_sybil(cams, params, attacker, t)
        record.cams_emitted = cams
        if record.ldms is not None:
            if not ldms:
                ldms = {
                    v.id: LocalDynamicMap(v.id, comm.ldm_history)
                    for v in record.vehicle_states
                }
            if cams:
                for state in _replay_states(record):
                    comm_attacks.update_ldm(ldms[state.id], cams, state, comm)
            record.ldms = {vid: ldms[vid].snapshot() for vid in sorted(ldms)}
        export_frame(record, out_dir)
    return 0


def cmd_attack(args) -> int:
    in_dir = Path(args.input_dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"input dataset directory not found: {in_dir}")
    ticks = list_ticks(in_dir)
    if not ticks:
        raise DatasetFormatError(f"no frames found under {in_dir}")
    params = attack_params_from_dict(args.type, _parse_params(args.params))
    meta = load_metadata(in_dir.parent) or load_metadata(in_dir)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    skipped = 0
    if args.type in COMM_ATTACKS:
        _offline_comm_attack(ticks, in_dir, out_dir, args.type, params, meta)
    else:
        model = _detector_from_metadata(meta)
        for tick in ticks:
            record = load_frame(in_dir, tick)
            if not record.gt_boxes:
                # nothing to attack against; frame passes through unchanged
                skipped += 1
            else:
                per_tick = dataclasses.replace(
                    params, seed=derive_seed(params.seed, 0, 0, tick)
                )
                if args.type == "perturb":
                    result = perception_attacks.perturb_attack(
                        model, record.cloud, record.gt_boxes, per_tick
                    )
                elif args.type == "detach":
                    result = perception_attacks.detach_attack(
                        model, record.cloud, record.gt_boxes, per_tick
                    )
                else:
                    result = perception_attacks.attach_attack(
                        model, record.cloud, record.gt_boxes, per_tick
                    )
                record.cloud = result.cloud
            export_frame(record, out_dir)

    attack_meta = dict(meta)
    attack_meta["attack"] = {
        "type": args.type,
        "params": attack_params_to_dict(args.type, params),
        "source": str(in_dir),
    }
    write_metadata(out_dir, attack_meta)
    note = f" ({skipped} frames without ground truth copied unchanged)" if skipped else ""
    print(f"wrote {len(ticks)} frames -> {out_dir}{note}")
    return 0


def _evaluate_pair(clean_dir: Path, adv_dir: Path, iou_threshold: float):
    clean_ticks = list_ticks(clean_dir)
    adv_ticks = list_ticks(adv_dir)
    if not clean_ticks:
        raise DatasetFormatError(f"no frames found under {clean_dir}")
    if clean_ticks != adv_ticks:
        raise DatasetFormatError(
            f"tick sets differ between {clean_dir} ({len(clean_ticks)} frames) "
            f"and {adv_dir} ({len(adv_ticks)} frames)"
        )
    meta = load_metadata(clean_dir.parent) or load_metadata(clean_dir)
    model = _detector_from_metadata(meta)

    gt_frames = {}
    det_clean = {}
    det_adv = {}
    chamfers = []
    for tick in clean_ticks:
        clean = load_frame(clean_dir, tick)
        adv = load_frame(adv_dir, tick)
        gt_frames[tick] = clean.gt_boxes
        det_clean[tick] = [(d.score, d.box) for d in detect(model, clean.cloud)]
        det_adv[tick] = [(d.score, d.box) for d in detect(model, adv.cloud)]
        if clean.cloud.shape[0] and adv.cloud.shape[0]:
            chamfers.append(chamfer_distance(clean.cloud, adv.cloud))
    ap_clean = average_precision(gt_frames, det_clean, iou_threshold)
    ap_adv = average_precision(gt_frames, det_adv, iou_threshold)
    mean_cd = float(np.mean(chamfers)) if chamfers else 0.0
    return ap_clean, ap_adv, mean_cd, meta


def _adv_attack_label(adv_dir: Path):
    meta = load_metadata(Path(adv_dir)) or load_metadata(Path(adv_dir).parent)
    info = meta.get("attack")
    if info:
        params = attack_params_from_dict(info["type"], info.get("params", {}))
        return info["type"], _param_label(info["type"], params)
    cfg_attacks = meta.get("config", {}).get("attacks", [])
    if cfg_attacks:
        first = cfg_attacks[0]
        params = attack_params_from_dict(first["type"], first.get("params", {}))
        return first["type"], _param_label(first["type"], params)
    return "unknown", "-"


def cmd_evaluate(args) -> int:
    ap_clean, ap_adv, mean_cd, _ = _evaluate_pair(
        Path(args.clean), Path(args.adv), args.iou_threshold
    )
    attack_type, label = _adv_attack_label(Path(args.adv))
    row = ReportRow(
        attack_type=attack_type,
        parameter=label,
        map_clean=ap_clean,
        map_adv=ap_adv,
        map_ratio=map_ratio(ap_clean, ap_adv),
        mean_chamfer=mean_cd,
    )
    report = build_report([row], context={"iou_threshold": args.iou_threshold})
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(report.to_json(), encoding="utf-8")
    print(report.render_table())
    return 0


def cmd_sweep(args) -> int:
    if args.type not in PERCEPTION_ATTACKS:
        raise ConfigError("type", f"sweep supports {PERCEPTION_ATTACKS}, got {args.type!r}")
    values = [float(v) for v in (args.values or _SWEEP_DEFAULTS[args.type]).split(",")]
    base = _parse_params(args.params)
    clean_dir = Path(args.clean)
    workdir = Path(args.workdir) if args.workdir else Path(args.report).parent / "sweep"
    rows = []
    for i, value in enumerate(values):
        params_dict = dict(base)
        params_dict[_SWEEP_KEY[args.type]] = value
        out_dir = workdir / f"{args.type}_{i:02d}"
        ns = argparse.Namespace(
            input_dir=str(clean_dir),
            type=args.type,
            params=json.dumps(params_dict),
            out=str(out_dir),
        )
        cmd_attack(ns)
        ap_clean, ap_adv, mean_cd, _ = _evaluate_pair(clean_dir, out_dir, args.iou_threshold)
        params = attack_params_from_dict(args.type, params_dict)
        rows.append(
            ReportRow(
                attack_type=args.type,
                parameter=_param_label(args.type, params),
                map_clean=ap_clean,
                map_adv=ap_adv,
                map_ratio=map_ratio(ap_clean, ap_adv),
                mean_chamfer=mean_cd,
            )
        )
    report = build_report(rows, context={"iou_threshold": args.iou_threshold})
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(report.to_json(), encoding="utf-8")
    print(report.render_table())
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advsim",
        description="adversarial co-simulation sandbox for AV perception and V2X",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and export its dataset")
    p.add_argument("--config", required=True, help="scenario JSON path")
    p.add_argument("--out", required=True, help="output dataset root")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attack", help="apply an attack to an exported dataset")
    p.add_argument("--in", dest="input_dir", required=True, help="input stream directory")
    p.add_argument("--type", required=True, choices=PERCEPTION_ATTACKS + COMM_ATTACKS)
    p.add_argument("--params", default="{}", help="attack params as JSON or @file")
    p.add_argument("--out", required=True, help="output stream directory")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="compare clean and adversarial streams")
    p.add_argument("--clean", required=True)
    p.add_argument("--adv", required=True)
    p.add_argument("--report", required=True, help="report JSON output path")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="attack + evaluate over a parameter range")
    p.add_argument("--clean", required=True)
    p.add_argument("--type", required=True, choices=PERCEPTION_ATTACKS)
    p.add_argument("--values", help="comma-separated parameter values")
    p.add_argument("--params", default="{}", help="base params as JSON or @file")
    p.add_argument("--report", required=True)
    p.add_argument("--workdir", help="where attacked streams go (default: next to report)")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, AttackParameterError, CommParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, DatasetFormatError, OrchestratorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
