"""Experiment orchestration: data, splits, methods, seeds, records.

An experiment config names a set of methods (objectives and target
transforms) and a list of seeds. Each seed gets its own generated
cohort, split and parameter init, shared by every method so that
per-seed comparisons between methods are paired. Methods with a gamma
grid train once per gamma and keep the model with the best validation
step-level area under the PR curve; the chosen model is then evaluated
once on the test split.

Wall-clock units: the config speaks hours; everything internal runs in
steps, converted once per cohort from the stays' step_minutes
(fractional steps round to nearest, ties upward).
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import GenerationError, InvalidInputError
from ..labels import HorizonGrid, LabelTrack
from ..metrics import EvalReport, ScoredStay, auprc, evaluate, pooled_set
from ..model import ModelSpec, ParamStore, forward
from ..objectives import ClassBalance, Objective, ls_targets
from ..smoothing import SmoothingSpec, smooth_targets
from ..training import StayData, TrainConfig, save_checkpoint, train
from .generate import GenConfig, generate
from .io import dump_json, load_cohort, resolve_out

Z_95 = 1.959963984540054

_TLS_KINDS = ("tls", "tls_weighted", "tls_focal")
_KINDS = ("ce", "ls", "weighted_ce", "focal", "mhp") + _TLS_KINDS
_SMOOTHERS = ("exp", "step", "linear", "sigmoid", "concave", "shift")
_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


def hours_to_steps(hours: float, step_minutes: int) -> int:
    """Convert a duration to whole steps, rounding ties upward."""
    if not float(hours) > 0:
        raise InvalidInputError("durations must be positive")
    steps = int(np.floor(float(hours) * 60.0 / step_minutes + 0.5))
    if steps < 1:
        raise InvalidInputError(
            f"{hours} hours is less than half a step at {step_minutes} "
            "minutes per step"
        )
    return steps


@dataclass(frozen=True)
class MethodConfig:
    """One training method: objective kind plus target-shaping knobs.

    Kinds: ``ce`` (hard labels), ``ls`` (distance-blind smoothing by
    ``ls_alpha``), ``tls`` (temporally smoothed targets), ``weighted_ce``
    and ``tls_weighted`` (class-weighted variants), ``focal`` and the
    experimental ``tls_focal``, and ``mhp`` (multi-horizon head).
    ``gamma``/``gamma_grid`` are per hour; a grid triggers selection by
    validation step AUPRC.
    """

    kind: str
    smoothing: str | None = None
    gamma: float | None = None
    gamma_grid: tuple | None = None
    step_count: int | None = None
    h_shift_hours: float | None = None
    h_min_hours: float | None = None
    h_max_hours: float | None = None
    ls_alpha: float | None = None
    focal_zeta: float = 2.0
    horizon_count: int = 11

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidInputError(
                f"unknown method kind {self.kind!r}; expected one of {_KINDS}"
            )
        if self.gamma_grid is not None:
            grid = tuple(float(g) for g in self.gamma_grid)
            if not grid or any(not g > 0 for g in grid):
                raise InvalidInputError("gamma_grid must be positive and non-empty")
            object.__setattr__(self, "gamma_grid", grid)
        if self.kind in _TLS_KINDS:
            if self.smoothing not in _SMOOTHERS:
                raise InvalidInputError(
                    f"{self.kind} needs smoothing, one of {_SMOOTHERS}"
                )
        elif self.smoothing is not None:
            raise InvalidInputError(f"{self.kind} takes no smoothing")
        needs_gamma = self.smoothing in ("exp", "sigmoid", "concave")
        has_gamma = self.gamma is not None
        has_grid = self.gamma_grid is not None
        if needs_gamma and has_gamma == has_grid:
            raise InvalidInputError(
                f"{self.smoothing} smoothing needs exactly one of gamma or gamma_grid"
            )
        if not needs_gamma and (has_gamma or has_grid):
            raise InvalidInputError("gamma given but nothing here uses it")
        if self.gamma is not None and not float(self.gamma) > 0:
            raise InvalidInputError("gamma must be positive")
        if self.smoothing == "step":
            if self.step_count is None or int(self.step_count) < 1:
                raise InvalidInputError("step smoothing needs step_count >= 1")
        elif self.step_count is not None:
            raise InvalidInputError("step_count given but smoothing is not step")
        if self.smoothing == "shift":
            if self.h_shift_hours is None or not float(self.h_shift_hours) > 0:
                raise InvalidInputError("shift smoothing needs h_shift_hours > 0")
        elif self.h_shift_hours is not None:
            raise InvalidInputError("h_shift_hours given but smoothing is not shift")
        if self.smoothing not in ("exp", "linear", "concave") and (
                self.h_min_hours is not None or self.h_max_hours is not None):
            raise InvalidInputError(
                "h_min_hours/h_max_hours only apply to exp, linear or concave"
            )
        if self.kind == "ls":
            if self.ls_alpha is None:
                raise InvalidInputError("ls needs ls_alpha")
        elif self.ls_alpha is not None:
            raise InvalidInputError("ls_alpha given but kind is not ls")
        if not float(self.focal_zeta) >= 0:
            raise InvalidInputError("focal_zeta must be >= 0")
        if int(self.horizon_count) < 1:
            raise InvalidInputError("horizon_count must be >= 1")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for name in ("smoothing", "gamma", "step_count", "h_shift_hours",
                     "h_min_hours", "h_max_hours", "ls_alpha"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        if self.gamma_grid is not None:
            out["gamma_grid"] = list(self.gamma_grid)
        if self.kind in ("focal", "tls_focal"):
            out["focal_zeta"] = self.focal_zeta
        if self.kind == "mhp":
            out["horizon_count"] = self.horizon_count
        return out

    @classmethod
    def from_dict(cls, d: dict, where: str = "method") -> "MethodConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidInputError(
                f"unknown key(s) in {where}: {', '.join(sorted(extra))}"
            )
        d = dict(d)
        if "gamma_grid" in d and d["gamma_grid"] is not None:
            d["gamma_grid"] = tuple(d["gamma_grid"])
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    methods: dict
    generator: GenConfig = field(default_factory=GenConfig)
    data_path: str | None = None
    horizon_hours: float = 12.0
    split_fractions: tuple = (0.7, 0.15, 0.15)
    seeds: tuple = (0, 1, 2, 3, 4)
    embed_dim: int = 8
    hidden_dim: int = 16
    l1_embed: float = 0.0
    learning_rate: float = 3e-3
    batch_size: int = 64
    max_epochs: int = 30
    patience: int = 10
    precision_floor: float = 0.5
    bin_hours: float = 2.0
    out_dir: str | None = None

    def __post_init__(self):
        if not self.methods:
            raise InvalidInputError("an experiment needs at least one method")
        for name, m in self.methods.items():
            if not _NAME_RE.match(name):
                raise InvalidInputError(
                    f"method name {name!r} must be alphanumeric with ._- only"
                )
            if not isinstance(m, MethodConfig):
                raise InvalidInputError(f"method {name!r} is not a MethodConfig")
        if not float(self.horizon_hours) > 0:
            raise InvalidInputError("horizon_hours must be positive")
        fr = tuple(float(f) for f in self.split_fractions)
        if len(fr) != 3 or any(not f > 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise InvalidInputError(
                "split_fractions must be three positive numbers summing to 1"
            )
        object.__setattr__(self, "split_fractions", fr)
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds or len(set(seeds)) != len(seeds):
            raise InvalidInputError("seeds must be non-empty and unique")
        object.__setattr__(self, "seeds", seeds)
        for name in ("embed_dim", "hidden_dim", "batch_size", "max_epochs",
                     "patience"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if not float(self.learning_rate) > 0:
            raise InvalidInputError("learning_rate must be positive")
        if not float(self.l1_embed) >= 0:
            raise InvalidInputError("l1_embed must be >= 0")
        if not 0.0 < float(self.precision_floor) <= 1.0:
            raise InvalidInputError("precision_floor must be in (0, 1]")
        if not float(self.bin_hours) > 0:
            raise InvalidInputError("bin_hours must be positive")

    def to_dict(self) -> dict:
        return {
            "methods": {k: m.to_dict() for k, m in self.methods.items()},
            "generator": self.generator.to_dict(),
            "data_path": self.data_path,
            "horizon_hours": self.horizon_hours,
            "split_fractions": list(self.split_fractions),
            "seeds": list(self.seeds),
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "l1_embed": self.l1_embed,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "precision_floor": self.precision_floor,
            "bin_hours": self.bin_hours,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidInputError(
                f"unknown key(s) in experiment config: {', '.join(sorted(extra))}"
            )
        d = dict(d)
        if "methods" not in d or not isinstance(d["methods"], dict):
            raise InvalidInputError("experiment config needs a methods mapping")
        d["methods"] = {
            name: MethodConfig.from_dict(m, where=f"method {name!r}")
            for name, m in d["methods"].items()
        }
        if "generator" in d:
            d["generator"] = GenConfig.from_dict(d["generator"])
        for key in ("split_fractions", "seeds"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def split_stays(n_stays: int, fractions, seed: int):
    """Shuffle stay indices and cut them into train/val/test."""
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(not f > 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise InvalidInputError(
            "split_fractions must be three positive numbers summing to 1"
        )
    perm = np.random.default_rng(seed).permutation(n_stays)
    n_train = int(np.floor(fr[0] * n_stays))
    n_val = int(np.floor(fr[1] * n_stays))
    train_idx = perm[:n_train]
    val_idx = perm[n_train:n_train + n_val]
    test_idx = perm[n_train + n_val:]
    if min(len(train_idx), len(val_idx), len(test_idx)) == 0:
        raise InvalidInputError(
            f"{n_stays} stays cannot fill all three splits at {fr}"
        )
    return train_idx, val_idx, test_idx


@dataclass(frozen=True)
class SeedResult:
    """Outcome of one method on one seed."""

    seed: int
    chosen_gamma: float | None
    val_auprc: float
    best_epoch: int
    n_epochs: int
    stopped_early: bool
    gamma_curve: tuple        # ((gamma or None, val auprc), ...)
    test: EvalReport

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "chosen_gamma": self.chosen_gamma,
            "val_auprc": self.val_auprc,
            "best_epoch": self.best_epoch,
            "n_epochs": self.n_epochs,
            "stopped_early": self.stopped_early,
            "gamma_curve": [[g, v] for g, v in self.gamma_curve],
            "test": self.test.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeedResult":
        return cls(
            seed=d["seed"], chosen_gamma=d["chosen_gamma"],
            val_auprc=d["val_auprc"], best_epoch=d["best_epoch"],
            n_epochs=d["n_epochs"], stopped_early=d["stopped_early"],
            gamma_curve=tuple((g, v) for g, v in d["gamma_curve"]),
            test=EvalReport.from_dict(d["test"]),
        )


@dataclass(frozen=True)
class RunRecord:
    """One method's results across every seed, plus aggregates."""

    method: str
    method_config: dict
    horizon_steps: int
    precision_floor: float
    bin_steps: int
    seed_results: tuple
    aggregate: dict

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "method_config": self.method_config,
            "horizon_steps": self.horizon_steps,
            "precision_floor": self.precision_floor,
            "bin_steps": self.bin_steps,
            "seed_results": [r.to_dict() for r in self.seed_results],
            "aggregate": self.aggregate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            method=d["method"], method_config=d["method_config"],
            horizon_steps=d["horizon_steps"],
            precision_floor=d["precision_floor"], bin_steps=d["bin_steps"],
            seed_results=tuple(SeedResult.from_dict(r) for r in d["seed_results"]),
            aggregate=d["aggregate"],
        )


def aggregate_metrics(seed_results) -> dict:
    """Mean, sample std and normal 95% CI half-width per metric."""
    def pull(name):
        vals = []
        for r in seed_results:
            v = getattr(r.test, name)
            if v is not None:
                vals.append(float(v))
        return vals

    out = {}
    for name in ("auprc", "auroc", "recall_at_precision", "event_recall"):
        vals = pull(name)
        if not vals:
            out[name] = {"per_seed": [], "n": 0, "mean": None, "std": None,
                         "ci95": None}
            continue
        arr = np.asarray(vals)
        n = arr.shape[0]
        std = float(arr.std(ddof=1)) if n > 1 else None
        ci = Z_95 * std / np.sqrt(n) if std is not None else None
        out[name] = {"per_seed": vals, "n": n, "mean": float(arr.mean()),
                     "std": std, "ci95": ci}
    return out


@dataclass
class _Bundle:
    """A method resolved against a concrete cohort's units."""

    objective: Objective
    horizon_count: int
    index_of_true: int | None
    make_targets: object    # LabelTrack -> (targets, mask)


def _resolve_method(method: MethodConfig, gamma_h, h_steps: int,
                    step_minutes: int, balance: ClassBalance) -> _Bundle:
    kind = method.kind

    if kind == "mhp":
        grid = HorizonGrid.evenly_spaced(h_steps, method.horizon_count)
        hs = grid.as_array()

        def make(track: LabelTrack):
            d = track.dist_to_event[:, None]
            y = ((d > 0) & (d <= hs[None, :])).astype(np.float64)
            y[~track.mask] = 0.0
            return y, track.mask

        return _Bundle(objective=Objective(kind="mhp"),
                       horizon_count=grid.count,
                       index_of_true=grid.index_of_true, make_targets=make)

    if kind in _TLS_KINDS:
        sspec = _smoothing_spec(method, gamma_h, h_steps, step_minutes)

        def make(track: LabelTrack):
            tt = smooth_targets(track, sspec)
            return tt.q, tt.mask
    elif kind == "ls":
        alpha = float(method.ls_alpha)

        def make(track: LabelTrack):
            q = ls_targets(track.hard_label, alpha)
            return np.where(track.mask, q, 0.0), track.mask
    else:  # ce, weighted_ce, focal: hard labels

        def make(track: LabelTrack):
            return np.where(track.mask, track.hard_label, 0.0), track.mask

    if kind in ("weighted_ce", "tls_weighted"):
        objective = Objective(kind="weighted", balance=balance)
    elif kind == "focal":
        objective = Objective(kind="focal", balance=balance,
                              zeta=method.focal_zeta)
    elif kind == "tls_focal":
        objective = Objective(kind="focal_smoothed", balance=balance,
                              zeta=method.focal_zeta)
    else:
        objective = Objective(kind="bce")
    return _Bundle(objective=objective, horizon_count=1, index_of_true=None,
                   make_targets=make)


def _smoothing_spec(method: MethodConfig, gamma_h, h_steps: int,
                    step_minutes: int) -> SmoothingSpec:
    kw = {"kind": method.smoothing, "h_true": h_steps}
    if method.smoothing in ("exp", "sigmoid", "concave"):
        if gamma_h is None:
            raise InvalidInputError(f"{method.smoothing} smoothing needs a gamma")
        kw["gamma"] = float(gamma_h) * step_minutes / 60.0
    if method.smoothing == "step":
        kw["step_count"] = method.step_count
    if method.smoothing == "shift":
        kw["h_shift"] = hours_to_steps(method.h_shift_hours, step_minutes)
    if method.h_min_hours is not None:
        kw["h_min"] = hours_to_steps(method.h_min_hours, step_minutes)
    if method.h_max_hours is not None:
        kw["h_max"] = hours_to_steps(method.h_max_hours, step_minutes)
    return SmoothingSpec(**kw)


def _check_cohort(stays):
    if not stays:
        raise InvalidInputError("cohort is empty")
    sm = {s.step_minutes for s in stays}
    if len(sm) != 1:
        raise InvalidInputError(f"stays disagree on step_minutes: {sorted(sm)}")
    dims = {s.n_features for s in stays}
    if len(dims) != 1:
        raise InvalidInputError(f"stays disagree on feature count: {sorted(dims)}")
    return sm.pop(), dims.pop()


def _check_split_classes(tracks, idx, split_name: str, h_steps: int):
    pos = neg = 0
    for i in idx:
        m = tracks[i].mask
        y = tracks[i].hard_label[m]
        pos += int((y == 1.0).sum())
        neg += int((y == 0.0).sum())
    if pos == 0 or neg == 0:
        raise GenerationError(
            f"the {split_name} split has {pos} positive / {neg} negative "
            f"steps at a {h_steps}-step horizon; enlarge the cohort or "
            "retune the generator"
        )
    return pos, neg


def _score_split(params: ParamStore, stays, tracks, idx, index_of_true):
    scored = []
    for i in idx:
        p = forward(stays[i].features, params)
        if index_of_true is not None:
            p = p[:, index_of_true]
        scored.append(ScoredStay.build(stays[i].stay_id, p, tracks[i],
                                       stays[i].event_track))
    return scored


def run_experiment(config: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Run every method over every seed; optionally persist everything.

    Returns {method name: RunRecord}. With an output directory (argument
    wins over ``config.out_dir``; relative paths resolve under the
    TLSMOOTH_OUT root), writes ``config.json``, per-method
    ``records/<name>.json``, checkpoints and training histories. Output
    is a pure function of the config: no timestamps, no machine state,
    so reruns are byte-identical. If a seed fails midway, whatever
    finished is preserved under ``records/<name>.partial.json`` before
    the error propagates.
    """
    if out_dir is None:
        out_dir = config.out_dir
    if out_dir is not None:
        out_dir = resolve_out(out_dir)
    records = {name: [] for name in config.methods}

    try:
        for seed in config.seeds:
            _run_one_seed(config, seed, records, out_dir)
    except Exception:
        if out_dir is not None:
            for name, seed_results in records.items():
                if seed_results:
                    dump_json(
                        os.path.join(out_dir, "records", f"{name}.partial.json"),
                        {"method": name,
                         "seed_results": [r.to_dict() for r in seed_results]},
                    )
        raise

    out = {}
    for (name, method), seed_results in zip(config.methods.items(),
                                            records.values()):
        # records dict preserves the methods' insertion order
        h_steps_any = seed_results[0].test.horizon_steps
        out[name] = RunRecord(
            method=name, method_config=method.to_dict(),
            horizon_steps=h_steps_any,
            precision_floor=config.precision_floor,
            bin_steps=seed_results[0].test.bin_steps,
            seed_results=tuple(seed_results),
            aggregate=aggregate_metrics(seed_results),
        )
    if out_dir is not None:
        dump_json(os.path.join(out_dir, "config.json"), config.to_dict())
        for name, record in out.items():
            dump_json(os.path.join(out_dir, "records", f"{name}.json"),
                      record.to_dict())
    return out


def _run_one_seed(config: ExperimentConfig, seed: int, records: dict,
                  out_dir: str | None):
    if config.data_path is not None:
        stays = load_cohort(config.data_path)
    else:
        stays = generate(replace(config.generator,
                                 seed=config.generator.seed + seed))
    step_minutes, n_features = _check_cohort(stays)
    h_steps = hours_to_steps(config.horizon_hours, step_minutes)
    bin_steps = hours_to_steps(config.bin_hours, step_minutes)
    tracks = [LabelTrack.from_stay(s, h_steps) for s in stays]
    tr_idx, va_idx, te_idx = split_stays(len(stays), config.split_fractions,
                                         seed)
    for name, idx in (("train", tr_idx), ("validation", va_idx),
                      ("test", te_idx)):
        _check_split_classes(tracks, idx, name, h_steps)
    train_labels = np.concatenate(
        [tracks[i].hard_label[tracks[i].mask] for i in tr_idx])
    balance = ClassBalance(positive_rate=float(train_labels.mean()))

    for name, method in config.methods.items():
        gammas = (method.gamma_grid if method.gamma_grid is not None
                  else (method.gamma,))
        best = None
        gamma_curve = []
        for gamma_h in gammas:
            bundle = _resolve_method(method, gamma_h, h_steps,
                                     step_minutes, balance)
            spec = ModelSpec(
                input_dim=n_features, embed_dim=config.embed_dim,
                hidden_dim=config.hidden_dim,
                horizon_count=bundle.horizon_count,
                l1_embed=config.l1_embed,
            )
            init = ParamStore.init(spec, seed)
            train_data = [
                StayData(stays[i].features, *bundle.make_targets(tracks[i]))
                for i in tr_idx
            ]
            val_data = [
                StayData(stays[i].features, *bundle.make_targets(tracks[i]))
                for i in va_idx
            ]
            result = train(
                init, train_data, val_data, bundle.objective,
                TrainConfig(learning_rate=config.learning_rate,
                            batch_size=config.batch_size,
                            max_epochs=config.max_epochs,
                            patience=config.patience, seed=seed),
            )
            scored_val = _score_split(result.params, stays, tracks, va_idx,
                                      bundle.index_of_true)
            val_auprc = auprc(pooled_set(scored_val, h_steps))
            gamma_curve.append((gamma_h, float(val_auprc)))
            if best is None or val_auprc > best[0]:
                best = (val_auprc, gamma_h, result, bundle)

        val_auprc, gamma_h, result, bundle = best
        scored_test = _score_split(result.params, stays, tracks, te_idx,
                                   bundle.index_of_true)
        report = evaluate(scored_test, h_steps,
                          precision_floor=config.precision_floor,
                          bin_steps=bin_steps)
        seed_result = SeedResult(
            seed=seed, chosen_gamma=gamma_h, val_auprc=float(val_auprc),
            best_epoch=result.best_epoch, n_epochs=len(result.history),
            stopped_early=result.stopped_early,
            gamma_curve=tuple(gamma_curve), test=report,
        )
        records[name].append(seed_result)
        if out_dir is not None:
            _persist_seed(out_dir, name, seed_result, result, bundle,
                          config, h_steps, bin_steps)


def _persist_seed(out_dir: str, name: str, seed_result: SeedResult, result,
                  bundle: _Bundle, config: ExperimentConfig, h_steps: int,
                  bin_steps: int):
    seed = seed_result.seed
    ckpt = os.path.join(out_dir, "models", name, f"seed{seed:03d}.ckpt")
    save_checkpoint(ckpt, result.params, meta={
        "method": name, "seed": seed,
        "chosen_gamma": seed_result.chosen_gamma,
        "best_epoch": seed_result.best_epoch,
        "horizon_steps": h_steps,
        "index_of_true": bundle.index_of_true,
        "precision_floor": config.precision_floor,
        "bin_steps": bin_steps,
    })
    hist = os.path.join(out_dir, "history", name, f"seed{seed:03d}.json")
    dump_json(hist, {
        "method": name, "seed": seed,
        "chosen_gamma": seed_result.chosen_gamma,
        "gamma_curve": [[g, v] for g, v in seed_result.gamma_curve],
        "epochs": [
            {"epoch": e.epoch, "train_loss": e.train_loss,
             "val_loss": e.val_loss}
            for e in result.history
        ],
    })
