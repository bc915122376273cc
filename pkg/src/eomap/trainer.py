"""Dataset assembly, the training loop, and the evaluation harness."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as tn
from .baselines import MODELS, inject_poisson_unseen, predict_physical
from .geometry import CriticalRegion
from .io import atomic_write_text
from .losses import LossWeights, total_loss
from .metrics import EvalReport, MetricsConfig, build_report
from .net import NetConfig, UNet
from .occupancy import earliest_occupancy, unseen_mask
from .raster import drivable_mask, rasterize_history
from .scene import GeneratorConfig, Horizon, Scene, synth_generate, unseen_agent_ids

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "L_rec", "L_h", "L_s", "L_u", "total")


@dataclass
class DatasetSpec:
    n_train: int = 2000
    n_val: int = 400
    seed: int = 0
    train_unseen_prob: float = 0.47
    val_unseen_prob: float = 0.32
    history_hz: int = 2
    region: CriticalRegion = field(default_factory=CriticalRegion.desk)
    horizon: Horizon = field(default_factory=Horizon)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def __post_init__(self):
        if self.n_train <= 0 or self.n_val <= 0:
            raise ValueError("split sizes must be positive")

    def generator_config(self, split) -> GeneratorConfig:
        n = self.n_train if split == "train" else self.n_val
        p = self.train_unseen_prob if split == "train" else self.val_unseen_prob
        return replace(self.generator, n_scenes=n, unseen_prob=p, region=self.region,
                       horizon=self.horizon)

    def split_seed(self, split) -> int:
        return self.seed * 2 + (0 if split == "train" else 1)


@dataclass
class RunConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    net: NetConfig = field(default_factory=NetConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    no_hard: bool = False
    no_soft: bool = False
    no_unseen: bool = False
    no_attention: bool = False
    per_pixel: bool = False
    map_prior: bool = True
    alphas: tuple = (0.3, 0.5, 0.7)
    C: float = 31.0

    def net_config(self) -> NetConfig:
        return replace(self.net, attention_enabled=self.net.attention_enabled and not self.no_attention,
                       output_scale=float(self.dataset.horizon.T))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset"]["generator"] = {k: v for k, v in d["dataset"]["generator"].items()
                                     if k not in ("region", "horizon")}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        ds = dict(d.get("dataset", {}))
        region = CriticalRegion(**ds.pop("region")) if "region" in ds else CriticalRegion.desk()
        horizon = Horizon(**ds.pop("horizon")) if "horizon" in ds else Horizon()
        gen = ds.pop("generator", {})
        gen = {k: tuple(v) if isinstance(v, list) else v for k, v in gen.items()}
        dataset = DatasetSpec(region=region, horizon=horizon,
                              generator=GeneratorConfig(**gen), **ds)
        rest = {k: v for k, v in d.items() if k not in ("dataset", "net", "weights")}
        if "alphas" in rest:
            rest["alphas"] = tuple(rest["alphas"])
        return cls(dataset=dataset, net=NetConfig(**d.get("net", {})),
                   weights=LossWeights(**d.get("weights", {})), **rest)


@dataclass
class Sample:
    scene_id: str
    raster: np.ndarray      # (C, h, w) float32
    E: np.ndarray           # (h, w) int16
    M: np.ndarray           # (h, w) uint8
    drivable: np.ndarray    # (h, w) bool
    has_unseen: bool
    scene: Scene | None = None


def prepare_sample(scene: Scene, region: CriticalRegion, horizon: Horizon, history_hz=2,
                   keep_scene=True) -> Sample:
    anchor = scene.ego_pose(horizon.t)
    ids = unseen_agent_ids(scene, region, horizon)
    return Sample(
        scene_id=scene.id,
        raster=rasterize_history(scene, region, horizon, history_hz).data,
        E=earliest_occupancy(scene, region, horizon).data,
        M=unseen_mask(scene, region, horizon, ids).data,
        drivable=drivable_mask(scene, region, anchor),
        has_unseen=bool(ids),
        scene=scene if keep_scene else None,
    )


def build_split(spec: DatasetSpec, split: str, keep_scenes=True) -> list:
    scenes = synth_generate(spec.generator_config(split), spec.split_seed(split))
    return [prepare_sample(s, spec.region, spec.horizon, spec.history_hz, keep_scenes)
            for s in scenes]


def apply_map_prior(P, raster):
    """Zero the prediction outside the drivable channel of the raster.

    Cells off the drivable area are occupied from the start by definition and
    the map is known at inference time, so the network only has to place
    arrival times on the road.
    """
    D = np.asarray(raster)[..., 0:1, :, :] if np.ndim(raster) == 4 else np.asarray(raster)[0]
    if isinstance(P, tn.Tensor):
        return P * (D > 0).astype(P.dtype)
    return np.asarray(P) * (D > 0)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    net: UNet
    log: list
    checkpoint: str | None = None


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(config: RunConfig, train_data=None, run_dir=None, progress=None) -> TrainResult:
    """Train the predictor; deterministic for a fixed config."""
    if train_data is None:
        train_data = build_split(config.dataset, "train", keep_scenes=False)
    net = UNet(config.net_config(), seed=config.seed)
    net.training = True
    X = np.stack([s.raster for s in train_data]).astype(np.float32)
    E = np.stack([s.E for s in train_data]).astype(np.float32)[:, None]
    M = np.stack([s.M for s in train_data]).astype(np.float32)[:, None]
    params = {k: p.data for k, p in net.params.items()}
    state = tn.adam_init(params)
    rows = []
    if run_dir is not None:
        os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
        atomic_write_text(os.path.join(run_dir, "config.json"),
                          json.dumps(config.to_dict(), indent=1, sort_keys=True))
    step = 0
    ckpt = None
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        for idx in _batches(len(train_data), config.batch_size, rng):
            net.zero_grad()
            P = net(X[idx])
            if config.map_prior:
                P = apply_map_prior(P, X[idx])
            terms = total_loss(P, E[idx], M[idx], config.weights, config.no_hard,
                               config.no_soft, config.no_unseen, config.per_pixel)
            if not np.isfinite(terms.total.data):
                dump = None
                if run_dir is not None:
                    dump = os.path.join(run_dir, f"nonfinite_step{step}.npz")
                    np.savez(dump, raster=X[idx], E=E[idx], M=M[idx], index=idx)
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}; "
                                    f"batch indices {idx.tolist()}; dump: {dump}")
            terms.total.backward()
            grads = {k: p.grad for k, p in net.params.items()}
            tn.adam_step(params, grads, state, lr=config.lr)
            rows.append({"epoch": epoch, "step": step, "L_rec": terms.rec, "L_h": terms.hard,
                         "L_s": terms.soft, "L_u": terms.unseen,
                         "total": float(terms.total.data)})
            step += 1
        if progress is not None:
            progress(epoch, rows)
        log.info("epoch %d mean loss %.4g", epoch,
                 np.mean([r["total"] for r in rows if r["epoch"] == epoch]))
        if run_dir is not None:
            ckpt = os.path.join(run_dir, "checkpoints", f"epoch_{epoch}")
            tn.save_checkpoint(ckpt, net.state_dict())
            atomic_write_text(os.path.join(run_dir, "log.csv"), log_csv(rows))
    net.training = False
    return TrainResult(net, rows, ckpt)


def log_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=LOG_COLUMNS, lineterminator="\n")
    wr.writeheader()
    for r in rows:
        wr.writerow({k: r[k] for k in LOG_COLUMNS})
    return buf.getvalue()


def load_net(run_dir_or_config, checkpoint) -> UNet:
    if isinstance(run_dir_or_config, RunConfig):
        config = run_dir_or_config
    else:
        with open(os.path.join(run_dir_or_config, "config.json")) as f:
            config = RunConfig.from_dict(json.load(f))
    net = UNet(config.net_config())
    net.load_state_dict(tn.load_checkpoint(checkpoint))
    return net


# evaluation -------------------------------------------------------------------

def snap(P) -> np.ndarray:
    """Round predictions to the integer step lattice the ground truth lives on."""
    return np.rint(np.asarray(P, dtype=np.float64))


def predict_all(predictor, data, region, horizon, batch_size=16, inject_lambda=0.0,
                inject_seed=0, map_prior=True):
    """Raw predictions for each sample.

    ``predictor`` is a UNet, one of the physical model names, ``"oracle"``
    (P = E), ``"zeros"``, ``"all_T"``, or a callable ``sample -> P``.
    """
    T = horizon.T
    if isinstance(predictor, UNet):
        if predictor.config.output_scale != T:
            raise ValueError("predictor horizon does not match the dataset")
        for s in data:
            if s.raster.shape[1:] != region.shape:
                raise ValueError(f"scene {s.scene_id}: raster grid does not match the region")
        out = []
        predictor.training = False
        with tn.no_grad():
            for i in range(0, len(data), batch_size):
                X = np.stack([s.raster for s in data[i:i + batch_size]])
                P = predictor(X).data
                if map_prior:
                    P = apply_map_prior(P, X)
                out.extend(np.asarray(P[:, 0], dtype=np.float64))
        return out
    if callable(predictor):
        preds = [np.asarray(predictor(s), dtype=np.float64) for s in data]
    elif predictor == "oracle":
        preds = [s.E.astype(np.float64) for s in data]
    elif predictor == "zeros":
        preds = [np.zeros(s.E.shape) for s in data]
    elif predictor == "all_T":
        preds = [np.full(s.E.shape, float(T)) for s in data]
    elif predictor in MODELS:
        preds = []
        for s in data:
            if s.scene is None:
                raise ValueError("physical baselines need the scene tracks")
            preds.append(predict_physical(s.scene, region, horizon, predictor, s.drivable).data)
    else:
        raise ValueError(f"unknown predictor {predictor!r}")
    if inject_lambda > 0:
        preds = [inject_poisson_unseen(P, region, inject_lambda, [inject_seed, i], T).data
                 for i, P in enumerate(preds)]
    for s, P in zip(data, preds):
        if P.shape != s.E.shape:
            raise ValueError(f"scene {s.scene_id}: prediction grid {P.shape} != {s.E.shape}")
    return preds


def evaluate(predictor, data, region: CriticalRegion, horizon: Horizon, name=None,
             metrics: MetricsConfig | None = None, inject_lambda=0.0, inject_seed=0,
             run_dir=None, map_prior=True) -> EvalReport:
    preds = [snap(P) for P in predict_all(predictor, data, region, horizon,
                                          inject_lambda=inject_lambda, inject_seed=inject_seed,
                                          map_prior=map_prior)]
    if name is None:
        name = predictor if isinstance(predictor, str) else type(predictor).__name__
    report = build_report(name, preds, [s.E for s in data], [s.M for s in data], horizon.T,
                          metrics or MetricsConfig(T=horizon.T),
                          [s.scene_id for s in data], [s.drivable for s in data])
    if run_dir is not None:
        atomic_write_text(os.path.join(run_dir, "report.csv"), report.to_csv())
        atomic_write_text(os.path.join(run_dir, "report.json"), report.to_json())
    return report
