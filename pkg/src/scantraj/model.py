"""Joint multi-pedestrian forecaster.

An LSTM encoder-decoder whose recurrent state is spatially reweighted at
every step: each pedestrian scores its neighbours on a learnable range
grid (bearing x relative heading), blends their hidden states into a
context, and fuses that context with its own hidden state before the cell
update. The decoder recomputes neighbour geometry from its *own* predicted
positions and — in the "scan" variant — additionally attends over the
encoder's fused-state history before each update.

Everything here runs on the fp64 tape in :mod:`scantraj.autodiff`, so the
whole forward pass is differentiable end to end, including the distances
that feed the range grid.
"""

from __future__ import annotations

from dataclasses import dataclass, fields as dataclass_fields
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import cells
from . import spatial
from .data import SceneWindow
from .errors import ShapeError
from .geometry import AgentKinematics, BinSpec, estimate_heading
from .temporal import AttentionBank, attend

VARIANTS = ("vanilla", "scan")
COORDINATE_MODES = ("displacement", "absolute")
ATTENTION_KEYS = ("fused", "joint")


@dataclass
class ModelConfig:
    """Architecture knobs; the defaults are the reference configuration."""

    embed_dim: int = 16
    hidden_dim: int = 32
    obs_len: int = 8
    pred_len: int = 12
    bearing_bin_deg: float = 30.0
    heading_bin_deg: float = 30.0
    variant: str = "scan"                  # "vanilla": no temporal attention
    coordinate_mode: str = "displacement"  # or "absolute"
    generative: bool = False
    noise_dim: int = 8
    domain_init_m: float = 4.0
    literal_softmax: bool = False
    attention_key: str = "fused"           # or "joint" (the 2H concat)
    force_zero_context: bool = False       # diagnostic: kill spatial context
    disable_temporal: bool = False         # diagnostic: kill temporal pass

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.coordinate_mode not in COORDINATE_MODES:
            raise ValueError(f"coordinate_mode must be one of {COORDINATE_MODES}, "
                             f"got {self.coordinate_mode!r}")
        if self.attention_key not in ATTENTION_KEYS:
            raise ValueError(f"attention_key must be one of {ATTENTION_KEYS}, "
                             f"got {self.attention_key!r}")
        if self.obs_len < 2:
            raise ValueError("obs_len must be >= 2 (heading needs two points)")
        if self.pred_len < 1:
            raise ValueError("pred_len must be >= 1")
        for field_name in ("embed_dim", "hidden_dim", "noise_dim"):
            if getattr(self, field_name) < 1:
                raise ValueError(f"{field_name} must be >= 1")
        self.bin_spec()  # validates the angular widths

    def bin_spec(self) -> BinSpec:
        return BinSpec(self.bearing_bin_deg, self.heading_bin_deg)

    @property
    def key_width(self) -> int:
        """Width of temporal-attention keys/queries for this configuration."""
        return self.hidden_dim if self.attention_key == "fused" else 2 * self.hidden_dim

    def to_dict(self) -> dict[str, str]:
        out = {}
        for f in dataclass_fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                out[f.name] = "true" if value else "false"
            elif isinstance(value, float):
                out[f.name] = repr(value)
            else:
                out[f.name] = str(value)
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in dataclass_fields(cls):
            if f.name not in raw:
                continue
            text = raw[f.name]
            if f.type == "bool" or isinstance(f.default, bool):
                if text not in ("true", "false"):
                    raise ValueError(f"{f.name}: expected true/false, got {text!r}")
                kwargs[f.name] = text == "true"
            elif isinstance(f.default, int):
                kwargs[f.name] = int(text)
            elif isinstance(f.default, float):
                kwargs[f.name] = float(text)
            else:
                kwargs[f.name] = text
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class HiddenBank:
    """Per-pedestrian recurrent state at the end of observation."""

    hidden: list                      # LSTM hidden nodes, one per pedestrian
    cell: list                        # LSTM cell nodes
    banks: list                       # AttentionBank per pedestrian
    kinematics: list                  # AgentKinematics at the last observed step
    last_pos: np.ndarray              # (N, 2) final observed positions
    last_disp: np.ndarray             # (N, 2) final observed displacements


@dataclass
class JointPrediction:
    """Decoded future for every pedestrian in a scene, as plain arrays."""

    ped_ids: list[int]
    displacements: np.ndarray         # (N, pred_len, 2)
    positions: np.ndarray             # (N, pred_len, 2)

    def validate(self) -> None:
        n = len(self.ped_ids)
        if self.displacements.shape != self.positions.shape or \
                self.displacements.shape[:1] != (n,):
            raise ShapeError("prediction arrays disagree with pedestrian count")
        if n and not (np.isfinite(self.displacements).all()
                      and np.isfinite(self.positions).all()):
            raise ValueError("non-finite values in prediction")


@dataclass
class ForwardResult:
    """Differentiable decode outputs: per-pedestrian node sequences."""

    ped_ids: list[int]
    disp_nodes: list                 # [ped][step] -> (2,) node
    pos_nodes: list                  # [ped][step] -> (2,) node
    loss_mask: np.ndarray            # (N, steps) bool: ground truth present

    @property
    def n_steps(self) -> int:
        return len(self.disp_nodes[0]) if self.disp_nodes else self.loss_mask.shape[1]

    def displacements(self) -> np.ndarray:
        if not self.disp_nodes:
            return np.zeros((0, self.n_steps, 2))
        return np.array([[node.values for node in row] for row in self.disp_nodes])

    def positions(self) -> np.ndarray:
        if not self.pos_nodes:
            return np.zeros((0, self.n_steps, 2))
        return np.array([[node.values for node in row] for row in self.pos_nodes])

    def to_prediction(self) -> JointPrediction:
        pred = JointPrediction(list(self.ped_ids), self.displacements(),
                               self.positions())
        pred.validate()
        return pred


def uniform_param(store: ad.ParamStore, hub: ad.RngHub, name: str,
                  shape: tuple[int, ...], fan_in: int) -> ad.TensorNode:
    """Register ``name`` with U(-1/sqrt(fan_in), +1/sqrt(fan_in)) entries.

    Each parameter draws from its own named stream, so adding or removing
    *other* parameters never shifts its initial values.
    """
    bound = 1.0 / np.sqrt(float(fan_in))
    values = hub.stream(f"init/{name}").uniform(-bound, bound, size=shape)
    return store.register(name, values)


def zeros_param(store: ad.ParamStore, name: str, shape: tuple[int, ...]) -> ad.TensorNode:
    return store.register(name, np.zeros(shape))


def build_params(cfg: ModelConfig, hub: ad.RngHub,
                 store: Optional[ad.ParamStore] = None) -> ad.ParamStore:
    """Create and initialize every trainable tensor the forecaster needs."""
    cfg.validate()
    if store is None:
        store = ad.ParamStore()
    E, H = cfg.embed_dim, cfg.hidden_dim
    spec = cfg.bin_spec()
    store.register("domain_grid",
                   np.full((spec.n_bearing, spec.n_heading), cfg.domain_init_m))
    for side in ("enc", "dec"):
        uniform_param(store, hub, f"{side}_embed.W", (E, 2), 2)
        zeros_param(store, f"{side}_embed.b", (E,))
        uniform_param(store, hub, f"{side}_lstm.W_ih", (4 * H, E), E)
        uniform_param(store, hub, f"{side}_lstm.W_hh", (4 * H, H), H)
        zeros_param(store, f"{side}_lstm.b", (4 * H,))
    uniform_param(store, hub, "fuse.W", (H, 2 * H), 2 * H)
    zeros_param(store, "fuse.b", (H,))
    if cfg.variant == "scan":
        K = cfg.key_width
        uniform_param(store, hub, "temporal.W", (H, 2 * K), 2 * K)
        zeros_param(store, "temporal.b", (H,))
    uniform_param(store, hub, "out.W", (2, H), H)
    zeros_param(store, "out.b", (2,))
    if cfg.generative:
        uniform_param(store, hub, "noise_proj.W", (H, H + cfg.noise_dim),
                      H + cfg.noise_dim)
        zeros_param(store, "noise_proj.b", (H,))
    return store


def _canonical_order(ped_ids: Sequence[int]) -> list[int]:
    """Column indices sorted by pedestrian id: the one true iteration order."""
    return [int(i) for i in np.argsort(np.asarray(ped_ids, dtype=np.int64))]


class ScanModel:
    """Binds a config to a parameter store and runs encode/decode passes."""

    def __init__(self, cfg: ModelConfig, params: ad.ParamStore):
        cfg.validate()
        self.cfg = cfg
        self.params = params
        self.grid = spatial.DomainGrid(params["domain_grid"], cfg.bin_spec())
        self.decode_calls = 0           # forward-pass counter (one per decode)

    # -- helpers ----------------------------------------------------------

    def _embed(self, side: str, x: ad.TensorNode) -> ad.TensorNode:
        return cells.linear(x, self.params[f"{side}_embed.W"],
                            self.params[f"{side}_embed.b"])

    def _lstm(self, side: str, x, hidden, cell):
        return cells.lstm_cell(x, hidden, cell,
                               self.params[f"{side}_lstm.W_ih"],
                               self.params[f"{side}_lstm.W_hh"],
                               self.params[f"{side}_lstm.b"],
                               self.cfg.hidden_dim)

    def _spatial(self, rel_fn, kinematics, present, hiddens, order):
        return cells.spatial_round(
            rel_fn, kinematics, present, hiddens, self.grid,
            self.params["fuse.W"], self.params["fuse.b"], order,
            literal_softmax=self.cfg.literal_softmax,
            force_zero_context=self.cfg.force_zero_context)

    def _present(self, scene: SceneWindow, t: int) -> np.ndarray:
        if t < scene.total_len:
            return scene.mask[t]
        return np.ones(scene.n_peds, dtype=bool)

    # -- phases -----------------------------------------------------------

    def encode(self, scene: SceneWindow) -> HiddenBank:
        """Run the spatially attentive encoder over the observed steps."""
        cfg = self.cfg
        if scene.obs_len != cfg.obs_len:
            raise ShapeError(f"scene obs_len {scene.obs_len} != config {cfg.obs_len}")
        scene.validate()
        X = scene.positions
        n = scene.n_peds
        order = _canonical_order(scene.ped_ids)
        H = cfg.hidden_dim

        hidden = [ad.constant(np.zeros(H)) for _ in range(n)]
        cell = [ad.constant(np.zeros(H)) for _ in range(n)]
        banks = [AttentionBank() for _ in range(n)]
        kin = [AgentKinematics((float(X[0, p, 0]), float(X[0, p, 1])))
               for p in range(n)]

        for t in range(cfg.obs_len):
            if t > 0:
                kin = [estimate_heading(X[t - 1, p], X[t, p], kin[p])
                       for p in range(n)]

            def rel(a: int, b: int, _t=t) -> ad.TensorNode:
                return ad.constant(X[_t, b] - X[_t, a])

            fused, joints = self._spatial(rel, kin, self._present(scene, t),
                                          hidden, order)
            keys = fused if cfg.attention_key == "fused" else joints
            for p in range(n):
                banks[p].append(keys[p])
                if cfg.coordinate_mode == "absolute":
                    step_in = ad.constant(X[t, p])
                else:
                    disp = X[t, p] - X[t - 1, p] if t > 0 else np.zeros(2)
                    step_in = ad.constant(disp)
                hidden[p], cell[p] = self._lstm(
                    "enc", self._embed("enc", step_in), fused[p], cell[p])

        last = cfg.obs_len - 1
        return HiddenBank(hidden, cell, banks, kin,
                          X[last].copy(), (X[last] - X[last - 1]).copy())

    def decode(self, scene: SceneWindow, bank: HiddenBank,
               noise: Optional[np.ndarray] = None) -> ForwardResult:
        """Roll the decoder forward ``pred_len`` steps past the observation.

        Geometry is recomputed every step from the decoder's own predicted
        positions, carried as live nodes so the range grid sees gradient
        from the predicted spacing. With ``generative`` configs the decoder
        hidden state is re-seeded from the encoder final plus a noise draw
        (zeros when ``noise`` is None, keeping the pass deterministic).
        """
        cfg = self.cfg
        n = scene.n_peds
        order = _canonical_order(scene.ped_ids)
        self.decode_calls += 1

        if cfg.generative:
            z = np.zeros(cfg.noise_dim) if noise is None else np.asarray(noise, float)
            if z.shape != (cfg.noise_dim,):
                raise ShapeError(f"noise shape {z.shape} != ({cfg.noise_dim},)")
            hidden = [cells.noise_conditioned_hidden(
                h, z, self.params["noise_proj.W"], self.params["noise_proj.b"])
                for h in bank.hidden]
        elif noise is not None:
            raise ValueError("noise passed to a non-generative configuration")
        else:
            hidden = list(bank.hidden)
        cell = list(bank.cell)
        kin = list(bank.kinematics)

        last_pos = bank.last_pos
        cum = [None] * n                            # cumulative displacement nodes
        pos_values = last_pos.copy()                # float positions, current step
        prev_disp_node = [ad.constant(bank.last_disp[p]) for p in range(n)]
        disp_nodes: list[list] = [[] for _ in range(n)]
        pos_nodes: list[list] = [[] for _ in range(n)]

        def rel(a: int, b: int) -> ad.TensorNode:
            out = ad.constant(last_pos[b] - last_pos[a])
            if cum[b] is not None:
                out = ad.add(out, cum[b])
            if cum[a] is not None:
                out = ad.sub(out, cum[a])
            return out

        for s in range(cfg.pred_len):
            present = self._present(scene, cfg.obs_len + s)
            fused, joints = self._spatial(rel, kin, present, hidden, order)
            queries = fused if cfg.attention_key == "fused" else joints
            new_pos = pos_values.copy()
            for p in range(n):
                if cfg.variant == "scan" and not cfg.disable_temporal:
                    state = attend(queries[p], bank.banks[p],
                                   self.params["temporal.W"],
                                   self.params["temporal.b"])
                else:
                    state = fused[p]
                if cfg.coordinate_mode == "absolute":
                    base = ad.constant(last_pos[p])
                    step_in = base if cum[p] is None else ad.add(base, cum[p])
                else:
                    step_in = prev_disp_node[p]
                hidden[p], cell[p] = self._lstm(
                    "dec", self._embed("dec", step_in), state, cell[p])
                disp = cells.linear(hidden[p], self.params["out.W"],
                                    self.params["out.b"])
                cum[p] = disp if cum[p] is None else ad.add(cum[p], disp)
                pos = ad.add(ad.constant(last_pos[p]), cum[p])
                prev_disp_node[p] = disp
                disp_nodes[p].append(disp)
                pos_nodes[p].append(pos)
                new_pos[p] = pos.values
            kin = [estimate_heading(pos_values[p], new_pos[p], kin[p])
                   for p in range(n)]
            pos_values = new_pos

        mask_rows = [self._present(scene, cfg.obs_len + s)
                     for s in range(cfg.pred_len)]
        loss_mask = (np.array(mask_rows).T if n
                     else np.zeros((0, cfg.pred_len), dtype=bool))
        return ForwardResult(list(scene.ped_ids), disp_nodes, pos_nodes, loss_mask)

    def forward(self, scene: SceneWindow,
                noise: Optional[np.ndarray] = None) -> ForwardResult:
        if scene.n_peds == 0:
            return ForwardResult([], [], [],
                                 np.zeros((0, self.cfg.pred_len), dtype=bool))
        return self.decode(scene, self.encode(scene), noise=noise)


def trajectory_loss(result: ForwardResult, scene: SceneWindow):
    """Mean squared Euclidean position error over valid (pedestrian, step)
    pairs, as a scalar node; None when nothing is valid.

    Accumulation runs in ascending pedestrian id so the value is invariant
    to column order, bit for bit.
    """
    steps = min(result.n_steps, scene.pred_len)
    order = _canonical_order(result.ped_ids)
    total = None
    count = 0
    for p in order:
        for s in range(steps):
            if not (result.loss_mask[p, s] and scene.mask[scene.obs_len + s, p]):
                continue
            err = ad.sub(result.pos_nodes[p][s],
                         ad.constant(scene.positions[scene.obs_len + s, p]))
            term = ad.dot(err, err)
            total = term if total is None else ad.add(total, term)
            count += 1
    if total is None:
        return None
    return ad.div(total, ad.constant(float(count)))


def predict(scene: SceneWindow, cfg: ModelConfig,
            params: ad.ParamStore) -> JointPrediction:
    """One deterministic joint forecast (zero noise for generative configs)."""
    model = ScanModel(cfg, params)
    with ad.Tape():
        result = model.forward(scene)
    return result.to_prediction()
