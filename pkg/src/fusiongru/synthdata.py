"""Synthetic egocentric driving scenes and the line-delimited dataset format.

A scene is a handful of agents moving in image space with a depth
coordinate, seen by a camera whose own motion shows up as a drift of
everything in the frame plus a zoom. Each frame yields, per visible agent,
the same cues a detector/tracker/flow/depth stack would hand the model:

* a normalized box ``[x, y, w, h]``,
* an object flow vector: a fixed random linear image of the box's pixel
  velocity, plus Gaussian noise,
* the frame's global flow vector: the same kind of image of the ego drift,
* the distances (metres) to the 6 nearest other agents, padded with 80.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DatasetParseError, VersionError
from .features import DISTANCE_SENTINEL, NEIGHBOURS, AgentObservation, BoundingBox, pad_distances

FORMAT_VERSION = 1
MOTION_KINDS = ("constant-velocity", "constant-acceleration", "turn", "abrupt-change")
MIN_DEPTH, MAX_DEPTH = 3.0, 79.0
FEATURE_ENCODING = "linear-velocity-v1"


@dataclass
class MotionProgram:
    """Image-plane motion of one agent; velocities are per frame."""

    kind: str = "constant-velocity"
    position: tuple = (640.0, 320.0)  # centre, px
    depth: float = 20.0  # m
    velocity: tuple = (0.0, 0.0, 0.0)  # du, dv (px), dz (m)
    acceleration: tuple = (0.0, 0.0, 0.0)
    turn_rate: float = 0.0  # rad/frame, rotates (du, dv)
    change_frame: int | None = None
    new_velocity: tuple | None = None
    aspect: float = 1.0  # box width / height


@dataclass
class EgoMotion:
    """Piecewise-constant drift ``[(start_frame, du, dv), ...]`` and per-frame zoom."""

    drift: list = field(default_factory=lambda: [(0, 0.0, 0.0)])
    zoom: float = 1.0

    def drift_at(self, t):
        du = dv = 0.0
        for start, u, v in sorted(self.drift):
            if start <= t:
                du, dv = u, v
        return du, dv


@dataclass
class SceneSpec:
    agents: list
    frame_count: int = 20
    fps: float = 10.0
    frame_size: tuple = (1280, 640)
    ego: EgoMotion = field(default_factory=EgoMotion)
    noise_std: float = 0.05  # flow feature noise
    box_jitter_px: float = 0.0  # detector jitter on recorded boxes
    seed: int = 0
    D: int = 64
    feature_seed: int = 0
    reference_height: float = 1000.0  # px * m: box height at 1 m depth

    @property
    def agent_count(self):
        return len(self.agents)

    def validate(self):
        width, height = self.frame_size
        if self.frame_count < 1:
            raise ValueError("frame_count must be at least 1")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if width <= 0 or height <= 0:
            raise ValueError(f"invalid frame size {self.frame_size}")
        if self.D < 1:
            raise ValueError("D must be positive")
        if self.noise_std < 0 or self.box_jitter_px < 0:
            raise ValueError("noise levels must be nonnegative")
        if self.ego.zoom <= 0:
            raise ValueError("zoom factor must be positive")
        for i, agent in enumerate(self.agents):
            if agent.kind not in MOTION_KINDS:
                raise ValueError(f"agent {i}: unknown motion {agent.kind!r}")
            if not MIN_DEPTH <= agent.depth <= MAX_DEPTH:
                raise ValueError(f"agent {i}: depth {agent.depth} outside [{MIN_DEPTH}, {MAX_DEPTH}]")
            if agent.aspect <= 0:
                raise ValueError(f"agent {i}: aspect must be positive")
            if agent.kind == "abrupt-change":
                if agent.change_frame is None or agent.new_velocity is None:
                    raise ValueError(f"agent {i}: abrupt change needs change_frame and new_velocity")
                if not 0 < agent.change_frame < self.frame_count:
                    raise ValueError(f"agent {i}: change frame {agent.change_frame} not strictly inside the sequence")


@dataclass
class Frame:
    frame_index: int
    global_flow: np.ndarray
    agents: dict  # id -> AgentObservation


@dataclass
class SequenceRecord:
    frame_size: tuple
    fps: float
    D: int
    frames: list
    feature_encoding: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def agent_ids(self):
        ids = set()
        for frame in self.frames:
            ids.update(frame.agents)
        return sorted(ids)

    def equals(self, other):
        if (tuple(self.frame_size), self.fps, self.D, self.feature_encoding, self.meta) != (
            tuple(other.frame_size),
            other.fps,
            other.D,
            other.feature_encoding,
            other.meta,
        ):
            return False
        if len(self.frames) != len(other.frames):
            return False
        for a, b in zip(self.frames, other.frames):
            if a.frame_index != b.frame_index or not np.array_equal(a.global_flow, b.global_flow):
                return False
            if sorted(a.agents) != sorted(b.agents):
                return False
            for aid, obs in a.agents.items():
                o = b.agents[aid]
                if obs.box != o.box or not (
                    np.array_equal(obs.object_flow, o.object_flow) and np.array_equal(obs.distances, o.distances)
                ):
                    return False
        return True


# ----------------------------------------------------------------- generator


def feature_matrices(D, feature_seed):
    """Fixed embeddings of box velocity (D x 4) and ego motion (D x 3).

    They depend only on ``feature_seed`` so every scene of a dataset shares
    them, which is what makes the flow features learnable.
    """
    rng = np.random.default_rng([feature_seed, 7919])
    return rng.normal(0.0, 0.5, size=(D, 4)), rng.normal(0.0, 0.5, size=(D, 3))


VELOCITY_SCALE = 0.25  # px/frame -> feature units


def _integrate(agent, frame_count):
    """Per-frame (u, v, depth) for one agent, shape (F, 3)."""
    pos = np.array([agent.position[0], agent.position[1], agent.depth], dtype=np.float64)
    vel = np.array(agent.velocity, dtype=np.float64)
    acc = np.array(agent.acceleration, dtype=np.float64)
    out = np.empty((frame_count, 3))
    for t in range(frame_count):
        out[t] = pos
        if agent.kind == "abrupt-change" and t == agent.change_frame:
            vel = np.array(agent.new_velocity, dtype=np.float64)
        pos = pos + vel
        pos[2] = min(max(pos[2], MIN_DEPTH), MAX_DEPTH)
        if agent.kind == "constant-acceleration":
            vel = vel + acc
        elif agent.kind == "turn":
            c, s = math.cos(agent.turn_rate), math.sin(agent.turn_rate)
            vel[:2] = (c * vel[0] - s * vel[1], s * vel[0] + c * vel[1])
    return out


def generate(spec):
    """Render a :class:`SceneSpec` into a :class:`SequenceRecord`."""
    spec.validate()
    width, height = spec.frame_size
    F, D = spec.frame_count, spec.D
    rng = np.random.default_rng(spec.seed)
    obj_embed, ego_embed = feature_matrices(D, spec.feature_seed)
    focal = float(width)

    offsets = np.zeros((F, 2))
    drifts = np.array([spec.ego.drift_at(t) for t in range(F)])
    offsets[1:] = np.cumsum(drifts[:-1], axis=0)
    zoom = spec.ego.zoom ** np.arange(F)

    tracks = []  # per agent: true pixel boxes (F, 4) and depth (F,)
    for agent in spec.agents:
        state = _integrate(agent, F)
        h_px = np.clip(spec.reference_height / state[:, 2] * zoom, 2.0, height)
        w_px = np.clip(agent.aspect * h_px, 2.0, width)
        boxes = np.stack([state[:, 0] + offsets[:, 0], state[:, 1] + offsets[:, 1], w_px, h_px], axis=1)
        tracks.append((boxes, state[:, 2]))

    frames = []
    for t in range(F):
        ego_vec = np.array([drifts[t - 1, 0], drifts[t - 1, 1], 100.0 * (spec.ego.zoom - 1.0)]) if t > 0 else np.zeros(3)
        global_flow = ego_embed @ (ego_vec * VELOCITY_SCALE)
        if spec.noise_std > 0:
            global_flow = global_flow + rng.normal(0.0, spec.noise_std, D)
        visible = [i for i, (boxes, _) in enumerate(tracks) if 0 <= boxes[t, 0] <= width and 0 <= boxes[t, 1] <= height]
        world = {}
        for i in visible:
            boxes, depth = tracks[i]
            cx, cy = boxes[t, 0], boxes[t, 1]
            world[i] = np.array([(cx - width / 2) * depth[t] / focal, (cy - height / 2) * depth[t] / focal, depth[t]])
        agents = {}
        for i in visible:
            boxes, _ = tracks[i]
            velocity = boxes[t] - boxes[t - 1] if t > 0 and i in _visible_ids(tracks, t - 1, width, height) else np.zeros(4)
            object_flow = obj_embed @ (velocity * VELOCITY_SCALE)
            if spec.noise_std > 0:
                object_flow = object_flow + rng.normal(0.0, spec.noise_std, D)
            box_px = boxes[t].copy()
            if spec.box_jitter_px > 0:
                box_px = box_px + rng.normal(0.0, spec.box_jitter_px, 4)
                box_px[2:] = np.maximum(box_px[2:], 1.0)
            dists = [np.linalg.norm(world[i] - world[j]) for j in visible if j != i]
            agents[i] = AgentObservation(
                box=BoundingBox(box_px[0] / width, box_px[1] / height, box_px[2] / width, box_px[3] / height),
                object_flow=object_flow,
                global_flow=global_flow,
                distances=pad_distances(dists),
            )
        frames.append(Frame(frame_index=t, global_flow=global_flow, agents=agents))

    meta = {
        "seed": int(spec.seed),
        "agents": [
            {"id": i, "motion": a.kind, "change_frame": a.change_frame} for i, a in enumerate(spec.agents)
        ],
    }
    return SequenceRecord(
        frame_size=(int(width), int(height)),
        fps=float(spec.fps),
        D=D,
        frames=frames,
        feature_encoding={
            "kind": FEATURE_ENCODING,
            "feature_seed": int(spec.feature_seed),
            "velocity_scale": VELOCITY_SCALE,
            "noise_std": float(spec.noise_std),
        },
        meta=meta,
    )


def _visible_ids(tracks, t, width, height):
    return {i for i, (boxes, _) in enumerate(tracks) if 0 <= boxes[t, 0] <= width and 0 <= boxes[t, 1] <= height}


# ------------------------------------------------------------ scene sampling


@dataclass
class ScenarioConfig:
    """Distribution that random scenes are drawn from."""

    frame_count: int = 20
    fps: float = 10.0
    frame_width: int = 1280
    frame_height: int = 640
    agent_count: int = 4
    D: int = 64
    noise_std: float = 0.05
    box_jitter_px: float = 0.5
    abrupt_fraction: float = 0.3
    feature_seed: int = 0
    speed_px: float = 4.0  # std of horizontal image speed, px/frame
    ego_drift_px: float = 1.5
    zoom_std: float = 0.004

    def validate(self):
        if not 0.0 <= self.abrupt_fraction <= 1.0:
            raise ConfigError("abrupt_fraction must lie in [0, 1]", ["abrupt_fraction"])
        if self.frame_count < 3:
            raise ConfigError("frame_count must be at least 3", ["frame_count"])
        if self.agent_count < 1:
            raise ConfigError("agent_count must be positive", ["agent_count"])


def _random_velocity(rng, cfg):
    return (rng.normal(0.0, cfg.speed_px), rng.normal(0.0, cfg.speed_px * 0.25), rng.normal(0.0, 0.4))


def sample_scene(cfg, seed):
    """Draw one :class:`SceneSpec` from ``cfg``."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    W, H = cfg.frame_width, cfg.frame_height
    abrupt_agent = int(rng.integers(cfg.agent_count)) if rng.random() < cfg.abrupt_fraction else None
    agents = []
    for i in range(cfg.agent_count):
        common = dict(
            position=(rng.uniform(0.15, 0.85) * W, rng.uniform(0.35, 0.75) * H),
            depth=float(rng.uniform(8.0, 50.0)),
            velocity=_random_velocity(rng, cfg),
            aspect=float(rng.uniform(0.5, 2.0)),
        )
        if i == abrupt_agent:
            agents.append(
                MotionProgram(
                    kind="abrupt-change",
                    change_frame=int(rng.integers(max(1, cfg.frame_count // 4), cfg.frame_count - 1)),
                    new_velocity=_random_velocity(rng, cfg),
                    **common,
                )
            )
            continue
        kind = rng.choice(["constant-velocity", "constant-acceleration", "turn"], p=[0.5, 0.25, 0.25])
        if kind == "constant-acceleration":
            acc = (rng.normal(0.0, 0.3), rng.normal(0.0, 0.08), rng.normal(0.0, 0.03))
            agents.append(MotionProgram(kind=kind, acceleration=acc, **common))
        elif kind == "turn":
            agents.append(MotionProgram(kind=kind, turn_rate=float(rng.normal(0.0, 0.08)), **common))
        else:
            agents.append(MotionProgram(kind=str(kind), **common))
    drift = [(0, rng.normal(0.0, cfg.ego_drift_px), rng.normal(0.0, cfg.ego_drift_px * 0.2))]
    if rng.random() < 0.5:
        drift.append(
            (int(rng.integers(1, cfg.frame_count)), rng.normal(0.0, cfg.ego_drift_px), rng.normal(0.0, cfg.ego_drift_px * 0.2))
        )
    ego = EgoMotion(drift=drift, zoom=float(1.0 + rng.normal(0.0, cfg.zoom_std)))
    return SceneSpec(
        agents=agents,
        frame_count=cfg.frame_count,
        fps=cfg.fps,
        frame_size=(W, H),
        ego=ego,
        noise_std=cfg.noise_std,
        box_jitter_px=cfg.box_jitter_px,
        seed=int(rng.integers(2**31)),
        D=cfg.D,
        feature_seed=cfg.feature_seed,
    )


def generate_dataset(cfg, scenes, seed):
    """``scenes`` records drawn from ``cfg``; reproducible from ``seed``."""
    children = np.random.SeedSequence(seed).generate_state(scenes)
    return [generate(sample_scene(cfg, int(s))) for s in children]


# -------------------------------------------------------------- windowing


@dataclass
class Sample:
    record_index: int
    agent_id: int
    start: int  # frame index of the first observed frame
    observations: list
    truth: np.ndarray  # (N, 4) normalized
    change_in_horizon: bool = False


def _runs(frame_ids):
    run = []
    for f in frame_ids:
        if run and f != run[-1] + 1:
            yield run
            run = []
        run.append(f)
    if run:
        yield run


def split_samples(record, T_obs, N, record_index=0):
    """Sliding (observation window, future boxes) pairs for every agent.

    Windows never straddle a gap in an agent's track.
    """
    if T_obs < 1 or N < 1:
        raise ValueError("T_obs and N must be at least 1")
    changes = {a["id"]: a.get("change_frame") for a in record.meta.get("agents", [])}
    by_index = {frame.frame_index: frame for frame in record.frames}
    samples = []
    for aid in record.agent_ids():
        present = sorted(f.frame_index for f in record.frames if aid in f.agents)
        for run in _runs(present):
            for s in range(len(run) - T_obs - N + 1):
                window = run[s : s + T_obs]
                future = run[s + T_obs : s + T_obs + N]
                change = changes.get(aid)
                samples.append(
                    Sample(
                        record_index=record_index,
                        agent_id=aid,
                        start=window[0],
                        observations=[by_index[f].agents[aid] for f in window],
                        truth=np.stack([by_index[f].agents[aid].box.as_array() for f in future]),
                        change_in_horizon=change is not None and window[-1] <= change < future[-1],
                    )
                )
    return samples


@dataclass
class SampleSet:
    """Stacked samples ready for batched forward passes."""

    boxes: np.ndarray  # (S, T, 4)
    object_flow: np.ndarray  # (S, T, D)
    global_flow: np.ndarray  # (S, T, D)
    distances: np.ndarray  # (S, T, 6)
    truth: np.ndarray  # (S, N, 4)
    frame_size: np.ndarray  # (S, 2)
    fps: float
    record_index: np.ndarray
    agent_id: np.ndarray
    start: np.ndarray
    change_in_horizon: np.ndarray

    def __len__(self):
        return self.boxes.shape[0]

    @property
    def D(self):
        return self.object_flow.shape[-1]

    @property
    def T_obs(self):
        return self.boxes.shape[1]

    @property
    def N(self):
        return self.truth.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        if index.size == 0:
            index = index.astype(int)
        arrays = {
            name: getattr(self, name)[index]
            for name in (
                "boxes",
                "object_flow",
                "global_flow",
                "distances",
                "truth",
                "frame_size",
                "record_index",
                "agent_id",
                "start",
                "change_in_horizon",
            )
        }
        return SampleSet(fps=self.fps, **arrays)


def build_sample_set(records, T_obs, N):
    """Window every record and stack the result. Records must share fps and D."""
    if not records:
        raise ValueError("no records to sample from")
    fps = {r.fps for r in records}
    dims = {r.D for r in records}
    if len(fps) != 1 or len(dims) != 1:
        raise ConfigError(f"records disagree on fps {sorted(fps)} or D {sorted(dims)}", ["fps", "D"])
    samples, sizes = [], []
    for i, record in enumerate(records):
        got = split_samples(record, T_obs, N, record_index=i)
        samples.extend(got)
        sizes.extend([record.frame_size] * len(got))
    D = dims.pop()
    if not samples:
        empty = np.zeros
        return SampleSet(
            boxes=empty((0, T_obs, 4)),
            object_flow=empty((0, T_obs, D)),
            global_flow=empty((0, T_obs, D)),
            distances=empty((0, T_obs, NEIGHBOURS)),
            truth=empty((0, N, 4)),
            frame_size=empty((0, 2)),
            fps=fps.pop(),
            record_index=empty(0, dtype=int),
            agent_id=empty(0, dtype=int),
            start=empty(0, dtype=int),
            change_in_horizon=empty(0, dtype=bool),
        )
    return SampleSet(
        boxes=np.array([[o.box.as_array() for o in s.observations] for s in samples]),
        object_flow=np.array([[o.object_flow for o in s.observations] for s in samples]),
        global_flow=np.array([[o.global_flow for o in s.observations] for s in samples]),
        distances=np.array([[o.distances for o in s.observations] for s in samples]),
        truth=np.array([s.truth for s in samples]),
        frame_size=np.array(sizes, dtype=np.float64),
        fps=fps.pop(),
        record_index=np.array([s.record_index for s in samples]),
        agent_id=np.array([s.agent_id for s in samples]),
        start=np.array([s.start for s in samples]),
        change_in_horizon=np.array([s.change_in_horizon for s in samples], dtype=bool),
    )


# ------------------------------------------------------------------ file I/O


def save(path, records):
    """Write records as JSON lines: one header line per record, one line per frame."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, record in enumerate(records):
            header = {
                "format_version": FORMAT_VERSION,
                "record": i,
                "frame_size": list(record.frame_size),
                "fps": record.fps,
                "D": record.D,
                "feature_encoding": record.feature_encoding,
                "frame_count": len(record.frames),
                "meta": record.meta,
            }
            fh.write(json.dumps(header) + "\n")
            for frame in record.frames:
                line = {
                    "frame_index": frame.frame_index,
                    "agents": [
                        {
                            "id": aid,
                            "box": obs.box.as_array().tolist(),
                            "object_flow": obs.object_flow.tolist(),
                            "distances": obs.distances.tolist(),
                        }
                        for aid, obs in frame.agents.items()
                    ],
                    "global_flow": frame.global_flow.tolist(),
                }
                fh.write(json.dumps(line) + "\n")


def _parse_frame(obj, D, lineno, record):
    try:
        global_flow = np.array(obj["global_flow"], dtype=np.float64)
        agents = {}
        for entry in obj["agents"]:
            agents[int(entry["id"])] = AgentObservation(
                box=BoundingBox.from_array(entry["box"]),
                object_flow=entry["object_flow"],
                global_flow=global_flow,
                distances=entry["distances"],
            )
        frame = Frame(frame_index=int(obj["frame_index"]), global_flow=global_flow, agents=agents)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetParseError(f"bad frame entry: {exc}", line=lineno, record=record) from exc
    if global_flow.shape != (D,):
        raise DatasetParseError(f"global_flow has length {global_flow.size}, header says D={D}", line=lineno, record=record)
    for obs in agents.values():
        if obs.object_flow.shape != (D,):
            raise DatasetParseError(f"object_flow has length {obs.object_flow.size}, header says D={D}", line=lineno, record=record)
    return frame


def load(path):
    records = []
    header = None
    frames = []
    lineno = 0

    def finish():
        records.append(
            SequenceRecord(
                frame_size=tuple(header["frame_size"]),
                fps=float(header["fps"]),
                D=int(header["D"]),
                frames=frames,
                feature_encoding=header.get("feature_encoding", {}),
                meta=header.get("meta", {}),
            )
        )

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"invalid JSON: {exc.msg}", line=lineno, record=len(records)) from exc
            if not isinstance(obj, dict):
                raise DatasetParseError("expected a JSON object", line=lineno, record=len(records))
            if "format_version" in obj:
                if header is not None:
                    if len(frames) != header["frame_count"]:
                        raise DatasetParseError(
                            f"record has {len(frames)} frames, header promised {header['frame_count']}",
                            line=lineno,
                            record=len(records),
                        )
                    finish()
                if obj["format_version"] != FORMAT_VERSION:
                    raise VersionError(
                        f"unsupported format_version {obj['format_version']} (expected {FORMAT_VERSION})",
                        line=lineno,
                        record=len(records),
                    )
                missing = [k for k in ("frame_size", "fps", "D", "frame_count") if k not in obj]
                if missing:
                    raise DatasetParseError(f"header lacks {missing}", line=lineno, record=len(records))
                header, frames = obj, []
                continue
            if header is None:
                raise DatasetParseError("frame line before any header", line=lineno, record=0)
            if len(frames) >= header["frame_count"]:
                raise DatasetParseError("more frames than the header declares", line=lineno, record=len(records))
            frames.append(_parse_frame(obj, int(header["D"]), lineno, len(records)))
    if header is not None:
        if len(frames) != header["frame_count"]:
            raise DatasetParseError(
                f"truncated: record has {len(frames)} of {header['frame_count']} frames",
                line=lineno + 1,
                record=len(records),
            )
        finish()
    return records


__all__ = [
    "DISTANCE_SENTINEL",
    "EgoMotion",
    "Frame",
    "MotionProgram",
    "Sample",
    "SampleSet",
    "ScenarioConfig",
    "SceneSpec",
    "SequenceRecord",
    "build_sample_set",
    "generate",
    "generate_dataset",
    "load",
    "sample_scene",
    "save",
    "split_samples",
]
