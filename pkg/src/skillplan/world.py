"""Quasi-static 2-D tabletop world.

Tables are convex polygons, objects are discs or boxes resting on them, the
arm is an annular reach model with a parallel gripper, and a long thin bar
serves as a handheld tool. Simulation steps are pure functions of
(state, action, rng): they return a new world and never mutate their input,
so identical seeds and action sequences give bit-identical traces.

Contact dynamics are deliberately simple: pushes translate the object by the
commanded distance plus seeded slip noise (lateral and longitudinal, both
scaled by friction times travel), and the swept bar carries any disc it
intersects. An object falls off its table the moment its center leaves the
polygon.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    ConvexPolygon,
    Pose2,
    lerp_pose,
    segment_closest_point,
    segment_point_distance,
    unit,
    wrap_angle,
)

__all__ = [
    "Shape",
    "RigidObject",
    "Table",
    "ArmModel",
    "SimParams",
    "TableTopWorld",
    "DepthGrid",
    "Grasp",
    "RandomizationBounds",
    "DomainDraw",
    "WorldError",
    "GROUND",
    "TABLE",
    "EDGE",
    "OBJECT",
    "step_push",
    "step_bar_motion",
    "render_depth",
    "check_graspable",
    "grasp_candidates",
    "observe",
    "in_workspace",
    "randomize_domain",
    "motion_collision_free",
]

GROUND, TABLE, EDGE, OBJECT = 0, 1, 2, 3


class WorldError(Exception):
    pass


class Shape(enum.Enum):
    CYLINDER = "cylinder"
    BOX = "box"


@dataclass
class RigidObject:
    """A rigid table ware or tool.

    half_extent is the disc radius for cylinders and the half side for boxes;
    half_extent_y departs from half_extent only for elongated tools (the bar).
    Contact queries treat every object as a disc of its bounding radius except
    the bar, which is handled as an oriented segment.
    """

    id: str
    shape: Shape
    half_extent: float
    kinetic_friction: float
    pose: Pose2
    on_table: str | None = None
    height: float = 0.05
    half_extent_y: float | None = None
    held: bool = False

    def __post_init__(self) -> None:
        if self.half_extent <= 0:
            raise ValueError(f"object {self.id}: half_extent must be > 0")
        if not 0 < self.kinetic_friction < 2:
            raise ValueError(f"object {self.id}: friction must be in (0, 2)")
        if self.half_extent_y is not None and self.half_extent_y <= 0:
            raise ValueError(f"object {self.id}: half_extent_y must be > 0")

    @property
    def radius(self) -> float:
        """Bounding disc radius used by contact queries."""
        if self.shape is Shape.BOX:
            hy = self.half_extent if self.half_extent_y is None else self.half_extent_y
            return math.hypot(self.half_extent, hy)
        return self.half_extent

    @property
    def position(self) -> np.ndarray:
        return self.pose.position

    def footprint_contains(self, point: np.ndarray) -> bool:
        d = np.asarray(point, dtype=np.float64) - self.position
        if self.shape is Shape.CYLINDER:
            return float(d @ d) <= self.half_extent**2
        c, s = math.cos(self.pose.yaw), math.sin(self.pose.yaw)
        local = np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]])
        hy = self.half_extent if self.half_extent_y is None else self.half_extent_y
        return abs(local[0]) <= self.half_extent and abs(local[1]) <= hy

    def copy(self) -> "RigidObject":
        return replace(self)


@dataclass
class Table:
    id: str
    polygon: ConvexPolygon
    height: float = 0.75

    def copy(self) -> "Table":
        return replace(self)


@dataclass
class ArmModel:
    """Annular reach model with a parallel gripper; a cheap IK stand-in."""

    base: Pose2
    reach_min: float
    reach_max: float
    gripper_max_width: float

    def __post_init__(self) -> None:
        if not 0 <= self.reach_min < self.reach_max:
            raise ValueError("need 0 <= reach_min < reach_max")
        if self.gripper_max_width <= 0:
            raise ValueError("gripper_max_width must be > 0")


@dataclass
class SimParams:
    """Contact-model constants; all config-overridable."""

    slip_coeff: float = 0.05          # lateral slip sigma = coeff * friction * travel
    travel_coeff: float = 0.15        # longitudinal sigma = coeff * friction * travel
    push_clearance: float = 0.010     # pusher stand-off behind the object rim
    bar_substeps: int = 24
    finger_radius: float = 0.010
    side_grasp_clearance: float = 0.005
    rim_min_overhang: float = 0.010   # rim must stick out this far for a rim pinch
    rim_grasp_width: float = 0.020    # effective jaw opening for a rim pinch
    rim_capture_tol: float = 0.020    # how far off a planned rim grasp may be
    grid_extent: float = 0.6
    height_norm: float = 0.87         # table height + tallest expected object


@dataclass
class TableTopWorld:
    """The full geometric state; a value type (copy before stepping)."""

    tables: dict[str, Table]
    objects: dict[str, RigidObject]
    arm: ArmModel
    bar: RigidObject
    sweep_region: tuple[float, float, float, float]
    params: SimParams = field(default_factory=SimParams)
    rng_seed: int = 0

    def copy(self) -> "TableTopWorld":
        return TableTopWorld(
            tables={k: t.copy() for k, t in self.tables.items()},
            objects={k: o.copy() for k, o in self.objects.items()},
            arm=self.arm,
            bar=self.bar.copy(),
            sweep_region=self.sweep_region,
            params=self.params,
            rng_seed=self.rng_seed,
        )

    def object(self, object_id: str) -> RigidObject:
        try:
            return self.objects[object_id]
        except KeyError:
            raise WorldError(f"unknown object id '{object_id}'") from None

    def table_of(self, object_id: str) -> Table:
        obj = self.object(object_id)
        if obj.on_table is None:
            raise WorldError(f"object '{object_id}' is not on a table")
        return self.tables[obj.on_table]

    def poses(self) -> dict[str, tuple[float, float, float]]:
        out = {oid: o.pose.as_tuple() for oid, o in sorted(self.objects.items())}
        out["__bar__"] = self.bar.pose.as_tuple()
        return out


@dataclass
class DepthGrid:
    """Top-down cell grid: small-integer codes plus normalized heights."""

    codes: np.ndarray
    heights: np.ndarray
    origin: np.ndarray
    cell_size: float

    @property
    def resolution(self) -> int:
        return int(self.codes.shape[0])


@dataclass(frozen=True)
class Grasp:
    """One feasible gripper placement on an object."""

    kind: str                 # 'side' or 'rim'
    target: tuple[float, float]
    approach_angle: float
    width: float


@dataclass(frozen=True)
class RandomizationBounds:
    friction_lo: float = 0.2
    friction_hi: float = 0.8
    half_extent_lo: float = 0.02
    half_extent_hi: float = 0.08
    edge_sigma: float = 0.05
    edge_mu: float = 0.0

    def __post_init__(self) -> None:
        if self.friction_lo >= self.friction_hi:
            raise ValueError("inverted friction bounds")
        if self.half_extent_lo >= self.half_extent_hi:
            raise ValueError("inverted half-extent bounds")
        if self.edge_sigma < 0:
            raise ValueError("edge_sigma must be >= 0")


@dataclass(frozen=True)
class DomainDraw:
    shape: Shape
    half_extent: float
    friction: float
    edge_angle: float


# ---------------------------------------------------------------------------
# Queries


def in_workspace(arm: ArmModel, pose) -> bool:
    """True iff the point lies in the closed reach annulus."""
    if isinstance(pose, Pose2):
        p = pose.position
    else:
        p = np.asarray(pose, dtype=np.float64)[:2]
    d = float(np.hypot(*(p - arm.base.position)))
    return arm.reach_min <= d <= arm.reach_max


def observe(world: TableTopWorld, object_id: str) -> Pose2:
    """Exact current pose; observation is perfect in this world."""
    return world.object(object_id).pose


def _overhang(table: Table, obj: RigidObject) -> float:
    """How far the rim sticks out past the nearest edge line (<= 0 inside)."""
    return obj.half_extent + table.polygon.signed_distance(obj.position)


def edge_overhang(world: TableTopWorld, object_id: str) -> float:
    return _overhang(world.table_of(object_id), world.object(object_id))


def grasp_candidates(
    world: TableTopWorld,
    object_id: str,
    num_grasp_samples: int = 16,
    position: np.ndarray | None = None,
) -> list[Grasp]:
    """Feasible antipodal grasps, side pinches first, then rim pinches.

    `position` overrides the object's position so the planner can ask about
    hypothetical placements. Side grasps need the object narrow enough for
    the jaws and both finger discs free of other objects. Rim pinches need
    the rim to stick out past a table edge far enough for the lower finger.
    """
    obj = world.object(object_id)
    if obj.on_table is None and position is None:
        return []
    table = world.tables[obj.on_table] if obj.on_table else None
    pos = obj.position if position is None else np.asarray(position, dtype=np.float64)
    p = world.params
    arm = world.arm
    others = [
        o for oid, o in sorted(world.objects.items())
        if oid != object_id and not o.held and o.on_table is not None
    ]
    out: list[Grasp] = []
    width_side = 2.0 * obj.half_extent
    angles = [2.0 * math.pi * i / num_grasp_samples for i in range(num_grasp_samples)]
    if width_side + 2 * p.side_grasp_clearance <= arm.gripper_max_width:
        for ang in angles:
            finger_off = obj.half_extent + p.finger_radius
            f1 = pos + finger_off * unit(ang)
            f2 = pos - finger_off * unit(ang)
            if any(
                np.hypot(*(f - o.position)) < o.radius + p.finger_radius
                for f in (f1, f2) for o in others
            ):
                continue
            out.append(Grasp("side", (float(pos[0]), float(pos[1])), ang, width_side))
    if table is not None:
        for ang in angles:
            rim = pos + obj.half_extent * unit(ang)
            clearance = table.polygon.signed_distance(rim)
            if clearance < p.rim_min_overhang:
                continue
            if any(np.hypot(*(rim - o.position)) < o.radius + p.finger_radius
                   for o in others):
                continue
            out.append(Grasp("rim", (float(rim[0]), float(rim[1])), ang,
                             p.rim_grasp_width))
    return out


def check_graspable(
    world: TableTopWorld, object_id: str, num_grasp_samples: int = 16
) -> bool:
    """True iff at least one sampled grasp is feasible where the object is."""
    obj = world.object(object_id)
    if obj.on_table is None or obj.held:
        return False
    return bool(grasp_candidates(world, object_id, num_grasp_samples))


def motion_collision_free(
    world: TableTopWorld,
    start: np.ndarray,
    end: np.ndarray,
    ignore: tuple[str, ...] = (),
    clearance: float | None = None,
) -> bool:
    """Straight gripper path vs. every other object's bounding disc."""
    p = world.params
    clear = p.finger_radius if clearance is None else clearance
    a = np.asarray(start, dtype=np.float64)
    b = np.asarray(end, dtype=np.float64)
    for oid, obj in sorted(world.objects.items()):
        if oid in ignore or obj.held or obj.on_table is None:
            continue
        if segment_point_distance(a, b, obj.position) < obj.radius + clear:
            return False
    return True


# ---------------------------------------------------------------------------
# Dynamics


def _fall_check(obj: RigidObject, tables: dict[str, Table]) -> None:
    if obj.on_table is None:
        return
    if not tables[obj.on_table].polygon.contains(obj.position):
        obj.on_table = None


def _slip(
    rng: np.random.Generator,
    direction: np.ndarray,
    travel: float,
    friction: float,
    params: SimParams,
) -> np.ndarray:
    """Seeded contact noise: longitudinal then lateral draw, both N(0, c*f*d)."""
    if travel <= 0.0:
        return np.zeros(2)
    along = rng.normal(0.0, params.travel_coeff * friction * travel)
    across = rng.normal(0.0, params.slip_coeff * friction * travel)
    perp = np.array([-direction[1], direction[0]])
    return along * direction + across * perp


def step_push(
    world: TableTopWorld,
    object_id: str,
    angle: float,
    distance: float,
    rng: np.random.Generator,
) -> TableTopWorld:
    """Fingertip push: translate the object along `angle` by `distance`.

    The pusher stands behind the object rim opposite the push direction; that
    start point must be inside the reach annulus. Noise scales with friction
    and commanded travel, so a zero-distance push is an exact identity.
    """
    if distance < 0:
        raise WorldError("push distance must be >= 0")
    obj = world.object(object_id)
    if obj.on_table is None:
        raise WorldError(f"object '{object_id}' is not on a table")
    direction = unit(wrap_angle(angle))
    start = obj.position - (obj.half_extent + world.params.push_clearance) * direction
    if not in_workspace(world.arm, start):
        raise WorldError(
            f"push start point ({start[0]:.3f}, {start[1]:.3f}) is unreachable"
        )
    new = world.copy()
    moved = new.objects[object_id]
    if distance > 0.0:
        delta = distance * direction + _slip(
            rng, direction, distance, moved.kinetic_friction, world.params
        )
        moved.pose = Pose2(
            moved.pose.x + float(delta[0]),
            moved.pose.y + float(delta[1]),
            moved.pose.yaw,
        )
        _fall_check(moved, new.tables)
    return new


def _bar_segment(bar: RigidObject, pose: Pose2) -> tuple[np.ndarray, np.ndarray]:
    half_len = bar.half_extent
    axis = unit(pose.yaw)
    center = pose.position
    return center - half_len * axis, center + half_len * axis


def _bar_halfwidth(bar: RigidObject) -> float:
    return bar.half_extent_y if bar.half_extent_y is not None else bar.half_extent


def step_bar_motion(
    world: TableTopWorld, bar_target: Pose2, rng: np.random.Generator
) -> TableTopWorld:
    """Linear bar motion to `bar_target`, carrying any disc the sweep hits.

    The motion is interpolated in substeps; at each substep every on-table
    object overlapping the bar's segment (inflated by the bar half-width) is
    projected out along the contact normal. Contact noise is applied once per
    object at the end, scaled by its total carried displacement.
    """
    x0, y0, x1, y1 = world.sweep_region
    if not (x0 <= bar_target.x <= x1 and y0 <= bar_target.y <= y1):
        raise WorldError(
            f"bar target ({bar_target.x:.3f}, {bar_target.y:.3f}) "
            "outside the sweep region"
        )
    new = world.copy()
    bar = new.bar
    halfwidth = _bar_halfwidth(bar)
    start_positions = {oid: o.position for oid, o in new.objects.items()}
    substeps = max(1, world.params.bar_substeps)
    for i in range(1, substeps + 1):
        pose = lerp_pose(bar.pose, bar_target, i / substeps)
        a, b = _bar_segment(bar, pose)
        for oid in sorted(new.objects):
            obj = new.objects[oid]
            if obj.on_table is None or obj.held:
                continue
            reach = obj.half_extent + halfwidth
            q = segment_closest_point(a, b, obj.position)
            offset = obj.position - q
            dist = float(np.hypot(*offset))
            if dist >= reach:
                continue
            if dist < 1e-12:
                push_dir = unit(pose.yaw + math.pi / 2.0)
            else:
                push_dir = offset / dist
            shift = (reach - dist) * push_dir
            obj.pose = Pose2(
                obj.pose.x + float(shift[0]),
                obj.pose.y + float(shift[1]),
                obj.pose.yaw,
            )
            _fall_check(obj, new.tables)
    for oid in sorted(new.objects):
        obj = new.objects[oid]
        if obj.on_table is None or obj.held:
            continue
        delta = obj.position - start_positions[oid]
        travel = float(np.hypot(*delta))
        if travel <= 1e-12:
            continue
        noise = _slip(rng, delta / travel, travel, obj.kinetic_friction, world.params)
        obj.pose = Pose2(
            obj.pose.x + float(noise[0]), obj.pose.y + float(noise[1]), obj.pose.yaw
        )
        _fall_check(obj, new.tables)
    bar.pose = bar_target
    return new


# ---------------------------------------------------------------------------
# Rendering


def render_depth(
    world: TableTopWorld,
    table_id: str,
    resolution: int = 32,
    extent: float | None = None,
    include: tuple[str, ...] | None = None,
) -> DepthGrid:
    """Top-down code/height grid over the table frame.

    Cell codes: 0 ground, 1 table, 2 edge band (one cell wide, straddling the
    polygon boundary), 3 object. Objects override edge cells, so a disc
    overhanging the edge shows object cells on both sides of the edge band.
    `include` restricts which objects are drawn (skill observations render
    only their target object).
    """
    if table_id not in world.tables:
        raise WorldError(f"unknown table id '{table_id}'")
    table = world.tables[table_id]
    size = world.params.grid_extent if extent is None else extent
    cell = size / resolution
    center = table.polygon.centroid()
    origin = center - size / 2.0
    idx = (np.arange(resolution) + 0.5) * cell
    xs = origin[0] + idx
    ys = origin[1] + idx
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)

    verts = table.polygon.vertex_array
    signed = np.full(pts.shape[0], -np.inf)
    for i in range(len(verts)):
        a = verts[i]
        n = table.polygon.edge_outward_normal(i)
        signed = np.maximum(signed, (pts - a) @ n)
    codes = np.where(signed <= 0.0, TABLE, GROUND).astype(np.uint8)
    heights = np.where(signed <= 0.0, table.height, 0.0)
    edge_band = np.abs(signed) <= cell / 2.0
    codes[edge_band] = EDGE

    drawn = sorted(world.objects) if include is None else list(include)
    for oid in drawn:
        obj = world.objects[oid]
        if obj.held or obj.on_table != table_id:
            continue
        if obj.shape is Shape.CYLINDER:
            mask = ((pts - obj.position) ** 2).sum(axis=1) <= obj.half_extent**2
        else:
            d = pts - obj.position
            c, s = math.cos(obj.pose.yaw), math.sin(obj.pose.yaw)
            lx = c * d[:, 0] + s * d[:, 1]
            ly = -s * d[:, 0] + c * d[:, 1]
            hy = obj.half_extent if obj.half_extent_y is None else obj.half_extent_y
            mask = (np.abs(lx) <= obj.half_extent) & (np.abs(ly) <= hy)
        codes[mask] = OBJECT
        heights[mask] = table.height + obj.height
    norm = world.params.height_norm
    return DepthGrid(
        codes=codes.reshape(resolution, resolution),
        heights=(heights / norm).astype(np.float64).reshape(resolution, resolution),
        origin=origin,
        cell_size=cell,
    )


# ---------------------------------------------------------------------------
# Domain randomization


def randomize_domain(
    bounds: RandomizationBounds, rng: np.random.Generator
) -> DomainDraw:
    """One per-episode draw: shape, half extent, friction, edge angle.

    Draw order is fixed (shape, friction, half extent, edge) so seeded
    episodes stay reproducible across code paths.
    """
    shape = (Shape.CYLINDER, Shape.BOX)[int(rng.integers(0, 2))]
    friction = float(rng.uniform(bounds.friction_lo, bounds.friction_hi))
    half_extent = float(rng.uniform(bounds.half_extent_lo, bounds.half_extent_hi))
    edge = float(rng.normal(bounds.edge_mu, bounds.edge_sigma)) if bounds.edge_sigma > 0 \
        else float(bounds.edge_mu)
    return DomainDraw(shape, half_extent, friction, edge)
