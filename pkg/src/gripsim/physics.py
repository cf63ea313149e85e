"""Quasi-static planar grip world.

The object translates in the plane. Contact normals live in the object frame
and the object does not rotate. Along x the object sits wherever the finger
springs (plus any lateral disturbance) balance; along y, the load axis, it
sticks while the summed Coulomb capacity covers the load and otherwise slides
as one body at ``K_SLIDE`` times the force deficit.

Fingers are 1-DoF actuators: each one only moves its base along its own
contact normal (and, for data collection on a fixed object, along the
tangent). :func:`step` is the only place one finger can affect another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from .core import ContactState

GRAVITY = 9.81
K_SLIDE = 0.02  # m/s per N of unmet tangential load
SKIN_STIFFNESS = 2.0e5  # N/m, tangential fingertip skin (fixed-object mode only)


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    mass: float
    friction_mu: float
    stiffness: float
    radius: float = 0.04
    relax_time: float = math.inf  # s; contact force relaxation (viscoelastic creep)

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"{self.id}: mass must be > 0")
        if not 0 < self.friction_mu <= 2:
            raise ValueError(f"{self.id}: friction_mu must be in (0, 2]")
        if not self.stiffness > 0:
            raise ValueError(f"{self.id}: stiffness must be > 0")
        if not self.relax_time > 0:
            raise ValueError(f"{self.id}: relax_time must be > 0")

    @property
    def weight(self) -> float:
        return self.mass * GRAVITY

    def deformation_budget(self, max_indent: float = 0.005) -> float:
        """Normal force at which the surface indents by ``max_indent``."""
        return self.stiffness * max_indent


# Relaxation times are chosen so a finger creeping at the controller's floor
# speed holds a 2-finger grip somewhat above its minimal force once the
# stress relaxes (creep push balances relaxation near 1.1-1.4x that force).
OBJECTS = {
    "ball": ObjectSpec("ball", mass=0.15, friction_mu=0.6, stiffness=2000.0, radius=0.035, relax_time=60.0),
    "box": ObjectSpec("box", mass=0.25, friction_mu=0.5, stiffness=3000.0, radius=0.04, relax_time=80.0),
    "tuna_can": ObjectSpec("tuna_can", mass=0.40, friction_mu=0.4, stiffness=5000.0, radius=0.042, relax_time=90.0),
    "plastic_cup": ObjectSpec("plastic_cup", mass=0.03, friction_mu=0.6, stiffness=1000.0, radius=0.04,
                              relax_time=25.0),
    # reference load case: half a kilo, mu 0.5
    "block": ObjectSpec("block", mass=0.5, friction_mu=0.5, stiffness=2000.0, radius=0.04, relax_time=200.0),
}
TRAIN_OBJECTS = ("ball", "box")
UNSEEN_OBJECTS = ("tuna_can", "plastic_cup")


def get_object(object_id: str) -> ObjectSpec:
    try:
        return OBJECTS[object_id]
    except KeyError:
        raise ValueError(f"unknown object {object_id!r}; expected one of {sorted(OBJECTS)}") from None


def _unit(deg: float) -> tuple[float, float]:
    a = math.radians(deg)
    return (math.cos(a), math.sin(a))


# Contact normals point from the fingertip into the object. Finger 0 is the
# thumb pushing +x; the others oppose it from the +x side.
LAYOUTS: dict[int, tuple[tuple[float, float], ...]] = {
    1: ((1.0, 0.0),),
    2: ((1.0, 0.0), (-1.0, 0.0)),
    3: ((1.0, 0.0), _unit(150.0), _unit(210.0)),
    4: ((1.0, 0.0), _unit(160.0), (-1.0, 0.0), _unit(200.0)),
    # Weak opposition: ring and little fingers sit well away from the thumb's axis.
    5: ((1.0, 0.0), _unit(155.0), (-1.0, 0.0), _unit(205.0), _unit(230.0)),
}


def layout(finger_count: int) -> tuple[tuple[float, float], ...]:
    if finger_count not in LAYOUTS:
        raise ValueError(f"finger_count must be in 1..5 (got {finger_count})")
    return LAYOUTS[finger_count]


@dataclass(frozen=True)
class World:
    obj: ObjectSpec
    normals: tuple[tuple[float, float], ...]
    base: tuple[float, ...]  # finger base advance along its normal (m); penetration at rest pose
    tangential: tuple[float, ...] = ()  # finger base offset along its tangent (m)
    skin: tuple[float, ...] = ()  # tangential skin deflection (m), fixed-object mode
    creep: tuple[float, ...] = ()  # relaxed part of each indentation (m)
    obj_pos: tuple[float, float] = (0.0, 0.0)
    fixed: bool = False  # object clamped in place (data collection rig)
    wall: bool = False  # position-clamped opposing contact on the far side of the fingers
    wall_mu: float = 0.0
    gravity_scale: float = 1.0
    in_contact: tuple[bool, ...] = field(default=(), compare=False)

    def __post_init__(self):
        n = len(self.normals)
        for nx, ny in self.normals:
            if abs(math.hypot(nx, ny) - 1.0) > 1e-9:
                raise ValueError("contact normals must be unit length")
        for name in ("tangential", "skin", "creep"):
            if not getattr(self, name):
                object.__setattr__(self, name, (0.0,) * n)
        if not self.in_contact:
            object.__setattr__(self, "in_contact", (False,) * n)
        if len(self.base) != n:
            raise ValueError("one base coordinate per finger required")

    @property
    def finger_count(self) -> int:
        return len(self.normals)

    def penetration(self, i: int) -> float:
        nx, ny = self.normals[i]
        return self.base[i] - (nx * self.obj_pos[0] + ny * self.obj_pos[1])

    def normal_force(self, i: int) -> float:
        return self.obj.stiffness * max(0.0, self.penetration(i) - self.creep[i])

    def fingertip_pos(self, i: int) -> tuple[float, float]:
        nx, ny = self.normals[i]
        r = self.obj.radius
        s, u = self.base[i], self.tangential[i]
        # anchor on the undisplaced object surface, then normal advance and tangential offset
        return (-r * nx + s * nx - u * ny, -r * ny + s * ny + u * nx)


def make_world(obj: ObjectSpec, finger_count: int | None = None, *,
               normals: Sequence[tuple[float, float]] | None = None,
               gap: float = 0.001, **kw) -> World:
    normals = tuple(tuple(map(float, n)) for n in (normals or layout(finger_count)))
    return World(obj=obj, normals=normals, base=(-gap,) * len(normals), **kw)


def _solve_lateral(world: World, base, creep, y: float, fx: float) -> tuple[float, float]:
    """Object x at which finger springs and ``fx`` balance.

    Returns (x, net residual); the residual is nonzero only when no balance
    exists (all contacts on one side), in which case x is left unchanged.
    """
    k = world.obj.stiffness
    x0 = world.obj_pos[0]
    terms = []  # (nx, a) with contact force k*max(0, a - nx*x)
    for (nx, ny), s, z in zip(world.normals, base, creep):
        if nx != 0.0:
            terms.append((nx, s - ny * y - z))

    def g(x):
        total = fx
        for nx, a in terms:
            p = a - nx * x
            if p > 0:
                total += k * p * nx
        return total

    def slope(x, side):
        # slope of g just left (side=-1) or right (side=+1) of x
        sl = 0.0
        for nx, a in terms:
            b = a / nx
            if (nx > 0 and (x < b or (x == b and side < 0))) or (nx < 0 and (x > b or (x == b and side > 0))):
                sl -= k * nx * nx
        return sl

    if not terms:
        return x0, fx
    g0 = g(x0)
    if g0 == 0.0:
        return x0, 0.0
    bps = sorted({a / nx for nx, a in terms})
    vals = [g(b) for b in bps]
    if vals[0] < 0:
        sl = slope(bps[0], -1)
        if sl == 0.0:
            return x0, g0
        return bps[0] - vals[0] / sl, 0.0
    if vals[-1] > 0:
        sl = slope(bps[-1], +1)
        if sl == 0.0:
            return x0, g0
        return bps[-1] - vals[-1] / sl, 0.0
    for b0, b1, v0, v1 in zip(bps, bps[1:], vals, vals[1:]):
        if v0 >= 0 >= v1:
            if v0 == v1:  # flat zero band: stay put if inside it
                return min(max(x0, b0), b1), 0.0
            return b0 + (b1 - b0) * v0 / (v0 - v1), 0.0
    # a single breakpoint with vals[0] == 0
    return bps[0], 0.0


def step(world: World, commands: Sequence[float], dt: float, *,
         external: tuple[float, float] = (0.0, 0.0),
         tangential_commands: Sequence[float] | None = None,
         ) -> tuple[World, list[ContactState], tuple[float, float]]:
    """Advance the world by ``dt``.

    ``commands`` are finger base speeds along each contact normal (m/s);
    ``tangential_commands`` move finger bases along their tangents and only
    matter for a fixed object. ``external`` is a disturbance force on the object.
    Returns the new world, per-finger contact state and the object displacement
    from its initial pose.
    """
    n = world.finger_count
    obj = world.obj
    k, mu = obj.stiffness, obj.friction_mu
    base = [s + v * dt for s, v in zip(world.base, commands)]
    if tangential_commands is None:
        tan_v = [0.0] * n
    else:
        tan_v = list(tangential_commands)
    tangential = [u + v * dt for u, v in zip(world.tangential, tan_v)]
    creep = list(world.creep)
    x, y = world.obj_pos
    wall_force = 0.0

    if world.fixed:
        x_res = 0.0
    elif world.wall:
        x_res = external[0]
        for (nx, ny), s, z in zip(world.normals, base, creep):
            p = s - nx * x - ny * y - z
            if p > 0:
                x_res += k * p * nx
        # the clamp pushes back on the object but never pulls it
        wall_force = max(0.0, x_res)
        x_res = min(0.0, x_res)
    else:
        x, x_res = _solve_lateral(world, base, creep, y, external[0])
    if x_res != 0.0:
        x += K_SLIDE * x_res * dt

    forces = []
    for (nx, ny), s, z in zip(world.normals, base, creep):
        p = s - nx * x - ny * y - z
        forces.append(k * p if p > 0 else 0.0)
    contact = [f > 0.0 for f in forces]

    skin = list(world.skin)
    slip = [0.0] * n
    tload = [0.0] * n
    vy = 0.0
    if world.fixed:
        for i in range(n):
            if not contact[i]:
                skin[i] = 0.0
                continue
            limit = mu * forces[i] / SKIN_STIFFNESS
            e = skin[i] + tan_v[i] * dt
            demand = SKIN_STIFFNESS * e
            if abs(e) > limit:
                skin[i] = math.copysign(limit, e)
                if tan_v[i] != 0.0:
                    slip[i] = abs(tan_v[i])
                    tload[i] = demand
                else:
                    tload[i] = SKIN_STIFFNESS * skin[i]
            else:
                skin[i] = e
                tload[i] = demand
    else:
        load = -obj.weight * world.gravity_scale + external[1]
        for (nx, ny), f in zip(world.normals, forces):
            load += f * ny
        capacity = mu * sum(forces) + world.wall_mu * wall_force
        if abs(load) > capacity:
            vy = math.copysign(K_SLIDE * (abs(load) - capacity), load)
            y += vy * dt
        for i in range(n):
            if contact[i]:
                tload[i] = load * (mu * forces[i]) / capacity
                slip[i] = abs(vy)

    # viscoelastic relaxation of each indentation; recovers when unloaded
    if math.isfinite(obj.relax_time):
        rate = dt / obj.relax_time
        for i, ((nx, ny), s) in enumerate(zip(world.normals, base)):
            p = s - nx * x - ny * y
            target = p if contact[i] else 0.0
            creep[i] += (target - creep[i]) * rate
            if creep[i] < 0.0:
                creep[i] = 0.0

    new = replace(world, base=tuple(base), tangential=tuple(tangential), skin=tuple(skin),
                  creep=tuple(creep), obj_pos=(x, y), in_contact=tuple(contact))
    states = [
        ContactState(finger_id=i, in_contact=contact[i], normal_force=forces[i], tangential_load=tload[i],
                     slip_speed=slip[i], fingertip_pos=new.fingertip_pos(i), contact_normal=world.normals[i])
        for i in range(n)
    ]
    return new, states, (x, y)


def min_stabilizing_force(obj: ObjectSpec, normals: Sequence[tuple[float, float]] | int,
                          load: float | None = None, *, clamp_mu: float = 0.0) -> float:
    """Smallest uniform per-finger normal force that keeps the object static.

    ``load`` is the tangential (y) load magnitude, the object's weight when
    omitted. A finger count means a symmetric grip, ``|load| / (n * mu)``.
    Explicit normals also count the normals' own push along the load axis.
    ``clamp_mu`` adds the friction of a position clamp opposite a single
    finger, which carries that finger's normal force.
    """
    mu = obj.friction_mu
    if mu <= 0:
        raise ValueError("no normal force holds an object with zero friction")
    load = obj.weight if load is None else load
    if load == 0:
        return 0.0
    if isinstance(normals, int):
        if normals < 1:
            raise ValueError("need at least one finger")
        n, tilt = normals, 0.0
    else:
        n, tilt = len(normals), sum(ny for _, ny in normals)
    # net y load with uniform force F: -|load| + tilt*F; need n*mu*F >= |that|
    lo = abs(load)
    cap = n * mu + clamp_mu
    if abs(tilt) < 1e-12:
        return lo / cap
    if cap + tilt <= 0:
        raise ValueError("layout cannot hold this load with uniform force")
    f = lo / (cap + tilt)
    if cap - tilt > 0:
        f = max(f, -lo / (cap - tilt))
    return f
