"""Any-angle planning and discrete motion on occupancy grids.

Planning runs on cell centers of an inflated occupancy grid. Line of
sight uses closed-cell semantics: a segment that merely touches a
blocked cell's boundary (corners included) is blocked, so any accepted
segment can be replayed without collision. Diagonal grid moves between
two free cells require both orthogonal neighbors free, which makes every
grid edge a valid sight segment too.

The planner is the lazy variant of the any-angle shortest-path family:
nodes optimistically inherit their parent's parent, and the sight check
is deferred to expansion time. When the deferred check fails the node is
repaired from its best closed grid neighbor and re-queued. A final
smoothing pass greedily merges collinear-visible waypoints.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .env_model import OccupancyGrid
from .geometry import wrap_angle, wrap_heading

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class MotionConfig:
    forward_step: float = 0.25
    turn_angle_deg: float = 10.0

    @property
    def turn_angle(self) -> float:
        return math.radians(self.turn_angle_deg)

    @property
    def arrival_radius(self) -> float:
        # Half a step is only reachable with perfect alignment; the
        # extra 0.1 absorbs heading quantization on the final approach.
        return 0.6 * self.forward_step


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float  # radians, [0, 2*pi), CCW from +x

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass
class WaypointPath:
    points: list[tuple[float, float]]
    length: float


class ControllerError(RuntimeError):
    """Raised when the waypoint follower livelocks."""


def line_of_sight(grid: OccupancyGrid, a, b) -> bool:
    """True iff the segment a-b touches no blocked cell (closed cells)."""
    return not _kernels.segment_blocked(
        grid.blocked_u8(), grid.origin[0], grid.origin[1], grid.resolution,
        float(a[0]), float(a[1]), float(b[0]), float(b[1]),
    )


class _Planner:
    """Shared machinery for point-to-point search and distance fields."""

    def __init__(self, grid: OccupancyGrid):
        self.grid = grid
        self.blocked = grid.blocked_u8()
        self.res = grid.resolution
        self.ox, self.oy = grid.origin
        self.h, self.w = self.blocked.shape

    def cell(self, xy) -> tuple[int, int]:
        return self.grid.cell_of(xy[0], xy[1])

    def center(self, c) -> tuple[float, float]:
        return self.grid.center_of(c[0], c[1])

    def free(self, c) -> bool:
        ix, iy = c
        return 0 <= ix < self.w and 0 <= iy < self.h and not self.blocked[iy, ix]

    def sight(self, a_xy, b_xy) -> bool:
        return not _kernels.segment_blocked(
            self.blocked, self.ox, self.oy, self.res,
            a_xy[0], a_xy[1], b_xy[0], b_xy[1],
        )

    def neighbors(self, c):
        ix, iy = c
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                n = (ix + dx, iy + dy)
                if not self.free(n):
                    continue
                if dx != 0 and dy != 0:
                    # no corner cutting: diagonal needs both orthogonals free
                    if not self.free((ix + dx, iy)) or not self.free((ix, iy + dy)):
                        continue
                    yield n, _SQRT2 * self.res
                else:
                    yield n, self.res

    def search(self, start_cell, goal_cell=None):
        """Any-angle relaxation from start_cell; stops early at goal_cell.

        Returns (g, parent) dicts keyed by cell. Deferred sight checks
        run at pop time; a repaired node re-enters the queue rather than
        expanding with a degraded cost.
        """
        start_xy = self.center(start_cell)
        if goal_cell is not None:
            gx, gy = self.center(goal_cell)

        def heur(c):
            if goal_cell is None:
                return 0.0
            cx, cy = self.center(c)
            return math.hypot(cx - gx, cy - gy)

        g = {start_cell: 0.0}
        parent = {start_cell: start_cell}
        closed: set = set()
        seq = 0
        pq = [(heur(start_cell), 0.0, seq, start_cell)]
        while pq:
            _, gpop, _, cur = heapq.heappop(pq)
            if cur in closed or gpop > g.get(cur, math.inf):
                continue
            # deferred sight validation
            par = parent[cur]
            if cur != start_cell and not self.sight(self.center(par), self.center(cur)):
                best, best_g = None, math.inf
                for n, step in self.neighbors(cur):
                    if n in closed and g[n] + step < best_g:
                        best, best_g = n, g[n] + step
                if best is None:
                    continue  # unreachable through validated space for now
                parent[cur] = best
                if best_g > g[cur] + 1e-15:
                    g[cur] = best_g
                    seq += 1
                    heapq.heappush(pq, (best_g + heur(cur), best_g, seq, cur))
                    continue
                g[cur] = best_g
            closed.add(cur)
            if goal_cell is not None and cur == goal_cell:
                return g, parent
            cur_xy = self.center(cur)
            par = parent[cur]
            par_xy = self.center(par)
            g_par = g[par]
            for n, step in self.neighbors(cur):
                if n in closed:
                    continue
                nx, ny = self.center(n)
                # path-2 rule: try to route via the current node's parent
                cand_g = g_par + math.hypot(nx - par_xy[0], ny - par_xy[1])
                cand_par = par
                via = g[cur] + step
                if via < cand_g:
                    cand_g, cand_par = via, cur
                if cand_g < g.get(n, math.inf):
                    g[n] = cand_g
                    parent[n] = cand_par
                    seq += 1
                    heapq.heappush(pq, (cand_g + heur(n), cand_g, seq, n))
        return g, parent


def _smooth(planner: _Planner, pts: list[tuple[float, float]]) -> list[tuple[float, float]]:
    if len(pts) <= 2:
        return pts
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not planner.sight(pts[i], pts[j]):
            j -= 1
        out.append(pts[j])
        i = j
    return out


def lazy_theta_star(grid: OccupancyGrid, start_xy, goal_xy) -> WaypointPath | None:
    """Any-angle path between world points, or None when unreachable.

    Endpoints are kept exact; intermediate waypoints are cell centers
    after smoothing. Every returned segment passes the closed-cell sight
    test.
    """
    planner = _Planner(grid)
    start_xy = (float(start_xy[0]), float(start_xy[1]))
    goal_xy = (float(goal_xy[0]), float(goal_xy[1]))
    sc, gc = planner.cell(start_xy), planner.cell(goal_xy)
    if not planner.free(sc) or not planner.free(gc):
        return None
    if sc == gc:
        pts = [start_xy, goal_xy]
        return WaypointPath(pts, math.dist(start_xy, goal_xy))
    g, parent = planner.search(sc, gc)
    if gc not in g or not math.isfinite(g[gc]):
        return None
    if gc not in parent:
        return None
    chain = [gc]
    while chain[-1] != sc:
        chain.append(parent[chain[-1]])
        if len(chain) > len(g) + 2:
            raise RuntimeError("parent cycle in search result")
    chain.reverse()
    pts = [start_xy] + [planner.center(c) for c in chain] + [goal_xy]
    # exact endpoints sit inside the first/last free cell, so the raw
    # chain is sight-valid end to end; smoothing only merges waypoints
    pts = _smooth(planner, pts)
    length = sum(math.dist(pts[i], pts[i + 1]) for i in range(len(pts) - 1))
    return WaypointPath(pts, length)


def geodesic_distance(grid: OccupancyGrid, a_xy, b_xy) -> float:
    """Symmetric any-angle distance between world points; inf if apart.

    Symmetry is enforced by planning from the canonically smaller
    endpoint regardless of argument order.
    """
    a = (float(a_xy[0]), float(a_xy[1]))
    b = (float(b_xy[0]), float(b_xy[1]))
    if b < a:
        a, b = b, a
    path = lazy_theta_star(grid, a, b)
    return math.inf if path is None else path.length


class DistanceField:
    """Any-angle distance from one target to every free cell center.

    One relaxation flood per target; lookups quantize the query point to
    its cell. All episode metrics against a fixed target should read the
    same field so comparisons are self-consistent.
    """

    def __init__(self, grid: OccupancyGrid, target_xy):
        planner = _Planner(grid)
        self.grid = grid
        self.target = (float(target_xy[0]), float(target_xy[1]))
        tc = planner.cell(self.target)
        self.values = np.full((planner.h, planner.w), np.inf)
        if planner.free(tc):
            g, _ = planner.search(tc, None)
            for (ix, iy), dist in g.items():
                self.values[iy, ix] = dist
        self._tc = tc

    def at(self, xy) -> float:
        ix, iy = self.grid.cell_of(float(xy[0]), float(xy[1]))
        if not self.grid.in_bounds(ix, iy):
            return math.inf
        return float(self.values[iy, ix])


def _sample_polyline(points, spacing: float):
    """Arc-length samples along a waypoint polyline, vertices included."""
    out = [points[0]]
    for i in range(len(points) - 1):
        (ax, ay), (bx, by) = points[i], points[i + 1]
        seg = math.hypot(bx - ax, by - ay)
        n = max(1, math.ceil(seg / spacing))
        for j in range(1, n + 1):
            t = j / n
            out.append((ax + t * (bx - ax), ay + t * (by - ay)))
    return out


def _dist(p, q) -> float:
    return math.hypot(q[0] - p[0], q[1] - p[1])


def follow_path(
    grid: OccupancyGrid,
    path: WaypointPath,
    start: AgentState,
    motion: MotionConfig | None = None,
    plan_grid: OccupancyGrid | None = None,
) -> tuple[str, list[AgentState]]:
    """Pursuit controller with a bounded lookahead carrot.

    The path is arc-sampled finely; each iteration advances the nearest
    on-path sample by greedy progression and steers at the farthest
    visible sample within two forward steps of it: turn until the
    bearing error is within half a turn step, then move forward when
    the step segment is collision free. The bounded lookahead keeps the
    agent on the polyline instead of cutting curve insides. Success is
    reaching within motion.arrival_radius of the final point.

    Discrete steps drift off the sight polyline by up to forward_step/2,
    and headings are quantized to the turn step, so paths that graze
    corners exactly can be unfollowable. Callers should plan on a grid
    inflated beyond the agent radius and pass it as plan_grid; step
    legality is always checked against grid (the true footprint), so the
    inflation becomes slack for the follower rather than a new wall to
    hug. Residual blocks trigger a dodge (probe up to six turn steps to
    either side for a free step that still closes on the target), then
    a re-plan on plan_grid from the current pose. A re-plan repeated
    from the same position, 4*(2*pi/turn_angle) consecutive actions
    without progress, or an exhausted action budget raise
    ControllerError.

    Returns the action string over {F, L, R} plus a terminal S, and
    every visited state (first entry is the start state; S repeats the
    final state).
    """
    motion = motion or MotionConfig()
    planner = _Planner(grid)
    goal = path.points[-1]
    spacing = min(grid.resolution, motion.forward_step / 4.0)
    samples = _sample_polyline(path.points, spacing)
    turns_per_rev = math.ceil(2.0 * math.pi / motion.turn_angle)
    budget = 200 + 12 * len(samples) + 10 * turns_per_rev
    states = [start]
    actions: list[str] = []
    state = start
    last_replan: tuple[float, float] | None = None

    def emit(act: str, new_state: AgentState):
        nonlocal state, stagnant, best_goal_d
        state = new_state
        actions.append(act)
        states.append(state)
        d = math.hypot(goal[0] - state.x, goal[1] - state.y)
        if d < best_goal_d - 1e-12:
            best_goal_d = d
            stagnant = 0
        else:
            stagnant += 1

    def try_step(heading: float):
        nx = state.x + motion.forward_step * math.cos(heading)
        ny = state.y + motion.forward_step * math.sin(heading)
        if planner.sight((state.x, state.y), (nx, ny)):
            return nx, ny
        return None

    def replan():
        nonlocal samples, base, last_replan, budget
        here = (state.x, state.y)
        if last_replan == here:
            raise ControllerError("no progress after re-planning")
        fresh = None
        if plan_grid is not None:
            fresh = lazy_theta_star(plan_grid, here, goal)
        if fresh is None:  # pose may sit inside the inflation band
            fresh = lazy_theta_star(grid, here, goal)
        if fresh is None:
            raise ControllerError("goal unreachable from current pose")
        last_replan = here
        samples = _sample_polyline(fresh.points, spacing)
        budget += 12 * len(samples)
        base = 0

    # A bounded carrot avoids pure pursuit's corner cutting: chasing the
    # farthest visible point pulls the agent to the inside of curves,
    # where step chords clip the very corners the path rounds.
    look = max(1, math.ceil(2.0 * motion.forward_step / spacing))
    base = 0  # path sample nearest the agent, by greedy progression
    stagnant = 0
    best_goal_d = math.hypot(goal[0] - state.x, goal[1] - state.y)
    while math.hypot(goal[0] - state.x, goal[1] - state.y) > motion.arrival_radius:
        if stagnant > 4 * turns_per_rev:
            raise ControllerError("no progress (goal distance stopped improving)")
        if len(actions) > budget:
            raise ControllerError("action budget exhausted (controller livelock)")
        pos = (state.x, state.y)
        while base + 1 < len(samples) and _dist(pos, samples[base + 1]) <= _dist(pos, samples[base]):
            base += 1
        # carrot: farthest visible sample within the lookahead window
        last = min(base + look, len(samples) - 1)
        carrot = -1
        for j in range(base, last + 1):
            if planner.sight(pos, samples[j]):
                carrot = j
        if carrot < 0:
            replan()  # drifted out of sight of the path; start over
            continue
        if _dist(pos, samples[carrot]) <= motion.forward_step / 2 and carrot < len(samples) - 1:
            # Pocket: everything visible is at hand yet the path goes
            # on. Aim past the kink even though it is still hidden and
            # let the dodge slide around; sight resumes on the far side.
            carrot = last
            while carrot + 1 < len(samples) and _dist(pos, samples[carrot]) < motion.forward_step:
                carrot += 1
        tx, ty = samples[carrot]
        here_d = _dist(pos, samples[carrot])
        err = wrap_angle(math.atan2(ty - state.y, tx - state.x) - state.heading)
        if abs(err) > motion.turn_angle / 2:
            turn = motion.turn_angle if err > 0 else -motion.turn_angle
            emit("L" if turn > 0 else "R", replace(state, heading=wrap_heading(state.heading + turn)))
            continue
        stepped = try_step(state.heading)
        if stepped is not None:
            emit("F", AgentState(stepped[0], stepped[1], state.heading))
            continue
        dodged = False
        for k in range(1, 7):
            for sign in (1.0, -1.0):
                h = wrap_heading(state.heading + sign * k * motion.turn_angle)
                cand = try_step(h)
                if cand is None or math.hypot(tx - cand[0], ty - cand[1]) >= here_d:
                    continue
                for _ in range(k):
                    emit(
                        "L" if sign > 0 else "R",
                        replace(state, heading=wrap_heading(state.heading + sign * motion.turn_angle)),
                    )
                emit("F", AgentState(cand[0], cand[1], state.heading))
                dodged = True
                break
            if dodged:
                break
        if not dodged:
            replan()
    emit("S", state)
    return "".join(actions), states
