# coding=utf-8
# Copyright 2022 The corridor_opt Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Closed-loop run of the coordinated corridor.

Arrivals enter in clock order. Each admitted vehicle registers with the
coordinator, gets a schedule and an energy-optimal trajectory, and commits
both before the next vehicle registers. Playback then samples every committed
trajectory on a fixed step, feeding the safety monitor, the speed envelope and
the trajectory export.
"""

import dataclasses
import time
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from absl import logging
import gin
import numpy as np

from corridor_opt.analysis import metrics
from corridor_opt.planning import coordinator as coordinator_lib
from corridor_opt.planning import ocp
from corridor_opt.planning import scenario
from corridor_opt.planning import scheduler
from corridor_opt.sim import artifacts
from corridor_opt.sim import safety_monitor
from corridor_opt.sim import traffic_flow


@dataclasses.dataclass(frozen=True)
class SimConfig:
  playback_step: float = 0.01
  use_idle_time: bool = False
  rear_end_clearance: float = 0.5
  max_replans: int = 3
  trajectory_stride: int = 10
  export_trajectories: bool = False
  # Seconds an unplannable entry waits before it is planned again.
  infeasible_hold: float = 0.5

  def __post_init__(self):
    if not self.playback_step > 0:
      raise ValueError(f'playback step must be > 0: {self.playback_step}')
    if self.rear_end_clearance < 0:
      raise ValueError('rear-end clearance must be >= 0')
    if self.max_replans < 0:
      raise ValueError('max_replans must be >= 0')
    if self.trajectory_stride < 1:
      raise ValueError('trajectory stride must be >= 1')
    if not self.infeasible_hold > 0:
      raise ValueError(
          f'infeasible hold must be > 0: {self.infeasible_hold}')

  @property
  def hold_steps(self) -> int:
    return max(1, int(round(self.infeasible_hold / self.playback_step)))


@gin.configurable(module='sim')
def make_sim_config(playback_step: float = 0.01,
                    use_idle_time: bool = False,
                    rear_end_clearance: float = 0.5,
                    max_replans: int = 3,
                    trajectory_stride: int = 10,
                    export_trajectories: bool = False,
                    infeasible_hold: float = 0.5) -> SimConfig:
  return SimConfig(
      playback_step=playback_step,
      use_idle_time=use_idle_time,
      rear_end_clearance=rear_end_clearance,
      max_replans=max_replans,
      trajectory_stride=trajectory_stride,
      export_trajectories=export_trajectories,
      infeasible_hold=infeasible_hold)


@dataclasses.dataclass
class _Playback:
  """Precomputed grid samples of one committed vehicle."""
  path: scenario.PathSpec
  final_lane: int
  trajectory: ocp.TrajectoryArcs
  first_step: int
  p: np.ndarray
  v: np.ndarray
  u: np.ndarray

  @property
  def last_step(self) -> int:
    return self.first_step + len(self.p) - 1


@dataclasses.dataclass
class SimState:
  """Clock, live vehicles and the safety record of a run in progress."""
  step: float
  k: int = 0
  active: Dict[int, _Playback] = dataclasses.field(default_factory=dict)

  @property
  def clock(self) -> float:
    return self.k * self.step

  def live_states(self) -> Dict[int, Tuple[float, float, float]]:
    out = {}
    for vehicle_id, pb in self.active.items():
      i = self.k - pb.first_step
      if 0 <= i < len(pb.p):
        out[vehicle_id] = (float(pb.p[i]), float(pb.v[i]), float(pb.u[i]))
    return out


def braking_gap(v_follower: float, v_leader: float, u_min: float) -> float:
  """Extra distance a faster follower needs to shed its closing speed."""
  closing = v_follower * v_follower - v_leader * v_leader
  return max(0.0, closing) / (2.0 * abs(u_min))


def _grid_samples(traj: ocp.TrajectoryArcs, first_step: int, step: float):
  last_step = int(np.floor(traj.tf / step + 1e-9))
  ts = np.arange(first_step, last_step + 1) * step
  ts = np.clip(ts, traj.t0, traj.tf)
  return traj.evaluate_many(ts)


def _vehicle_metrics(vehicle_id: int, path: scenario.PathSpec, lane: int,
                     traj: ocp.TrajectoryArcs, first_step: int,
                     step: float) -> metrics.VehicleMetrics:
  last_step = int(np.floor(traj.tf / step + 1e-9))
  grid = np.arange(first_step, last_step + 1) * step
  ts = np.unique(
      np.concatenate([[traj.t0], np.clip(grid, traj.t0, traj.tf), [traj.tf]]))
  p, v, u = traj.evaluate_many(ts)
  return metrics.vehicle_metrics(vehicle_id, path.path_id, path.entry_lane,
                                 lane, ts, p, v, u)


def export_lane(path: scenario.PathSpec, final_lane: int, p: float,
                lane_change_zone_length: float) -> int:
  """Lane label of a sample: the entry lane until the end of L_c."""
  return path.entry_lane if p < lane_change_zone_length else final_lane


def speed_envelope_row(t: float, speeds: Sequence[float]) -> List[float]:
  return [t, len(speeds), min(speeds), float(np.mean(speeds)), max(speeds)]


class _OptimalRun:
  """Event loop of one coordinated run."""

  def __init__(self, corridor: scenario.Corridor,
               limits: scenario.VehicleLimits, config: SimConfig,
               run: artifacts.RunArtifacts):
    self._corridor = corridor
    self._limits = limits
    self._config = config
    self._run = run
    self._gap = ocp.apply_tracking_margin(limits)
    self._idle = (
        scheduler.idle_time(limits.epsilon, limits.v_min)
        if config.use_idle_time else 0.0)
    self._coordinator = coordinator_lib.Coordinator(corridor)
    self._monitor = safety_monitor.SafetyMonitor(corridor, self._gap)
    self.state = SimState(step=config.playback_step)
    # (path, lane) -> first step at which the stream may enter again
    self._held: Dict[Tuple[str, int], int] = {}
    self._envelope: List[List[float]] = []
    self._rows: Optional[List[tuple]] = (
        [] if config.export_trajectories else None)

  def _admissible(self, arrival: traffic_flow.Arrival) -> bool:
    for pb in self.state.active.values():
      if pb.path.path_id != arrival.path_id:
        continue
      p, v, _ = pb.trajectory.extrapolated_state(arrival.t0)
      needed = self._gap + braking_gap(arrival.v0, v, self._limits.u_min)
      if p < needed:
        return False
    return True

  def _floor_fn(self, context: scheduler.PlanningContext,
                extra: Mapping[int, float]) -> scheduler.FloorFn:
    occupancy = scenario.zone_occupancy_duration(
        context.v0, context.path.merging_zone_length)
    gap = self._gap + self._config.rear_end_clearance

    def floors(lane):
      leader = context.leaders.get(lane)
      rear = None
      if leader is not None and leader.trajectory is not None:
        rear = scheduler.rear_end_floors(context.path, leader.trajectory,
                                         occupancy, gap)
      return scheduler.merge_floors(rear, extra)

    return floors

  def _raised_floors(self, context: scheduler.PlanningContext,
                     plan: scheduler.SchedulePlan,
                     error: ocp.OcpInfeasibleError) -> Dict[int, float]:
    """Arrival floors for the next attempt after an infeasible solve.

    Too slow (v_min): later zones are reachable only by crawling, so earlier
    zones move up to a cruise between zones. Anything else: the first zone
    moves back by one occupancy slot, which delays every later zone too.
    """
    path = context.path
    if error.kind == ocp.ArcKind.V_MIN.value and len(path.zones) > 1:
      return scheduler.cruise_floors(path, plan, context.v0)
    first_zone = path.zones[0]
    return {first_zone: plan.arrivals[first_zone] + plan.occupancy[first_zone]}

  def _solve(self, vehicle_id: int, context: scheduler.PlanningContext):
    """Schedule and trajectory, or None when no re-plan helps."""
    extra: Dict[int, float] = {}
    for attempt in range(self._config.max_replans + 1):
      plan = scheduler.choose_lane(context, self._idle,
                                   self._floor_fn(context, extra))
      b = ocp.BoundaryData.from_schedule(context.path, plan, context.t0,
                                         context.v0)
      leader = context.leaders.get(plan.lane)
      try:
        traj = ocp.solve_constrained(
            b,
            self._limits,
            leader=leader.trajectory if leader else None,
            gap=self._gap,
            leader_id=leader.vehicle_id if leader else None)
        return plan, traj
      except ocp.OcpInfeasibleError as e:
        raised = scheduler.merge_floors(extra,
                                        self._raised_floors(context, plan, e))
        if attempt == self._config.max_replans or raised == extra:
          if len(self.state.active) == 0:
            raise
          logging.info('vehicle %d: no plan after %d re-plans, holding the '
                       'entry: %s', vehicle_id, attempt, e)
          return None
        extra = raised
        self._run.bump('replans')
        self._run.log_event(
            context.t0,
            'replan',
            vehicle_id,
            attempt=attempt + 1,
            floors={str(z): t for z, t in sorted(extra.items())},
            reason=str(e))
        logging.info('vehicle %d: re-planning (%s)', vehicle_id, e)
    raise AssertionError('unreachable')

  def _enter(self, arrival: traffic_flow.Arrival) -> bool:
    """Plans and commits one arrival; False when it has to wait."""
    start = time.perf_counter()
    path = self._corridor.path(arrival.path_id, arrival.lane)
    vehicle_id, _ = self._coordinator.register(arrival.v0, path, arrival.t0)
    t0 = arrival.t0
    context = self._coordinator.snapshot(vehicle_id, self._gap)
    solved = self._solve(vehicle_id, context)
    if solved is None:
      self._coordinator.withdraw(vehicle_id)
      return False
    plan, traj = solved
    self._coordinator.commit(vehicle_id, plan, traj)
    self._run.latencies[vehicle_id] = time.perf_counter() - start

    self._run.log_event(
        t0, 'register', vehicle_id, path_id=path.path_id, lane=arrival.lane,
        v0=arrival.v0)
    if plan.lane != path.entry_lane:
      self._run.log_event(
          t0, 'lane_change', vehicle_id, from_lane=path.entry_lane,
          to_lane=plan.lane)
    kinds = [a.kind.value for a in traj.arcs
             if a.kind != ocp.ArcKind.UNCONSTRAINED]
    if kinds:
      self._run.bump('constrained_arcs', len(kinds))
    self._run.log_event(
        t0, 'commit', vehicle_id, final_lane=plan.lane,
        arrivals={str(z): t for z, t in sorted(plan.arrivals.items())},
        exit_time=traj.tf, constrained_arcs=kinds)

    first_step = self.state.k
    p, v, u = _grid_samples(traj, first_step, self.state.step)
    self.state.active[vehicle_id] = _Playback(path, plan.lane, traj,
                                              first_step, p, v, u)
    self._run.vehicles.append(
        _vehicle_metrics(vehicle_id, path, plan.lane, traj, first_step,
                         self.state.step))
    return True

  def _exit_vehicles(self):
    for vehicle_id in sorted(self.state.active):
      pb = self.state.active[vehicle_id]
      if self.state.k > pb.last_step:
        self._coordinator.deregister(vehicle_id)
        del self.state.active[vehicle_id]
        self._run.log_event(pb.trajectory.tf, 'exit', vehicle_id)

  def _defer(self, queue: traffic_flow.EntryQueue, rank: int,
             arrival: traffic_flow.Arrival, steps: int, reason: str):
    if queue.defer(self.state.k, rank, arrival, steps):
      self._run.bump('deferred')
      self._run.log_event(
          arrival.t0, 'deferred', 0, path_id=arrival.path_id,
          lane=arrival.lane, rank=rank, reason=reason)

  def _admit(self, queue: traffic_flow.EntryQueue):
    blocked = set()
    for rank, arrival in queue.pop_due(self.state.k):
      stream = (arrival.path_id, arrival.lane)
      if rank not in queue.deferred_ranks:
        self._run.log_event(
            arrival.t0, 'arrival', 0, path_id=arrival.path_id,
            lane=arrival.lane, v0=arrival.v0, rank=rank)
      held = self._held.get(stream, -1) > self.state.k
      if stream in blocked or held or not self._admissible(arrival):
        blocked.add(stream)
        self._defer(queue, rank, arrival, 1, 'spacing')
        continue
      if not self._enter(arrival):
        blocked.add(stream)
        steps = self._config.hold_steps
        self._held[stream] = self.state.k + steps
        self._defer(queue, rank, arrival, steps, 'infeasible')

  def _playback(self):
    t = self.state.clock
    samples = []
    speeds = []
    stride = self.state.k % self._config.trajectory_stride == 0
    for vehicle_id, (p, v, u) in sorted(self.state.live_states().items()):
      pb = self.state.active[vehicle_id]
      samples.append(
          safety_monitor.Sample(vehicle_id, pb.path.path_id, pb.final_lane, p))
      speeds.append(v)
      if self._rows is not None and stride:
        lane = export_lane(pb.path, pb.final_lane, p,
                           self._corridor.lane_change_zone_length)
        self._rows.append((vehicle_id, round(t, 6), p, v, u, lane,
                           pb.path.zone_at(p)))
    if samples:
      self._monitor.check(t, samples)
      self._envelope.append(speed_envelope_row(t, speeds))

  def run(self, arrivals: Sequence[traffic_flow.Arrival],
          dump_path: Optional[str] = None):
    queue = traffic_flow.EntryQueue(arrivals, self.state.step)
    while len(queue) or self.state.active:
      if not self.state.active:
        self.state.k = max(self.state.k, queue.next_step())
      self._exit_vehicles()
      self._admit(queue)
      self._playback()
      logging.log_every_n_seconds(logging.INFO,
                                  't=%.2f active=%d waiting=%d', 10,
                                  self.state.clock, len(self.state.active),
                                  len(queue))
      self.state.k += 1
    self._monitor.raise_if_violated(dump_path)
    if self._envelope:
      self._run.envelope = np.array(self._envelope)
    self._run.trajectories = self._rows


def generate_demand(
    flow: traffic_flow.FlowSpec, corridor: scenario.Corridor,
    limits: scenario.VehicleLimits) -> List[traffic_flow.Arrival]:
  """Arrivals offered to both controllers, spaced by the tracked gap."""
  return traffic_flow.generate_arrivals(
      flow, corridor, limits, gap=ocp.apply_tracking_margin(limits))


def run_optimal(corridor: scenario.Corridor,
                limits: scenario.VehicleLimits,
                flow: traffic_flow.FlowSpec,
                config: Optional[SimConfig] = None,
                scenario_name: str = 'scenario',
                arrivals: Optional[Sequence[traffic_flow.Arrival]] = None,
                dump_path: Optional[str] = None) -> artifacts.RunArtifacts:
  """Runs the coordinated corridor for one flow.

  Args:
    corridor: the geometry.
    limits: vehicle limits.
    flow: demand; ignored for generation when `arrivals` is given.
    config: playback and planning knobs; defaults to `make_sim_config()`.
    scenario_name: recorded in the artifacts.
    arrivals: explicit arrivals instead of the generated ones.
    dump_path: where the monitor writes violations before raising.

  Returns:
    The run artifacts.

  Raises:
    safety_monitor.SafetyViolationError: when playback saw a violation.
    ocp.OcpInfeasibleError: when a vehicle stays infeasible after all
      re-plans.
  """
  config = config or make_sim_config()
  start = time.perf_counter()
  if arrivals is None:
    arrivals = generate_demand(flow, corridor, limits)
  run = artifacts.RunArtifacts(
      mode='optimal',
      scenario=scenario_name,
      volume=flow.volume,
      seed=flow.seed,
      corridor_fingerprint=corridor.fingerprint())
  _OptimalRun(corridor, limits, config, run).run(arrivals, dump_path)
  run.wall_time = time.perf_counter() - start
  logging.info(
      '%s optimal volume=%g seed=%d: %d vehicles, %d deferred, %d re-plans, '
      '%d constrained arcs, %.1f s', scenario_name, flow.volume, flow.seed,
      len(run.vehicles), run.counters.get('deferred', 0),
      run.counters.get('replans', 0), run.counters.get('constrained_arcs', 0),
      run.wall_time)
  return run
