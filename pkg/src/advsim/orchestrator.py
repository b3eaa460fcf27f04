"""Lockstep co-simulation of the traffic, world, and V2X roles.

One master clock (owned by the V2X side's coordinator) drives three roles
through a barrier-synchronized tick protocol. Per tick k at time t = k * dt:

* ``traffic_driven``: the traffic role STEPs and its states lead; the world
  role receives a STATE_SYNC and overwrites its own actor copies.
* ``world_driven``: the traffic role still STEPs (it stays in lockstep either
  way), the world role STEPs its own driver and leads, and the traffic role
  is synced back to the world's states.

The world role raycasts its LiDAR after holding the tick's final states; the
V2X role then receives the states, emits CAMs on the emission cadence,
applies any communication attacks, and folds the batch into per-vehicle
local dynamic maps. Non-empty CAM batches are broadcast back to the other
roles as CAM_BATCH messages. The master never sends tick k+1 until every
role has ACKed tick k; the session state keeps an event log that makes this
ordering checkable.

Messages are ``TickMessage(kind, tick_index, payload)`` where payload is a
state list, a CAM list, or None; roles answer every message with an ACK
carrying their reply payload. Roles run either in-process (sequential) or on
worker threads exchanging messages over queues; both produce identical
output because all cross-role data flows through the same messages in the
same order.
"""

import dataclasses
import enum
import queue
import threading
from dataclasses import dataclass, field

import numpy as np

from .attacks import comm as comm_attacks
from .attacks import perception as perception_attacks
from .attacks.comm import LocalDynamicMap, apply_gps_spoof, emit_cams
from .dataset import DatasetWriter, FrameRecord, VehiclePose
from .geometry import rot2d
from .scene import VehicleState
from .world import KinematicTraffic, ground_truth_boxes, raycast_lidar, sensor_pose

ROLE_NAMES = ("traffic", "world", "v2x")


class MessageKind(enum.Enum):
    STEP = "STEP"
    STATE_SYNC = "STATE_SYNC"
    CAM_BATCH = "CAM_BATCH"
    ACK = "ACK"
    SHUTDOWN = "SHUTDOWN"


@dataclass
class TickMessage:
    kind: MessageKind
    tick_index: int
    payload: object = None


class OrchestratorError(RuntimeError):
    pass


class StateSyncError(OrchestratorError):
    pass


class RoleTimeoutError(OrchestratorError):
    def __init__(self, role: str, tick_index: int, timeout_s: float):
        super().__init__(
            f"role {role!r} missed the barrier for tick {tick_index} "
            f"({timeout_s:.1f}s timeout)"
        )
        self.role = role
        self.tick_index = tick_index


class RoleCrashError(OrchestratorError):
    def __init__(self, role: str, tick_index: int):
        super().__init__(f"role {role!r} crashed at tick {tick_index}")
        self.role = role
        self.tick_index = tick_index


def sync_states(leader_states, follower_states):
    """Overwrite the follower's states with the leader's.

    Both lists must cover the same vehicle ids; the synced list comes back in
    leader order as independent copies.
    """
    leader_ids = {s.id for s in leader_states}
    follower_ids = {s.id for s in follower_states}
    if leader_ids != follower_ids:
        missing = sorted(leader_ids - follower_ids)
        extra = sorted(follower_ids - leader_ids)
        raise StateSyncError(
            f"state id mismatch: follower missing {missing}, unexpected {extra}"
        )
    return [s.copy() for s in leader_states]


def _states_equal(a, b) -> bool:
    if len(a) != len(b):
        return False
    bb = {s.id: s for s in b}
    for s in a:
        o = bb.get(s.id)
        if o is None:
            return False
        if not np.array_equal(s.position, o.position):
            return False
        if s.yaw != o.yaw or s.speed != o.speed or s.dims != o.dims:
            return False
    return True


class _Role:
    """Common message dispatch; subclasses implement the kind handlers."""

    name = "role"

    def handle(self, msg: TickMessage) -> TickMessage:
        if msg.kind is MessageKind.STEP:
            payload = self.on_step(msg.tick_index)
        elif msg.kind is MessageKind.STATE_SYNC:
            payload = self.on_state_sync(msg.tick_index, msg.payload)
        elif msg.kind is MessageKind.CAM_BATCH:
            payload = self.on_cam_batch(msg.tick_index, msg.payload)
        elif msg.kind is MessageKind.SHUTDOWN:
            payload = None
        else:
            raise OrchestratorError(f"{self.name}: unexpected message kind {msg.kind}")
        return TickMessage(MessageKind.ACK, msg.tick_index, payload)

    def on_step(self, tick_index):
        raise OrchestratorError(f"{self.name} cannot STEP")

    def on_state_sync(self, tick_index, states):
        raise OrchestratorError(f"{self.name} cannot STATE_SYNC")

    def on_cam_batch(self, tick_index, cams):
        return None


class TrafficRole(_Role):
    """Owns the route-following traffic model."""

    name = "traffic"

    def __init__(self, config):
        self.dt = config.dt_s
        self.model = KinematicTraffic(config.vehicles)
        self.cam_batches = 0

    def on_step(self, tick_index):
        return self.model.step(self.dt)

    def on_state_sync(self, tick_index, states):
        synced = sync_states(states, self.model.states())
        self.model.overwrite(synced)
        return self.model.states()

    def on_cam_batch(self, tick_index, cams):
        self.cam_batches += 1
        return None


class WorldRole(_Role):
    """Holds its own actor copies, steps them when leading, and raycasts."""

    name = "world"

    def __init__(self, config):
        self.config = config
        self.dt = config.dt_s
        self.driver = KinematicTraffic(config.vehicles)
        self.ego_id = config.ego().id
        self.states = self.driver.states()
        self.scan = None
        self.gt_boxes = []
        self.cam_batches = 0
        self._rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, 0x11DA2])
        )

    def _sense(self):
        ego = next(s for s in self.states if s.id == self.ego_id)
        others = [s for s in self.states if s.id != self.ego_id]
        self.scan = raycast_lidar(ego, others, self.config.sensor, self._rng)
        self.gt_boxes = ground_truth_boxes(
            ego, others, self.config.sensor.range_m, self.config.sensor.mount_offset
        )

    def on_step(self, tick_index):
        # leading (world_driven): advance own model, then sense
        self.states = self.driver.step(self.dt)
        self._sense()
        return [s.copy() for s in self.states]

    def on_state_sync(self, tick_index, states):
        self.states = sync_states(states, self.states)
        self._sense()
        return [s.copy() for s in self.states]

    def on_cam_batch(self, tick_index, cams):
        self.cam_batches += 1
        return None


class V2XRole(_Role):
    """Emits CAMs, applies communication attacks, and keeps the LDMs."""

    name = "v2x"

    def __init__(self, config):
        self.config = config
        self.comm = config.comm
        self.ego_id = config.ego().id
        attackers = config.attackers()
        self.attacker_id = attackers[0].id if attackers else None
        self.clean_ldms = {v.id: LocalDynamicMap(v.id, self.comm.ldm_history) for v in config.vehicles}
        self.adv_ldms = {v.id: LocalDynamicMap(v.id, self.comm.ldm_history) for v in config.vehicles}
        self.clean_cams = []
        self.adv_cams = []

    def on_state_sync(self, tick_index, states):
        t = tick_index * self.config.dt_s
        self.clean_cams = emit_cams(states, t, self.comm)
        self.adv_cams = [cam.copy() for cam in self.clean_cams]
        if self.clean_cams:
            self._attack_batch(states, t)
            by_id = {s.id: s for s in states}
            for vid, ldm in self.clean_ldms.items():
                comm_attacks.update_ldm(ldm, self.clean_cams, by_id[vid], self.comm)
            for vid, ldm in self.adv_ldms.items():
                comm_attacks.update_ldm(ldm, self.adv_cams, by_id[vid], self.comm)
        return [cam.copy() for cam in self.adv_cams]

    def _attack_batch(self, states, t):
        # self-report spoofing first (it alters the emission itself), then
        # the network-level attacks in configured order
        cams = self.adv_cams
        for spec in self.config.comm_attacks():
            if spec.type != "gps_spoof":
                continue
            for cam in cams:
                if cam.station_id == self.ego_id:
                    cam.position, _ = apply_gps_spoof(
                        cam.position, cam.heading, spec.params, t
                    )
        for spec in self.config.comm_attacks():
            if spec.type == "rba":
                cams = comm_attacks.apply_rba(cams, spec.params)
            elif spec.type == "paa":
                cams = comm_attacks.apply_paa(cams, spec.params)
            elif spec.type == "sybil":
                attacker = next(s for s in states if s.id == self.attacker_id)
                cams = comm_attacks.apply_sybil(cams, spec.params, attacker, t)
        self.adv_cams = cams

    def ldm_snapshots(self, adversarial: bool):
        source = self.adv_ldms if adversarial else self.clean_ldms
        return {vid: source[vid].snapshot() for vid in sorted(source)}


class _DirectChannel:
    """Same-thread channel: send() runs the role handler immediately."""

    def __init__(self, role):
        self.role = role
        self._reply = None

    def send(self, msg):
        self._reply = self.role.handle(msg)

    def recv(self, timeout_s):
        reply, self._reply = self._reply, None
        return reply

    def close(self):
        pass


class _ThreadChannel:
    """Queue-pair channel with the role running on a worker thread."""

    def __init__(self, role):
        self.role = role
        self.inbox = queue.Queue()
        self.outbox = queue.Queue()
        self.thread = threading.Thread(target=self._loop, name=f"role-{role.name}", daemon=True)
        self.thread.start()

    def _loop(self):
        while True:
            msg = self.inbox.get()
            try:
                reply = self.role.handle(msg)
            except Exception as exc:  # surfaced to the master as a crash
                self.outbox.put(("crash", exc, msg.tick_index))
                return
            self.outbox.put(("ok", reply, msg.tick_index))
            if msg.kind is MessageKind.SHUTDOWN:
                return

    def send(self, msg):
        self.inbox.put(msg)

    def recv(self, timeout_s):
        try:
            status, value, tick = self.outbox.get(timeout=timeout_s)
        except queue.Empty:
            raise RoleTimeoutError(self.role.name, -1, timeout_s) from None
        if status == "crash":
            raise RoleCrashError(self.role.name, tick) from value
        return value

    def close(self):
        self.thread.join(timeout=1.0)


@dataclass
class SessionState:
    """Bookkeeping the invariant tests inspect."""

    registered_roles: set = field(default_factory=set)
    current_tick: int = -1
    completed_ticks: int = 0
    log: list = field(default_factory=list)     # (seq, event, role, kind, tick)

    def record(self, event: str, role: str, kind: MessageKind, tick: int):
        self.log.append((len(self.log), event, role, kind.value, tick))


@dataclass
class SessionResult:
    ticks: int
    frame_counts: dict
    streams: tuple
    state: SessionState
    records: dict | None = None


class Session:
    """Master clock: builds the roles, runs the tick loop, emits frames."""

    def __init__(self, config, execution=None, barrier_timeout_s=10.0):
        self.config = config
        self.execution = execution or config.execution
        if self.execution not in ("sequential", "threaded"):
            raise OrchestratorError(f"unknown execution mode {self.execution!r}")
        self.barrier_timeout_s = barrier_timeout_s
        self.state = SessionState()
        self.roles = {
            "traffic": TrafficRole(config),
            "world": WorldRole(config),
            "v2x": V2XRole(config),
        }
        channel_cls = _DirectChannel if self.execution == "sequential" else _ThreadChannel
        self.channels = {name: channel_cls(role) for name, role in self.roles.items()}
        self.state.registered_roles = set(self.roles)
        ego = config.ego()
        self.ego_id = ego.id
        self._perception = [
            (spec.type, spec.params) for spec in config.perception_attacks()
        ]
        self._gps_specs = [s.params for s in config.comm_attacks() if s.type == "gps_spoof"]

    def _exchange(self, role: str, msg: TickMessage) -> TickMessage:
        self.state.record("send", role, msg.kind, msg.tick_index)
        self.channels[role].send(msg)
        try:
            reply = self.channels[role].recv(self.barrier_timeout_s)
        except RoleTimeoutError:
            raise RoleTimeoutError(role, msg.tick_index, self.barrier_timeout_s) from None
        if reply is None or reply.kind is not MessageKind.ACK:
            raise OrchestratorError(f"role {role!r} replied {reply!r} instead of ACK")
        if reply.tick_index != msg.tick_index:
            raise OrchestratorError(
                f"role {role!r} ACKed tick {reply.tick_index} during tick {msg.tick_index}"
            )
        self.state.record("recv", role, reply.kind, reply.tick_index)
        return reply

    def _reported_ego_pose(self, ego_state, t):
        position, yaw = ego_state.position, ego_state.yaw
        for params in self._gps_specs:
            position, yaw = apply_gps_spoof(position, yaw, params, t)
        return position, yaw

    def _ego_to_world(self, ego_state, t) -> np.ndarray:
        position, yaw = self._reported_ego_pose(ego_state, t)
        reported = VehicleState(ego_state.id, position, yaw, ego_state.speed, ego_state.dims)
        origin = sensor_pose(reported, self.config.sensor.mount_offset)
        mat = np.eye(4)
        mat[:2, :2] = rot2d(yaw)
        mat[:3, 3] = origin
        return mat

    def _attacked_cloud(self, tick_index, cloud, gt_boxes):
        for attack_index, (kind, params) in enumerate(self._perception):
            seed = derive_seed(self.config.seed, params.seed, attack_index, tick_index)
            params = dataclasses.replace(params, seed=seed)
            if kind == "perturb":
                result = perception_attacks.perturb_attack(
                    self.config.detector, cloud, gt_boxes, params
                )
            elif kind == "detach":
                result = perception_attacks.detach_attack(
                    self.config.detector, cloud, gt_boxes, params
                )
            else:
                result = perception_attacks.attach_attack(
                    self.config.detector, cloud, gt_boxes, params
                )
            cloud = result.cloud
        return cloud

    def run(self, sinks=()) -> SessionResult:
        if self.state.registered_roles != set(ROLE_NAMES):
            raise OrchestratorError(
                f"all roles must be registered before the first STEP, "
                f"have {sorted(self.state.registered_roles)}"
            )
        config = self.config
        ticks = config.ticks
        has_attacks = bool(config.attacks)
        if has_attacks:
            streams = ("clean", "adv") if config.paired_export else ("adv",)
        else:
            streams = ("clean",)
        counts = {s: 0 for s in streams}
        records = {s: [] for s in streams}
        world = self.roles["world"]
        v2x = self.roles["v2x"]
        try:
            for k in range(ticks):
                self.state.current_tick = k
                t = k * config.dt_s
                if config.mode == "traffic_driven":
                    lead = self._exchange("traffic", TickMessage(MessageKind.STEP, k)).payload
                    follow = self._exchange(
                        "world", TickMessage(MessageKind.STATE_SYNC, k, lead)
                    ).payload
                else:
                    self._exchange("traffic", TickMessage(MessageKind.STEP, k))
                    lead = self._exchange("world", TickMessage(MessageKind.STEP, k)).payload
                    follow = self._exchange(
                        "traffic", TickMessage(MessageKind.STATE_SYNC, k, lead)
                    ).payload
                if not _states_equal(lead, follow):
                    raise StateSyncError(f"leader and follower states diverged at tick {k}")
                cams = self._exchange(
                    "v2x", TickMessage(MessageKind.STATE_SYNC, k, lead)
                ).payload
                if cams:
                    self._exchange("traffic", TickMessage(MessageKind.CAM_BATCH, k, cams))
                    self._exchange("world", TickMessage(MessageKind.CAM_BATCH, k, cams))

                ego_state = next(s for s in lead if s.id == self.ego_id)
                poses = [VehiclePose(s.id, s.position, s.yaw, s.velocity()) for s in lead]
                gt = world.gt_boxes
                ldms_on = config.comm.enabled
                if "clean" in streams:
                    clean = FrameRecord(
                        tick_index=k,
                        sim_time_s=t,
                        cloud=world.scan.points,
                        gt_boxes=gt,
                        vehicle_states=poses,
                        cams_emitted=v2x.clean_cams,
                        ego_to_world=self._true_ego_to_world(ego_state),
                        ldms=v2x.ldm_snapshots(adversarial=False) if ldms_on else None,
                    )
                    self._emit(sinks, records, counts, "clean", clean)
                if "adv" in streams:
                    adv = FrameRecord(
                        tick_index=k,
                        sim_time_s=t,
                        cloud=self._attacked_cloud(k, world.scan.points, gt),
                        gt_boxes=gt,
                        vehicle_states=poses,
                        cams_emitted=v2x.adv_cams,
                        ego_to_world=self._ego_to_world(ego_state, t),
                        ldms=v2x.ldm_snapshots(adversarial=True) if ldms_on else None,
                    )
                    self._emit(sinks, records, counts, "adv", adv)
                self.state.completed_ticks = k + 1
        finally:
            shutdown_wait = min(self.barrier_timeout_s, 1.0)
            for name in ROLE_NAMES:
                try:
                    self.channels[name].send(TickMessage(MessageKind.SHUTDOWN, self.state.current_tick))
                    self.channels[name].recv(shutdown_wait)
                except OrchestratorError:
                    pass
                self.channels[name].close()
        return SessionResult(
            ticks=ticks,
            frame_counts=counts,
            streams=streams,
            state=self.state,
            records=records,
        )

    def _true_ego_to_world(self, ego_state) -> np.ndarray:
        origin = sensor_pose(ego_state, self.config.sensor.mount_offset)
        mat = np.eye(4)
        mat[:2, :2] = rot2d(ego_state.yaw)
        mat[:3, 3] = origin
        return mat

    @staticmethod
    def _emit(sinks, records, counts, stream, record):
        records[stream].append(record)
        counts[stream] += 1
        for sink in sinks:
            accept = getattr(sink, "accept", sink)
            accept(stream, record)


def derive_seed(config_seed: int, param_seed: int, attack_index: int, tick_index: int) -> int:
    """Stable per-tick seed for an attack instance."""
    ss = np.random.SeedSequence([config_seed, param_seed, attack_index, tick_index])
    return int(ss.generate_state(1, np.uint64)[0])


def run_session(config, out_dir=None, execution=None, collect=False,
                barrier_timeout_s=10.0, extra_metadata=None) -> SessionResult:
    """Run a full scenario, optionally exporting the dataset under out_dir."""
    session = Session(config, execution=execution, barrier_timeout_s=barrier_timeout_s)
    sinks = []
    writer = None
    if out_dir is not None:
        writer = DatasetWriter(out_dir)
        sinks.append(writer)
    result = session.run(sinks)
    if writer is not None:
        metadata = {"config": config.to_dict(), "streams": sorted(result.streams),
                    "ticks": result.ticks}
        if extra_metadata:
            metadata.update(extra_metadata)
        writer.finalize(metadata)
    if not collect:
        result.records = None
    return result
