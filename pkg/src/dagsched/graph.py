"""Task-graph construction: tasks, resources, wait counters, critical-path weights.

The scheduler owns every task and resource record.  Graph construction is
single-threaded; once a run starts, only the executor mutates the shared
counters (wait, hold, lock flags) through the synchronized paths in
:mod:`dagsched.locking` and :mod:`dagsched.executor`.
"""

from __future__ import annotations

import threading

TASK_FLAG_NONE = 0
TASK_FLAG_VIRTUAL = 1

#: Number of lock stripes used to serialize wait-counter updates.
_WAIT_STRIPES = 64

#: Default maximum payload size accepted by add_task, in bytes.
DEFAULT_MAX_PAYLOAD = 4096


class SchedulerError(RuntimeError):
    """Base class for scheduler errors."""


class IllegalStateError(SchedulerError):
    """An operation was called in a state that does not permit it."""


class ProtocolError(SchedulerError):
    """A caller violated the lock/hold or completion protocol."""


class CycleError(SchedulerError):
    """The unlock graph contains a directed cycle.

    ``task_id`` names one task that lies on a cycle.
    """

    def __init__(self, task_id: int):
        self.task_id = task_id
        super().__init__(f"task graph contains a cycle through task {task_id}")


class Task:
    """One node of the DAG.

    ``unlocks`` lists the ids of tasks that depend on this one (reverse
    dependency direction); ``locks`` and ``uses`` list resource ids.  The
    ``wait`` counter equals the number of unfinished tasks whose unlocks
    list contains this task.
    """

    __slots__ = (
        "id", "type", "flags", "payload", "unlocks", "locks", "uses",
        "wait", "cost", "weight",
        "_lock_objs", "_use_objs", "_done",
    )

    def __init__(self, tid: int, type_: int, flags: int, payload: bytes, cost: int):
        self.id = tid
        self.type = type_
        self.flags = flags
        self.payload = payload
        self.unlocks: list[int] = []
        self.locks: list[int] = []
        self.uses: list[int] = []
        self.wait = 0
        self.cost = cost
        self.weight = 0
        # Resolved at start(): resource objects in canonical (id-sorted) order.
        self._lock_objs: tuple = ()
        self._use_objs: tuple = ()
        self._done = False

    @property
    def is_virtual(self) -> bool:
        return bool(self.flags & TASK_FLAG_VIRTUAL)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Task(id={self.id}, type={self.type}, wait={self.wait}, weight={self.weight})"


class Resource:
    """A lockable unit of data, optionally nested under a parent resource.

    ``hold`` counts locked descendants; a resource with a nonzero hold
    counter cannot itself be locked.  ``owner`` is the queue index that
    last used the resource, or -1.  All mutations of ``lock_flag`` and
    ``hold`` go through the resource's ``_mutex`` (see dagsched.locking).
    """

    __slots__ = ("id", "parent", "lock_flag", "hold", "owner", "_mutex")

    def __init__(self, rid: int, parent: "Resource | None", owner: int):
        self.id = rid
        self.parent = parent
        self.lock_flag = 0
        self.hold = 0
        self.owner = owner
        self._mutex = threading.Lock()

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Resource(id={self.id}, lock={self.lock_flag}, hold={self.hold}, owner={self.owner})"


class Scheduler:
    """Container of tasks, resources and ready queues plus run configuration.

    Construction API (add_task/add_res/add_lock/add_use/add_unlock) must not
    be called while a run is in progress.  ``waiting`` counts tasks not yet
    completed during a run; a run terminates exactly when it reaches zero.
    """

    def __init__(
        self,
        nr_queues: int,
        *,
        idle_policy: str = "spin",
        reown: bool = False,
        rng_seed: int = 0,
        max_payload: int = DEFAULT_MAX_PAYLOAD,
    ):
        if nr_queues < 1:
            raise ValueError(f"nr_queues must be >= 1, got {nr_queues}")
        if idle_policy not in ("spin", "park"):
            raise ValueError(f"idle_policy must be 'spin' or 'park', got {idle_policy!r}")
        from .queues import TaskQueue  # deferred to keep module init order simple

        self.nr_queues = nr_queues
        self.idle_policy = idle_policy
        self.reown = reown
        self.rng_seed = rng_seed
        self.max_payload = max_payload

        self.tasks: list[Task] = []
        self.resources: list[Resource] = []
        self.queues = [TaskQueue() for _ in range(nr_queues)]
        self.waiting = 0

        self._running = False
        self._wait_locks = tuple(threading.Lock() for _ in range(_WAIT_STRIPES))
        # Condition guarding `waiting` updates and park-mode signaling.
        self._wake = threading.Condition()
        self._enqueue_epoch = 0
        self._parked = 0
        self._abort: BaseException | None = None

    # ------------------------------------------------------------------
    # construction API
    # ------------------------------------------------------------------

    def _check_not_running(self) -> None:
        if self._running:
            raise IllegalStateError("graph may not be modified while a run is in progress")

    def add_task(self, type_: int, flags: int = TASK_FLAG_NONE,
                 payload: bytes = b"", cost: int = 0) -> int:
        """Create a task and return its dense sequential id.

        The payload is copied into scheduler-owned storage at call time.
        """
        self._check_not_running()
        data = bytes(payload)
        if len(data) > self.max_payload:
            raise ValueError(
                f"payload of {len(data)} bytes exceeds maximum of {self.max_payload}")
        if cost < 0:
            raise ValueError(f"cost must be >= 0, got {cost}")
        tid = len(self.tasks)
        self.tasks.append(Task(tid, type_, flags, data, cost))
        return tid

    def add_res(self, owner: int | None = None, parent: int | None = None) -> int:
        """Create a resource, optionally nested under ``parent``."""
        self._check_not_running()
        if parent is not None and not (0 <= parent < len(self.resources)):
            raise ValueError(f"parent resource id {parent} does not exist")
        if owner is not None and not (0 <= owner < self.nr_queues):
            raise ValueError(f"owner queue index {owner} out of range")
        rid = len(self.resources)
        parent_obj = self.resources[parent] if parent is not None else None
        self.resources.append(Resource(rid, parent_obj, -1 if owner is None else owner))
        return rid

    def _check_task_res(self, t: int, r: int) -> Task:
        if not (0 <= t < len(self.tasks)):
            raise ValueError(f"task id {t} does not exist")
        if not (0 <= r < len(self.resources)):
            raise ValueError(f"resource id {r} does not exist")
        task = self.tasks[t]
        if task.is_virtual:
            raise ValueError(f"virtual task {t} cannot lock or use resources")
        return task

    def add_lock(self, t: int, r: int) -> None:
        """Require task ``t`` to hold an exclusive lock on resource ``r``."""
        self._check_not_running()
        task = self._check_task_res(t, r)
        if r in task.locks:
            raise ValueError(f"task {t} already locks resource {r}")
        task.locks.append(r)

    def add_use(self, t: int, r: int) -> None:
        """Mark resource ``r`` as used (not locked) by task ``t``.

        Uses never participate in conflict checking; they only bias queue
        selection at enqueue time.
        """
        self._check_not_running()
        task = self._check_task_res(t, r)
        if r in task.uses:
            raise ValueError(f"task {t} already uses resource {r}")
        task.uses.append(r)

    def add_unlock(self, ta: int, tb: int) -> None:
        """Make task ``tb`` depend on task ``ta``."""
        self._check_not_running()
        if ta == tb:
            raise ValueError(f"task {ta} cannot unlock itself")
        for t in (ta, tb):
            if not (0 <= t < len(self.tasks)):
                raise ValueError(f"task id {t} does not exist")
        self.tasks[ta].unlocks.append(tb)

    def reset(self) -> None:
        """Drop all tasks and resources, keeping the queues."""
        self._check_not_running()
        self.tasks.clear()
        self.resources.clear()
        for q in self.queues:
            q.clear()
        self.waiting = 0

    # ------------------------------------------------------------------
    # derived quantities
    # ------------------------------------------------------------------

    def compute_waits(self) -> None:
        """Set every task's wait counter to its in-degree in the unlock graph."""
        tasks = self.tasks
        for t in tasks:
            t.wait = 0
        for t in tasks:
            for tb in t.unlocks:
                tasks[tb].wait += 1

    def compute_weights(self) -> None:
        """Compute critical-path weights in O(tasks + edges).

        weight(t) = cost(t) + max over successors of their weight (0 when t
        has no successors).  Raises CycleError if the graph is cyclic.
        """
        tasks = self.tasks
        n = len(tasks)
        indeg = [0] * n
        for t in tasks:
            for tb in t.unlocks:
                indeg[tb] += 1
        order: list[int] = [t.id for t in tasks if indeg[t.id] == 0]
        head = 0
        while head < len(order):
            t = tasks[order[head]]
            head += 1
            for tb in t.unlocks:
                indeg[tb] -= 1
                if indeg[tb] == 0:
                    order.append(tb)
        if len(order) != n:
            raise CycleError(self._find_cycle_task(indeg))
        for tid in reversed(order):
            t = tasks[tid]
            w = 0
            for tb in t.unlocks:
                tw = tasks[tb].weight
                if tw > w:
                    w = tw
            t.weight = t.cost + w

    def _find_cycle_task(self, indeg: list[int]) -> int:
        # Every unresolved task has an unresolved predecessor; walking
        # predecessors inside that set must revisit a node, which then
        # provably lies on a cycle.
        unresolved = {i for i, d in enumerate(indeg) if d > 0}
        preds: dict[int, int] = {}
        for t in self.tasks:
            for tb in t.unlocks:
                if tb in unresolved and t.id in unresolved:
                    preds[tb] = t.id
        cur = next(iter(unresolved))
        seen = set()
        while cur not in seen:
            seen.add(cur)
            cur = preds[cur]
        return cur

    # ------------------------------------------------------------------
    # introspection
    # ------------------------------------------------------------------

    @property
    def task_count(self) -> int:
        return len(self.tasks)

    @property
    def res_count(self) -> int:
        return len(self.resources)

    def graph_stats(self) -> dict[str, int]:
        """Counts of tasks, dependencies, resources, locks and uses."""
        return {
            "tasks": len(self.tasks),
            "deps": sum(len(t.unlocks) for t in self.tasks),
            "resources": len(self.resources),
            "locks": sum(len(t.locks) for t in self.tasks),
            "uses": sum(len(t.uses) for t in self.tasks),
        }

    # ------------------------------------------------------------------
    # executor support
    # ------------------------------------------------------------------

    def _wait_dec(self, tid: int) -> int:
        """Atomically decrement a task's wait counter, returning the new value."""
        with self._wait_locks[tid & (_WAIT_STRIPES - 1)]:
            t = self.tasks[tid]
            t.wait -= 1
            return t.wait
