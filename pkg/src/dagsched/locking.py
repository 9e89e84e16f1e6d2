"""Hold/lock protocol on hierarchical resources.

A resource can be *locked* (exclusive) or *held* (one of its descendants is
locked).  Locking requires the resource to be free and unheld, and then
holds every ancestor walking the parent chain child-to-root; any failure
rolls back the holds acquired so far.  All four operations are safe under
concurrent callers from any thread.

Each resource carries a private mutex that serializes updates to its
``lock_flag``/``hold`` pair; the mutex is only ever held for a few plain
assignments, never across calls on another resource.
"""

from __future__ import annotations

from .graph import ProtocolError


def try_hold(res) -> bool:
    """Increment the hold counter unless the resource is locked.

    Returns False when the resource is currently locked; the hold counter
    is then left unchanged.
    """
    with res._mutex:
        if res.lock_flag:
            return False
        res.hold += 1
        return True


def release_hold(res) -> None:
    """Undo one successful try_hold."""
    with res._mutex:
        if res.hold <= 0:
            raise ProtocolError(f"hold underflow on resource {res.id}")
        res.hold -= 1


def try_lock(res) -> bool:
    """Attempt to lock a resource and hold all of its ancestors.

    Succeeds only if the lock flag could transition 0 -> 1 while the hold
    counter was zero, and every ancestor could be held.  On any failure all
    partial effects are rolled back and False is returned.
    """
    with res._mutex:
        if res.lock_flag or res.hold:
            return False
        res.lock_flag = 1
    up = res.parent
    while up is not None:
        if not try_hold(up):
            down = res.parent
            while down is not up:
                release_hold(down)
                down = down.parent
            with res._mutex:
                res.lock_flag = 0
            return False
        up = up.parent
    return True


def unlock(res) -> None:
    """Release a lock: clear the flag, then drop every ancestor hold."""
    with res._mutex:
        if not res.lock_flag:
            raise ProtocolError(f"resource {res.id} is not locked")
        res.lock_flag = 0
    up = res.parent
    while up is not None:
        release_hold(up)
        up = up.parent
