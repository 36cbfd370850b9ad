"""Both endpoints in one process, joined by an in-memory socket pair."""

from __future__ import annotations

import threading
from dataclasses import replace

from .session import SessionConfig, SessionError, SessionResult, run_session
from .testbed import Scenario, Testbed
from .transport import transport_pair


def run_loopback(scenario: Scenario, config: SessionConfig, seed: int | None = None,
                 on_packet=None, record: dict | None = None) -> tuple[SessionResult, SessionResult]:
    """Run Alice and Bob on two threads; returns (alice, bob) results.

    ``record`` maps role to a list that receives that role's per-packet tags.
    """
    seed = config.seed if seed is None else seed
    config = replace(config, seed=seed, packet_duration=scenario.packet_duration, window=scenario.window,
                     scheme=scenario.scheme)
    bed = Testbed(scenario, seed)
    ta, tb = transport_pair()
    results: dict = {}
    errors: dict = {}

    def worker(role, tx):
        feed = bed.feed(role, shared=True)
        if record is not None and role in record:
            sink, inner = record[role], feed

            def feed(k):
                tags = inner(k)
                sink.append(tags)
                return tags
        try:
            results[role] = run_session(role, config, tx, feed, bed.channel_map, on_packet)
        except BaseException as exc:  # noqa: BLE001  re-raised below
            errors[role] = exc
            tx.close()

    threads = [threading.Thread(target=worker, args=("alice", ta), daemon=True),
               threading.Thread(target=worker, args=("bob", tb), daemon=True)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    ta.close()
    tb.close()
    for role in ("alice", "bob"):
        if role in errors:
            exc = errors[role]
            if isinstance(exc, SessionError) and len(errors) == 2:
                other = errors["bob" if role == "alice" else "alice"]
                if not isinstance(other, SessionError):
                    raise other
            raise exc
    return results["alice"], results["bob"]
