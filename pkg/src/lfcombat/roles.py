"""Leader/follower partition of a team."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import ConfigError


@dataclass
class RoleAssignment:
    role: dict[int, str] = field(default_factory=dict)  # uid -> "leader" | "follower"
    group: dict[int, int] = field(default_factory=dict)  # uid -> group index
    leader: dict[int, int] = field(default_factory=dict)  # group index -> leader uid

    def leader_of(self, uid: int) -> int:
        return self.leader[self.group[uid]]

    def members(self, group: int) -> list[int]:
        return sorted(u for u, g in self.group.items() if g == group)


def assign_roles(roster: Sequence[int], group_size: int = 3) -> RoleAssignment:
    """Partition ``roster`` (sorted by id) into consecutive groups; first id leads."""
    ids = sorted(roster)
    if group_size < 1 or len(ids) % group_size:
        raise ConfigError(f"team size {len(ids)} is not divisible by group size {group_size}")
    ra = RoleAssignment()
    for gi in range(len(ids) // group_size):
        members = ids[gi * group_size:(gi + 1) * group_size]
        ra.leader[gi] = members[0]
        for uid in members:
            ra.group[uid] = gi
            ra.role[uid] = "leader" if uid == members[0] else "follower"
    return ra


def promote(ra: RoleAssignment, alive: Mapping[int, bool]) -> list[int]:
    """Replace dead group leaders by their lowest-id alive follower, in place.

    Returns the uids that were promoted.
    """
    promoted = []
    for gi, lid in sorted(ra.leader.items()):
        if alive.get(lid, False):
            continue
        survivors = [u for u in ra.members(gi) if alive.get(u, False)]
        if not survivors:
            continue
        new = survivors[0]
        ra.role[lid] = "follower"
        ra.role[new] = "leader"
        ra.leader[gi] = new
        promoted.append(new)
    return promoted
