"""Synthetic two-host audit logs with a planted attack chain.

Each scenario mixes background activity on two hosts (web and ssh servers
taking client connections, cron jobs reading libraries and shuffling files,
temp-file writers) with one multi-step attack.  The manifest records which
events belong to the attack, which of them lie upstream of each anchor event
(the ones an investigation must recover), and which entry nodes were planted.

Background arrivals are Poisson per activity type; client traffic comes in
bursts of closely spaced messages so edge merging has something to do.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import catalog
from .model import EntityKey, Kind, default_attrs

SECOND = 1_000_000_000
MS = 1_000_000
US = 1_000

HOST1_IP = "192.168.1.131"
HOST2_IP = "192.168.1.128"
ATTACKER_IP = "203.0.113.66"

# anchor event ids used by the reference queries
ANCHOR_A = 15035
ANCHOR_B = 100005

# cutoffs of the reference two-host query; every scenario is placed so its
# attack finishes just before them
CUTOFF_A = 1724731846719889370
CUTOFF_B = 1724731846712161377

LIBS = (
    "/lib/x86_64-linux-gnu/libc.so.6",
    "/lib64/ld-linux-x86-64.so.2",
    "/lib/x86_64-linux-gnu/libpthread.so.0",
    "/lib/x86_64-linux-gnu/libssl.so.3",
)
JOB_NAMES = ("logrotate", "updatedb", "backup", "apt-check", "tmpwatch", "indexer", "rsync", "python3")
SCENARIOS = ("password_crack", "data_leakage", "vpn_filter")


@dataclass
class _Ev:
    src: EntityKey
    dst: EntityKey
    op: str
    start: int
    end: int
    amount: int
    host: str
    tag: str = ""
    seq: int = 0


@dataclass
class Scenario:
    name: str
    seed: int
    scale: int
    records: list
    manifest: dict
    query: str
    weight_query: str

    def lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True) for r in self.records]

    @property
    def critical_ids(self) -> set:
        return set(self.manifest["critical_events"])


class _Builder:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.entities: dict = {}
        self.events: list = []
        self.pids = {"1": 1000, "2": 1000}
        self.ports = {"1": 30000, "2": 30000}
        self._seq = 0

    # --- entities ---------------------------------------------------------------------

    def file(self, host: str, path: str) -> EntityKey:
        key = EntityKey.file(host, path)
        self.entities.setdefault(key, default_attrs(key))
        return key

    def proc(self, host: str, name: str, pid: Optional[int] = None) -> EntityKey:
        if pid is None:
            self.pids[host] += int(self.rng.integers(1, 7))
            pid = self.pids[host]
        key = EntityKey.process(host, pid, name)
        self.entities.setdefault(key, default_attrs(key))
        return key

    def conn(self, host: str, src_ip: str, dst_ip: str, dst_port: int, src_port: Optional[int] = None) -> EntityKey:
        if src_port is None:
            self.ports[host] += int(self.rng.integers(1, 40))
            src_port = self.ports[host]
        key = EntityKey.network(host, src_ip, src_port, dst_ip, dst_port)
        self.entities.setdefault(key, default_attrs(key))
        return key

    # --- events -----------------------------------------------------------------------

    def add(self, src, dst, op, start, amount=0, dur=None, tag="") -> _Ev:
        if dur is None:
            dur = int(self.rng.integers(2 * US, 400 * US))
        self._seq += 1
        ev = _Ev(src, dst, op, int(start), int(start) + int(dur), int(amount), src.host, tag, self._seq)
        self.events.append(ev)
        return ev

    def burst(self, src, dst, op, start, n, amount_fn, gap=(1 * MS, 40 * MS), tag="") -> int:
        t = start
        for _ in range(n):
            self.add(src, dst, op, t, amount_fn(), tag=tag)
            t += int(self.rng.integers(*gap))
        return t

    def count(self, host: str) -> int:
        return sum(1 for e in self.events if e.host == host)


def _noise(b: _Builder, host: str, budget: int, t0: int, t1: int, web: bool) -> None:
    """Background activity on one host until ``budget`` events exist for it."""
    rng = b.rng
    ip = HOST1_IP if host == "1" else HOST2_IP
    libs = [b.file(host, p) for p in LIBS]
    pages = [b.file(host, f"/var/www/html/page{i}.html") for i in range(300)]
    docs = [b.file(host, f"/home/fs/doc{i:03d}") for i in range(120)]
    cron = b.proc(host, "cron", 300)
    sshd = b.proc(host, "sshd", 650)
    web_srv = b.proc(host, "apache2" if host == "1" else "nginx", 800)
    crontab = b.file(host, "/etc/crontab")
    passwd = b.file(host, "/etc/passwd")
    hosts = b.file(host, "/etc/hosts")
    known = b.file(host, "/root/.ssh/known_hosts")
    access = b.file(host, "/var/log/access.log")
    auth = b.file(host, "/var/log/auth.log")
    for lib in libs[:2]:
        for srv in (cron, sshd, web_srv):
            b.add(lib, srv, "read", t0 - 30 * SECOND, 4096)
    b.add(crontab, cron, "read", t0 - 20 * SECOND, 722)

    span = t1 - t0
    # relative Poisson rates of the activity types
    kinds = ("web", "ssh", "job", "shuffle", "tmp") if web else ("ssh", "job", "shuffle", "tmp", "web")
    rates = np.array([5.0, 2.0, 2.0, 1.5, 1.0])
    rates = rates / rates.sum()

    def web_request(t):
        client = b.conn(host, f"10.{rng.integers(0, 4)}.{rng.integers(0, 255)}.{rng.integers(1, 255)}", ip, 80,
                        int(rng.integers(1024, 65000)))
        t = b.burst(client, web_srv, "recvmsg", t, int(rng.integers(1, 5)), lambda: int(rng.integers(200, 1400)))
        b.add(pages[int(rng.integers(len(pages)))], web_srv, "read", t, int(rng.integers(500, 9000)))
        b.add(web_srv, client, "sendmsg", t + MS, int(rng.integers(500, 9000)))
        b.add(web_srv, access, "write", t + 2 * MS, int(rng.integers(80, 200)))

    def ssh_session(t):
        client = b.conn(host, f"10.9.{rng.integers(0, 255)}.{rng.integers(1, 255)}", ip, 22,
                        int(rng.integers(1024, 65000)))
        t = b.burst(client, sshd, "recvmsg", t, int(rng.integers(1, 4)), lambda: int(rng.integers(40, 600)))
        child = b.proc(host, "sshd")
        b.add(sshd, child, "clone", t + MS, dur=10 * US)
        b.add(libs[0], child, "read", t + 2 * MS, 4096)
        b.add(passwd, child, "read", t + 3 * MS, 2900)
        b.add(child, auth, "write", t + 4 * MS, int(rng.integers(60, 160)))
        if rng.random() < 0.3:
            b.add(child, known, "write", t + 5 * MS, 444)

    def job(t):
        name = JOB_NAMES[int(rng.integers(len(JOB_NAMES)))]
        p = b.proc(host, name)
        b.add(cron, p, "clone", t, dur=10 * US)
        for lib in rng.choice(len(libs), size=int(rng.integers(1, 4)), replace=False):
            b.add(libs[int(lib)], p, "read", t + MS, 4096)
        if rng.random() < 0.4:
            b.add(hosts if rng.random() < 0.5 else passwd, p, "read", t + 2 * MS, 300)
        for j in range(int(rng.integers(1, 4))):
            b.add(docs[int(rng.integers(len(docs)))], p, "read", t + (3 + j) * MS, int(rng.integers(100, 60000)))
        b.add(p, b.file(host, f"/tmp/tmp{rng.integers(0, 1 << 30):08x}"), "write", t + 9 * MS,
              int(rng.integers(10, 5000)))
        if rng.random() < 0.5:
            b.add(p, docs[int(rng.integers(len(docs)))], "write", t + 10 * MS, int(rng.integers(100, 60000)))

    def shuffle(t):
        p = b.proc(host, "python3")
        b.add(cron, p, "clone", t, dur=10 * US)
        src = docs[int(rng.integers(len(docs)))]
        dst = docs[int(rng.integers(len(docs)))]
        b.add(src, p, "read", t + MS, int(rng.integers(100, 60000)))
        if dst != src:
            b.burst(p, dst, "write", t + 2 * MS, int(rng.integers(1, 6)), lambda: int(rng.integers(100, 8000)),
                    gap=(200 * US, 5 * MS))

    def tmp(t):
        p = b.proc(host, "bash")
        b.add(sshd, p, "clone", t, dur=10 * US)
        b.add(libs[0], p, "read", t + MS, 4096)
        f = b.file(host, f"/tmp/sess{rng.integers(0, 1 << 30):08x}")
        b.burst(p, f, "write", t + 2 * MS, int(rng.integers(1, 4)), lambda: int(rng.integers(10, 900)))
        b.add(f, p, "read", t + 60 * MS, 100)

    acts = {"web": web_request, "ssh": ssh_session, "job": job, "shuffle": shuffle, "tmp": tmp}
    start_count = b.count(host)
    while b.count(host) - start_count < budget:
        t = t0 + int(rng.integers(0, span))
        acts[kinds[int(rng.choice(len(kinds), p=rates))]](t)


def _sysrep(b: _Builder, host: str, t: int) -> None:
    """A benign report job: the single writer of /home/fs/sysrep_random."""
    cron = b.proc(host, "cron", 300)
    p = b.proc(host, "sysrep")
    b.add(cron, p, "clone", t, dur=10 * US)
    b.add(b.file(host, LIBS[0]), p, "read", t + MS, 4096)
    for i in range(12):
        b.add(b.file(host, f"/home/fs/doc{(7 * i) % 120:03d}"), p, "read", t + (2 + i) * MS, 2000 + 37 * i)
    b.add(b.file(host, "/var/log/auth.log"), p, "read", t + 20 * MS, 5000)
    b.add(p, b.file(host, "/home/fs/sysrep_random"), "write", t + 30 * MS, 8192)


# --- attack chains --------------------------------------------------------------------


@dataclass
class _Attack:
    planted: list = field(default_factory=list)
    match_a: str = ""
    match_b: str = ""
    cutoff_a: int = CUTOFF_A
    cutoff_b: int = CUTOFF_B


def _foothold(b: _Builder, t: int) -> tuple:
    """Shellshock request to the web server spawning a shell with a reverse connection."""
    web = b.proc("1", "apache2", 800)
    req = b.conn("1", ATTACKER_IP, HOST1_IP, 80, 51234)
    b.add(req, web, "recvmsg", t, 911, tag="context")
    shell = b.proc("1", "bash")
    b.add(web, shell, "clone", t + 2 * MS, dur=10 * US, tag="context")
    for lib in LIBS[:2]:
        b.add(b.file("1", lib), shell, "read", t + 3 * MS, 4096, tag="context")
    rev = b.conn("1", ATTACKER_IP, HOST1_IP, 4444, 4444)
    b.burst(rev, shell, "recvmsg", t + 1 * SECOND, 4, lambda: int(b.rng.integers(30, 120)),
            gap=(2 * SECOND, 5 * SECOND), tag="crit_a")
    return shell, rev


def _download(b: _Builder, host: str, parent, path: str, size: int, t: int, tag: str, port: int):
    ip = HOST1_IP if host == "1" else HOST2_IP
    wget = b.proc(host, "wget")
    b.add(parent, wget, "clone", t, dur=10 * US, tag=tag)
    b.add(b.file(host, LIBS[0]), wget, "read", t + MS, 4096, tag="context")
    b.add(b.file(host, LIBS[3]), wget, "read", t + MS + 100 * US, 4096, tag="context")
    net = b.conn(host, ATTACKER_IP, ip, port, 80)
    b.add(net, wget, "recvmsg", t + 5 * MS, size, tag=tag)
    f = b.file(host, path)
    b.add(wget, f, "write", t + 9 * MS, size, tag=tag)
    return f, net


def _copy_out(b: _Builder, parent, f, size: int, t: int, tag: str):
    """host1 -> host2 copy of ``f`` through scp; returns host2's received file and inbound connection."""
    scp = b.proc("1", "scp")
    b.add(parent, scp, "clone", t, dur=10 * US, tag=tag)
    b.add(f, scp, "read", t + MS, size, tag=tag)
    out = b.conn("1", HOST1_IP, HOST2_IP, 22, 40022)
    send = b.add(scp, out, "sendmsg", t + 2 * MS, size, tag=tag)
    sshd2 = b.proc("2", "sshd", 650)
    inbound = b.conn("2", HOST1_IP, HOST2_IP, 22, 40022)
    recv = b.proc("2", "scp")
    b.add(sshd2, recv, "clone", t + 2 * MS, dur=10 * US, tag="context")
    b.add(inbound, recv, "recvmsg", t + 3 * MS, size, tag="crit_b")
    landed = b.file("2", f.fields()["path"])
    b.add(recv, landed, "write", t + 4 * MS, size, tag="crit_b")
    return send, landed, inbound


def _run_script(b: _Builder, host: str, script, t: int, tag: str):
    sshd = b.proc(host, "sshd", 650) if host == "2" else None
    sh = b.proc(host, "sh")
    if sshd is not None:
        session = b.proc(host, "sshd")
        b.add(sshd, session, "clone", t - 2 * MS, dur=10 * US, tag="context")
        b.add(session, sh, "clone", t - MS, dur=10 * US, tag="context")
    b.add(script, sh, "execute", t, 600, tag=tag)
    b.add(b.file(host, LIBS[0]), sh, "read", t + 100 * US, 4096, tag="context")
    return sh


def _password_crack(b: _Builder) -> _Attack:
    a = _Attack()
    end_b = CUTOFF_B - 1_161_377  # host2 anchor finishes ~1 ms before its cutoff
    end_a = CUTOFF_A - 900_000
    t = end_b - 900 * SECOND
    shell, rev = _foothold(b, t - 120 * SECOND)
    gather, dl1 = _download(b, "1", shell, "/tmp/gather_password.sh", 2311, t, "crit_a", 41001)
    sh = b.proc("1", "sh")
    b.add(shell, sh, "clone", t + 5 * SECOND, dur=10 * US, tag="crit_a")
    b.add(gather, sh, "execute", t + 5 * SECOND + MS, 2311, tag="crit_a")
    b.add(b.file("1", LIBS[0]), sh, "read", t + 5 * SECOND + 2 * MS, 4096, tag="context")
    b.add(b.file("1", "/etc/hosts"), sh, "read", t + 6 * SECOND, 221, tag="context")
    crack_sh, _ = _download(b, "1", sh, "/tmp/crack_passwd.sh", 5120, t + 10 * SECOND, "attack", 41002)
    _, landed, inbound2 = _copy_out(b, sh, crack_sh, 5120, t + 20 * SECOND, "attack")

    # host2: run the cracker and send the result back
    sh2 = _run_script(b, "2", landed, t + 30 * SECOND, "crit_b")
    libfoo, dl3 = _download(b, "2", sh2, "/tmp/libfoo.so", 88_412, t + 40 * SECOND, "crit_b", 41003)
    crack = b.proc("2", "crack")
    b.add(sh2, crack, "clone", t + 60 * SECOND, dur=10 * US, tag="crit_b")
    b.add(libfoo, crack, "read", t + 60 * SECOND + MS, 88_412, tag="crit_b")
    b.add(b.file("2", "/etc/shadow"), crack, "read", t + 61 * SECOND, 1433, tag="crit_b")
    result2 = b.file("2", "/tmp/password_crack.txt")
    size = 3_187
    b.add(crack, result2, "write", end_b - 400 * SECOND, size, tag="crit_b")
    scp2 = b.proc("2", "scp")
    b.add(sh2, scp2, "clone", end_b - 4 * MS, dur=10 * US, tag="crit_b")
    b.add(result2, scp2, "read", end_b - 3 * MS, size, tag="crit_b")
    back = b.conn("2", HOST2_IP, HOST1_IP, 22, 40180)
    b.add(scp2, back, "sendmsg", end_b - 500 * US, size, dur=400 * US, tag="anchor_b")

    # host1: receive, pack
    inbound1 = b.conn("1", HOST2_IP, HOST1_IP, 22, 40180)
    recv1 = b.proc("1", "scp")
    b.add(b.proc("1", "sshd", 650), recv1, "clone", end_b + MS, dur=10 * US, tag="context")
    b.add(inbound1, recv1, "recvmsg", end_b + 2 * MS, size, tag="crit_a")
    result1 = b.file("1", "/tmp/password_crack.txt")
    b.add(recv1, result1, "write", end_b + 3 * MS, size, tag="crit_a")
    tar = b.proc("1", "tar")
    b.add(sh, tar, "clone", end_a - 3 * MS, dur=10 * US, tag="crit_a")
    b.add(b.file("1", LIBS[0]), tar, "read", end_a - 3 * MS + 50 * US, 4096, tag="context")
    b.add(result1, tar, "read", end_a - 2 * MS, size, tag="crit_a")
    b.add(tar, b.file("1", "/tmp/passwords.tar.bz2"), "write", end_a - MS, size, dur=500 * US, tag="anchor_a")

    a.planted = [rev, dl1, inbound1, inbound2, dl3]
    a.match_a = ('MATCH (p:Process)-[st:FileEvent{optype:"write"}]->'
                 '(f:File{name:"/tmp/passwords.tar.bz2", hostid:"1"})')
    a.match_b = (f'MATCH (p:Process)-[st:NetworkEvent{{id:{ANCHOR_B}}}]->'
                 f'(f:Network{{srcip:"{HOST2_IP}/32",dstip:"{HOST1_IP}/32",hostid:"2"}})')
    return a


def _data_leakage(b: _Builder) -> _Attack:
    a = _Attack()
    end_a = CUTOFF_A - 2 * SECOND
    end_b = CUTOFF_B - 1_161_377
    t = end_b - 600 * SECOND
    shell, rev = _foothold(b, t - 120 * SECOND)
    size = 1_954
    leak, dl = _download(b, "1", shell, "/tmp/leak_data.sh", size, t, "crit_a", 42001)
    scp = b.proc("1", "scp")
    b.add(shell, scp, "clone", end_a - 30 * MS, dur=10 * US, tag="crit_a")
    b.add(leak, scp, "read", end_a - 20 * MS, size, tag="crit_a")
    out = b.conn("1", HOST1_IP, HOST2_IP, 22, 40444)
    b.add(scp, out, "sendmsg", end_a - MS, size, dur=500 * US, tag="anchor_a")

    sshd2 = b.proc("2", "sshd", 650)
    inbound = b.conn("2", HOST1_IP, HOST2_IP, 22, 40444)
    recv = b.proc("2", "scp")
    tb = t + 5 * SECOND
    b.add(sshd2, recv, "clone", tb, dur=10 * US, tag="context")
    b.add(inbound, recv, "recvmsg", tb + MS, size, tag="crit_b")
    landed = b.file("2", "/tmp/leak_data.sh")
    b.add(recv, landed, "write", tb + 2 * MS, size, tag="crit_b")
    sh2 = _run_script(b, "2", landed, tb + 10 * SECOND, "crit_b")
    tar = b.proc("2", "tar")
    b.add(sh2, tar, "clone", tb + 11 * SECOND, dur=10 * US, tag="crit_b")
    bundle = 0
    for i, path in enumerate(("/etc/passwd", "/etc/shadow", "/root/.ssh/id_rsa", "/home/fs/.secrets")):
        amount = 700 + 311 * i
        bundle += amount
        b.add(b.file("2", path), tar, "read", tb + 11 * SECOND + (i + 1) * MS, amount, tag="crit_b")
    tarball = b.file("2", "/tmp/leaked.tar")
    b.add(tar, tarball, "write", tb + 12 * SECOND, bundle, tag="crit_b")
    bz = b.proc("2", "bzip2")
    b.add(sh2, bz, "clone", tb + 13 * SECOND, dur=10 * US, tag="crit_b")
    b.add(tarball, bz, "read", tb + 13 * SECOND + MS, bundle, tag="crit_b")
    packed = b.file("2", "/tmp/leaked.tar.bz2")
    zsize = bundle // 3
    b.add(bz, packed, "write", tb + 14 * SECOND, zsize, tag="crit_b")
    curl = b.proc("2", "curl")
    b.add(sh2, curl, "clone", end_b - 5 * MS, dur=10 * US, tag="crit_b")
    b.add(packed, curl, "read", end_b - 4 * MS, zsize, tag="crit_b")
    exfil = b.conn("2", HOST2_IP, ATTACKER_IP, 443, 40555)
    b.add(curl, exfil, "sendmsg", end_b - 500 * US, zsize, dur=400 * US, tag="anchor_b")

    a.planted = [rev, dl, inbound]
    a.match_a = (f'MATCH (p:Process)-[st:NetworkEvent{{id:{ANCHOR_A}}}]->'
                 f'(f:Network{{dstip:"{HOST2_IP}/32",hostid:"1"}})')
    a.match_b = (f'MATCH (p:Process)-[st:NetworkEvent{{id:{ANCHOR_B}}}]->'
                 f'(f:Network{{dstip:"{ATTACKER_IP}/32",hostid:"2"}})')
    return a


def _vpn_filter(b: _Builder) -> _Attack:
    a = _Attack()
    end_a = CUTOFF_A - 2 * SECOND
    end_b = CUTOFF_B - 1_161_377
    t = end_b - 300 * SECOND
    shell, rev = _foothold(b, t - 120 * SECOND)
    size = 1_388
    script, dl = _download(b, "1", shell, "/tmp/vpn_filter.sh", size, t, "crit_a", 43001)
    scp = b.proc("1", "scp")
    b.add(shell, scp, "clone", end_a - 30 * MS, dur=10 * US, tag="crit_a")
    b.add(script, scp, "read", end_a - 20 * MS, size, tag="crit_a")
    out = b.conn("1", HOST1_IP, HOST2_IP, 22, 40666)
    b.add(scp, out, "sendmsg", end_a - MS, size, dur=500 * US, tag="anchor_a")

    sshd2 = b.proc("2", "sshd", 650)
    inbound = b.conn("2", HOST1_IP, HOST2_IP, 22, 40666)
    recv = b.proc("2", "scp")
    tb = t + 5 * SECOND
    b.add(sshd2, recv, "clone", tb, dur=10 * US, tag="context")
    b.add(inbound, recv, "recvmsg", tb + MS, size, tag="crit_b")
    landed = b.file("2", "/tmp/vpn_filter.sh")
    b.add(recv, landed, "write", tb + 2 * MS, size, tag="crit_b")
    sh2 = _run_script(b, "2", landed, tb + 10 * SECOND, "crit_b")
    binary, dl2 = _download(b, "2", sh2, "/tmp/vpnfilter", 412_330, tb + 12 * SECOND, "crit_b", 43002)
    chmod = b.proc("2", "chmod")
    b.add(sh2, chmod, "clone", tb + 20 * SECOND, dur=10 * US, tag="crit_b")
    b.add(chmod, binary, "write", tb + 20 * SECOND + MS, 0, tag="crit_b")
    vpn = b.proc("2", "vpnfilter")
    b.add(sh2, vpn, "clone", tb + 21 * SECOND, dur=10 * US, tag="crit_b")
    b.add(binary, vpn, "execute", tb + 21 * SECOND + MS, 412_330, tag="crit_b")
    b.add(b.file("2", LIBS[0]), vpn, "read", tb + 21 * SECOND + 2 * MS, 4096, tag="context")
    c2 = b.conn("2", HOST2_IP, ATTACKER_IP, 8443, 40777)
    b.add(vpn, c2, "sendmsg", end_b - 500 * US, 64, dur=400 * US, tag="anchor_b")
    # keep-alive beacons after the anchor
    b.burst(vpn, c2, "sendmsg", end_b + 30 * SECOND, 5, lambda: 64, gap=(20 * SECOND, 40 * SECOND), tag="attack")

    a.planted = [rev, dl, inbound, dl2]
    a.match_a = (f'MATCH (p:Process)-[st:NetworkEvent{{id:{ANCHOR_A}}}]->'
                 f'(f:Network{{dstip:"{HOST2_IP}/32",hostid:"1"}})')
    a.match_b = (f'MATCH (p:Process)-[st:NetworkEvent{{id:{ANCHOR_B}}}]->'
                 f'(f:Network{{dstip:"{ATTACKER_IP}/32",hostid:"2"}})')
    return a


_ATTACKS: dict[str, Callable[[_Builder], _Attack]] = {
    "password_crack": _password_crack,
    "data_leakage": _data_leakage,
    "vpn_filter": _vpn_filter,
}


def _assign_ids(events: list) -> dict:
    """Ids follow log order; the two anchors take their reserved ids."""
    reserved = {ANCHOR_A, ANCHOR_B}
    ids = {}
    nxt = 1
    for ev in sorted(events, key=lambda e: (e.start, e.seq)):
        if ev.tag == "anchor_a":
            ids[ev.seq] = ANCHOR_A
            continue
        if ev.tag == "anchor_b":
            ids[ev.seq] = ANCHOR_B
            continue
        while nxt in reserved:
            nxt += 1
        ids[ev.seq] = nxt
        nxt += 1
    return ids


def _entity_record(key: EntityKey, attrs: dict) -> dict:
    rec = {"type": "entity", **key.as_json()}
    extra = {k: v for k, v in attrs.items() if k not in key.fields() and k not in ("host_id", "name")}
    if extra:
        rec["attrs"] = extra
    return rec


def generate(name: str, scale: int = 10_000, seed: int = 0) -> Scenario:
    """Build scenario ``name`` with about ``scale`` background events."""
    if name not in _ATTACKS:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    if scale < 0:
        raise ValueError("scale must be non-negative")
    b = _Builder(seed)
    attack = _ATTACKS[name](b)
    t1 = CUTOFF_A + 600 * SECOND
    t0 = CUTOFF_B - 3600 * SECOND
    share1 = scale * 11 // 20
    _noise(b, "1", share1, t0, t1, web=True)
    _noise(b, "2", scale - share1, t0, t1, web=False)
    _sysrep(b, "1", CUTOFF_A - 1800 * SECOND)

    ids = _assign_ids(b.events)
    records = [_entity_record(k, v) for k, v in sorted(b.entities.items(), key=lambda kv: kv[0].sort_key())]
    for ev in sorted(b.events, key=lambda e: ids[e.seq]):
        records.append({
            "type": "event", "id": ids[ev.seq], "op": ev.op,
            "src": ev.src.as_json(), "dst": ev.dst.as_json(),
            "start": ev.start, "end": ev.end, "amount": ev.amount, "host": ev.host,
        })

    def tagged(*tags):
        return sorted(ids[e.seq] for e in b.events if e.tag in tags)

    crit_a = tagged("crit_a", "anchor_a")
    crit_b = tagged("crit_b", "anchor_b")
    manifest = {
        "scenario": name,
        "seed": seed,
        "scale": scale,
        "hosts": {"1": HOST1_IP, "2": HOST2_IP},
        "entities": len(b.entities),
        "events": len(b.events),
        "background_events": len(b.events) - len(tagged("crit_a", "crit_b", "anchor_a", "anchor_b",
                                                          "attack", "context")),
        "anchors": {"a": ANCHOR_A, "b": ANCHOR_B},
        "cutoffs": {"a": attack.cutoff_a, "b": attack.cutoff_b},
        "critical_events": crit_a + crit_b,
        "critical_by_host": {"1": crit_a, "2": crit_b},
        "attack_events": tagged("crit_a", "crit_b", "anchor_a", "anchor_b", "attack"),
        "planted_entries": [k.as_json() for k in attack.planted],
    }
    if name == "password_crack":
        query = catalog.PASSWORD_CRACK
    else:
        query = catalog.investigation(attack.match_a, attack.cutoff_a, attack.match_b, attack.cutoff_b)
    return Scenario(name, seed, scale, records, manifest, query, catalog.weight_filtered(attack.match_a))


def write_scenario(sc: Scenario, out_dir) -> dict:
    """Write ``<name>.jsonl``, ``<name>.manifest.json`` and ``<name>.pvql``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "log": out / f"{sc.name}.jsonl",
        "manifest": out / f"{sc.name}.manifest.json",
        "query": out / f"{sc.name}.pvql",
        "weight_query": out / f"{sc.name}.weight.pvql",
    }
    paths["log"].write_text("\n".join(sc.lines()) + "\n", encoding="utf-8")
    paths["manifest"].write_text(json.dumps(sc.manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    paths["query"].write_text(sc.query, encoding="utf-8")
    paths["weight_query"].write_text(sc.weight_query, encoding="utf-8")
    return paths


def load(sc: Scenario, batch_size: int = 10_000):
    """Import the scenario log into a fresh memory store."""
    from .importer import import_lines
    from .store import MemoryStore

    store = MemoryStore()
    stats = import_lines(sc.lines(), store, batch_size)
    if stats.rejected:
        raise ValueError(f"scenario log rejected {stats.rejected} records: {stats.reasons[:3]}")
    return store


def planted_keys(manifest: dict) -> set:
    out = set()
    for obj in manifest["planted_entries"]:
        fields = {k: v for k, v in obj.items() if k not in ("kind", "host")}
        out.add(EntityKey.from_fields(Kind.parse(obj["kind"]), str(obj["host"]), fields))
    return out


@dataclass
class RunScore:
    """Outcome of running a scenario's investigation query."""

    scenario: str
    seed: int
    missed: list
    final_edges: int
    final_raw: int
    backward_raw: int
    seconds: float

    @property
    def ratio(self) -> float:
        return self.final_edges / self.backward_raw if self.backward_raw else float("inf")

    @property
    def raw_ratio(self) -> float:
        return self.final_raw / self.backward_raw if self.backward_raw else float("inf")

    def as_json(self) -> dict:
        return {
            "scenario": self.scenario, "seed": self.seed, "fn": len(self.missed),
            "missed": self.missed, "final_edges": self.final_edges, "final_raw": self.final_raw,
            "backward_raw": self.backward_raw, "ratio": round(self.ratio, 5),
            "raw_ratio": round(self.raw_ratio, 5), "seconds": round(self.seconds, 3),
        }


def score_run(sc: Scenario, config=None, store=None) -> RunScore:
    """Run ``sc.query`` and compare the result with the manifest.

    Size is the final edge count over the raw backward edge count summed over
    both sub-queries; a critical event counts as found when its id is among
    the raw ids of the final graph.
    """
    import time

    from .config import Config
    from .engine import Engine
    from .lang import parse_query

    t0 = time.perf_counter()
    store = store if store is not None else load(sc)
    result = Engine(store, config or Config()).execute(parse_query(sc.query))
    seconds = time.perf_counter() - t0
    found = result.graph.raw_event_ids()
    missed = sorted(set(sc.manifest["critical_events"]) - found)
    return RunScore(
        sc.name, sc.seed, missed, len(result.graph.edges), len(found),
        result.report.backward_edges, seconds,
    )
