"""Reference query texts used by the scenarios, tests and CLI examples.

Each text is kept byte-for-byte as an investigator would type it, including
the mixed keyword case, so the front-end is exercised on realistic input.
"""

from __future__ import annotations

_BACKWARD_1 = (
    'MATCH (p:Process)-[st:FileEvent{id:15035}]->(f:File{name:"/tmp/passwords.tar.bz2", hostid:"1"})\n'
    "        BFS (r IN backward(f) | MATCH v=dst(r) WHERE r.starttime<max(collect(vout IN out(v) | vout.endtime))) YIELD g1\n"
)

_WEIGHTS = (
    "        UNWIND g1 AS e\n"
    "        SET e.weight=projection(1/(abs(r.amount-st.amount)+0.0001),ln(1+1/abs(r.endtime-st.endtime)),count(out(v))/count(in(v)))\n"
)

_PROPAGATE = "        MATCH u=src(e) SET u.rel=reduce(sum = 0, o IN out(u) | sum+o.weight*dst(o).rel)\n"

_ENTRY = "WITH entry = (MATCH n in nodes(r) WHERE count(in(n))=0 ORDER BY n.rel DESC LIMIT 15)\n"


def _forward(cutoff: int, name: str) -> str:
    return (
        "        BFS (re IN forward(entry) | MATCH u=src(re) WHERE re.endtime>min(collect(uin IN in(u) "
        f"| uin.starttime)) and re.starttime<{cutoff}) yield {name}\n"
    )


STEP1 = _BACKWARD_1 + "        RETURN g1\n"

STEP2 = _BACKWARD_1 + _WEIGHTS + _PROPAGATE + "        RETURN g1\n"

STEP3 = STEP2 + "intersect\n" + _ENTRY + _forward(1724731846719889370, "g2") + "        RETURN g2\n"

_HOST2_PART = (
    '(MATCH (p:Process)-[st:NetworkEvent{id:100005}]->(f:Network{srcip:"192.168.1.128/32",'
    'dstip:"192.168.1.131/32",hostid:"2"})\n'
    "        BFS (r IN backward(f) | MATCH v=dst(r) WHERE r.starttime<max(collect(vout IN out(v) | vout.endtime))) YIELD g1\n"
    + _WEIGHTS + _PROPAGATE + "        RETURN g1\n"
    "intersect\n" + _ENTRY + _forward(1724731846712161377, "g2") + "        RETURN g2)\n"
)

STEP4 = STEP3 + "UNION\n" + _HOST2_PART

PASSWORD_CRACK = (
    'MATCH (p:Process)-[st:FileEvent{optype:"write"}]->(f:File{name:"/tmp/passwords.tar.bz2", hostid:"1"})\n'
    "        BFS (r IN backward(f) | MATCH v=dst(r) WHERE r.starttime<max(collect(vout IN out(v) | vout.endtime))) YIELD g1\n"
    + _WEIGHTS + _PROPAGATE + "        RETURN g1\n"
    "intersect\n" + _ENTRY + _forward(1724731846719889370, "g2") + "        RETURN g2\n"
    "\n"
    "UNION\n"
    '(MATCH (p:Process)-[st:NetworkEvent{id:100005}]->(f:Network{srcip:"192.168.1.128/32",'
    'dstip:"192.168.1.131/32",hostid:"2"})\n'
    "        BFS (r IN backward(f) | MATCH v=dst(r) WHERE r.starttime<max(collect(vout IN out(v) | vout.endtime))) YIELD g3\n"
    "        UNWIND g3 AS e\n"
    "        SET e.weight=projection(1/(abs(r.amount-st.amount)+0.0001),ln(1+1/abs(r.endtime-st.endtime)),count(out(v))/count(in(v)))\n"
    + _PROPAGATE + "        RETURN g3\n"
    "intersect\n" + _ENTRY + _forward(1724731846712161377, "g4") + "        RETURN g4)\n"
)

WEIGHT_FILTER = (
    'MATCH (p:Process)-[st:FileEvent{optype:"write"}]->(f:File{name:"/home/fs/sysrep_random"})\n'
    "\tBFS (r IN backward(f) | MATCH v=dst(r) WHERE r.starttime<max(collect(vout IN out(v) | vout.endtime))) YIELD g1\n"
    "\tUNWIND g1 AS e\n"
    "\tSET e.weight=projection(1/(abs(r.amount-st.amount)+0.0001),ln(1+1/abs(r.endtime-st.endtime)),count(out(v))/count(in(v)))\n"
    "\tWITH e WHERE e.weight >=0.5\n"
    "\tRETURN g1\n"
)



def investigation(match_a: str, cutoff_a: int, match_b: str, cutoff_b: int) -> str:
    """Two-host investigation in the shape of :data:`PASSWORD_CRACK`.

    ``match_a``/``match_b`` are complete MATCH clauses anchoring each host's
    search; the cutoffs bound the forward searches.
    """
    def part(match: str, cutoff: int, back: str, fwd: str) -> str:
        return (
            match + "\n"
            "        BFS (r IN backward(f) | MATCH v=dst(r) WHERE r.starttime<max(collect(vout IN out(v) "
            f"| vout.endtime))) YIELD {back}\n"
            f"        UNWIND {back} AS e\n"
            "        SET e.weight=projection(1/(abs(r.amount-st.amount)+0.0001),ln(1+1/abs(r.endtime-st.endtime)),"
            "count(out(v))/count(in(v)))\n"
            + _PROPAGATE + f"        RETURN {back}\n"
            "intersect\n" + _ENTRY + _forward(cutoff, fwd) + f"        RETURN {fwd}\n"
        )

    return part(match_a, cutoff_a, "g1", "g2") + "UNION\n(" + part(match_b, cutoff_b, "g3", "g4").rstrip("\n") + ")\n"


def weight_filtered(match: str, threshold: float = 0.5) -> str:
    """Backward search whose weighted edges are kept only above ``threshold``."""
    return (
        match + "\n"
        "\tBFS (r IN backward(f) | MATCH v=dst(r) WHERE r.starttime<max(collect(vout IN out(v) | vout.endtime))) YIELD g1\n"
        "\tUNWIND g1 AS e\n"
        "\tSET e.weight=projection(1/(abs(r.amount-st.amount)+0.0001),ln(1+1/abs(r.endtime-st.endtime)),count(out(v))/count(in(v)))\n"
        f"\tWITH e WHERE e.weight >={threshold}\n"
        "\tRETURN g1\n"
    )


def backward_only(match: str) -> str:
    return (
        match + "\n"
        "        BFS (r IN backward(f) | MATCH v=dst(r) WHERE r.starttime<max(collect(vout IN out(v) | vout.endtime))) YIELD g1\n"
        "        RETURN g1\n"
    )


ALL = {
    "password_crack": PASSWORD_CRACK,
    "step1": STEP1,
    "step2": STEP2,
    "step3": STEP3,
    "step4": STEP4,
    "weight_filter": WEIGHT_FILTER,
}
