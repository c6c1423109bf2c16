#!/usr/bin/env python3
"""Regenerates the OpenDRIVE fixture maps in this directory.

Maps:
  minimal.xodr            one straight road, lanes 1 and -1
  corridor.xodr           four roads in series (line, arc, line, line), direct links
  junction4.xodr          signalized four-way junction, dedicated left-turn lane on every arm
  junction_west_left.xodr same geometry, only the west arm may turn left, no signals

Geometry conventions: every junction arm's reference line points into the
junction and ends 10 m from the origin. Lanes -1/-2 feed the junction,
lanes 1/2 leave it, lanes -3/3 are sidewalks.
"""
import math
import os

HERE = os.path.dirname(os.path.abspath(__file__))
LANE_W = 3.5
WALK_W = 2.0


def f(v):
    s = f"{v:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def header(name):
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        "<OpenDRIVE>\n"
        f'  <header revMajor="1" revMinor="4" name="{name}" version="1.0" '
        'north="0" south="0" east="0" west="0"/>\n'
    )


def lane(lid, ltype, width=LANE_W, mark="both", pred=None, succ=None):
    link = ""
    if pred is not None or succ is not None:
        link = "<link>"
        if pred is not None:
            link += f'<predecessor id="{pred}"/>'
        if succ is not None:
            link += f'<successor id="{succ}"/>'
        link += "</link>"
    else:
        link = "<link/>"
    w = "" if width is None else f'<width sOffset="0" a="{f(width)}" b="0" c="0" d="0"/>'
    return (
        f'          <lane id="{lid}" type="{ltype}" level="false">{link}{w}'
        f'<roadMark sOffset="0" type="solid" weight="standard" color="standard" width="0.13" laneChange="{mark}"/></lane>\n'
    )


def road(rid, name, length, junction, geoms, left, right, link="", signals=""):
    s = f'  <road name="{name}" length="{f(length)}" id="{rid}" junction="{junction}">\n'
    s += f"    <link>{link}</link>\n" if link else "    <link/>\n"
    s += "    <planView>\n"
    for g in geoms:
        s += g
    s += "    </planView>\n"
    s += "    <lanes>\n      <laneSection s=\"0\">\n"
    if left:
        s += "        <left>\n" + "".join(left) + "        </left>\n"
    s += (
        '        <center>\n          <lane id="0" type="none" level="false"><link/>'
        '<roadMark sOffset="0" type="solid" weight="standard" color="yellow" width="0.13" laneChange="none"/></lane>\n'
        "        </center>\n"
    )
    if right:
        s += "        <right>\n" + "".join(right) + "        </right>\n"
    s += "      </laneSection>\n    </lanes>\n"
    if signals:
        s += "    <signals>\n" + signals + "    </signals>\n"
    s += "  </road>\n"
    return s


def line(s, x, y, hdg, length):
    return (
        f'      <geometry s="{f(s)}" x="{f(x)}" y="{f(y)}" hdg="{f(hdg)}" length="{f(length)}"><line/></geometry>\n'
    )


def arc(s, x, y, hdg, length, k):
    return (
        f'      <geometry s="{f(s)}" x="{f(x)}" y="{f(y)}" hdg="{f(hdg)}" length="{f(length)}">'
        f'<arc curvature="{f(k)}"/></geometry>\n'
    )


def minimal():
    out = header("minimal")
    out += road(
        "1", "Main Street", 100, "-1", [line(0, 0, 0, 0, 100)],
        [lane(1, "driving")], [lane(-1, "driving")],
    )
    out += "</OpenDRIVE>\n"
    return out


def arc_end(x, y, h, k, length):
    return (
        x + (math.sin(h + k * length) - math.sin(h)) / k,
        y - (math.cos(h + k * length) - math.cos(h)) / k,
        h + k * length,
    )


def corridor():
    out = header("corridor")
    # A: straight, 2 forward lanes.
    ax, ay, ah, al = 0.0, 0.0, 0.0, 100.0
    out += road(
        "10", "Corridor A", al, "-1", [line(0, ax, ay, ah, al)],
        [lane(1, "driving", pred=None, succ=None)],
        [lane(-1, "driving", succ=-1), lane(-2, "driving", succ=-2)],
        link='<successor elementType="road" elementId="11" contactPoint="start"/>',
    )
    # B: arc, 3 forward lanes, no crossing between -2 and -3.
    bx, by, bh, bl, bk = ax + al, ay, ah, 50.0, 0.01
    out += road(
        "11", "Corridor B", bl, "-1", [arc(0, bx, by, bh, bl, bk)],
        [lane(1, "driving", pred=None, succ=None)],
        [lane(-1, "driving", pred=-1, succ=-1), lane(-2, "driving", mark="none", pred=-2, succ=-2),
         lane(-3, "driving", pred=None)],
        link='<predecessor elementType="road" elementId="10" contactPoint="end"/>'
             '<successor elementType="road" elementId="12" contactPoint="start"/>',
    )
    cx, cy, ch = arc_end(bx, by, bh, bk, bl)
    cl = 80.0
    out += road(
        "12", "Corridor C", cl, "-1", [line(0, cx, cy, ch, cl)],
        [lane(1, "driving", succ=None)],
        [lane(-1, "driving", pred=-1, succ=-1), lane(-2, "driving", pred=-2)],
        link='<predecessor elementType="road" elementId="11" contactPoint="end"/>'
             '<successor elementType="road" elementId="13" contactPoint="start"/>',
    )
    dx, dy = cx + cl * math.cos(ch), cy + cl * math.sin(ch)
    dl = 60.0
    out += road(
        "13", "Corridor D", dl, "-1", [line(0, dx, dy, ch, dl)],
        # lane 1 intentionally lacks a width record (defaults to 3.5 m).
        [lane(1, "driving", width=None, pred=1)],
        [lane(-1, "driving", pred=-1), lane(-2, "shoulder", width=1.5)],
        link='<predecessor elementType="road" elementId="12" contactPoint="end"/>',
    )
    out += "</OpenDRIVE>\n"
    return out


ARMS = [("1", "West", 0.0), ("2", "South", math.pi / 2), ("3", "East", math.pi), ("4", "North", -math.pi / 2)]


def arm_by_heading(h):
    for rid, name, ah in ARMS:
        d = (ah - h + math.pi) % (2 * math.pi) - math.pi
        if abs(d) < 1e-6:
            return rid
    raise ValueError(h)


def junction_map(name, left_arms, signalized):
    out = header(name)
    conns = []  # (conn_road_id, incoming, outgoing, from_lane, to_lane, geometry, length)
    next_id = 100
    for rid, aname, h in ARMS:
        ex, ey = -10 * math.cos(h), -10 * math.sin(h)
        nx, ny = -math.sin(h), math.cos(h)  # left normal
        turns = []
        if rid in left_arms:
            turns.append(("left", -1, 0.0, 0.1, 1))
        else:
            turns.append(("straight", -1, 0.0, 0.0, 1))
        turns.append(("straight", -2, -LANE_W, 0.0, 2))
        turns.append(("right", -2, -LANE_W, -1 / 6.5, 2))
        for kind, from_lane, t0, k, out_lane in turns:
            sx, sy = ex + t0 * nx, ey + t0 * ny
            if k == 0.0:
                length = 20.0
                geom = line(0, sx, sy, h, length)
                target_h = h + math.pi
            else:
                length = math.pi / 2 / abs(k)
                geom = arc(0, sx, sy, h, length, k)
                target_h = h - math.pi / 2 if k > 0 else h + math.pi / 2
            target = arm_by_heading(target_h)
            conns.append((str(next_id), rid, target, from_lane, out_lane, geom, length, kind))
            next_id += 1

    for rid, aname, h in ARMS:
        ex, ey = -10 * math.cos(h), -10 * math.sin(h)
        sx, sy = ex - 100 * math.cos(h), ey - 100 * math.sin(h)
        signals = ""
        if signalized:
            signals = (
                f'      <signal s="98" t="-7.5" id="{200 + int(rid)}" name="TL_{aname}" dynamic="yes" '
                'orientation="+" zOffset="2.5" country="OpenDRIVE" type="1000001" subtype="-1" '
                'value="-1" height="0.9" width="0.3"/>\n'
            )
        out += road(
            rid, f"{aname} Arm", 100, "-1", [line(0, sx, sy, h, 100)],
            [lane(1, "driving"), lane(2, "driving"), lane(3, "sidewalk", width=WALK_W)],
            [lane(-1, "driving"), lane(-2, "driving"), lane(-3, "sidewalk", width=WALK_W)],
            link='<successor elementType="junction" elementId="1"/>',
            signals=signals,
        )
    for cid, inc, outg, fl, ol, geom, length, kind in conns:
        out += road(
            cid, f"Connector {inc}->{outg} {kind}", length, "1", [geom],
            [], [lane(-1, "driving", pred=fl, succ=ol)],
            link=f'<predecessor elementType="road" elementId="{inc}" contactPoint="end"/>'
                 f'<successor elementType="road" elementId="{outg}" contactPoint="end"/>',
        )
    out += '  <junction id="1" name="Central Junction">\n'
    for i, (cid, inc, outg, fl, ol, geom, length, kind) in enumerate(conns):
        out += (
            f'    <connection id="{i}" incomingRoad="{inc}" connectingRoad="{cid}" contactPoint="start">'
            f'<laneLink from="{fl}" to="-1"/></connection>\n'
        )
    out += "  </junction>\n</OpenDRIVE>\n"
    return out


def main():
    files = {
        "minimal.xodr": minimal(),
        "corridor.xodr": corridor(),
        "junction4.xodr": junction_map("junction4", {"1", "2", "3", "4"}, True),
        "junction_west_left.xodr": junction_map("junction_west_left", {"1"}, False),
    }
    for name, text in files.items():
        with open(os.path.join(HERE, name), "w") as fh:
            fh.write(text)


if __name__ == "__main__":
    main()
