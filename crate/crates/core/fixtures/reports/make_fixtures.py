"""Writes report texts, extraction transcripts and expected fact summaries.

Transcripts are keyed by the SHA-256 of the trimmed report text, so edit the
tables below and rerun instead of touching the generated files.
"""
import hashlib
import json
import pathlib

HERE = pathlib.Path(__file__).parent
TRANSCRIPTS = HERE.parent / "transcripts" / "extraction"
EXPECTED = HERE / "expected"


def digest(text):
    return hashlib.sha256(text.strip().encode()).hexdigest()


def av(route="straight", junction=False, lanes=1, weather=None, desc="AV"):
    return {"description": desc, "route": route, "junction": junction,
            "min_driving_lanes": lanes, "weather": weather}


REPORTS = {
    "bicycle_lane_change": {
        "text": "The AV was traveling northbound in the left lane of a two lane road. "
                "A bicycle traveling in the adjacent lane in the same direction changed lanes left "
                "in front of the AV and made contact with the AV's front bumper.",
        "participants": {"av": av(lanes=2, desc="AV traveling northbound in the left lane"),
                         "npcs": [{"id": "bicycle", "category": "bicycle",
                                   "description": "bicycle in the adjacent lane, same direction, ahead"}],
                         "obstacles": []},
        "positions": {"positions": [{"id": "bicycle", "rel_pos": "R5", "lane_alignment": "different_lane"}]},
        "events": {"events": [{"id": "bicycle", "actions": ["proceed straight", "changed lanes to the left"]}]},
        "expected": {"npcs": [{"category": "bicycle", "rel_pos": "R5", "lane_alignment": "different_lane",
                               "events": "af"}], "obstacles": []},
    },
    "left_turn_across_path": {
        "text": "The AV was proceeding straight through the intersection on a green light. "
                "A sedan approaching from the opposite direction turned left in front of the AV. "
                "The sedan's right side struck the AV's front.",
        "participants": {"av": av(junction=True, lanes=2, desc="AV proceeding straight through the intersection"),
                         "npcs": [{"id": "sedan", "category": "sedan",
                                   "description": "sedan approaching from the opposite direction"}],
                         "obstacles": []},
        "positions": {"positions": [{"id": "sedan", "rel_pos": "R2", "lane_alignment": "unspecified"}]},
        "events": {"events": [{"id": "sedan", "actions": [
            {"action": "proceed straight", "target_speed": 8.0}, "turned left"]}]},
        "expected": {"npcs": [{"category": "sedan", "rel_pos": "R2", "lane_alignment": "unspecified",
                               "events": "ad"}], "obstacles": []},
    },
    "lane_change_then_left_turn": {
        "text": "The AV was traveling straight toward the intersection. A sedan on the opposite approach "
                "proceeded straight, changed lanes to the left and then turned left across the AV's path. "
                "The sedan's rear quarter panel contacted the AV.",
        "participants": {"av": av(junction=True, lanes=2, desc="AV traveling straight toward the intersection"),
                         "npcs": [{"id": "sedan", "category": "passenger car",
                                   "description": "sedan on the opposite approach"}],
                         "obstacles": []},
        "positions": {"positions": [{"id": "sedan", "rel_pos": "R2", "lane_alignment": "unspecified"}]},
        "events": {"events": [{"id": "sedan", "actions": ["proceeded straight", "changed lanes to the left",
                                                          "turned left"]}]},
        "expected": {"npcs": [{"category": "sedan", "rel_pos": "R2", "lane_alignment": "unspecified",
                               "events": "afd"}], "obstacles": []},
    },
    "overtake_from_left": {
        "text": "The AV was traveling in the right lane. A van traveling behind the AV in the left lane "
                "accelerated, passed the AV on the left and merged back into the AV's lane, "
                "clipping the AV's front left corner.",
        "participants": {"av": av(lanes=2, desc="AV traveling in the right lane"),
                         "npcs": [{"id": "van", "category": "van",
                                   "description": "van behind the AV in the left lane"}],
                         "obstacles": []},
        "positions": {"positions": [{"id": "van", "rel_pos": "R6", "lane_alignment": "different_lane"}]},
        "events": {"events": [{"id": "van", "actions": ["accelerated", "passed on the left", "merged"]}]},
        "expected": {"npcs": [{"category": "van", "rel_pos": "R6", "lane_alignment": "different_lane",
                               "events": "gkm"}], "obstacles": []},
    },
    "pedestrian_crossing": {
        "text": "The AV was proceeding straight through the intersection when a pedestrian entered the "
                "crosswalk from the right side of the road and crossed the roadway in front of the AV. "
                "The AV braked and contacted the pedestrian at low speed. It was raining.",
        "participants": {"av": av(junction=True, weather="rain", desc="AV proceeding straight"),
                         "npcs": [{"id": "pedestrian", "category": "pedestrian",
                                   "description": "pedestrian entering the crosswalk from the right"}],
                         "obstacles": []},
        "positions": {"positions": [{"id": "pedestrian", "rel_pos": "R3", "lane_alignment": "unspecified"}]},
        "events": {"events": [{"id": "pedestrian", "actions": ["crossed the roadway"]}]},
        "expected": {"npcs": [{"category": "pedestrian", "rel_pos": "R3", "lane_alignment": "unspecified",
                               "events": "c"}], "obstacles": []},
    },
    "sudden_stop_ahead": {
        "text": "A sedan traveling ahead of the AV in the same lane braked hard and came to a complete stop. "
                "The AV decelerated but made contact with the sedan's rear bumper. "
                "A traffic cone had been left on the shoulder.",
        "participants": {"av": av(desc="AV following a sedan"),
                         "npcs": [{"id": "sedan", "category": "sedan",
                                   "description": "sedan ahead of the AV in the same lane"}],
                         "obstacles": [{"id": "cone", "kind": "traffic cone", "description": "cone on the shoulder",
                                        "dimensions": [0.4, 0.4, 0.7]}]},
        "positions": {"positions": [{"id": "sedan", "rel_pos": "R5", "lane_alignment": "same_lane"},
                                    {"id": "cone", "rel_pos": "R5", "lane_alignment": "unspecified"}]},
        "events": {"events": [{"id": "sedan", "actions": ["proceed straight", "braked", "came to a complete stop"]}]},
        "expected": {"npcs": [{"category": "sedan", "rel_pos": "R5", "lane_alignment": "same_lane",
                               "events": "aeh"}],
                     "obstacles": [{"kind": "traffic cone", "rel_pos": "R5"}]},
    },
    "weather_only": {
        "text": "At the time of the incident it was foggy and the road surface was wet. "
                "The AV was operating in autonomous mode.",
        "participants": {"av": av(weather="fog"), "npcs": [], "obstacles": []},
        "expected": {"error": "IncompleteReport"},
    },
    "no_positions": {
        "text": "A truck and the AV made contact. No further details were provided.",
        "participants": {"av": av(), "npcs": [{"id": "truck", "category": "truck", "description": "truck"}],
                         "obstacles": []},
        "positions": {"positions": [{"id": "truck", "rel_pos": None, "lane_alignment": "unspecified"}]},
        "expected": {"error": "IncompleteReport"},
    },
}

CLASSIFY = {
    "in the same lane ahead of the AV": {"rel_pos": "R5", "lane_alignment": "same_lane"},
    "approaching from the cross street": {"rel_pos": "R1", "lane_alignment": "unspecified"},
    "somewhere nearby": {"rel_pos": None, "lane_alignment": "unspecified"},
}


def main():
    TRANSCRIPTS.mkdir(parents=True, exist_ok=True)
    EXPECTED.mkdir(parents=True, exist_ok=True)
    for rid, r in REPORTS.items():
        (HERE / f"{rid}.txt").write_text(r["text"] + "\n")
        d = digest(r["text"])
        entries = []
        for turn in ("participants", "positions", "events"):
            if turn in r:
                entries.append({"turn": turn, "subject_digest": d,
                                "response": json.dumps(r[turn], sort_keys=True)})
        doc = {"format": "crashscen-transcript", "version": 1, "entries": entries}
        (TRANSCRIPTS / f"{rid}.json").write_text(json.dumps(doc, indent=2) + "\n")
        (EXPECTED / f"{rid}.json").write_text(json.dumps(r["expected"], indent=2) + "\n")
    entries = [{"turn": "classify_position", "subject_digest": digest(k), "request": k,
                "response": json.dumps(v, sort_keys=True)} for k, v in CLASSIFY.items()]
    doc = {"format": "crashscen-transcript", "version": 1, "entries": entries}
    (TRANSCRIPTS / "classify_positions.json").write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main()
