use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;

use crashscen_core::report_extraction::{
    classify_relative_position, extract_facts, normalize_events, BackendError, Codebook, ExtractionError,
    FixtureBackend, HttpBackend, LaneAlignment, RecordingBackend, RelPos, ReportFacts,
};
use serde_json::Value;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn backend() -> FixtureBackend {
    FixtureBackend::load(&fixtures().join("transcripts/extraction")).unwrap()
}

fn report(id: &str) -> String {
    std::fs::read_to_string(fixtures().join(format!("reports/{id}.txt"))).unwrap()
}

fn expected(id: &str) -> Value {
    let text = std::fs::read_to_string(fixtures().join(format!("reports/expected/{id}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn summary(f: &ReportFacts) -> Value {
    let npcs: Vec<Value> = f
        .npcs
        .iter()
        .map(|n| {
            serde_json::json!({
                "category": n.category,
                "rel_pos": n.rel_pos,
                "lane_alignment": n.lane_alignment,
                "events": n.events.letters(),
            })
        })
        .collect();
    let obstacles: Vec<Value> = f
        .obstacles
        .iter()
        .map(|o| serde_json::json!({"kind": o.kind, "rel_pos": o.rel_pos}))
        .collect();
    serde_json::json!({"npcs": npcs, "obstacles": obstacles})
}

#[test]
fn normalize_examples() {
    assert_eq!(normalize_events(&["proceed straight", "turn left"]).unwrap().letters(), "ad");
    assert_eq!(
        normalize_events(&["proceed straight", "change lane left", "turn left"])
            .unwrap()
            .letters(),
        "afd"
    );
    assert_eq!(
        normalize_events(&["levitate"]),
        Err(ExtractionError::UnknownAction("levitate".into()))
    );
    assert_eq!(
        normalize_events(&["Braked.", "slowed down", "stopped"]).unwrap().letters(),
        "eh"
    );
    assert!(normalize_events::<&str>(&[]).unwrap().is_empty());
}

#[test]
fn codebook_has_thirteen_actions() {
    let cb = Codebook::builtin();
    let letters: String = cb.actions.iter().map(|a| a.code.0).collect();
    assert_eq!(letters, "abcdefghijkmn");
    for r in RelPos::ALL {
        cb.anchor(r);
    }
    let dup = r#"{"actions":[{"code":"a","name":"x"},{"code":"a","name":"y"}],"relative_positions":[]}"#;
    assert!(matches!(Codebook::load(dup), Err(ExtractionError::Codebook(_))));
    let clash = r#"{"actions":[{"code":"a","name":"x","phrases":["go"]},{"code":"b","name":"y","phrases":["go"]}],"relative_positions":[]}"#;
    assert!(matches!(Codebook::load(clash), Err(ExtractionError::Codebook(_))));
}

#[test]
fn fixture_reports_match_expected() {
    let b = backend();
    for id in [
        "bicycle_lane_change",
        "left_turn_across_path",
        "lane_change_then_left_turn",
        "overtake_from_left",
        "pedestrian_crossing",
        "sudden_stop_ahead",
        "weather_only",
        "no_positions",
    ] {
        let want = expected(id);
        match extract_facts(id, &report(id), &b) {
            Ok(f) => {
                assert!(want.get("error").is_none(), "{id} should fail");
                assert_eq!(summary(&f), want, "{id}");
                f.validate(Codebook::builtin()).unwrap();
                assert_eq!(ReportFacts::from_json(&f.to_json()).unwrap(), f);
            }
            Err(e) => {
                assert_eq!(want["error"], "IncompleteReport", "{id}: {e}");
                assert!(matches!(e, ExtractionError::IncompleteReport(_)), "{id}: {e}");
            }
        }
    }
}

#[test]
fn extraction_is_deterministic() {
    let b = backend();
    let text = report("overtake_from_left");
    let a = extract_facts("r", &text, &b).unwrap();
    let c = extract_facts("r", &format!("  {text}\n\n"), &b).unwrap();
    assert_eq!(a.to_json(), c.to_json());
    assert_eq!(a.npcs[0].events.params.len(), 3);
}

#[test]
fn action_parameters_survive() {
    let f = extract_facts("r", &report("left_turn_across_path"), &backend()).unwrap();
    assert_eq!(f.npcs[0].events.params[0].target_speed, Some(8.0));
    assert!(f.av_context.junction);
}

#[test]
fn empty_text_is_incomplete() {
    assert!(matches!(
        extract_facts("r", "   ", &backend()),
        Err(ExtractionError::IncompleteReport(_))
    ));
}

#[test]
fn unknown_report_has_no_recording() {
    let e = extract_facts("r", "An unrecorded report.", &backend()).unwrap_err();
    assert!(matches!(e, ExtractionError::Backend(BackendError::NoRecording { .. })));
}

#[test]
fn classify_examples() {
    let b = backend();
    assert_eq!(
        classify_relative_position("in the same lane ahead of the AV", &b).unwrap(),
        (RelPos::R5, LaneAlignment::SameLane)
    );
    let (r, a) = classify_relative_position("approaching from the cross street", &b).unwrap();
    assert!(r.at_junction());
    assert_eq!(a, LaneAlignment::Unspecified);
    assert!(matches!(
        classify_relative_position("somewhere nearby", &b),
        Err(ExtractionError::AmbiguousPosition(_))
    ));
}

#[test]
fn recording_round_trips_through_fixture() {
    let rec = RecordingBackend::new(backend());
    let text = report("sudden_stop_ahead");
    let original = extract_facts("r", &text, &rec).unwrap();
    let replay = FixtureBackend::from_transcripts([rec.transcript()]);
    assert_eq!(replay.len(), 3);
    assert_eq!(extract_facts("r", &text, &replay).unwrap(), original);
}

/// Serves canned chat-completion replies from a local socket.
fn serve(replies: Vec<String>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for reply in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            bodies.push(String::from_utf8(body).unwrap());
            let payload = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": reply}}]})
                .to_string();
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

#[test]
fn http_backend_speaks_chat_completions() {
    let transcript: Value = serde_json::from_str(
        &std::fs::read_to_string(fixtures().join("transcripts/extraction/bicycle_lane_change.json")).unwrap(),
    )
    .unwrap();
    let replies: Vec<String> = transcript["entries"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let r = e["response"].as_str().unwrap().to_string();
            if i == 0 {
                format!("```json\n{r}\n```")
            } else {
                r
            }
        })
        .collect();
    let (url, handle) = serve(replies);
    let http = HttpBackend::new(url, Some("k".into()), "test-model");
    let via_http = extract_facts("r", &report("bicycle_lane_change"), &http).unwrap();
    let via_fixture = extract_facts("r", &report("bicycle_lane_change"), &backend()).unwrap();
    assert_eq!(via_http, via_fixture);
    let bodies = handle.join().unwrap();
    assert_eq!(bodies.len(), 3);
    let last: Value = serde_json::from_str(&bodies[2]).unwrap();
    assert_eq!(last["model"], "test-model");
    assert_eq!(last["messages"].as_array().unwrap().len(), 6);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let http = HttpBackend::new(format!("http://127.0.0.1:{port}/"), None, "m");
    let e = extract_facts("r", "text", &http).unwrap_err();
    assert!(matches!(e, ExtractionError::Backend(BackendError::Transport(_))), "{e}");
}
