use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::mpsc;

use agmp_core::geo::{load_farm, FarmMap};
use agmp_core::planner::{
    compose_prompt, generate_plan, mock_plan, BackendConfig, BackendError, LiveBackend, MockBackend, PlanBackend,
    PlannerContext, PlannerError, ScriptedBackend,
};
use agmp_core::schema::{plan_stats, validate, ErrorCode, PlanStats, SchemaDoc};
use rand::{Rng, SeedableRng};

fn data(path: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(path);
    std::fs::read_to_string(p).unwrap()
}

fn farm() -> FarmMap {
    load_farm(&data("farms/orchard.geojson")).unwrap()
}

fn ctx() -> PlannerContext {
    let caps = ["navigate_to_tree", "take_picture", "measure_co2", "return_home"].map(String::from).to_vec();
    PlannerContext::new(SchemaDoc::builtin_text(), data("farms/orchard.geojson"), caps).unwrap()
}

const VALID: &str = r#"<MissionPlan name="p">
  <Metadata><Rationale/></Metadata>
  <BehaviorTree>
    <Sequence>
      <Task type="navigate_to_tree" tree_id="t01"/>
      <Condition sensor="measure_co2" operator="lt" threshold="400">
        <Then><Task type="take_picture"/></Then>
      </Condition>
      <Task type="return_home"/>
    </Sequence>
  </BehaviorTree>
</MissionPlan>"#;

#[test]
fn prompt_is_deterministic_and_embeds_context() {
    let ctx = ctx();
    let q = "take pictures of yellow trees in the northern half";
    let a = compose_prompt(&ctx, q).unwrap();
    assert_eq!(a, compose_prompt(&ctx, q).unwrap());
    assert!(a.system.contains(ctx.farm_geojson().trim_end()));
    assert!(a.system.contains(SchemaDoc::builtin_text().trim_end()));
    assert!(a.system.contains("- measure_co2"));
    assert_eq!(a.user, q);
    assert_ne!(a, compose_prompt(&ctx, "take pictures of yellow trees in the southern half").unwrap());
    assert!(matches!(compose_prompt(&ctx, "  "), Err(PlannerError::EmptyQuery)));
}

#[test]
fn mock_grammar() {
    let farm = farm();
    let row = mock_plan("take 3 pictures in a row of 5 trees", &farm).unwrap();
    assert_eq!(plan_stats(&row), PlanStats { task_count: 8, conditional_count: 0 });

    let cond = mock_plan("measure co2 at 1 tree; if low take a picture", &farm).unwrap();
    assert_eq!(plan_stats(&cond).conditional_count, 1);

    let yellow = mock_plan("Take pictures of yellow trees in the northern half", &farm).unwrap();
    let north = farm.trees_in_half("north".parse().unwrap());
    let ids = yellow.tree_ids();
    assert!(!ids.is_empty());
    for id in &ids {
        assert!(north.contains(id));
        assert_eq!(farm.tree(id).unwrap().attributes["leaf_color"], "yellow");
    }

    assert!(matches!(mock_plan("paint the fence", &farm), Err(BackendError::UnparseableQuery(_))));
    assert!(matches!(mock_plan("take 99 pictures of trees", &farm), Err(BackendError::Unsatisfiable(_))));
}

#[test]
fn mock_backend_needs_no_repair() {
    let backend = MockBackend::new(farm());
    let r = generate_plan("measure moisture at 4 trees", &ctx(), &backend, &BackendConfig::default(), 1).unwrap();
    assert_eq!(r.repair_rounds, 0);
    assert_eq!(r.transcript.len(), 1);
    assert!(!r.rationale.is_empty());
    assert!(validate(&r.raw_xml, SchemaDoc::builtin()).is_valid());
}

#[test]
fn one_repair_round_fixes_missing_threshold() {
    let broken = VALID.replace(r#" threshold="400""#, "");
    let backend = ScriptedBackend::new([broken, VALID.to_string()]);
    let r = generate_plan("q", &ctx(), &backend, &BackendConfig::default(), 1).unwrap();
    assert_eq!(r.repair_rounds, 1);
    assert_eq!(r.transcript.len(), 2);
    let repair = &r.transcript[1].request.messages;
    assert_eq!(repair.len(), 4);
    assert_eq!(repair[1].content, "q");
    assert!(repair[3].content.contains("MISSING_ATTR"));
    assert!(repair[3].content.contains("threshold"));
}

#[test]
fn unrepairable_carries_last_report() {
    let first = VALID.replace("take_picture", "fly_drone");
    let second = VALID.replace(r#" tree_id="t01""#, "");
    let backend = ScriptedBackend::new([first, second.clone()]);
    let err = generate_plan("q", &ctx(), &backend, &BackendConfig::default(), 1).unwrap_err();
    let PlannerError::Unrepairable { rounds, report, transcript } = err else { panic!("expected UNREPAIRABLE") };
    assert_eq!(rounds, 1);
    assert_eq!(transcript.len(), 2);
    assert_eq!(report, validate(&second, SchemaDoc::builtin()));
    assert_eq!(report.codes(), vec![ErrorCode::MissingParam]);
}

#[test]
fn reply_without_xml_is_repaired() {
    let backend = ScriptedBackend::new(["I cannot do that.".to_string(), format!("ok\n```xml\n{VALID}\n```")]);
    let r = generate_plan("q", &ctx(), &backend, &BackendConfig::default(), 1).unwrap();
    assert_eq!(r.repair_rounds, 1);
    assert_eq!(r.rationale, "ok");
}

#[test]
fn random_scripts_respect_bounds() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let bad = [VALID.replace("lt", "lower"), "nothing".to_string(), VALID.replace("<Metadata>", "<Meta>")];
    let ctx = ctx();
    for _ in 0..100 {
        let len = rng.gen_range(1..5);
        let script: Vec<String> = (0..len)
            .map(|_| if rng.gen_bool(0.4) { VALID.to_string() } else { bad[rng.gen_range(0..bad.len())].clone() })
            .collect();
        let max_repairs = rng.gen_range(0..4);
        match generate_plan("q", &ctx, &ScriptedBackend::new(script), &BackendConfig::default(), max_repairs) {
            Ok(r) => {
                assert!(r.repair_rounds <= max_repairs);
                assert_eq!(r.transcript.len(), 1 + r.repair_rounds);
                assert!(validate(&r.raw_xml, SchemaDoc::builtin()).is_valid());
            }
            Err(PlannerError::Unrepairable { rounds, transcript, report }) => {
                assert_eq!(rounds, max_repairs);
                assert_eq!(transcript.len(), 1 + max_repairs);
                assert!(!report.is_valid());
            }
            Err(e) => panic!("{e}"),
        }
    }
}

struct Captured {
    head: String,
    body: String,
}

/// Serves one canned (status, body) per connection and reports what it got.
fn stub_server(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for (status, reply) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
                head.push_str(&line);
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            tx.send(Captured { head, body: String::from_utf8(body).unwrap() }).unwrap();
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, rx)
}

fn completion(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn live_client_sends_configured_sampling() {
    let (url, rx) = stub_server(vec![(200, completion(&format!("why\n```xml\n{VALID}\n```")))]);
    std::env::set_var("AGMP_STUB_KEY_A", "sk-test-a");
    let cfg = BackendConfig { endpoint_url: url, api_key_env: "AGMP_STUB_KEY_A".into(), timeout: 5.0, ..Default::default() };
    let backend = LiveBackend::new(cfg.clone()).unwrap();
    let r = generate_plan("q", &ctx(), &backend, &cfg, 1).unwrap();
    assert_eq!(r.repair_rounds, 0);
    let got = rx.recv().unwrap();
    let body: serde_json::Value = serde_json::from_str(&got.body).unwrap();
    assert_eq!(body["temperature"], 0.2);
    assert_eq!(body["max_tokens"], 4096);
    assert_eq!(body["model"], "gpt-4o-2024-05-13");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "q");
    assert!(got.head.to_ascii_lowercase().contains("authorization: bearer sk-test-a"));
}

#[test]
fn live_client_retries_once_on_server_error() {
    let (url, rx) = stub_server(vec![(503, "busy".into()), (200, completion("fine"))]);
    std::env::set_var("AGMP_STUB_KEY_B", "k");
    let cfg = BackendConfig {
        endpoint_url: url,
        api_key_env: "AGMP_STUB_KEY_B".into(),
        timeout: 5.0,
        retry_backoff_ms: 1,
        temperature: 0.7,
        max_tokens: 17,
        ..Default::default()
    };
    let backend = LiveBackend::new(cfg.clone()).unwrap();
    let req = agmp_core::planner::ChatRequest {
        model: "ignored".into(),
        messages: vec![],
        temperature: 0.0,
        max_tokens: 1,
    };
    assert_eq!(backend.complete(&req).unwrap(), "fine");
    for _ in 0..2 {
        let body: serde_json::Value = serde_json::from_str(&rx.recv().unwrap().body).unwrap();
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["max_tokens"], 17);
    }
}

#[test]
fn live_client_gives_up_after_one_retry() {
    let (url, _rx) = stub_server(vec![(500, "a".into()), (502, "b".into())]);
    std::env::set_var("AGMP_STUB_KEY_C", "k");
    let cfg = BackendConfig { endpoint_url: url, api_key_env: "AGMP_STUB_KEY_C".into(), retry_backoff_ms: 1, ..Default::default() };
    let backend = LiveBackend::new(cfg.clone()).unwrap();
    let err = generate_plan("q", &ctx(), &backend, &cfg, 1).unwrap_err();
    assert!(matches!(err, PlannerError::Backend(BackendError::Http { status: 502, .. })), "{err}");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, rx) = stub_server(vec![(400, "bad".into())]);
    std::env::set_var("AGMP_STUB_KEY_D", "k");
    let cfg = BackendConfig { endpoint_url: url, api_key_env: "AGMP_STUB_KEY_D".into(), retry_backoff_ms: 1, ..Default::default() };
    let err = generate_plan("q", &ctx(), &LiveBackend::new(cfg.clone()).unwrap(), &cfg, 1).unwrap_err();
    assert!(matches!(err, PlannerError::Backend(BackendError::Http { status: 400, .. })));
    rx.recv().unwrap();
    assert!(rx.recv_timeout(std::time::Duration::from_millis(100)).is_err());
}
