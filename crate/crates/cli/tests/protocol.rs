use std::time::Duration;

use flowbot_cli::serve::{read_message, record_path, serve, write_message, Envelope, ServeOptions};
use flowbot_core::teleop::{read_log, replay_discrepancy, Snapshot};
use flowbot_core::{AssemblySpec, GripperAssembly, QuadrupedAssembly};
use serde_json::{json, Value};
use tokio::net::{tcp::OwnedReadHalf, tcp::OwnedWriteHalf, TcpListener, TcpStream};
use tokio::time::timeout;

const WAIT: Duration = Duration::from_secs(20);

struct Client {
    r: OwnedReadHalf,
    w: OwnedWriteHalf,
}

impl Client {
    async fn connect(addr: std::net::SocketAddr) -> Self {
        let (r, w) = TcpStream::connect(addr).await.unwrap().into_split();
        Client { r, w }
    }

    async fn send(&mut self, kind: &str, session: Option<&str>, seq: u64, payload: Value) {
        let msg = Envelope::new(kind, session.map(String::from), seq, payload);
        write_message(&mut self.w, &msg).await.unwrap();
    }

    async fn recv(&mut self) -> Envelope {
        timeout(WAIT, read_message(&mut self.r)).await.expect("timed out").unwrap().expect("closed")
    }

    /// Next message that is not a snapshot.
    async fn reply(&mut self) -> Envelope {
        loop {
            let m = self.recv().await;
            if m.kind != "snapshot" {
                return m;
            }
        }
    }

    async fn snapshot_where(&mut self, pred: impl Fn(&Snapshot) -> bool) -> Snapshot {
        loop {
            let m = self.recv().await;
            if m.kind == "snapshot" {
                let s: Snapshot = serde_json::from_value(m.payload).unwrap();
                if pred(&s) {
                    return s;
                }
            }
        }
    }
}

async fn start(options: ServeOptions) -> std::net::SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, options));
    addr
}

fn gripper() -> Value {
    json!(AssemblySpec::Gripper(GripperAssembly::default()))
}

#[tokio::test(flavor = "multi_thread")]
async fn scripted_session_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("run.jsonl");
    let addr = start(ServeOptions {
        tick_rate: 100.0,
        record: Some(base.clone()),
    })
    .await;
    let mut c = Client::connect(addr).await;

    c.send("create", None, 0, json!({"spec": gripper()})).await;
    let ack = c.recv().await;
    assert_eq!(ack.kind, "ack");
    assert_eq!(ack.payload["status"], "created");
    assert_eq!(ack.payload["ports"], json!(["P_left", "P_middle", "P_right"]));
    assert_eq!(ack.payload["limbs"], json!(["A", "B"]));
    let id = ack.session.clone().unwrap();

    let first = c.snapshot_where(|_| true).await;
    assert_eq!(first.session, id);
    assert!(first.limbs.iter().all(|l| l.curvature.abs() < 1e-12));

    c.send("controls", Some(&id), 1, json!({"roles": {"P_middle": {"role": "supply", "direction": "forward"}}}))
        .await;
    let ack = c.reply().await;
    assert_eq!(ack.kind, "ack");
    assert_eq!(ack.seq, 1);
    assert_eq!(ack.payload["status"], "applied");
    let effective = ack.payload["effective_tick"].as_u64().unwrap();
    let s = c.snapshot_where(|s| s.tick >= effective).await;
    assert_eq!(s.applied_seq, Some(1));
    assert!(s.audit.is_balanced(1e-6), "{:?}", s.audit);

    let bent = c.snapshot_where(|s| s.limbs.iter().all(|l| l.curvature > 1.0)).await;
    assert!(bent.tick > effective);

    c.send("controls", Some(&id), 1, json!({"roles": {}})).await;
    let ack = c.reply().await;
    assert_eq!(ack.payload["status"], "stale");
    assert_eq!(ack.payload["last_seq"], 1);

    c.send(
        "controls",
        Some(&id),
        2,
        json!({"roles": {"P_left": {"role": "supply", "direction": "forward"}}}),
    )
    .await;
    let ack = c.reply().await;
    assert_eq!(ack.payload["status"], "invalid_controls");

    // The rejected frame did not consume its sequence number.
    c.send("controls", Some(&id), 2, json!({"roles": {"P_right": {"role": "blocked"}}})).await;
    let ack = c.reply().await;
    assert_eq!(ack.payload["status"], "applied");
    let effective = ack.payload["effective_tick"].as_u64().unwrap();
    c.snapshot_where(|s| s.tick >= effective + 20).await;

    drop(c);
    let path = record_path(&base, &id);
    let mut log = None;
    for _ in 0..50 {
        tokio::time::sleep(Duration::from_millis(20)).await;
        let file = std::fs::File::open(&path).unwrap();
        if let Ok(l) = read_log(std::io::BufReader::new(file)) {
            log = Some(l);
            break;
        }
    }
    let log = log.expect("log readable");
    assert_eq!(log.controls.len(), 2);
    assert!(log.snapshots.len() > 20);
    assert!(replay_discrepancy(&log).unwrap() <= 1e-9);
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_are_reported_in_band() {
    let addr = start(ServeOptions::default()).await;
    let mut c = Client::connect(addr).await;

    c.send("controls", Some("s99"), 1, json!({"roles": {}})).await;
    let e = c.reply().await;
    assert_eq!(e.kind, "error");
    assert_eq!(e.payload["kind"], "not_found");

    c.send("create", None, 3, json!({"join": "nope"})).await;
    let e = c.reply().await;
    assert_eq!(e.payload["kind"], "not_found");
    assert_eq!(e.seq, 3);

    c.send("create", None, 4, json!({"spec": {"kind": "gripper", "fluid": "honey"}})).await;
    let e = c.reply().await;
    assert_eq!(e.kind, "error");
    assert!(["invalid_spec", "bad_request"].contains(&e.payload["kind"].as_str().unwrap()));

    c.send("launch", None, 5, json!({})).await;
    assert_eq!(c.reply().await.payload["kind"], "bad_request");

    // Garbage body, valid framing: the connection survives.
    let body = b"{not json";
    use tokio::io::AsyncWriteExt;
    c.w.write_all(&(body.len() as u32).to_be_bytes()).await.unwrap();
    c.w.write_all(body).await.unwrap();
    assert_eq!(c.reply().await.payload["kind"], "bad_request");

    c.send("create", None, 6, json!({"spec": json!(AssemblySpec::Quadruped(QuadrupedAssembly::default()))}))
        .await;
    let ack = c.reply().await;
    assert_eq!(ack.payload["ports"].as_array().unwrap().len(), 6);
    assert_eq!(ack.payload["limbs"].as_array().unwrap().len(), 4);
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_can_be_observed_from_a_second_connection() {
    let addr = start(ServeOptions::default()).await;
    let mut owner = Client::connect(addr).await;
    owner.send("create", None, 0, json!({"spec": gripper()})).await;
    let id = owner.recv().await.session.unwrap();

    let mut watcher = Client::connect(addr).await;
    watcher.send("create", None, 0, json!({"join": id})).await;
    let ack = watcher.recv().await;
    assert_eq!(ack.payload["status"], "created");
    assert_eq!(ack.session.as_deref(), Some(id.as_str()));

    owner
        .send("controls", Some(&id), 1, json!({"roles": {"P_middle": {"role": "supply", "direction": "reverse"}}}))
        .await;
    assert_eq!(owner.reply().await.payload["status"], "applied");
    let s = watcher.snapshot_where(|s| s.applied_seq == Some(1)).await;
    assert_eq!(s.session, id);

    // A second, independent session gets its own id.
    let mut other = Client::connect(addr).await;
    other.send("create", None, 0, json!({"spec": gripper()})).await;
    let other_id = other.recv().await.session.unwrap();
    assert_ne!(other_id, id);
    let s = other.snapshot_where(|s| s.tick > 10).await;
    assert!(s.applied_seq.is_none());
    assert!(s.limbs.iter().all(|l| l.curvature.abs() < 1e-12));
}
