mod common;

use std::collections::HashSet;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use voxdrill::gateway::client::Client;
use voxdrill::gateway::wire::{decode, encode, ErrorCode, InputFrame, Role, WireMessage};
use voxdrill::gateway::{bind, serve, GatewayConfig, GatewayError, Pacing};
use voxdrill::session::{Session, Trajectory};

const N: usize = 32;
const SPACING: f64 = 0.5;
const WAIT: Duration = Duration::from_secs(10);

fn session() -> Session {
    Session::new(common::bone_block(N, SPACING), common::config()).unwrap()
}

fn input_at(traj: &Trajectory, seq: u64, t: f64) -> InputFrame {
    let s = traj.sample(t);
    let q = s.orientation.quaternion();
    InputFrame {
        seq,
        tip_position: s.position.into(),
        orientation: [q.w, q.i, q.j, q.k],
        pedal: s.pedal,
        burr_id: s.burr.unwrap_or(2) as u32,
        camera: [0.0, 0.0, 50.0, 1.0, 0.0, 0.0, 0.0],
    }
}

fn rejected_code(e: GatewayError) -> u16 {
    match e {
        GatewayError::Rejected { code, .. } => code,
        other => panic!("expected a refusal, got {other}"),
    }
}

#[test]
fn mirror_tracks_server_through_scripted_session() {
    let cfg = GatewayConfig {
        pacing: Pacing::Realtime { time_scale: 0.2 },
        stop_after_ticks: Some(10_000),
        start_on_join: true,
        ..GatewayConfig::default()
    };
    let server = serve(bind("127.0.0.1:0").unwrap(), session(), cfg).unwrap();
    let traj = common::sweep_script(N, SPACING, 10.0);
    let mut client = Client::connect(server.local_addr(), Role::Controller, "", WAIT).unwrap();
    assert_eq!(client.mirror().volume().digest(), client.hello().digest);
    assert_eq!(client.burrs().len(), 8);

    let mut seq = 0;
    let mut removed = HashSet::new();
    let mut removal_count = 0u64;
    let mut last_frame_seq = 0;
    let mut final_digest = None;
    seq += 1;
    client.send_input(&input_at(&traj, seq, 1.0 / 60.0)).unwrap();
    loop {
        match client.recv(WAIT) {
            Ok(Some(WireMessage::StateFrame(f))) => {
                assert_eq!(f.seq, last_frame_seq + 1);
                last_frame_seq = f.seq;
                for r in &f.removals {
                    assert!(removed.insert((r.i, r.j, r.k)), "voxel repeated across deltas");
                }
                removal_count += f.removals.len() as u64;
                if f.digest.is_some() {
                    final_digest = f.digest;
                }
                seq += 1;
                // The send after the closing frame can race the shutdown.
                if client.send_input(&input_at(&traj, seq, f.t + 1.0 / 60.0)).is_err() {
                    break;
                }
            }
            Ok(Some(_)) => {}
            Ok(None) => panic!("server went quiet"),
            Err(GatewayError::Rejected { code, .. }) if code == ErrorCode::Shutdown as u16 => break,
            Err(e) => panic!("{e}"),
        }
    }
    let out = server.wait().unwrap();
    assert_eq!(out.report.ticks, 10_000);
    assert!(out.report.removals > 100, "script removed only {} voxels", out.report.removals);
    assert_eq!(removal_count, out.report.removals);
    assert_eq!(final_digest, Some(out.report.final_digest));
    assert_eq!(client.mirror().volume().digest(), out.report.final_digest);
    assert_eq!(client.mirror().volume().labels(), out.session.volume().labels());
    assert!(client.mirror().verified_digests() >= 10);
    // 10 s at 60 Hz, plus the closing frame.
    assert!((600..=601).contains(&out.report.frames), "frames {}", out.report.frames);
}

#[test]
fn second_controller_is_busy_and_token_is_checked() {
    let cfg = GatewayConfig {
        token: Some("s3cret".into()),
        pacing: Pacing::Realtime { time_scale: 1.0 },
        ..Default::default()
    };
    let server = serve(bind("127.0.0.1:0").unwrap(), session(), cfg).unwrap();
    let addr = server.local_addr();
    let first = Client::connect(addr, Role::Controller, "s3cret", WAIT).unwrap();
    assert_eq!(first.hello().session_token, "s3cret");
    let busy = Client::connect(addr, Role::Controller, "s3cret", WAIT).err().unwrap();
    assert_eq!(rejected_code(busy), ErrorCode::Busy as u16);
    let bad = Client::connect(addr, Role::Spectator, "guess", WAIT).err().unwrap();
    assert_eq!(rejected_code(bad), ErrorCode::Unauthorized as u16);
    let mut spectator = Client::connect(addr, Role::Spectator, "s3cret", WAIT).unwrap();
    let got_state = (0..20).any(|_| matches!(spectator.recv(WAIT), Ok(Some(WireMessage::StateFrame(_)))));
    assert!(got_state);

    // Controller slot frees up once the first one leaves.
    drop(first);
    let deadline = Instant::now() + WAIT;
    loop {
        match Client::connect(addr, Role::Controller, "s3cret", WAIT) {
            Ok(_) => break,
            Err(e) => {
                assert_eq!(rejected_code(e), ErrorCode::Busy as u16);
                assert!(Instant::now() < deadline, "controller slot never freed");
                std::thread::sleep(Duration::from_millis(20));
            }
        }
    }
    server.stop();
    server.wait().unwrap();
}

#[test]
fn coalesced_inputs_are_an_ordered_subsequence() {
    let cfg = GatewayConfig { pacing: Pacing::Realtime { time_scale: 1.0 }, ..Default::default() };
    let server = serve(bind("127.0.0.1:0").unwrap(), session(), cfg).unwrap();
    let traj = common::sweep_script(N, SPACING, 2.0);
    let mut client = Client::connect(server.local_addr(), Role::Controller, "", WAIT).unwrap();

    let mut applied = Vec::new();
    let mut acked = Vec::new();
    let sent: Vec<u64> = (1..=2000).collect();
    for &seq in &sent {
        client.send_input(&input_at(&traj, seq, seq as f64 / 1000.0)).unwrap();
        // Resending an old sequence number must not roll the input back.
        if seq % 97 == 0 {
            client.send_input(&input_at(&traj, seq - 50, 0.0)).unwrap();
        }
        if seq % 10 == 0 {
            while let Ok(Some(m)) = client.recv(Duration::from_millis(1)) {
                match m {
                    WireMessage::StateFrame(f) => applied.push(f.applied_input_seq),
                    WireMessage::Ack { seq } => acked.push(seq),
                    _ => {}
                }
            }
        }
    }
    let deadline = Instant::now() + Duration::from_millis(300);
    while Instant::now() < deadline {
        match client.recv(Duration::from_millis(20)) {
            Ok(Some(WireMessage::StateFrame(f))) => applied.push(f.applied_input_seq),
            Ok(Some(WireMessage::Ack { seq })) => acked.push(seq),
            _ => {}
        }
    }
    server.stop();
    server.wait().unwrap();

    assert!(applied.windows(2).all(|w| w[0] <= w[1]), "applied inputs went backwards");
    let sent_set: HashSet<u64> = sent.iter().copied().collect();
    assert!(applied.iter().all(|s| *s == 0 || sent_set.contains(s)));
    assert_eq!(*applied.last().unwrap(), 2000);
    assert!(acked.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(acked.len(), sent.len(), "stale resends must not be acknowledged");
}

#[test]
fn stalled_consumer_leaves_tick_cadence_alone() {
    let run = |stall: bool| {
        let cfg = GatewayConfig {
            pacing: Pacing::Realtime { time_scale: 1.0 },
            stop_after_ticks: Some(1500),
            queue_capacity: 8,
            ..Default::default()
        };
        let server = serve(bind("127.0.0.1:0").unwrap(), session(), cfg).unwrap();
        let mut hold = Vec::new();
        let local = stall.then(|| server.attach_local(Role::Spectator, "").unwrap());
        if stall {
            // A network spectator that joins and then never reads.
            let mut s = TcpStream::connect(server.local_addr()).unwrap();
            s.write_all(&encode(&WireMessage::Join { role: Role::Spectator, token: String::new() })).unwrap();
            hold.push(s);
        }
        let out = server.wait().unwrap();
        if let Some(l) = &local {
            assert!(l.was_evicted());
        }
        out.report
    };
    let base = run(false);
    let stalled = run(true);
    assert!(stalled.slow_consumers >= 1);
    assert_eq!(base.ticks, stalled.ticks);
    let dt = 1e-3;
    for r in [&base, &stalled] {
        assert!((r.cadence.mean - dt).abs() < 0.1 * dt, "mean interval {}", r.cadence.mean);
    }
    assert!(
        stalled.cadence.p99 <= base.cadence.p99 + 2e-3,
        "p99 {} vs baseline {}",
        stalled.cadence.p99,
        base.cadence.p99
    );
}

#[test]
fn websocket_and_static_assets_share_the_port() {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<!doctype html><title>ui</title>").unwrap();
    let cfg = GatewayConfig { ui_dir: Some(ui.path().to_path_buf()), ..Default::default() };
    let server = serve(bind("127.0.0.1:0").unwrap(), session(), cfg).unwrap();
    let addr = server.local_addr();

    let mut http = TcpStream::connect(addr).unwrap();
    http.write_all(b"GET / HTTP/1.1\r\nHost: x\r\n\r\n").unwrap();
    let mut resp = String::new();
    http.read_to_string(&mut resp).unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"));
    assert!(resp.ends_with("<title>ui</title>"));

    let mut miss = TcpStream::connect(addr).unwrap();
    miss.write_all(b"GET /../secret HTTP/1.1\r\nHost: x\r\n\r\n").unwrap();
    let mut resp = String::new();
    miss.read_to_string(&mut resp).unwrap();
    assert!(resp.starts_with("HTTP/1.1 404"));

    let stream = TcpStream::connect(addr).unwrap();
    let (mut ws, _) = tungstenite::client(format!("ws://{addr}/session"), stream).unwrap();
    ws.send(tungstenite::Message::Binary(encode(&WireMessage::Join { role: Role::Spectator, token: String::new() })))
        .unwrap();
    let first = loop {
        if let tungstenite::Message::Binary(b) = ws.read().unwrap() {
            break decode(&b).unwrap();
        }
    };
    match first {
        WireMessage::Hello(h) => assert_eq!(h.dims, [N as u32; 3]),
        other => panic!("expected Hello, got tag {}", other.tag()),
    }
    server.stop();
    server.wait().unwrap();
}

#[test]
fn garbage_before_join_is_answered_with_an_error() {
    let server = serve(bind("127.0.0.1:0").unwrap(), session(), GatewayConfig::default()).unwrap();
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    // Valid length prefix, unknown tag.
    s.write_all(&[2, 0, 0, 0, 0x7f, 1]).unwrap();
    s.set_read_timeout(Some(WAIT)).unwrap();
    let mut len = [0u8; 4];
    s.read_exact(&mut len).unwrap();
    let mut body = vec![0u8; u32::from_le_bytes(len) as usize];
    s.read_exact(&mut body).unwrap();
    let mut frame = len.to_vec();
    frame.extend(body);
    match decode(&frame).unwrap() {
        WireMessage::Error { code, .. } => assert_eq!(code, ErrorCode::Unsupported as u16),
        other => panic!("tag {}", other.tag()),
    }
    server.stop();
    server.wait().unwrap();
}
