use std::net::{IpAddr, Ipv4Addr};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver};
use crucible_core::beacon::{BlockInfo, FixedSource, PollSchedule, ScriptedSource};
use crucible_core::crucible::{generate_nizkp_profiles, generate_profile, KdfParams, Profile, Scheme, TranscriptHash};
use crucible_core::knock::{crucible_knock_from_password, prepare_knock};
use crucible_core::server::{
    run, AuthEvent, BeaconConfig, ExecMode, LogSink, Outcome, ProfileSource, ServerConfig, ServerEvent,
    ServerHandle,
};
use crucible_core::transport::{send_knock, SimNetwork, Transport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SERVER: IpAddr = IpAddr::V4(Ipv4Addr::new(10, 0, 0, 1));
const CLIENT: IpAddr = IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2));
const PASSWORD: &str = "correct horse";

fn kdf() -> KdfParams {
    KdfParams { rounds: 1, memory_kib: 64, parallelism: 1, ..KdfParams::default() }
}

fn block(h: u64) -> BlockInfo {
    BlockInfo::new(format!("{{\"height\":{h},\"hash\":\"{h:064x}\"}}").into_bytes(), vec![h as u8; 32], h).unwrap()
}

fn profile(commands: &[(&str, &str)]) -> Profile {
    let cmds: Vec<_> = commands.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    generate_profile(PASSWORD, &cmds, kdf()).unwrap()
}

fn config(profile: Profile, beacon: BeaconConfig, net: &SimNetwork, mode: ExecMode) -> (ServerConfig, Receiver<ServerEvent>) {
    let (tx, rx) = unbounded();
    let cfg = ServerConfig {
        profile: ProfileSource::Inline(profile),
        scheme: None,
        beacon,
        schedule: PollSchedule { long_wait: Duration::from_millis(5), short_wait: Duration::from_millis(5) },
        mode,
        log: LogSink::Discard,
        events: Some(tx),
        transport: Arc::new(net.endpoint(SERVER)),
        startup_timeout: Duration::from_secs(2),
    };
    (cfg, rx)
}

fn next_auth(rx: &Receiver<ServerEvent>) -> AuthEvent {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left).expect("auth event") {
            ServerEvent::Auth(e) => return e,
            _ => continue,
        }
    }
}

fn wait_port_change(handle: &ServerHandle, old: u16) -> u16 {
    let deadline = Instant::now() + Duration::from_secs(10);
    while handle.port() == old {
        assert!(Instant::now() < deadline, "listener never moved");
        std::thread::sleep(Duration::from_millis(5));
    }
    handle.port()
}

fn knock(net: &SimNetwork, payload: &[u8], port: u16) {
    send_knock(&net.endpoint(CLIENT), payload, SERVER, port).unwrap();
}

#[test]
fn knock_then_replay_then_second_command() {
    let net = SimNetwork::new();
    let (cfg, rx) = config(profile(&[("cmd1", "true"), ("cmd2", "true")]), BeaconConfig::Fixed(block(7)), &net, ExecMode::DryRun);
    let handle = run(cfg).unwrap();
    let k1 = crucible_knock_from_password(PASSWORD, &kdf(), &block(7), "cmd1").unwrap();
    assert_eq!(handle.port(), k1.port);

    knock(&net, &k1.payload, k1.port);
    let e = next_auth(&rx);
    assert_eq!((e.outcome, e.command_name.as_deref(), e.beacon_height), (Outcome::Authorized, Some("cmd1"), Some(7)));
    knock(&net, &k1.payload, k1.port);
    assert_eq!(next_auth(&rx).outcome, Outcome::Replayed);
    let k2 = crucible_knock_from_password(PASSWORD, &kdf(), &block(7), "cmd2").unwrap();
    knock(&net, &k2.payload, k2.port);
    assert_eq!(next_auth(&rx).command_name.as_deref(), Some("cmd2"));

    let wrong = crucible_knock_from_password("incorrect horse", &kdf(), &block(7), "cmd1").unwrap();
    knock(&net, &wrong.payload, k1.port);
    assert_eq!(next_auth(&rx).outcome, Outcome::NoMatch);
    handle.stop();
}

#[test]
fn beacon_change_moves_port_and_expires_payloads() {
    let net = SimNetwork::new();
    let script = ScriptedSource::blocks([block(1)]).shared();
    let (cfg, rx) = config(profile(&[("cmd1", "true")]), BeaconConfig::Source(Box::new(script.clone())), &net, ExecMode::DryRun);
    let handle = run(cfg).unwrap();
    let old = crucible_knock_from_password(PASSWORD, &kdf(), &block(1), "cmd1").unwrap();
    assert_eq!(handle.port(), old.port);

    // Pick a next block whose port differs so the move is observable.
    let next = (2..).map(block).find(|b| {
        crucible_knock_from_password(PASSWORD, &kdf(), b, "cmd1").unwrap().port != old.port
    });
    let next = next.unwrap();
    script.push(Ok(next.clone()));
    let fresh = crucible_knock_from_password(PASSWORD, &kdf(), &next, "cmd1").unwrap();
    assert_eq!(wait_port_change(&handle, old.port), fresh.port);

    knock(&net, &old.payload, fresh.port);
    assert_eq!(next_auth(&rx).outcome, Outcome::NoMatch);
    knock(&net, &fresh.payload, fresh.port);
    assert_eq!(next_auth(&rx).outcome, Outcome::Authorized);
    // Nothing listens on the old port any more.
    knock(&net, &old.payload, old.port);
    assert!(!net.is_bound((SERVER, old.port).into()));
    handle.stop();
}

#[test]
fn dry_run_spawns_nothing_and_execute_runs() {
    let dir = tempfile::tempdir().unwrap();
    let marker = dir.path().join("ran");
    let cmd = format!("touch {}", marker.display());

    let net = SimNetwork::new();
    let (cfg, rx) = config(profile(&[("mark", &cmd)]), BeaconConfig::Fixed(block(3)), &net, ExecMode::DryRun);
    let handle = run(cfg).unwrap();
    let k = crucible_knock_from_password(PASSWORD, &kdf(), &block(3), "mark").unwrap();
    knock(&net, &k.payload, k.port);
    assert_eq!(next_auth(&rx).outcome, Outcome::Authorized);
    handle.stop();
    assert!(rx.try_iter().all(|e| !matches!(e, ServerEvent::Exec(_))));
    assert!(!marker.exists());

    let net = SimNetwork::new();
    let (cfg, rx) = config(
        profile(&[("mark", &cmd), ("fail", "exit 3"), ("slow", "sleep 2")]),
        BeaconConfig::Fixed(block(3)),
        &net,
        ExecMode::Execute,
    );
    let handle = run(cfg).unwrap();
    for name in ["slow", "fail", "mark"] {
        let k = crucible_knock_from_password(PASSWORD, &kdf(), &block(3), name).unwrap();
        knock(&net, &k.payload, k.port);
    }
    // All three knocks are handled while the slow command still runs.
    let started = Instant::now();
    for _ in 0..3 {
        assert_eq!(next_auth(&rx).outcome, Outcome::Authorized);
    }
    assert!(started.elapsed() < Duration::from_millis(1500));
    let mut execs = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(10);
    while execs.len() < 3 {
        if let ServerEvent::Exec(r) = rx.recv_timeout(deadline - Instant::now()).unwrap() {
            execs.push(r);
        }
    }
    let code = |n: &str| execs.iter().find(|r| r.command_name == n).unwrap().exit_code;
    assert_eq!((code("slow"), code("fail"), code("mark")), (Some(0), Some(3), Some(0)));
    assert!(marker.exists());
    handle.stop();
}

#[test]
fn startup_failures_have_distinct_codes() {
    let net = SimNetwork::new();
    let (mut cfg, _) = config(profile(&[("a", "true")]), BeaconConfig::Fixed(block(1)), &net, ExecMode::DryRun);
    cfg.profile = ProfileSource::Path("/nonexistent/profile.json".into());
    assert_eq!(run(cfg).err().unwrap().exit_code(), 2);

    let (mut cfg, _) = config(profile(&[("a", "true")]), BeaconConfig::Fixed(block(1)), &net, ExecMode::DryRun);
    cfg.scheme = Some(Scheme::Nizkp);
    assert_eq!(run(cfg).err().unwrap().exit_code(), 2);

    let (mut cfg, _) = config(
        profile(&[("a", "true")]),
        BeaconConfig::File("/nonexistent/block.json".into()),
        &net,
        ExecMode::DryRun,
    );
    cfg.startup_timeout = Duration::from_millis(50);
    assert_eq!(run(cfg).err().unwrap().exit_code(), 4);

    let port = crucible_knock_from_password(PASSWORD, &kdf(), &block(1), "a").unwrap().port;
    let _squatter = net.endpoint(SERVER).bind(port).unwrap();
    let (cfg, _) = config(profile(&[("a", "true")]), BeaconConfig::Source(Box::new(FixedSource(block(1)))), &net, ExecMode::DryRun);
    assert_eq!(run(cfg).err().unwrap().exit_code(), 3);
}

#[test]
fn nizkp_daemon_with_replay_cache() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cmds = vec![("open".to_string(), "true".to_string())];
    let (server, client) =
        generate_nizkp_profiles(&cmds, 256, 128, "bob", 4500, TranscriptHash::Blake2b { key: vec![8; 32] }, &mut rng)
            .unwrap();
    let net = SimNetwork::new();
    let (cfg, rx) = config(server, BeaconConfig::Fixed(block(1)), &net, ExecMode::DryRun);
    let handle = run(cfg).unwrap();
    assert_eq!(handle.port(), 4500);
    let k = prepare_knock(&client, None, "open", &mut rng).unwrap();
    knock(&net, &k.payload, k.port);
    assert_eq!(next_auth(&rx).outcome, Outcome::Authorized);
    knock(&net, &k.payload, k.port);
    assert_eq!(next_auth(&rx).outcome, Outcome::Replayed);
    let k2 = prepare_knock(&client, None, "open", &mut rng).unwrap();
    knock(&net, &k2.payload, k2.port);
    assert_eq!(next_auth(&rx).outcome, Outcome::Authorized);
    handle.stop();
}

#[test]
fn every_delivered_packet_yields_one_event() {
    let net = SimNetwork::new();
    let (cfg, rx) = config(profile(&[("a", "true")]), BeaconConfig::Fixed(block(9)), &net, ExecMode::DryRun);
    let handle = run(cfg).unwrap();
    let port = handle.port();
    let c = net.endpoint(CLIENT);
    for i in 0..200u32 {
        let len = if i % 4 == 0 { 64 } else { 128 };
        c.send(&vec![b'a' + (i % 6) as u8; len], (SERVER, port).into()).unwrap();
    }
    let ls = handle.listener_stats();
    let deadline = Instant::now() + Duration::from_secs(10);
    while !(ls.received() == 200 && ls.settled()) {
        assert!(Instant::now() < deadline);
        std::thread::sleep(Duration::from_millis(5));
    }
    handle.stop();
    let auths = rx.try_iter().filter(|e| matches!(e, ServerEvent::Auth(_))).count() as u64;
    assert_eq!(auths, ls.delivered());
    assert_eq!((ls.delivered(), ls.filtered()), (150, 50));
}
