use std::net::{IpAddr, Ipv4Addr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crucible_core::beacon::{derive_beacon, fetch_latest, PollSchedule, DEFAULT_API_URL};
use crucible_core::chaoshash::{ChaosHashParams, ChaosKey};
use crucible_core::crucible::{
    crucible_beacon, generate_chaos_profile, generate_nizkp_profiles, generate_profile, validate_commands, Scheme,
    SchemeMaterial, TranscriptHash,
};
use crucible_core::hash::{Blake2bKeyed, KeyedHash};
use crucible_core::knock::prepare_knock;
use crucible_core::server::{run, BeaconConfig, ExecMode, LogSink, ProfileSource, ServerConfig};
use crucible_core::transport::send_knock;
use crucible_core::{derive_key, derive_knock, derive_port, KnockKey, Profile, UdpTransport};
use rand::Rng;
use serde::Deserialize;

use crate::input::{self, Input};
use crate::{BeaconShowArgs, Failure, GenProfileArgs, KnockArgs, SchemeArg, ServeArgs, TranscriptArg};

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::config(e.to_string())
}

fn scheme_of(arg: SchemeArg) -> Scheme {
    match arg {
        SchemeArg::Crucible => Scheme::Crucible,
        SchemeArg::ChaosBeacon => Scheme::ChaosBeacon,
        SchemeArg::Nizkp => Scheme::Nizkp,
    }
}

fn parse_command_flags(flags: &[String]) -> Result<Vec<(String, String)>, Failure> {
    flags
        .iter()
        .map(|f| {
            f.split_once('=')
                .map(|(n, c)| (n.to_string(), c.to_string()))
                .ok_or_else(|| Failure::config(format!("--command expects NAME=SHELL, got {f:?}")))
        })
        .collect()
}

/// Reads commands the way the original setup script did: a shell command,
/// then its name, until an empty command line.
fn prompt_commands(input: &mut Input) -> Result<Vec<(String, String)>, Failure> {
    let mut out: Vec<(String, String)> = Vec::new();
    loop {
        let command = match input.prompt("Enter shell command to run on authentication, or hit enter to finish:")? {
            Some(c) if !c.trim().is_empty() => c,
            _ => break,
        };
        loop {
            let Some(name) = input.prompt("Enter a name for this command:")? else {
                return Err(Failure::config("input ended before the command was named"));
            };
            let taken = out.iter().any(|(n, _)| *n == name);
            if taken || validate_commands([(name.as_str(), command.as_str())]).is_err() {
                eprintln!("Invalid command name.");
                continue;
            }
            out.push((name, command));
            break;
        }
    }
    if out.is_empty() {
        return Err(Failure::config("no commands given"));
    }
    Ok(out)
}

fn save(profile: &Profile, path: &Path) -> Result<(), Failure> {
    profile.save(path).map_err(config_err)?;
    eprintln!("Profile written to {}", path.display());
    Ok(())
}

pub fn gen_profile(a: GenProfileArgs) -> Result<(), Failure> {
    let mut input = Input::new();
    let mut rng = rand::thread_rng();
    let flagged = parse_command_flags(&a.commands)?;
    let port = a.port.unwrap_or_else(|| rng.gen_range(1024..=u16::MAX));

    match a.scheme {
        SchemeArg::Crucible => {
            let kdf = a.kdf.params();
            kdf.validate().map_err(config_err)?;
            let password = input::password(&a.password, None, &mut input)?;
            let commands = if flagged.is_empty() { prompt_commands(&mut input)? } else { flagged };
            validate_commands(commands.iter().map(|(n, c)| (n.as_str(), c.as_str()))).map_err(config_err)?;
            eprintln!("[+] Deriving key...");
            let profile = generate_profile(&password, &commands, kdf).map_err(config_err)?;
            save(&profile, &a.out)
        }
        SchemeArg::ChaosBeacon => {
            let commands = if flagged.is_empty() { prompt_commands(&mut input)? } else { flagged };
            let params = ChaosHashParams::new(a.iterations, 256).map_err(config_err)?;
            let profile = generate_chaos_profile(&commands, port, params, &mut rng).map_err(config_err)?;
            save(&profile, &a.out)
        }
        SchemeArg::Nizkp => {
            let client_out = a.client_out.as_deref().ok_or_else(|| Failure::config("nizkp needs --client-out"))?;
            let commands = if flagged.is_empty() { prompt_commands(&mut input)? } else { flagged };
            let hash = match a.transcript_hash {
                TranscriptArg::Chaos => TranscriptHash::Chaos {
                    key: ChaosKey::random(&mut rng),
                    params: ChaosHashParams::new(a.iterations, 256).map_err(config_err)?,
                },
                TranscriptArg::Blake2b => TranscriptHash::Blake2b { key: rng.gen::<[u8; 32]>().to_vec() },
            };
            eprintln!("[+] Generating group parameters...");
            let (server, client) =
                generate_nizkp_profiles(&commands, a.p_bits, a.q_bits, &a.user_id, port, hash, &mut rng)
                    .map_err(config_err)?;
            save(&server, &a.out)?;
            save(&client, client_out)
        }
    }
}

fn resolve(host: &str) -> Result<IpAddr, Failure> {
    let addrs: Vec<_> = (host, 1u16)
        .to_socket_addrs()
        .map_err(|e| Failure::config(format!("cannot resolve {host}: {e}")))?
        .collect();
    addrs
        .iter()
        .find(|a| a.is_ipv4())
        .or(addrs.first())
        .map(|a| a.ip())
        .ok_or_else(|| Failure::config(format!("{host} has no addresses")))
}

pub fn knock(a: KnockArgs) -> Result<(), Failure> {
    let legacy = match a.positional.len() {
        0 => None,
        3 => Some((&a.positional[0], &a.positional[1], &a.positional[2])),
        _ => return Err(Failure::config("positional form is IP PASSWORD COMMAND")),
    };
    if legacy.is_some() && (a.ip.is_some() || a.command.is_some() || input::has_password(&a.password)) {
        return Err(Failure::config("use either IP PASSWORD COMMAND or the flags, not both"));
    }
    let host = a.ip.as_deref().or(legacy.map(|l| l.0.as_str())).ok_or_else(|| Failure::config("missing --ip"))?;
    let ip = resolve(host)?;
    let profile = a.profile.as_deref().map(Profile::load).transpose().map_err(config_err)?;

    let mut input = Input::new();
    let key = match &profile {
        Some(p) => match &p.material {
            SchemeMaterial::Crucible { key, .. } => Some(key.clone()),
            _ => None,
        },
        None => {
            let kdf = a.kdf.params();
            kdf.validate().map_err(config_err)?;
            let password = input::password(&a.password, legacy.map(|l| l.1.as_str()), &mut input)?;
            eprintln!("[+] Deriving key...");
            Some(derive_key(&password, &kdf).map_err(config_err)?)
        }
    };
    let name = match a.command.clone().or(legacy.map(|l| l.2.clone())) {
        Some(n) => n,
        None => input.prompt("Enter command name:")?.ok_or_else(|| Failure::config("no command name"))?,
    };

    let needs_beacon = profile.as_ref().map_or(true, |p| p.scheme().uses_beacon());
    let block = if needs_beacon {
        eprintln!("[+] Harvesting beacon...");
        let mut source = a.beacon.source();
        Some(fetch_latest(source.as_mut()).map_err(|e| Failure::new(Failure::BEACON, e.to_string()))?)
    } else {
        None
    };

    eprintln!("[+] Generating knock...");
    let (payload, port) = match (&key, &block) {
        (Some(key), Some(block)) => {
            let beacon = crucible_beacon(key, block);
            let payload = derive_knock(key, &beacon, &name).map_err(config_err)?;
            eprintln!("[+] Calculating port...");
            (payload.into_bytes(), derive_port(key, &beacon).map_err(config_err)?)
        }
        _ => {
            let profile = profile.as_ref().expect("no key means a profile was given");
            let k = prepare_knock(profile, block.as_ref(), &name, &mut rand::thread_rng()).map_err(config_err)?;
            eprintln!("[+] Calculating port...");
            (k.payload, k.port)
        }
    };
    let port = a.port.unwrap_or(port);

    eprintln!("[+] Sending knock...");
    send_knock(&UdpTransport::default(), &payload, ip, port).map_err(|e| Failure::new(Failure::SEND, e.to_string()))?;
    eprintln!("[+] Knock sent to {host} {port}");
    Ok(())
}

/// Defaults for `serve`, read from `--config`. Flags win over the file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServeFile {
    profile: Option<PathBuf>,
    scheme: Option<String>,
    beacon_url: Option<String>,
    beacon_file: Option<PathBuf>,
    beacon_timeout: Option<u64>,
    dry_run: Option<bool>,
    log: Option<String>,
    bind: Option<IpAddr>,
    long_wait: Option<u64>,
    short_wait: Option<u64>,
    startup_timeout: Option<u64>,
}

impl ServeFile {
    fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }
}

pub fn serve(a: ServeArgs) -> Result<(), Failure> {
    let file = a.config.as_deref().map(ServeFile::load).transpose()?.unwrap_or_default();
    let profile = a.profile.or(file.profile).ok_or_else(|| Failure::config("missing --profile"))?;
    let scheme = match (a.scheme, &file.scheme) {
        (Some(s), _) => Some(scheme_of(s)),
        (None, Some(s)) => Some(s.parse::<Scheme>().map_err(config_err)?),
        (None, None) => None,
    };
    let timeout = Duration::from_secs(file.beacon_timeout.unwrap_or(a.beacon.beacon_timeout));
    let beacon = match (a.beacon.beacon_file, a.beacon.beacon_url, file.beacon_file, file.beacon_url) {
        (Some(path), ..) => BeaconConfig::File(path),
        (None, Some(url), ..) => BeaconConfig::Url { url, timeout },
        (None, None, Some(path), _) => BeaconConfig::File(path),
        (None, None, None, url) => BeaconConfig::Url { url: url.unwrap_or_else(|| DEFAULT_API_URL.to_string()), timeout },
    };
    let defaults = PollSchedule::default();
    let secs = |flag: Option<u64>, file: Option<u64>, default: Duration| {
        flag.or(file).map(Duration::from_secs).unwrap_or(default)
    };
    let schedule = PollSchedule {
        long_wait: secs(a.long_wait, file.long_wait, defaults.long_wait),
        short_wait: secs(a.short_wait, file.short_wait, defaults.short_wait),
    };
    let log = match a.log.or(file.log).as_deref() {
        None | Some("-") => LogSink::Stdout,
        Some(path) => LogSink::File(path.into()),
    };
    let bind = a.bind.or(file.bind).unwrap_or(IpAddr::V4(Ipv4Addr::UNSPECIFIED));

    let config = ServerConfig {
        profile: ProfileSource::Path(profile),
        scheme,
        beacon,
        schedule,
        mode: if a.dry_run || file.dry_run == Some(true) { ExecMode::DryRun } else { ExecMode::Execute },
        log,
        events: None,
        transport: Arc::new(UdpTransport::new(bind)),
        startup_timeout: secs(a.startup_timeout, file.startup_timeout, Duration::from_secs(60)),
    };
    let handle = run(config).map_err(|e| Failure::new(e.exit_code() as u8, e.to_string()))?;
    let stop = handle.stop_signal();
    if let Err(e) = ctrlc::set_handler(move || stop.stop()) {
        log::warn!("cannot install signal handler: {e}");
    }
    handle.join();
    eprintln!("Exiting...");
    Ok(())
}

pub fn beacon_show(a: BeaconShowArgs) -> Result<(), Failure> {
    let hash: Option<Arc<dyn KeyedHash>> = if let Some(hex) = &a.key {
        let key = KnockKey::from_hex(hex).map_err(config_err)?;
        Some(Arc::new(Blake2bKeyed::b512(key.as_bytes()).map_err(config_err)?))
    } else if let Some(path) = &a.profile {
        match Profile::load(path).map_err(config_err)?.material {
            SchemeMaterial::Crucible { key, .. } => Some(Arc::new(Blake2bKeyed::b512(key.as_bytes()).map_err(config_err)?)),
            SchemeMaterial::ChaosBeacon(m) => Some(Arc::new(m.hasher())),
            SchemeMaterial::Nizkp(_) => return Err(Failure::config("nizkp profiles do not use a beacon")),
        }
    } else if input::has_password(&a.password) {
        let kdf = a.kdf.params();
        kdf.validate().map_err(config_err)?;
        let password = input::password(&a.password, None, &mut Input::new())?;
        let key = derive_key(&password, &kdf).map_err(config_err)?;
        Some(Arc::new(Blake2bKeyed::b512(key.as_bytes()).map_err(config_err)?))
    } else {
        None
    };

    let mut source = a.beacon.source();
    let block = fetch_latest(source.as_mut()).map_err(|e| Failure::new(Failure::BEACON, e.to_string()))?;
    println!("height: {}", block.height());
    println!("header_hash: {}", hex::encode(block.header_hash_bytes()));
    if let Some(h) = hash {
        println!("beacon: {}", derive_beacon(&block, h.as_ref()).hex());
    }
    Ok(())
}
