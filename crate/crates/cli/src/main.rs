use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crucible_core::beacon::{BeaconSource, FileSource, HttpSource, DEFAULT_API_URL};
use crucible_core::KdfParams;

mod commands;
mod input;

/// Single-packet port knocking with beacon-derived knocks.
#[derive(Parser)]
#[command(name = "crucible", version, about)]
struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a server profile, prompting for commands unless --command is given.
    GenProfile(GenProfileArgs),
    /// Send one knock to a server.
    Knock(KnockArgs),
    /// Run the knock server.
    Serve(ServeArgs),
    /// Print the latest block and, given a key, the beacon derived from it.
    BeaconShow(BeaconShowArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Crucible,
    ChaosBeacon,
    Nizkp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TranscriptArg {
    Chaos,
    Blake2b,
}

#[derive(Args)]
struct PasswordArgs {
    /// Password on the command line. Visible to other users and shell history.
    #[arg(long, conflicts_with = "password_stdin")]
    password: Option<String>,
    /// Read the password from the first line of standard input.
    #[arg(long)]
    password_stdin: bool,
}

#[derive(Args)]
struct KdfArgs {
    /// Argon2i passes.
    #[arg(long, default_value_t = 20)]
    kdf_rounds: u32,
    /// Argon2i memory in KiB.
    #[arg(long, default_value_t = 250_000)]
    kdf_memory: u32,
    /// Argon2i lanes.
    #[arg(long, default_value_t = 2)]
    kdf_parallelism: u32,
    #[arg(long, default_value = "salted pork")]
    kdf_salt: String,
    /// Use the legacy key encoding (16-byte output, base64 tail).
    #[arg(long)]
    kdf_legacy: bool,
}

impl KdfArgs {
    fn params(&self) -> KdfParams {
        let base = if self.kdf_legacy { KdfParams::legacy() } else { KdfParams::default() };
        KdfParams {
            rounds: self.kdf_rounds,
            memory_kib: self.kdf_memory,
            parallelism: self.kdf_parallelism,
            salt: self.kdf_salt.as_bytes().to_vec(),
            ..base
        }
    }
}

#[derive(Args)]
struct BeaconArgs {
    /// Block API endpoint.
    #[arg(long, env = "KNOCK_BEACON_URL")]
    beacon_url: Option<String>,
    /// Read the block from a saved API response; overrides the URL.
    #[arg(long)]
    beacon_file: Option<PathBuf>,
    /// HTTP timeout in seconds.
    #[arg(long, default_value_t = 10)]
    beacon_timeout: u64,
}

impl BeaconArgs {
    fn source(&self) -> Box<dyn BeaconSource> {
        match &self.beacon_file {
            Some(path) => Box::new(FileSource::new(path)),
            None => Box::new(HttpSource::new(self.url(), Duration::from_secs(self.beacon_timeout))),
        }
    }

    fn url(&self) -> String {
        self.beacon_url.clone().unwrap_or_else(|| DEFAULT_API_URL.to_string())
    }
}

#[derive(Args)]
struct GenProfileArgs {
    /// Where to write the (server) profile.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SchemeArg::Crucible)]
    scheme: SchemeArg,
    /// NAME=SHELL; repeatable. Without it commands are read interactively.
    #[arg(long = "command", value_name = "NAME=SHELL")]
    commands: Vec<String>,
    #[command(flatten)]
    password: PasswordArgs,
    #[command(flatten)]
    kdf: KdfArgs,
    /// Knock port for the chaos-beacon and nizkp schemes (random if omitted).
    #[arg(long)]
    port: Option<u16>,
    /// Chaos hash rounds per message byte.
    #[arg(long, default_value_t = 64)]
    iterations: u32,
    /// Client profile output for the nizkp scheme.
    #[arg(long)]
    client_out: Option<PathBuf>,
    #[arg(long, default_value_t = 2048)]
    p_bits: u64,
    #[arg(long, default_value_t = 256)]
    q_bits: u64,
    #[arg(long, default_value = "client")]
    user_id: String,
    /// Hash for nizkp proof transcripts.
    #[arg(long, value_enum, default_value_t = TranscriptArg::Chaos)]
    transcript_hash: TranscriptArg,
}

#[derive(Args)]
struct KnockArgs {
    /// Legacy form: IP PASSWORD COMMAND.
    #[arg(value_name = "ARGS", num_args = 0..=3)]
    positional: Vec<String>,
    /// Server address or host name.
    #[arg(long)]
    ip: Option<String>,
    /// Command name to authorize.
    #[arg(long)]
    command: Option<String>,
    /// Client profile, for the chaos-beacon and nizkp schemes.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Send to this port instead of the derived one.
    #[arg(long)]
    port: Option<u16>,
    #[command(flatten)]
    password: PasswordArgs,
    #[command(flatten)]
    kdf: KdfArgs,
    #[command(flatten)]
    beacon: BeaconArgs,
}

#[derive(Args)]
struct ServeArgs {
    /// TOML file with defaults for the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Refuse to start unless the profile is of this scheme.
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[command(flatten)]
    beacon: BeaconArgs,
    /// Log authorizations without running commands.
    #[arg(long)]
    dry_run: bool,
    /// Event log destination; `-` for standard output.
    #[arg(long)]
    log: Option<String>,
    /// Local address to listen on.
    #[arg(long)]
    bind: Option<std::net::IpAddr>,
    /// Seconds between polls while the block is unchanged.
    #[arg(long)]
    long_wait: Option<u64>,
    /// Seconds between polls after a change or failure.
    #[arg(long)]
    short_wait: Option<u64>,
    /// Seconds to keep trying for the first beacon.
    #[arg(long)]
    startup_timeout: Option<u64>,
}

#[derive(Args)]
struct BeaconShowArgs {
    #[command(flatten)]
    beacon: BeaconArgs,
    /// Knock key as hex.
    #[arg(long, conflicts_with_all = ["profile", "password", "password_stdin"])]
    key: Option<String>,
    /// Take the beacon key from a crucible or chaos-beacon profile.
    #[arg(long, conflicts_with_all = ["password", "password_stdin"])]
    profile: Option<PathBuf>,
    #[command(flatten)]
    password: PasswordArgs,
    #[command(flatten)]
    kdf: KdfArgs,
}

/// A failed invocation: what to print and the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const CONFIG: u8 = 2;
    pub const BEACON: u8 = 4;
    pub const SEND: u8 = 5;

    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Self::CONFIG, message)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::GenProfile(a) => commands::gen_profile(a),
        Command::Knock(a) => commands::knock(a),
        Command::Serve(a) => commands::serve(a),
        Command::BeaconShow(a) => commands::beacon_show(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
