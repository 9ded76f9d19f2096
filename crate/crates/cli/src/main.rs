//! `pyrewatch` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage or bad input, 2 domain signal (turbid
//! water found, retriever fault, corrupt frame), 3 internal error. Every
//! error goes to stderr as `error[CODE]: message`.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use pyrewatch_core::radio::{decode, Message, RadioFrame};
use pyrewatch_core::sim::gateway::GatewayServer;
use pyrewatch_core::sim::{replay, Engine, EngineError, Outcome, ReplayError, RunSummary, ScenarioConfig, ScenarioError};
use pyrewatch_core::turbidity::{self, MonitorReport, TurbidityError, WaterClass};

const DEFAULT_MAX_TICKS: u64 = 18_000;

#[derive(Parser)]
#[command(name = "pyrewatch", version, about = "Search-and-rescue simulator and spectral water analyzer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run or replay simulations.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Run a scenario live and stream it to consoles over TCP. The clock starts
    /// when the first console connects.
    Serve(ServeArgs),
    /// Spectral turbidity analysis.
    #[command(subcommand)]
    Turbidity(TurbidityCmd),
    /// Radio frame tools.
    #[command(subcommand)]
    Frame(FrameCmd),
}

#[derive(Subcommand)]
enum SimCmd {
    /// Run a scenario to completion and print its summary.
    Run(RunArgs),
    /// Re-emit the console events of a recorded log.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_MAX_TICKS)]
    max_ticks: u64,
    /// Write the NDJSON event log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    /// Stream to the first console that connects instead of stdout.
    #[arg(long)]
    serve: bool,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 7878)]
    port: u16,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 7878)]
    port: u16,
    /// Simulated seconds per wall-clock second; 0 runs unthrottled.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_TICKS)]
    max_ticks: u64,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TurbidityCmd {
    /// BYR series per sample against a water reference.
    Analyze(AnalyzeArgs),
    /// Pick the best LDR setup from repeated calibration readings.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    ref_sample: String,
    #[arg(long, default_value_t = turbidity::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Subcommand)]
enum FrameCmd {
    /// Decode one 32-byte frame given as hex.
    Decode {
        /// 64 hex digits; spaces and colons are ignored.
        hex: String,
    },
}

#[derive(Debug)]
struct Failure {
    code: String,
    msg: String,
    exit: u8,
}

impl Failure {
    fn usage(code: &str, msg: impl Into<String>) -> Self {
        Failure { code: code.into(), msg: msg.into(), exit: 1 }
    }

    fn domain(code: &str, msg: impl Into<String>) -> Self {
        Failure { code: code.into(), msg: msg.into(), exit: 2 }
    }

    fn internal(msg: impl Into<String>) -> Self {
        Failure { code: "INTERNAL".into(), msg: msg.into(), exit: 3 }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::usage(e.code(), e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Turbidity(t) => t.into(),
            other => Failure::usage(other.code(), other.to_string()),
        }
    }
}

impl From<TurbidityError> for Failure {
    fn from(e: TurbidityError) -> Self {
        Failure::usage(e.code(), e.to_string())
    }
}

impl From<ReplayError> for Failure {
    fn from(e: ReplayError) -> Self {
        Failure::usage(e.code(), e.to_string())
    }
}

/// Result of a successful command: whether a domain signal was raised.
enum Done {
    Ok,
    Signal,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PYREWATCH_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[USAGE]: {first}");
            eprint!("{}", text.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>());
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.cmd) {
        Ok(Done::Ok) => ExitCode::SUCCESS,
        Ok(Done::Signal) => ExitCode::from(2),
        Err(f) => {
            eprintln!("error[{}]: {}", f.code, f.msg);
            ExitCode::from(f.exit)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<Done, Failure> {
    match cmd {
        Cmd::Sim(SimCmd::Run(a)) => sim_run(a),
        Cmd::Sim(SimCmd::Replay(a)) => sim_replay(a),
        Cmd::Serve(a) => serve(a),
        Cmd::Turbidity(TurbidityCmd::Analyze(a)) => turbidity_analyze(a),
        Cmd::Turbidity(TurbidityCmd::Calibrate(a)) => turbidity_calibrate(a),
        Cmd::Frame(FrameCmd::Decode { hex }) => frame_decode(&hex),
    }
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| Failure::usage("IO", format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::internal(format!("cannot write {}: {e}", path.display())))
}

fn stdout_line(s: &str) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{s}").map_err(|e| Failure::internal(format!("stdout: {e}")))
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn outcome_signal(s: &RunSummary) -> Done {
    if s.outcome == Outcome::Fault {
        Done::Signal
    } else {
        Done::Ok
    }
}

fn sim_run(a: RunArgs) -> Result<Done, Failure> {
    let cfg = load_scenario(&a.scenario, a.seed)?;
    let mut engine = Engine::new(cfg)?;
    let summary = engine.run_to_end(a.max_ticks);
    if let Some(path) = &a.log {
        write_file(path, engine.log().as_ndjson().as_bytes())?;
    }
    stdout_line(&serde_json::to_string(&summary).expect("summary serializes"))?;
    log::info!("{:?} after {} ticks", summary.outcome, summary.ticks);
    Ok(outcome_signal(&summary))
}

fn sim_replay(a: ReplayArgs) -> Result<Done, Failure> {
    let src = BufReader::new(open(&a.log)?);
    if !a.serve {
        for line in replay(src) {
            stdout_line(&line?)?;
        }
        return Ok(Done::Ok);
    }
    let server = bind(&a.host, a.port)?;
    eprintln!("replay gateway listening on {}", server.local_addr());
    server.wait_for_client(Duration::MAX);
    let mut result = Ok(Done::Ok);
    for line in replay(src) {
        match line {
            Ok(l) => server.publish(l),
            Err(e) => {
                result = Err(e.into());
                break;
            }
        }
    }
    server.close();
    result
}

fn bind(host: &str, port: u16) -> Result<GatewayServer, Failure> {
    GatewayServer::bind(&format!("{host}:{port}")).map_err(|e| Failure::usage("IO", format!("cannot bind {host}:{port}: {e}")))
}

fn serve(a: ServeArgs) -> Result<Done, Failure> {
    if !(a.speed >= 0.0 && a.speed.is_finite()) {
        return Err(Failure::usage("USAGE", "--speed must be a non-negative number"));
    }
    let cfg = load_scenario(&a.scenario, a.seed)?;
    let tick_wall = if a.speed > 0.0 { Some(Duration::from_secs_f64(cfg.dt_s() / a.speed)) } else { None };
    let mut engine = Engine::new(cfg)?;
    let server = bind(&a.host, a.port)?;
    eprintln!("gateway listening on {}", server.local_addr());
    // the clock starts with the first console so it sees the whole run
    server.wait_for_client(Duration::MAX);
    let start = Instant::now();
    let mut steps: u32 = 0;
    while engine.outcome().is_none() && engine.tick() < a.max_ticks {
        for msg in server.poll_commands() {
            engine.push_inbound(msg);
        }
        engine.step();
        for line in engine.drain_gateway() {
            server.publish(line);
        }
        steps = steps.saturating_add(1);
        match tick_wall {
            Some(dt) => {
                let due = start + dt * steps;
                if let Some(wait) = due.checked_duration_since(Instant::now()) {
                    std::thread::sleep(wait);
                }
            }
            None if engine.is_paused() => std::thread::sleep(Duration::from_millis(10)),
            None => {}
        }
    }
    let summary = engine.run_to_end(engine.tick());
    for line in engine.drain_gateway() {
        server.publish(line);
    }
    server.close();
    if let Some(path) = &a.log {
        write_file(path, engine.log().as_ndjson().as_bytes())?;
    }
    stdout_line(&serde_json::to_string(&summary).expect("summary serializes"))?;
    Ok(outcome_signal(&summary))
}

fn class_name(c: Option<WaterClass>) -> &'static str {
    match c {
        Some(WaterClass::Clear) => "Clear",
        Some(WaterClass::Turbid) => "Turbid",
        None => "-",
    }
}

fn print_reports(reports: &[MonitorReport]) -> Result<(), Failure> {
    stdout_line(&format!("{:<12} {:>8} {:>8}  {}", "sample", "t_hours", "byr", "class"))?;
    for r in reports {
        for p in &r.points {
            let ratio = p.ratio.map_or("-".to_string(), |x| format!("{x:.4}"));
            let note = p.error.as_deref().map(|e| format!("  ({e})")).unwrap_or_default();
            stdout_line(&format!("{:<12} {:>8} {:>8}  {}{note}", r.sample_id, p.t_hours, ratio, class_name(p.classification)))?;
        }
        let first = r.first_turbid_t.map_or("none".to_string(), |t| t.to_string());
        stdout_line(&format!("{}: first_turbid_t {first}", r.sample_id))?;
    }
    Ok(())
}

fn turbidity_analyze(a: AnalyzeArgs) -> Result<Done, Failure> {
    if a.threshold.is_nan() || a.threshold <= 0.0 {
        return Err(Failure::usage("USAGE", "--threshold must be positive"));
    }
    let series = turbidity::read_series(open(&a.csv)?)?;
    let reports = turbidity::analyze(&series, &a.ref_sample, a.threshold)?;
    print_reports(&reports)?;
    if let Some(path) = &a.json {
        let doc = serde_json::json!({ "ref_sample": a.ref_sample, "threshold": a.threshold, "reports": reports });
        write_file(path, (serde_json::to_string_pretty(&doc).expect("report serializes") + "\n").as_bytes())?;
    }
    Ok(if reports.iter().any(MonitorReport::any_turbid) { Done::Signal } else { Done::Ok })
}

fn turbidity_calibrate(a: CalibrateArgs) -> Result<Done, Failure> {
    let batches = turbidity::read_calibration(open(&a.csv)?)?;
    let report = turbidity::select_calibration(&batches)?;
    stdout_line(&serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(Done::Ok)
}

fn frame_decode(text: &str) -> Result<Done, Failure> {
    let clean: String = text.chars().filter(|c| !c.is_whitespace() && *c != ':').collect();
    let bytes = hex::decode(&clean).map_err(|e| Failure::usage("HEX", format!("not hex: {e}")))?;
    let frame: RadioFrame = decode(&bytes).map_err(|e| Failure::domain(e.code(), e.to_string()))?;
    let message = if Message::is_fragmented(frame.msg_type) {
        serde_json::json!({ "fragment": frame.payload[0] >> 4, "of": frame.payload[0] & 0x0f })
    } else {
        match Message::parse(&frame) {
            Ok(m) => serde_json::to_value(m).expect("message serializes"),
            Err(e) => return Err(Failure::domain(e.code(), e.to_string())),
        }
    };
    let doc = serde_json::json!({
        "msg_type": frame.msg_type,
        "sender_id": frame.sender_id,
        "seq": frame.seq,
        "payload_hex": hex::encode(frame.payload),
        "message": message,
    });
    stdout_line(&doc.to_string())?;
    Ok(Done::Ok)
}
