//! `shareal`: run the platform service or talk to one.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use shareal_cli::Client;
use shareal_core::catalog::{AnalyticMeta, DatasetMeta, FacilityMeta, PolicyUpdate};
use shareal_core::executor::JobSpec;
use shareal_core::gateway::Service;
use shareal_core::timeseries::{synth_nilm, to_ndjson, DeviceSpec, ExtractRequest, SynthSpec};
use shareal_core::{AnalyticId, DatasetId, FacilityId, JobId, RoomId, ServiceConfig, UserId, Visibility};

#[derive(Parser)]
#[command(name = "shareal", version, about = "Collaborative analytics platform")]
struct Cli {
    /// Server base URL.
    #[arg(long, env = "SHAREAL_URL", default_value = "http://127.0.0.1:8040", global = true)]
    url: String,
    /// Session token from `shareal login`.
    #[arg(long, env = "SHAREAL_TOKEN", hide_env_values = true, global = true)]
    token: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the service in the foreground.
    Serve(ServeArgs),
    /// Log in and print a session token.
    Login {
        name: String,
        #[arg(long, env = "SHAREAL_SECRET", hide_env_values = true)]
        secret: String,
    },
    #[command(subcommand)]
    User(UserCmd),
    #[command(subcommand)]
    Dataset(DatasetCmd),
    #[command(subcommand)]
    Analytic(AnalyticCmd),
    /// List configured runtimes.
    Runtimes,
    /// Send a newline-delimited JSON telemetry file.
    Ingest { file: PathBuf },
    /// Turn a telemetry window into a CSV dataset.
    Extract {
        #[arg(long)]
        source: String,
        #[arg(long, value_delimiter = ',', required = true)]
        channels: Vec<String>,
        #[arg(long)]
        from: i64,
        #[arg(long)]
        to: i64,
        #[arg(long)]
        name: String,
    },
    #[command(subcommand)]
    Job(JobCmd),
    #[command(subcommand)]
    Facility(FacilityCmd),
    #[command(subcommand)]
    Chat(ChatCmd),
    /// Generate synthetic appliance telemetry locally as NDJSON.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ServeArgs {
    /// TOML configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    runners: Option<PathBuf>,
    #[arg(long)]
    admin_name: Option<String>,
    #[arg(long, env = "SHAREAL_ADMIN_SECRET", hide_env_values = true)]
    admin_secret: Option<String>,
    #[arg(long)]
    tick_ms: Option<u64>,
}

#[derive(Subcommand)]
enum UserCmd {
    /// Create an account (admin only).
    Add {
        name: String,
        #[arg(long)]
        secret: String,
        #[arg(long, default_value = "analyst")]
        role: String,
    },
    /// Show the logged-in account.
    Me,
}

#[derive(Args)]
struct ShareArgs {
    id: i64,
    /// private, shared or public.
    #[arg(long)]
    visibility: String,
    /// User ids for `shared`.
    #[arg(long = "with", value_delimiter = ',')]
    with: Vec<i64>,
}

#[derive(Subcommand)]
enum DatasetCmd {
    Upload {
        file: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long, value_delimiter = ',')]
        tags: Vec<String>,
        #[arg(long, default_value = "")]
        format: String,
        #[arg(long)]
        expires_at: Option<i64>,
    },
    List,
    Search { query: String },
    Share(ShareArgs),
    /// Print metadata, or write the content with `--output`.
    Get {
        id: i64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AnalyticCmd {
    Upload {
        file: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        runtime: String,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long, value_delimiter = ',')]
        tags: Vec<String>,
        /// Default parameters as a JSON object.
        #[arg(long, default_value = "{}")]
        params: String,
    },
    List {
        #[arg(default_value = "")]
        query: String,
    },
    Share(ShareArgs),
}

#[derive(Subcommand)]
enum JobCmd {
    Submit {
        #[arg(long)]
        analytic: i64,
        #[arg(long)]
        dataset: i64,
        #[arg(long, default_value = "{}")]
        params: String,
        #[arg(long)]
        timeout_ms: Option<i64>,
        /// Block until the job ends.
        #[arg(long)]
        wait: bool,
    },
    Status { id: i64 },
    Log { id: i64 },
    Result { id: i64 },
    Cancel { id: i64 },
    List {
        #[arg(long)]
        state: Option<String>,
        #[arg(long)]
        mine: bool,
    },
}

#[derive(Subcommand)]
enum FacilityCmd {
    Create {
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        location: String,
        #[arg(long, default_value = "")]
        description: String,
    },
    List {
        #[arg(default_value = "")]
        query: String,
    },
    MetricAdd {
        facility: i64,
        #[arg(long)]
        analytic: i64,
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = 1.0)]
        weight: f64,
    },
    Score {
        facility: i64,
        #[arg(long)]
        at: Option<i64>,
    },
    History {
        facility: i64,
        #[arg(long, default_value_t = 0)]
        from: i64,
        #[arg(long)]
        to: Option<i64>,
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Subcommand)]
enum ChatCmd {
    Rooms,
    Create { name: String },
    Post { room: i64, body: String },
    /// Print messages from `--from-seq` on and keep following.
    Tail {
        room: i64,
        #[arg(long, default_value_t = 1)]
        from_seq: u64,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Full specification as JSON; replaces the flags below.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// `channel:period_ms:duty:on_watts[:off_watts]`, repeatable.
    #[arg(long = "device")]
    devices: Vec<String>,
    #[arg(long, default_value = "synth")]
    source: String,
    #[arg(long, default_value_t = 0)]
    from: i64,
    #[arg(long, default_value_t = 3_600_000)]
    to: i64,
    #[arg(long, default_value_t = 1_000)]
    sample_ms: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

fn print_json<T: Serialize>(v: &T) -> CliResult {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn parse_json(text: &str) -> CliResult<Value> {
    Ok(serde_json::from_str(text).map_err(|e| format!("invalid JSON {text:?}: {e}"))?)
}

fn policy(args: &ShareArgs) -> CliResult<PolicyUpdate> {
    let visibility: Visibility = serde_json::from_value(Value::String(args.visibility.clone()))
        .map_err(|_| format!("visibility must be private, shared or public, got {:?}", args.visibility))?;
    Ok(PolicyUpdate { visibility, shared_with: args.with.iter().map(|&u| UserId(u)).collect() })
}

fn parse_device(s: &str) -> CliResult<DeviceSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    if !(4..=5).contains(&parts.len()) {
        return Err(format!("device {s:?}: expected channel:period_ms:duty:on_watts[:off_watts]").into());
    }
    Ok(DeviceSpec {
        channel: parts[0].to_string(),
        period_ms: parts[1].parse()?,
        duty: parts[2].parse()?,
        on_watts: parts[3].parse()?,
        off_watts: parts.get(4).map(|p| p.parse()).transpose()?.unwrap_or(0.0),
    })
}

fn serve(args: ServeArgs) -> CliResult {
    let mut config = match &args.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    if let Some(v) = args.listen {
        config.listen = v;
    }
    if let Some(v) = args.data_dir {
        config.data_dir = v;
    }
    if let Some(v) = args.slots {
        config.slots = v;
    }
    if let Some(v) = args.runners {
        config.runners_path = Some(v);
    }
    if let Some(v) = args.admin_name {
        config.admin_name = v;
    }
    if let Some(v) = args.admin_secret {
        config.admin_secret = Some(v);
    }
    if let Some(v) = args.tick_ms {
        config.tick_interval_ms = v;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let service = Service::start(config).await?;
        println!("listening on {}", service.local_addr());
        std::io::stdout().flush()?;
        service.run_until(stop_signal()).await?;
        Ok(())
    })
}

async fn stop_signal() {
    use tokio::signal::unix::{signal, SignalKind};
    let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = term.recv() => {}
    }
}

fn synth(args: SynthArgs) -> CliResult {
    let spec = match &args.spec {
        Some(path) => serde_json::from_slice::<SynthSpec>(&std::fs::read(path)?)?,
        None => SynthSpec {
            source: args.source,
            devices: args.devices.iter().map(|d| parse_device(d)).collect::<CliResult<_>>()?,
            from: args.from,
            to: args.to,
            sample_ms: args.sample_ms,
            seed: args.seed,
            noise_watts: args.noise,
        },
    };
    let text = to_ndjson(&synth_nilm(&spec)?);
    match args.output {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let mut client = Client::new(&cli.url);
    if let Some(t) = &cli.token {
        client = client.with_token(t.clone());
    }
    match cli.command {
        Command::Serve(args) => serve(args)?,
        Command::Synth(args) => synth(args)?,
        Command::Login { name, secret } => println!("{}", client.login(&name, &secret)?),
        Command::User(UserCmd::Add { name, secret, role }) => print_json(&client.create_user(&name, &secret, &role)?)?,
        Command::User(UserCmd::Me) => print_json(&client.me()?)?,
        Command::Dataset(cmd) => dataset(&client, cmd)?,
        Command::Analytic(cmd) => analytic(&client, cmd)?,
        Command::Runtimes => print_json(&client.runtimes()?)?,
        Command::Ingest { file } => print_json(&client.ingest(std::fs::read_to_string(file)?)?)?,
        Command::Extract { source, channels, from, to, name } => {
            print_json(&client.extract(&ExtractRequest { source, channels, from, to, name })?)?
        }
        Command::Job(cmd) => job(&client, cmd)?,
        Command::Facility(cmd) => facility(&client, cmd)?,
        Command::Chat(cmd) => chat(&client, cmd)?,
    }
    Ok(())
}

fn dataset(client: &Client, cmd: DatasetCmd) -> CliResult {
    match cmd {
        DatasetCmd::Upload { file, name, description, tags, format, expires_at } => {
            let meta = DatasetMeta {
                name,
                description,
                tags: tags.into_iter().collect(),
                format_hint: format,
                expires_at,
                ..Default::default()
            };
            print_json(&client.upload_dataset(&meta, std::fs::read(file)?)?)
        }
        DatasetCmd::List => print_json(&client.search_datasets("")?),
        DatasetCmd::Search { query } => print_json(&client.search_datasets(&query)?),
        DatasetCmd::Share(args) => print_json(&client.set_policy("datasets", args.id, &policy(&args)?)?),
        DatasetCmd::Get { id, output: None } => print_json(&client.dataset(DatasetId(id))?),
        DatasetCmd::Get { id, output: Some(path) } => Ok(std::fs::write(path, client.dataset_content(DatasetId(id))?)?),
    }
}

fn analytic(client: &Client, cmd: AnalyticCmd) -> CliResult {
    match cmd {
        AnalyticCmd::Upload { file, name, runtime, description, tags, params } => {
            let meta = AnalyticMeta {
                name,
                description,
                tags: tags.into_iter().collect(),
                runtime_id: runtime,
                default_params: parse_json(&params)?,
            };
            print_json(&client.upload_analytic(&meta, std::fs::read(file)?)?)
        }
        AnalyticCmd::List { query } => print_json(&client.search_analytics(&query)?),
        AnalyticCmd::Share(args) => print_json(&client.set_policy("analytics", args.id, &policy(&args)?)?),
    }
}

fn job(client: &Client, cmd: JobCmd) -> CliResult {
    match cmd {
        JobCmd::Submit { analytic, dataset, params, timeout_ms, wait } => {
            let spec = JobSpec { timeout_ms, ..JobSpec::new(AnalyticId(analytic), DatasetId(dataset), parse_json(&params)?) };
            let job = client.submit_job(&spec)?;
            if wait {
                print_json(&client.wait_job(job.id, Duration::from_secs(24 * 3600))?)
            } else {
                print_json(&job)
            }
        }
        JobCmd::Status { id } => print_json(&client.job(JobId(id))?),
        JobCmd::Log { id } => {
            print!("{}", client.job_log(JobId(id))?);
            Ok(())
        }
        JobCmd::Result { id } => print_json(&client.job_result(JobId(id))?),
        JobCmd::Cancel { id } => print_json(&client.cancel_job(JobId(id))?),
        JobCmd::List { state, mine } => print_json(&client.list_jobs(state.as_deref(), mine)?),
    }
}

fn facility(client: &Client, cmd: FacilityCmd) -> CliResult {
    match cmd {
        FacilityCmd::Create { name, location, description } => {
            print_json(&client.create_facility(&FacilityMeta { name, location_label: location, description })?)
        }
        FacilityCmd::List { query } => print_json(&client.search_facilities(&query)?),
        FacilityCmd::MetricAdd { facility, analytic, label, weight } => {
            print_json(&client.attach_metric(FacilityId(facility), AnalyticId(analytic), &label, weight)?)
        }
        FacilityCmd::Score { facility, at } => print_json(&client.score(FacilityId(facility), at)?),
        FacilityCmd::History { facility, from, to, csv } => {
            let to = to.unwrap_or_else(|| shareal_core::clock::now_ms() + 1);
            if csv {
                print!("{}", client.history_csv(FacilityId(facility), from, to)?);
                Ok(())
            } else {
                print_json(&client.history(FacilityId(facility), from, to)?)
            }
        }
    }
}

fn chat(client: &Client, cmd: ChatCmd) -> CliResult {
    match cmd {
        ChatCmd::Rooms => print_json(&client.rooms()?),
        ChatCmd::Create { name } => print_json(&client.create_room(&name)?),
        ChatCmd::Post { room, body } => print_json(&client.post_message(RoomId(room), &body)?),
        ChatCmd::Tail { room, from_seq } => {
            for msg in client.stream(RoomId(room), from_seq)? {
                let msg: shareal_core::Message = msg?;
                println!("{}", serde_json::to_string(&msg)?);
                std::io::stdout().flush()?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("SHAREAL_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

