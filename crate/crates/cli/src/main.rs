use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use edm_core::bench::{self, BenchConfig};
use edm_core::fleet::{unix_ms, AgentOptions, Fleet, RouteModel, SyntheticRoutes};
use edm_core::mec::{format_query, MecConfig, MecDescriptor, PROXIMITY_APP, RESPONSE_CSV_HEADER};
use edm_core::pubsub::{TopicFilter, DEFAULT_MAX_PAYLOAD};
use edm_core::store::QuerySpec;
use edm_core::{topics, GeoBounds, GeoPoint, HexGrid};
use edm_net::{
    run_capacity, run_throughput, spawn_fleet, BrokerClient, BrokerConfig, BrokerServer, CapacityConfig,
    FleetOptions, MecOptions, MecServer, RegistryOptions, RegistryServer, ThroughputConfig,
};

const DEFAULT_ORIGIN: &str = "40.4168,-3.7038";

#[derive(Parser)]
#[command(name = "edm", version, about = "Edge dynamic map testbed")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Standalone pub/sub broker.
    Broker {
        #[arg(long, default_value = "127.0.0.1:1883")]
        listen: String,
        #[arg(long, default_value_t = DEFAULT_MAX_PAYLOAD)]
        max_payload: usize,
    },
    /// MEC server with its embedded broker.
    Mec(MecArgs),
    /// MEC registry with its embedded broker.
    Registry {
        #[arg(long, default_value = "127.0.0.1:1880")]
        listen: String,
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long, default_value = topics::DEFAULT_REGISTRY_ID)]
        registry_id: String,
    },
    /// Vehicle fleet.
    Sim(SimArgs),
    /// Benchmarks.
    Bench {
        #[command(subcommand)]
        which: BenchCmd,
    },
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct MecArgs {
    #[command(subcommand)]
    dump: Option<MecCmd>,
    #[arg(long)]
    id: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lat: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lon: Option<f64>,
    #[arg(long, default_value_t = 500.0)]
    r_opt: f64,
    #[arg(long, default_value_t = 800.0)]
    r_oper: f64,
    /// Address of the embedded broker, also advertised to vehicles.
    #[arg(long, default_value = "127.0.0.1:1883")]
    broker: String,
    #[arg(long)]
    registry: Option<String>,
    #[arg(long, default_value = topics::DEFAULT_REGISTRY_ID)]
    registry_id: String,
    #[arg(long, default_value_t = 50)]
    t_buffer_ms: u64,
    #[arg(long, default_value_t = 60_000)]
    retention_ms: u64,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Subcommand)]
enum MecCmd {
    /// Prints the live rows of a running MEC server.
    Dump {
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        id: String,
        #[arg(long, default_value = "127.0.0.1:1883")]
        broker: String,
        #[arg(long, default_value_t = 60_000)]
        window_ms: u64,
    },
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Deployment grid origin; must be the same for every process.
    #[arg(long, default_value = DEFAULT_ORIGIN, allow_hyphen_values = true)]
    grid_origin: String,
    #[arg(long, default_value_t = edm_core::geo::DEFAULT_CELL_AREA_M2)]
    cell_area: f64,
}

impl GridArgs {
    fn grid(&self) -> Result<HexGrid> {
        Ok(HexGrid::new(parse_point(&self.grid_origin)?, self.cell_area)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SimMode {
    Synthetic,
    Fcd,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value = "127.0.0.1:1880")]
    registry: String,
    #[arg(long, default_value = topics::DEFAULT_REGISTRY_ID)]
    registry_id: String,
    #[arg(long, value_enum, default_value = "synthetic")]
    mode: SimMode,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// `LAT_MIN,LON_MIN,LAT_MAX,LON_MAX`; defaults to 1.4 km around the grid origin.
    #[arg(long, allow_hyphen_values = true)]
    bbox: Option<String>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    rate: u32,
    #[arg(long, default_value_t = 0)]
    t_send_ms: u64,
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long = "loop")]
    looped: bool,
    /// Seconds to run; until interrupted when absent.
    #[arg(long)]
    duration: Option<u64>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Decode and insertion cost per batch size.
    Insert {
        #[arg(long, default_value = "bench_out")]
        out: PathBuf,
        #[arg(long, default_value_t = bench::DEFAULT_REPETITIONS)]
        reps: usize,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,2500,5000,10000")]
        batches: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        t_buffer_ms: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Latency of the five query shapes per batch size.
    Query {
        #[arg(long, default_value = "bench_out")]
        out: PathBuf,
        #[arg(long, default_value_t = bench::DEFAULT_REPETITIONS)]
        reps: usize,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,2500,5000,10000")]
        batches: Vec<usize>,
        #[arg(long, default_value_t = bench::DEFAULT_N_CELLS)]
        cells: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Registry, MEC and fleet in one process.
    Capacity {
        #[arg(long, default_value = "bench_out")]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        vehicles: usize,
        #[arg(long, default_value_t = 10)]
        rate: u32,
        #[arg(long, default_value_t = 50)]
        t_buffer_ms: u64,
        #[arg(long, default_value_t = 0)]
        t_send_ms: u64,
        /// Seconds of measurement after every vehicle has logged in.
        #[arg(long, default_value_t = 60)]
        duration: u64,
        #[arg(long, default_value_t = 0)]
        malformed_per_s: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Broker publish rate with sequence checking.
    Throughput {
        #[arg(long, default_value = "bench_out")]
        out: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        rate: u64,
        #[arg(long, default_value_t = 60)]
        duration: u64,
    },
}

fn parse_point(s: &str) -> Result<GeoPoint> {
    let (lat, lon) = s.split_once(',').with_context(|| format!("expected LAT,LON, got {s:?}"))?;
    Ok(GeoPoint::new(lat.trim().parse()?, lon.trim().parse()?)?)
}

fn parse_bbox(s: &str) -> Result<GeoBounds> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?;
    let [lat_min, lon_min, lat_max, lon_max] = v[..] else {
        bail!("expected LAT_MIN,LON_MIN,LAT_MAX,LON_MAX, got {s:?}");
    };
    if !(lat_min < lat_max && lon_min < lon_max) {
        bail!("empty bounding box {s:?}");
    }
    Ok(GeoBounds { lat_min, lat_max, lon_min, lon_max })
}

async fn interrupted(limit: Option<Duration>) {
    match limit {
        Some(d) => {
            tokio::select! {
                _ = tokio::time::sleep(d) => {}
                _ = tokio::signal::ctrl_c() => {}
            }
        }
        None => {
            let _ = tokio::signal::ctrl_c().await;
        }
    }
}

async fn run_broker(listen: String, max_payload: usize) -> Result<()> {
    let s = BrokerServer::bind(&listen, BrokerConfig { max_payload, ..Default::default() }).await?;
    tracing::info!("broker listening on {}", s.local_addr());
    interrupted(None).await;
    s.shutdown();
    Ok(())
}

async fn run_mec(a: MecArgs) -> Result<()> {
    if let Some(MecCmd::Dump { csv, id, broker, window_ms }) = a.dump {
        return dump(csv, &id, &broker, window_ms).await;
    }
    let (Some(id), Some(lat), Some(lon)) = (a.id, a.lat, a.lon) else {
        bail!("--id, --lat and --lon are required");
    };
    let d = MecDescriptor::new(id, GeoPoint::new(lat, lon)?, a.r_opt, a.r_oper, a.broker.clone())?;
    let mut cfg = MecConfig::new(d, a.grid.grid()?);
    cfg.t_buffer_ms = a.t_buffer_ms;
    cfg.retention.window_ms = a.retention_ms;
    let mut opts = MecOptions::new(cfg, a.broker);
    opts.registry = a.registry;
    opts.registry_id = a.registry_id;
    let server = MecServer::start(opts).await?;
    tracing::info!("MEC {} serving on {}", server.core().mec_id(), server.endpoint());
    interrupted(None).await;
    let worker = server.shutdown().await;
    let c = worker.core().counters();
    tracing::info!(
        "stopped: received={} stored={} malformed={} overflow={} store_rejected={}",
        c.received,
        c.stored,
        c.malformed,
        c.overflow,
        c.store_rejected
    );
    Ok(())
}

async fn dump(csv: bool, id: &str, broker: &str, window_ms: u64) -> Result<()> {
    let vehicle = format!("dump{}", std::process::id());
    let (c, mut rx) = BrokerClient::connect(broker, vehicle.clone()).await?;
    let resp = topics::its_response(id, PROXIMITY_APP, &vehicle)?;
    c.subscribe(&TopicFilter::new(resp.as_str())?).await?;
    let mut window_ms = window_ms;
    let text = loop {
        let query = format_query(&QuerySpec::recent(window_ms));
        c.publish(&topics::its_query(id, PROXIMITY_APP, &vehicle)?, query.into())?;
        let m = tokio::time::timeout(Duration::from_secs(5), rx.recv())
            .await
            .context("no response from MEC")?
            .context("connection closed")?;
        let text = String::from_utf8_lossy(&m.payload).into_owned();
        match text.strip_prefix("error=") {
            Some(err) if err.starts_with("response of") && window_ms > 1 => {
                window_ms /= 2;
                tracing::warn!("result too large, retrying with a {window_ms} ms window");
            }
            Some(err) => bail!("MEC rejected the query: {}", err.trim()),
            None => break text,
        }
    };
    if csv {
        print!("{text}");
    } else {
        let rows = text.lines().count().saturating_sub(1);
        println!("{rows} live rows ({})", RESPONSE_CSV_HEADER);
    }
    c.disconnect().await;
    Ok(())
}

async fn run_registry(listen: String, snapshot: Option<PathBuf>, registry_id: String) -> Result<()> {
    let mut o = RegistryOptions::new(listen);
    o.snapshot = snapshot;
    o.registry_id = registry_id;
    let r = RegistryServer::start(o).await?;
    tracing::info!("registry listening on {}", r.endpoint());
    interrupted(None).await;
    r.shutdown()?;
    Ok(())
}

async fn run_sim(a: SimArgs) -> Result<()> {
    let grid = a.grid.grid()?;
    let model = match a.mode {
        SimMode::Synthetic => {
            let bbox = match &a.bbox {
                Some(s) => parse_bbox(s)?,
                None => bench::box_around(grid.origin(), 700.0),
            };
            RouteModel::Synthetic(SyntheticRoutes::new(bbox, a.n, a.seed))
        }
        SimMode::Fcd => {
            let path = a.file.context("--mode fcd needs --file")?;
            let f = fs::File::open(&path).with_context(|| path.display().to_string())?;
            RouteModel::from_fcd(BufReader::new(f), a.looped)?
        }
    };
    let opts = AgentOptions { send_rate_hz: a.rate, t_send_ms: a.t_send_ms, ..Default::default() };
    let fleet = Fleet::spawn(&model, grid, opts, unix_ms())?;
    let n = fleet.len();
    let mut fo = FleetOptions::new(a.registry);
    fo.registry_id = a.registry_id;
    let h = spawn_fleet(fleet, fo).await?;
    tracing::info!("fleet of {n} vehicles started");
    interrupted(a.duration.map(Duration::from_secs)).await;
    let s = h.stats();
    h.stop().await?;
    tracing::info!(
        "stopped: logins={} published={} handovers={} failed_handovers={} reconnects={}",
        s.logins,
        s.published,
        s.handovers,
        s.failed_handovers,
        s.reconnects
    );
    Ok(())
}

async fn run_bench(which: BenchCmd) -> Result<()> {
    match which {
        BenchCmd::Insert { out, reps, batches, t_buffer_ms, seed } => {
            let cfg = BenchConfig { batch_sizes: batches, repetitions: reps, t_buffer_ms, seed, ..Default::default() };
            let rows = tokio::task::spawn_blocking({
                let cfg = cfg.clone();
                move || bench::run_insertion_bench(&cfg)
            })
            .await?
            .map_err(anyhow::Error::msg)?;
            bench::write_insertion(&out, &cfg, &rows)?;
            print!("{}", bench::insertion_csv(&rows, cfg.t_buffer_ms));
        }
        BenchCmd::Query { out, reps, batches, cells, seed } => {
            let cfg = BenchConfig { batch_sizes: batches, repetitions: reps, n_cells: cells, seed, ..Default::default() };
            let rows = tokio::task::spawn_blocking({
                let cfg = cfg.clone();
                move || bench::run_query_bench(&cfg)
            })
            .await?
            .map_err(anyhow::Error::msg)?;
            bench::write_query(&out, &cfg, &rows)?;
            print!("{}", bench::query_csv(&rows));
        }
        BenchCmd::Capacity { out, vehicles, rate, t_buffer_ms, t_send_ms, duration, malformed_per_s, seed } => {
            let cfg = CapacityConfig {
                n_vehicles: vehicles,
                rate_hz: rate,
                t_buffer_ms,
                t_send_ms,
                duration: Duration::from_secs(duration),
                malformed_per_s,
                seed,
                ..Default::default()
            };
            let r = run_capacity(&cfg).await?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("capacity.csv"), r.csv())?;
            fs::write(out.join("capacity_cdf.csv"), r.availability.cdf_csv())?;
            print!("{}", r.csv());
            if r.saturated {
                tracing::warn!("saturated: budget, drop or latency target missed");
            }
        }
        BenchCmd::Throughput { out, rate, duration } => {
            let cfg = ThroughputConfig { rate_per_s: rate, duration: Duration::from_secs(duration), ..Default::default() };
            let r = run_throughput(&cfg).await?;
            fs::create_dir_all(&out)?;
            let csv = format!(
                "rate_per_s,sent,received,gaps,out_of_order,achieved_rate,broker_dropped,elapsed_s\n{},{},{},{},{},{:.1},{},{:.3}\n",
                rate, r.sent, r.received, r.gaps, r.out_of_order, r.achieved_rate, r.broker_dropped, r.elapsed_s
            );
            fs::write(out.join("throughput.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::Broker { listen, max_payload } => run_broker(listen, max_payload).await,
        Cmd::Mec(a) => run_mec(a).await,
        Cmd::Registry { listen, snapshot, registry_id } => run_registry(listen, snapshot, registry_id).await,
        Cmd::Sim(a) => run_sim(a).await,
        Cmd::Bench { which } => run_bench(which).await,
    }
}
