//! Command implementations behind the `tlight` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::{json, Value};
use tlight_core::association::{associate_with, AssociationMode, AssociationParams, Detection, DEFAULT_ACCEPT_M, DEFAULT_COST_CAP_M};
use tlight_core::decision::{write_trace, DecisionParams};
use tlight_core::geometry::{CameraId, CameraModel};
use tlight_core::hdmap::{load_map, read_map_document, HdMap, DEFAULT_REGION_M};
use tlight_core::ingest::{load_detection_log, load_scenario, EgoPose, DEFAULT_SWITCH_DISTANCE_M};
use tlight_core::scenarios::standard_rig;
use tlight_core::simulator::{run_scenario, write_associations, write_metrics, SimParams, DEFAULT_TICK_RATE_HZ};
use tlight_core::{Error, ErrorKind, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;
pub const EXIT_IO: i32 = 5;

pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Parse => EXIT_PARSE,
        ErrorKind::Invariant => EXIT_INVARIANT,
        ErrorKind::Io => EXIT_IO,
    }
}

#[derive(Debug, Parser)]
#[command(name = "tlight", version, about = "Map-based traffic light perception tools")]
pub struct Cli {
    /// -v for per-event summaries, -vv for cost matrices.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write trace.ndjson and metrics.json.
    Simulate(SimulateArgs),
    /// Associate one detection log against a map from a fixed pose.
    Associate(AssociateArgs),
    /// Check all map invariants.
    ValidateMap(ValidateMapArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Tunables {
    #[arg(long, default_value_t = DEFAULT_COST_CAP_M)]
    pub cap: f64,
    #[arg(long, default_value_t = DEFAULT_ACCEPT_M)]
    pub accept: f64,
    #[arg(long, default_value_t = DEFAULT_REGION_M)]
    pub region: f64,
    #[arg(long, default_value_t = DecisionParams::default().buffer_capacity)]
    pub buffer_capacity: usize,
    #[arg(long, default_value_t = DecisionParams::default().decay_horizon)]
    pub decay_horizon: f64,
    #[arg(long, default_value_t = DecisionParams::default().mismatch_factor)]
    pub mismatch_factor: f64,
    #[arg(long, default_value_t = DEFAULT_SWITCH_DISTANCE_M)]
    pub switch_distance: f64,
    #[arg(long, default_value_t = DEFAULT_TICK_RATE_HZ)]
    pub tick_rate: f64,
    /// Constant capture/inference delay added to reported latencies, ms.
    #[arg(long, default_value_t = 0.0)]
    pub latency_offset: f64,
    /// Match every detection to its closest light instead of solving globally.
    #[arg(long)]
    pub compare_nearest: bool,
}

impl Tunables {
    pub fn sim_params(&self, mode: AssociationMode) -> Result<SimParams> {
        let params = SimParams {
            decision: DecisionParams {
                buffer_capacity: self.buffer_capacity,
                decay_horizon: self.decay_horizon,
                mismatch_factor: self.mismatch_factor,
            },
            association: AssociationParams {
                region: self.region,
                cap: self.cap,
                accept: self.accept,
            },
            mode,
            switch_distance: self.switch_distance,
            tick_rate: self.tick_rate,
            latency_offset_ms: self.latency_offset,
        };
        params.validate()?;
        Ok(params)
    }

    fn header(&self) -> String {
        format!(
            "buffer-capacity={} decay-horizon={}s mismatch-factor={} accept={}m cap={}m region={}m switch-distance={}m tick-rate={}Hz latency-offset={}ms",
            self.buffer_capacity,
            self.decay_horizon,
            self.mismatch_factor,
            self.accept,
            self.cap,
            self.region,
            self.switch_distance,
            self.tick_rate,
            self.latency_offset
        )
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario's noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the per-detection association dump.
    #[arg(long)]
    pub dump_associations: bool,
    #[command(flatten)]
    pub tunables: Tunables,
}

#[derive(Debug, Args)]
pub struct AssociateArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    /// Ego pose as JSON (`{"t":..,"position":[x,y,z],"yaw":..}`) or a path to such a file.
    #[arg(long)]
    pub pose: String,
    #[arg(long, default_value = "front_medium")]
    pub camera: String,
    /// Take camera models from this scenario instead of the built-in rig.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[command(flatten)]
    pub tunables: Tunables,
}

#[derive(Debug, Args)]
pub struct ValidateMapArgs {
    #[arg(long)]
    pub map: PathBuf,
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, cli.verbose),
        Command::Associate(a) => cmd_associate(&a, cli.verbose, &mut std::io::stdout().lock()),
        Command::ValidateMap(a) => cmd_validate_map(&a.map, &mut std::io::stdout().lock()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn cmd_simulate(args: &SimulateArgs, verbose: u8) -> Result<i32> {
    let mode = if args.tunables.compare_nearest {
        AssociationMode::Nearest
    } else {
        AssociationMode::Global
    };
    let params = args.tunables.sim_params(mode)?;
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.noise.seed = seed;
    }
    eprintln!("tlight simulate: {} seed={}", args.scenario.display(), scenario.noise.seed);
    eprintln!("  {}", args.tunables.header());
    if mode == AssociationMode::Nearest {
        eprintln!("  association: nearest-light baseline");
    }

    let output = run_scenario(&scenario, &params)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    write_file(&args.out.join("trace.ndjson"), &write_trace(&output.trace))?;
    write_file(&args.out.join("metrics.json"), &write_metrics(&output.metrics))?;
    if args.dump_associations {
        write_file(&args.out.join("associations.ndjson"), &write_associations(&output.associations))?;
    }

    let m = &output.metrics;
    eprintln!(
        "  ticks={} changes={} flicker={} accuracy={} mean-latency={} misassociations={}",
        m.ticks,
        m.state_changes,
        m.flicker_count,
        fmt_opt(m.accuracy_within_range),
        fmt_opt(m.mean_state_change_latency_ms.map(|v| v.round())),
        m.misassociations
    );
    if verbose > 0 {
        for (i, l) in m.state_change_latencies_ms.iter().enumerate() {
            eprintln!("  change {i}: {l} ms");
        }
        for (group, d) in &m.first_association_distance {
            eprintln!("  {group}: first decision at {d:.1} m");
        }
    }
    Ok(EXIT_OK)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

fn parse_pose(arg: &str) -> Result<EgoPose> {
    let trimmed = arg.trim_start();
    let (text, context) = if trimmed.starts_with('{') {
        (arg.to_string(), "--pose".to_string())
    } else {
        let path = Path::new(arg);
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        (text, path.display().to_string())
    };
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context,
        line: Some(e.line()),
        message: e.to_string(),
    })
}

fn pick_camera(args: &AssociateArgs) -> Result<CameraModel> {
    let id: CameraId = args.camera.parse()?;
    let rig = match &args.scenario {
        Some(path) => load_scenario(path)?.cameras,
        None => standard_rig(),
    };
    rig.into_iter().find(|c| c.id == id).ok_or_else(|| Error::UnknownCamera {
        id: args.camera.clone(),
        valid: CameraId::valid_ids(),
    })
}

/// Associates each frame (detections sharing a timestamp) of the log and
/// prints one JSON line per detection of the selected camera.
pub fn cmd_associate(args: &AssociateArgs, verbose: u8, out: &mut impl std::io::Write) -> Result<i32> {
    let mode = if args.tunables.compare_nearest {
        AssociationMode::Nearest
    } else {
        AssociationMode::Global
    };
    let params = args.tunables.sim_params(mode)?;
    let camera = pick_camera(args)?;
    let pose = parse_pose(&args.pose)?;
    let map = load_map(&args.map)?;
    let detections = load_detection_log(&args.detections)?;
    let world_camera = camera.placed(&pose.body_to_world());

    let mut frames: BTreeMap<i64, Vec<Detection>> = BTreeMap::new();
    let mut skipped = 0usize;
    for d in detections {
        if d.camera_id == camera.id {
            frames.entry(d.timestamp).or_default().push(d);
        } else {
            skipped += 1;
        }
    }
    if skipped > 0 {
        eprintln!("skipped {skipped} detections from other cameras");
    }

    let mut associated = 0usize;
    let mut total = 0usize;
    for (t, frame) in &frames {
        let outcome = associate_with(params.mode, frame, &world_camera, &map, &pose, &params.association)?;
        let mut rows: Vec<Value> = (0..frame.len())
            .map(|i| json!({"t": t, "detection": i, "class": frame[i].cls, "light": null, "cost": null, "status": "unassociated"}))
            .collect();
        for a in &outcome.associations {
            rows[a.detection]["light"] = json!(a.light_id);
            rows[a.detection]["cost"] = json!(a.cost);
            rows[a.detection]["status"] = json!("associated");
        }
        associated += outcome.associations.len();
        total += frame.len();
        for row in rows {
            writeln!(out, "{row}").map_err(stdout_err)?;
        }
        if verbose >= 2 {
            let matrix = json!({"t": t, "lights": outcome.lights, "cost_matrix": outcome.matrix.rows()});
            writeln!(out, "{matrix}").map_err(stdout_err)?;
        }
    }
    if verbose > 0 || total > 0 {
        eprintln!("{associated}/{total} detections associated over {} frames", frames.len());
    }
    Ok(EXIT_OK)
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

/// Prints every violation as one JSON line. Returns the invariant exit code
/// when any is found.
pub fn cmd_validate_map(path: &Path, out: &mut impl std::io::Write) -> Result<i32> {
    let doc = read_map_document(path)?;
    let violations = doc.violations();
    for v in &violations {
        writeln!(out, "{}", json!({"violation": v.to_string()})).map_err(stdout_err)?;
    }
    if violations.is_empty() {
        let map = HdMap::try_from(doc)?;
        eprintln!("{}: ok ({} lights, {} groups)", path.display(), map.lights().len(), map.groups().len());
        Ok(EXIT_OK)
    } else {
        eprintln!("{}: {} violation(s)", path.display(), violations.len());
        Ok(EXIT_INVARIANT)
    }
}
