//! `heartfit` command-line driver.
//!
//! Exit codes: 0 success, 1 validation or usage failure, 2 non-finite loss
//! or gradient, 3 gradient check above tolerance.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use heartfit::dataset::{self, read_dataset, read_sequence, sha256_hex, write_sequence, write_synth};
use heartfit::fit::{fit, gradcheck, FitConfig, FitProblem, GradcheckOptions};
use heartfit::mesh::load_mesh;
use heartfit::metrics::{evaluate, volume_curves};
use heartfit::render::Observations;
use heartfit::{Error, MeshSequence, Structure, SynthConfig, SynthDataset};

#[derive(Parser, Debug)]
#[command(name = "heartfit", version, about = "Fit 4D whole-heart meshes to sparse multi-view contours")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic beating-heart dataset.
    Synth(SynthArgs),
    /// Fit a mesh sequence to a dataset's masks.
    Fit(FitArgs),
    /// Evaluate predicted meshes against a reference dataset.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct Overrides {
    /// Override a configuration field, e.g. `--set frames=4` or
    /// `--set renderer.mu=6`. Values are parsed as JSON, falling back to strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Synthesis configuration (JSON). Defaults are used for omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Init {
    /// Repeat the dataset's frame-0 mesh for every frame.
    GroundTruthEd,
    /// Repeat the template mesh (`--template`, or the dataset's frame 0).
    Template,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Fit configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for meshes, loss trace and manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "template")]
    init: Init,
    /// Template OBJ (with `.labels` sidecar) sharing the dataset's connectivity.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Shorthand for `--set steps=N`.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: Option<u64>,
    /// Use the dataset meshes as the vertex MSE reference.
    #[arg(long)]
    supervise_mesh: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of predicted `f<t>.obj` meshes (or a fit output directory).
    #[arg(long)]
    pred: PathBuf,
    /// Reference dataset directory.
    #[arg(long)]
    reference: PathBuf,
    /// Metric CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-frame volume CSV (default: `<out>` with a `_volumes.csv` suffix).
    #[arg(long)]
    volumes: Option<PathBuf>,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive number, got {s}"))
    }
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Fit configuration (JSON) providing weights and renderer settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Coordinates sampled per loss term.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    coords: u64,
    /// Central-difference step, mm.
    #[arg(long, default_value_t = 1e-3, value_parser = positive_f64)]
    step: f64,
    /// Maximum relative error.
    #[arg(long, default_value_t = 1e-4, value_parser = positive_f64)]
    tolerance: f64,
    /// Maximum absolute error where the analytic derivative is below 1e-10.
    #[arg(long, default_value_t = 1e-8, value_parser = positive_f64)]
    abs_tolerance: f64,
    /// Amplitude of the seeded perturbation applied to the dataset meshes, mm.
    #[arg(long, default_value_t = 0.5)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to save the error table.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Numerical(String),
    Tolerance(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Tolerance(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } => Failure::Numerical(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::Validation(format!("{}: {e}", path.display()))
}

/// Sets `key` (dot-separated path) in a JSON object.
fn apply_override(doc: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::Validation(format!("--set {assignment:?}: expected KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Failure::Validation(format!("--set {key}: {part:?} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Loads a JSON config (defaults for omitted fields), applies overrides and
/// deserializes it. Returns the effective config and its canonical JSON.
fn load_config<T>(path: Option<&Path>, overrides: &[String]) -> CliResult<(T, String)>
where
    T: Serialize + serde::de::DeserializeOwned + Default,
{
    let mut doc = serde_json::to_value(T::default()).expect("defaults serialize");
    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
        let user: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        let Value::Object(map) = user else {
            return Err(Failure::Validation(format!("{}: expected a JSON object", path.display())));
        };
        for (k, v) in map {
            merge(&mut doc, &k, v);
        }
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let config: T = serde_json::from_value(doc).map_err(|e| Failure::Validation(format!("configuration: {e}")))?;
    let canonical = serde_json::to_string_pretty(&config).expect("config serializes");
    Ok((config, canonical))
}

fn merge(doc: &mut Value, key: &str, v: Value) {
    let obj = doc.as_object_mut().expect("config is an object");
    match (obj.get_mut(key), v) {
        (Some(Value::Object(base)), Value::Object(patch)) => {
            for (k, v) in patch {
                base.insert(k, v);
            }
        }
        (_, v) => {
            obj.insert(key.to_string(), v);
        }
    }
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: &'static str,
    tool_version: &'static str,
    config_sha256: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    wall_time_s: f64,
}

fn checksum_tree(root: &Path, into: &mut BTreeMap<String, String>) -> CliResult<()> {
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| io_fail(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                stack.push(path);
            } else {
                checksum_path(&path, into)?;
            }
        }
    }
    Ok(())
}

fn checksum_path(path: &Path, into: &mut BTreeMap<String, String>) -> CliResult<()> {
    let bytes = fs::read(path).map_err(|e| io_fail(path, e))?;
    into.insert(path.display().to_string(), sha256_hex(&bytes));
    Ok(())
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> CliResult<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text).map_err(|e| io_fail(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_fail(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_fail(path, e))
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let start = Instant::now();
    let (config, canonical) = load_config::<SynthConfig>(args.config.as_deref(), &args.overrides.set)?;
    config.validate()?;
    let data = SynthDataset::generate(&config)?;
    fs::create_dir_all(&args.out).map_err(|e| io_fail(&args.out, e))?;
    let manifest = write_synth(&args.out, &data)?;
    let outputs = manifest
        .files
        .iter()
        .map(|(rel, digest)| (args.out.join(rel).display().to_string(), digest.clone()))
        .collect();
    let mut inputs = BTreeMap::new();
    if let Some(p) = &args.config {
        checksum_path(p, &mut inputs)?;
    }
    write_manifest(
        &args.out.join("run.json"),
        &RunManifest {
            subcommand: "synth",
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256: sha256_hex(canonical.as_bytes()),
            inputs,
            outputs,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    )?;
    println!(
        "wrote {}: {} frames, {} planes, {} masks",
        args.out.display(),
        data.sequence.frame_count(),
        data.planes.len(),
        data.observations.len()
    );
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut overrides = args.overrides.set.clone();
    if let Some(steps) = args.steps {
        overrides.push(format!("steps={steps}"));
    }
    let (config, canonical) = load_config::<FitConfig>(args.config.as_deref(), &overrides)?;
    config.validate()?;

    // Pre-flight: every input is checked before any optimization step.
    let mut missing = dataset::missing_files(&args.dataset)?;
    if let Some(t) = &args.template {
        for p in [t.clone(), heartfit::mesh::labels_path(t)] {
            if !p.is_file() {
                missing.push(p);
            }
        }
    }
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| format!("  {}", p.display())).collect();
        return Err(Failure::Validation(format!("missing input files:\n{}", list.join("\n"))));
    }
    let data = read_dataset(&args.dataset)?;
    let n = data.sequence.frame_count();
    let ed = data.sequence.mesh(0);
    let template = match &args.template {
        Some(p) => load_mesh(p)?,
        None => ed.clone(),
    };
    if template.faces() != ed.faces() || template.labels() != ed.labels() {
        return Err(Failure::Validation(
            "template connectivity or labels differ from the dataset meshes".into(),
        ));
    }
    let init = match args.init {
        Init::GroundTruthEd => MeshSequence::repeat(&ed, n),
        Init::Template => MeshSequence::repeat(&template, n),
    };
    let reference = args.supervise_mesh.then(|| data.sequence.clone());
    let problem = FitProblem::new(template, data.planes.clone(), data.observations.clone(), init, reference)?;

    let report = fit(&problem, &config)?;

    fs::create_dir_all(&args.out).map_err(|e| io_fail(&args.out, e))?;
    write_sequence(&args.out.join("meshes"), &report.sequence)?;
    write_text(&args.out.join("trace.csv"), &report.trace_csv())?;
    let summary = serde_json::json!({
        "steps": config.steps,
        "init": args.init,
        "initial_loss": report.trace.first().map(|r| r.total),
        "final_loss": report.final_loss.total,
        "final_terms": report.final_loss.terms,
        "descended": report.descended(),
        "converged": report.converged,
    });
    write_text(
        &args.out.join("report.json"),
        &serde_json::to_string_pretty(&summary).expect("report serializes"),
    )?;
    write_text(&args.out.join("config.json"), &canonical)?;

    let mut outputs = BTreeMap::new();
    checksum_tree(&args.out.join("meshes"), &mut outputs)?;
    for f in ["trace.csv", "report.json", "config.json"] {
        checksum_path(&args.out.join(f), &mut outputs)?;
    }
    let mut inputs = BTreeMap::new();
    checksum_tree(&args.dataset, &mut inputs)?;
    if let Some(p) = &args.config {
        checksum_path(p, &mut inputs)?;
    }
    if let Some(p) = &args.template {
        checksum_path(p, &mut inputs)?;
    }
    write_manifest(
        &args.out.join("run.json"),
        &RunManifest {
            subcommand: "fit",
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256: sha256_hex(canonical.as_bytes()),
            inputs,
            outputs,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    )?;
    println!(
        "fit {} steps: loss {:.6e} -> {:.6e}",
        config.steps,
        report.trace.first().map_or(f64::NAN, |r| r.total),
        report.final_loss.total
    );
    Ok(())
}

fn volumes_csv(pred: &MeshSequence, reference: &MeshSequence) -> CliResult<String> {
    let p = volume_curves(pred)?;
    let r = volume_curves(reference)?;
    let mut out = String::from("frame");
    for prefix in ["pred", "ref"] {
        for s in Structure::ALL {
            out.push_str(&format!(",{prefix}_{}", s.name()));
        }
    }
    out.push('\n');
    for (t, (a, b)) in p.iter().zip(&r).enumerate() {
        out.push_str(&t.to_string());
        for v in a.iter().chain(b) {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    Ok(out)
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let start = Instant::now();
    let data = read_dataset(&args.reference)?;
    let pred = read_sequence(&args.pred)?;
    if pred.frame_count() != data.sequence.frame_count() || pred.vertex_count() != data.sequence.vertex_count() {
        return Err(Failure::Validation(format!(
            "correspondence mismatch: prediction has {} frames × {} vertices, reference {} × {}",
            pred.frame_count(),
            pred.vertex_count(),
            data.sequence.frame_count(),
            data.sequence.vertex_count()
        )));
    }
    let masks = Observations::new(&data.planes, data.sequence.frame_count(), data.observations.clone())?;
    let report = evaluate(&pred, &data.sequence, &data.planes, &masks)?;
    write_text(&args.out, &report.to_csv())?;
    let volumes = args.volumes.clone().unwrap_or_else(|| {
        let stem = args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        args.out.with_file_name(format!("{stem}_volumes.csv"))
    });
    write_text(&volumes, &volumes_csv(&pred, &data.sequence)?)?;

    let mut inputs = BTreeMap::new();
    checksum_tree(&args.reference, &mut inputs)?;
    let mut outputs = BTreeMap::new();
    checksum_path(&args.out, &mut outputs)?;
    checksum_path(&volumes, &mut outputs)?;
    let manifest_path = args.out.with_extension("manifest.json");
    write_manifest(
        &manifest_path,
        &RunManifest {
            subcommand: "eval",
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256: sha256_hex(b"{}"),
            inputs,
            outputs,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    )?;
    println!("wrote {} and {}", args.out.display(), volumes.display());
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    let start = Instant::now();
    let (config, canonical) = load_config::<FitConfig>(args.config.as_deref(), &args.overrides.set)?;
    config.renderer.validate()?;
    let data = read_dataset(&args.dataset)?;
    let truth = data.sequence.clone();
    let init = jitter(&truth, args.jitter, args.seed);
    let problem = FitProblem::new(truth.mesh(0), data.planes.clone(), data.observations.clone(), init, Some(truth))?;
    let options = GradcheckOptions {
        n_coords: args.coords as usize,
        step: args.step,
        tolerance: args.tolerance,
        abs_tolerance: args.abs_tolerance,
        seed: args.seed,
    };
    let report = gradcheck(&problem, &config, &options)?;
    let table = report.table();
    print!("{table}");
    if let Some(out) = &args.out {
        write_text(out, &table)?;
        let mut inputs = BTreeMap::new();
        checksum_tree(&args.dataset, &mut inputs)?;
        let mut outputs = BTreeMap::new();
        checksum_path(out, &mut outputs)?;
        write_manifest(
            &out.with_extension("manifest.json"),
            &RunManifest {
                subcommand: "gradcheck",
                tool_version: env!("CARGO_PKG_VERSION"),
                config_sha256: sha256_hex(canonical.as_bytes()),
                inputs,
                outputs,
                wall_time_s: start.elapsed().as_secs_f64(),
            },
        )?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Tolerance(format!(
            "gradient check failed (tolerance {:e} relative, {:e} absolute)",
            args.tolerance, args.abs_tolerance
        )))
    }
}

/// Deterministic uniform perturbation in `[-amplitude, amplitude]` per coordinate.
fn jitter(seq: &MeshSequence, amplitude: f64, seed: u64) -> MeshSequence {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            f.iter()
                .map(|p| p.map(|x| x + amplitude * (2.0 * rng.gen::<f64>() - 1.0)))
                .collect()
        })
        .collect();
    seq.with_frames(frames).expect("same shape")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Validation(m) | Failure::Numerical(m) | Failure::Tolerance(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
