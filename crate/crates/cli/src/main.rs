use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lawful_core::bench::{self, CsvRow, ExperimentSpec, Mode, DEFAULT_WEIGHTS};
use lawful_core::chaining::{
    run_chain, run_zero_crypto, ChainConfig, ChainFailure, ChainRun, Protocol, SignedWarrant, TelecomAuditLog, Warrant,
};
use lawful_core::crypto::rng::{derive_rng, seed_from_u64};
use lawful_core::crypto::ParamSet;
use lawful_core::deploy::Deployment;
use lawful_core::graph::{gen_power_law, gen_synthetic, load_edge_list, LoadedGraph, ServingMap, ServingSpec};
use lawful_core::intersection::{run_intersection_net, EncryptedSet, IntersectWarrant, SetFile};
use lawful_core::metrics::RunMetrics;
use lawful_core::party::PartyId;
use lawful_core::transport::TransportKind;

/// Exit status when oversight aborts an intersection.
const EXIT_ABORT: u8 = 2;

#[derive(Parser)]
#[command(name = "lawful", version, about = "Accountable set intersection and contact chaining")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a keystore for every agency and telecom.
    Keygen(KeygenArgs),
    /// Encrypt a plaintext identifier list under the joint agency key.
    EncodeSet(EncodeArgs),
    /// Intersect encrypted sets and reveal the result if oversight allows.
    Intersect(IntersectArgs),
    /// Write a synthetic communication graph as an edge list.
    GenGraph(GenGraphArgs),
    /// Run one contact-chaining warrant, or an experiment grid.
    Chain(ChainArgs),
    /// Chain from several targets, then intersect the outputs.
    Pipeline(PipelineArgs),
    /// Summarize benchmark CSV files.
    Report(ReportArgs),
}

#[derive(Args)]
struct Net {
    /// Connect parties over in-process channels (default).
    #[arg(long, conflicts_with = "tcp")]
    inproc: bool,
    /// Connect parties over loopback TCP.
    #[arg(long)]
    tcp: bool,
}

impl Net {
    fn kind(&self) -> TransportKind {
        if self.tcp {
            TransportKind::Tcp
        } else {
            TransportKind::InProc
        }
    }
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long, default_value = "test-512")]
    params: ParamSet,
    #[arg(long, default_value_t = 3)]
    agencies: usize,
    #[arg(long, default_value_t = 4)]
    telecoms: usize,
    /// Random when omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    keys: PathBuf,
    /// One identifier per line; `#` starts a comment.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Set label used by intersection warrants; defaults to the file stem.
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IntersectArgs {
    #[arg(long)]
    keys: PathBuf,
    /// Encrypted set files; at least two.
    #[arg(long = "set", required = true, num_args = 1..)]
    sets: Vec<PathBuf>,
    #[arg(long)]
    max_reveal: usize,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    #[command(flatten)]
    net: Net,
    #[arg(long)]
    seed: Option<u64>,
    /// Append a metrics row here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the agencies' event transcript here.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    /// Erdős–Rényi with a target mean degree.
    Er,
    /// Preferential attachment.
    PowerLaw,
}

#[derive(Args)]
struct GenGraphArgs {
    #[arg(long, value_enum, default_value = "er")]
    model: Model,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 30.0)]
    avg_degree: f64,
    /// Edges per new vertex for the power-law model.
    #[arg(long, default_value_t = 15)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write an `<id> telecom-<i>` map split by `--weights`.
    #[arg(long)]
    serving_out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    edges: PathBuf,
    /// `<id> <telecom-name>` per line.
    #[arg(long, conflicts_with = "serve_proportional")]
    serving: Option<PathBuf>,
    /// Assign identifiers at random with these weights, one per telecom.
    #[arg(long, value_delimiter = ',')]
    serve_proportional: Option<Vec<f64>>,
}

#[derive(Args)]
struct ChainArgs {
    /// Run every point of an experiment spec instead of a single warrant.
    #[arg(long, conflicts_with_all = ["keys", "edges", "warrant"])]
    grid: Option<PathBuf>,
    #[arg(long, required_unless_present = "grid")]
    keys: Option<PathBuf>,
    #[arg(long, required_unless_present = "grid")]
    edges: Option<PathBuf>,
    #[arg(long, conflicts_with = "serve_proportional")]
    serving: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    serve_proportional: Option<Vec<f64>>,
    /// Signed warrant file; otherwise one is built from --x/--k/--d and
    /// signed with every agency key in the keystore.
    #[arg(long, conflicts_with_all = ["x", "k", "d"])]
    warrant: Option<PathBuf>,
    #[arg(long)]
    x: Option<u64>,
    #[arg(long)]
    k: Option<u8>,
    #[arg(long)]
    d: Option<u32>,
    #[arg(long, default_value = "1")]
    protocol: Mode,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    #[command(flatten)]
    net: Net,
    #[arg(long)]
    seed: Option<u64>,
    /// Encrypted set file, or `<id> <distance>` lines in zero mode.
    #[arg(long)]
    out: Option<PathBuf>,
    /// One `<telecom>.log` file per telecom.
    #[arg(long)]
    logs_dir: Option<PathBuf>,
    #[arg(long)]
    save_warrant: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    keys: PathBuf,
    #[command(flatten)]
    graph: GraphArgs,
    /// Chaining targets.
    #[arg(long = "x", required = true, num_args = 1..)]
    targets: Vec<u64>,
    #[arg(long)]
    k: u8,
    #[arg(long)]
    d: u32,
    #[arg(long, default_value = "1")]
    protocol: Mode,
    /// Extra encrypted sets, such as encoded tower dumps.
    #[arg(long = "dump", num_args = 1..)]
    dumps: Vec<PathBuf>,
    #[arg(long)]
    max_reveal: usize,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    #[command(flatten)]
    net: Net,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    /// Write gnuplot-ready columns here.
    #[arg(long)]
    plot: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Keygen(a) => keygen(a),
        Command::EncodeSet(a) => encode_set(a),
        Command::Intersect(a) => intersect(a),
        Command::GenGraph(a) => gen_graph(a),
        Command::Chain(a) => chain(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Report(a) => report(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Uses the given seed or draws one, reporting it so the run can be repeated.
fn seed_or_random(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random();
        eprintln!("seed: {s}");
        s
    })
}

fn load_keys(path: &Path) -> Result<Deployment> {
    Deployment::load(path).with_context(|| format!("loading keystore {}", path.display()))
}

fn keygen(a: KeygenArgs) -> Result<ExitCode> {
    let dep = Deployment::generate(a.params, a.agencies, a.telecoms, seed_or_random(a.seed))?;
    dep.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} agencies, {} telecoms, {} -> {}", a.agencies, a.telecoms, a.params, a.out.display());
    Ok(ExitCode::SUCCESS)
}

/// Parses identifiers, dropping repeats after the first occurrence.
fn parse_ids(text: &str) -> Result<(Vec<u64>, usize)> {
    let mut seen = BTreeSet::new();
    let mut ids = Vec::new();
    let mut dups = 0;
    for (n, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let id: u64 = body.parse().with_context(|| format!("line {}: bad identifier {body:?}", n + 1))?;
        if seen.insert(id) {
            ids.push(id);
        } else {
            dups += 1;
        }
    }
    Ok((ids, dups))
}

fn encode_set(a: EncodeArgs) -> Result<ExitCode> {
    let dep = load_keys(&a.keys)?;
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (ids, dups) = parse_ids(&text)?;
    if dups > 0 {
        eprintln!("warning: dropped {dups} duplicate identifier(s)");
    }
    let key = dep.combined_key();
    let mut rng = derive_rng(&seed_from_u64(seed_or_random(a.seed)), "cli/encode-set", &[]);
    let ciphertexts =
        ids.iter().map(|&id| key.encrypt_id(id, &mut rng).with_context(|| format!("identifier {id}"))).collect::<Result<_>>()?;
    let label = match a.label {
        Some(l) => l,
        None => a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "set".into()),
    };
    SetFile::new(dep.param_set, dep.agency_names(), EncryptedSet { label, ciphertexts }).write_to(&a.out)?;
    println!("{} records -> {}", ids.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn read_set(dep: &Deployment, path: &Path) -> Result<EncryptedSet> {
    let file = SetFile::read_from(path).with_context(|| format!("reading {}", path.display()))?;
    ensure!(file.param_set == dep.param_set, "{}: parameter set {} differs from keystore", path.display(), file.param_set);
    ensure!(file.roster == dep.agency_names(), "{}: agency roster differs from keystore", path.display());
    Ok(file.set)
}

struct IntersectRun {
    sets: Vec<EncryptedSet>,
    max_reveal: usize,
    workers: usize,
    transport: TransportKind,
    seed: u64,
}

/// Returns the outcome and a metrics row.
fn run_intersect(dep: &Deployment, run: IntersectRun) -> Result<(Option<Vec<u64>>, CsvRow, String)> {
    let labels: Vec<String> = run.sets.iter().map(|s| s.label.clone()).collect();
    let unique: BTreeSet<&String> = labels.iter().collect();
    ensure!(unique.len() == labels.len(), "input sets must have distinct labels");
    let sizes: Vec<usize> = run.sets.iter().map(|s| s.ciphertexts.len()).collect();
    let warrant = IntersectWarrant::new(labels, run.max_reveal, dep.agency_names())?;
    let (param_set, params) = (dep.param_set, dep.params.clone());
    let mut agencies = dep.intersection_keys(run.seed);
    let out = run_intersection_net(&params, &warrant, run.sets, &mut agencies, run.workers, run.transport)?;
    let mut metrics = RunMetrics { wall_time: out.wall_time, bytes_total: out.bytes_transferred as u64, ..RunMetrics::default() };
    metrics.cpu.insert(PartyId::LEAD, out.agency_cpu);
    let revealed = out.revealed.as_ref().map(Vec::len);
    let row = CsvRow::intersection(param_set, run.seed, run.workers, run.transport, &sizes, &metrics, revealed);
    Ok((out.revealed, row, out.transcript.render()))
}

fn print_reveal(revealed: &Option<Vec<u64>>) -> ExitCode {
    match revealed {
        Some(ids) => {
            let mut out = std::io::stdout().lock();
            for id in ids {
                let _ = writeln!(out, "{id}");
            }
            ExitCode::SUCCESS
        }
        None => {
            println!("ABORT");
            ExitCode::from(EXIT_ABORT)
        }
    }
}

fn intersect(a: IntersectArgs) -> Result<ExitCode> {
    ensure!(a.sets.len() >= 2, "need at least two --set files");
    let dep = load_keys(&a.keys)?;
    let sets = a.sets.iter().map(|p| read_set(&dep, p)).collect::<Result<Vec<_>>>()?;
    let run = IntersectRun {
        sets,
        max_reveal: a.max_reveal,
        workers: a.workers,
        transport: a.net.kind(),
        seed: seed_or_random(a.seed),
    };
    let (revealed, row, transcript) = run_intersect(&dep, run)?;
    if let Some(p) = &a.transcript {
        fs::write(p, transcript)?;
    }
    if let Some(p) = &a.csv {
        bench::append_rows(p, &[row])?;
    }
    Ok(print_reveal(&revealed))
}

fn gen_graph(a: GenGraphArgs) -> Result<ExitCode> {
    let g = match a.model {
        Model::Er => gen_synthetic(a.n, a.avg_degree, a.seed)?,
        Model::PowerLaw => gen_power_law(a.n, a.m, a.seed)?,
    };
    let mut w = BufWriter::new(fs::File::create(&a.out)?);
    for (u, v) in g.edges() {
        writeln!(w, "{u} {v}")?;
    }
    w.flush()?;
    if let Some(p) = &a.serving_out {
        let weights = a.weights.unwrap_or_else(|| DEFAULT_WEIGHTS.to_vec());
        let serving = ServingMap::proportional(g.vertices(), &weights, a.seed)?;
        let mut w = BufWriter::new(fs::File::create(p)?);
        let mut rows: Vec<(u64, u8)> = serving.iter().map(|(id, t)| (id, t.0)).collect();
        rows.sort_unstable();
        for (id, t) in rows {
            writeln!(w, "{id} telecom-{t}")?;
        }
        w.flush()?;
    }
    println!("{} vertices, {} edges, mean degree {:.2}", g.vertex_count(), g.edge_count(), g.mean_degree());
    Ok(ExitCode::SUCCESS)
}

fn serving_spec(dep: &Deployment, serving: Option<PathBuf>, weights: Option<Vec<f64>>, seed: u64) -> Result<ServingSpec> {
    if let Some(path) = serving {
        return Ok(ServingSpec::MapFile { path, telecoms: dep.telecom_names() });
    }
    let weights = match weights {
        Some(w) => w,
        None if dep.telecoms.len() == DEFAULT_WEIGHTS.len() => DEFAULT_WEIGHTS.to_vec(),
        None => bail!("keystore has {} telecoms; pass --serving or --serve-proportional", dep.telecoms.len()),
    };
    ensure!(weights.len() == dep.telecoms.len(), "{} weights for {} telecoms", weights.len(), dep.telecoms.len());
    Ok(ServingSpec::Proportional { weights, seed })
}

fn load_graph(dep: &Deployment, edges: &Path, spec: &ServingSpec) -> Result<LoadedGraph> {
    let g = load_edge_list(edges, spec).with_context(|| format!("loading {}", edges.display()))?;
    ensure!(
        g.serving.telecom_count() == dep.telecoms.len(),
        "serving map covers {} telecoms, keystore has {}",
        g.serving.telecom_count(),
        dep.telecoms.len()
    );
    g.graph.check_domain(&dep.params)?;
    Ok(g)
}

fn chain_config(mode: Mode, workers: usize, transport: TransportKind, seed: u64) -> ChainConfig {
    let protocol = if mode == Mode::Protocol2 { Protocol::Hiding } else { Protocol::Revealing };
    ChainConfig { protocol, workers, transport, seed, ..ChainConfig::default() }
}

fn write_logs(dir: &Path, dep: &Deployment, logs: &[TelecomAuditLog]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for log in logs {
        let name = dep.telecoms.get(log.telecom.0 as usize).map_or_else(|| log.telecom.to_string(), |t| t.name.clone());
        fs::write(dir.join(format!("{name}.log")), log.render())?;
    }
    Ok(())
}

fn run_grid(path: &Path, csv: Option<&Path>) -> Result<ExitCode> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec = ExperimentSpec::from_toml(&text)?;
    let mut failed = None;
    bench::run_grid(&spec, |row| {
        println!(
            "{} x={} k={} d={}: {} ciphertexts in {:.3} s",
            row.mode,
            row.x.unwrap_or_default(),
            row.k.unwrap_or_default(),
            row.d.unwrap_or_default(),
            row.ciphertexts_out,
            row.wall_time_s
        );
        if let Some(p) = csv {
            if let Err(e) = bench::append_rows(p, std::slice::from_ref(row)) {
                failed.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = failed {
        return Err(e.into());
    }
    Ok(ExitCode::SUCCESS)
}

fn chain(a: ChainArgs) -> Result<ExitCode> {
    if let Some(grid) = &a.grid {
        return run_grid(grid, a.csv.as_deref());
    }
    let (Some(keys), Some(edges)) = (&a.keys, &a.edges) else { bail!("--keys and --edges are required") };
    let dep = load_keys(keys)?;
    let seed = seed_or_random(a.seed);
    let graph = load_graph(&dep, edges, &serving_spec(&dep, a.serving, a.serve_proportional, seed)?)?;
    let signed = match &a.warrant {
        Some(p) => SignedWarrant::from_toml(&fs::read_to_string(p)?)?,
        None => {
            let (Some(x), Some(k), Some(d)) = (a.x, a.k, a.d) else { bail!("pass --warrant or all of --x, --k, --d") };
            SignedWarrant::sign_all(Warrant::for_deployment(&dep, &graph.partitions, x, k, d), &dep)
        }
    };
    if let Some(p) = &a.save_warrant {
        fs::write(p, signed.to_toml()?)?;
    }
    let cfg = chain_config(a.protocol, a.workers, a.net.kind(), seed);

    let metrics = if a.protocol == Mode::Zero {
        let out = run_zero_crypto(&graph.partitions, &signed.warrant, &cfg)?;
        if let Some(p) = &a.out {
            let mut text = String::new();
            for (id, dist) in &out.vertices {
                writeln!(text, "{id} {dist}")?;
            }
            fs::write(p, text)?;
        }
        if let Some(dir) = &a.logs_dir {
            write_logs(dir, &dep, &out.logs)?;
        }
        out.metrics
    } else {
        let run = match run_chain(&dep, &graph.partitions, &signed, &cfg) {
            Ok(run) => run,
            Err(fail) => {
                if let Some(dir) = &a.logs_dir {
                    write_logs(dir, &dep, &fail.logs)?;
                }
                return Err(anyhow::Error::new(*fail));
            }
        };
        if let Some(p) = &a.out {
            let label = format!("chain-x{}", signed.warrant.x);
            run.output.to_set_file(dep.param_set, dep.agency_names(), &label).write_to(p)?;
        }
        if let Some(dir) = &a.logs_dir {
            write_logs(dir, &dep, &run.logs)?;
        }
        run.metrics
    };
    println!(
        "{}: {} ciphertexts, {} rounds, {:.3} s wall, agency cpu {:.3} s, telecom cpu {:.3} s, {} bytes",
        a.protocol.name(),
        metrics.ciphertexts_out,
        metrics.rounds,
        metrics.wall_time.as_secs_f64(),
        metrics.agency_cpu().as_secs_f64(),
        metrics.telecom_cpu().as_secs_f64(),
        metrics.bytes_total
    );
    if let Some(p) = &a.csv {
        bench::append_rows(p, &[CsvRow::chain(a.protocol.name(), &signed.warrant, &cfg, &metrics)])?;
    }
    Ok(ExitCode::SUCCESS)
}

fn chain_failure(fail: Box<ChainFailure>) -> anyhow::Error {
    anyhow::Error::new(*fail)
}

fn pipeline(a: PipelineArgs) -> Result<ExitCode> {
    ensure!(a.protocol != Mode::Zero, "pipeline needs an encrypted protocol");
    ensure!(a.targets.len() + a.dumps.len() >= 2, "need at least two sets to intersect");
    let dep = load_keys(&a.keys)?;
    let seed = seed_or_random(a.seed);
    let g = &a.graph;
    let graph = load_graph(&dep, &g.edges, &serving_spec(&dep, g.serving.clone(), g.serve_proportional.clone(), seed)?)?;
    let transport = a.net.kind();
    let mut sets = Vec::new();
    for (i, &x) in a.targets.iter().enumerate() {
        let w = Warrant::for_deployment(&dep, &graph.partitions, x, a.k, a.d);
        let signed = SignedWarrant::sign_all(w, &dep);
        let cfg = chain_config(a.protocol, a.workers, transport, seed.wrapping_add(i as u64));
        let ChainRun { output, .. } = run_chain(&dep, &graph.partitions, &signed, &cfg).map_err(chain_failure)?;
        eprintln!("x={x}: {} ciphertexts", output.len());
        sets.push(EncryptedSet {
            label: format!("chain-{i}-x{x}"),
            ciphertexts: output.entries.into_iter().map(|e| e.ct).collect(),
        });
    }
    for p in &a.dumps {
        sets.push(read_set(&dep, p)?);
    }
    let run = IntersectRun { sets, max_reveal: a.max_reveal, workers: a.workers, transport, seed };
    let (revealed, _, _) = run_intersect(&dep, run)?;
    Ok(print_reveal(&revealed))
}

fn report(a: ReportArgs) -> Result<ExitCode> {
    let rows = bench::read_rows(&a.csv)?;
    let sums = bench::summarize_by_mode(&rows)?;
    print!("{}", bench::render_summaries(&sums));
    if let Some(p) = &a.plot {
        fs::write(p, bench::gnuplot_columns(&rows))?;
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_dedup_keeps_first_occurrence() {
        let (ids, dups) = parse_ids("5\n# comment\n3 # trailing\n\n5\n7\n").unwrap();
        assert_eq!(ids, vec![5, 3, 7]);
        assert_eq!(dups, 1);
    }

    #[test]
    fn bad_identifier_names_its_line() {
        let err = parse_ids("1\nabc\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
