//! `isd` command-line front end.
//!
//! Every subcommand validates its inputs and computes its result before any
//! output file is created, so failed runs leave no partial artifacts.
//! Identical invocations (including `--seed`) produce byte-identical output
//! files. Exit codes: 0 success, 2 usage error, 1 runtime error.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use isd::analytics::{break_even_acceptance, curve_sweep, BreakEven, ParadigmMethod};
use isd::export::{write_sweep_header, write_sweep_row, SweepRow};
use isd::serving::{run_serving_sim, write_serving_csv, ServeConfig};
use isd::sim::{simulate_isd, simulate_sdar, simulate_tidar, AcceptanceSchedule};
use isd::train::{build_mask, MaskSpec, MaskVariant};
use isd::{
    decode, decode_lossless, measure_tpf_oh, GatedResidualModel, ProposalMode, ProposalSource,
    QueryAccounting, RngStream, StrideConfig, TabularAnchorModel, TokenId,
};

#[derive(Parser)]
#[command(name = "isd", version, about = "Strided decoding, compute economics, and serving simulations over tabular toy models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run strided decoding over a model file and report TPF/OH/alpha.
    Decode(DecodeArgs),
    /// Closed-form curves and break-even points.
    Analytics(AnalyticsArgs),
    /// Monte Carlo paradigm simulations.
    Simulate(SimulateArgs),
    /// Discrete-event serving simulation from a JSON config.
    Serve(ServeArgs),
    /// Attention-mask construction as bitmap text.
    Mask(MaskArgs),
    /// Generate a random tabular model file.
    GenModel(GenModelArgs),
}

#[derive(Args)]
struct DecodeArgs {
    /// Path to a tabular model JSON file.
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated prompt token ids.
    #[arg(long)]
    prompt: String,
    /// Stride N (>= 2).
    #[arg(long)]
    stride: usize,
    /// Loose threshold tau.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = ProposalModeArg::Sample)]
    proposal_mode: ProposalModeArg,
    /// Proposal source for mask positions.
    #[arg(long, value_enum, default_value_t = ProposalSourceArg::Mirror)]
    proposal_source: ProposalSourceArg,
    /// Mixture weight for --proposal-source epsilon.
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    /// Gated residual model JSON (required with --lossless).
    #[arg(long)]
    gated_model: Option<PathBuf>,
    /// Bit-for-bit lossless mode: gated proposals, base-only anchors.
    #[arg(long, default_value_t = false)]
    lossless: bool,
    #[arg(long)]
    max_new_tokens: usize,
    /// Comma-separated stop token ids.
    #[arg(long, default_value = "")]
    stop_tokens: String,
    #[arg(long)]
    seed: u64,
    /// Write the trace as JSON lines here.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProposalModeArg {
    Sample,
    Argmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProposalSourceArg {
    Mirror,
    Epsilon,
    Gated,
}

#[derive(Args)]
struct AnalyticsArgs {
    /// isd-variable, isd-fixed, sdar, or tidar.
    #[arg(long)]
    method: String,
    #[arg(long)]
    n: usize,
    /// Acceptance grid start:stop:step.
    #[arg(long, default_value = "0.0:1.0:0.01")]
    p_grid: String,
    /// Print the efficiency break-even point instead of sweeping.
    #[arg(long, default_value_t = false)]
    break_even: bool,
    /// Write the sweep CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// isd, sdar, or tidar.
    #[arg(long)]
    method: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: f64,
    /// Renewal cycles (isd/tidar) or blocks (sdar).
    #[arg(long)]
    cycles: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// JSON file mirroring the workload/cost/policy fields.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MaskArgs {
    /// idlm or sdar.
    #[arg(long)]
    variant: String,
    /// Sequence length (the doubled matrix is 2L x 2L).
    #[arg(long = "L")]
    seq_len: usize,
    /// Block size.
    #[arg(long = "B")]
    block: usize,
    /// Permit a short final block.
    #[arg(long, default_value_t = false)]
    allow_ragged: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenModelArgs {
    #[arg(long)]
    vocab: usize,
    #[arg(long)]
    order: usize,
    /// Symmetric Dirichlet concentration for the rows.
    #[arg(long, default_value_t = 1.0)]
    concentration: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write a gated residual companion with offsets in [-s, s].
    #[arg(long)]
    residual_scale: Option<f64>,
    #[arg(long)]
    residual_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Decode(args) => cmd_decode(args),
        Command::Analytics(args) => cmd_analytics(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Serve(args) => cmd_serve(args),
        Command::Mask(args) => cmd_mask(args),
        Command::GenModel(args) => cmd_gen_model(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn parse_tokens(text: &str) -> Result<Vec<TokenId>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<TokenId>().with_context(|| format!("'{s}' is not a token id")))
        .collect()
}

fn load_model(path: &PathBuf) -> Result<TabularAnchorModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TabularAnchorModel::from_json(&text).with_context(|| format!("model file {}", path.display()))
}

fn cmd_decode(args: DecodeArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let prompt = parse_tokens(&args.prompt)?;
    let stop_tokens: BTreeSet<TokenId> = parse_tokens(&args.stop_tokens)?.into_iter().collect();
    let cfg = StrideConfig {
        stride: args.stride,
        tau: args.tau,
        proposal_mode: match args.proposal_mode {
            ProposalModeArg::Sample => ProposalMode::Sample,
            ProposalModeArg::Argmax => ProposalMode::Argmax,
        },
        lossless: args.lossless,
        max_new_tokens: args.max_new_tokens,
        stop_tokens,
        seed: args.seed,
    };
    cfg.validate()?;

    let trace = if args.lossless {
        let path = args
            .gated_model
            .as_ref()
            .context("--lossless requires --gated-model")?;
        let gated = load_gated_model(path, &model)?;
        decode_lossless(&model, &gated, &prompt, &cfg)?
    } else {
        let source = match args.proposal_source {
            ProposalSourceArg::Mirror => ProposalSource::Mirror,
            ProposalSourceArg::Epsilon => ProposalSource::EpsilonMixture { epsilon: args.epsilon },
            ProposalSourceArg::Gated => {
                let path = args
                    .gated_model
                    .as_ref()
                    .context("--proposal-source gated requires --gated-model")?;
                ProposalSource::GatedResidual(load_gated_model(path, &model)?)
            }
        };
        decode(&model, &source, &prompt, &cfg)?
    };

    if let Some(path) = &args.trace_out {
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf)?;
        fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    }

    println!("committed {} tokens over {} forwards", trace.output.len(), trace.records.len());
    if !trace.records.is_empty() && !trace.output.is_empty() {
        let (tpf, oh_var) = measure_tpf_oh(&trace, QueryAccounting::Variable)?;
        let (_, oh_fix) = measure_tpf_oh(&trace, QueryAccounting::Fixed)?;
        println!("tpf {tpf:.6}");
        println!("oh_variable {oh_var:.6}");
        println!("oh_fixed {oh_fix:.6}");
    }
    match (trace.alpha(), trace.mean_acceptance_ratio()) {
        (Some(alpha), Some(ratio)) => {
            println!("alpha {alpha:.6}");
            println!("mean_ratio {ratio:.6}");
        }
        _ => println!("alpha n/a (no verification events)"),
    }
    if let Some(stop) = trace.stop_index {
        println!("stopped at output index {stop} ({} tokens kept)", stop + 1);
    }
    Ok(())
}

// Gated model file: {"base": <model doc>, "offsets": [[...], ...]} with one
// offset row per canonical context.
fn load_gated_model(path: &PathBuf, expected_base: &TabularAnchorModel) -> Result<GatedResidualModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("gated model file {}", path.display()))?;
    let base_text = doc
        .get("base")
        .with_context(|| format!("gated model file {} is missing field 'base'", path.display()))?
        .to_string();
    let base = TabularAnchorModel::from_json(&base_text)
        .with_context(|| format!("gated model file {} field 'base'", path.display()))?;
    if &base != expected_base {
        bail!("gated model base does not match --model");
    }
    let offsets: Vec<Vec<f64>> = serde_json::from_value(
        doc.get("offsets")
            .with_context(|| format!("gated model file {} is missing field 'offsets'", path.display()))?
            .clone(),
    )
    .context("field 'offsets' must be an array of per-context offset rows")?;
    Ok(GatedResidualModel::new(base, offsets)?)
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        bail!("--p-grid must be start:stop:step, got '{text}'");
    }
    let start: f64 = parts[0].parse().context("grid start")?;
    let stop: f64 = parts[1].parse().context("grid stop")?;
    let step: f64 = parts[2].parse().context("grid step")?;
    if step.is_nan() || step <= 0.0 || stop < start {
        bail!("--p-grid must satisfy start <= stop and step > 0");
    }
    if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&stop) {
        bail!("--p-grid values must lie in [0, 1]");
    }
    let mut grid = Vec::new();
    let count = ((stop - start) / step).round() as usize;
    for i in 0..=count {
        let p = (start + i as f64 * step).min(stop);
        grid.push(p);
    }
    grid.dedup();
    Ok(grid)
}

fn cmd_analytics(args: AnalyticsArgs) -> Result<()> {
    let method: ParadigmMethod = args.method.parse()?;
    if args.n < 2 {
        bail!("--n must be >= 2");
    }
    if args.break_even {
        match break_even_acceptance(method, args.n) {
            BreakEven::Crossing(p) => println!("break-even {p:.6}"),
            BreakEven::NoCrossing => println!("no-crossing"),
        }
        return Ok(());
    }
    let grid = parse_grid(&args.p_grid)?;
    let curve = curve_sweep(method, args.n, &grid);
    let mut buf = Vec::new();
    isd::export::write_curve_csv(&mut buf, &curve)?;
    emit(args.out.as_ref(), buf)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.p) {
        bail!("--p must lie in [0, 1]");
    }
    let stream = RngStream::new(args.seed);
    let (method, result) = match args.method.as_str() {
        "isd" => {
            let schedule = AcceptanceSchedule::uniform(args.n, args.p)?;
            ("isd", simulate_isd(args.n, &schedule, args.cycles, &stream)?)
        }
        "sdar" => ("sdar", simulate_sdar(args.n, args.p, args.cycles, &stream)?),
        "tidar" => ("tidar", simulate_tidar(args.n, args.p, args.cycles, &stream)?),
        other => bail!("unknown method '{other}' (expected isd, sdar, or tidar)"),
    };
    let mut buf = Vec::new();
    write_sweep_header(&mut buf)?;
    write_sweep_row(&mut buf, &SweepRow::from_sim(method, args.n, args.p, &result))?;
    emit(args.out.as_ref(), buf)
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let config: ServeConfig = serde_json::from_str(&text)
        .with_context(|| format!("config file {}", args.config.display()))?;
    config.validate()?;
    let report = run_serving_sim(
        &config.workload,
        config.policy,
        &config.cost,
        config.stationary,
        config.max_batch,
        &RngStream::new(args.seed),
    )?;
    let mut buf = Vec::new();
    write_serving_csv(&mut buf, &[report])?;
    emit(args.out.as_ref(), buf)
}

fn cmd_mask(args: MaskArgs) -> Result<()> {
    let variant = match args.variant.as_str() {
        "idlm" => MaskVariant::Idlm,
        "sdar" => MaskVariant::Sdar,
        other => bail!("unknown variant '{other}' (expected idlm or sdar)"),
    };
    let mut spec = MaskSpec::new(args.seq_len, args.block, variant)?;
    if args.allow_ragged {
        spec = spec.ragged();
    }
    let mask = build_mask(&spec)?;
    emit(args.out.as_ref(), mask.to_bitmap_string().into_bytes())
}

fn cmd_gen_model(args: GenModelArgs) -> Result<()> {
    let stream = RngStream::new(args.seed);
    let model = TabularAnchorModel::random(args.vocab, args.order, args.concentration, &stream)?;
    let mut buf = Vec::new();
    model.write_json(&mut buf)?;

    // Prepare the optional residual companion fully before writing anything.
    let residual = match (args.residual_scale, args.residual_out.as_ref()) {
        (Some(scale), Some(path)) => {
            let gated = GatedResidualModel::random(model.clone(), scale, &stream.substream(1));
            let doc = serde_json::json!({
                "base": serde_json::from_str::<serde_json::Value>(&model.to_json()?)?,
                "offsets": gated_offsets(&gated),
            });
            Some((path.clone(), serde_json::to_string_pretty(&doc)? + "\n"))
        }
        (None, None) => None,
        _ => bail!("--residual-scale and --residual-out must be given together"),
    };

    fs::write(&args.out, buf).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some((path, text)) = residual {
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {} ({} contexts)", args.out.display(), model.row_count());
    Ok(())
}

fn gated_offsets(gated: &GatedResidualModel) -> Vec<Vec<f64>> {
    gated.offsets().to_vec()
}

fn emit(path: Option<&PathBuf>, bytes: Vec<u8>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}
