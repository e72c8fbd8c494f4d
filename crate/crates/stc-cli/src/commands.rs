//! Subcommand implementations: single runs, parameter sweeps, plot-data
//! emission, and network generation.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use stc_core::engine::{self, RunConfig, RunOutput};
use stc_core::linalg::Vector;
use stc_core::plant::{self, Benchmark, GeneratedNetwork, LtiSystem, NodeKind};
use stc_core::tables::{build_table, IntegralTable, TimeGrid};

use crate::config::{ExperimentConfig, SweepParameter, SCHEMA_VERSION};
use crate::error::CliError;
use crate::output::{fmt_num, read_csv, CsvTable};

/// Thread pool for sweep fan-out, sized by the STC_THREADS variable when
/// set (defaults to the available parallelism).
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var("STC_THREADS") {
        let threads: usize = value
            .parse()
            .ok()
            .filter(|t| *t >= 1)
            .ok_or_else(|| CliError::Config(format!("STC_THREADS must be a positive integer, got {value:?}")))?;
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

/// Deterministic initial state for a seed: standard normal entries from a
/// stream separate from the network generator's.
fn draw_x0(n: usize, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
}

/// One fully assembled experiment instance.
pub struct Prepared {
    pub network: GeneratedNetwork,
    pub bench: Benchmark,
    pub table: IntegralTable,
    pub run_config: RunConfig,
}

/// Builds the plant, benchmark, integral table, and run configuration for
/// one seed of the experiment.
pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared, CliError> {
    let mut spec = config.network.to_spec();
    spec.seed = seed;
    let network = plant::generate_network(&spec).map_err(CliError::from_core)?;
    let bench = plant::build_benchmark(&network.system).map_err(CliError::from_core)?;
    let grid = TimeGrid::from_horizon(
        config.run.grid_step_seconds,
        config.run.grid_horizon_seconds,
    )
    .map_err(CliError::from_core)?;
    let table = build_table(&network.system, &grid);

    let x0 = match &config.run.initial_state {
        Some(values) => Vector::from_vec(values.clone()),
        None => draw_x0(network.system.state_dim(), seed),
    };
    let mut run_config = RunConfig::new(
        config.run.alpha_loss_budget,
        config.run.gamma_gain_penalty,
        config.run.eta_input_penalty,
        config.run.iteration_count,
        x0,
    );
    run_config.tail_horizon = config.run.tail_horizon_seconds;
    run_config.zero_threshold = config.run.zero_threshold;
    run_config.force_benchmark_gain = config.run.force_benchmark_gain;
    Ok(Prepared {
        network,
        bench,
        table,
        run_config,
    })
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct MetricsDoc<'a> {
    schema_version: u32,
    config: &'a ExperimentConfig,
    metrics: MetricsBody,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct MetricsBody {
    kappa_percent: Vec<f64>,
    mu_percent: Vec<f64>,
    r_f_percent: f64,
    r_u_percent: f64,
    d_seconds: f64,
    total_cost: f64,
    benchmark_cost: f64,
    nu: f64,
    truncation_tolerance: f64,
}

impl From<&engine::RunMetrics> for MetricsBody {
    fn from(m: &engine::RunMetrics) -> Self {
        Self {
            kappa_percent: m.kappa.clone(),
            mu_percent: m.mu.clone(),
            r_f_percent: m.r_f,
            r_u_percent: m.r_u,
            d_seconds: m.d,
            total_cost: m.total_cost,
            benchmark_cost: m.benchmark_cost,
            nu: m.nu,
            truncation_tolerance: m.truncation_tolerance,
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(&format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(&format!("writing {}", path.display()), e))
}

fn kind_name(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Square => "square",
        NodeKind::Circle => "circle",
    }
}

fn write_layout(path: &Path, network: &GeneratedNetwork) -> Result<(), CliError> {
    let mut table = CsvTable::new(&["node", "x", "y", "kind"]);
    for (i, (pos, kind)) in network.positions.iter().zip(&network.kinds).enumerate() {
        table.row(&[
            i.to_string(),
            fmt_num(pos[0]),
            fmt_num(pos[1]),
            kind_name(*kind).to_string(),
        ]);
    }
    table.write_to(path)
}

fn write_records(path: &Path, out: &RunOutput) -> Result<(), CliError> {
    let mut table = CsvTable::new(&[
        "k",
        "t",
        "delta",
        "kappa",
        "mu",
        "intervalCost",
        "converged",
    ]);
    for (rec, (kappa, mu)) in out
        .records
        .iter()
        .zip(out.metrics.kappa.iter().zip(&out.metrics.mu))
    {
        table.row(&[
            rec.k.to_string(),
            fmt_num(rec.t),
            fmt_num(rec.delta),
            fmt_num(*kappa),
            fmt_num(*mu),
            fmt_num(rec.interval_cost),
            rec.converged.to_string(),
        ]);
    }
    table.write_to(path)
}

fn write_trajectory(
    path: &Path,
    sys: &LtiSystem,
    table: &IntegralTable,
    out: &RunOutput,
) -> Result<(), CliError> {
    let n = sys.state_dim();
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.push("norm2".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = CsvTable::new(&header_refs);

    let mut emit = |t: f64, state: &Vector| {
        let mut row = Vec::with_capacity(n + 2);
        row.push(fmt_num(t));
        for i in 0..n {
            row.push(fmt_num(state[i]));
        }
        row.push(fmt_num(state.norm()));
        csv.row(&row);
    };
    for rec in &out.records {
        for idx in 0..rec.grid_index {
            let state = plant::propagate(sys, table, &rec.f, &rec.x, idx)
                .map_err(CliError::from_core)?;
            emit(rec.t + table.grid().point(idx), &state);
        }
    }
    emit(out.final_time, &out.final_state);
    csv.write_to(path)
}

fn write_benchmark_trajectory(
    path: &Path,
    sys: &LtiSystem,
    bench: &Benchmark,
    x0: &Vector,
    horizon: f64,
) -> Result<(), CliError> {
    let (_, trace) = engine::benchmark_run(sys, bench, x0, horizon).map_err(CliError::from_core)?;
    let mut csv = CsvTable::new(&["t", "norm2"]);
    for (t, norm) in trace {
        csv.row(&[fmt_num(t), fmt_num(norm)]);
    }
    csv.write_to(path)
}

/// `run`: executes one experiment and writes records.csv, metrics.json,
/// trajectory.csv, plus the generated system and layout artifacts.
pub fn run_single(config: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    ensure_dir(out_dir)?;
    let prepared = prepare(config, config.network.seed)?;
    let sys = &prepared.network.system;
    let out = engine::run_algorithm(sys, &prepared.bench, &prepared.table, &prepared.run_config)
        .map_err(CliError::from_core)?;

    write_text(&out_dir.join("config.json"), &config.to_json_string())?;
    write_text(&out_dir.join("system.json"), &sys.to_json_string())?;
    write_layout(&out_dir.join("network_layout.csv"), &prepared.network)?;
    write_records(&out_dir.join("records.csv"), &out)?;
    write_trajectory(&out_dir.join("trajectory.csv"), sys, &prepared.table, &out)?;
    let horizon = out.final_time.max(prepared.table.grid().step());
    write_benchmark_trajectory(
        &out_dir.join("benchmark_trajectory.csv"),
        sys,
        &prepared.bench,
        &prepared.run_config.x0,
        horizon,
    )?;

    let doc = MetricsDoc {
        schema_version: SCHEMA_VERSION,
        config,
        metrics: MetricsBody::from(&out.metrics),
    };
    let json = serde_json::to_string_pretty(&doc).expect("metrics serialization cannot fail");
    write_text(&out_dir.join("metrics.json"), &json)?;
    Ok(())
}

fn apply_parameter(config: &ExperimentConfig, parameter: SweepParameter, value: f64) -> ExperimentConfig {
    let mut adjusted = config.clone();
    match parameter {
        SweepParameter::Alpha => adjusted.run.alpha_loss_budget = value,
        SweepParameter::Beta => adjusted.network.decay_rate_per_length = value,
        SweepParameter::Gamma => adjusted.run.gamma_gain_penalty = value,
        SweepParameter::Eta => adjusted.run.eta_input_penalty = value,
    }
    adjusted
}

/// Metrics of one sweep run.
#[derive(Debug, Clone)]
pub struct SweepSample {
    pub value: f64,
    pub seed: u64,
    pub r_f: f64,
    pub r_u: f64,
    pub d: f64,
    pub nu: f64,
}

/// Aggregated sweep row: means over the seeds at one parameter value.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub mean_r_f: f64,
    pub mean_r_u: f64,
    pub mean_d: f64,
    pub mean_nu: f64,
    pub runs: usize,
}

/// Runs the sweep grid (values x seeds) concurrently and aggregates means
/// per value. Results are deterministic: jobs are indexed and collected in
/// order.
pub fn execute_sweep(
    config: &ExperimentConfig,
    parameter: SweepParameter,
    values: &[f64],
    seeds_per_point: usize,
) -> Result<(Vec<SweepRow>, Vec<SweepSample>), CliError> {
    use rayon::prelude::*;

    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|v| (0..seeds_per_point).map(move |s| (v, s)))
        .collect();
    let pool = thread_pool()?;
    let samples: Vec<Result<SweepSample, CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(vi, si)| {
                let value = values[vi];
                let adjusted = apply_parameter(config, parameter, value);
                let seed = config.network.seed.wrapping_add(si as u64);
                let prepared = prepare(&adjusted, seed)?;
                let out = engine::run_algorithm(
                    &prepared.network.system,
                    &prepared.bench,
                    &prepared.table,
                    &prepared.run_config,
                )
                .map_err(CliError::from_core)?;
                Ok(SweepSample {
                    value,
                    seed,
                    r_f: out.metrics.r_f,
                    r_u: out.metrics.r_u,
                    d: out.metrics.d,
                    nu: out.metrics.nu,
                })
            })
            .collect()
    });

    let mut flat = Vec::with_capacity(samples.len());
    for sample in samples {
        flat.push(sample?);
    }
    let rows = values
        .iter()
        .enumerate()
        .map(|(vi, &value)| {
            let slice = &flat[vi * seeds_per_point..(vi + 1) * seeds_per_point];
            let mean = |f: fn(&SweepSample) -> f64| {
                slice.iter().map(f).sum::<f64>() / slice.len() as f64
            };
            SweepRow {
                value,
                mean_r_f: mean(|s| s.r_f),
                mean_r_u: mean(|s| s.r_u),
                mean_d: mean(|s| s.d),
                mean_nu: mean(|s| s.nu),
                runs: slice.len(),
            }
        })
        .collect();
    Ok((rows, flat))
}

/// `sweep`: one aggregated row per parameter value; raw per-seed rows
/// optionally alongside.
pub fn run_sweep(config: &ExperimentConfig, out_dir: &Path, raw: bool) -> Result<(), CliError> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep section missing from config".into()))?;
    ensure_dir(out_dir)?;
    let (rows, samples) = execute_sweep(config, sweep.parameter, &sweep.values, sweep.seeds_per_point)?;

    write_text(&out_dir.join("config.json"), &config.to_json_string())?;
    let mut csv = CsvTable::new(&[
        "parameter",
        "value",
        "meanRF",
        "meanRU",
        "meanD",
        "meanNu",
        "runs",
    ]);
    for row in &rows {
        csv.row(&[
            sweep.parameter.name().to_string(),
            fmt_num(row.value),
            fmt_num(row.mean_r_f),
            fmt_num(row.mean_r_u),
            fmt_num(row.mean_d),
            fmt_num(row.mean_nu),
            row.runs.to_string(),
        ]);
    }
    csv.write_to(&out_dir.join("sweep.csv"))?;

    if raw || config.output.emit_raw {
        let mut csv = CsvTable::new(&["parameter", "value", "seed", "RF", "RU", "D", "nu"]);
        for s in &samples {
            csv.row(&[
                sweep.parameter.name().to_string(),
                fmt_num(s.value),
                s.seed.to_string(),
                fmt_num(s.r_f),
                fmt_num(s.r_u),
                fmt_num(s.d),
                fmt_num(s.nu),
            ]);
        }
        csv.write_to(&out_dir.join("sweep_raw.csv"))?;
    }
    Ok(())
}

/// `gen-network`: materializes the network instance (system matrices plus
/// layout) without running the controller.
pub fn gen_network(config: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    ensure_dir(out_dir)?;
    let mut spec = config.network.to_spec();
    let network = plant::generate_network(&spec).map_err(CliError::from_core)?;
    // Pin the realized layout so the exact instance can be reloaded.
    spec.positions = Some(network.positions.clone());
    spec.node_types = Some(network.kinds.clone());
    let spec_json = serde_json::to_string_pretty(&spec).expect("spec serialization cannot fail");
    write_text(&out_dir.join("network.json"), &spec_json)?;
    write_text(&out_dir.join("system.json"), &network.system.to_json_string())?;
    write_layout(&out_dir.join("network_layout.csv"), &network)?;
    Ok(())
}

fn long_format(path: &Path, rows: &[(String, f64, f64)]) -> Result<(), CliError> {
    let mut csv = CsvTable::new(&["series", "x", "y"]);
    for (series, x, y) in rows {
        csv.row(&[series.clone(), fmt_num(*x), fmt_num(*y)]);
    }
    csv.write_to(path)
}

fn parse_field(row: &[String], idx: usize, what: &Path) -> Result<f64, CliError> {
    row.get(idx)
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| CliError::Io(format!("malformed numeric field in {}", what.display())))
}

/// `plotdata`: converts whatever result files exist in the directory into
/// tidy (series, x, y) CSVs, one per figure. Figures whose inputs are
/// missing are reported; producing none at all is an error.
pub fn emit_plot_data(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut produced = Vec::new();
    let mut missing = Vec::new();

    let layout = dir.join("network_layout.csv");
    if layout.is_file() {
        let (_, rows) = read_csv(&layout)?;
        let mut out = Vec::new();
        for row in &rows {
            let kind = row.get(3).cloned().unwrap_or_default();
            out.push((
                kind,
                parse_field(row, 1, &layout)?,
                parse_field(row, 2, &layout)?,
            ));
        }
        long_format(&dir.join("fig1.csv"), &out)?;
        produced.push("fig1.csv".into());
    } else {
        missing.push("network_layout.csv (fig1)".into());
    }

    let records = dir.join("records.csv");
    if records.is_file() {
        let (_, rows) = read_csv(&records)?;
        let mut kappa = Vec::new();
        let mut mu = Vec::new();
        let mut delta = Vec::new();
        for row in &rows {
            let t = parse_field(row, 1, &records)?;
            kappa.push(("kappa".to_string(), t, parse_field(row, 3, &records)?));
            mu.push(("mu".to_string(), t, parse_field(row, 4, &records)?));
            delta.push(("delta".to_string(), t, parse_field(row, 2, &records)?));
        }
        long_format(&dir.join("fig2.csv"), &kappa)?;
        long_format(&dir.join("fig3.csv"), &mu)?;
        long_format(&dir.join("fig5.csv"), &delta)?;
        produced.push("fig2.csv".into());
        produced.push("fig3.csv".into());
        produced.push("fig5.csv".into());
    } else {
        missing.push("records.csv (fig2, fig3, fig5)".into());
    }

    let trajectory = dir.join("trajectory.csv");
    let bench_trajectory = dir.join("benchmark_trajectory.csv");
    if trajectory.is_file() && bench_trajectory.is_file() {
        let (header, rows) = read_csv(&trajectory)?;
        let norm_idx = header.len() - 1;
        let mut fig4a = Vec::new();
        let mut fig4b = Vec::new();
        for row in &rows {
            let t = parse_field(row, 0, &trajectory)?;
            fig4a.push((
                "selftriggered".to_string(),
                t,
                parse_field(row, norm_idx, &trajectory)?,
            ));
            for (i, name) in header[1..norm_idx].iter().enumerate() {
                fig4b.push((name.clone(), t, parse_field(row, 1 + i, &trajectory)?));
            }
        }
        let (_, rows) = read_csv(&bench_trajectory)?;
        for row in &rows {
            fig4a.push((
                "benchmark".to_string(),
                parse_field(row, 0, &bench_trajectory)?,
                parse_field(row, 1, &bench_trajectory)?,
            ));
        }
        long_format(&dir.join("fig4a.csv"), &fig4a)?;
        long_format(&dir.join("fig4b.csv"), &fig4b)?;
        produced.push("fig4a.csv".into());
        produced.push("fig4b.csv".into());
    } else {
        missing.push("trajectory.csv + benchmark_trajectory.csv (fig4a, fig4b)".into());
    }

    let sweep = dir.join("sweep.csv");
    if sweep.is_file() {
        let (_, rows) = read_csv(&sweep)?;
        let parameter = rows
            .first()
            .and_then(|r| r.first())
            .cloned()
            .unwrap_or_default();
        let series = |idx: usize, name: &str| -> Result<Vec<(String, f64, f64)>, CliError> {
            rows.iter()
                .map(|row| {
                    Ok((
                        name.to_string(),
                        parse_field(row, 1, &sweep)?,
                        parse_field(row, idx, &sweep)?,
                    ))
                })
                .collect()
        };
        match parameter.as_str() {
            "alpha" => {
                std::fs::copy(&sweep, dir.join("table1.csv"))
                    .map_err(|e| CliError::io("copying sweep.csv to table1.csv", e))?;
                produced.push("table1.csv".into());
            }
            "beta" => {
                long_format(&dir.join("fig6a.csv"), &series(2, "RF")?)?;
                long_format(&dir.join("fig6b.csv"), &series(3, "RU")?)?;
                long_format(&dir.join("fig7.csv"), &series(4, "D")?)?;
                produced.push("fig6a.csv".into());
                produced.push("fig6b.csv".into());
                produced.push("fig7.csv".into());
            }
            "gamma" => {
                long_format(&dir.join("fig8a.csv"), &series(2, "RF")?)?;
                produced.push("fig8a.csv".into());
            }
            "eta" => {
                long_format(&dir.join("fig8b.csv"), &series(3, "RU")?)?;
                produced.push("fig8b.csv".into());
            }
            other => {
                missing.push(format!("sweep.csv has unknown parameter {other:?}"));
            }
        }
    } else {
        missing.push("sweep.csv (table1/fig6-fig8)".into());
    }

    if produced.is_empty() {
        return Err(CliError::Config(format!(
            "no plottable inputs in {}: missing {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    for item in &missing {
        eprintln!("plotdata: skipped {item}");
    }
    Ok(produced)
}

/// Shared entry used by `main`: resolves the output directory with the
/// CLI override taking precedence over the config.
pub fn resolve_out_dir(config: &ExperimentConfig, cli_out: Option<&Path>) -> PathBuf {
    cli_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&config.output.directory))
}
