//! Implementations behind the subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rayon::prelude::*;

use slstm::compress::{
    apply_mask, load_masks, load_stats, prune_balanced, prune_magnitude, save_masks, MaskSet,
    PePartition, QuotaMode,
};
use slstm::container::{load_model, read_json, save_model, write_json};
use slstm::encode::{
    dump_streams, encode_csc, load_encoded, save_encoded, EncodedLayer, EncodedModel,
};
use slstm::model::{ActivationChoice, LayerConfig, LstmModel, LstmParams, MATVEC_TENSORS};
use slstm::quantize::{
    build_lut, derive_plan, load_quantized, lut_to_csv, quantize_params, save_plan,
    save_quantized, ActLuts, FixedVector, LutFunction, QuantizedModel, QuantizedState,
    LUT_POINTS, SIGMOID_SAMPLE_RANGE, TANH_SAMPLE_RANGE,
};
use slstm::schedule::{build_schedule, schedule_to_dot, validate_schedule, Schedule};
use slstm::simulate::{
    fifo_depth_sweep, masks_for_layer, simulate_lstm, sparsity_sweep, PushMode, SimConfig,
    SimReport,
};
use slstm::synth;
use slstm::{Error, Result};

use crate::manifest::record_stage;

fn maybe_record(
    manifest: &Option<PathBuf>,
    stage: &str,
    params: &str,
    input: Option<&Path>,
    output: &Path,
) -> Result<()> {
    if let Some(path) = manifest {
        record_stage(path, stage, params, input, output)?;
    }
    Ok(())
}

fn layer_key(layer: usize, name: &str) -> String {
    format!("layer{layer}.{name}")
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_gen(
    out: &Path,
    seed: u64,
    layers: usize,
    input_dim: usize,
    hidden: usize,
    proj: usize,
    no_peephole: bool,
    no_projection: bool,
    zero: bool,
    manifest: &Option<PathBuf>,
) -> Result<()> {
    if layers == 0 {
        return Err(Error::InvalidArg("need at least one layer".into()));
    }
    let mut configs = Vec::with_capacity(layers);
    let mut in_dim = input_dim;
    for _ in 0..layers {
        let cfg = LayerConfig {
            input_dim: in_dim,
            hidden_dim: hidden,
            proj_dim: if no_projection { hidden } else { proj },
            has_peephole: !no_peephole,
            has_projection: !no_projection,
        };
        cfg.validate()?;
        in_dim = cfg.output_dim();
        configs.push(cfg);
    }
    let model = LstmModel {
        layers: configs
            .iter()
            .enumerate()
            .map(|(k, cfg)| {
                if zero {
                    LstmParams::zeros(*cfg)
                } else {
                    Ok(synth::random_params(seed.wrapping_add(k as u64), *cfg))
                }
            })
            .collect::<Result<_>>()?,
    };
    save_model(&model, out)?;
    info!("wrote {} layer(s) to {}", layers, out.display());
    maybe_record(
        manifest,
        "gen",
        &format!("seed={seed} layers={layers} dims={input_dim}/{hidden}/{proj} zero={zero}"),
        None,
        out,
    )
}

// ---------------------------------------------------------------------------
// prune
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_prune(
    model_path: &Path,
    out: &Path,
    mask_out: &Path,
    density: f64,
    balanced: bool,
    n_pe: usize,
    per_row: bool,
    per_column: bool,
    iteration: u32,
    manifest: &Option<PathBuf>,
) -> Result<()> {
    let model = load_model(model_path)?;
    let mode = match (balanced, per_row, per_column) {
        (_, true, true) => {
            return Err(Error::InvalidArg(
                "--per-row and --per-column are mutually exclusive".into(),
            ))
        }
        (_, true, false) => Some(QuotaMode::PerRow),
        (_, false, true) => Some(QuotaMode::PerPeColumn),
        (true, false, false) => Some(QuotaMode::PerPe),
        (false, false, false) => None,
    };
    let part = PePartition::new(n_pe)?;

    let mut pruned_layers = Vec::with_capacity(model.layers.len());
    let mut masks = Vec::new();
    for (k, layer) in model.layers.iter().enumerate() {
        let mut pruned = layer.clone();
        for name in MATVEC_TENSORS {
            let Some(m) = layer.matvec_tensor(name) else {
                continue;
            };
            let mask = match mode {
                Some(mode) => prune_balanced(m, density, part, mode)?,
                None => prune_magnitude(m, density)?,
            };
            let masked = apply_mask(m, &mask)?;
            let stats = load_stats(&mask, part)?;
            debug!(
                "layer {k} {name}: nnz {} imbalance {:.4}",
                mask.nnz(),
                stats.imbalance
            );
            match name {
                "W_ix" => pruned.w_ix = masked,
                "W_fx" => pruned.w_fx = masked,
                "W_cx" => pruned.w_cx = masked,
                "W_ox" => pruned.w_ox = masked,
                "W_ir" => pruned.w_ir = masked,
                "W_fr" => pruned.w_fr = masked,
                "W_cr" => pruned.w_cr = masked,
                "W_or" => pruned.w_or = masked,
                "W_ym" => pruned.w_ym = Some(masked),
                _ => unreachable!(),
            }
            masks.push((layer_key(k, name), mask));
        }
        pruned_layers.push(pruned);
    }
    let pruned = LstmModel {
        layers: pruned_layers,
    };
    save_model(&pruned, out)?;
    save_masks(&MaskSet { masks }, density, n_pe, mode, iteration, mask_out)?;
    info!(
        "pruned to density {density} ({}) -> {}, masks -> {}",
        match mode {
            Some(QuotaMode::PerPe) => "per-PE quota",
            Some(QuotaMode::PerRow) => "per-row quota",
            Some(QuotaMode::PerPeColumn) => "per-PE-column quota",
            None => "magnitude",
        },
        out.display(),
        mask_out.display()
    );
    maybe_record(
        manifest,
        "prune",
        &format!("density={density} mode={mode:?} n_pe={n_pe} iteration={iteration}"),
        Some(model_path),
        out,
    )
}

// ---------------------------------------------------------------------------
// quantize
// ---------------------------------------------------------------------------

pub fn cmd_quantize(
    model_path: &Path,
    out: &Path,
    plan_out: &Path,
    width: u32,
    manifest: &Option<PathBuf>,
) -> Result<()> {
    let model = load_model(model_path)?;
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut plans = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let plan = derive_plan(layer, width)?;
        layers.push(quantize_params(layer, &plan)?);
        plans.push(plan);
    }
    save_quantized(&QuantizedModel { layers }, out)?;
    save_plan(&plans, plan_out)?;
    info!(
        "quantized at {width} bits -> {}, plan -> {}",
        out.display(),
        plan_out.display()
    );
    maybe_record(
        manifest,
        "quantize",
        &format!("width={width}"),
        Some(model_path),
        out,
    )
}

// ---------------------------------------------------------------------------
// encode
// ---------------------------------------------------------------------------

pub fn cmd_encode(
    model_path: &Path,
    mask_path: &Path,
    out: &Path,
    n_pe: usize,
    dump_cols: Option<usize>,
    manifest: &Option<PathBuf>,
) -> Result<()> {
    let qmodel = load_quantized(model_path)?;
    let (mask_set, _mask_manifest) = load_masks(mask_path)?;

    let mut layers = Vec::with_capacity(qmodel.layers.len());
    for (k, qlayer) in qmodel.layers.iter().enumerate() {
        let mut matrices = BTreeMap::new();
        let mut pad_stats = BTreeMap::new();
        for name in MATVEC_TENSORS {
            let Ok(q) = qlayer.tensor(name) else {
                continue;
            };
            let mask = mask_set
                .get(&layer_key(k, name))
                .ok_or_else(|| Error::Container(format!("mask file has no {}", layer_key(k, name))))?;
            let (encoded, stats) = encode_csc(q, mask, n_pe)?;
            if let Some(cols) = dump_cols {
                print!("{}", dump_streams(&layer_key(k, name), &encoded, cols));
            }
            matrices.insert(name.to_string(), encoded);
            pad_stats.insert(name.to_string(), stats);
        }
        layers.push(EncodedLayer {
            config: qlayer.config,
            plan: qlayer.plan.clone(),
            matrices,
            pad_stats,
        });
    }
    let model = EncodedModel { layers };
    save_encoded(&model, out)?;
    let words: u64 = model.layers.iter().map(|l| l.total_words()).sum();
    let padding: u64 = model
        .layers
        .iter()
        .flat_map(|l| l.pad_stats.values())
        .map(|s| s.padding_words)
        .sum();
    info!(
        "encoded {} words ({} padding, {} bytes) -> {}",
        words,
        padding,
        2 * words,
        out.display()
    );
    maybe_record(
        manifest,
        "encode",
        &format!("n_pe={n_pe}"),
        Some(model_path),
        out,
    )
}

// ---------------------------------------------------------------------------
// schedule
// ---------------------------------------------------------------------------

/// Any of the model manifests carries a `layers` table we can plan from.
fn read_layer_configs(path: &Path) -> Result<Vec<LayerConfig>> {
    #[derive(serde::Deserialize)]
    struct AnyManifest {
        layers: Vec<LayerConfig>,
    }
    let manifest: AnyManifest = read_json(path)?;
    if manifest.layers.is_empty() {
        return Err(Error::Container("manifest lists no layers".into()));
    }
    Ok(manifest.layers)
}

pub fn cmd_schedule(
    model_path: &Path,
    out: &Path,
    layer: usize,
    dot_out: Option<&Path>,
    manifest: &Option<PathBuf>,
) -> Result<()> {
    let configs = read_layer_configs(model_path)?;
    let cfg = configs.get(layer).ok_or_else(|| {
        Error::InvalidArg(format!(
            "layer {layer} out of range ({} layers)",
            configs.len()
        ))
    })?;
    let schedule = build_schedule(cfg)?;
    let violations = validate_schedule(&schedule);
    if !violations.is_empty() {
        return Err(Error::Corrupt(format!(
            "built schedule failed validation: {violations:?}"
        )));
    }
    write_json(out, &schedule)?;
    if let Some(dot_path) = dot_out {
        std::fs::write(dot_path, schedule_to_dot(&schedule))
            .map_err(|e| Error::io(dot_path, e))?;
    }
    info!("schedule for layer {layer} -> {}", out.display());
    maybe_record(
        manifest,
        "schedule",
        &format!("layer={layer}"),
        Some(model_path),
        out,
    )
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_simulate(
    encoded_path: &Path,
    schedule_path: &Path,
    out: &Path,
    csv_out: Option<&Path>,
    layer: usize,
    timesteps: usize,
    cfg: SimConfig,
    manifest: &Option<PathBuf>,
) -> Result<()> {
    let model = load_encoded(encoded_path)?;
    let schedule: Schedule = read_json(schedule_path)?;
    let encoded_layer = model.layers.get(layer).ok_or_else(|| {
        Error::InvalidArg(format!(
            "layer {layer} out of range ({} layers)",
            model.layers.len()
        ))
    })?;
    let report = simulate_lstm(encoded_layer, &schedule, &cfg, timesteps)?;
    write_json(out, &report)?;
    if let Some(csv_path) = csv_out {
        std::fs::write(csv_path, timeline_csv(&report)).map_err(|e| Error::io(csv_path, e))?;
    }
    println!(
        "total {} cycles = {:.2} us | utilization {:.3} | {:.1} GOPS sparse / {:.1} GOPS dense-equivalent",
        report.total_cycles,
        report.latency_seconds * 1e6,
        report.utilization,
        report.sparse_gops,
        report.dense_equivalent_gops
    );
    maybe_record(
        manifest,
        "simulate",
        &format!("layer={layer} timesteps={timesteps} fifo_depth={}", cfg.fifo_depth),
        Some(encoded_path),
        out,
    )
}

fn timeline_csv(report: &SimReport) -> String {
    let mut out = String::from("timestep,state,phase,start,end,spmv,fetch_stall,fetch_bound\n");
    for s in &report.states {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.timestep,
            s.state,
            s.phase,
            s.start,
            s.end,
            s.spmv.as_deref().unwrap_or(""),
            s.fetch_stall,
            s.fetch_bound
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

pub fn cmd_run(
    model_path: &Path,
    input_path: &Path,
    out: &Path,
    g_sigmoid: bool,
    manifest: &Option<PathBuf>,
) -> Result<()> {
    let qmodel = load_quantized(model_path)?;
    let xs: Vec<Vec<f64>> = read_json(input_path)?;
    let luts = ActLuts::build_default();
    let acts = ActivationChoice {
        cell_input: if g_sigmoid {
            slstm::model::Activation::Sigmoid
        } else {
            slstm::model::Activation::Tanh
        },
        cell_output: slstm::model::Activation::Tanh,
    };

    let mut sequence: Vec<FixedVector> = xs
        .iter()
        .map(|x| FixedVector::quantize(x, qmodel.layers[0].plan.input))
        .collect();
    for qlayer in &qmodel.layers {
        let mut state = QuantizedState::zeros(&qlayer.config, &qlayer.plan);
        let mut next_sequence = Vec::with_capacity(sequence.len());
        for x in &sequence {
            let (y, next) = slstm::quantize::quantized_lstm_step(qlayer, &luts, acts, x, &state)?;
            next_sequence.push(y);
            state = next;
        }
        sequence = next_sequence;
    }
    let outputs: Vec<Vec<f64>> = sequence.iter().map(|y| y.dequantize()).collect();
    write_json(out, &outputs)?;
    info!("{} timesteps -> {}", outputs.len(), out.display());
    maybe_record(
        manifest,
        "run",
        &format!("timesteps={}", outputs.len()),
        Some(model_path),
        out,
    )
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn cmd_report(report_path: &Path, csv_out: Option<&Path>) -> Result<()> {
    let report: SimReport = read_json(report_path)?;
    println!(
        "{:<6} {:>10} {:>12} {:>12} {:>12} {:>8} {:>8}",
        "matrix", "size", "words", "compute cyc", "fetch cyc", "util", "useful"
    );
    for m in &report.per_matrix {
        println!(
            "{:<6} {:>10} {:>12} {:>12} {:>12} {:>8.3} {:>8.3}",
            m.name,
            format!("{}x{}", m.rows, m.cols),
            m.total_words,
            m.compute_cycles,
            m.fetch_cycles,
            m.utilization,
            m.useful_utilization
        );
    }
    println!(
        "total: {} cycles = {:.2} us over {} timestep(s)",
        report.total_cycles,
        report.latency_seconds * 1e6,
        report.timesteps
    );
    println!(
        "ops: sparse {} ({:.1} GOPS), dense-equivalent {} ({:.1} GOPS)",
        report.sparse_ops,
        report.sparse_gops,
        report.dense_equivalent_ops,
        report.dense_equivalent_gops
    );
    let fetch_bound: Vec<String> = report
        .states
        .iter()
        .filter(|s| s.fetch_bound)
        .map(|s| format!("{}:{}", s.state, s.phase))
        .collect();
    if !fetch_bound.is_empty() {
        println!("fetch-bound states: {}", fetch_bound.join(", "));
    }
    if let Some(csv_path) = csv_out {
        let mut csv = String::from("matrix,rows,cols,words,useful_words,compute_cycles,fetch_cycles,utilization,useful_utilization\n");
        for m in &report.per_matrix {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                m.name,
                m.rows,
                m.cols,
                m.total_words,
                m.useful_words,
                m.compute_cycles,
                m.fetch_cycles,
                m.utilization,
                m.useful_utilization
            ));
        }
        std::fs::write(csv_path, csv).map_err(|e| Error::io(csv_path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

fn with_jobs<T: Send>(jobs: usize, work: impl Fn() -> T + Send) -> T {
    if jobs <= 1 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool")
            .install(work)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep_fifo(
    out: &Path,
    seed: u64,
    seeds: u64,
    density: f64,
    depths: &[usize],
    jobs: usize,
) -> Result<()> {
    let depths = depths.to_vec();
    let rows: Vec<String> = with_jobs(jobs, || {
        (0..seeds)
            .into_par_iter()
            .map(|s| {
                let params = synth::random_params(seed + s, synth::benchmark_config());
                let plan = derive_plan(&params, 12)?;
                let mut lines = String::new();
                for (label, mode) in [
                    ("magnitude", None),
                    ("balanced", Some(QuotaMode::PerPeColumn)),
                ] {
                    let masks = masks_for_layer(&params, density, 32, mode)?;
                    let layer = slstm::encode::encode_layer(&params, &plan, &masks, 32)?;
                    let mats: Vec<_> = layer.matrices.values().collect();
                    for point in fifo_depth_sweep(&mats, &depths, PushMode::Broadcast) {
                        lines.push_str(&format!(
                            "{},{label},{},{:.6},{:.6}\n",
                            seed + s,
                            point.depth,
                            point.utilization,
                            point.useful_utilization
                        ));
                    }
                }
                Ok(lines)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut csv = String::from("seed,mask,depth,utilization,useful_utilization\n");
    for r in rows {
        csv.push_str(&r);
    }
    std::fs::write(out, csv).map_err(|e| Error::io(out, e))?;
    println!("fifo sweep ({seeds} seeds x {} depths) -> {}", depths.len(), out.display());
    Ok(())
}

pub fn cmd_sweep_density(
    out: &Path,
    seed: u64,
    densities: &[f64],
    cfg: SimConfig,
    jobs: usize,
) -> Result<()> {
    let params = synth::random_params(seed, synth::benchmark_config());
    let schedule = build_schedule(&params.config)?;
    // Points are independent; split them across workers when asked.
    let points = with_jobs(jobs, || {
        densities
            .par_iter()
            .map(|&d| {
                let pts = sparsity_sweep(&params, &schedule, &cfg, 12, &[d])?;
                Ok(pts.into_iter().next().unwrap())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut csv = String::from(
        "density,balanced_latency_us,unbalanced_latency_us,balanced_speedup,unbalanced_speedup\n",
    );
    for p in &points {
        csv.push_str(&format!(
            "{},{:.3},{:.3},{:.4},{:.4}\n",
            p.density,
            p.balanced_latency * 1e6,
            p.unbalanced_latency * 1e6,
            p.balanced_speedup,
            p.unbalanced_speedup
        ));
    }
    std::fs::write(out, csv).map_err(|e| Error::io(out, e))?;
    println!("density sweep ({} points) -> {}", points.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// dump-lut
// ---------------------------------------------------------------------------

pub fn cmd_dump_lut(
    function: &str,
    out: &Path,
    points: usize,
    range: Option<(f64, f64)>,
) -> Result<()> {
    let (tag, default_range) = match function {
        "sigmoid" => (LutFunction::Sigmoid, SIGMOID_SAMPLE_RANGE),
        "tanh" => (LutFunction::Tanh, TANH_SAMPLE_RANGE),
        other => {
            return Err(Error::InvalidArg(format!(
                "unknown function {other}; expected sigmoid or tanh"
            )))
        }
    };
    let lut = build_lut(tag, range.unwrap_or(default_range), points)?;
    std::fs::write(out, lut_to_csv(&lut)).map_err(|e| Error::io(out, e))?;
    println!("{function} table ({points} points) -> {}", out.display());
    Ok(())
}

pub fn default_lut_points() -> usize {
    LUT_POINTS
}
