//! Cycle-approximate performance model of the accelerator.
//!
//! One channel holds `n_pe` processing elements fed by per-PE activation
//! FIFOs. A broadcast producer pushes one input-vector element (one matrix
//! column) per cycle whenever every FIFO has a free slot; a PE claims its
//! FIFO head when it finishes the previous column and performs one
//! multiply-accumulate per stored word (padding words included). The slot is
//! released at claim time, so a depth-1 queue still synchronizes PEs
//! column by column up to the element in flight.
//!
//! Weights stream over a single bandwidth-limited memory lane at
//! `mem_width_bits / 16` words per memory cycle, fetched once and shared by
//! all channels. A matrix product starts only once its stream has fully
//! landed; the fetch itself launches at its schedule phase and overlaps
//! earlier compute. Vectors, pointers and side parameters ride the second
//! memory lane and are assumed hidden behind weight traffic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compress::{prune_balanced, prune_magnitude, PePartition, PruneMask, QuotaMode};
use crate::encode::{encode_layer, EncodedLayer, EncodedSparseMatrix};
use crate::error::{Error, Result};
use crate::model::{LstmParams, MATVEC_TENSORS};
use crate::quantize::derive_plan;
use crate::schedule::{OpKind, Schedule};

/// How activation elements enter the per-PE FIFOs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PushMode {
    /// One element enters every FIFO in the same cycle, gated by the fullest
    /// queue.
    Broadcast,
    /// Each FIFO is filled independently at one element per cycle.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_channels: usize,
    pub n_pe: usize,
    pub fifo_depth: usize,
    /// PE clock in Hz.
    pub freq_pe: u64,
    /// Memory interface clock in Hz.
    pub freq_mem: u64,
    pub mem_width_bits: u64,
    /// Elementwise multipliers per channel.
    pub elemmul_units: usize,
    /// Fixed adder-tree/nonlinear pipeline delay in PE cycles.
    pub pipeline_latency: u64,
    /// Ping-pong weight buffer capacity per PE, in 16-bit words.
    pub spmat_buffer_words: usize,
    pub push_mode: PushMode,
    /// Fetch weights once and broadcast to all channels.
    pub broadcast_weights: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_channels: 32,
            n_pe: 32,
            fifo_depth: 8,
            freq_pe: 200_000_000,
            freq_mem: 200_000_000,
            mem_width_bits: 512,
            elemmul_units: 16,
            pipeline_latency: 16,
            spmat_buffer_words: 512,
            push_mode: PushMode::Broadcast,
            broadcast_weights: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0
            || self.n_pe == 0
            || self.fifo_depth == 0
            || self.freq_pe == 0
            || self.freq_mem == 0
            || self.elemmul_units == 0
        {
            return Err(Error::InvalidArg(
                "all simulator parameters must be >= 1".into(),
            ));
        }
        if self.mem_width_bits < 16 {
            return Err(Error::InvalidArg(
                "memory width must cover at least one 16-bit word".into(),
            ));
        }
        if self.spmat_buffer_words == 0 || self.pipeline_latency == 0 {
            return Err(Error::InvalidArg(
                "buffer capacity and pipeline latency must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// PE cycles needed to stream `words` over the weight lane.
    pub fn fetch_pe_cycles(&self, words: u64) -> u64 {
        let words_per_mem_cycle = self.mem_width_bits / 16;
        let mem_cycles = words.div_ceil(words_per_mem_cycle);
        ((mem_cycles as u128 * self.freq_pe as u128).div_ceil(self.freq_mem as u128)) as u64
    }
}

/// Largest PE count per channel whose multiply-accumulate demand the memory
/// lane can keep fed: `mem_width_bits * freq_mem / (16 * freq_pe)`.
pub fn pe_balance_bound(cfg: &SimConfig) -> u64 {
    ((cfg.mem_width_bits as u128 * cfg.freq_mem as u128) / (16u128 * cfg.freq_pe as u128)) as u64
}

/// Timing of one sparse matrix-vector product across the PE array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpmvSim {
    pub makespan: u64,
    pub per_pe_busy: Vec<u64>,
    /// Busy cycles over total: padding MACs count as busy.
    pub utilization: f64,
    /// Only mask-kept words counted as useful work.
    pub useful_utilization: f64,
    pub total_words: u64,
    pub useful_words: u64,
}

/// Event model of one matrix product at the given FIFO depth.
pub fn simulate_spmv(e: &EncodedSparseMatrix, fifo_depth: usize, push_mode: PushMode) -> SpmvSim {
    assert!(fifo_depth >= 1, "fifo depth must be at least 1");
    let n_pe = e.n_pe;
    let cols = e.cols;

    // Per-PE completion time of the previous column and a ring buffer of the
    // last `depth` claim times (a pushed element holds its slot until the PE
    // claims it).
    let mut done = vec![0u64; n_pe];
    let mut busy = vec![0u64; n_pe];
    let mut claim_hist = vec![0u64; n_pe * fifo_depth];
    let mut push_prev = vec![0u64; n_pe];
    let mut first = true;

    for j in 0..cols {
        let hist_slot = j % fifo_depth;
        match push_mode {
            PushMode::Broadcast => {
                let mut push = if first { 0 } else { push_prev[0] + 1 };
                if j >= fifo_depth {
                    for k in 0..n_pe {
                        push = push.max(claim_hist[k * fifo_depth + hist_slot]);
                    }
                }
                for k in 0..n_pe {
                    let claim = push.max(done[k]);
                    let words = e.column_words(k, j) as u64;
                    done[k] = claim + words;
                    busy[k] += words;
                    claim_hist[k * fifo_depth + hist_slot] = claim;
                }
                push_prev[0] = push;
            }
            PushMode::Independent => {
                for k in 0..n_pe {
                    let mut push = if first { 0 } else { push_prev[k] + 1 };
                    if j >= fifo_depth {
                        push = push.max(claim_hist[k * fifo_depth + hist_slot]);
                    }
                    let claim = push.max(done[k]);
                    let words = e.column_words(k, j) as u64;
                    done[k] = claim + words;
                    busy[k] += words;
                    claim_hist[k * fifo_depth + hist_slot] = claim;
                    push_prev[k] = push;
                }
            }
        }
        first = false;
    }

    let makespan = done.iter().copied().max().unwrap_or(0);
    let total_words = e.total_words();
    let useful_words = e.useful_words();
    let denom = (n_pe as u64 * makespan) as f64;
    let (utilization, useful_utilization) = if makespan == 0 {
        (0.0, 0.0)
    } else {
        (total_words as f64 / denom, useful_words as f64 / denom)
    };
    SpmvSim {
        makespan,
        per_pe_busy: busy,
        utilization,
        useful_utilization,
        total_words,
        useful_words,
    }
}

/// Per-matrix timing summary inside a full-layer report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixTiming {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub total_words: u64,
    pub useful_words: u64,
    /// Makespan of the PE array on this matrix.
    pub compute_cycles: u64,
    /// Words / n_pe: the stall-free floor.
    pub compute_lower_bound: u64,
    pub fetch_cycles: u64,
    pub utilization: f64,
    pub useful_utilization: f64,
}

/// One schedule phase on the global timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTiming {
    pub timestep: usize,
    pub state: String,
    pub phase: usize,
    pub start: u64,
    pub end: u64,
    pub spmv: Option<String>,
    /// Cycles the matrix product sat waiting for its weight stream.
    pub fetch_stall: u64,
    pub fetch_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub timesteps: usize,
    pub total_cycles: u64,
    pub latency_seconds: f64,
    pub per_matrix: Vec<MatrixTiming>,
    pub states: Vec<StateTiming>,
    pub per_pe_busy: Vec<u64>,
    /// PE busy cycles over n_pe * total_cycles.
    pub utilization: f64,
    pub useful_utilization: f64,
    pub sparse_ops: u64,
    pub dense_equivalent_ops: u64,
    pub sparse_gops: f64,
    pub dense_equivalent_gops: f64,
}

/// Operation counts and rates for a completed run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub sparse_ops: u64,
    pub dense_equivalent_ops: u64,
    pub sparse_gops: f64,
    pub dense_equivalent_gops: f64,
}

/// Two operations (multiply and accumulate) per stored nonzero, per channel.
/// Dense-equivalent counts credit every matrix entry.
pub fn throughput_report(
    layer: &EncodedLayer,
    cfg: &SimConfig,
    timesteps: usize,
    latency_seconds: f64,
) -> Throughput {
    let sparse_ops = 2 * layer.real_nnz() * cfg.n_channels as u64 * timesteps as u64;
    let dense_ops = 2 * layer.dense_entries() * cfg.n_channels as u64 * timesteps as u64;
    Throughput {
        sparse_ops,
        dense_equivalent_ops: dense_ops,
        sparse_gops: sparse_ops as f64 / latency_seconds / 1e9,
        dense_equivalent_gops: dense_ops as f64 / latency_seconds / 1e9,
    }
}

/// Walks the schedule phase by phase over `timesteps` timesteps and builds
/// the full timing report.
pub fn simulate_lstm(
    layer: &EncodedLayer,
    schedule: &Schedule,
    cfg: &SimConfig,
    timesteps: usize,
) -> Result<SimReport> {
    cfg.validate()?;
    if timesteps == 0 {
        return Err(Error::InvalidArg("timesteps must be >= 1".into()));
    }
    let violations = crate::schedule::validate_schedule(schedule);
    if !violations.is_empty() {
        return Err(Error::InvalidArg(format!(
            "schedule has {} violations; first: {}",
            violations.len(),
            violations[0].message
        )));
    }

    // Per-matrix products are identical every timestep; simulate once.
    let mut spmv_results: BTreeMap<&str, SpmvSim> = BTreeMap::new();
    for (name, m) in &layer.matrices {
        spmv_results.insert(name, simulate_spmv(m, cfg.fifo_depth, cfg.push_mode));
    }
    // Shared weights stream once; the per-channel variant replays the
    // traffic for every channel.
    let fetch_factor = if cfg.broadcast_weights {
        1
    } else {
        cfg.n_channels as u64
    };
    let fetch_cycles: BTreeMap<&str, u64> = layer
        .matrices
        .iter()
        .map(|(name, m)| {
            (
                name.as_str(),
                fetch_factor * cfg.fetch_pe_cycles(m.total_words()),
            )
        })
        .collect();

    let hidden = layer.config.hidden_dim as u64;
    let emul_cycles = hidden.div_ceil(cfg.elemmul_units as u64);

    let mut now: u64 = 0;
    let mut mem_free: u64 = 0;
    let mut states = Vec::new();
    let phases = schedule.phases();
    for timestep in 0..timesteps {
        // Weight streams land fresh each timestep (the on-chip ping-pong
        // buffers hold only a column window, not whole matrices).
        let mut fetch_done: BTreeMap<&str, u64> = BTreeMap::new();
        for (state_name, phase_idx, phase) in &phases {
            let phase_start = now;
            // Weight fetch launches at phase start, serialized on the lane.
            for op in &phase.weight_fetch {
                let cycles = fetch_cycles.get(op.produces.as_str()).copied().unwrap_or(0);
                let start = phase_start.max(mem_free);
                mem_free = start + cycles;
                fetch_done.insert(op.produces.as_str(), mem_free);
            }

            let mut phase_end = phase_start;
            let mut spmv_name = None;
            let mut fetch_stall = 0;
            for op in &phase.spmv {
                let matrix = op.operands[0].as_str();
                let ready = fetch_done.get(matrix).copied().unwrap_or(phase_start);
                let start = phase_start.max(ready);
                fetch_stall = start - phase_start;
                let cycles = spmv_results
                    .get(matrix)
                    .map(|r| r.makespan)
                    .ok_or_else(|| {
                        Error::Container(format!("encoded model has no matrix {matrix}"))
                    })?;
                phase_end = phase_end.max(start + cycles);
                spmv_name = Some(matrix.to_string());
            }
            if !phase.elemmul.is_empty() {
                let mut lane = cfg.pipeline_latency;
                for op in &phase.elemmul {
                    if op.kind == OpKind::ElemMul {
                        lane += emul_cycles;
                    }
                }
                phase_end = phase_end.max(phase_start + lane);
            }

            let fetch_bound = fetch_stall > 0 && phase_end == phase_start + fetch_stall + spmv_name
                .as_ref()
                .and_then(|n| spmv_results.get(n.as_str()))
                .map(|r| r.makespan)
                .unwrap_or(0);
            states.push(StateTiming {
                timestep,
                state: state_name.to_string(),
                phase: *phase_idx,
                start: phase_start,
                end: phase_end,
                spmv: spmv_name,
                fetch_stall,
                fetch_bound,
            });
            now = phase_end;
        }
    }

    let total_cycles = now;
    let latency_seconds = total_cycles as f64 / cfg.freq_pe as f64;

    let per_matrix: Vec<MatrixTiming> = layer
        .matrices
        .iter()
        .map(|(name, m)| {
            let r = &spmv_results[name.as_str()];
            MatrixTiming {
                name: name.clone(),
                rows: m.rows,
                cols: m.cols,
                total_words: r.total_words,
                useful_words: r.useful_words,
                compute_cycles: r.makespan,
                compute_lower_bound: r.total_words.div_ceil(m.n_pe as u64),
                fetch_cycles: fetch_cycles[name.as_str()],
                utilization: r.utilization,
                useful_utilization: r.useful_utilization,
            }
        })
        .collect();

    let n_pe = layer
        .matrices
        .values()
        .next()
        .map(|m| m.n_pe)
        .unwrap_or(cfg.n_pe);
    let mut per_pe_busy = vec![0u64; n_pe];
    for r in spmv_results.values() {
        for (total, b) in per_pe_busy.iter_mut().zip(&r.per_pe_busy) {
            *total += b * timesteps as u64;
        }
    }
    let busy_total: u64 = per_pe_busy.iter().sum();
    let denom = (n_pe as u64 * total_cycles) as f64;
    let utilization = if total_cycles == 0 {
        0.0
    } else {
        busy_total as f64 / denom
    };
    let useful_total: u64 = layer.matrices.values().map(|m| m.useful_words()).sum::<u64>()
        * timesteps as u64;
    let useful_utilization = if total_cycles == 0 {
        0.0
    } else {
        useful_total as f64 / denom
    };

    let tp = throughput_report(layer, cfg, timesteps, latency_seconds);
    Ok(SimReport {
        config: *cfg,
        timesteps,
        total_cycles,
        latency_seconds,
        per_matrix,
        states,
        per_pe_busy,
        utilization,
        useful_utilization,
        sparse_ops: tp.sparse_ops,
        dense_equivalent_ops: tp.dense_equivalent_ops,
        sparse_gops: tp.sparse_gops,
        dense_equivalent_gops: tp.dense_equivalent_gops,
    })
}

// ---------------------------------------------------------------------------
// Studies: FIFO depth sweep and sparsity sweep
// ---------------------------------------------------------------------------

/// Aggregate utilization of a matrix set at one FIFO depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub depth: usize,
    /// Busy cycles over PE-cycles, summed across all matrices.
    pub utilization: f64,
    pub useful_utilization: f64,
    pub per_matrix: Vec<f64>,
}

pub fn fifo_depth_sweep(
    matrices: &[&EncodedSparseMatrix],
    depths: &[usize],
    push_mode: PushMode,
) -> Vec<DepthPoint> {
    depths
        .iter()
        .map(|&depth| {
            let mut busy = 0u64;
            let mut useful = 0u64;
            let mut pe_cycles = 0u64;
            let mut per_matrix = Vec::with_capacity(matrices.len());
            for m in matrices {
                let r = simulate_spmv(m, depth, push_mode);
                busy += r.total_words;
                useful += r.useful_words;
                pe_cycles += m.n_pe as u64 * r.makespan;
                per_matrix.push(r.utilization);
            }
            DepthPoint {
                depth,
                utilization: busy as f64 / pe_cycles as f64,
                useful_utilization: useful as f64 / pe_cycles as f64,
                per_matrix,
            }
        })
        .collect()
}

/// Masks for every matrix-product tensor of a layer at one density.
pub fn masks_for_layer(
    params: &LstmParams,
    density: f64,
    n_pe: usize,
    mode: Option<QuotaMode>,
) -> Result<BTreeMap<String, PruneMask>> {
    let part = PePartition::new(n_pe)?;
    let mut masks = BTreeMap::new();
    for name in MATVEC_TENSORS {
        let Some(m) = params.matvec_tensor(name) else {
            continue;
        };
        let mask = match mode {
            Some(mode) => prune_balanced(m, density, part, mode)?,
            None => prune_magnitude(m, density)?,
        };
        masks.insert(name.to_string(), mask);
    }
    Ok(masks)
}

/// Latency and speedup at one density, for balanced and magnitude masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub density: f64,
    pub balanced_latency: f64,
    pub unbalanced_latency: f64,
    pub balanced_speedup: f64,
    pub unbalanced_speedup: f64,
}

/// Latencies across densities relative to the dense (density 1.0) baseline,
/// with load-balanced and plain magnitude masks side by side.
pub fn sparsity_sweep(
    params: &LstmParams,
    schedule: &Schedule,
    cfg: &SimConfig,
    width: u32,
    densities: &[f64],
) -> Result<Vec<SweepPoint>> {
    let plan = derive_plan(params, width)?;
    let latency = |masks: &BTreeMap<String, PruneMask>| -> Result<f64> {
        let layer = encode_layer(params, &plan, masks, cfg.n_pe)?;
        let report = simulate_lstm(&layer, schedule, cfg, 1)?;
        Ok(report.latency_seconds)
    };
    let dense_masks = masks_for_layer(params, 1.0, cfg.n_pe, None)?;
    let base = latency(&dense_masks)?;

    let mut points = Vec::with_capacity(densities.len());
    for &density in densities {
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::InvalidArg(format!(
                "density must be in (0, 1], got {density}"
            )));
        }
        let balanced = latency(&masks_for_layer(
            params,
            density,
            cfg.n_pe,
            Some(QuotaMode::PerPe),
        )?)?;
        let unbalanced = latency(&masks_for_layer(params, density, cfg.n_pe, None)?)?;
        points.push(SweepPoint {
            density,
            balanced_latency: balanced,
            unbalanced_latency: unbalanced,
            balanced_speedup: base / balanced,
            unbalanced_speedup: base / unbalanced,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::PruneMask;
    use crate::encode::encode_csc;
    use crate::quantize::{FixedFormat, QuantizedTensor};
    use crate::schedule::build_schedule;
    use crate::synth;

    /// A matrix whose per-(PE, column) word counts are all equal: every PE
    /// keeps the first `per_col[j]` of its local rows in column j.
    fn uniform_matrix(n_pe: usize, locals: usize, per_col: &[usize]) -> EncodedSparseMatrix {
        let rows = n_pe * locals;
        let cols = per_col.len();
        let mut kept = vec![false; rows * cols];
        for (j, &w) in per_col.iter().enumerate() {
            assert!(w <= locals);
            for pe in 0..n_pe {
                for l in 0..w {
                    let r = pe + l * n_pe;
                    kept[r * cols + j] = true;
                }
            }
        }
        let q = QuantizedTensor {
            rows,
            cols,
            integers: vec![1; rows * cols],
            format: FixedFormat::new(12, 4).unwrap(),
        };
        let mask = PruneMask {
            rows,
            cols,
            kept,
            target_density: 0.5,
        };
        let (e, stats) = encode_csc(&q, &mask, n_pe).unwrap();
        assert_eq!(stats.padding_words, 0);
        e
    }

    /// Single-column matrix with the given per-PE loads.
    fn single_column(loads: &[usize]) -> EncodedSparseMatrix {
        let n_pe = loads.len();
        let locals = *loads.iter().max().unwrap();
        let rows = n_pe * locals;
        let mut kept = vec![false; rows];
        for (pe, &w) in loads.iter().enumerate() {
            for l in 0..w {
                kept[pe + l * n_pe] = true;
            }
        }
        let q = QuantizedTensor {
            rows,
            cols: 1,
            integers: vec![1; rows],
            format: FixedFormat::new(12, 4).unwrap(),
        };
        let mask = PruneMask {
            rows,
            cols: 1,
            kept,
            target_density: 0.5,
        };
        encode_csc(&q, &mask, n_pe).unwrap().0
    }

    #[test]
    fn perfectly_balanced_matrix_runs_at_full_utilization() {
        let per_col: Vec<usize> = (0..40).map(|j| 3 + j % 2).collect();
        let e = uniform_matrix(8, 6, &per_col);
        for depth in [1, 4, 8] {
            let r = simulate_spmv(&e, depth, PushMode::Broadcast);
            assert_eq!(r.utilization, 1.0, "depth {depth}");
            assert_eq!(r.useful_utilization, 1.0);
            let expected: u64 = per_col.iter().map(|&w| w as u64).sum();
            assert_eq!(r.makespan, expected);
        }
    }

    #[test]
    fn four_pe_column_times() {
        // Conventional loads (5,3,3,1) take five cycles; balanced loads
        // (3,3,3,3) take three.
        let unbalanced = single_column(&[5, 3, 3, 1]);
        let r = simulate_spmv(&unbalanced, 1, PushMode::Broadcast);
        assert_eq!(r.makespan, 5);
        let balanced = single_column(&[3, 3, 3, 3]);
        let r = simulate_spmv(&balanced, 1, PushMode::Broadcast);
        assert_eq!(r.makespan, 3);
        assert_eq!(r.utilization, 1.0);
    }

    #[test]
    fn reference_word_count_lower_bound() {
        // 18304 words spread evenly over 32 PEs and 153 columns: 572 cycles,
        // 2.86 microseconds at 200 MHz.
        let per_col: Vec<usize> = (0..153).map(|j| if j < 113 { 4 } else { 3 }).collect();
        assert_eq!(per_col.iter().sum::<usize>(), 572);
        let e = uniform_matrix(32, 32, &per_col);
        assert_eq!(e.total_words(), 18304);
        let r = simulate_spmv(&e, 8, PushMode::Broadcast);
        assert_eq!(r.makespan, 572);
        let seconds = r.makespan as f64 / 200e6;
        assert!((seconds - 2.86e-6).abs() < 1e-8);
    }

    #[test]
    fn utilization_monotone_in_depth_and_conserves_work() {
        let params = synth::random_params(5, synth::benchmark_config());
        let plan = derive_plan(&params, 12).unwrap();
        let masks = masks_for_layer(&params, 0.1, 32, None).unwrap();
        let layer = encode_layer(&params, &plan, &masks, 32).unwrap();
        let m = &layer.matrices["W_ir"];
        let mut last = 0.0;
        for depth in [1, 2, 4, 8, 16] {
            let r = simulate_spmv(m, depth, PushMode::Broadcast);
            assert!(
                r.utilization >= last,
                "depth {depth}: {} < {last}",
                r.utilization
            );
            last = r.utilization;
            assert_eq!(r.per_pe_busy.iter().sum::<u64>(), m.total_words());
            assert!(r.makespan >= m.total_words().div_ceil(32));
        }
        assert!(last <= 1.0);
    }

    #[test]
    fn independent_push_is_no_slower() {
        let params = synth::random_params(6, synth::benchmark_config());
        let plan = derive_plan(&params, 12).unwrap();
        let masks = masks_for_layer(&params, 0.1, 32, None).unwrap();
        let layer = encode_layer(&params, &plan, &masks, 32).unwrap();
        for (name, m) in &layer.matrices {
            let b = simulate_spmv(m, 4, PushMode::Broadcast);
            let i = simulate_spmv(m, 4, PushMode::Independent);
            assert!(i.makespan <= b.makespan, "{name}");
        }
    }

    #[test]
    fn pe_balance_bound_reference_points() {
        let mut cfg = SimConfig::default();
        assert_eq!(pe_balance_bound(&cfg), 32);
        cfg.mem_width_bits = 256;
        assert_eq!(pe_balance_bound(&cfg), 16);
        cfg.mem_width_bits = 512;
        cfg.freq_mem = 100_000_000;
        assert_eq!(pe_balance_bound(&cfg), 16);
    }

    fn benchmark_layer(seed: u64, mode: Option<QuotaMode>) -> EncodedLayer {
        let params = synth::random_params(seed, synth::benchmark_config());
        let plan = derive_plan(&params, 12).unwrap();
        let masks = masks_for_layer(&params, 0.1, 32, mode).unwrap();
        encode_layer(&params, &plan, &masks, 32).unwrap()
    }

    #[test]
    fn full_layer_simulation_is_deterministic_and_bounded() {
        let layer = benchmark_layer(11, Some(QuotaMode::PerPe));
        let sched = build_schedule(&layer.config).unwrap();
        let cfg = SimConfig::default();
        let a = simulate_lstm(&layer, &sched, &cfg, 1).unwrap();
        let b = simulate_lstm(&layer, &sched, &cfg, 1).unwrap();
        assert_eq!(a, b);

        let compute_total: u64 = a.per_matrix.iter().map(|m| m.compute_cycles).sum();
        let fetch_total: u64 = a.per_matrix.iter().map(|m| m.fetch_cycles).sum();
        assert!(a.total_cycles >= compute_total);
        assert!(a.total_cycles >= fetch_total);
        assert!(a.utilization > 0.0 && a.utilization <= 1.0);
        assert_eq!(
            a.per_pe_busy.iter().sum::<u64>(),
            a.per_matrix.iter().map(|m| m.total_words).sum::<u64>()
        );
    }

    #[test]
    fn latency_non_increasing_in_memory_width() {
        let layer = benchmark_layer(12, Some(QuotaMode::PerPe));
        let sched = build_schedule(&layer.config).unwrap();
        let mut last = u64::MAX;
        for width in [128, 256, 512, 1024] {
            let cfg = SimConfig {
                mem_width_bits: width,
                ..SimConfig::default()
            };
            let r = simulate_lstm(&layer, &sched, &cfg, 1).unwrap();
            assert!(r.total_cycles <= last, "width {width}");
            last = r.total_cycles;
        }
    }

    #[test]
    fn zero_weight_model_completes() {
        let params = LstmParams::zeros(synth::benchmark_config()).unwrap();
        let plan = derive_plan(&params, 12).unwrap();
        // Keep nothing anywhere.
        let mut masks = BTreeMap::new();
        for name in MATVEC_TENSORS {
            let m = params.matvec_tensor(name).unwrap();
            masks.insert(
                name.to_string(),
                PruneMask {
                    rows: m.rows(),
                    cols: m.cols(),
                    kept: vec![false; m.rows() * m.cols()],
                    target_density: 1e-9,
                },
            );
        }
        let layer = encode_layer(&params, &plan, &masks, 32).unwrap();
        let sched = build_schedule(&layer.config).unwrap();
        let report = simulate_lstm(&layer, &sched, &SimConfig::default(), 1).unwrap();
        assert!(report.total_cycles > 0);
        assert_eq!(report.utilization, 0.0);
        assert_eq!(report.sparse_ops, 0);
    }

    #[test]
    fn invalid_schedule_is_rejected() {
        let layer = benchmark_layer(13, Some(QuotaMode::PerPe));
        let mut sched = build_schedule(&layer.config).unwrap();
        let dup = sched.states[2].phases[0].spmv[0].clone();
        sched.states[1].phases[0].spmv.push(dup);
        assert!(matches!(
            simulate_lstm(&layer, &sched, &SimConfig::default(), 1),
            Err(Error::InvalidArg(_))
        ));
    }

    #[test]
    fn per_channel_fetch_is_slower() {
        let layer = benchmark_layer(15, Some(QuotaMode::PerPe));
        let sched = build_schedule(&layer.config).unwrap();
        let shared = simulate_lstm(&layer, &sched, &SimConfig::default(), 1).unwrap();
        let cfg = SimConfig {
            broadcast_weights: false,
            ..SimConfig::default()
        };
        let replayed = simulate_lstm(&layer, &sched, &cfg, 1).unwrap();
        assert!(replayed.total_cycles > 4 * shared.total_cycles);
    }

    #[test]
    fn layer_without_projection_simulates() {
        let cfg = crate::model::LayerConfig {
            input_dim: 12,
            hidden_dim: 64,
            proj_dim: 64,
            has_peephole: false,
            has_projection: false,
        };
        let params = synth::random_params(8, cfg);
        let plan = derive_plan(&params, 12).unwrap();
        let masks = masks_for_layer(&params, 0.3, 8, Some(QuotaMode::PerPe)).unwrap();
        let layer = encode_layer(&params, &plan, &masks, 8).unwrap();
        assert_eq!(layer.matrices.len(), 8); // no projection matrix
        let sched = build_schedule(&cfg).unwrap();
        let report = simulate_lstm(&layer, &sched, &SimConfig::default(), 1).unwrap();
        assert!(report.total_cycles > 0);
    }

    #[test]
    fn multi_timestep_scales_roughly_linearly() {
        let layer = benchmark_layer(14, Some(QuotaMode::PerPe));
        let sched = build_schedule(&layer.config).unwrap();
        let cfg = SimConfig::default();
        let one = simulate_lstm(&layer, &sched, &cfg, 1).unwrap();
        let three = simulate_lstm(&layer, &sched, &cfg, 3).unwrap();
        assert!(three.total_cycles > 2 * one.total_cycles);
        assert!(three.total_cycles <= 3 * one.total_cycles + 10);
        assert_eq!(three.sparse_ops, 3 * one.sparse_ops);
    }
}
